"""Prior-guided block compressed sensing for radar range-azimuth frames."""

__version__ = "0.1.0"

from .geometry import BlockGrid, BlockIndex, RadarFrame, partition  # noqa: E402
from .pipeline import FrameResult, PipelineConfig, run  # noqa: E402

__all__ = ["BlockGrid", "BlockIndex", "FrameResult", "PipelineConfig", "RadarFrame",
           "partition", "run", "__version__"]
