"""Radar frame model, block partitioning and coordinate mappings.

Conventions used throughout the package:

* A polar frame is stored as ``data[azimuth_bin, range_bin]``.  Row ``i`` covers
  azimuths ``[i * azimuth_res, (i + 1) * azimuth_res)`` degrees and column ``j``
  covers ranges ``[j * range_res, (j + 1) * range_res)`` metres.
* Azimuth 0 is the vehicle heading ("north" / up in Cartesian renderings) and
  increases clockwise.
* Cartesian images use continuous pixel coordinates: pixel ``(row, col)``
  occupies ``[col, col + 1) x [row, row + 1)``.  The vehicle sits at
  ``(side / 2, side / 2)`` for both odd and even sides.
* Boxes are ``(x, y, width, height)`` with ``(x, y)`` the top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

FULL_CIRCLE = 360.0


class GeometryError(ValueError):
    """Raised for incompatible shapes or out-of-range coordinates."""


class BlockIndex(NamedTuple):
    az: int
    rng: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RadarFrame:
    """Polar intensity frame (azimuth rows x range columns)."""

    data: np.ndarray
    azimuth_res: float
    range_res: float
    frame_index: int = 0
    peak_value: float = 255.0

    def __post_init__(self):
        data = _readonly(self.data)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise GeometryError(f"frame data must be 2-D, got shape {data.shape}")
        rows = data.shape[0]
        if not math.isclose(rows * self.azimuth_res, FULL_CIRCLE, rel_tol=1e-9):
            raise GeometryError(
                f"rows * azimuth_res must cover 360 degrees, got {rows} * {self.azimuth_res}"
            )
        if self.range_res <= 0 or self.peak_value <= 0:
            raise GeometryError("range_res and peak_value must be positive")
        if not np.all(np.isfinite(data)):
            raise GeometryError("frame data contains non-finite values")
        if data.size and (data.min() < 0 or data.max() > self.peak_value):
            raise GeometryError("frame data must lie in [0, peak_value]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def max_range(self) -> float:
        return self.data.shape[1] * self.range_res

    def with_data(self, data: np.ndarray, frame_index: int | None = None) -> "RadarFrame":
        return RadarFrame(
            data,
            self.azimuth_res,
            self.range_res,
            self.frame_index if frame_index is None else frame_index,
            self.peak_value,
        )


@dataclass(frozen=True)
class BlockGrid:
    """Regular partition of a frame into ``block_rows x block_cols`` blocks."""

    block_rows: int
    block_cols: int
    n_az_blocks: int
    n_range_blocks: int
    azimuth_res: float = FULL_CIRCLE
    range_res: float = 1.0

    @classmethod
    def for_shape(cls, shape: Sequence[int], block_rows: int, block_cols: int,
                  azimuth_res: float | None = None, range_res: float = 1.0) -> "BlockGrid":
        rows, cols = shape
        if block_rows <= 0 or rows % block_rows:
            raise GeometryError(
                f"azimuth axis: {rows} rows not divisible by block_rows={block_rows}"
            )
        if block_cols <= 0 or cols % block_cols:
            raise GeometryError(
                f"range axis: {cols} columns not divisible by block_cols={block_cols}"
            )
        if azimuth_res is None:
            azimuth_res = FULL_CIRCLE / rows
        return cls(block_rows, block_cols, rows // block_rows, cols // block_cols,
                   azimuth_res, range_res)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.n_az_blocks * self.block_rows, self.n_range_blocks * self.block_cols

    @property
    def n_blocks(self) -> int:
        return self.n_az_blocks * self.n_range_blocks

    @property
    def block_size(self) -> int:
        return self.block_rows * self.block_cols

    @property
    def deg_per_az_block(self) -> float:
        return self.block_rows * self.azimuth_res

    @property
    def m_per_range_block(self) -> float:
        return self.block_cols * self.range_res

    def __iter__(self) -> Iterator[BlockIndex]:
        for a in range(self.n_az_blocks):
            for r in range(self.n_range_blocks):
                yield BlockIndex(a, r)

    def contains(self, idx: BlockIndex) -> bool:
        return 0 <= idx.az < self.n_az_blocks and 0 <= idx.rng < self.n_range_blocks

    def slices(self, idx: BlockIndex) -> tuple[slice, slice]:
        a, r = idx
        return (slice(a * self.block_rows, (a + 1) * self.block_rows),
                slice(r * self.block_cols, (r + 1) * self.block_cols))

    def to_blocks(self, data: np.ndarray) -> np.ndarray:
        """Reshape ``data`` into ``(n_blocks, block_rows, block_cols)`` in grid order."""
        data = np.asarray(data)
        if data.shape != self.frame_shape:
            raise GeometryError(f"data shape {data.shape} does not match grid {self.frame_shape}")
        b = data.reshape(self.n_az_blocks, self.block_rows, self.n_range_blocks, self.block_cols)
        return b.transpose(0, 2, 1, 3).reshape(self.n_blocks, self.block_rows, self.block_cols)

    def from_blocks(self, blocks: np.ndarray) -> np.ndarray:
        b = np.asarray(blocks).reshape(self.n_az_blocks, self.n_range_blocks,
                                       self.block_rows, self.block_cols)
        return b.transpose(0, 2, 1, 3).reshape(self.frame_shape)

    def flat_index(self, idx: BlockIndex) -> int:
        return idx.az * self.n_range_blocks + idx.rng


def partition(frame: RadarFrame, block_rows: int, block_cols: int) -> BlockGrid:
    return BlockGrid.for_shape(frame.shape, block_rows, block_cols,
                               frame.azimuth_res, frame.range_res)


@dataclass(frozen=True)
class CameraCalibration:
    """Horizontal field of view of one camera, in vehicle azimuth degrees."""

    theta_min: float
    theta_max: float
    x_min: float = 0.0
    x_max: float = 1280.0

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise GeometryError("theta_min must be < theta_max")
        if not self.x_min < self.x_max:
            raise GeometryError("x_min must be < x_max")


def image_bbox_to_azimuth(bbox: Sequence[float], cal: CameraCalibration,
                          deg_per_az_block: float) -> tuple[float, int]:
    """Map an image-space box to (azimuth in degrees, azimuth block ordinal).

    The box centre is interpolated affinely across the camera field of view.
    Negative azimuths are reported as-is; the block ordinal uses the azimuth
    wrapped into ``[0, 360)``.
    """
    x, _, w, _ = bbox
    centre_x = x + w / 2.0
    if not cal.x_min <= centre_x <= cal.x_max:
        raise GeometryError(f"box centre {centre_x} outside image [{cal.x_min}, {cal.x_max}]")
    frac = (centre_x - cal.x_min) / (cal.x_max - cal.x_min)
    azimuth = cal.theta_min + frac * (cal.theta_max - cal.theta_min)
    n_blocks = max(1, round(FULL_CIRCLE / deg_per_az_block))
    block = int(math.floor((azimuth % FULL_CIRCLE) / deg_per_az_block)) % n_blocks
    return azimuth, block


@dataclass(frozen=True)
class CartesianImage:
    """Square bird's-eye rendering with the vehicle at the image centre."""

    pixels: np.ndarray
    meters_per_pixel: float
    peak_value: float = 255.0
    max_range: float = math.inf

    def __post_init__(self):
        px = _readonly(self.pixels)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise GeometryError(f"Cartesian image must be square, got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    @property
    def center(self) -> float:
        return self.side / 2.0

    def range_mask(self) -> np.ndarray:
        """Pixels whose centres lie within the radar's maximum range."""
        r, _ = pixel_polar(self.side, self.meters_per_pixel)
        return r < self.max_range

    def to_metric(self, px: float, py: float) -> tuple[float, float]:
        """Continuous pixel coordinates to (east, north) metres."""
        return ((px - self.center) * self.meters_per_pixel,
                (self.center - py) * self.meters_per_pixel)

    def to_pixel(self, east: float, north: float) -> tuple[float, float]:
        return (self.center + east / self.meters_per_pixel,
                self.center - north / self.meters_per_pixel)


def pixel_polar(side: int, meters_per_pixel: float) -> tuple[np.ndarray, np.ndarray]:
    """Range (m) and azimuth (deg, clockwise from north) of every pixel centre."""
    c = np.arange(side) + 0.5 - side / 2.0
    east = c[None, :] * meters_per_pixel
    north = -c[:, None] * meters_per_pixel
    rng = np.hypot(east, north)
    az = np.degrees(np.arctan2(east, north)) % FULL_CIRCLE
    return rng, az


def polar_to_cartesian(frame: RadarFrame, side_px: int, meters_per_pixel: float) -> CartesianImage:
    """Nearest-neighbour resampling of a polar frame onto a square Cartesian grid."""
    if side_px < 3:
        raise GeometryError("side_px must be >= 3")
    rng, az = pixel_polar(side_px, meters_per_pixel)
    rows, cols = frame.shape
    ri = np.minimum((az / frame.azimuth_res).astype(np.int64), rows - 1)
    ci = (rng / frame.range_res).astype(np.int64)
    inside = ci < cols
    out = np.zeros((side_px, side_px))
    out[inside] = frame.data[ri[inside], ci[inside]]
    return CartesianImage(out, meters_per_pixel, frame.peak_value, frame.max_range)


def cartesian_point_to_polar(east: float, north: float) -> tuple[float, float]:
    """(azimuth deg in [0, 360), range m); the origin maps to (0, 0)."""
    r = math.hypot(east, north)
    if r == 0.0:
        return 0.0, 0.0
    return math.degrees(math.atan2(east, north)) % FULL_CIRCLE, r


def cartesian_bbox_to_polar_block(bbox: Sequence[float], img: CartesianImage,
                                  grid: BlockGrid) -> BlockIndex:
    """Block containing the centre of a Cartesian box.

    Ranges beyond the last range block are clipped onto it.
    """
    x, y, w, h = bbox
    if x >= img.side or y >= img.side or x + w <= 0 or y + h <= 0:
        raise GeometryError(f"box {tuple(bbox)} does not intersect the image")
    east, north = img.to_metric(x + w / 2.0, y + h / 2.0)
    az, r = cartesian_point_to_polar(east, north)
    a = int(math.floor(az / grid.deg_per_az_block)) % grid.n_az_blocks
    k = min(int(math.floor(r / grid.m_per_range_block)), grid.n_range_blocks - 1)
    return BlockIndex(a, k)


def mark_important_blocks(centers: Iterable[BlockIndex], grid: BlockGrid,
                          shadow: bool = True) -> frozenset[BlockIndex]:
    """Inverted-T stencil around every centre block.

    Each centre ``(a, r)`` contributes itself, the occlusion-shadow block
    ``(a, r + 1)`` (unless ``shadow`` is False) and the bar
    ``(a - 1, r - 1), (a, r - 1), (a + 1, r - 1)`` on the vehicle side.
    Azimuth wraps around; range is clipped to the grid.
    """
    out: set[BlockIndex] = set()
    na, nr = grid.n_az_blocks, grid.n_range_blocks
    for a, r in centers:
        cells = [(a, r)]
        if shadow:
            cells.append((a, r + 1))
        cells += [(a - 1, r - 1), (a, r - 1), (a + 1, r - 1)]
        for ca, cr in cells:
            if 0 <= cr < nr:
                out.add(BlockIndex(ca % na, cr))
    return frozenset(out)

