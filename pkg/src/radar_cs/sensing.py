"""Block compressed sensing: measurement matrices, DCT basis, basis pursuit.

Blocks are vectorised row-major.  Every block of a frame is acquired with its
own matrix whose seed is derived from ``(base_seed, frame_index, az, rng)``, so
only the seed has to travel with the measurements.
"""

from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn

from .geometry import BlockGrid, BlockIndex, RadarFrame

logger = logging.getLogger(__name__)


class MatrixKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BPBD = "bpbd"
    BPD = "bpd"


class SensingError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Basis pursuit hit its iteration cap before certifying the tolerance."""

    def __init__(self, message, gap, residual, blocks=None):
        super().__init__(message)
        self.gap = gap
        self.residual = residual
        self.blocks = blocks


# ---------------------------------------------------------------------------
# measurement matrices


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """One block's measurement operator.

    Binary kinds are stored in index form: ``groups[j]`` is the row holding the
    single 1 of column ``j`` (``-1`` if the column is never measured).  BPD
    additionally keeps ``columns[i]``, the column selected by row ``i``.
    """

    kind: MatrixKind
    m: int
    n: int
    seed: int
    groups: np.ndarray | None = None
    columns: np.ndarray | None = None
    dense: np.ndarray | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(self.n)
        if self.kind is MatrixKind.GAUSSIAN:
            return self.dense @ x
        if self.kind is MatrixKind.BPD:
            return x[self.columns]
        hit = self.groups >= 0
        return np.bincount(self.groups[hit], weights=x[hit], minlength=self.m)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(self.m)
        if self.kind is MatrixKind.GAUSSIAN:
            return self.dense.T @ y
        out = np.zeros(self.n)
        hit = self.groups >= 0
        out[hit] = y[self.groups[hit]]
        return out

    def to_dense(self) -> np.ndarray:
        if self.kind is MatrixKind.GAUSSIAN:
            return self.dense.copy()
        out = np.zeros((self.m, self.n))
        hit = np.flatnonzero(self.groups >= 0)
        out[self.groups[hit], hit] = 1.0
        return out


def build_matrix(kind, m: int, n: int, seed: int) -> MeasurementMatrix:
    kind = MatrixKind(kind)
    if not 1 <= m <= n:
        raise SensingError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    if kind is MatrixKind.GAUSSIAN:
        dense = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
        dense.setflags(write=False)
        return MeasurementMatrix(kind, m, n, seed, dense=dense)
    if kind is MatrixKind.BPD:
        columns = rng.permutation(n)[:m]
        groups = np.full(n, -1, dtype=np.int64)
        groups[columns] = np.arange(m)
        return MeasurementMatrix(kind, m, n, seed, groups=groups, columns=columns)
    if n % m:
        raise SensingError(f"BPBD requires m to divide n, got m={m}, n={n}")
    width = n // m
    perm = rng.permutation(n)
    groups = np.empty(n, dtype=np.int64)
    # column j of the block-diagonal band lands on perm[j]
    groups[perm] = np.arange(n) // width
    return MeasurementMatrix(kind, m, n, seed, groups=groups)


def block_seed(base_seed: int, frame_index: int, idx: BlockIndex) -> int:
    ss = np.random.SeedSequence([base_seed & 0xFFFFFFFFFFFFFFFF, frame_index & 0xFFFFFFFFFFFFFFFF,
                                 int(idx.az), int(idx.rng)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def measurement_count(rate: float, n: int, kind=MatrixKind.BPD) -> int:
    """Measurements for a block of ``n`` samples at ``rate``.

    ``round(rate * n)`` with a floor of one for any positive rate.  BPBD takes
    the largest divisor of ``n`` not above that count.
    """
    if not 0.0 <= rate <= 1.0:
        raise SensingError(f"rate must lie in [0, 1], got {rate}")
    if rate == 0.0:
        return 0
    m = min(n, max(1, int(round(rate * n))))
    if MatrixKind(kind) is MatrixKind.BPBD:
        while n % m:
            m -= 1
    return m


# ---------------------------------------------------------------------------
# sparsity basis


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal type-II DCT over the last two axes."""
    return dctn(np.asarray(block, dtype=np.float64), axes=(-2, -1), norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    return idctn(np.asarray(coeffs, dtype=np.float64), axes=(-2, -1), norm="ortho")


@dataclass(frozen=True)
class SparsityBasis:
    block_rows: int
    block_cols: int

    @property
    def n(self) -> int:
        return self.block_rows * self.block_cols

    def _check(self, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-2:] != (self.block_rows, self.block_cols):
            raise SensingError(
                f"block shape {a.shape[-2:]} does not match basis "
                f"{(self.block_rows, self.block_cols)}"
            )
        return a

    def forward(self, block: np.ndarray) -> np.ndarray:
        return dct2(self._check(block))

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return idct2(self._check(coeffs))


# ---------------------------------------------------------------------------
# acquisition


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    y: np.ndarray
    block: BlockIndex
    kind: MatrixKind
    m: int
    n: int
    seed: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.size != self.m:
            raise SensingError(f"expected {self.m} measurements, got {y.size}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "kind", MatrixKind(self.kind))
        object.__setattr__(self, "block", BlockIndex(*self.block))

    def matrix(self) -> MeasurementMatrix | None:
        if self.m == 0:
            return None
        return build_matrix(self.kind, self.m, self.n, self.seed)


def compress_block(block: np.ndarray, matrix: MeasurementMatrix,
                   index: BlockIndex = BlockIndex(0, 0)) -> MeasurementSet:
    vec = np.asarray(block, dtype=np.float64).reshape(-1)
    if vec.size != matrix.n:
        raise SensingError(f"block has {vec.size} samples, matrix expects {matrix.n}")
    return MeasurementSet(matrix.apply(vec), index, matrix.kind, matrix.m, matrix.n, matrix.seed)


def compress_frame(frame: RadarFrame, grid: BlockGrid, plan, kind=MatrixKind.BPD,
                   base_seed: int = 0) -> list[MeasurementSet]:
    """Compress every block of ``frame`` at the rates in ``plan.rates``."""
    kind = MatrixKind(kind)
    rates = np.asarray(plan.rates)
    if rates.shape != (grid.n_az_blocks, grid.n_range_blocks):
        raise SensingError(
            f"plan shape {rates.shape} does not match grid "
            f"{(grid.n_az_blocks, grid.n_range_blocks)}"
        )
    blocks = grid.to_blocks(frame.data)
    n = grid.block_size
    out = []
    for k, idx in enumerate(grid):
        m = measurement_count(float(rates[idx]), n, kind)
        seed = block_seed(base_seed, frame.frame_index, idx)
        if m == 0:
            out.append(MeasurementSet(np.zeros(0), idx, kind, 0, n, seed))
            continue
        out.append(compress_block(blocks[k], build_matrix(kind, m, n, seed), idx))
    return out


# ---------------------------------------------------------------------------
# basis pursuit


@dataclass
class SolveInfo:
    """Per-block diagnostics of a batched basis-pursuit solve."""

    iterations: np.ndarray
    gap: np.ndarray
    residual: np.ndarray
    converged: np.ndarray

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


class _BinaryOperator:
    """Projections for binary matrices, batched over blocks.

    Every measured pixel belongs to exactly one measurement group; the gram
    matrix is diagonal with the group sizes on it.
    """

    def __init__(self, matrices, ys, n):
        b = len(matrices)
        self.gid = np.full((b, n), -1, dtype=np.int64)
        offset = 0
        ys_all, sizes = [], []
        for k, (mat, y) in enumerate(zip(matrices, ys)):
            if mat is None:
                continue
            hit = mat.groups >= 0
            self.gid[k, hit] = mat.groups[hit] + offset
            sizes.append(np.bincount(mat.groups[hit], minlength=mat.m))
            ys_all.append(y)
            offset += mat.m
        self.n_groups = offset
        self.y = np.concatenate(ys_all) if ys_all else np.zeros(0)
        self.size = np.concatenate(sizes).astype(np.float64) if sizes else np.zeros(0)
        self._refresh()

    def _refresh(self):
        self.hit = self.gid >= 0
        self.g = self.gid[self.hit]
        # BPD: every group is a single pixel, projection is plain assignment
        self.unit = bool(np.all(self.size == 1))
        if self.unit:
            self.y_pix = self.y[self.g]

    def subset(self, keep):
        # dropped blocks' groups simply stop being referenced
        self.gid = self.gid[keep]
        self._refresh()

    def _sums(self, x):
        return np.bincount(self.g, weights=x[self.hit], minlength=self.n_groups)

    def project(self, x):
        """Closest point to ``x`` satisfying the measurement equations."""
        if self.unit:
            out = x.copy()
            out[self.hit] = self.y_pix
            return out
        corr = (self._sums(x) - self.y) / np.where(self.size > 0, self.size, 1.0)
        out = x.copy()
        out[self.hit] -= corr[self.g]
        return out

    def range_project(self, v):
        """Orthogonal projection onto the row space of the matrices."""
        out = np.zeros_like(v)
        if self.unit:
            out[self.hit] = v[self.hit]
            return out
        mean = self._sums(v) / np.where(self.size > 0, self.size, 1.0)
        out[self.hit] = mean[self.g]
        return out

    def residual(self, x):
        return self._sums(x) - self.y

    def residual_norms(self, x):
        r = self.residual(x)
        # groups of blocks dropped from the batch keep an owner of -1
        owner = np.full(self.n_groups, -1, dtype=np.int64)
        owner[self.g] = np.broadcast_to(np.arange(x.shape[0])[:, None], x.shape)[self.hit]
        live = owner >= 0
        return np.sqrt(np.bincount(owner[live], weights=(r * r)[live], minlength=x.shape[0]))


class _DenseOperator:
    """Projections for Gaussian matrices, batched with zero-padded rows."""

    def __init__(self, matrices, ys, n):
        b = len(matrices)
        mmax = max((mat.m for mat in matrices if mat is not None), default=1)
        self.A = np.zeros((b, mmax, n))
        self.P = np.zeros((b, n, mmax))
        self.y = np.zeros((b, mmax))
        for k, (mat, y) in enumerate(zip(matrices, ys)):
            if mat is None:
                continue
            a = mat.dense
            self.A[k, :mat.m] = a
            self.P[k, :, :mat.m] = np.linalg.solve(a @ a.T, a).T
            self.y[k, :mat.m] = y

    def subset(self, keep):
        self.A, self.P, self.y = self.A[keep], self.P[keep], self.y[keep]

    def residual(self, x):
        return np.einsum("bmn,bn->bm", self.A, x) - self.y

    def project(self, x):
        return x - np.einsum("bnm,bm->bn", self.P, self.residual(x))

    def range_project(self, v):
        w = np.einsum("bmn,bn->bm", self.A, v)
        return np.einsum("bnm,bm->bn", self.P, w)

    def residual_norms(self, x):
        return np.linalg.norm(self.residual(x), axis=1)


def _soft(v, t):
    return v - np.clip(v, -t, t)


def basis_pursuit(matrices: Sequence[MeasurementMatrix | None], ys: Sequence[np.ndarray],
                  block_shape: tuple[int, int], *, tol: float = 1e-4, max_iter: int = 20000,
                  relax: float = 1.5, check_every: int = 10,
                  strict: bool = True) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``min ||dct2(x)||_1  s.t.  A_b vec(x) = y_b`` for a batch of blocks.

    Douglas-Rachford splitting in the DCT domain.  The returned blocks always
    satisfy their measurement equations (they are projections onto the
    constraint set); convergence is certified by a duality gap built from the
    splitting's dual iterate, and a block counts as converged once
    ``gap <= tol * ||c||_1``.

    ``None`` matrices stand for blocks with no measurements; they are
    reconstructed as zero.
    """
    p, q = block_shape
    n = p * q
    b = len(matrices)
    if len(ys) != b:
        raise SensingError("matrices and measurements differ in length")
    kinds = {mat.kind for mat in matrices if mat is not None}
    for mat, y in zip(matrices, ys):
        if mat is not None and (mat.n != n or np.size(y) != mat.m):
            raise SensingError("measurement/matrix dimensions do not match the block shape")
    out = np.zeros((b, n))
    info = SolveInfo(np.zeros(b, dtype=np.int64), np.zeros(b), np.zeros(b), np.ones(b, bool))
    if not kinds:
        return out.reshape(b, p, q), info
    if len(kinds) > 1 and MatrixKind.GAUSSIAN in kinds:
        raise SensingError("cannot mix Gaussian and binary matrices in one batch")
    ys = [np.asarray(y, dtype=np.float64).reshape(-1) for y in ys]
    op_cls = _DenseOperator if MatrixKind.GAUSSIAN in kinds else _BinaryOperator
    active = np.array([mat is not None for mat in matrices])
    op = op_cls([matrices[k] for k in np.flatnonzero(active)],
                [ys[k] for k in np.flatnonzero(active)], n)
    ids = np.flatnonzero(active)

    def to_x(c):
        return idct2(c.reshape(-1, p, q)).reshape(-1, n)

    def to_c(x):
        return dct2(x.reshape(-1, p, q)).reshape(-1, n)

    x0 = op.project(np.zeros((ids.size, n)))
    z = to_c(x0)
    scale = np.sqrt(np.mean(z * z, axis=1))
    gamma = np.where(scale > 0, scale, 1.0)[:, None]
    it = 0
    gap = np.full(ids.size, np.inf)
    while ids.size:
        it += 1
        x = op.project(to_x(z))
        c = to_c(x)
        s = _soft(2.0 * c - z, gamma)
        z = z + relax * (s - c)
        if it % check_every and it < max_iter:
            continue
        x = op.project(to_x(z))
        c = to_c(x)
        u = to_c(op.range_project(to_x((c - z) / gamma)))
        l1 = np.abs(c).sum(axis=1)
        dual = (c * u).sum(axis=1) / np.maximum(1.0, np.abs(u).max(axis=1))
        gap = np.maximum(l1 - dual, 0.0) / np.maximum(l1, 1e-300)
        gap[l1 == 0] = 0.0
        done = gap <= tol
        if it >= max_iter:
            done[:] = True
            info.converged[ids[gap > tol]] = False
        if done.any():
            out[ids[done]] = x[done]
            info.iterations[ids[done]] = it
            info.gap[ids[done]] = gap[done]
            info.residual[ids[done]] = op.residual_norms(x)[done]
            keep = ~done
            ids, z, gamma = ids[keep], z[keep], gamma[keep]
            op.subset(keep)
    if strict and not info.all_converged:
        bad = np.flatnonzero(~info.converged)
        raise ConvergenceError(
            f"basis pursuit did not reach gap {tol:g} within {max_iter} iterations "
            f"for {bad.size} block(s); worst gap {info.gap[bad].max():.3g}",
            gap=info.gap[bad], residual=info.residual[bad], blocks=bad,
        )
    return out.reshape(b, p, q), info


def reconstruct_block(ms: MeasurementSet, matrix: MeasurementMatrix | None = None,
                      basis: SparsityBasis | None = None, *, tol: float = 1e-4,
                      max_iter: int = 20000) -> np.ndarray:
    """Basis-pursuit reconstruction of a single block.

    ``m == 0`` yields the zero block.  Raises :class:`ConvergenceError` if the
    duality gap is not certified within ``max_iter`` iterations.
    """
    if basis is None:
        raise SensingError("a SparsityBasis is required to know the block shape")
    if basis.n != ms.n:
        raise SensingError(f"basis has {basis.n} samples, measurements expect {ms.n}")
    if ms.m == 0:
        return np.zeros((basis.block_rows, basis.block_cols))
    if matrix is None:
        matrix = ms.matrix()
    if (matrix.kind, matrix.m, matrix.n, matrix.seed) != (ms.kind, ms.m, ms.n, ms.seed):
        raise SensingError("matrix does not match the measurement descriptor")
    blocks, _ = basis_pursuit([matrix], [ms.y], (basis.block_rows, basis.block_cols),
                              tol=tol, max_iter=max_iter)
    return blocks[0]


def reconstruct_frame(measurements: Sequence[MeasurementSet], grid: BlockGrid, *,
                      peak_value: float = 255.0, frame_index: int = 0, tol: float = 1e-4,
                      max_iter: int = 20000, strict: bool = True, return_info: bool = False):
    """Reassemble a frame from per-block measurements.

    The estimate is clipped to ``[0, peak_value]`` so it remains a valid
    :class:`RadarFrame`.
    """
    if len(measurements) != grid.n_blocks:
        raise SensingError(f"expected {grid.n_blocks} measurement sets, got {len(measurements)}")
    order = {idx: k for k, idx in enumerate(grid)}
    mats: list = [None] * grid.n_blocks
    ys: list = [np.zeros(0)] * grid.n_blocks
    for ms in measurements:
        if ms.block not in order or ms.n != grid.block_size:
            raise SensingError(f"measurement set for block {ms.block} does not fit the grid")
        k = order[ms.block]
        mats[k] = ms.matrix()
        ys[k] = ms.y
    kinds = {m.kind for m in mats if m is not None}
    if MatrixKind.GAUSSIAN in kinds and len(kinds) > 1:
        raise SensingError("cannot mix Gaussian and binary matrices in one frame")
    blocks, info = basis_pursuit(mats, ys, (grid.block_rows, grid.block_cols), tol=tol,
                                 max_iter=max_iter, strict=strict)
    data = np.clip(grid.from_blocks(blocks), 0.0, peak_value)
    frame = RadarFrame(data, grid.azimuth_res, grid.range_res, frame_index, peak_value)
    return (frame, info) if return_info else frame


# ---------------------------------------------------------------------------
# quantisation anchor


def quantize_frame(frame: RadarFrame, bits: int = 3) -> RadarFrame:
    """Uniform ``bits``-bit quantisation of ``[0, peak]``, dequantised to bin midpoints.

    Zero maps to the lowest bin's midpoint ``peak / 2**(bits + 1)``.
    """
    if not 1 <= bits <= 16:
        raise SensingError(f"bits must lie in [1, 16], got {bits}")
    levels = 1 << bits
    step = frame.peak_value / levels
    idx = np.minimum(np.floor(frame.data / step), levels - 1)
    return frame.with_data((idx + 0.5) * step)


# ---------------------------------------------------------------------------
# binary measurement files

_FILE_HEADER = struct.Struct("<4sHHqIII")
_RECORD_HEADER = struct.Struct("<B3xIIIIQ")
_MAGIC = b"RCSF"
_KIND_CODES = {MatrixKind.GAUSSIAN: 0, MatrixKind.BPBD: 1, MatrixKind.BPD: 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def write_measurements(path, sets: Sequence[MeasurementSet], grid: BlockGrid,
                       frame_index: int = 0) -> None:
    """Write measurement sets to the little-endian record format (see docs/FORMATS.md)."""
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(_MAGIC, 1, 0, frame_index, len(sets),
                                   grid.block_rows, grid.block_cols))
        for ms in sets:
            fh.write(_RECORD_HEADER.pack(_KIND_CODES[ms.kind], ms.block.az, ms.block.rng,
                                         ms.m, ms.n, ms.seed))
            fh.write(ms.y.astype("<f4").tobytes())


def read_measurements(path) -> tuple[int, tuple[int, int], list[MeasurementSet]]:
    """Return ``(frame_index, (block_rows, block_cols), sets)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _FILE_HEADER.size:
        raise SensingError(f"{path}: truncated header")
    magic, version, _, frame_index, count, br, bc = _FILE_HEADER.unpack_from(raw, 0)
    if magic != _MAGIC or version != 1:
        raise SensingError(f"{path}: not a version-1 measurement file")
    pos = _FILE_HEADER.size
    sets = []
    for _ in range(count):
        code, az, rng, m, n, seed = _RECORD_HEADER.unpack_from(raw, pos)
        pos += _RECORD_HEADER.size
        y = np.frombuffer(raw, dtype="<f4", count=m, offset=pos).astype(np.float64)
        pos += 4 * m
        sets.append(MeasurementSet(y, BlockIndex(az, rng), _CODE_KINDS[code], m, n, seed))
    if pos != len(raw):
        raise SensingError(f"{path}: {len(raw) - pos} trailing bytes")
    return frame_index, (br, bc), sets


__all__ = [
    "ConvergenceError", "MatrixKind", "MeasurementMatrix", "MeasurementSet", "SensingError",
    "SolveInfo", "SparsityBasis", "basis_pursuit", "block_seed", "build_matrix",
    "compress_block", "compress_frame", "dct2", "idct2", "measurement_count", "quantize_frame",
    "read_measurements", "reconstruct_block", "reconstruct_frame", "write_measurements",
]
