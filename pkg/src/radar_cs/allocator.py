"""Sampling-rate allocation by small linear programs.

Two allocation problems are supported:

* the image + radar programme (four rates ``x1..x4`` over azimuth categories
  and near/far range regions), and
* the radar-only programme (two rates for important / other blocks).

Both objectives coincide with the budgeted quantity, so whenever the budget
binds the optimum is a whole face of the feasible polytope.  Ties are broken
lexicographically towards the important regions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BlockGrid, BlockIndex
from .sensing import MatrixKind, measurement_count


class LpInfeasibleError(ValueError):
    """No point satisfies all constraints; ``constraint`` names the culprit."""

    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    lex_values: tuple


def solve_bounded_lp(objectives, A_ub=None, b_ub=None, A_eq=None, b_eq=None,
                     bounds=None, names=None, tol=1e-9) -> LpSolution:
    """Maximise ``objectives[0] @ x`` over a bounded polyhedron by vertex enumeration.

    Later entries of ``objectives`` break ties lexicographically.  Intended for
    the handful of variables the allocation problems have; the cost grows
    combinatorially with the number of constraints.

    ``bounds`` is a sequence of finite ``(lo, hi)`` pairs, one per variable.
    ``names`` optionally labels the rows of ``A_ub`` for error messages.
    """
    objs = np.atleast_2d(np.asarray(objectives, dtype=np.float64))
    n = objs.shape[1]
    if bounds is None or len(bounds) != n:
        raise ValueError("finite bounds are required for every variable")
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).reshape(-1)
    names = list(names) if names is not None else [f"inequality {i}" for i in range(len(b_ub))]

    rows, rhs, labels = [A_ub], [b_ub], list(names)
    for i, (lo, hi) in enumerate(bounds):
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"bound of x{i + 1} is not finite")
        e = np.zeros(n)
        e[i] = 1.0
        rows += [-e[None, :], e[None, :]]
        rhs += [np.array([-lo]), np.array([hi])]
        labels += [f"x{i + 1} >= {lo:g}", f"x{i + 1} <= {hi:g}"]
    G = np.vstack(rows)
    h = np.concatenate(rhs)

    vertices = _vertices(G, h, A_eq, b_eq, tol)
    if not vertices:
        raise LpInfeasibleError(*_blame(G, h, A_eq, b_eq, labels, tol))
    V = np.array(vertices)
    vals = V @ objs.T
    keep = np.arange(len(V))
    for j in range(objs.shape[0]):
        col = vals[keep, j]
        best = col.max()
        keep = keep[col >= best - tol * max(1.0, abs(best))]
    k = keep[0]
    return LpSolution(V[k], float(vals[k, 0]), tuple(float(v) for v in vals[k]))


def _feasible(x, G, h, A_eq, b_eq, tol):
    if np.any(G @ x - h > tol * np.maximum(1.0, np.abs(h))):
        return False
    return not np.any(np.abs(A_eq @ x - b_eq) > tol * np.maximum(1.0, np.abs(b_eq)))


def _vertices(G, h, A_eq, b_eq, tol):
    n = G.shape[1]
    r_eq = np.linalg.matrix_rank(A_eq) if len(A_eq) else 0
    k = n - r_eq
    out = []
    for sel in itertools.combinations(range(len(G)), k):
        M = np.vstack([A_eq, G[list(sel)]])
        if np.linalg.matrix_rank(M) < n:
            continue
        rhs = np.concatenate([b_eq, h[list(sel)]])
        x = np.linalg.lstsq(M, rhs, rcond=None)[0]
        if np.linalg.norm(M @ x - rhs) > tol * max(1.0, np.linalg.norm(rhs)):
            continue
        if _feasible(x, G, h, A_eq, b_eq, tol):
            out.append(x)
    return out


def _blame(G, h, A_eq, b_eq, labels, tol):
    for i in range(len(G)):
        keep = [j for j in range(len(G)) if j != i]
        if _vertices(G[keep], h[keep], A_eq, b_eq, tol):
            return f"infeasible: constraint '{labels[i]}' cannot be met", labels[i]
    return "infeasible: equality constraints conflict with the bounds", "equalities"


# ---------------------------------------------------------------------------
# image + radar programme


@dataclass(frozen=True)
class Lp1Inputs:
    a1: int
    a2: int
    a3: int
    r1: int = 18
    r2: int = 19
    b1: int = 0
    b2: int = 0
    b3: int = 0
    S: float | None = None
    budget_fraction: float = 0.1
    x_bounds: tuple = (0.05, 0.4)
    x4_bounds: tuple = (0.02, 0.025)

    def __post_init__(self):
        if min(self.a1, self.a2, self.a3, self.r1, self.r2) < 0:
            raise ValueError("block counts must be non-negative")
        if self.b1 < 0 or self.b2 > 0 or self.b3 > 0:
            raise ValueError("need b1 >= 0 and b2, b3 <= 0")
        if self.b1 + self.b2 + self.b3 != 0:
            raise ValueError(f"b1 + b2 + b3 must be 0, got {self.b1 + self.b2 + self.b3}")
        if self.a2 * self.r1 + self.b2 < 0 or self.a3 * self.r1 + self.b3 < 0:
            raise ValueError("promotion removes more blocks than a category holds")
        total = (self.a1 + self.a2 + self.a3) * (self.r1 + self.r2)
        if self.S is None:
            object.__setattr__(self, "S", float(total))
        elif self.S != total:
            raise ValueError(f"S={self.S} differs from the block count {total}")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([
            self.a1 * self.r1 + self.b1,
            self.a2 * self.r1 + self.b2,
            self.a3 * self.r1 + self.b3,
            (self.a1 + self.a2 + self.a3) * self.r2,
        ], dtype=np.float64)

    @property
    def budget(self) -> float:
        return self.budget_fraction * self.S


def solve_lp1(inputs: Lp1Inputs) -> np.ndarray:
    """Rates ``(x1, x2, x3, x4)``; ties favour ``x3`` then ``x4``."""
    c = inputs.coefficients
    lo, hi = inputs.x_bounds
    sol = solve_bounded_lp(
        [c, [0, 0, 1, 0], [0, 0, 0, 1]],
        A_ub=[c], b_ub=[inputs.budget], names=[f"f(x) <= {inputs.budget:g}"],
        A_eq=[[1, 0, -3, 0], [0, 1, -2, 0]], b_eq=[0, 0],
        bounds=[(lo, hi)] * 3 + [tuple(inputs.x4_bounds)],
    )
    return sol.x.copy()


# ---------------------------------------------------------------------------
# radar-only programme


@dataclass(frozen=True)
class Lp2Inputs:
    I: int
    O: int
    w: int = 48
    h: int = 20
    S: float = 46080.0
    x1_bounds: tuple = (0.2, 0.55)
    x2_bounds: tuple = (0.07, 0.2)
    ratio: float = 1.1

    def __post_init__(self):
        if self.I < 0 or self.O < 0:
            raise ValueError("I and O must be non-negative")

    @classmethod
    def for_target(cls, important: int, grid: BlockGrid, target_rate: float,
                   x1_upper: float = 0.55, x2_lower: float = 0.07) -> "Lp2Inputs":
        """Bounds tied to the target rate: ``x1 >= target`` and ``x2 <= target``.

        The upper bound on ``x1`` widens to the target when the target exceeds it.
        """
        return cls(important, grid.n_blocks - important, grid.block_cols, grid.block_rows,
                   target_rate * grid.n_blocks * grid.block_size,
                   (target_rate, max(x1_upper, target_rate)), (min(x2_lower, target_rate), target_rate))


def solve_lp2(inputs: Lp2Inputs) -> np.ndarray:
    """Rates ``(x1, x2)`` for important / other blocks; ties favour ``x1``."""
    wh = inputs.w * inputs.h
    c = [inputs.I * wh, inputs.O * wh]
    sol = solve_bounded_lp(
        [c, [1, 0], [0, 1]],
        A_ub=[[-1.0, inputs.ratio], c], b_ub=[0.0, inputs.S],
        names=[f"x1 >= {inputs.ratio:g} x2", f"f(x) <= {inputs.S:g}"],
        bounds=[tuple(inputs.x1_bounds), tuple(inputs.x2_bounds)],
    )
    return sol.x.copy()


# ---------------------------------------------------------------------------
# plans


@dataclass
class SamplingPlan:
    """Per-block sampling rates for one frame."""

    rates: np.ndarray
    block_size: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if np.any(self.rates < 0) or np.any(self.rates > 1):
            raise ValueError("rates must lie in [0, 1]")

    def rate(self, idx: BlockIndex) -> float:
        return float(self.rates[idx])

    def measurement_counts(self, kind=MatrixKind.BPD) -> np.ndarray:
        return np.vectorize(lambda r: measurement_count(float(r), self.block_size, kind),
                            otypes=[np.int64])(self.rates)

    def total_measurements(self, kind=MatrixKind.BPD) -> int:
        return int(self.measurement_counts(kind).sum())

    def nominal_samples(self) -> float:
        """Sum of ``rate * n`` before rounding."""
        return float(self.rates.sum() * self.block_size)

    def to_json(self) -> str:
        return json.dumps({
            "rates": self.rates.tolist(),
            "block_size": self.block_size,
            "provenance": self.provenance,
        }, sort_keys=True)


def uniform_plan(grid: BlockGrid, rate: float, **provenance) -> SamplingPlan:
    return SamplingPlan(np.full((grid.n_az_blocks, grid.n_range_blocks), float(rate)),
                        grid.block_size, dict(provenance, kind="uniform", rate=float(rate)))


def plan_from_solution(grid: BlockGrid, categories, rates: Mapping[str, float],
                       **provenance) -> SamplingPlan:
    """Assign each block the rate of its category.

    ``categories`` is either an ``(n_az, n_range)`` array of labels or a mapping
    from :class:`BlockIndex` to label; every block needs one.
    """
    shape = (grid.n_az_blocks, grid.n_range_blocks)
    if isinstance(categories, Mapping):
        labels = np.empty(shape, dtype=object)
        for idx, lab in categories.items():
            labels[tuple(idx)] = lab
    else:
        labels = np.asarray(categories, dtype=object)
        if labels.shape != shape:
            raise ValueError(f"categories shape {labels.shape} != grid {shape}")
    out = np.empty(shape)
    for idx in grid:
        lab = labels[idx]
        if lab is None or lab not in rates:
            raise ValueError(f"block {tuple(idx)} has no category with a rate (got {lab!r})")
        out[idx] = rates[lab]
    return SamplingPlan(out, grid.block_size, provenance)


def lp2_categories(grid: BlockGrid, important) -> np.ndarray:
    labels = np.full((grid.n_az_blocks, grid.n_range_blocks), "other", dtype=object)
    for idx in important:
        labels[tuple(idx)] = "important"
    return labels


def lp1_categories(grid: BlockGrid, az_categories: Sequence[str], r1: int,
                   promoted=()) -> np.ndarray:
    """Rate labels ``x1..x4`` from per-azimuth-block categories ``a1/a2/a3``.

    Near-range blocks take their azimuth category (promoted blocks take ``x1``);
    every block beyond ``r1`` takes ``x4``.
    """
    to_rate = {"a1": "x1", "a2": "x2", "a3": "x3"}
    labels = np.empty((grid.n_az_blocks, grid.n_range_blocks), dtype=object)
    for a, cat in enumerate(az_categories):
        labels[a, :r1] = to_rate[cat]
        labels[a, r1:] = "x4"
    for a, r in promoted:
        if r < r1:
            labels[a, r] = "x1"
    return labels


def lp1_inputs(az_categories: Sequence[str], r1: int, r2: int, cfar_blocks=(),
               budget_fraction: float = 0.1) -> tuple[Lp1Inputs, frozenset]:
    """Build the image + radar programme from azimuth categories and CFAR blocks.

    CFAR blocks in the near region that are not already pedestrian/bicycle
    blocks are promoted to ``x1``; their original categories lose them so no
    block is counted twice.  Far-region CFAR blocks are ignored.
    Returns the inputs and the set of promoted blocks.
    """
    counts = {c: sum(1 for a in az_categories if a == c) for c in ("a1", "a2", "a3")}
    promoted = frozenset(BlockIndex(a, r) for a, r in cfar_blocks
                         if r < r1 and az_categories[a] != "a1")
    b2 = -sum(1 for a, _ in promoted if az_categories[a] == "a2")
    b3 = -sum(1 for a, _ in promoted if az_categories[a] == "a3")
    inputs = Lp1Inputs(counts["a1"], counts["a2"], counts["a3"], r1, r2,
                       len(promoted), b2, b3, budget_fraction=budget_fraction)
    return inputs, promoted


def describe(inputs) -> dict:
    """JSON-friendly echo of an LP instance."""
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(inputs).items()}
