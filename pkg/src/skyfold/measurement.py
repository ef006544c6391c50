"""Linear sketching of images: cell buckets per code row, and torus folds.

A measurement plan fixes a shifted cell grid and a sketching code; measuring
an image sums whole cells (w_prime x w_prime pixel blocks) into buckets, one
bucket per code row per cell.  The implicit measurement matrix is binary and
can be materialized for small instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ConfigError
from .codes import IndependentCode, coprime_moduli, sample_independent_code
from .image_model import GridView, ModelConfig


@dataclass(frozen=True)
class TheoryConstants:
    """Analysis constants; beta and delta are derived, never set directly.

    beta bounds the fraction of rows that fail to preserve a cell (collisions
    plus noise); delta additionally charges grid cuts.  The code distance must
    reach 4*(3*delta + beta) of the row count for recovery to be provable.
    """

    alpha: float = 0.0005
    gamma: float = 0.0005
    eta: float = 0.0005
    c_log: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "gamma", "eta"):
            val = getattr(self, name)
            if not 0 < val < 1:
                raise ConfigError(f"{name}={val} outside (0, 1)")

    @property
    def beta(self) -> float:
        return 32 * self.eta * (1 + 16 * self.alpha) + 24 * self.gamma

    @property
    def delta(self) -> float:
        return self.beta + 16 * self.alpha + 2 * self.gamma

    @property
    def distance_fraction(self) -> float:
        """Required code distance as a fraction of s: 4*(3*delta + beta)."""
        return 4 * (3 * self.delta + self.beta)


def feasibility_report(
    constants: TheoryConstants,
    n_cells: int,
    k: int,
    s: int,
    q: int,
    r: int,
) -> list[str]:
    """Violated sufficient inequalities, empty when all hold."""
    out = []
    needed_k = constants.c_log * math.log2(max(n_cells, 2))
    if k < needed_k:
        out.append(f"k >= C*log2(N) fails: k={k} < {needed_k:.2f}")
    df = constants.distance_fraction
    if df >= 1:
        out.append(f"4*(3*delta+beta) < 1 fails: {df:.4f} >= 1")
    if q < k / constants.eta:
        out.append(f"q >= k/eta fails: q={q} < {k / constants.eta:.1f}")
    if s - r < df * s:
        out.append(
            f"code distance s-r >= 4*(3*delta+beta)*s fails: {s - r} < {df * s:.2f}"
        )
    if q**r <= 2 * n_cells:
        out.append(f"q^r > 2N fails: {q}^{r} <= {2 * n_cells}")
    return out


def derive_code_params(
    constants: TheoryConstants, n_cells: int, k: int, kind: str = "crt"
) -> tuple[int, int, int]:
    """(s, q, r) from the sufficient conditions, or ConfigError naming the failure.

    q is the smallest usable value at least k/eta; s is the smallest row count
    with q**((1 - 4*(3*delta+beta)) * s) > 2N; r is what the distance
    requirement leaves over.
    """
    df = constants.distance_fraction
    if df >= 1:
        raise ConfigError(
            f"infeasible constants: 4*(3*delta+beta) = {df:.4f} >= 1 "
            f"(alpha={constants.alpha}, gamma={constants.gamma}, eta={constants.eta})"
        )
    q = max(2, math.ceil(k / constants.eta))
    if kind == "rs":
        from .codes import select_prime

        q = select_prime(q, 4 * q)
    for s in range(2, 257):
        r = s - math.ceil(df * s)
        if r < 1 or r >= s:
            continue
        if kind == "rs" and s > q:
            break
        if q**r > 2 * n_cells:
            return s, q, r
    raise ConfigError(
        f"infeasible constants: no s <= 256 satisfies q^((1-4(3delta+beta))s) > 2N "
        f"with q={q}, N={n_cells}"
    )


@dataclass(frozen=True, eq=False)
class MeasurementPlan:
    """A sampled grid shift plus a sketching code and its assignment table."""

    code: IndependentCode
    grid: GridView
    assignments: np.ndarray = field(repr=False)
    feasibility_notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.code.n_cells != self.grid.n_cells:
            raise ConfigError(
                f"code domain {self.code.n_cells} != grid cells {self.grid.n_cells}"
            )
        if self.assignments.shape != (self.code.s, self.code.n_cells):
            raise ConfigError("assignment table shape mismatch")

    @property
    def s(self) -> int:
        return self.code.s

    @property
    def w_prime(self) -> int:
        return self.grid.w_prime


def build_plan(
    rng: np.random.Generator,
    config: ModelConfig,
    kind: str = "crt",
    s: Optional[int] = None,
    q: Optional[int] = None,
    r: Optional[int] = None,
    constants: Optional[TheoryConstants] = None,
    shift: Optional[tuple[int, int]] = None,
) -> MeasurementPlan:
    """Sample a grid shift and a sketching code sized for the instance.

    With explicit (s, q, r) the sufficient-condition report is attached as
    notes; when any of them is omitted the parameters are derived from the
    constants and a violated inequality aborts with a ConfigError.
    """
    constants = constants or TheoryConstants()
    if shift is None:
        v = (int(rng.integers(0, config.w_prime)), int(rng.integers(0, config.w_prime)))
    else:
        v = (int(shift[0]), int(shift[1]))
    grid = GridView(n=config.n, w_prime=config.w_prime, v=v)
    n_cells = grid.n_cells
    if s is None or q is None or r is None:
        if not (s is None and q is None and r is None):
            raise ConfigError("give all of s, q, r or none of them")
        s, q, r = derive_code_params(constants, n_cells, config.k, kind)
        notes: tuple[str, ...] = ()
    else:
        notes = tuple(feasibility_report(constants, n_cells, config.k, s, q, r))
    code = sample_independent_code(kind, n_cells, s, q, r, rng)
    return MeasurementPlan(
        code=code, grid=grid, assignments=code.encode_all(), feasibility_notes=notes
    )


@dataclass(frozen=True, eq=False)
class Sketch:
    """Bucket accumulators: row i is a (|B_i|, w_prime, w_prime) array."""

    rows: tuple[np.ndarray, ...]
    w_prime: int

    @property
    def s(self) -> int:
        return len(self.rows)

    @property
    def bucket_counts(self) -> tuple[int, ...]:
        return tuple(row.shape[0] for row in self.rows)

    def concat(self) -> np.ndarray:
        """Flat measurement vector in (row, bucket, pixel-offset) order."""
        return np.concatenate([row.reshape(-1) for row in self.rows])


def measure(plan: MeasurementPlan, image: np.ndarray) -> Sketch:
    """Sum each grid cell into its bucket, per code row.

    Buckets accumulate in cell-index order, so the floating-point summation
    order is fixed and repeated runs are bit-identical.
    """
    image = np.asarray(image, dtype=float)
    if image.shape != (plan.grid.n, plan.grid.n):
        raise ValueError(f"image shape {image.shape} != {(plan.grid.n, plan.grid.n)}")
    cells = plan.grid.cell_stack(image)
    wp = plan.w_prime
    rows = []
    for i, size in enumerate(plan.code.alphabet_sizes):
        buckets = np.zeros((size, wp, wp), dtype=float)
        np.add.at(buckets, plan.assignments[i], cells)
        rows.append(buckets)
    return Sketch(rows=tuple(rows), w_prime=wp)


def measurement_count(plan) -> int:
    """Scalar measurements: w_prime^2 * sum of bucket counts, or p1^2 + p2^2."""
    if isinstance(plan, FoldPlan):
        return plan.p1**2 + plan.p2**2
    return plan.w_prime**2 * int(sum(plan.code.alphabet_sizes))


def explicit_matrix(plan: MeasurementPlan) -> np.ndarray:
    """The binary measurement matrix A with measure(x) == A @ x.flatten().

    Rows follow Sketch.concat() order.  Every column has exactly s ones: each
    pixel lands in one cell, and each cell feeds one bucket per row.
    """
    n = plan.grid.n
    if plan.grid.n_cells > 4096:
        raise ConfigError(
            f"explicit matrix limited to 4096 cells, plan has {plan.grid.n_cells}"
        )
    wp, g = plan.w_prime, plan.grid.cells_per_axis
    sizes = plan.code.alphabet_sizes
    bases = np.cumsum([0] + [size * wp * wp for size in sizes])
    m = int(bases[-1])
    A = np.zeros((m, n * n), dtype=np.uint8)
    rr, cc = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    pr, pc = rr + plan.grid.v[0], cc + plan.grid.v[1]
    cell = (pr // wp) * g + (pc // wp)
    offset = (pr % wp) * wp + (pc % wp)
    col = (rr * n + cc).reshape(-1)
    for i in range(plan.s):
        row = bases[i] + plan.assignments[i][cell.reshape(-1)] * (wp * wp) + offset.reshape(-1)
        A[row, col] = 1
    return A


# ---------------------------------------------------------------------------
# Torus folding


@dataclass(frozen=True)
class FoldPlan:
    """Two coprime fold sizes whose product covers the image side."""

    n: int
    p1: int
    p2: int

    def __post_init__(self):
        if math.gcd(self.p1, self.p2) != 1:
            raise ConfigError(f"fold sizes {self.p1}, {self.p2} are not coprime")
        if self.p1 * self.p2 < self.n:
            raise ConfigError(
                f"fold sizes {self.p1}*{self.p2} = {self.p1 * self.p2} below n={self.n}"
            )
        if min(self.p1, self.p2) < 1:
            raise ConfigError("fold sizes must be positive")


def fold2d(image: np.ndarray, p: int) -> np.ndarray:
    """p x p torus fold: out[a, b] = sum of pixels with coords = (a, b) mod p.

    The image is zero-padded up to a multiple of p, so folding commutes with
    cyclic shifts by multiples of p when p divides the image side.
    """
    image = np.asarray(image, dtype=float)
    h, w = image.shape
    ph, pw = -(-h // p) * p, -(-w // p) * p
    padded = np.zeros((ph, pw), dtype=float)
    padded[:h, :w] = image
    return padded.reshape(ph // p, p, pw // p, p).sum(axis=(0, 2))
