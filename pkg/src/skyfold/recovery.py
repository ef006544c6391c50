"""Recovery: cluster heavy buckets, read off codewords, decode cells.

Buckets whose feature magnitude clears half the distinguishability threshold
are clustered into k groups of feature-diameter at most T/2; each cluster's
row-to-bucket map is a codeword (with erasures) that the sketching code
decodes back to a cell index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .codes import ERASURE, IndependentCode
from .image_model import (
    FeatureNorm,
    FeatureVector,
    ModelConfig,
    Placement,
    _classify,
    feature,
    feature_batch,
    feature_distance,
    scaled_triples,
)
from .measurement import MeasurementPlan, Sketch


@dataclass(frozen=True, eq=False)
class HeavySet:
    """Buckets with feature magnitude >= threshold/2, in (row, bucket) order."""

    rows: np.ndarray = field(repr=False)
    buckets: np.ndarray = field(repr=False)
    raw_features: np.ndarray = field(repr=False)
    threshold: float

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def feature(self, idx: int) -> FeatureVector:
        mass, cx, cy = self.raw_features[idx]
        return FeatureVector(float(mass), float(cx), float(cy))

    def pairs(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(self.rows, self.buckets)}


def find_heavy(sketch: Sketch, threshold: float, norm: FeatureNorm) -> HeavySet:
    """All (row, bucket) entries whose scaled mass reaches threshold/2."""
    rows_out, buckets_out, feats_out = [], [], []
    for i, buckets in enumerate(sketch.rows):
        raw = feature_batch(buckets)
        mask = np.abs(raw[:, 0]) / norm.mass_scale >= threshold / 2.0
        idx = np.nonzero(mask)[0]
        rows_out.append(np.full(idx.shape, i, dtype=np.int64))
        buckets_out.append(idx.astype(np.int64))
        feats_out.append(raw[idx])
    return HeavySet(
        rows=np.concatenate(rows_out) if rows_out else np.zeros(0, dtype=np.int64),
        buckets=np.concatenate(buckets_out) if buckets_out else np.zeros(0, dtype=np.int64),
        raw_features=np.concatenate(feats_out) if feats_out else np.zeros((0, 3)),
        threshold=threshold,
    )


@dataclass(frozen=True, eq=False)
class KCenterResult:
    centers: tuple[int, ...]
    labels: np.ndarray = field(repr=False)

    @property
    def n_outliers(self) -> int:
        return int((self.labels < 0).sum())


def kcenter_outliers(
    points: np.ndarray,
    k: int,
    r_guess: float,
    expansion: float = 3.0,
) -> KCenterResult:
    """Greedy disk covering: k rounds of 'densest r_guess-ball, mark 3x ball covered'.

    Every covered point lies within expansion * r_guess of its center, so each
    cluster has diameter at most 2 * expansion * r_guess.  Points left after k
    rounds are outliers (label -1).  Ties break toward the lowest point index.
    """
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    labels = np.full(m, -1, dtype=np.int64)
    if m == 0 or k <= 0:
        return KCenterResult(centers=(), labels=labels)
    diff = np.abs(points[:, None, :] - points[None, :, :]).max(axis=2)
    cover_r = diff <= r_guess
    cover_big = diff <= expansion * r_guess
    uncovered = np.ones(m, dtype=bool)
    centers = []
    for l in range(k):
        if not uncovered.any():
            break
        counts = cover_r[:, uncovered].sum(axis=1)
        center = int(np.argmax(counts))
        newly = uncovered & cover_big[center]
        labels[newly] = l
        uncovered &= ~newly
        centers.append(center)
    return KCenterResult(centers=tuple(centers), labels=labels)


@dataclass(frozen=True, eq=False)
class ClusterPartition:
    """Heavy entries split into at most k clusters plus outliers (label -1)."""

    heavy: HeavySet
    labels: np.ndarray = field(repr=False)
    centers: tuple[int, ...]
    outlier_budget: Optional[float] = None

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    @property
    def n_outliers(self) -> int:
        return int((self.labels < 0).sum())

    @property
    def budget_exceeded(self) -> bool:
        return self.outlier_budget is not None and self.n_outliers > self.outlier_budget

    def cluster_indices(self, l: int) -> np.ndarray:
        return np.nonzero(self.labels == l)[0]

    def diameter(self, l: int, norm: FeatureNorm) -> float:
        idx = self.cluster_indices(l)
        if idx.size <= 1:
            return 0.0
        pts = scaled_triples(self.heavy.raw_features[idx], norm)
        return float(np.abs(pts[:, None, :] - pts[None, :, :]).max())


def cluster_heavy(
    heavy: HeavySet,
    k: int,
    threshold: float,
    norm: FeatureNorm,
    outlier_budget: Optional[float] = None,
) -> ClusterPartition:
    """Partition heavy entries into k clusters of feature-diameter <= T/2.

    Greedy disk covering at radius T/12 with a 3x expansion caps every
    cluster diameter at 6 * T/12 = T/2.  Exceeding the outlier budget is
    flagged, not fatal.
    """
    points = scaled_triples(heavy.raw_features, norm)
    res = kcenter_outliers(points, k, threshold / 12.0)
    return ClusterPartition(
        heavy=heavy,
        labels=res.labels,
        centers=res.centers,
        outlier_budget=outlier_budget,
    )


def build_codewords(
    partition: ClusterPartition, s: int, k: int
) -> list[list[Optional[int]]]:
    """One codeword per cluster, padded with all-erasure words up to k.

    Position i takes the cluster's bucket index in row i, the smallest bucket
    on ties, and the erasure mark when the cluster has no row-i entry.
    """
    heavy = partition.heavy
    words = []
    for l in range(k):
        word: list[Optional[int]] = [ERASURE] * s
        idx = partition.cluster_indices(l) if l < partition.n_clusters else []
        for t in idx:
            i = int(heavy.rows[t])
            j = int(heavy.buckets[t])
            if word[i] is ERASURE or j < word[i]:
                word[i] = j
        words.append(word)
    return words


@dataclass(frozen=True)
class ClusterDecode:
    """Per-cluster outcome; errors are residual row mismatches after re-encoding."""

    cluster: int
    cell: Optional[int]
    valid: bool
    errors: int
    erasures: int


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    decoded: tuple[ClusterDecode, ...]
    cells: tuple[int, ...]
    cell_counts: dict[int, int]
    partition: ClusterPartition

    @property
    def n_valid(self) -> int:
        return sum(1 for d in self.decoded if d.valid)


def recover(
    sketch: Sketch,
    plan: MeasurementPlan,
    k: int,
    threshold: float,
    norm: FeatureNorm,
    outlier_budget: Optional[float] = None,
) -> RecoveryResult:
    """Full pipeline: heavy buckets -> clusters -> codewords -> cell indices.

    Duplicate decoded cells collapse with a count; decoder failures and cell
    indices outside the grid stay in the per-cluster list marked invalid.
    """
    heavy = find_heavy(sketch, threshold, norm)
    partition = cluster_heavy(heavy, k, threshold, norm, outlier_budget)
    words = build_codewords(partition, plan.s, k)
    code = plan.code
    decoded = []
    cells: list[int] = []
    counts: dict[int, int] = {}
    for l, word in enumerate(words):
        erasures = sum(1 for sym in word if sym is ERASURE)
        if erasures == plan.s:
            decoded.append(ClusterDecode(l, None, False, 0, erasures))
            continue
        cell = code.decode(word)
        valid = cell is not None and cell < plan.grid.n_cells
        errors = 0
        if cell is not None:
            reenc = code.encode(cell) if valid else None
            if reenc is not None:
                errors = sum(
                    1
                    for sym, ref in zip(word, reenc)
                    if sym is not ERASURE and sym != ref
                )
        decoded.append(
            ClusterDecode(l, cell, valid, errors, erasures)
        )
        if valid:
            if cell in counts:
                counts[cell] += 1
            else:
                counts[cell] = 1
                cells.append(cell)
    return RecoveryResult(
        decoded=tuple(decoded),
        cells=tuple(cells),
        cell_counts=counts,
        partition=partition,
    )


def estimate_cell_contents(
    sketch: Sketch, plan: MeasurementPlan, cell: int
) -> np.ndarray:
    """Pixelwise median of the cell's s buckets; robust to a corrupted minority."""
    if not 0 <= cell < plan.grid.n_cells:
        raise ValueError(f"cell {cell} outside [0, {plan.grid.n_cells})")
    stack = np.stack(
        [sketch.rows[i][plan.assignments[i, cell]] for i in range(plan.s)]
    )
    return np.median(stack, axis=0)


@dataclass(frozen=True, eq=False)
class Diagnostics:
    """Ground-truth accounting of the preservation predicate and codeword quality."""

    S: frozenset[int]
    S_prime: frozenset[int]
    preserved: frozenset[tuple[int, int]]
    p_count: int
    r_count: int
    r_minus_p: int
    error_tally: int
    erasure_tally: int
    correct_cells: frozenset[int]


def diagnose(
    sketch: Sketch,
    plan: MeasurementPlan,
    clean_image: np.ndarray,
    placement: Placement,
    config: ModelConfig,
    threshold: float,
    norm: FeatureNorm,
    k: int,
    result: Optional[RecoveryResult] = None,
) -> Diagnostics:
    """Compare a sketch against ground truth.

    A row i preserves a contained cell c when no other intersecting cell
    shares its bucket and the bucket feature sits within T/24 of the clean
    cell feature.  Codeword errors count non-erased entries outside the
    preserved set; erasures count empty positions across all k codewords.
    """
    grid = plan.grid
    S, S_prime = _classify(grid.v, grid.w_prime, grid.cells_per_axis, placement, config.w)
    heavy = find_heavy(sketch, threshold, norm)
    heavy_pairs = heavy.pairs()
    preserved = set()
    for c in S:
        clean_feat = feature(grid.cell_pixels(clean_image, c))
        for i in range(plan.s):
            j = int(plan.assignments[i, c])
            collided = any(
                other != c and int(plan.assignments[i, other]) == j
                for other in S_prime
            )
            if collided:
                continue
            bucket_feat = feature(sketch.rows[i][j])
            if feature_distance(bucket_feat, clean_feat, norm) <= threshold / 24.0:
                preserved.add((i, j))
    if result is None:
        result = recover(sketch, plan, k, threshold, norm)
    words = build_codewords(result.partition, plan.s, k)
    error_tally = sum(
        1
        for word in words
        for i, sym in enumerate(word)
        if sym is not ERASURE and (i, int(sym)) not in preserved
    )
    erasure_tally = sum(1 for word in words for sym in word if sym is ERASURE)
    correct = frozenset(c for c in result.cells if c in S)
    return Diagnostics(
        S=S,
        S_prime=S_prime,
        preserved=frozenset(preserved),
        p_count=len(preserved),
        r_count=len(heavy),
        r_minus_p=len(heavy_pairs - preserved),
        error_tally=error_tally,
        erasure_tally=erasure_tally,
        correct_cells=correct,
    )
