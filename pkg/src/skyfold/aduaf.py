"""Two-fold star recovery: pick bright torus windows, match, CRT-reconstruct.

Folding an n x n frame modulo two coprime sizes p1, p2 (p1 * p2 >= n) keeps
each star a local blob in both folds.  Matching blobs across folds by mass
and sub-pixel centroid fraction, then combining the two integer residues per
axis, reconstructs star positions in the original frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ConfigError
from .codes import crt_reconstruct
from .image_model import FeatureVector, feature


@dataclass(frozen=True)
class AduafConfig:
    """Fold sizes and the window/matching knobs.

    overlap_limit is in shared pixels between accepted windows; mass_tol is
    relative; centroid_tol compares sub-pixel fractions (cyclic in [0, 1)).
    bg_subtract removes the per-fold median pixel level before picking -- the
    folds spread the same total background over different pixel counts, so
    raw window masses disagree across folds by a systematic offset.
    """

    n: int
    p1: int
    p2: int
    cell_w: int = 3
    cells_per_fold: int = 10
    max_pairs: int = 8
    overlap_limit: int = 4
    mass_tol: float = 0.25
    centroid_tol: float = 0.5
    bg_subtract: bool = True

    def __post_init__(self):
        if math.gcd(self.p1, self.p2) != 1:
            raise ConfigError(f"fold sizes {self.p1}, {self.p2} are not coprime")
        if self.p1 * self.p2 < self.n:
            raise ConfigError(
                f"fold product {self.p1 * self.p2} below frame side {self.n}"
            )
        if self.cell_w < 1 or self.cell_w > min(self.p1, self.p2):
            raise ConfigError(
                f"window width {self.cell_w} outside [1, min(p1, p2)]"
            )
        if self.cells_per_fold < 1 or self.max_pairs < 1:
            raise ConfigError("cells_per_fold and max_pairs must be positive")


@dataclass(frozen=True, eq=False)
class PickedCell:
    """A cell_w x cell_w torus window of one fold, with its features.

    feat is the whole-window feature; core is the same triple restricted to
    the heaviest 2 x 2 block of the window (coordinates still window-local).
    A star's core block is built from the same source pixels in both folds,
    so core features survive fold aliasing that corrupts whole-window sums.
    """

    fold: int
    anchor: tuple[int, int]
    window: np.ndarray
    feat: FeatureVector
    core: FeatureVector
    core_block: np.ndarray

    @property
    def mass(self) -> float:
        return self.feat.mass


def cell_from_window(fold: int, anchor: tuple[int, int], window: np.ndarray) -> PickedCell:
    """Build a PickedCell, locating the heaviest core block inside the window."""
    window = np.asarray(window, dtype=float)
    cw = window.shape[0]
    size = min(2, cw)
    best, bi, bj = -math.inf, 0, 0
    for i in range(cw - size + 1):
        for j in range(cw - size + 1):
            s = float(window[i : i + size, j : j + size].sum())
            if s > best:
                best, bi, bj = s, i, j
    block = window[bi : bi + size, bj : bj + size].copy()
    sub = feature(block)
    core = (
        FeatureVector(sub.mass, bi + sub.cx, bj + sub.cy)
        if not sub.empty
        else FeatureVector(0.0, 0.0, 0.0)
    )
    return PickedCell(
        fold=fold, anchor=anchor, window=window, feat=feature(window),
        core=core, core_block=block,
    )


def _axis_overlap(d: int, cell_w: int, p: int) -> int:
    """Shared coordinates of two length-cell_w torus intervals offset by d."""
    return sum(1 for x in range(cell_w) if (x - d) % p < cell_w)


def window_overlap(a1: tuple[int, int], a2: tuple[int, int], cell_w: int, p: int) -> int:
    """Shared pixels of the torus windows anchored at a1 and a2."""
    dr = (a2[0] - a1[0]) % p
    dc = (a2[1] - a1[1]) % p
    return _axis_overlap(dr, cell_w, p) * _axis_overlap(dc, cell_w, p)


def pick_heavy_cells(folded: np.ndarray, config: AduafConfig, fold: int) -> list[PickedCell]:
    """Greedy core-mass-descending selection of peak-centered torus windows.

    Candidates are single-pixel local maxima of the fold (every isolated blob
    peaks at exactly one pixel); each window is anchored so its candidate
    peak sits at the center, and candidates are ranked by the heaviest 2 x 2
    block of their window rather than the full window sum -- a concentrated
    blob then outranks a flat pile of aliased background of equal total.  A
    candidate is rejected when its window shares more than overlap_limit
    pixels with any accepted window; selection stops at cells_per_fold.
    Ties break toward the smaller anchor.
    """
    folded = np.asarray(folded, dtype=float)
    p = folded.shape[0]
    if folded.shape != (p, p):
        raise ValueError(f"fold must be square, got {folded.shape}")
    cw = config.cell_w
    is_max = np.ones_like(folded, dtype=bool)
    if p > 1:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                is_max &= folded >= np.roll(np.roll(folded, di, axis=0), dj, axis=1)
    rows = np.arange(cw)
    half = cw // 2
    cells = []
    for ci, cj in np.argwhere(is_max & (folded > 0)):
        anchor = (int(ci - half) % p, int(cj - half) % p)
        window = folded[np.ix_((anchor[0] + rows) % p, (anchor[1] + rows) % p)]
        cells.append(cell_from_window(fold, anchor, window))
    cells.sort(key=lambda c: (-c.core.mass, c.anchor))
    accepted: list[PickedCell] = []
    for cell in cells:
        if len(accepted) >= config.cells_per_fold:
            break
        if any(
            window_overlap(cell.anchor, c.anchor, cw, p) > config.overlap_limit
            for c in accepted
        ):
            continue
        accepted.append(cell)
    return accepted


@dataclass(frozen=True, eq=False)
class MatchedPair:
    cell1: PickedCell
    cell2: PickedCell
    score: float


def _frac_distance(f1: float, f2: float) -> float:
    d = abs(f1 - f2) % 1.0
    return min(d, 1.0 - d)


def _pair_score(c1: PickedCell, c2: PickedCell) -> Optional[float]:
    """Ascending match score: core pattern distance plus a centroid term.

    The L1 difference of the core blocks (relative to the heavier core) is
    near zero for the same star seen through two folds and O(1) for distinct
    stars, and it degrades gracefully when one fold's core picks up aliased
    mass.  The cyclic centroid-fraction distance breaks near-ties.
    """
    m1, m2 = c1.core.mass, c2.core.mass
    if m1 <= 0 or m2 <= 0 or c1.core_block.shape != c2.core_block.shape:
        return None
    dpat = float(np.abs(c1.core_block - c2.core_block).sum()) / max(m1, m2)
    dx = _frac_distance(c1.core.cx % 1.0, c2.core.cx % 1.0)
    dy = _frac_distance(c1.core.cy % 1.0, c2.core.cy % 1.0)
    return dpat + 0.3 * max(dx, dy)


def match_pairs(
    cells1: Sequence[PickedCell],
    cells2: Sequence[PickedCell],
    config: AduafConfig,
) -> list[MatchedPair]:
    """Greedy cross-fold matching by ascending pair score.

    A candidate pair must pass the relative core-mass gate and the cyclic
    core-centroid-fraction gate; each window is used at most once; at most
    max_pairs matches are kept.  The sort key is symmetric in the two folds,
    so swapping the inputs yields the same pair set.
    """
    candidates = []
    for c1 in cells1:
        for c2 in cells2:
            score = _pair_score(c1, c2)
            if score is None:
                continue
            m1, m2 = c1.core.mass, c2.core.mass
            if abs(m1 - m2) / max(abs(m1), abs(m2)) > config.mass_tol:
                continue
            if _frac_distance(c1.core.cx % 1.0, c2.core.cx % 1.0) > config.centroid_tol:
                continue
            if _frac_distance(c1.core.cy % 1.0, c2.core.cy % 1.0) > config.centroid_tol:
                continue
            key = (
                score,
                -(m1 + m2),
                -max(m1, m2),
                tuple(sorted([c1.anchor, c2.anchor])),
            )
            candidates.append((key, c1, c2, score))
    candidates.sort(key=lambda t: t[0])
    used1: set[tuple[int, int]] = set()
    used2: set[tuple[int, int]] = set()
    out = []
    for _, c1, c2, score in candidates:
        if len(out) >= config.max_pairs:
            break
        if c1.anchor in used1 or c2.anchor in used2:
            continue
        used1.add(c1.anchor)
        used2.add(c2.anchor)
        out.append(MatchedPair(cell1=c1, cell2=c2, score=score))
    return out


@dataclass(frozen=True)
class RecoveredStar:
    """Sub-pixel position in the n x n frame plus a mass estimate."""

    x: float
    y: float
    mass: float


def _axis_position(
    anchor1: int, centroid1: float, anchor2: int, centroid2: float,
    m1: float, m2: float, p1: int, p2: int, n: int,
) -> Optional[float]:
    # Absolute sub-pixel coordinate on each fold torus; pixel i spans [i, i+1).
    g1 = (anchor1 + centroid1 + 0.5) % p1
    g2 = (anchor2 + centroid2 + 0.5) % p2
    f1, f2 = g1 % 1.0, g2 % 1.0
    # Mass-weighted cyclic mean of the two sub-pixel fractions; snapping each
    # fold's coordinate to the consensus fraction keeps the integer residues
    # congruent even when a star sits on a pixel boundary and the raw floors
    # would disagree between folds.
    wsum = m1 + m2
    w2 = m2 / wsum if wsum > 0 else 0.5
    d = (f2 - f1 + 0.5) % 1.0 - 0.5
    frac = (f1 + w2 * d) % 1.0
    r1 = int(round(g1 - frac)) % p1
    r2 = int(round(g2 - frac)) % p2
    x_int = crt_reconstruct([(r1, p1), (r2, p2)])
    if x_int >= n:
        return None
    return x_int + frac


def reconstruct_position(pair: MatchedPair, config: AduafConfig) -> Optional[RecoveredStar]:
    """CRT per axis on the integer parts of the two torus core centroids.

    A mismatched pair lands outside [0, n) in some axis with probability
    about 1 - n / (p1 * p2) per axis and is rejected as a ghost (None).  The
    reported mass is the mean of the whole-window masses; positions come from
    the core centroids, which the folds measure from the same source pixels.
    """
    c1, c2 = pair.cell1, pair.cell2
    x = _axis_position(
        c1.anchor[0], c1.core.cx, c2.anchor[0], c2.core.cx,
        c1.core.mass, c2.core.mass, config.p1, config.p2, config.n,
    )
    if x is None:
        return None
    y = _axis_position(
        c1.anchor[1], c1.core.cy, c2.anchor[1], c2.core.cy,
        c1.core.mass, c2.core.mass, config.p1, config.p2, config.n,
    )
    if y is None:
        return None
    return RecoveredStar(x=x, y=y, mass=(c1.mass + c2.mass) / 2.0)


def aduaf_recover(
    fold1: np.ndarray, fold2: np.ndarray, config: AduafConfig
) -> list[RecoveredStar]:
    """Recover star positions from the two folded frames, brightest first."""
    if fold1.shape != (config.p1, config.p1):
        raise ValueError(f"fold1 shape {fold1.shape} != ({config.p1}, {config.p1})")
    if fold2.shape != (config.p2, config.p2):
        raise ValueError(f"fold2 shape {fold2.shape} != ({config.p2}, {config.p2})")
    if config.bg_subtract:
        fold1 = fold1 - np.median(fold1)
        fold2 = fold2 - np.median(fold2)
    cells1 = pick_heavy_cells(fold1, config, fold=1)
    cells2 = pick_heavy_cells(fold2, config, fold=2)
    pairs = match_pairs(cells1, cells2, config)
    stars = []
    for pair in pairs:
        star = reconstruct_position(pair, config)
        if star is not None:
            stars.append(star)
    stars.sort(key=lambda s: (-s.mass, s.x, s.y))
    return stars
