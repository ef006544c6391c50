"""Synthetic image model: small objects on a grid of cells.

Images are n x n arrays holding k objects, each a w x w template placed at an
integer translation.  A cell grid of side w_prime (shifted by a random offset
v) carves the padded image into disjoint cells; recovery operates on cell
features (mass and within-cell centroid) rather than raw pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import CapacityError, ConfigError

# Distance reported when exactly one of two features is empty: positions of
# nothing and something cannot be compared, so they are maximally far.
INFINITE_DISTANCE = math.inf


@dataclass(frozen=True)
class FeatureVector:
    """Mass plus mass-weighted mean pixel position within a cell.

    An exactly zero mass uses the (0, 0) sentinel centroid; such features
    compare as empty.
    """

    mass: float
    cx: float
    cy: float

    @property
    def empty(self) -> bool:
        return self.mass == 0.0


@dataclass(frozen=True)
class FeatureNorm:
    """Weights for comparing features: mass and centroid in separate scales."""

    mass_scale: float
    centroid_scale: float

    def __post_init__(self):
        if self.mass_scale <= 0 or self.centroid_scale <= 0:
            raise ConfigError("feature norm scales must be positive")


def feature(cell: np.ndarray) -> FeatureVector:
    """Mass and centroid of one cell (centroid in pixel-index coordinates)."""
    cell = np.asarray(cell, dtype=float)
    mass = float(cell.sum())
    if mass == 0.0:
        return FeatureVector(0.0, 0.0, 0.0)
    rows = np.arange(cell.shape[0], dtype=float)
    cols = np.arange(cell.shape[1], dtype=float)
    cx = float((cell.sum(axis=1) * rows).sum() / mass)
    cy = float((cell.sum(axis=0) * cols).sum() / mass)
    return FeatureVector(mass, cx, cy)


def feature_batch(stack: np.ndarray) -> np.ndarray:
    """Features of a stack of cells, shape (m, h, w) -> (m, 3) raw triples.

    Rows are (mass, cx, cy); exactly-zero-mass rows get the (0, 0) sentinel.
    """
    stack = np.asarray(stack, dtype=float)
    m = stack.shape[0]
    mass = stack.sum(axis=(1, 2))
    rows = np.arange(stack.shape[1], dtype=float)
    cols = np.arange(stack.shape[2], dtype=float)
    safe = np.where(mass == 0.0, 1.0, mass)
    cx = (stack.sum(axis=2) * rows).sum(axis=1) / safe
    cy = (stack.sum(axis=1) * cols).sum(axis=1) / safe
    out = np.stack([mass, cx, cy], axis=1)
    out[mass == 0.0, 1:] = 0.0
    return out


def feature_norm(f: FeatureVector, norm: FeatureNorm) -> float:
    """Magnitude of a feature relative to the empty cell.

    Centroids are positions, not displacements, so only the mass component
    carries magnitude; centroid terms enter feature_distance only.
    """
    return abs(f.mass) / norm.mass_scale


def feature_distance(f1: FeatureVector, f2: FeatureVector, norm: FeatureNorm) -> float:
    """Scaled l-infinity distance with empty-feature sentinel rules.

    Both empty: mass-only (zero).  Exactly one empty: maximal, because a
    centroid of nothing matches no position.  Otherwise the max of the scaled
    mass and centroid differences.
    """
    if f1.empty and f2.empty:
        return abs(f1.mass - f2.mass) / norm.mass_scale
    if f1.empty or f2.empty:
        return INFINITE_DISTANCE
    return max(
        abs(f1.mass - f2.mass) / norm.mass_scale,
        abs(f1.cx - f2.cx) / norm.centroid_scale,
        abs(f1.cy - f2.cy) / norm.centroid_scale,
    )


def scaled_triples(raw: np.ndarray, norm: FeatureNorm) -> np.ndarray:
    """Raw (m, 3) feature rows -> rows whose Chebyshev metric is the feature distance."""
    scales = np.array([norm.mass_scale, norm.centroid_scale, norm.centroid_scale])
    return np.asarray(raw, dtype=float) / scales


# ---------------------------------------------------------------------------
# Templates and model configuration


def mass_ladder_templates(k: int, w: int, base_mass: float = 100.0, ratio: float = 1.3) -> tuple[np.ndarray, ...]:
    """k uniform w x w templates with geometrically spaced masses.

    Geometric spacing keeps every pairwise mass gap at least (ratio - 1) times
    the smaller mass, so the distinguishability threshold stays usable even
    when grid cuts produce partial-mass look-alikes.
    """
    out = []
    for i in range(k):
        mass = base_mass * ratio**i
        out.append(np.full((w, w), mass / (w * w), dtype=float))
    return tuple(out)


def default_norm(templates: Sequence[np.ndarray], w: int) -> FeatureNorm:
    """Median template mass and half an object width, the default scales."""
    masses = sorted(float(t.sum()) for t in templates)
    median = masses[len(masses) // 2]
    return FeatureNorm(mass_scale=median, centroid_scale=w / 2.0)


def threshold_from_templates(templates: Sequence[np.ndarray], norm: FeatureNorm) -> float:
    """Distinguishability threshold T: minimum pairwise feature distance.

    The minimum runs over template features at canonical position plus the
    empty feature.  Identical templates give T = 0, which is rejected.
    """
    feats = [feature(t) for t in templates]
    feats.append(FeatureVector(0.0, 0.0, 0.0))
    best = INFINITE_DISTANCE
    for i in range(len(feats)):
        for j in range(i + 1, len(feats)):
            best = min(best, feature_distance(feats[i], feats[j], norm))
    if best <= 0.0:
        raise ConfigError("templates are not distinguishable (T = 0)")
    if not math.isfinite(best):
        raise ConfigError("threshold undefined: need at least two distinct templates")
    return best


@dataclass(frozen=True)
class ModelConfig:
    """Instance geometry: image side n, object width w, cell width w_prime, k objects."""

    n: int
    w: int
    w_prime: int
    k: int
    gamma: float = 0.0005

    def __post_init__(self):
        if self.w < 1 or self.n < self.w:
            raise ConfigError(f"need 1 <= w <= n, got w={self.w}, n={self.n}")
        if self.w_prime < self.w:
            raise ConfigError(
                f"cell width w_prime={self.w_prime} below object width w={self.w}"
            )
        if self.k < 1:
            raise ConfigError(f"need k >= 1, got k={self.k}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma={self.gamma} outside [0, 1)")

    @property
    def alpha(self) -> float:
        """Grid-cut rate w / w_prime; containment probability is (1 - alpha)^2 or better."""
        return self.w / self.w_prime


# ---------------------------------------------------------------------------
# Placement and rendering


@dataclass(frozen=True)
class Placement:
    """Top-left integer coordinates plus a template index per object."""

    positions: tuple[tuple[int, int], ...]
    template_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.positions) != len(self.template_ids):
            raise ConfigError("positions and template_ids differ in length")


def place_objects(
    rng: np.random.Generator,
    config: ModelConfig,
    min_sep: Optional[int] = None,
    max_tries: int = 200_000,
) -> Placement:
    """k random translations with pairwise l-infinity separation >= min_sep.

    The default separation w_prime guarantees no two objects share a cell for
    any grid shift.  Raises CapacityError when rejection sampling cannot fit
    all objects.
    """
    sep = config.w_prime if min_sep is None else min_sep
    hi = config.n - config.w
    if hi < 0:
        raise CapacityError("object does not fit in the image")
    placed: list[tuple[int, int]] = []
    tries = 0
    while len(placed) < config.k:
        tries += 1
        if tries > max_tries:
            raise CapacityError(
                f"could not place {config.k} objects with separation {sep} "
                f"in {config.n}x{config.n} after {max_tries} tries"
            )
        cand = (int(rng.integers(0, hi + 1)), int(rng.integers(0, hi + 1)))
        if all(
            max(abs(cand[0] - p[0]), abs(cand[1] - p[1])) >= sep for p in placed
        ):
            placed.append(cand)
    return Placement(
        positions=tuple(placed),
        template_ids=tuple(range(config.k)),
    )


def render(
    placement: Placement, templates: Sequence[np.ndarray], n: int
) -> np.ndarray:
    """Pixelwise sum of translated templates; overlaps add."""
    image = np.zeros((n, n), dtype=float)
    for (r, c), tid in zip(placement.positions, placement.template_ids):
        t = templates[tid]
        h, w = t.shape
        if r < 0 or c < 0 or r + h > n or c + w > n:
            raise ValueError(f"object at ({r}, {c}) leaves the {n}x{n} frame")
        image[r : r + h, c : c + w] += t
    return image


@dataclass(frozen=True)
class NoiseSpec:
    """Per-pixel Gaussian sigma plus an optional Poisson resampling stage."""

    gaussian_sigma: float = 0.0
    poisson: bool = False


def add_noise(
    rng: np.random.Generator, image: np.ndarray, spec: NoiseSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Noisy image and the additive noise component mu = noisy - clean.

    Poisson resamples each pixel with its clean value as the mean (so a pixel
    of 900 keeps mean 900 with std 30); Gaussian adds N(0, sigma) per pixel.
    """
    noisy = np.asarray(image, dtype=float)
    if spec.poisson:
        if (noisy < 0).any():
            raise ValueError("Poisson noise needs a non-negative image")
        noisy = rng.poisson(noisy).astype(float)
    if spec.gaussian_sigma > 0:
        noisy = noisy + rng.normal(0.0, spec.gaussian_sigma, size=noisy.shape)
    return noisy, noisy - np.asarray(image, dtype=float)


# ---------------------------------------------------------------------------
# Cell grid


@dataclass(frozen=True)
class GridView:
    """A shifted partition of the padded image into w_prime-wide square cells.

    Pixel (r, c) lives at (r + v[0], c + v[1]) of the padded image, and cell
    (i, j) covers padded rows [i*w_prime, (i+1)*w_prime).  The cell count per
    axis is fixed at ceil(n / w_prime) + 1 for every shift so cell indices
    mean the same thing across plans that share (n, w_prime).
    """

    n: int
    w_prime: int
    v: tuple[int, int]
    S: frozenset[int] = frozenset()
    S_prime: frozenset[int] = frozenset()

    def __post_init__(self):
        if not (0 <= self.v[0] < self.w_prime and 0 <= self.v[1] < self.w_prime):
            raise ConfigError(f"shift {self.v} outside [0, {self.w_prime})^2")

    @property
    def cells_per_axis(self) -> int:
        return -(-self.n // self.w_prime) + 1

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**2

    def cell_of_pixel(self, r: int, c: int) -> int:
        g = self.cells_per_axis
        return ((r + self.v[0]) // self.w_prime) * g + (c + self.v[1]) // self.w_prime

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Zero-padded copy with the shift applied; side = cells_per_axis * w_prime."""
        side = self.cells_per_axis * self.w_prime
        out = np.zeros((side, side), dtype=float)
        out[self.v[0] : self.v[0] + self.n, self.v[1] : self.v[1] + self.n] = image
        return out

    def cell_stack(self, image: np.ndarray) -> np.ndarray:
        """All cells as a (n_cells, w_prime, w_prime) stack in row-major order."""
        g, wp = self.cells_per_axis, self.w_prime
        padded = self.embed(image)
        return (
            padded.reshape(g, wp, g, wp).transpose(0, 2, 1, 3).reshape(g * g, wp, wp)
        )

    def cell_pixels(self, image: np.ndarray, cell: int) -> np.ndarray:
        g, wp = self.cells_per_axis, self.w_prime
        i, j = divmod(cell, g)
        return self.embed(image)[i * wp : (i + 1) * wp, j * wp : (j + 1) * wp]


def _classify(
    v: tuple[int, int], w_prime: int, g: int, placement: Placement, w: int
) -> tuple[frozenset[int], frozenset[int]]:
    contained, intersecting = set(), set()
    for r, c in placement.positions:
        r0, c0 = (r + v[0]) // w_prime, (c + v[1]) // w_prime
        r1, c1 = (r + v[0] + w - 1) // w_prime, (c + v[1] + w - 1) // w_prime
        for i in range(r0, r1 + 1):
            for j in range(c0, c1 + 1):
                intersecting.add(i * g + j)
        if r0 == r1 and c0 == c1:
            contained.add(r0 * g + c0)
    return frozenset(contained), frozenset(intersecting)


def impose_grid(
    rng: np.random.Generator,
    config: ModelConfig,
    placement: Placement,
    shift: Optional[tuple[int, int]] = None,
) -> GridView:
    """Grid with a uniform random shift v in [0, w_prime)^2 (or a forced one).

    S holds cells fully containing an object's w x w box; S_prime holds every
    cell the box intersects.
    """
    if shift is None:
        v = (int(rng.integers(0, config.w_prime)), int(rng.integers(0, config.w_prime)))
    else:
        v = (int(shift[0]), int(shift[1]))
    g = -(-config.n // config.w_prime) + 1
    S, S_prime = _classify(v, config.w_prime, g, placement, config.w)
    return GridView(n=config.n, w_prime=config.w_prime, v=v, S=S, S_prime=S_prime)


def noise_budget(mu: np.ndarray, grid: GridView, norm: FeatureNorm) -> float:
    """Total feature-norm of the noise: sum over cells of |cell mass| / mass_scale."""
    cell_masses = grid.cell_stack(mu).sum(axis=(1, 2))
    return float(np.abs(cell_masses).sum() / norm.mass_scale)
