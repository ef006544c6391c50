"""Run configuration: one INI file feeding every pipeline stage.

A RunConfig groups the analysis constants, the synthetic image model, the
sketching-code parameters, the fold moduli, and the experiment grid.  Loading
validates everything the constructors can check and recomputes the derived
constants beta and delta so each artifact can echo the numbers it ran under.
Flag overrides are applied as ``section.key`` strings and win over the file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Union

from . import ConfigError
from .aduaf import AduafConfig
from .image_model import ModelConfig
from .measurement import TheoryConstants, feasibility_report
from .startracker import ExperimentConfig, PatchConfig

ENV_CONFIG = "SKYFOLD_CONFIG"

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {
        "n": "256",
        "w": "2",
        "w_prime": "8",
        "k": "32",
        "alpha": "0.0005",
        "gamma": "0.0005",
        "eta": "0.0005",
        "c_log": "1.0",
    },
    "code": {
        "kind": "crt",
        # s/q/r empty means: derive from the constants at plan time
        "s": "6",
        "q": "512",
        "r": "2",
    },
    "fold": {
        "n": "800",
        "p1": "26",
        "p2": "31",
        "cell_w": "3",
        "cells_per_fold": "10",
        "max_pairs": "8",
        "overlap_limit": "4",
        "mass_tol": "0.25",
        "centroid_tol": "0.5",
        "bg_subtract": "true",
    },
    "experiment": {
        "catalog_count": "259000",
        "exponent": "-1.17",
        "psf_sigma": "0.5",
        "photon_scale": "200.0",
        "poisson": "true",
        "fov": "0.08",
        "subset_radius": "0.08",
        "subset_top": "14",
        "sigmas": "0 50 100 150",
        "prime_pairs": "26x31 29x31",
        "trials": "100",
        "tol_px": "1.5",
        "max_centroids": "8",
    },
    "run": {
        "seed": "",
        "outdir": "out",
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for one CLI invocation."""

    constants: TheoryConstants
    model: ModelConfig
    code_kind: str
    code_s: Optional[int]
    code_q: Optional[int]
    code_r: Optional[int]
    fold: AduafConfig
    experiment: ExperimentConfig
    seed: Optional[int]
    outdir: Path

    def constants_echo(self) -> dict[str, object]:
        """The resolved constants block written into CSV headers."""
        echo: dict[str, object] = {
            "alpha": self.constants.alpha,
            "gamma": self.constants.gamma,
            "eta": self.constants.eta,
            "beta": self.constants.beta,
            "delta": self.constants.delta,
            "distance_fraction": self.constants.distance_fraction,
            "code_kind": self.code_kind,
        }
        if self.code_s is not None:
            echo["code_s"] = self.code_s
            echo["code_q"] = self.code_q
            echo["code_r"] = self.code_r
        if self.seed is not None:
            echo["seed"] = self.seed
        return echo

    def feasibility_errors(self) -> list[str]:
        if self.code_s is None:
            return []
        n_cells = (self.model.n // self.model.w_prime + 1) ** 2
        return feasibility_report(
            self.constants,
            n_cells,
            self.model.k,
            self.code_s,
            self.code_q,
            self.code_r,
        )


def _get(parser: configparser.ConfigParser, section: str, key: str) -> str:
    try:
        return parser.get(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError):
        raise ConfigError(f"missing config key [{section}] {key}") from None


def _int(parser, section, key) -> int:
    raw = _get(parser, section, key)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from None


def _float(parser, section, key) -> float:
    raw = _get(parser, section, key)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from None


def _bool(parser, section, key) -> bool:
    raw = _get(parser, section, key).strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key} = {raw!r} is not a boolean")


def _opt_int(parser, section, key) -> Optional[int]:
    raw = _get(parser, section, key).strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from None


def _parse_pairs(raw: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for token in raw.split():
        left, sep, right = token.partition("x")
        if not sep:
            raise ConfigError(f"prime pair {token!r} is not of the form AxB")
        try:
            pairs.append((int(left), int(right)))
        except ValueError:
            raise ConfigError(f"prime pair {token!r} is not of the form AxB") from None
    if not pairs:
        raise ConfigError("prime_pairs is empty")
    return tuple(pairs)


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Build a RunConfig from defaults, an optional INI file, and overrides.

    The file defaults to $SKYFOLD_CONFIG when set.  Overrides are
    ``{"section.key": "value"}`` and take precedence over the file.
    """
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from None
    for dotted, value in (overrides or {}).items():
        section, sep, key = dotted.partition(".")
        if not sep:
            raise ConfigError(f"override {dotted!r} is not of the form section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))

    constants = TheoryConstants(
        alpha=_float(parser, "model", "alpha"),
        gamma=_float(parser, "model", "gamma"),
        eta=_float(parser, "model", "eta"),
        c_log=_float(parser, "model", "c_log"),
    )
    model = ModelConfig(
        n=_int(parser, "model", "n"),
        w=_int(parser, "model", "w"),
        w_prime=_int(parser, "model", "w_prime"),
        k=_int(parser, "model", "k"),
        gamma=constants.gamma,
    )
    kind = _get(parser, "code", "kind").strip().lower()
    if kind not in ("rs", "crt"):
        raise ConfigError(f"[code] kind = {kind!r}, expected 'rs' or 'crt'")
    code_s = _opt_int(parser, "code", "s")
    code_q = _opt_int(parser, "code", "q")
    code_r = _opt_int(parser, "code", "r")
    given = [v is not None for v in (code_s, code_q, code_r)]
    if any(given) and not all(given):
        raise ConfigError("give all of [code] s, q, r or leave all empty")

    fold = AduafConfig(
        n=_int(parser, "fold", "n"),
        p1=_int(parser, "fold", "p1"),
        p2=_int(parser, "fold", "p2"),
        cell_w=_int(parser, "fold", "cell_w"),
        cells_per_fold=_int(parser, "fold", "cells_per_fold"),
        max_pairs=_int(parser, "fold", "max_pairs"),
        overlap_limit=_int(parser, "fold", "overlap_limit"),
        mass_tol=_float(parser, "fold", "mass_tol"),
        centroid_tol=_float(parser, "fold", "centroid_tol"),
        bg_subtract=_bool(parser, "fold", "bg_subtract"),
    )
    sigmas = tuple(float(tok) for tok in _get(parser, "experiment", "sigmas").split())
    if not sigmas:
        raise ConfigError("[experiment] sigmas is empty")
    patch = PatchConfig(
        n=fold.n,
        fov=_float(parser, "experiment", "fov"),
        psf_sigma=_float(parser, "experiment", "psf_sigma"),
        photon_scale=_float(parser, "experiment", "photon_scale"),
        poisson=_bool(parser, "experiment", "poisson"),
    )
    experiment = ExperimentConfig(
        catalog_count=_int(parser, "experiment", "catalog_count"),
        exponent=_float(parser, "experiment", "exponent"),
        patch=patch,
        subset_radius=_float(parser, "experiment", "subset_radius"),
        subset_top=_int(parser, "experiment", "subset_top"),
        sigmas=sigmas,
        prime_pairs=_parse_pairs(_get(parser, "experiment", "prime_pairs")),
        trials=_int(parser, "experiment", "trials"),
        tol_px=_float(parser, "experiment", "tol_px"),
        max_centroids=_int(parser, "experiment", "max_centroids"),
        cells_per_fold=fold.cells_per_fold,
        max_pairs=fold.max_pairs,
        mass_tol=fold.mass_tol,
        centroid_tol=fold.centroid_tol,
    )
    for p1, p2 in experiment.prime_pairs:
        # constructing one per pair runs the coprimality / coverage guards
        replace(fold, p1=p1, p2=p2)

    seed = _opt_int(parser, "run", "seed")
    outdir = Path(_get(parser, "run", "outdir"))
    return RunConfig(
        constants=constants,
        model=model,
        code_kind=kind,
        code_s=code_s,
        code_q=code_q,
        code_r=code_r,
        fold=fold,
        experiment=experiment,
        seed=seed,
        outdir=outdir,
    )
