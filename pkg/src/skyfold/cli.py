"""Command-line front end: deterministic runs, CSV artifacts, PNG figures.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.  Every
command echoes the resolved constants (including the derived beta and delta)
to stdout and into the CSV headers.  Given the same ``--seed`` a rerun writes
byte-identical CSV files; wall-clock timings therefore go to stdout only.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import ConfigError
from .aduaf import AduafConfig, aduaf_recover
from .codes import crt_decode, crt_encode, CrtCodeSpec, rs_decode, rs_encode, RsCodeSpec
from .config import RunConfig, load_config
from .image_model import (
    NoiseSpec,
    add_noise,
    default_norm,
    mass_ladder_templates,
    place_objects,
    render,
    threshold_from_templates,
)
from .io import (
    RECOVERY_FIELDS,
    STAR_FIELDS,
    load_image,
    recovery_rows,
    save_image,
    save_matrix_csv,
    star_rows,
    write_csv,
)
from .measurement import build_plan, explicit_matrix, fold2d, measure
from .plots import plot_recovered_cells, plot_success_vs_noise
from .recovery import diagnose, recover
from .startracker import generate_catalog, run_experiment, save_catalog

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skyfold",
        description="Sketching, recovery, and star-field folding pipeline.",
    )
    parser.add_argument("--config", help="INI config path (default: $SKYFOLD_CONFIG)")
    parser.add_argument(
        "--set",
        metavar="SECTION.KEY=VALUE",
        action="append",
        default=[],
        help="override a config value; repeatable, wins over the file",
    )
    # SUPPRESS defaults let the same flags appear after the subcommand without
    # clobbering values parsed before it
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    common.add_argument(
        "--set",
        metavar="SECTION.KEY=VALUE",
        action="append",
        default=argparse.SUPPRESS,
        help="override a config value; repeatable, wins over the file",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-catalog", parents=[common], help="write a synthetic star catalog CSV"
    )
    p.add_argument("--count", type=int, help="number of stars")
    p.add_argument("--exponent", type=float, help="rank power-law exponent")
    p.add_argument("--seed", type=int, help="RNG seed (required here or in config)")
    p.add_argument("--out", help="output CSV path (default OUTDIR/catalog.csv)")

    p = sub.add_parser(
        "theory-trial", parents=[common], help="synthetic scenes through measure/recover/diagnose"
    )
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, help="RNG seed (required here or in config)")
    p.add_argument("--kind", choices=("rs", "crt"), help="sketching code family")
    p.add_argument(
        "--derive-code",
        action="store_true",
        help="ignore configured s,q,r and derive them from the constants",
    )
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument(
        "--explicit-matrix",
        action="store_true",
        help="also dump the binary measurement matrix (tiny grids only)",
    )
    p.add_argument("--outdir", help="output directory (default from config)")

    p = sub.add_parser("aduaf-experiment", parents=[common], help="catalog/fold/identify noise sweep")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="RNG seed (required here or in config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--outdir", help="output directory (default from config)")

    p = sub.add_parser("fold", parents=[common], help="fold an image binary modulo p")
    p.add_argument("--image", required=True, help="input image binary")
    p.add_argument("--p", type=int, required=True, help="fold modulus")
    p.add_argument("--out", required=True, help="output folded-image binary")

    p = sub.add_parser("recover", parents=[common], help="recover stars from two folded images")
    p.add_argument("--fold1", required=True, help="first folded-image binary")
    p.add_argument("--fold2", required=True, help="second folded-image binary")
    p.add_argument("--n", type=int, help="unfolded image side (default from config)")
    p.add_argument("--out", required=True, help="output stars CSV")
    p.add_argument(
        "--ground-truth",
        help="true-star CSV (x,y,mass); enables the per-star error diagnostics CSV",
    )

    sub.add_parser("selftest", parents=[common], help="run the built-in smoke battery")
    return parser


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r} is not of the form SECTION.KEY=VALUE")
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "trials", None) is not None and args.command == "aduaf-experiment":
        overrides["experiment.trials"] = str(args.trials)
    if getattr(args, "kind", None):
        overrides["code.kind"] = args.kind
    return load_config(args.config, overrides)


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("a seed is required: pass --seed or set [run] seed")
    return cfg.seed


def _echo(cfg: RunConfig) -> dict[str, object]:
    echo = cfg.constants_echo()
    for key, value in echo.items():
        print(f"{key} = {value}")
    return echo


def _outdir(cfg: RunConfig, flag: Optional[str]) -> Path:
    out = Path(flag) if flag else cfg.outdir
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_catalog(args) -> int:
    cfg = _resolve_config(args)
    seed = _require_seed(cfg)
    count = args.count if args.count is not None else cfg.experiment.catalog_count
    exponent = args.exponent if args.exponent is not None else cfg.experiment.exponent
    if count < 0:
        raise ConfigError(f"negative star count {count}")
    out = Path(args.out) if args.out else _outdir(cfg, None) / "catalog.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    catalog = generate_catalog(np.random.default_rng(seed), count, exponent)
    save_catalog(out, catalog)
    print(f"wrote {len(catalog)} stars to {out}")
    return EXIT_OK


def cmd_theory_trial(args) -> int:
    cfg = _resolve_config(args)
    seed = _require_seed(cfg)
    echo = _echo(cfg)
    outdir = _outdir(cfg, args.outdir)
    model = cfg.model
    k = model.k
    if args.derive_code:
        s = q = r = None
    else:
        s, q, r = cfg.code_s, cfg.code_q, cfg.code_r
    templates = mass_ladder_templates(k, model.w)
    norm = default_norm(templates, model.w)
    threshold = threshold_from_templates(templates, norm)
    noise = NoiseSpec(gaussian_sigma=args.noise_sigma, poisson=False)

    trial_rows = []
    detail_rows = []
    correct_counts = []
    warned: set[str] = set()
    for trial in range(args.trials):
        rng = np.random.default_rng([seed, trial])
        placement = place_objects(rng, model)
        clean = render(placement, templates, model.n)
        noisy, _ = add_noise(rng, clean, noise)
        plan = build_plan(
            rng, model, kind=cfg.code_kind, s=s, q=q, r=r, constants=cfg.constants
        )
        for note in plan.feasibility_notes:
            if note not in warned:
                print(f"note: {note}")
                warned.add(note)
        sketch = measure(plan, noisy)
        result = recover(sketch, plan, k, threshold, norm)
        diag = diagnose(
            sketch, plan, clean, placement, model, threshold, norm, k, result
        )
        correct_counts.append(len(diag.correct_cells))
        trial_rows.append(
            {
                "trial": trial,
                "correct_cells": len(diag.correct_cells),
                "valid_decodes": result.n_valid,
                "preserved_cells": diag.p_count,
                "heavy_buckets": diag.r_count,
                "spurious_heavy": diag.r_minus_p,
            }
        )
        for row in recovery_rows(result):
            detail_rows.append({"trial": trial, **row})
        if args.explicit_matrix and trial == 0:
            n_cells = plan.grid.n_cells
            if n_cells > 4096:
                raise ConfigError(
                    f"--explicit-matrix is limited to 4096 cells, grid has {n_cells}"
                )
            save_matrix_csv(outdir / "matrix.csv", explicit_matrix(plan))
            print(f"wrote {outdir / 'matrix.csv'}")

    write_csv(
        outdir / "trials.csv",
        (
            "trial",
            "correct_cells",
            "valid_decodes",
            "preserved_cells",
            "heavy_buckets",
            "spurious_heavy",
        ),
        trial_rows,
        constants=echo,
    )
    write_csv(
        outdir / "recovery.csv",
        ("trial", *RECOVERY_FIELDS),
        detail_rows,
        constants=echo,
    )
    plot_recovered_cells(correct_counts, k, outdir / "trials.png")
    ok = sum(1 for c in correct_counts if c >= k / 2)
    print(
        f"{args.trials} trials: {ok} recovered >= k/2 = {k // 2} cells; "
        f"wrote {outdir / 'trials.csv'}, {outdir / 'recovery.csv'}, "
        f"{outdir / 'trials.png'}"
    )
    return EXIT_OK


def cmd_aduaf_experiment(args) -> int:
    cfg = _resolve_config(args)
    seed = _require_seed(cfg)
    echo = _echo(cfg)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be positive, got {args.jobs}")
    outdir = _outdir(cfg, args.outdir)
    t0 = time.time()
    result = run_experiment(seed=seed, config=cfg.experiment, jobs=args.jobs)
    elapsed = time.time() - t0
    echo = dict(echo)
    echo["subset_size"] = result.subset_size
    echo["catalog_size"] = result.catalog_size
    fields = ("sigma", "p1", "p2", "trials", "successes", "success_rate")
    write_csv(outdir / "results.csv", fields, result.rows, constants=echo)
    plot_success_vs_noise(result.rows, outdir / "success_vs_noise.png")
    for row in result.rows:
        print(
            f"sigma={row['sigma']:g} folds=({row['p1']},{row['p2']}) "
            f"success={row['successes']}/{row['trials']} = {row['success_rate']:.3f} "
            f"(recover {row['mean_recover_s'] * 1e3:.1f} ms, "
            f"identify {row['mean_identify_s'] * 1e3:.1f} ms per trial)"
        )
    print(
        f"subset {result.subset_size} of {result.catalog_size}; {elapsed:.1f} s; "
        f"wrote {outdir / 'results.csv'} and {outdir / 'success_vs_noise.png'}"
    )
    return EXIT_OK


def cmd_fold(args) -> int:
    cfg = _resolve_config(args)
    image = load_image(args.image)
    if args.p < 2:
        raise ConfigError(f"fold modulus must be >= 2, got {args.p}")
    if args.p > image.shape[0]:
        raise ConfigError(
            f"fold modulus {args.p} exceeds image side {image.shape[0]}"
        )
    save_image(args.out, fold2d(image, args.p))
    print(f"folded {args.image} (n={image.shape[0]}) mod {args.p} -> {args.out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg = _resolve_config(args)
    f1 = load_image(args.fold1)
    f2 = load_image(args.fold2)
    n = args.n if args.n is not None else cfg.fold.n
    acfg = replace(cfg.fold, n=n, p1=f1.shape[0], p2=f2.shape[0])
    stars = aduaf_recover(f1, f2, acfg)
    echo = {
        "n": acfg.n,
        "p1": acfg.p1,
        "p2": acfg.p2,
        "mass_tol": acfg.mass_tol,
        "centroid_tol": acfg.centroid_tol,
    }
    write_csv(args.out, STAR_FIELDS, star_rows(stars), constants=echo)
    print(f"recovered {len(stars)} stars -> {args.out}")
    if args.ground_truth:
        truth = _load_truth(args.ground_truth)
        diag_rows = []
        got = np.array([[s.x, s.y] for s in stars]) if stars else np.zeros((0, 2))
        for tx, ty, tm in truth:
            if got.shape[0]:
                errs = np.abs(got - [tx, ty]).max(axis=1)
                j = int(np.argmin(errs))
                err = float(errs[j])
                gx, gy = float(got[j, 0]), float(got[j, 1])
            else:
                err, gx, gy = float("inf"), float("nan"), float("nan")
            diag_rows.append(
                {
                    "true_x": tx,
                    "true_y": ty,
                    "true_mass": tm,
                    "nearest_x": gx,
                    "nearest_y": gy,
                    "err_px": err,
                }
            )
        diag_path = Path(args.out).with_name(Path(args.out).stem + "_diagnostics.csv")
        write_csv(
            diag_path,
            ("true_x", "true_y", "true_mass", "nearest_x", "nearest_y", "err_px"),
            diag_rows,
            constants=echo,
        )
        worst = max((r["err_px"] for r in diag_rows), default=0.0)
        print(f"ground truth: {len(diag_rows)} stars, worst error {worst:.3f} px "
              f"-> {diag_path}")
    return EXIT_OK


def _load_truth(path) -> list[tuple[float, float, float]]:
    from .io import read_csv

    _, rows = read_csv(path)
    out = []
    for i, row in enumerate(rows, start=1):
        try:
            out.append((float(row["x"]), float(row["y"]), float(row.get("mass", 0.0))))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: row {i}: {exc}") from None
    if not out:
        raise ConfigError(f"{path}: no ground-truth rows")
    return out


def cmd_selftest(args) -> int:
    failures = 0

    def check(name: str, fn) -> None:
        nonlocal failures
        try:
            fn()
            print(f"ok   {name}")
        except Exception as exc:  # noqa: BLE001 - report and count every failure
            failures += 1
            print(f"FAIL {name}: {exc}")

    def hash_exact():
        from .codes import affine_eval

        p = 13
        for x1, x2, y1, y2 in ((0, 1, 0, 0), (2, 11, 5, 7), (3, 4, 12, 1)):
            hits = sum(
                1
                for a in range(p)
                for b in range(p)
                if affine_eval(a, b, p, x1) == y1 and affine_eval(a, b, p, x2) == y2
            )
            assert hits == 1, f"probe ({x1},{x2},{y1},{y2}) hit {hits} != 1"

    def rs_roundtrip():
        spec = RsCodeSpec(q=11, r=3, s=8)
        rng = np.random.default_rng(12)
        for _ in range(50):
            x = int(rng.integers(0, 11**3))
            word = rs_encode(spec, x)
            for pos in rng.choice(8, size=2, replace=False):
                word[pos] = (word[pos] + 1 + int(rng.integers(0, 10))) % 11
            assert rs_decode(spec, word) == x

    def crt_roundtrip():
        spec = CrtCodeSpec(moduli=(11, 13, 17, 19, 23, 25), r=2, P=11 * 13)
        rng = np.random.default_rng(13)
        for _ in range(50):
            x = int(rng.integers(0, 11 * 13))
            word = crt_encode(spec, x)
            pos = int(rng.integers(0, 6))
            word[pos] = (word[pos] + 1) % spec.moduli[pos]
            assert crt_decode(spec, word) == x

    def measurement_linear():
        from .image_model import ModelConfig

        rng = np.random.default_rng(14)
        model = ModelConfig(n=32, w=2, w_prime=8, k=4, gamma=0.0005)
        plan = build_plan(rng, model, kind="crt", s=4, q=64, r=2)
        a = explicit_matrix(plan)
        x = rng.uniform(0, 1, size=(32, 32))
        assert np.array_equal(measure(plan, x).concat(), a @ x.reshape(-1))

    def aduaf_roundtrip():
        from .startracker import render_stars

        acfg = AduafConfig(n=800, p1=26, p2=31)
        rng = np.random.default_rng(15)
        for _ in range(3):
            xs = _selftest_axis(rng, acfg)
            ys = _selftest_axis(rng, acfg)
            pos = np.column_stack([xs, ys])
            masses = np.array([500.0, 540.0, 580.0, 620.0, 660.0])
            image = render_stars(800, pos, masses, 0.5)
            stars = aduaf_recover(fold2d(image, 26), fold2d(image, 31), acfg)
            assert len(stars) == 5, f"recovered {len(stars)} != 5"
            got = np.array([[s.x, s.y] for s in stars])
            for px, py in pos:
                err = np.abs(got - [px, py]).max(axis=1).min()
                assert err <= 0.5, f"error {err:.3f} px"

    def io_roundtrip():
        from .io import load_sketch, save_sketch
        import tempfile

        rng = np.random.default_rng(16)
        with tempfile.TemporaryDirectory() as tmp:
            img = rng.uniform(0, 1, size=(17, 17))
            save_image(Path(tmp) / "img.bin", img)
            assert np.array_equal(load_image(Path(tmp) / "img.bin"), img)
            from .image_model import ModelConfig

            model = ModelConfig(n=32, w=2, w_prime=8, k=4, gamma=0.0005)
            plan = build_plan(rng, model, kind="crt", s=4, q=64, r=2)
            sk = measure(plan, rng.uniform(0, 1, size=(32, 32)))
            save_sketch(Path(tmp) / "sk.bin", sk)
            back = load_sketch(Path(tmp) / "sk.bin")
            assert back.bucket_counts == sk.bucket_counts
            assert np.array_equal(back.concat(), sk.concat())

    check("affine hash family is exactly pairwise independent (P=13)", hash_exact)
    check("Reed-Solomon decodes 2 errors (q=11, r=3, s=8)", rs_roundtrip)
    check("CRT code decodes 1 error (moduli 11..25, r=2)", crt_roundtrip)
    check("measure() matches the explicit matrix (n=32)", measurement_linear)
    check("two-fold round trip recovers 5 planted stars (26, 31)", aduaf_roundtrip)
    check("image and sketch binaries round-trip", io_roundtrip)
    if failures:
        print(f"{failures} selftest check(s) failed")
        return EXIT_RUNTIME
    print("all selftest checks passed")
    return EXIT_OK


def _selftest_axis(rng: np.random.Generator, acfg: AduafConfig) -> list[float]:
    # residues >= 3 apart in both folds keep the planted blobs from stacking
    vals: list[float] = []
    while len(vals) < 5:
        v = float(rng.uniform(4, acfg.n - 5))
        ok = True
        for u in vals:
            for p in (acfg.p1, acfg.p2):
                d = abs(int(v) % p - int(u) % p)
                if min(d, p - d) < 3:
                    ok = False
        if ok:
            vals.append(v)
    return vals


_COMMANDS = {
    "gen-catalog": cmd_gen_catalog,
    "theory-trial": cmd_theory_trial,
    "aduaf-experiment": cmd_aduaf_experiment,
    "fold": cmd_fold,
    "recover": cmd_recover,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
