"""Sketching plans: constants, parameter derivation, buckets, folds."""

import numpy as np
import pytest
import sympy

from skyfold import ConfigError
from skyfold.image_model import GridView, ModelConfig
from skyfold.measurement import (
    FoldPlan,
    MeasurementPlan,
    Sketch,
    TheoryConstants,
    build_plan,
    derive_code_params,
    explicit_matrix,
    feasibility_report,
    fold2d,
    measure,
    measurement_count,
)

SMALL = ModelConfig(n=16, w=2, w_prime=8, k=4)


def small_plan(seed=0, **kwargs):
    kwargs.setdefault("kind", "crt")
    kwargs.setdefault("s", 4)
    kwargs.setdefault("q", 32)
    kwargs.setdefault("r", 2)
    return build_plan(np.random.default_rng(seed), SMALL, **kwargs)


# ---------------------------------------------------------------------------
# Constants and sufficient conditions


def test_constants_derived_values():
    c = TheoryConstants()
    assert c.beta == pytest.approx(0.028128)
    assert c.delta == pytest.approx(0.037128)
    assert c.distance_fraction == pytest.approx(0.558048)


def test_constants_validation():
    with pytest.raises(ConfigError):
        TheoryConstants(alpha=0.0)
    with pytest.raises(ConfigError):
        TheoryConstants(eta=1.0)


def test_feasibility_report_clean():
    c = TheoryConstants()
    assert feasibility_report(c, 1089, 32, s=3, q=64000, r=1) == []


def test_feasibility_report_names_each_violation():
    c = TheoryConstants()
    report = feasibility_report(c, 1089, 8, s=3, q=1000, r=2)
    text = "\n".join(report)
    assert "k >= C*log2(N)" in text
    assert "q >= k/eta" in text
    assert "code distance" in text  # s - r = 1 < 0.558 * 3
    assert "q^r > 2N" not in text  # 1000^2 clears 2178
    assert "q^r > 2N" in "\n".join(feasibility_report(c, 1089, 32, s=3, q=40, r=1))


def test_derive_code_params_frozen():
    # q = ceil(k/eta) = 64000; s = 3 is the first row count leaving r = 1
    # with 64000^1 > 2*1089.
    assert derive_code_params(TheoryConstants(), 1089, 32) == (3, 64000, 1)


def test_derive_code_params_rs_rounds_q_to_prime():
    s, q, r = derive_code_params(TheoryConstants(), 1089, 32, kind="rs")
    assert (s, r) == (3, 1)
    assert q >= 64000 and sympy.isprime(q)


def test_derive_code_params_infeasible_constants():
    with pytest.raises(ConfigError, match="4.4340"):
        derive_code_params(TheoryConstants(gamma=0.01), 1089, 32)


# ---------------------------------------------------------------------------
# Plans


def test_build_plan_explicit_attaches_notes():
    plan = small_plan()
    assert plan.s == 4 and plan.w_prime == 8
    assert plan.grid.n_cells == 9
    assert plan.assignments.shape == (4, 9)
    # tiny k and q violate several sufficient conditions but stay usable
    assert plan.feasibility_notes
    assert any("q >= k/eta" in note for note in plan.feasibility_notes)


def test_build_plan_derived_is_clean_or_aborts():
    cfg = ModelConfig(n=256, w=2, w_prime=8, k=32)
    plan = build_plan(np.random.default_rng(3), cfg)
    assert plan.feasibility_notes == ()
    assert (plan.s, plan.code.r) == (3, 1)
    assert min(plan.code.inner.moduli) >= 64000  # derived q = ceil(k/eta)
    with pytest.raises(ConfigError, match="infeasible"):
        build_plan(
            np.random.default_rng(3), cfg, constants=TheoryConstants(gamma=0.01)
        )


def test_build_plan_partial_params_rejected():
    with pytest.raises(ConfigError, match="all of s, q, r"):
        build_plan(np.random.default_rng(0), SMALL, s=4, q=32)


def test_build_plan_shift_override():
    plan = small_plan(shift=(3, 5))
    assert plan.grid.v == (3, 5)


def test_plan_guards():
    plan = small_plan()
    with pytest.raises(ConfigError, match="code domain"):
        MeasurementPlan(
            code=plan.code,
            grid=GridView(n=24, w_prime=8, v=(0, 0)),
            assignments=plan.assignments,
        )
    with pytest.raises(ConfigError, match="shape"):
        MeasurementPlan(
            code=plan.code, grid=plan.grid, assignments=plan.assignments.T
        )


# ---------------------------------------------------------------------------
# Measuring


def test_measure_shapes_and_concat_order():
    plan = small_plan()
    rng = np.random.default_rng(11)
    image = rng.uniform(0, 1, size=(16, 16))
    sketch = measure(plan, image)
    assert sketch.s == 4
    assert sketch.bucket_counts == tuple(plan.code.alphabet_sizes)
    flat = sketch.concat()
    assert flat.shape == (measurement_count(plan),)
    # concat is (row, bucket, pixel-offset) order
    i = 2
    base = sum(size * 64 for size in plan.code.alphabet_sizes[:2])
    assert np.array_equal(
        flat[base : base + sketch.rows[i].size], sketch.rows[i].reshape(-1)
    )


def test_measure_conserves_mass_per_row():
    plan = small_plan(seed=5)
    image = np.random.default_rng(6).uniform(0, 2, size=(16, 16))
    sketch = measure(plan, image)
    for row in sketch.rows:
        assert row.sum() == pytest.approx(image.sum())


def test_measure_rejects_wrong_shape():
    with pytest.raises(ValueError):
        measure(small_plan(), np.zeros((8, 8)))


def test_measure_matches_explicit_matrix():
    for seed in (0, 1, 2):
        plan = small_plan(seed=seed)
        A = explicit_matrix(plan)
        assert A.shape == (measurement_count(plan), 256)
        # each pixel contributes once per code row
        assert np.array_equal(A.sum(axis=0), np.full(256, plan.s))
        rng = np.random.default_rng(100 + seed)
        for _ in range(5):
            image = rng.uniform(-1, 1, size=(16, 16))
            assert np.array_equal(
                measure(plan, image).concat(), A @ image.reshape(-1)
            )


def test_measure_deterministic_for_seed():
    image = np.random.default_rng(9).uniform(0, 1, size=(16, 16))
    a = measure(small_plan(seed=4), image).concat()
    b = measure(small_plan(seed=4), image).concat()
    assert np.array_equal(a, b)


def test_explicit_matrix_size_guard():
    cfg = ModelConfig(n=1024, w=2, w_prime=8, k=32)
    plan = build_plan(np.random.default_rng(0), cfg, kind="crt", s=3, q=512, r=2)
    assert plan.grid.n_cells == 129 * 129
    with pytest.raises(ConfigError, match="4096"):
        explicit_matrix(plan)


# ---------------------------------------------------------------------------
# Folds


def test_fold_plan_validation():
    FoldPlan(n=800, p1=26, p2=31)
    with pytest.raises(ConfigError, match="coprime"):
        FoldPlan(n=20, p1=4, p2=6)
    with pytest.raises(ConfigError, match="below n"):
        FoldPlan(n=900, p1=26, p2=31)


def test_fold2d_impulse_and_mass():
    image = np.zeros((5, 5))
    image[3, 4] = 2.5
    out = fold2d(image, 3)
    assert out.shape == (3, 3)
    assert out[0, 1] == 2.5 and out.sum() == 2.5
    rng = np.random.default_rng(2)
    image = rng.uniform(0, 1, size=(7, 11))
    assert fold2d(image, 4).sum() == pytest.approx(image.sum())


def test_fold2d_known_grid():
    image = np.arange(16, dtype=float).reshape(4, 4)
    out = fold2d(image, 2)
    # rows {0,2} x cols {0,2} -> 0 + 2 + 8 + 10
    assert out[0, 0] == 20.0
    assert out[1, 1] == pytest.approx(5 + 7 + 13 + 15)


def test_fold2d_linearity():
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 1, size=(9, 9))
    b = rng.uniform(0, 1, size=(9, 9))
    assert np.allclose(fold2d(a + 2 * b, 5), fold2d(a, 5) + 2 * fold2d(b, 5))


def test_measurement_count_fold_plan():
    assert measurement_count(FoldPlan(n=800, p1=26, p2=31)) == 26**2 + 31**2


def test_sketch_concat_roundtrip():
    rows = (np.arange(8.0).reshape(2, 2, 2), np.arange(8.0, 20.0).reshape(3, 2, 2))
    sketch = Sketch(rows=rows, w_prime=2)
    assert sketch.bucket_counts == (2, 3)
    assert np.array_equal(sketch.concat(), np.arange(20.0))
