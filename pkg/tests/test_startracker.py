"""Catalog, patch simulation, pair database, and identification."""

import math

import numpy as np
import pytest
from scipy.special import ndtr

from skyfold import ConfigError
from skyfold.startracker import (
    DEC_CUT,
    ExperimentConfig,
    IdentificationResult,
    PatchConfig,
    SkyPatch,
    StarCatalog,
    _trial_success,
    build_pair_db,
    build_subset,
    generate_catalog,
    identify,
    load_catalog,
    render_stars,
    run_experiment,
    save_catalog,
    simulate_patch,
)


def test_dec_cut_band():
    assert DEC_CUT == pytest.approx(math.pi / 2 - math.pi / 8)


def test_generate_catalog_power_law():
    cat = generate_catalog(np.random.default_rng(0), 99, exponent=-1.17)
    assert len(cat) == 99
    assert (np.diff(cat.mass) <= 0).all()  # brightest first
    assert cat.mass[49] == pytest.approx(1.0)  # median rank has mass 1
    ranks = np.arange(1, 100, dtype=float)
    assert np.allclose(cat.mass, (ranks / 50.0) ** -1.17)
    assert (np.abs(cat.ra) <= math.pi).all()
    assert (np.abs(cat.dec) <= DEC_CUT).all()


def test_generate_catalog_edges():
    assert len(generate_catalog(np.random.default_rng(0), 0)) == 0
    with pytest.raises(ConfigError):
        generate_catalog(np.random.default_rng(0), -1)
    with pytest.raises(ConfigError):
        StarCatalog(ra=np.zeros(2), dec=np.zeros(3), mass=np.zeros(2))


def test_catalog_save_load_roundtrip(tmp_path):
    cat = generate_catalog(np.random.default_rng(1), 25)
    path = tmp_path / "cat.csv"
    save_catalog(path, cat)
    back = load_catalog(path)
    assert np.array_equal(back.ra, cat.ra)
    assert np.array_equal(back.dec, cat.dec)
    assert np.array_equal(back.mass, cat.mass)


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("0.1,0.2", "3 columns"),
        ("0.1,0.2,zap", "line 2"),
        ("4.0,0.2,1.0", "ra"),
        ("0.1,2.0,1.0", "dec"),
        ("0.1,0.2,0.0", "not positive"),
    ],
)
def test_load_catalog_validation(tmp_path, line, fragment):
    path = tmp_path / "bad.csv"
    path.write_text("ra,dec,mass\n" + line + "\n")
    with pytest.raises(ConfigError, match=fragment):
        load_catalog(path)


def test_build_subset_postcondition():
    cat = generate_catalog(np.random.default_rng(2), 300, exponent=-1.0)
    sub, original = build_subset(cat, radius=0.4, top_m=5)
    assert np.array_equal(np.sort(original), original)
    assert np.array_equal(sub.mass, cat.mass[original])
    kept = set(original.tolist())
    pos = np.column_stack([cat.ra, cat.dec])
    order = {}  # rank within own ball under the (-mass, index) order
    for r in range(len(cat)):
        if r in kept:
            continue
        ball = np.nonzero(np.linalg.norm(pos - pos[r], axis=1) <= 0.4)[0]
        ranked = sorted(ball.tolist(), key=lambda i: (-cat.mass[i], i))
        assert ranked.index(r) >= 5  # at least top_m brighter stars nearby
        order[r] = ranked.index(r)
    assert order  # the radius/top_m above must actually remove stars


# ---------------------------------------------------------------------------
# Rendering and patches


def test_render_stars_exact_pixel_integrals():
    image = render_stars(32, [(10.2, 3.7)], [100.0], psf_sigma=0.5)
    def cdf(a, u):
        return ndtr((a - u) / 0.5)
    expected = 100.0 * (cdf(11, 10.2) - cdf(10, 10.2)) * (cdf(4, 3.7) - cdf(3, 3.7))
    assert image[10, 3] == pytest.approx(expected, rel=1e-12)
    assert image.sum() == pytest.approx(100.0, abs=1e-9)
    # axis 0 is x: peak at the star's x row
    assert np.unravel_index(image.argmax(), image.shape) == (10, 3)


def test_render_stars_additive_and_skips():
    both = render_stars(32, [(8.0, 8.0), (20.0, 25.0)], [10.0, 20.0], 0.5)
    a = render_stars(32, [(8.0, 8.0)], [10.0], 0.5)
    b = render_stars(32, [(20.0, 25.0)], [20.0], 0.5)
    assert np.allclose(both, a + b)
    assert not render_stars(32, [(8.0, 8.0)], [0.0], 0.5).any()
    assert not render_stars(32, [(-50.0, 8.0)], [10.0], 0.5).any()


def test_patch_config():
    cfg = PatchConfig(n=800, fov=0.08)
    assert cfg.pixel_scale == pytest.approx(1e-4)
    with pytest.raises(ConfigError):
        PatchConfig(n=0)
    with pytest.raises(ConfigError):
        PatchConfig(photon_scale=0.0)


def hand_catalog():
    # five nearby stars inside an fov=0.08 box at the origin plus two far away
    ra = np.array([0.010, 0.030, 0.020, 0.045, 0.060, 1.0, -2.0])
    dec = np.array([0.010, 0.015, 0.040, 0.035, 0.009, 0.5, -0.3])
    mass = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 9.0, 8.0])
    return StarCatalog(ra=ra, dec=dec, mass=mass)


def test_simulate_patch_geometry():
    cat = hand_catalog()
    cfg = PatchConfig(n=800, fov=0.08, poisson=False, photon_scale=200.0)
    patch = simulate_patch(np.random.default_rng(0), cat, cfg, origin=(0.0, 0.0))
    assert patch.n_stars == 5  # the two far stars fall outside the box
    assert set(patch.star_ids.tolist()) == {0, 1, 2, 3, 4}
    assert (np.diff(patch.photons) <= 0).all()  # brightest first
    assert np.array_equal(patch.photons, cat.mass[patch.star_ids] * 200.0)
    # pixel coordinates scale linearly with (ra, dec) offsets
    for (px, py), sid in zip(patch.positions, patch.star_ids):
        assert px == pytest.approx(cat.ra[sid] / 1e-4)
        assert py == pytest.approx(cat.dec[sid] / 1e-4)
    peak = np.unravel_index(patch.image.argmax(), patch.image.shape)
    assert max(abs(peak[0] - 100), abs(peak[1] - 100)) <= 1  # brightest at A


def test_simulate_patch_box_is_half_open():
    cat = StarCatalog(
        ra=np.array([0.0, 0.08]), dec=np.array([0.0, 0.0]), mass=np.array([1.0, 1.0])
    )
    cfg = PatchConfig(poisson=False)
    patch = simulate_patch(np.random.default_rng(0), cat, cfg, origin=(0.0, 0.0))
    assert patch.star_ids.tolist() == [0]


def test_simulate_patch_poisson_determinism():
    cat = hand_catalog()
    cfg = PatchConfig(poisson=True)
    a = simulate_patch(np.random.default_rng(5), cat, cfg, origin=(0.0, 0.0))
    b = simulate_patch(np.random.default_rng(5), cat, cfg, origin=(0.0, 0.0))
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.photons, b.photons)
    assert a.photons.dtype == float and (a.photons % 1 == 0).all()


# ---------------------------------------------------------------------------
# Pair database


def test_pair_db_matches_brute_force():
    cat = generate_catalog(np.random.default_rng(3), 40)
    db = build_pair_db(cat, max_sep=0.5)
    pos = np.column_stack([cat.ra, cat.dec])
    brute = {
        (i, j): float(np.linalg.norm(pos[i] - pos[j]))
        for i in range(40)
        for j in range(i + 1, 40)
        if np.linalg.norm(pos[i] - pos[j]) <= 0.5
    }
    got = {
        (min(i, j), max(i, j)): s
        for i, j, s in zip(db.pair_i, db.pair_j, db.pair_sep)
    }
    assert got.keys() == brute.keys()
    for key in brute:
        assert got[key] == pytest.approx(brute[key])
    assert (np.diff(db.pair_sep) >= 0).all()


def test_pair_db_queries():
    cat = generate_catalog(np.random.default_rng(4), 30)
    db = build_pair_db(cat, max_sep=0.6)
    i, j, s = db.query_range(0.1, 0.3)
    assert ((s >= 0.1) & (s <= 0.3)).all()
    assert len(s) == int(((db.pair_sep >= 0.1) & (db.pair_sep <= 0.3)).sum())
    star = int(db.pair_i[0])
    partners = db.partners_near(star, float(db.pair_sep[0]), 1e-9)
    assert int(db.pair_j[0]) in partners.tolist()
    brute = [
        int(q)
        for q in range(30)
        if q != star
        and abs(np.linalg.norm(db.positions[star] - db.positions[q]) - 0.2) <= 0.05
    ]
    assert sorted(db.partners_near(star, 0.2, 0.05).tolist()) == sorted(brute)
    assert db.partners_near(9999, 0.2, 0.05).size == 0


def test_pair_db_tiny_catalog():
    cat = generate_catalog(np.random.default_rng(0), 1)
    db = build_pair_db(cat, max_sep=0.5)
    assert db.n_pairs == 0


# ---------------------------------------------------------------------------
# Identification


def db_and_centroids():
    cat = hand_catalog()
    db = build_pair_db(cat, max_sep=0.08 * math.sqrt(2))
    # centroids for stars 0..3 at pixel scale 1e-4, brightest first
    cents = np.array(
        [
            [100.0, 100.0, 50.0],
            [300.0, 150.0, 40.0],
            [200.0, 400.0, 30.0],
            [450.0, 350.0, 20.0],
        ]
    )
    return db, cents


def test_identify_quad_happy_path():
    db, cents = db_and_centroids()
    res = identify(cents, db, pixel_scale=1e-4)
    assert res.matched and res.reason == "ok"
    assert dict(res.assignment) == {0: 0, 1: 1, 2: 2, 3: 3}
    res2 = identify(cents + np.array([0.4, -0.3, 0.0]), db, pixel_scale=1e-4)
    assert res2.matched  # sub-pixel perturbation stays within tol_px


def test_identify_reasons():
    db, cents = db_and_centroids()
    assert identify(cents[:2], db, 1e-4).reason == "not_enough_stars"
    tri = identify(cents[:3], db, 1e-4)
    assert not tri.matched and tri.reason == "triangle_only"
    assert dict(tri.assignment) == {0: 0, 1: 1, 2: 2}
    loose = identify(cents[:3], db, 1e-4, allow_triangle_only=True)
    assert loose.matched and loose.reason == "ok"
    # stretched geometry matches no catalog separations
    none = identify(cents * np.array([3.0, 3.0, 1.0]), db, 1e-4)
    assert not none.matched and none.reason == "no_match" and none.star_ids == ()


def test_identify_ignores_dim_extras():
    db, cents = db_and_centroids()
    junk = np.array([[700.0, 700.0, 1.0], [20.0, 600.0, 0.5]])
    res = identify(np.concatenate([cents, junk]), db, 1e-4)
    assert res.matched
    assert dict(res.assignment) == {0: 0, 1: 1, 2: 2, 3: 3}


# ---------------------------------------------------------------------------
# Experiment harness


def test_trial_success_gates():
    patch = SkyPatch(
        image=np.zeros((2, 2)),
        positions=np.array([[10.0, 20.0]]),
        photons=np.array([5.0]),
        star_ids=np.array([7]),
        origin=(0.0, 0.0),
    )
    sub_original = np.array([3, 7, 9])
    stars_px = np.array([[10.5, 20.5, 1.0]])
    ok = IdentificationResult(True, (1,), ((0, 1),), "ok")
    assert _trial_success(ok, patch, stars_px, sub_original, tol_px=2.0)
    far = np.array([[13.0, 20.0, 1.0]])
    assert not _trial_success(ok, patch, far, sub_original, tol_px=2.0)
    wrong_star = IdentificationResult(True, (0,), ((0, 0),), "ok")
    assert not _trial_success(wrong_star, patch, stars_px, sub_original, tol_px=2.0)
    unmatched = IdentificationResult(False, (), (), "no_match")
    assert not _trial_success(unmatched, patch, stars_px, sub_original, tol_px=2.0)


TINY = ExperimentConfig(
    catalog_count=50_000,
    sigmas=(0.0,),
    prime_pairs=((29, 31),),
    trials=2,
)


def test_run_experiment_deterministic_and_jobs_invariant():
    a = run_experiment(7, TINY)
    b = run_experiment(7, TINY)
    c = run_experiment(7, TINY, jobs=2)
    assert a.catalog_size == 50_000
    assert 0 < a.subset_size < a.catalog_size
    assert (a.subset_size, a.catalog_size) == (b.subset_size, b.catalog_size)
    keys = ("sigma", "p1", "p2", "trials", "successes", "success_rate")
    for ra, rb, rc in zip(a.rows, b.rows, c.rows):
        assert {k: ra[k] for k in keys} == {k: rb[k] for k in keys}
        assert {k: ra[k] for k in keys} == {k: rc[k] for k in keys}
    row = a.rows[0]
    assert row["trials"] == 2
    assert row["success_rate"] == row["successes"] / 2
    assert row["mean_recover_s"] > 0 and row["mean_identify_s"] >= 0


def test_experiment_config_pair_max_sep():
    assert ExperimentConfig().pair_max_sep == pytest.approx(0.08 * math.sqrt(2))
