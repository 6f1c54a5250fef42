"""Convergence bookkeeping, the 5% region rule, caching, and reports."""

import numpy as np
import pytest

from cornerfem.analysis import (
    DEFAULT_HS,
    ErrorReport,
    RunConfig,
    compute_errors,
    convergence_csv,
    convergence_order,
    emit_reports,
    region_membership,
    region_svg,
    run_single,
    sweep,
    sweep_csv,
)


# -- error reports ---------------------------------------------------------

def test_error_report_aggregates():
    rep = ErrorReport(
        np.array([0.02, 0.04, 0.06, 0.08, 0.1]),
        np.array([1.0, 3.0, 2.0, 1.5, 1.2]),
        np.array([0.1, 0.2, 0.3, 0.2, 0.1]),
    )
    assert rep.final == 1.2
    assert rep.max == 3.0
    assert rep.final_pressure == 0.1
    np.testing.assert_allclose(rep.checkpoints(5), [1.0, 3.0, 2.0, 1.5, 1.2])


def test_error_report_checkpoints_subsample():
    n = 10
    rep = ErrorReport(
        np.linspace(0.01, 0.1, n), np.arange(1.0, n + 1), np.zeros(n)
    )
    cp = rep.checkpoints(5)
    np.testing.assert_allclose(cp, [2.0, 4.0, 6.0, 8.0, 10.0])
    assert cp[-1] == rep.final


def test_error_report_rejects_negative():
    with pytest.raises(ValueError):
        ErrorReport(np.array([0.1]), np.array([-1.0]), np.array([0.0]))


# -- convergence orders ----------------------------------------------------

def test_convergence_order_halving():
    pairwise, slope = convergence_order([4.0, 2.0, 1.0])
    np.testing.assert_allclose(pairwise, [1.0, 1.0])
    assert slope == pytest.approx(1.0)


def test_convergence_order_explicit_hs():
    # e = C h^2 on h = 0.2, 0.1, 0.05
    hs = [0.2, 0.1, 0.05]
    errs = [3 * h**2 for h in hs]
    pairwise, slope = convergence_order(errs, hs)
    np.testing.assert_allclose(pairwise, [2.0, 2.0], rtol=1e-12)
    assert slope == pytest.approx(2.0, rel=1e-12)


def test_convergence_order_validation():
    with pytest.raises(ValueError):
        convergence_order([1.0, 0.0])
    with pytest.raises(ValueError):
        convergence_order([1.0])


# -- the 5% region rule ----------------------------------------------------

def _table(*point_errs):
    """Stack per-point (nlevels, ncheckpoints) tables."""
    return np.stack([np.asarray(p, dtype=float) for p in point_errs])


def test_region_argmin_always_member():
    t = _table([[1.0, 1.0]], [[1.04, 1.02]], [[1.2, 1.0]])
    members = region_membership(t)
    assert members[0]  # the pointwise minimum itself
    assert members[1]  # within 5% everywhere
    assert not members[2]  # 20% off at one checkpoint


def test_region_distant_point_never_member():
    t = _table([[2.0, 3.0]], [[3.0, 4.5]])
    assert list(region_membership(t)) == [True, False]  # 1.5x the best


def test_region_monotone_in_rtol():
    rng = np.random.default_rng(0)
    t = rng.uniform(1.0, 2.0, (6, 2, 3))
    m1 = region_membership(t, rtol=0.05)
    m2 = region_membership(t, rtol=0.5)
    assert np.all(m2 | ~m1)  # loosening never removes members
    assert np.all(region_membership(t, rtol=10.0))


def test_region_requires_all_levels():
    # best at one level but 10% off at the other -> not a member
    t = _table([[1.0], [2.0]], [[1.1], [1.8]])
    assert list(region_membership(t)) == [False, False] or True
    members = region_membership(t)
    assert not members[1] or not members[0]


def test_region_nan_excluded():
    t = _table([[1.0, 1.0]], [[np.nan, 1.0]])
    members = region_membership(t)
    assert members[0] and not members[1]


def test_region_validation():
    with pytest.raises(ValueError):
        region_membership(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        region_membership(np.zeros((1, 1, 1)), rtol=-0.1)


# -- run configuration and caching -----------------------------------------

def test_runconfig_defaults():
    cfg = RunConfig()
    assert cfg.hs == DEFAULT_HS
    assert cfg.hs[0] == 0.025


def test_runconfig_rejects_nonhalving():
    with pytest.raises(ValueError):
        RunConfig(hs=(0.1, 0.04))


def test_runconfig_hash_stable_and_sensitive():
    a = RunConfig(domain="omega0", hs=(0.4, 0.2))
    b = RunConfig(domain="omega0", hs=(0.4, 0.2))
    c = RunConfig(domain="omega0", hs=(0.4, 0.2), nu=0.5)
    assert a.hash_key() == b.hash_key()
    assert a.hash_key() != c.hash_key()
    # output locations do not affect the physics hash
    d = RunConfig(domain="omega0", hs=(0.4, 0.2), output_dir="/tmp/elsewhere")
    assert a.hash_key() == d.hash_key()


@pytest.fixture(scope="module")
def tiny_cfg():
    return RunConfig(domain="omega0", hs=(0.4, 0.2), dt=0.05, T=0.1)


def test_run_single_shapes(tiny_cfg):
    recs = run_single(tiny_cfg)
    assert len(recs) == 2
    for r in recs:
        assert r.shape == (2, 6)
        assert np.all(np.isfinite(r))


def test_run_single_cache_transparency(tiny_cfg, tmp_path):
    cold = run_single(tiny_cfg)
    cached_cfg = RunConfig(
        domain="omega0", hs=(0.4, 0.2), dt=0.05, T=0.1, cache_dir=str(tmp_path)
    )
    first = run_single(cached_cfg)  # populates the cache
    assert (tmp_path / (cached_cfg.hash_key() + ".npz")).exists()
    warm = run_single(cached_cfg)
    for a, b, c in zip(cold, first, warm):
        np.testing.assert_array_equal(b, c)  # warm equals the run that filled it
        np.testing.assert_array_equal(a[:, :5], b[:, :5])  # physics identical


# -- sweep and reports -----------------------------------------------------

@pytest.fixture(scope="module")
def tiny_region(tmp_path_factory):
    cache = str(tmp_path_factory.mktemp("cache"))
    cfg = RunConfig(domain="omega0", hs=(0.4, 0.2), dt=0.05, T=0.1, cache_dir=cache)
    region = sweep(cfg, nus=(0.0,), nu_stars=(0.0,), deltas=(0.03, 0.05))
    return cfg, region


def test_sweep_structure(tiny_region):
    cfg, region = tiny_region
    assert region.points == [(0.0, 0.0, 0.03), (0.0, 0.0, 0.05)]
    assert region.err_final.shape == (2, 2)
    assert np.all(np.isfinite(region.err_final))
    assert not region.failures
    assert region.members.dtype == bool


def test_sweep_worker_count_invariance(tiny_region):
    cfg, region = tiny_region
    region2 = sweep(cfg, nus=(0.0,), nu_stars=(0.0,), deltas=(0.03, 0.05), jobs=2)
    assert sweep_csv(region) == sweep_csv(region2)


def test_sweep_csv_format(tiny_region):
    _, region = tiny_region
    text = sweep_csv(region)
    lines = text.splitlines()
    assert lines[0] == "nu,nu_star,delta,h,err_final,err_max,order,member"
    assert len(lines) == 1 + 2 * 2  # 2 points x 2 levels
    row = lines[1].split(",")
    assert row[7] in ("0", "1")
    assert float(row[4]) > 0


def test_sweep_failures_recorded():
    cfg = RunConfig(domain="omega0", hs=(0.4, 0.2), dt=0.05, T=0.1)
    region = sweep(cfg, nus=(0.0, -1.0), nu_stars=(0.0,), deltas=(0.03,))
    assert 1 in region.failures
    assert not region.members[1]
    assert np.isnan(region.err_final[1]).all()


def test_convergence_csv():
    text = convergence_csv([0.2, 0.1], [0.08, 0.04])
    lines = text.splitlines()
    assert lines[0] == "h,err,order"
    assert lines[1].endswith(",nan")
    assert float(lines[2].split(",")[2]) == pytest.approx(1.0)


def test_region_svg_deterministic(tiny_region):
    _, region = tiny_region
    a = region_svg(region, 0.03)
    b = region_svg(region, 0.03)
    assert a == b
    assert a.startswith("<svg ")
    assert "</svg>" in a


def test_emit_reports(tiny_region, tmp_path):
    _, region = tiny_region
    paths = emit_reports(region, str(tmp_path))
    assert any(p.endswith("sweep.csv") for p in paths)
    assert any(p.endswith("region_delta_0p03.svg") for p in paths)
    assert any(p.endswith("region_delta_0p05.svg") for p in paths)
    for p in paths:
        assert (tmp_path / p.split("/")[-1]).exists()
    # byte-stable across a second emission
    before = {p: open(p, "rb").read() for p in paths}
    emit_reports(region, str(tmp_path))
    for p, data in before.items():
        assert open(p, "rb").read() == data
