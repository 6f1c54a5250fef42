"""Time-marching schemes: configs, exactness, orders on a coarse mesh."""

import math

import numpy as np
import pytest

from cornerfem.exact import ClosedFormSolution, zero_solution
from cornerfem.fem import OseenAssembler, build_dofmap
from cornerfem.mesh import barycentric_split, build_domain, triangulate
from cornerfem.timestepping import (
    GAMMA_DEFAULT,
    RECORD_COLUMNS,
    SchemeConfig,
    TimeState,
    extrapolate_U,
    initial_state,
    run_transient,
    step_errors,
)
from cornerfem.weights import WeightParams


def test_scheme_config_validation():
    SchemeConfig(1, 0.01, 0.1)
    cfg = SchemeConfig(2, 0.05, 0.2)
    assert cfg.num_steps == 4
    with pytest.raises(ValueError):
        SchemeConfig(3, 0.01, 0.1)
    with pytest.raises(ValueError):
        SchemeConfig(1, -0.01, 0.1)
    with pytest.raises(ValueError):
        SchemeConfig(1, 0.03, 0.1)  # not an integer number of steps
    with pytest.raises(ValueError):
        SchemeConfig(2, 0.01, 0.1, gamma=1.5)


def test_gamma_default():
    assert GAMMA_DEFAULT == pytest.approx(1.0 - math.sqrt(2.0) / 2.0, rel=1e-15)


def test_extrapolation():
    s = TimeState(np.array([3.0]), np.array([1.0]), np.zeros(1))
    assert extrapolate_U(s)[0] == pytest.approx(4.0)
    # first step: u_prev = u gives U = u
    s = TimeState(np.array([2.0]), np.array([2.0]), np.zeros(1))
    assert extrapolate_U(s)[0] == pytest.approx(2.0)


@pytest.fixture(scope="module")
def coarse0():
    mesh = barycentric_split(triangulate(build_domain("omega0"), 0.25))
    dofs = build_dofmap(mesh)
    return mesh, dofs


def _rotational():
    return ClosedFormSolution(
        "exp(t)*x2**2", "exp(t)*x1**2", "exp(t)*(x1 + x2)"
    )


def test_initial_state(coarse0):
    mesh, dofs = coarse0
    asm = OseenAssembler(mesh, dofs, WeightParams.unweighted())
    prob = _rotational()
    state = initial_state(prob, asm)
    assert state.n == 0 and state.t == 0.0
    u = state.u.reshape(2, -1)
    np.testing.assert_allclose(u[0], dofs.vnode_coords[:, 1] ** 2, atol=1e-13)
    # pressure is gauge-shifted: weighted mean of the stored nodal values is 0
    assert asm.gauge_vec @ state.P == pytest.approx(0.0, abs=1e-12)
    ev, ep = step_errors(state, prob, asm)
    assert ev < 1e-10  # quadratic velocity is represented exactly
    assert ep < 1e-10


@pytest.mark.parametrize("scheme", [1, 2])
def test_zero_trajectory(coarse0, scheme):
    mesh, dofs = coarse0
    cfg = SchemeConfig(scheme, 0.02, 0.1)
    res = run_transient(cfg, zero_solution(), mesh, WeightParams.unweighted())
    assert np.abs(res.records[:, 2]).max() < 1e-12
    assert np.abs(res.records[:, 3]).max() < 1e-12
    assert np.abs(res.final.vhat).max() < 1e-12


@pytest.mark.parametrize("scheme", [1, 2])
def test_records_layout(coarse0, scheme):
    mesh, dofs = coarse0
    cfg = SchemeConfig(scheme, 0.05, 0.1)
    res = run_transient(cfg, _rotational(), mesh, WeightParams.unweighted())
    assert res.records.shape == (2, len(RECORD_COLUMNS))
    np.testing.assert_allclose(res.records[:, 0], [1, 2])
    np.testing.assert_allclose(res.records[:, 1], [0.05, 0.1], atol=1e-14)
    assert np.all(res.records[:, 4] <= 1e-10)  # solver residuals
    assert res.final.t == pytest.approx(0.1)


def _final_errors(scheme, dts, mesh, prob):
    errs = []
    for dt in dts:
        cfg = SchemeConfig(scheme, dt, 0.2)
        res = run_transient(cfg, prob, mesh, WeightParams.unweighted())
        errs.append(res.records[-1, 2])
    return np.array(errs)


def test_scheme1_temporal_order(coarse0):
    """Spatially representable rotational solution isolates the time error;
    the one-solve scheme must show at least first order."""
    mesh, _ = coarse0
    errs = _final_errors(1, [0.04, 0.02, 0.01], mesh, _rotational())
    orders = np.log2(errs[:-1] / errs[1:])
    assert orders.min() >= 0.8


def test_scheme2_temporal_order(coarse0):
    mesh, _ = coarse0
    errs = _final_errors(2, [0.04, 0.02, 0.01], mesh, _rotational())
    orders = np.log2(errs[:-1] / errs[1:])
    assert orders.min() >= 1.7


def test_csv_output(coarse0, tmp_path):
    mesh, _ = coarse0
    cfg = SchemeConfig(1, 0.05, 0.1)
    res = run_transient(cfg, _rotational(), mesh, WeightParams.unweighted())
    path = tmp_path / "run.csv"
    res.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(RECORD_COLUMNS)
    assert len(lines) == 3
    vals = lines[1].split(",")
    assert int(vals[0]) == 1
    assert float(vals[1]) == pytest.approx(0.05)
    # rerunning reproduces everything except the wall-clock column
    res2 = run_transient(cfg, _rotational(), mesh, WeightParams.unweighted())
    np.testing.assert_array_equal(res.records[:, :5], res2.records[:, :5])
