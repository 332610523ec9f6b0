import math

import numpy as np
import pytest

from yamabe_atlas import (ChartField, FlowConfig, FlowProblem, MetricField, build_sphere_atlas,
                          conformal_laplacian, conformal_scalar_curvature, normalized_rhs,
                          run, scalar_curvature, step, write_snapshot, yamabe_rhs)
from yamabe_atlas.errors import InvalidParameter, PositivityViolation, StepFailure
from yamabe_atlas.flow import (TRACE_COLUMNS, A_functional, FlowState, FlowTrace,
                               conformal_metric, conformal_volume, evaluate_expression,
                               field_from_expression, s_g_average, volume_rate)


@pytest.fixture(scope="module")
def sphere_setup():
    atlas = build_sphere_atlas(1.0, 24)
    g0 = MetricField.from_atlas(atlas)
    return atlas, g0, conformal_laplacian(g0)


def test_rhs_of_constant_on_flat_torus_vanishes(torus1, torus8):
    for atlas in (torus1, torus8):
        L0 = conformal_laplacian(MetricField.from_atlas(atlas))
        assert yamabe_rhs(ChartField.constant(atlas, 1.7), L0).sup() <= 1e-12


def test_sphere_rhs_of_one(sphere_setup):
    atlas, g0, L0 = sphere_setup
    one = ChartField.constant(atlas, 1.0)
    # L0 1 = -c(3) * 6 = -3/4, the initial slope of (1 - 3t)^{1/4}
    rhs = yamabe_rhs(one, L0)
    assert max(float(np.max(np.abs(r[c.mask] + 0.75))) for r, c in zip(rhs.data, atlas.charts)) < 0.02
    assert normalized_rhs(one, g0, L0).sup() < 0.02
    assert s_g_average(one, g0, L0) == pytest.approx(6.0, abs=0.01)


def test_positivity_enforced(torus1):
    L0 = conformal_laplacian(MetricField.from_atlas(torus1))
    u = ChartField.from_function(torus1, lambda x, y, z: 0.5 + 0.1 * np.sin(x))
    with pytest.raises(PositivityViolation) as info:
        yamabe_rhs(u, L0, b=0.45)
    assert info.value.value == pytest.approx(0.4, abs=0.01)


def test_conformal_identity_matches_direct_metric(torus1):
    g0 = MetricField.from_atlas(torus1)
    L0 = conformal_laplacian(g0)
    u = ChartField.from_function(torus1, lambda x, y, z: 1 + 0.2 * np.sin(x) * np.cos(y))
    via_identity = conformal_scalar_curvature(u, g0, L0)
    direct = scalar_curvature(conformal_metric(u, g0))
    assert np.max(np.abs(via_identity.data[0] - direct.R[0])) < 0.02


def test_volume_rate_of_normalized_flow_vanishes(sphere_setup, torus8):
    atlas, g0, L0 = sphere_setup
    u = ChartField.from_function(atlas, lambda a, b, c, d: 1 + 0.1 * d + 0.05 * a * b)
    rhs = normalized_rhs(u, g0, L0)
    scale = abs(volume_rate(u, yamabe_rhs(u, L0), g0))
    assert abs(volume_rate(u, rhs, g0)) <= 1e-12 * max(1.0, scale)
    # unnormalized flow on the round sphere shrinks the volume
    assert volume_rate(u, yamabe_rhs(u, L0), g0) < 0
    g8 = MetricField.from_atlas(torus8)
    w = field_from_expression(torus8, "1 + 0.1*sin(x1)")
    rate = volume_rate(w, normalized_rhs(w, g8, conformal_laplacian(g8)), g8)
    assert abs(rate) <= 1e-12


def test_A_functional_forms_agree(sphere_setup):
    atlas, g0, L0 = sphere_setup
    u = ChartField.from_function(atlas, lambda a, b, c, d: 1.2 + 0.1 * d)
    h = ChartField.from_function(atlas, lambda a, b, c, d: a + d * d)
    first, second = A_functional(u, h, g0, L0, both=True)
    assert first == pytest.approx(second, rel=1e-12)
    assert A_functional(u, h, g0, L0) == second


def test_expression_evaluator():
    x = np.array([0.0, 1.0])
    assert np.allclose(evaluate_expression("1 + 0.2*sin(x1)**2 - -x1/pi", {"x1": x}),
                       1 + 0.2 * np.sin(x) ** 2 + x / np.pi)
    for bad in ("__import__('os')", "x1.real", "open('f')", "x9", "[1, 2]", "1 +"):
        with pytest.raises(InvalidParameter):
            evaluate_expression(bad, {"x1": x})


def test_field_from_expression_on_sphere(sphere24):
    u = field_from_expression(sphere24, "x1*x1 + x2*x2 + x3*x3 + x4*x4")
    assert u.max_difference(ChartField.constant(sphere24, 1.0)) < 1e-14


@pytest.mark.parametrize("kw", [dict(cfl_factor=0.0), dict(cfl_factor=0.6), dict(b=0.0),
                                dict(T=-1.0), dict(kind="ricci"), dict(manifold="sphere", m=4),
                                dict(holder_s=1.0), dict(output_every=0), dict(dt_max=0.0)])
def test_flow_config_validation(kw):
    with pytest.raises(InvalidParameter):
        FlowConfig(**kw).validate()


def test_trace_times_must_increase():
    tr = FlowTrace()
    tr.append({"t": 0.0})
    with pytest.raises(ValueError):
        tr.append({"t": 0.0})


def test_short_torus_run_conserves_volume(tmp_path):
    cfg = FlowConfig(grid_n=12, T=0.2, output_every=5)
    trace = run(cfg)
    assert trace.status == "horizon" and trace.final.t == 0.2
    V = trace.column("V")
    assert abs(V[-1] - V[0]) / V[0] < 1e-7
    # curvature spread shrinks along the normalized flow
    spread = trace.column("Rmax") - trace.column("Rmin")
    assert spread[-1] < spread[0]
    trace.write_csv(tmp_path / "trace.csv")
    header = (tmp_path / "trace.csv").read_text().splitlines()[0]
    assert header.split(",") == list(TRACE_COLUMNS)


def test_run_from_snapshot_and_callback(tmp_path):
    cfg = FlowConfig(grid_n=10, T=0.05, holder_s=None)
    problem = FlowProblem(cfg)
    u0 = field_from_expression(problem.atlas, "1 + 0.1*cos(x2)")
    write_snapshot(u0, tmp_path / "u0")
    cfg2 = FlowConfig(grid_n=10, T=0.05, holder_s=None, u0_snapshot=str(tmp_path / "u0"))
    seen = []
    trace = run(cfg2, lambda state, row: seen.append(state.t))
    assert seen[0] == 0.0 and seen[-1] == pytest.approx(0.05)
    ref = run(FlowConfig(grid_n=10, T=0.05, holder_s=None, u0="1 + 0.1*cos(x2)"))
    assert trace.final.u.max_difference(ref.final.u) == 0.0


def test_initial_data_must_lie_above_floor():
    with pytest.raises(InvalidParameter):
        run(FlowConfig(grid_n=10, u0="0.5 + 0.1*sin(x1)", b=0.5))


def test_step_respects_horizon_and_dt_max():
    cfg = FlowConfig(grid_n=10, T=0.01, dt_max=0.004, holder_s=None)
    problem = FlowProblem(cfg)
    state = FlowState(0.0, problem.initial_field())
    state = step(state, problem)
    assert state.dt == pytest.approx(min(0.004, problem.stable_dt(problem.initial_field())))
    while state.t < cfg.T:
        state = step(state, problem)
    assert state.t == cfg.T


def test_unnormalized_sphere_flow_hits_the_floor():
    # u(t) = (1 - 3t)^{1/4} drops to b = 0.5 at t = (1 - 0.5^4) / 3 = 0.3125
    cfg = FlowConfig(manifold="sphere", grid_n=16, kind="unnormalized", u0="1", b=0.5, T=0.5,
                     holder_s=None, cfl_factor=0.2)
    with pytest.raises(StepFailure) as info:
        run(cfg)
    trace = info.value.trace
    assert trace.status == "step-failure"
    assert trace.final.t == pytest.approx((1 - 0.5 ** 4) / 3, abs=0.01)
    assert len(trace.rows) >= 2


def test_conformal_volume_of_constant(sphere_setup):
    atlas, g0, _ = sphere_setup
    # u = 2 scales lengths by 2^{2/(m-2)} = 4, volume by 4^3
    V1 = conformal_volume(ChartField.constant(atlas, 1.0), g0)
    V2 = conformal_volume(ChartField.constant(atlas, 2.0), g0)
    assert V2 / V1 == pytest.approx(64.0, rel=1e-12)
    assert V1 == pytest.approx(2 * math.pi ** 2, rel=1e-3)
