import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yamabe_atlas import build_sphere_atlas, build_torus_atlas, validate_uniform_regularity
from yamabe_atlas.atlas import Atlas, transition_apply
from yamabe_atlas.errors import InvalidParameter, OutOfOverlap


def test_single_chart_torus_layout(torus1):
    (chart,) = torus1.charts
    assert chart.periodic and torus1.single_periodic
    assert chart.grid_shape == (16, 16, 16)
    assert chart.spacing == pytest.approx([2 * np.pi / 16] * 3)
    assert torus1.multiplicity == 1


def test_eight_chart_torus_is_lattice_aligned(torus8):
    assert len(torus8.charts) == 8
    assert torus8.multiplicity == 8
    for (a, b), tmap in torus8.transitions.items():
        pts = torus8.charts[a].points()
        ok = tmap.valid(pts)
        idx = torus8.charts[b].to_index(tmap.forward(pts[ok]))
        # transitions carry nodes to nodes
        assert np.allclose(idx, np.round(idx), atol=1e-9)
    assert 0.0 < torus8.params["overlap_effective"] < 0.5


@pytest.mark.parametrize("overlap", [0.0, 0.5, 0.6, -0.1])
def test_overlap_precondition(overlap):
    with pytest.raises(InvalidParameter):
        build_torus_atlas(3, 2, overlap, grid_n=16)


def test_dimension_precondition():
    with pytest.raises(InvalidParameter):
        build_torus_atlas(2, 1, grid_n=16)


def test_degenerate_cover_flagged_not_built():
    atlas = build_torus_atlas(3, 2, 0.0, grid_n=16, strict=False)
    assert atlas.localization is None
    report = validate_uniform_regularity(atlas, 1)
    assert not report.cover_ok and not report.passed


def test_sphere_transition_is_an_involution_with_matching_jacobian(sphere24):
    t01 = sphere24.transition(0, 1)
    t10 = sphere24.transition(1, 0)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 3))
    x *= (rng.uniform(0.6, 1.6, size=50) / np.linalg.norm(x, axis=1))[:, None]
    assert np.max(np.abs(t10.forward(t01.forward(x)) - x)) < 1e-14
    # Jacobian against central differences
    eps = 1e-6
    J = t01.jacobian(x)
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        col = (t01.forward(x + e) - t01.forward(x - e)) / (2 * eps)
        assert np.max(np.abs(J[:, :, i] - col)) < 1e-8


def test_stereographic_metric_pulls_back_round_metric(sphere24):
    # g_ij = <d_i X, d_j X> with X the inverse stereographic map into R^4
    chart = sphere24.charts[0]
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.2, 1.2, size=(20, 3))
    eps = 1e-6
    dX = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = eps
        plus = np.array(sphere24.embed(0, (x + e).T))
        minus = np.array(sphere24.embed(0, (x - e).T))
        dX.append((plus - minus) / (2 * eps))
    dX = np.array(dX)  # (3, 4, n)
    g_fd = np.einsum("ian,jan->nij", dX, dX)
    assert np.max(np.abs(chart.metric(x) - g_fd)) < 1e-7
    assert np.allclose(np.sum(np.array(sphere24.embed(0, x.T)) ** 2, axis=0), 1.0)


def test_transition_apply_outside_overlap(sphere24):
    with pytest.raises(OutOfOverlap):
        transition_apply(sphere24, 0, 1, np.array([[0.05, 0.0, 0.0]]))


@pytest.mark.parametrize("builder", ["torus1", "torus8", "sphere24"])
def test_regularity_report_passes(builder, request):
    atlas = request.getfixturevalue(builder)
    report = validate_uniform_regularity(atlas, 2)
    assert report.passed, report.flags
    assert report.multiplicity_measured == atlas.multiplicity
    assert report.round_trip_defect < 1e-12
    d = json.loads(json.dumps(report.to_dict()))
    assert d["passed"] is True


def test_sphere_metric_equivalence_constant(sphere24):
    # eigenvalues 4/(1+|x|^2)^2 lie in [4/25, 4] on the ball of radius 2
    report = validate_uniform_regularity(sphere24, 0)
    lo, hi = report.metric_eigen_range
    h = sphere24.h
    assert 4.0 / (1.0 + 0.75 * h * h) ** 2 <= hi <= 4.0
    assert 4.0 / 25.0 - 1e-12 <= lo < 4.0 / 16.0
    assert report.metric_equivalence == pytest.approx(1.0 / lo)


def test_document_round_trip(torus8, sphere24):
    for atlas in (torus8, sphere24):
        again = Atlas.from_document(atlas.dumps())
        assert again.dumps() == atlas.dumps()


def test_partition_of_unity_torus_by_node_lookup(torus8):
    # independent of the blend plans: look up every chart's pi^2 at the image node
    loc = torus8.localization
    for chart in torus8.charts:
        pts = chart.points()[chart.mask.reshape(-1)]
        total = np.zeros(len(pts))
        for eta in torus8.neighbors[chart.id]:
            other = torus8.charts[eta]
            y = torus8.transition(chart.id, eta).forward(pts)
            inside = other.contains(y)
            idx = np.round(other.to_index(y[inside])).astype(int)
            total[inside] += loc.pi2[eta][tuple(idx.T)]
        assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_partition_of_unity_sphere(sphere24):
    loc = sphere24.localization
    assert loc.partition_residual <= 1e-12
    for chart in sphere24.charts:
        total = np.zeros(int(np.prod(chart.grid_shape)))
        for term in loc.plans[chart.id]:
            if term.nodes is None:
                total += term.weights.reshape(-1)
            else:
                total[term.nodes] += term.weights
        assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_cutoffs_are_nested(sphere24):
    loc = sphere24.localization
    for pi, zeta, varpi in zip(loc.pi, loc.zeta, loc.varpi):
        # zeta = 1 on supp(pi), varpi = 1 on supp(zeta)
        assert np.all(zeta[pi > 0] == 1.0)
        assert np.all(varpi[zeta > 0] == 1.0)


@given(st.integers(min_value=10, max_value=20), st.floats(min_value=0.15, max_value=0.45))
def test_torus_atlas_builds_for_valid_overlaps(n, overlap):
    try:
        atlas = build_torus_atlas(3, 2, overlap, grid_n=n, localize=False)
    except InvalidParameter as exc:
        assert "coarse" in str(exc) or "layout" in str(exc)
        return
    assert 0.0 < atlas.params["overlap_effective"] < 0.5
    assert all(c.grid_shape == (n,) * 3 for c in atlas.charts)
