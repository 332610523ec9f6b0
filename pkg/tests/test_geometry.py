import numpy as np
import pytest

from yamabe_atlas import (ChartField, MetricField, build_sphere_atlas, christoffel,
                          covariant_derivative, integrate, scalar_curvature, volume)
from yamabe_atlas.errors import SingularMetric, UnsupportedRank
from yamabe_atlas.geometry import (hessian, metric_compatibility_defect,
                                   second_derivative_curvature)


def conformal_torus_metric(atlas, phi, fd_order=4):
    """g = exp(2 phi) delta on the torus with phi a function of the angles."""
    data = []
    for chart in atlas.charts:
        p = phi(*atlas.embed(chart.id, chart.coords))
        data.append(np.exp(2 * p) * np.eye(3).reshape(3, 3, 1, 1, 1))
    return MetricField(atlas, data, fd_order)


def test_flat_torus_is_flat(torus1, torus8):
    for atlas in (torus1, torus8):
        g = MetricField.from_atlas(atlas)
        assert max(float(np.max(np.abs(G))) for G in christoffel(g)) <= 1e-12
        rep = scalar_curvature(g)
        assert max(float(np.max(np.abs(r))) for r in rep.R) <= 1e-12
        assert volume(atlas, g) == pytest.approx((2 * np.pi) ** 3, rel=1e-12)


def test_inverse_and_det(sphere24):
    g = MetricField.from_atlas(sphere24)
    assert g.inverse_identity_defect() < 1e-13
    x2 = np.sum(sphere24.charts[0].coords ** 2, axis=0)
    assert np.allclose(g.det[0], (4.0 / (1 + x2) ** 2) ** 3)


def test_rejects_singular_and_asymmetric(torus1):
    n = torus1.charts[0].grid_shape
    bad = np.zeros((3, 3) + n)
    with pytest.raises(SingularMetric):
        MetricField(torus1, [bad])
    skew = np.broadcast_to(np.eye(3).reshape(3, 3, 1, 1, 1), (3, 3) + n).copy()
    skew[0, 1] += 0.1
    with pytest.raises(SingularMetric):
        MetricField(torus1, [skew])


def test_christoffel_closed_form_for_conformally_flat_metric(torus1):
    # Gamma^k_ij = delta_ik d_j phi + delta_jk d_i phi - delta_ij d_k phi
    phi = lambda x, y, z: 0.2 * np.sin(x) * np.cos(y) + 0.1 * np.sin(z)
    dphi = [lambda x, y, z: 0.2 * np.cos(x) * np.cos(y),
            lambda x, y, z: -0.2 * np.sin(x) * np.sin(y),
            lambda x, y, z: 0.1 * np.cos(z)]
    g = conformal_torus_metric(torus1, phi)
    X = torus1.embed(0, torus1.charts[0].coords)
    d = [f(*X) for f in dphi]
    eye = np.eye(3)
    exact = np.zeros((3, 3, 3) + X[0].shape)
    for k in range(3):
        for i in range(3):
            for j in range(3):
                exact[k, i, j] = eye[i, k] * d[j] + eye[j, k] * d[i] - eye[i, j] * d[k]
    assert np.max(np.abs(g.christoffel[0] - exact)) < 2e-3


def test_scalar_curvature_closed_form_conformally_flat_torus():
    # m = 3: R = -exp(-2 phi) (4 Lap phi + 2 |grad phi|^2)
    from yamabe_atlas import build_torus_atlas

    errs = []
    for n in (16, 32):
        atlas = build_torus_atlas(3, 1, grid_n=n)
        phi = lambda x, y, z: 0.3 * np.sin(x) + 0.2 * np.cos(y) * np.sin(z)
        g = conformal_torus_metric(atlas, phi)
        x, y, z = atlas.embed(0, atlas.charts[0].coords)
        lap = -0.3 * np.sin(x) - 0.4 * np.cos(y) * np.sin(z)
        grad2 = (0.3 * np.cos(x)) ** 2 + (0.2 * np.sin(y) * np.sin(z)) ** 2 \
            + (0.2 * np.cos(y) * np.cos(z)) ** 2
        exact = -np.exp(-2 * phi(x, y, z)) * (4 * lap + 2 * grad2)
        errs.append(float(np.max(np.abs(scalar_curvature(g).R[0] - exact))))
    assert errs[1] < 2e-3
    assert np.log2(errs[0] / errs[1]) > 3.5


def test_round_sphere_curvature_and_volume():
    atlas = build_sphere_atlas(1.0, 32)
    g = MetricField.from_atlas(atlas)
    rep = scalar_curvature(g)
    assert rep.error_against(6.0, atlas) < 0.05
    assert rep.mean == pytest.approx(6.0, abs=1e-2)
    assert volume(atlas, g) == pytest.approx(2 * np.pi ** 2, rel=1e-3)
    # the raw per-chart values are only accurate away from the cube faces
    inner = np.sum(atlas.charts[0].coords ** 2, axis=0) < 1.0
    assert np.max(np.abs(rep.raw[0][inner] - 6.0)) < 0.05


def test_sphere_radius_scaling():
    atlas = build_sphere_atlas(2.0, 32)
    rep = scalar_curvature(MetricField.from_atlas(atlas))
    assert rep.error_against(1.5, atlas) < 0.05 / 4 * 1.5


def test_second_derivative_formula_only_where_first_derivatives_vanish():
    atlas = build_sphere_atlas(1.0, 33)
    g = MetricField.from_atlas(atlas)
    diag = second_derivative_curvature(g)
    centre = (16, 16, 16)
    assert diag[0][centre] == pytest.approx(6.0, abs=0.1)
    away = (16, 16, 28)
    assert abs(diag[0][away] - 6.0) > 1.0


def test_levi_civita_is_metric_compatible(sphere24):
    g = MetricField.from_atlas(sphere24, fd_order=4)
    inner = [np.sum(c.coords ** 2, axis=0) < 1.5 ** 2 for c in sphere24.charts]
    assert metric_compatibility_defect(g, inner) < 5e-3


def test_covariant_derivative_of_scalar_and_hessian_trace(torus1):
    g = MetricField.from_atlas(torus1)
    u = ChartField.from_function(torus1, lambda x, y, z: np.sin(x) * np.sin(y))
    du = covariant_derivative(u, g)
    assert du.rank == (0, 1)
    x, y, _ = torus1.embed(0, torus1.charts[0].coords)
    assert np.max(np.abs(du.data[0][0] - np.cos(x) * np.sin(y))) < 1e-3
    H = hessian(u, g)
    assert H.rank == (0, 2)
    assert np.max(np.abs(np.trace(H.data[0]) + 2 * np.sin(x) * np.sin(y))) < 5e-3
    with pytest.raises(UnsupportedRank):
        covariant_derivative(H, g)


def test_integrate_weights_by_volume(sphere24):
    g = MetricField.from_atlas(sphere24)
    # x4 is odd under the reflection exchanging the hemispheres
    f = ChartField.from_function(sphere24, lambda x1, x2, x3, x4: x4)
    assert abs(integrate(sphere24, f, g)) < 1e-10
    f2 = ChartField.from_function(sphere24, lambda x1, x2, x3, x4: x4 ** 2)
    # mean of x4^2 over S^3 is 1/4
    assert integrate(sphere24, f2, g) == pytest.approx(np.pi ** 2 / 2, rel=5e-3)
