"""Metric tensor calculus on chart grids.

Derivatives are central finite differences of a configurable order (2, 4
or 6; default 4).  On ball charts the stencils run over the whole
enclosing cube, whose ghost nodes carry values of the neighbouring chart,
so no one-sided stencils are needed at the ball boundary.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fd
from .errors import SingularMetric, UnsupportedRank
from .fields import ChartField, blend

DEFAULT_FD_ORDER = 4


def _to_last(a, k=2):
    """Move the leading ``k`` component axes to the end (for numpy.linalg)."""
    return np.moveaxis(a, tuple(range(k)), tuple(range(-k, 0)))


def _to_front(a, k=2):
    return np.moveaxis(a, tuple(range(-k, 0)), tuple(range(k)))


class MetricField:
    """Symmetric positive-definite rank-(0,2) field with cached derived data.

    Parameters
    ----------
    atlas : Atlas
    data : list of ndarray
        Per chart, ``g[i, j]`` with shape ``(m, m) + grid_shape``.
    fd_order : int
        Order of the finite-difference stencils used for all derivatives.
    """

    def __init__(self, atlas, data, fd_order=DEFAULT_FD_ORDER):
        fd.check_order(fd_order)
        self.atlas = atlas
        self.fd_order = int(fd_order)
        self.data = [np.asarray(g, dtype=float) for g in data]
        for chart, g in zip(atlas.charts, self.data):
            if g.shape != (atlas.dim, atlas.dim) + chart.grid_shape:
                raise ValueError(f"chart {chart.id}: bad metric shape {g.shape}")
            if np.max(np.abs(g - np.swapaxes(g, 0, 1))) > 1e-12 * max(1.0, np.max(np.abs(g))):
                raise SingularMetric(f"chart {chart.id}: metric is not symmetric")
        for chart, det in zip(atlas.charts, self.det):
            if not np.all(det > 0.0):
                idx = np.unravel_index(int(np.argmin(det)), det.shape)
                raise SingularMetric(f"chart {chart.id}: det g = {det[idx]} at index {idx}")

    @classmethod
    def from_atlas(cls, atlas, fd_order=DEFAULT_FD_ORDER):
        """The background metric given by each chart's closed-form evaluator."""
        data = [_to_front(c.metric(np.moveaxis(c.coords, 0, -1))) for c in atlas.charts]
        return cls(atlas, data, fd_order)

    @classmethod
    def from_field(cls, field, fd_order=DEFAULT_FD_ORDER):
        if field.rank != (0, 2):
            raise UnsupportedRank("a metric is a rank (0, 2) field")
        return cls(field.atlas, field.data, fd_order)

    def as_field(self):
        return ChartField(self.atlas, self.data, (0, 2))

    @property
    def dim(self):
        return self.atlas.dim

    @cached_property
    def det(self):
        return [np.linalg.det(_to_last(g)) for g in self.data]

    @cached_property
    def inverse(self):
        return [_to_front(np.linalg.inv(_to_last(g))) for g in self.data]

    @cached_property
    def volume_element(self):
        return [np.sqrt(d) for d in self.det]

    @cached_property
    def christoffel(self):
        """Per chart ``Gamma[i, j, k]`` = Gamma^i_{jk}."""
        return [self._christoffel(chart, g, ginv)
                for chart, g, ginv in zip(self.atlas.charts, self.data, self.inverse)]

    def _grad(self, chart, arr):
        """Gradient with the derivative index moved to the front."""
        grad = fd.gradient(arr, chart.spacing, self.fd_order, chart.periodic, chart.dim)
        return np.moveaxis(grad, arr.ndim - chart.dim, 0)

    def _christoffel(self, chart, g, ginv):
        dg = self._grad(chart, g)  # dg[l, j, k] = d_l g_jk
        lower = 0.5 * (np.einsum("jlk...->ljk...", dg) + np.einsum("klj...->ljk...", dg) - dg)
        return np.einsum("il...,ljk...->ijk...", ginv, lower)

    def inverse_identity_defect(self):
        """max |g^{ij} g_{jk} - delta^i_k| over all charts."""
        m = self.dim
        eye = np.eye(m).reshape((m, m) + (1,) * m)
        return max(float(np.max(np.abs(np.einsum("ij...,jk...->ik...", gi, g) - eye)))
                   for g, gi in zip(self.data, self.inverse))

    def eigen_range(self):
        lo, hi = np.inf, 0.0
        for chart, g in zip(self.atlas.charts, self.data):
            eig = np.linalg.eigvalsh(_to_last(g)[chart.mask])
            lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
        return lo, hi


def christoffel(metric):
    """Christoffel symbols Gamma^i_{jk} per chart."""
    return metric.christoffel


# scalar curvature --------------------------------------------------------------

@dataclass
class CurvatureReport:
    """Scalar curvature per chart with summary statistics over chart domains."""

    R: list
    raw: list
    min: float
    max: float
    mean: float
    h: float
    grid_shape: tuple
    fd_order: int

    def field(self, atlas):
        return ChartField(atlas, self.R)

    def error_against(self, value, atlas):
        return max(float(np.max(np.abs(r[c.mask] - value))) for c, r in zip(atlas.charts, self.R))

    def to_dict(self):
        return {"min": self.min, "max": self.max, "mean": self.mean, "h": self.h,
                "grid_shape": list(self.grid_shape), "fd_order": self.fd_order}


def _curvature_chart(metric, chart, ginv, gamma):
    m = chart.dim
    # d_l Gamma^l_{jk}
    div = sum(fd.derivative(gamma[l], 2 + l, chart.spacing[l], metric.fd_order, chart.periodic)
              for l in range(m))
    trace = np.einsum("llk...->k...", gamma)
    dtrace = metric._grad(chart, trace)  # dtrace[j, k] = d_j Gamma^l_{lk}
    quad = (np.einsum("llp...,pjk...->jk...", gamma, gamma)
            - np.einsum("ljp...,plk...->jk...", gamma, gamma))
    ricci = div - dtrace + quad
    return np.einsum("jk...,jk...->...", ginv, ricci)


def _summary(metric, values):
    atlas = metric.atlas
    lo = min(float(v[c.mask].min()) for c, v in zip(atlas.charts, values))
    hi = max(float(v[c.mask].max()) for c, v in zip(atlas.charts, values))
    mean = float("nan")
    if atlas.localization is not None:
        vol = sum(float(np.sum(q * dv)) for q, dv in
                  zip(atlas.localization.quadrature, metric.volume_element))
        tot = sum(float(np.sum(q * dv * v)) for q, dv, v in
                  zip(atlas.localization.quadrature, metric.volume_element, values))
        mean = tot / vol
    return lo, hi, mean


def scalar_curvature(metric):
    """Scalar curvature from the full Christoffel contraction.

    R = g^{jk} (d_l Gamma^l_{jk} - d_j Gamma^l_{lk}
                + Gamma^l_{lp} Gamma^p_{jk} - Gamma^l_{jp} Gamma^p_{lk})

    The per-chart values (``raw``) are blended across charts, so values near
    a chart boundary come from charts in which the point is interior.
    """
    atlas = metric.atlas
    raw = [_curvature_chart(metric, c, gi, gam) for c, gi, gam in
           zip(atlas.charts, metric.inverse, metric.christoffel)]
    values = raw
    if atlas.localization is not None and not atlas.single_periodic:
        values = blend(ChartField(atlas, raw)).data
    lo, hi, mean = _summary(metric, values)
    return CurvatureReport(values, raw, lo, hi, mean, atlas.h,
                           metric.atlas.charts[0].grid_shape, metric.fd_order)


def second_derivative_curvature(metric):
    """Curvature from second derivatives of g only.

    Evaluates 1/2 g^{ki} g^{lj} (g_{jk,li} + g_{il,kj} - g_{jl,ki} - g_{ik,lj}),
    which agrees with the scalar curvature only where the first derivatives
    of g vanish (for instance at the centre of a stereographic chart).
    Kept as a diagnostic.
    """
    out = []
    for chart, g, ginv in zip(metric.atlas.charts, metric.data, metric.inverse):
        dg = metric._grad(chart, g)
        ddg = metric._grad(chart, dg)  # ddg[a, b, j, k] = d_a d_b g_jk
        total = 0.0
        for pattern, sign in (("lijk", 1.0), ("kjil", 1.0), ("kijl", -1.0), ("ljik", -1.0)):
            total = total + sign * np.einsum(f"ki...,lj...,{pattern}...->...", ginv, ginv, ddg)
        out.append(0.5 * total)
    return out


# covariant derivatives ---------------------------------------------------------

def _nabla_chart(metric, chart, arr, gamma, rank):
    """Covariant derivative of one chart array; the derivative index is appended last."""
    sigma, tau = rank
    k = sigma + tau
    grad = metric._grad(chart, arr)  # derivative index first
    out = np.moveaxis(grad, 0, k)
    letters = "abcd"
    for slot in range(k):
        idx = list(letters[:k])
        if slot < sigma:
            # + Gamma^{a}_{l p} T^{..p..}
            src = idx.copy()
            src[slot] = "p"
            expr = f"{idx[slot]}lp...,{''.join(src)}...->{''.join(idx)}l..."
            out = out + np.einsum(expr, gamma, arr)
        else:
            # - Gamma^{p}_{l a} T_{..p..}
            src = idx.copy()
            src[slot] = "p"
            expr = f"pl{idx[slot]}...,{''.join(src)}...->{''.join(idx)}l..."
            out = out - np.einsum(expr, gamma, arr)
    return out


def covariant_derivative(field, metric):
    """Levi-Civita derivative of a scalar, vector or covector field.

    Returns a field of rank ``(sigma, tau + 1)`` whose last component index
    is the direction of differentiation:
    ``(grad u)_i = d_i u``, ``(grad w)_{ji} = d_i w_j - Gamma^k_{ij} w_k``,
    ``(grad X)^j_i = d_i X^j + Gamma^j_{ik} X^k``.
    """
    if sum(field.rank) > 1:
        raise UnsupportedRank(f"covariant derivative of rank {field.rank} is not supported")
    data = [_nabla_chart(metric, c, a, gam, field.rank) for c, a, gam in
            zip(field.atlas.charts, field.data, metric.christoffel)]
    return ChartField(field.atlas, data, (field.rank[0], field.rank[1] + 1))


def hessian(field, metric):
    """nabla nabla u for a scalar field (rank (0, 2))."""
    return covariant_derivative(covariant_derivative(field, metric), metric)


def metric_compatibility_defect(metric, mask=None):
    """sup |nabla g| over chart domains (zero for the Levi-Civita connection)."""
    worst = 0.0
    for chart, g, gamma in zip(metric.atlas.charts, metric.data, metric.christoffel):
        ng = _nabla_chart(metric, chart, g, gamma, (0, 2))
        sel = chart.mask if mask is None else mask[chart.id]
        worst = max(worst, float(np.max(np.abs(ng[..., sel]))))
    return worst


# integration -------------------------------------------------------------------

def integrate(atlas, field, metric=None):
    """Integral of a scalar field against dV_g with pi^2-weighted chart quadrature."""
    if atlas.localization is None:
        raise SingularMetric("atlas has no localization system")
    vol = metric.volume_element if metric is not None else [1.0] * len(atlas.charts)
    return float(sum(np.sum(q * dv * f) for q, dv, f in
                     zip(atlas.localization.quadrature, vol, field.data)))


def volume(atlas, metric=None):
    return integrate(atlas, ChartField.constant(atlas, 1.0), metric)
