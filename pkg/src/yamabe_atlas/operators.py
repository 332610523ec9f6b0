"""Scalar differential operators of order at most two on an atlas.

An operator is stored chart by chart as coefficient arrays

    A_k u = a2^{jk} d_j d_k u + a1^i d_i u + a0 u

and applied matrix-free: each chart applies its local operator with
finite differences, then the chart results are blended with the
localization weights.  Dense matrices are only formed inside
:func:`resolvent_probe`.
"""

import csv
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import linalg

from . import fd
from .errors import InvalidParameter, UnsupportedRank
from .fields import ChartField, blend, interpolate
from .geometry import scalar_curvature


def conformal_constant(m):
    """c(m) = (m - 2) / (4 (m - 1))."""
    if m < 3:
        raise InvalidParameter(f"dimension must be >= 3, got {m}")
    return (m - 2.0) / (4.0 * (m - 1.0))


class LocalOperator:
    """Coefficients of one chart-local operator (any of them may be ``None``)."""

    def __init__(self, chart, a2=None, a1=None, a0=None):
        self.chart = chart
        m = chart.dim
        if a2 is not None:
            a2 = np.broadcast_to(np.asarray(a2, dtype=float), (m, m) + chart.grid_shape)
            a2 = 0.5 * (a2 + np.swapaxes(a2, 0, 1))
        if a1 is not None:
            a1 = np.broadcast_to(np.asarray(a1, dtype=float), (m,) + chart.grid_shape)
        if a0 is not None:
            a0 = np.broadcast_to(np.asarray(a0, dtype=float), chart.grid_shape)
        for name, arr in (("a2", a2), ("a1", a1), ("a0", a0)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise InvalidParameter(f"chart {chart.id}: non-finite {name} coefficients")
        self.a2, self.a1, self.a0 = a2, a1, a0
        # skip stencils whose coefficients vanish identically (diagonal metrics)
        self._mixed = [] if a2 is None else [
            (j, k) for j in range(m) for k in range(j + 1, m) if np.any(a2[j, k] != 0.0)]
        self._diag = [] if a2 is None else [j for j in range(m) if np.any(a2[j, j] != 0.0)]
        self._drift = [] if a1 is None else [i for i in range(m) if np.any(a1[i] != 0.0)]

    @property
    def id(self):
        return self.chart.id

    @property
    def order(self):
        for order, arr in ((2, self.a2), (1, self.a1), (0, self.a0)):
            if arr is not None and np.any(arr != 0.0):
                return order
        return 0

    def scaled(self, factor):
        f = np.asarray(factor, dtype=float)
        mul = lambda a: None if a is None else a * f
        return LocalOperator(self.chart, mul(self.a2), mul(self.a1), mul(self.a0))

    def apply(self, u, fd_order=4):
        chart = self.chart
        h, per = chart.spacing, chart.periodic
        out = np.zeros(chart.grid_shape)
        first = {}
        for d in sorted(set(self._drift) | {j for j, _ in self._mixed}):
            first[d] = fd.derivative(u, d, h[d], fd_order, per)
        for j in self._diag:
            out += self.a2[j, j] * fd.second_derivative(u, j, h[j], fd_order, per)
        for j, k in self._mixed:
            out += 2.0 * self.a2[j, k] * fd.derivative(first[j], k, h[k], fd_order, per)
        for i in self._drift:
            out += self.a1[i] * first[i]
        if self.a0 is not None:
            out += self.a0 * u
        return out


class GlobalOperator:
    """A scalar operator given by one :class:`LocalOperator` per chart."""

    def __init__(self, atlas, local, fd_order=4, metric=None, name="operator"):
        if len(local) != len(atlas.charts):
            raise ValueError("need one local operator per chart")
        fd.check_order(fd_order)
        self.atlas = atlas
        self.local = list(local)
        self.fd_order = int(fd_order)
        self.metric = metric
        self.name = name

    @property
    def order(self):
        return max(op.order for op in self.local)

    def apply_local(self, field):
        if field.rank != (0, 0):
            raise UnsupportedRank("operators act on scalar fields")
        return [op.apply(u, self.fd_order) for op, u in zip(self.local, field.data)]

    def apply(self, field, blended=True):
        out = ChartField(self.atlas, self.apply_local(field))
        if blended and not self.atlas.single_periodic:
            out = blend(out)
        return out

    def __call__(self, field):
        return self.apply(field)

    def scaled(self, factor, name=None):
        """The operator u -> factor * A u (``factor`` a number or scalar ChartField)."""
        if isinstance(factor, ChartField):
            local = [op.scaled(f) for op, f in zip(self.local, factor.data)]
        else:
            local = [op.scaled(factor) for op in self.local]
        return GlobalOperator(self.atlas, local, self.fd_order, self.metric,
                              name or f"scaled {self.name}")

    def __neg__(self):
        return self.scaled(-1.0, f"-{self.name}")

    def coefficients(self, chart_id):
        op = self.local[chart_id]
        return op.a2, op.a1, op.a0


def apply(op, field):
    """Blended application of ``op`` to ``field``."""
    return op.apply(field)


def zero_operator(atlas, fd_order=4):
    return GlobalOperator(atlas, [LocalOperator(c) for c in atlas.charts], fd_order,
                          name="zero")


def laplace_beltrami(metric):
    """Delta_g = g^{jk} (d_j d_k - Gamma^i_{jk} d_i)."""
    local = []
    for chart, ginv, gamma in zip(metric.atlas.charts, metric.inverse, metric.christoffel):
        a1 = -np.einsum("jk...,ijk...->i...", ginv, gamma)
        local.append(LocalOperator(chart, ginv, a1, None))
    return GlobalOperator(metric.atlas, local, metric.fd_order, metric, "laplace-beltrami")


def conformal_laplacian(metric, curvature=None):
    """L_g = Delta_g - c(m) R_g."""
    c = conformal_constant(metric.dim)
    if curvature is None:
        curvature = scalar_curvature(metric)
    lap = laplace_beltrami(metric)
    local = [LocalOperator(op.chart, op.a2, op.a1, -c * R)
             for op, R in zip(lap.local, curvature.R)]
    return GlobalOperator(metric.atlas, local, metric.fd_order, metric, "conformal-laplacian")


def assemble_from_tensors(tensors, metric):
    """Operator u -> sum_r <a^r, nabla^r u> for coefficient tensors a^0..a^l.

    ``tensors[r]`` is a rank ``(r, 0)`` ChartField (or ``None``); l <= 2.
    Expanding nabla^2 u = d d u - Gamma d u moves a contraction of a^2 with
    the Christoffel symbols into the first-order coefficient.
    """
    tensors = list(tensors)
    if len(tensors) > 3:
        raise UnsupportedRank("operators of order > 2 are not supported")
    for r, a in enumerate(tensors):
        if a is not None and a.rank != (r, 0):
            raise UnsupportedRank(f"coefficient a^{r} must have rank ({r}, 0), got {a.rank}")
    tensors += [None] * (3 - len(tensors))
    a0, a1, a2 = tensors
    local = []
    for chart, gamma in zip(metric.atlas.charts, metric.christoffel):
        k = chart.id
        c2 = None if a2 is None else a2.data[k]
        c1 = None if a1 is None else a1.data[k]
        if c2 is not None:
            corr = -np.einsum("jk...,ijk...->i...", c2, gamma)
            c1 = corr if c1 is None else c1 + corr
        c0 = None if a0 is None else a0.data[k]
        local.append(LocalOperator(chart, c2, c1, c0))
    return GlobalOperator(metric.atlas, local, metric.fd_order, metric, "assembled")


# transition compatibility ----------------------------------------------------------

def _default_battery(atlas):
    if atlas.manifold == "torus":
        return [lambda x, y, z, *r: np.sin(x) * np.cos(y),
                lambda x, y, z, *r: np.cos(2.0 * z) + 0.5 * np.sin(x + y)]
    return [lambda a, b, c, d: a + 0.5 * d,
            lambda a, b, c, d: a * b + d * d]


def check_transition_compatibility(op, battery=None, margin=None, interp_order=3):
    """Largest mismatch between A_eta u and the transported A_kappa u on overlaps.

    Both sides use the unblended chart-local applications.  Only target
    nodes whose image lies at least ``margin`` cells inside the source grid
    (and which are themselves that far inside their own grid) are compared,
    so one-sided boundary stencils do not enter.
    """
    atlas = op.atlas
    if len(atlas.charts) < 2:
        raise InvalidParameter("compatibility needs at least two charts")
    if margin is None:
        margin = 2 * (op.fd_order // 2) + 2
    battery = _default_battery(atlas) if battery is None else battery
    worst = 0.0
    for func in battery:
        u = ChartField.from_function(atlas, func)
        values = op.apply_local(u)
        for (kappa, eta), tmap in atlas.transitions.items():
            if kappa == eta:
                continue
            src, dst = atlas.charts[kappa], atlas.charts[eta]
            ypts = np.moveaxis(dst.coords, 0, -1)
            inner = _interior(dst, dst.to_index(ypts), margin)
            back = atlas.transition(eta, kappa)
            with np.errstate(divide="ignore", invalid="ignore"):
                x = back.forward(ypts)
            ok = inner & back.valid(ypts) & src.contains(x) & dst.contains(ypts)
            ok &= _interior(src, src.to_index(np.where(np.isfinite(x), x, 0.0)), margin)
            if not np.any(ok):
                continue
            coords = src.to_index(x[ok]).T
            transported = interpolate(src, values[kappa], coords, interp_order)
            diff = np.abs(values[eta][ok] - transported)
            worst = max(worst, float(diff.max()))
    return worst


def _interior(chart, idx, margin):
    if chart.periodic:
        return np.ones(idx.shape[:-1], dtype=bool)
    n = np.asarray(chart.grid_shape)
    return np.all((idx >= margin) & (idx <= n - 1 - margin), axis=-1)


# symbols and ellipticity -------------------------------------------------------------

def _coefficients_at(op, kappa, x):
    chart = op.atlas.charts[kappa]
    coords = chart.to_index(np.asarray(x, dtype=float).reshape(1, -1)).T
    loc = op.local[kappa]
    pick = lambda a: None if a is None else interpolate(chart, a, coords, 1)[..., 0]
    return pick(loc.a2), pick(loc.a1), pick(loc.a0)


def _symbol(order, a2, a1, a0, xi):
    xi = np.asarray(xi, dtype=float)
    if order == 2:
        return complex(-np.einsum("jk...,j...,k...->...", a2, xi, xi))
    if order == 1:
        return complex(-1j * np.einsum("j...,j...->...", a1, xi))
    return complex(0.0 if a0 is None else a0)


def principal_symbol(op, kappa, x, xi, normalize=False):
    """sum_{|alpha| = l} a_alpha(x) (-i xi)^alpha at chart point ``x``."""
    xi = np.asarray(xi, dtype=float)
    if normalize:
        xi = xi / np.linalg.norm(xi)
    a2, a1, a0 = _coefficients_at(op, kappa, x)
    return _symbol(op.order, a2, a1, a0, xi)


@dataclass
class EllipticityReport:
    samples: int
    r: float
    R: float
    theta: float
    E: float
    E_location: dict
    passed: bool
    lambda_moduli: tuple = (0.0, 1.0, 10.0, 100.0)

    def to_dict(self):
        return {"samples": self.samples, "r": self.r, "R": self.R, "theta": self.theta,
                "E": self.E, "E_location": self.E_location, "passed": self.passed,
                "lambda_moduli": list(self.lambda_moduli)}


def ellipticity_check(op, samples=1000, theta=math.pi / 2, seed=0,
                      lambda_moduli=(0.0, 1.0, 10.0, 100.0)):
    """Sample the principal symbol and the symbol resolvent on a sector.

    Covectors are drawn uniformly on the Euclidean unit sphere; when the
    operator carries a metric each one is also renormalized to unit
    g*-length.  ``E`` is the largest (1 + |lambda|) / |lambda + symbol| over
    lambda on the rays of angle 0 and +-theta with the given moduli.
    """
    if samples < 100:
        raise InvalidParameter("ellipticity_check needs at least 100 samples")
    if op.order != 2:
        raise InvalidParameter("ellipticity is checked for second-order operators")
    atlas = op.atlas
    rng = np.random.default_rng(seed)
    active = [np.flatnonzero(m) for m in
              (atlas.active_masks() if atlas.localization is not None
               else [c.mask for c in atlas.charts])]
    weights = np.array([len(a) for a in active], dtype=float)
    rays = [math.cos(t) + 1j * math.sin(t) for t in sorted({0.0, theta, -theta})]
    lams = [mod * ray for mod in lambda_moduli for ray in rays]
    r, R, E = math.inf, 0.0, 0.0
    where = {}
    for _ in range(samples):
        kappa = int(rng.choice(len(active), p=weights / weights.sum()))
        node = int(rng.choice(active[kappa]))
        loc = op.local[kappa]
        a2 = loc.a2.reshape(loc.a2.shape[:2] + (-1,))[..., node]
        xi = rng.normal(size=atlas.dim)
        xi /= np.linalg.norm(xi)
        covectors = [xi]
        if op.metric is not None:
            ginv = op.metric.inverse[kappa].reshape((atlas.dim,) * 2 + (-1,))[..., node]
            covectors.append(xi / math.sqrt(float(xi @ ginv @ xi)))
        for cov in covectors:
            s = complex(-cov @ a2 @ cov)
            r = min(r, s.real)
            R = max(R, abs(s))
            for lam in lams:
                denom = abs(lam + s)
                val = math.inf if denom == 0.0 else (1.0 + abs(lam)) / denom
                if val > E:
                    E = val
                    where = {"chart": kappa, "node": node, "lambda": [lam.real, lam.imag],
                             "symbol": [s.real, s.imag]}
    return EllipticityReport(samples, float(r), float(R), float(theta), float(E), where,
                             bool(r > 0.0), tuple(lambda_moduli))


# resolvent probe ------------------------------------------------------------------

@dataclass
class ResolventProbeReport:
    n_unknowns: int
    lambdas: list
    inverse_norms: list
    bounds: list
    singular: list
    sup_bound: float
    min_real_eigenvalue: float
    max_real_eigenvalue: float
    svd_agreement: float
    sample_solutions: list = dc_field(default_factory=list)

    def to_dict(self):
        return {
            "n_unknowns": self.n_unknowns,
            "lambdas": [[complex(l).real, complex(l).imag] for l in self.lambdas],
            "inverse_norms": self.inverse_norms,
            "bounds": self.bounds,
            "singular": self.singular,
            "sup_bound": self.sup_bound,
            "min_real_eigenvalue": self.min_real_eigenvalue,
            "max_real_eigenvalue": self.max_real_eigenvalue,
            "svd_agreement": self.svd_agreement,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda_re", "lambda_im", "inverse_norm", "bound", "singular"])
            for lam, nrm, b, s in zip(self.lambdas, self.inverse_norms, self.bounds,
                                      self.singular):
                lam = complex(lam)
                w.writerow([repr(lam.real), repr(lam.imag), repr(nrm), repr(b), int(s)])


def assemble_matrix(op):
    """Dense matrix of the blended operator on the stacked chart unknowns."""
    atlas = op.atlas
    sizes = [int(np.prod(c.grid_shape)) for c in atlas.charts]
    n = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    mat = np.empty((n, n))
    zeros = [np.zeros(c.grid_shape) for c in atlas.charts]
    for col in range(n):
        k = int(np.searchsorted(offsets, col, side="right") - 1)
        data = [z.copy() for z in zeros]
        data[k].reshape(-1)[col - offsets[k]] = 1.0
        res = op.apply(ChartField(atlas, data))
        mat[:, col] = np.concatenate([a.reshape(-1) for a in res.data])
    return mat


def _inverse_norm(lu, n, rng, iters=5000, tol=1e-15):
    """Largest singular value of M^{-1} by power iteration on M^{-H} M^{-1}."""
    v = rng.normal(size=n) + 0j
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = linalg.lu_solve(lu, v)
        z = linalg.lu_solve(lu, w, trans=2)
        new = math.sqrt(float(np.linalg.norm(z)))
        v = z / np.linalg.norm(z)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


def resolvent_probe(op, lambdas=(1.0, 10.0, 100.0), seed=0, max_unknowns=20000):
    """Finite-dimensional resolvent bound sup (1 + |lambda|) ||(lambda + A_h)^{-1}||."""
    atlas = op.atlas
    n = sum(int(np.prod(c.grid_shape)) for c in atlas.charts)
    if n > max_unknowns:
        raise InvalidParameter(f"{n} unknowns exceed the dense limit {max_unknowns}")
    rng = np.random.default_rng(seed)
    mat = assemble_matrix(op)
    eig = np.linalg.eigvals(mat)
    norms, bounds, singular, solutions = [], [], [], []
    agreement = 0.0
    eye = np.eye(n)
    for lam in lambdas:
        M = complex(lam) * eye + mat
        svals = np.linalg.svd(M, compute_uv=False)
        if svals[-1] <= 1e-13 * svals[0]:
            norms.append(math.inf)
            bounds.append(math.inf)
            singular.append(True)
            continue
        lu = linalg.lu_factor(M)
        e = rng.normal(size=n)
        e /= np.linalg.norm(e)
        solutions.append(float(np.linalg.norm(linalg.lu_solve(lu, e))))
        est = _inverse_norm(lu, n, rng)
        agreement = max(agreement, abs(est * svals[-1] - 1.0))
        norms.append(est)
        bounds.append((1.0 + abs(lam)) * est)
        singular.append(False)
    finite = [b for b in bounds if math.isfinite(b)]
    return ResolventProbeReport(
        n_unknowns=n, lambdas=list(lambdas), inverse_norms=norms, bounds=bounds,
        singular=singular, sup_bound=max(finite) if finite else math.inf,
        min_real_eigenvalue=float(eig.real.min()), max_real_eigenvalue=float(eig.real.max()),
        svd_agreement=agreement, sample_solutions=solutions)


def fd_laplacian_eigenvalues(shape, spacing, order):
    """Closed-form eigenvalues of the periodic finite-difference -Laplacian."""
    weights = fd.SECOND[order]
    total = 0.0
    grids = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(n) for n in shape], indexing="ij")
    for theta, h in zip(grids, spacing):
        part = sum(w * 2.0 * (1.0 - np.cos((q + 1) * theta)) for q, w in enumerate(weights))
        total = total + part / (h * h)
    return np.sort(total.reshape(-1))
