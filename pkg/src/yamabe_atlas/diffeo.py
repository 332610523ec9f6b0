"""Truncated translations and the spacetime pullback u_{lambda, mu}.

A :class:`TranslationFamily` is anchored at a chart point ``x_p`` and uses
normalized coordinates ``w = (x - x_p) / d``, where ``d`` is the distance
from ``x_p`` to the chart boundary.  In these coordinates

    theta_mu(w) = w + chi(w) mu,    rho_lambda(t) = t + xi(t) lambda,

and the pullback replaces u by ``vs * u o theta_mu + (1 - vs) * u`` with the
cutoff ``vs`` supported in B(0, 5 eps0).  :func:`smoothness_probe` estimates
derivatives of (lambda, mu) -> u_{lambda, mu} by finite differences and
checks their convergence order.
"""

import csv
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import interpolate as sp_interp

from .atlas import _smooth_step
from .errors import (AnchorTooCloseToBoundary, IntervalViolation, InvalidParameter,
                     NonConvergence, ParameterOutOfRange, TraceCoverage)
from .fields import ChartField, interpolate

QUINTIC_SLOPE = 1.875  # max of d/ds (6 s^5 - 15 s^4 + 10 s^3)
MIN_ANCHOR_CELLS = 4


def _quintic_step(s):
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def plateau(t, inner, outer, profile="quintic"):
    """1 on [0, inner], 0 on [outer, inf), monotone in between."""
    s = (outer - np.asarray(t, dtype=float)) / (outer - inner)
    return _quintic_step(s) if profile == "quintic" else _smooth_step(s)


def _profile_slope(profile):
    if profile == "quintic":
        return QUINTIC_SLOPE
    s = np.linspace(0.0, 1.0, 20001)
    return float(np.max(np.abs(np.gradient(_smooth_step(s), s))))


class TranslationFamily:
    """Cutoffs and radii of the truncated translation family at one anchor."""

    def __init__(self, atlas, chart, x_p, d, t0, eps0, r, r_requested, interval, profile):
        self.atlas = atlas
        self.chart = chart
        self.x_p = np.asarray(x_p, dtype=float)
        self.d = float(d)
        self.t0 = float(t0)
        self.eps0 = float(eps0)
        self.r = float(r)
        self.r_requested = float(r_requested)
        self.interval = tuple(interval)
        self.profile = profile

    @property
    def grad_chi_sup(self):
        return _profile_slope(self.profile) / self.eps0

    # cutoffs in normalized coordinates
    def chi(self, w):
        return plateau(np.linalg.norm(w, axis=-1), self.eps0, 2.0 * self.eps0, self.profile)

    def varsigma(self, w):
        return plateau(np.linalg.norm(w, axis=-1), 4.0 * self.eps0, 5.0 * self.eps0, self.profile)

    def xi(self, t):
        return plateau(np.abs(np.asarray(t, dtype=float) - self.t0), self.eps0,
                       2.0 * self.eps0, self.profile)

    def to_normalized(self, x):
        off = np.asarray(x, dtype=float) - self.x_p
        if self.chart.periodic:
            period = self.chart.hi - self.chart.lo
            off = np.mod(off + 0.5 * period, period) - 0.5 * period
        return off / self.d

    def from_normalized(self, w):
        return self.x_p + self.d * np.asarray(w, dtype=float)

    def describe(self):
        return {"chart": self.chart.id, "x_p": self.x_p.tolist(), "d": self.d, "t0": self.t0,
                "eps0": self.eps0, "r": self.r, "r_requested": self.r_requested,
                "interval": list(self.interval), "profile": self.profile,
                "grad_chi_sup": self.grad_chi_sup}


def _boundary_distance(chart, x):
    if chart.periodic:
        return float(np.min(0.5 * (chart.hi - chart.lo)))
    off = x - chart.center
    if chart.domain == "cube":
        return float(np.min(chart.half_width - np.abs(off)))
    return float(chart.half_width - np.linalg.norm(off))


def build_family(atlas, p, t0, eps0, r, chart=0, interval=(0.0, 1.0), profile="quintic"):
    """Anchor a translation family at point ``p`` given in coordinates of ``chart``.

    The anchor chart is the neighbour in which ``p`` is farthest from the
    boundary.  ``r`` is capped just below 1 / (2 sup |grad chi|).
    """
    if not 0.0 < eps0 or not 5.0 * eps0 < 1.0:
        raise InvalidParameter(f"eps0 must satisfy 0 < 5 eps0 < 1, got {eps0}")
    if r <= 0.0:
        raise InvalidParameter("parameter radius r must be positive")
    if profile not in ("quintic", "smooth"):
        raise InvalidParameter(f"unknown cutoff profile {profile!r}")
    lo, hi = interval
    if not (lo < t0 - 3.0 * eps0 and t0 + 3.0 * eps0 < hi):
        raise IntervalViolation(
            f"B(t0, 3 eps0) = ({t0 - 3 * eps0}, {t0 + 3 * eps0}) is not inside ({lo}, {hi})")
    p = np.asarray(p, dtype=float)
    best = None
    for eta in atlas.neighbors[chart]:
        tmap = atlas.transition(chart, eta)
        if not tmap.valid(p):
            continue
        x = tmap.forward(p)
        target = atlas.charts[eta]
        if not target.contains(x):
            continue
        if target.periodic:
            x = np.mod(x - target.lo, target.hi - target.lo) + target.lo
        dist = _boundary_distance(target, x)
        if best is None or dist > best[2] + 1e-12:
            best = (target, x, dist)
    if best is None:
        raise InvalidParameter("anchor point lies in no chart")
    target, x_p, d = best
    if d < MIN_ANCHOR_CELLS * float(np.max(target.spacing)):
        raise AnchorTooCloseToBoundary(
            f"anchor is {d} from the chart boundary, below {MIN_ANCHOR_CELLS} grid cells")
    cap = 1.0 / (2.0 * _profile_slope(profile) / eps0)
    r_eff = min(float(r), cap * (1.0 - 1e-9))
    return TranslationFamily(atlas, target, x_p, d, t0, eps0, r_eff, r, interval, profile)


def _check_mu(family, mu):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.shape != (family.atlas.dim,):
        raise InvalidParameter(f"mu must have {family.atlas.dim} components")
    if np.linalg.norm(mu) > family.r * (1.0 + 1e-12):
        raise ParameterOutOfRange(f"|mu| = {np.linalg.norm(mu)} exceeds r = {family.r}")
    return mu


def theta(family, mu, w):
    """theta_mu(w) = w + chi(w) mu in normalized coordinates."""
    mu = _check_mu(family, mu)
    w = np.asarray(w, dtype=float)
    return w + family.chi(w)[..., None] * mu


def theta_inverse(family, mu, y, tol=1e-12, max_iter=100):
    """Solve w + chi(w) mu = y by the contraction w <- y - chi(w) mu."""
    mu = _check_mu(family, mu)
    y = np.asarray(y, dtype=float)
    w = y.copy()
    for _ in range(max_iter):
        new = y - family.chi(w)[..., None] * mu
        if np.max(np.abs(new - w), initial=0.0) <= tol:
            return new
        w = new
    raise NonConvergence("theta_inverse did not converge in 100 iterations")


# traces ----------------------------------------------------------------------

class SampledTrace:
    """Fields u(t_i, .) at increasing times, interpolated in t by a spline.

    ``degree`` is the spline degree in time (3 gives the cubic resampling).
    """

    def __init__(self, times, fields, degree=3):
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) <= 0.0):
            raise InvalidParameter("trace times must increase strictly")
        self.atlas = fields[0].atlas
        self.times = times
        self.degree = int(degree)
        self._splines = [sp_interp.make_interp_spline(times, np.stack([f.data[k] for f in fields]),
                                                      k=self.degree, axis=0)
                         for k in range(len(self.atlas.charts))]

    @property
    def window(self):
        return float(self.times[0]), float(self.times[-1])

    def field(self, t):
        self._cover(t)
        return ChartField(self.atlas, [s(t) for s in self._splines])

    def _cover(self, t):
        lo, hi = self.window
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise TraceCoverage(f"time {t} outside the sampled window [{lo}, {hi}]")

    def sample(self, t, kappa, x, order=1, base=None):
        """Values at chart-kappa points ``x`` (shape (n, m)) at time ``t``."""
        data = base.data[kappa] if base is not None else self._splines[kappa](t)
        chart = self.atlas.charts[kappa]
        return interpolate(chart, data, chart.to_index(x).T, order)


class FunctionTrace:
    """Trace given by a closed form ``func(t, *ambient)``; sampled exactly."""

    def __init__(self, atlas, func, window=(-math.inf, math.inf)):
        self.atlas = atlas
        self.func = func
        self._window = tuple(window)

    @property
    def window(self):
        return self._window

    def field(self, t):
        lo, hi = self.window
        if not lo <= t <= hi:
            raise TraceCoverage(f"time {t} outside [{lo}, {hi}]")
        return ChartField.from_function(self.atlas, lambda *a: self.func(t, *a))

    def sample(self, t, kappa, x, order=1, base=None):
        pts = np.moveaxis(np.asarray(x, dtype=float), -1, 0)
        return np.asarray(self.func(t, *self.atlas.embed(kappa, pts)), dtype=float)


# pullbacks ---------------------------------------------------------------------

def _modified(family, mu, chart_id, sampler, current):
    """New values on chart ``chart_id`` nodes inside the support of varsigma."""
    atlas = family.atlas
    anchor = family.chart.id
    chart = atlas.charts[chart_id]
    if (chart_id, anchor) not in atlas.transitions:
        return None
    pts = chart.points()
    tmap = atlas.transition(chart_id, anchor)
    ok = tmap.valid(pts)
    x = np.zeros_like(pts)
    x[ok] = tmap.forward(pts[ok])
    w = family.to_normalized(x)
    sel = ok & (np.linalg.norm(w, axis=-1) < 5.0 * family.eps0)
    if not np.any(sel):
        return None
    ws = w[sel]
    moved = family.from_normalized(ws + family.chi(ws)[:, None] * mu)
    vs = family.varsigma(ws)
    flat = current.reshape(-1)
    values = vs * sampler(anchor, moved) + (1.0 - vs) * flat[sel]
    return np.flatnonzero(sel), values


def pullback_space(family, mu, field, order=1, sampler=None):
    """Theta*_mu u = phi* theta_mu* psi* (vs u) + (1 - vs) u."""
    mu = _check_mu(family, mu)
    if not np.any(mu):
        return field.copy()
    if sampler is None:
        def sampler(kappa, x):
            chart = field.atlas.charts[kappa]
            return interpolate(chart, field.data[kappa], chart.to_index(x).T, order)
    out = []
    for chart, arr in zip(field.atlas.charts, field.data):
        new = arr.copy()
        mod = _modified(family, mu, chart.id, sampler, arr)
        if mod is not None:
            new.reshape(-1)[mod[0]] = mod[1]
        out.append(new)
    return ChartField(field.atlas, out)


def _check_params(family, lam, mu):
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if math.hypot(lam, float(np.linalg.norm(mu))) > family.r * (1.0 + 1e-12):
        raise ParameterOutOfRange(f"|(lambda, mu)| exceeds r = {family.r}")
    return mu


def pullback_spacetime(family, lam, mu, trace, times, order=1):
    """u_{lambda, mu}(t) = Theta*_{xi(t) mu} u(rho_lambda(t)) at each time."""
    mu = _check_params(family, lam, mu)
    out = []
    for t in times:
        xi = float(family.xi(t))
        s = t + xi * lam
        base = trace.field(s)
        if xi == 0.0 or not (lam or np.any(mu)):
            out.append(base)
            continue
        sampler = lambda kappa, x, s=s, base=base: trace.sample(s, kappa, x, order, base)
        out.append(pullback_space(family, xi * mu, base, order, sampler))
    return out


# smoothness probe ----------------------------------------------------------------

STENCILS = {
    1: ((1, 0.5), (-1, -0.5)),
    2: ((1, 1.0), (0, -2.0), (-1, 1.0)),
    3: ((2, 0.5), (1, -1.0), (-1, 1.0), (-2, -0.5)),
}
TARGET_ORDER = 2.0


@dataclass
class ProbeReport:
    rows: list
    verdicts: dict
    deltas: list
    derivative_norms: dict  # order -> sup norm per parameter axis (lambda, mu_1, ...)
    family: dict
    max_order: int
    consistent: bool
    notes: list = dc_field(default_factory=list)

    def to_dict(self):
        return {"max_order": self.max_order, "consistent": self.consistent,
                "verdicts": {str(k): v for k, v in self.verdicts.items()},
                "deltas": self.deltas,
                "derivative_norms": {str(k): v for k, v in self.derivative_norms.items()},
                "family": self.family, "notes": self.notes}

    def write_csv(self, path):
        cols = ["order", "axis", "base", "delta", "difference_norm", "estimated_order"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.rows:
                w.writerow([row[c] if isinstance(row[c], (int, str)) else repr(float(row[c]))
                            for c in cols])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _probe_times(family, n_times):
    t0, e = family.t0, family.eps0
    return np.unique(np.concatenate([np.linspace(t0 - 2.5 * e, t0 + 2.5 * e, n_times), [t0]]))


def _parameter_map(family, trace, times, order):
    """Closure P -> values of u_{P} on anchor-chart nodes in B(0, 5 eps0)."""
    anchor = family.chart
    pts = anchor.points()
    w = family.to_normalized(pts)
    sel = np.linalg.norm(w, axis=-1) < 5.0 * family.eps0
    ws = w[sel]
    chi = family.chi(ws)[:, None]
    vs = family.varsigma(ws)
    x_sel = pts[sel]

    def evaluate(P):
        lam, mu = P[0], P[1:]
        rows = []
        for t in times:
            xi = float(family.xi(t))
            s = t + xi * lam
            base = trace.sample(s, anchor.id, x_sel, order)
            moved = family.from_normalized(ws + chi * (xi * mu))
            rows.append(vs * trace.sample(s, anchor.id, moved, order) + (1.0 - vs) * base)
        return np.stack(rows)

    return evaluate


def smoothness_probe(family, trace, max_order=2, delta=None, n_times=41, order=None,
                     bases=range(-3, 4), noise=None):
    """Finite-difference check that (lambda, mu) -> u_{lambda, mu} is C^k.

    For every derivative order j <= ``max_order``, parameter axis and base
    point ``b * delta / 8`` on that axis, second-order central differences
    are taken at steps delta, delta/2 and delta/4.  The observed order
    log2(e1 / e2) of the successive differences should be 2; a pair of
    differences below the round-off floor counts as converged.
    """
    if not 1 <= max_order <= 3:
        raise InvalidParameter("max_order must lie in 1..3")
    if delta is None:
        delta = family.r / 8.0
    if delta > family.r / 8.0 * (1.0 + 1e-12):
        raise InvalidParameter(f"delta must be at most r/8 = {family.r / 8.0}")
    order = max(3, max_order + 2) if order is None else order
    times = _probe_times(family, n_times)
    lo, hi = trace.window
    reach = max(abs(b) for b in bases) * delta / 8.0 + 2.0 * delta
    if times[0] - reach < lo or times[-1] + reach > hi:
        raise TraceCoverage("trace window does not cover the probe times")
    evaluate = _parameter_map(family, trace, times, order)
    dim = family.atlas.dim + 1
    center = evaluate(np.zeros(dim))
    scale = max(float(np.max(np.abs(center))), 1e-300)
    deltas = [delta, delta / 2.0, delta / 4.0]
    cache = {}

    def value(P):
        key = tuple(np.round(np.asarray(P) / (delta / 32.0)).astype(int))
        if key not in cache:
            cache[key] = evaluate(np.asarray(key, dtype=float) * (delta / 32.0))
        return cache[key]

    rows, verdicts, norms, notes = [], {}, {}, []
    for j in range(1, max_order + 1):
        ok_all = True
        dnorm = [0.0] * dim
        for axis in range(dim):
            e = np.eye(dim)[axis]
            for b in bases:
                base = e * (b * delta / 8.0)
                ests = []
                for dl in deltas:
                    acc = sum(c * value(base + s * dl * e) for s, c in STENCILS[j])
                    ests.append(acc / dl ** j)
                e1 = float(np.max(np.abs(ests[0] - ests[1])))
                e2 = float(np.max(np.abs(ests[1] - ests[2])))
                floor = (noise if noise is not None else 1e3 * np.finfo(float).eps) * scale \
                    / deltas[-1] ** j
                if e1 <= floor and e2 <= floor:
                    est, ok = float("nan"), True
                elif e2 == 0.0:
                    est, ok = float("inf"), True
                else:
                    est = math.log2(e1 / e2) if e1 > 0.0 else float("-inf")
                    ok = abs(est - TARGET_ORDER) <= 0.5 or e2 <= floor
                ok_all &= ok
                dnorm[axis] = max(dnorm[axis], float(np.max(np.abs(ests[-1]))))
                for dl, e_ in ((deltas[0], e1), (deltas[1], e2)):
                    rows.append({"order": j, "axis": axis, "base": b, "delta": dl,
                                 "difference_norm": e_, "estimated_order": est})
        verdicts[j] = "consistent" if ok_all else "inconsistent"
        norms[j] = dnorm
    consistent = all(v == "consistent" for v in verdicts.values())
    return ProbeReport(rows, verdicts, deltas, norms, family.describe(), max_order,
                       consistent, notes)
