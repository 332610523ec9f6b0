"""Global fields stored as per-chart grid arrays.

A field of rank (sigma, tau) keeps, for each chart, an array of shape
``(m,) * (sigma + tau) + grid_shape``: contravariant indices first, then
covariant ones, then the grid axes.

Cross-chart evaluation uses the localization plans of the atlas.  The
canonical reassembly :func:`blend` is ``retract(coretract(u))`` evaluated
with pi_k^2 taken in closed form at the transported point, so constants are
reproduced exactly.
"""

import json
import math
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage, sparse

from . import fd
from .errors import (InvalidExponent, InvalidParameter, PositivityViolation,
                     RadiusViolation, UnsupportedRank)


class ChartField:
    """A tensor field of rank ``(sigma, tau)`` with ``sigma + tau <= 2``."""

    def __init__(self, atlas, data, rank=(0, 0)):
        rank = (int(rank[0]), int(rank[1]))
        if sum(rank) > 2 or min(rank) < 0:
            raise UnsupportedRank(f"rank {rank} not supported (sigma + tau <= 2)")
        if len(data) != len(atlas.charts):
            raise ValueError("need one array per chart")
        comp = (atlas.dim,) * sum(rank)
        arrays = []
        for chart, arr in zip(atlas.charts, data):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != comp + chart.grid_shape:
                raise ValueError(f"chart {chart.id}: expected shape {comp + chart.grid_shape}, "
                                 f"got {arr.shape}")
            arrays.append(arr)
        self.atlas = atlas
        self.data = arrays
        self.rank = rank

    # construction -----------------------------------------------------------

    @classmethod
    def zeros(cls, atlas, rank=(0, 0)):
        comp = (atlas.dim,) * sum(rank)
        return cls(atlas, [np.zeros(comp + c.grid_shape) for c in atlas.charts], rank)

    @classmethod
    def constant(cls, atlas, value):
        return cls(atlas, [np.full(c.grid_shape, float(value)) for c in atlas.charts])

    @classmethod
    def from_function(cls, atlas, func):
        """Scalar field from ``func(*ambient)`` where ``ambient`` is ``atlas.embed``."""
        data = []
        for chart in atlas.charts:
            vals = func(*atlas.embed(chart.id, chart.coords))
            data.append(np.broadcast_to(np.asarray(vals, dtype=float), chart.grid_shape).copy())
        return cls(atlas, data)

    @classmethod
    def from_chart_function(cls, atlas, func, rank=(0, 0)):
        """Field from ``func(chart, coords)`` returning the component array."""
        return cls(atlas, [func(c, c.coords) for c in atlas.charts], rank)

    # arithmetic --------------------------------------------------------------

    def _combine(self, other, op):
        if isinstance(other, ChartField):
            return ChartField(self.atlas, [op(a, b) for a, b in zip(self.data, other.data)],
                              self.rank if other.rank == (0, 0) else other.rank)
        return ChartField(self.atlas, [op(a, other) for a in self.data], self.rank)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._combine(other, np.divide)

    def __neg__(self):
        return ChartField(self.atlas, [-a for a in self.data], self.rank)

    def map(self, func):
        return ChartField(self.atlas, [func(a) for a in self.data], self.rank)

    def copy(self):
        return ChartField(self.atlas, [a.copy() for a in self.data], self.rank)

    def min(self):
        return min(float(a.min()) for a in self.data)

    def max(self):
        return max(float(a.max()) for a in self.data)

    def sup(self):
        return max(float(np.abs(a).max()) for a in self.data)

    def max_difference(self, other):
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.data, other.data))

    def __repr__(self):
        return f"ChartField(rank={self.rank}, charts={len(self.data)})"


# interpolation and transport ------------------------------------------------------

def interpolate(chart, arr, coords, order=1):
    """Sample ``arr`` (components + grid) at fractional indices ``coords`` (m, n)."""
    arr = np.asarray(arr, dtype=float)
    m = chart.dim
    comp_shape = arr.shape[:-m]
    coords = np.asarray(coords, dtype=float)
    flat = arr.reshape((-1,) + chart.grid_shape)
    if np.all(coords == np.round(coords)):
        idx = coords.astype(int)
        if chart.periodic:
            idx = np.mod(idx, np.asarray(chart.grid_shape)[:, None])
        out = flat[(slice(None),) + tuple(idx)]
        return out.reshape(comp_shape + coords.shape[1:])
    mode = "grid-wrap" if chart.periodic else "nearest"
    out = np.stack([ndimage.map_coordinates(a, coords, order=order, mode=mode,
                                            prefilter=order > 1) for a in flat])
    return out.reshape(comp_shape + coords.shape[1:])


def interpolation_matrix(chart, coords):
    """Sparse matrix of multilinear interpolation at fractional indices ``coords``.

    Equivalent to ``interpolate(..., order=1)`` on the flattened grid.
    """
    coords = np.asarray(coords, dtype=float)
    m, n = coords.shape
    shape = np.asarray(chart.grid_shape)
    base = np.floor(coords)
    frac = coords - base
    base = base.astype(int)
    rows, cols, vals = [], [], []
    for corner in np.ndindex(*(2,) * m):
        idx = base + np.asarray(corner)[:, None]
        if chart.periodic:
            idx = np.mod(idx, shape[:, None])
        else:
            idx = np.clip(idx, 0, shape[:, None] - 1)
        w = np.ones(n)
        for d, bit in enumerate(corner):
            w = w * (frac[d] if bit else 1.0 - frac[d])
        keep = w != 0.0
        rows.append(np.flatnonzero(keep))
        cols.append(np.ravel_multi_index(tuple(idx[:, keep]), chart.grid_shape))
        vals.append(w[keep])
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, int(np.prod(shape))))


def _sample(atlas, term, arr, order):
    """Values of a source-chart array at the nodes of a blend term."""
    src = atlas.charts[term.source]
    if order != 1:
        return interpolate(src, arr, term.coords, order)
    mat = getattr(term, "_matrix", None)
    if mat is None:
        mat = interpolation_matrix(src, term.coords)
        term._matrix = mat
    m = src.dim
    flat = arr.reshape((-1, mat.shape[1]))
    return (mat @ flat.T).T.reshape(arr.shape[:-m] + (mat.shape[0],))


def transport(values, term, rank):
    """Convert components sampled in chart ``term.source`` into the target chart."""
    if term.jac is None or sum(rank) == 0:
        return values
    sigma, tau = rank
    out = values
    for slot in range(sigma + tau):
        mat = term.jac_inv if slot < sigma else np.swapaxes(term.jac, 0, 1)
        # contract the component axis ``slot`` with mat[new, old, n]
        out = np.moveaxis(out, slot, 0)
        out = np.einsum("ab...n,b...n->a...n", mat, out)
        out = np.moveaxis(out, 0, slot)
    return out


def _terms(atlas, kappa):
    if atlas.localization is None:
        raise InvalidParameter("atlas has no localization system")
    return atlas.localization.plans[kappa]


def blend(field, interp_order=1):
    """Reassemble a field from all charts: sum_eta pi_eta^2 * u_eta at each node."""
    atlas = field.atlas
    if atlas.single_periodic:
        return field.copy()
    comp = (atlas.dim,) * sum(field.rank)
    out = []
    for chart in atlas.charts:
        acc = None
        for term in _terms(atlas, chart.id):
            if term.nodes is None:
                acc = term.weights * field.data[chart.id]
                acc = acc.reshape(comp + (-1,))
                continue
            vals = _sample(atlas, term, field.data[term.source], interp_order)
            acc[..., term.nodes] += term.weights * transport(vals, term, field.rank)
        out.append(acc.reshape(comp + chart.grid_shape))
    return ChartField(atlas, out, field.rank)


def coretract(field):
    """Localized chart pieces pi_k * u_k."""
    loc = field.atlas.localization
    if loc is None:
        raise InvalidParameter("atlas has no localization system")
    return [p * u for p, u in zip(loc.pi, field.data)]


def retract(pieces, atlas, rank=(0, 0), interp_order=1):
    """Assemble sum_k pi_k * v_k from chart pieces supported in supp(pi_k)."""
    comp = (atlas.dim,) * sum(rank)
    loc = atlas.localization
    if loc is None:
        raise InvalidParameter("atlas has no localization system")
    out = []
    for chart in atlas.charts:
        acc = None
        for term in loc.plans[chart.id]:
            if term.nodes is None:
                acc = (loc.pi[chart.id] * pieces[chart.id]).reshape(comp + (-1,))
                continue
            vals = _sample(atlas, term, pieces[term.source], interp_order)
            acc[..., term.nodes] += np.sqrt(term.weights) * transport(vals, term, rank)
        out.append(acc.reshape(comp + chart.grid_shape))
    return ChartField(atlas, out, rank)


def consistency_defect(field, interp_order=1):
    """Largest mismatch between a chart value and the transported neighbour value.

    Only nodes where the neighbour's cutoff is nonzero are compared.
    """
    atlas = field.atlas
    worst = 0.0
    for chart in atlas.charts:
        flat = field.data[chart.id].reshape((atlas.dim,) * sum(field.rank) + (-1,))
        for term in _terms(atlas, chart.id):
            if term.nodes is None:
                continue
            vals = _sample(atlas, term, field.data[term.source], interp_order)
            diff = flat[..., term.nodes] - transport(vals, term, field.rank)
            worst = max(worst, float(np.max(np.abs(diff))))
    return worst


# Hoelder norms ---------------------------------------------------------------

@dataclass
class HolderEstimate:
    s: float
    localization: str
    sup_norms: list
    seminorm_table: list
    per_chart: list
    value: float
    ratio: float = None
    extra: dict = dc_field(default_factory=dict)

    @property
    def seminorm(self):
        return self.seminorm_table[0][1] if self.seminorm_table else 0.0

    def to_dict(self):
        out = {
            "s": self.s,
            "localization": self.localization,
            "value": self.value,
            "seminorm": self.seminorm,
            "sup_norms": list(self.sup_norms),
            "per_chart": list(self.per_chart),
            "seminorm_table": [[d, v] for d, v in self.seminorm_table],
        }
        if self.ratio is not None:
            out["ratio_to_plain"] = self.ratio
        return out


def _default_deltas(h):
    return [8.0 * h, 4.0 * h, 2.0 * h]


def _check_deltas(deltas, h):
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise InvalidParameter("delta list must be strictly decreasing")
    if deltas[-1] < 2.0 * h * (1.0 - 1e-12):
        raise InvalidParameter(f"smallest delta {deltas[-1]} below twice the grid spacing {h}")
    return deltas


def _derivative_layers(chart, arr, k, order):
    """All partial derivatives of exact order 0..k (lists per order)."""
    layers = [[arr]]
    for _ in range(k):
        layers.append([fd.derivative(a, d, chart.spacing[d], order, chart.periodic)
                       for a in layers[-1] for d in range(chart.dim)])
    return layers


def grid_seminorm_by_offset(chart, arr, exponent, delta_max):
    """Pairwise difference quotients over offsets with every component in (0, delta_max).

    Returns a list of ``(offset_max, value)``: ``offset_max`` is the largest
    offset component and ``value`` = max_x |arr(x + h) - arr(x)| / |h|^exponent.
    Only grid-point pairs are scanned; periodic charts wrap.
    """
    m = chart.dim
    hs = chart.spacing
    kmax = [int(math.ceil(delta_max / hs[d] - 1e-12)) - 1 for d in range(m)]
    if min(kmax) < 1:
        return []
    results = []
    for offset in np.ndindex(*[k for k in kmax]):
        steps = np.asarray(offset) + 1
        shift = steps * hs
        if chart.periodic:
            moved = arr
            for d in range(m):
                moved = np.roll(moved, -int(steps[d]), axis=d)
            diff = np.abs(moved - arr)
        else:
            hi = tuple(slice(int(s), None) for s in steps)
            lo = tuple(slice(None, n - int(s)) for s, n in zip(steps, chart.grid_shape))
            if any(int(s) >= n for s, n in zip(steps, chart.grid_shape)):
                continue
            diff = np.abs(arr[hi] - arr[lo])
        norm = float(np.sqrt(np.sum(shift * shift)))
        results.append((float(np.max(shift)), float(diff.max()) / norm ** exponent))
    return results


def _holder(field, s, deltas, weights, name, fd_order):
    if field.rank != (0, 0):
        raise UnsupportedRank("Hoelder estimates are implemented for scalar fields")
    if not 0.0 <= s < 3.0:
        raise InvalidExponent(f"Hoelder exponent must lie in [0, 3), got {s}")
    atlas = field.atlas
    h = atlas.h
    deltas = _check_deltas(_default_deltas(h) if deltas is None else deltas, h)
    k = int(math.floor(s))
    frac = s - k
    sup_norms = [0.0] * (k + 1)
    table = {d: 0.0 for d in deltas}
    per_chart = []
    for chart, w, u in zip(atlas.charts, weights, field.data):
        piece = w * u
        layers = _derivative_layers(chart, piece, k, fd_order)
        chart_sup = 0.0
        for j, layer in enumerate(layers):
            val = max(float(np.max(np.abs(a))) for a in layer)
            sup_norms[j] = max(sup_norms[j], val)
            chart_sup = max(chart_sup, val)
        chart_semi = 0.0
        if frac > 0.0:
            for a in layers[k]:
                scan = grid_seminorm_by_offset(chart, a, frac, deltas[0])
                for d in deltas:
                    vals = [v for off, v in scan if off < d * (1.0 - 1e-12)]
                    if vals:
                        table[d] = max(table[d], max(vals))
                        if d == deltas[0]:
                            chart_semi = max(chart_semi, max(vals))
        per_chart.append(chart_sup + chart_semi)
    table_list = [(d, table[d]) for d in deltas]
    value = max(sup_norms) + (table_list[0][1] if frac > 0.0 else 0.0)
    return HolderEstimate(s, name, sup_norms, table_list, per_chart, value)


def holder_norm(field, s, deltas=None, fd_order=4):
    """Localized Hoelder norm estimate using the pi_k-localized pieces."""
    loc = field.atlas.localization
    return _holder(field, s, deltas, loc.pi, "pi", fd_order)


def holder_norm_breve(field, s, deltas=None, fd_order=4):
    """As :func:`holder_norm` with pi_k^2 in place of pi_k; also reports the ratio."""
    loc = field.atlas.localization
    est = _holder(field, s, deltas, loc.pi2, "pi2", fd_order)
    plain = _holder(field, s, deltas, loc.pi, "pi", fd_order)
    est.ratio = est.value / plain.value if plain.value > 0.0 else (1.0 if est.value == 0.0 else math.inf)
    est.extra["plain_value"] = plain.value
    return est


def little_holder_modulus(field, s, deltas=None, fd_order=4):
    """Table of (delta, [d^alpha u]^delta_{s - floor(s)}) maximized over charts."""
    est = holder_norm(field, s, deltas, fd_order)
    return est.seminorm_table


def modulus_slope(table):
    """Least-squares log-log slope of a modulus table (zero entries are skipped)."""
    pts = [(math.log(d), math.log(v)) for d, v in table if v > 0.0]
    if len(pts) < 2:
        return 0.0
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


# power maps -----------------------------------------------------------------

def _check_floor(field, b):
    for chart, arr in zip(field.atlas.charts, field.data):
        idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
        val = float(arr[idx])
        if not val > b:
            raise PositivityViolation(
                f"field value {val} at chart {chart.id}, index {idx} is not above {b}",
                chart=chart.id, index=idx, value=val)


def power_map(field, alpha, b):
    """Pointwise u**alpha for fields with inf u > b > 0."""
    if not b > 0.0:
        raise InvalidParameter("lower bound b must be positive")
    _check_floor(field, b)
    return field.map(lambda a: np.power(a, alpha))


def _binomials(alpha, n_terms):
    out = np.empty(n_terms + 1)
    out[0] = 1.0
    for n in range(1, n_terms + 1):
        out[n] = out[n - 1] * (alpha - n + 1) / n
    return out


def power_map_series(field, center, alpha, n_terms):
    """Binomial expansion of u**alpha about ``center``.

    Returns ``(field, truncation_bound)`` where the bound majorizes the
    neglected tail sum_{n > N} |binom(alpha, n)| rho^n sup(center^alpha).
    """
    if isinstance(center, (int, float)):
        center = ChartField.constant(field.atlas, center)
    if not center.min() > 0.0:
        raise InvalidParameter("expansion centre must be positive")
    ratio = max(float(np.max(np.abs((u - c) / c))) for u, c in zip(field.data, center.data))
    if not ratio < 1.0:
        raise RadiusViolation(f"|(u - u0)/u0| reaches {ratio}, outside the series radius")
    coeffs = _binomials(alpha, n_terms)
    out = []
    for u, c in zip(field.data, center.data):
        q = (u - c) / c
        acc = np.zeros_like(u)
        for a in coeffs[::-1]:
            acc = acc * q + a
        out.append(np.power(c, alpha) * acc)
    # tail: explicit terms until |binom| is nonincreasing, then geometric
    top = max(float(np.max(np.power(c, alpha))) for c in center.data)
    n0 = max(n_terms + 1, int(math.ceil(alpha)) + 1)
    tail_coeffs = _binomials(alpha, n0)
    tail = sum(abs(tail_coeffs[n]) * ratio ** n for n in range(n_terms + 1, n0))
    tail += abs(tail_coeffs[n0]) * ratio ** n0 / (1.0 - ratio)
    return ChartField(field.atlas, out), top * tail


# snapshots ------------------------------------------------------------------

def write_snapshot(field, directory, time=None):
    """Write one text file per chart plus ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for chart, arr in zip(field.atlas.charts, field.data):
        name = f"chart_{chart.id:03d}.txt"
        header = (f"chart {chart.id}\nrank {field.rank[0]} {field.rank[1]}\n"
                  f"shape {' '.join(str(n) for n in arr.shape)}")
        np.savetxt(os.path.join(directory, name), arr.reshape(-1), fmt="%.17g", header=header)
        names.append(name)
    manifest = {"atlas": field.atlas.to_document(), "rank": list(field.rank),
                "charts": names, "time": time}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def read_snapshot(directory, atlas=None):
    """Read a snapshot written by :func:`write_snapshot`."""
    from .atlas import Atlas

    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if atlas is None:
        atlas = Atlas.from_document(manifest["atlas"])
    data = []
    for chart, name in zip(atlas.charts, manifest["charts"]):
        path = os.path.join(directory, name)
        shape = None
        with open(path) as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                parts = line[1:].split()
                if parts and parts[0] == "shape":
                    shape = tuple(int(p) for p in parts[1:])
        values = np.loadtxt(path, ndmin=1)
        data.append(values.reshape(shape))
    return ChartField(atlas, data, tuple(manifest["rank"]))
