"""Chart atlases for the flat torus and the round 3-sphere.

Every chart carries a uniform tensor-product grid.  Torus charts are cubes
(or one periodic cube when a single chart covers everything); sphere charts
are stereographic balls sampled on the enclosing cube, with the nodes outside
the ball acting as ghost nodes whose values always come from the other chart.

Multi-chart torus grids are snapped onto one global lattice, so a transition
maps grid nodes onto grid nodes; the requested overlap is adjusted to the
nearest value compatible with that alignment and reported as
``Atlas.params["overlap_effective"]``.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import fd
from .errors import DegenerateCover, InvalidParameter, OutOfOverlap

TWO_PI = 2.0 * np.pi
DEFAULT_SHRINK = 0.7
MEMBERSHIP_TOL = 1e-10
SNAP_TOL = 1e-9


def identity_metric(m):
    def metric_eval(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m)).copy()
    return metric_eval


def stereographic_metric(radius):
    def metric_eval(x):
        x = np.asarray(x, dtype=float)
        m = x.shape[-1]
        factor = 4.0 * radius ** 2 / (1.0 + np.sum(x * x, axis=-1)) ** 2
        return factor[..., None, None] * np.eye(m)
    return metric_eval


class Chart:
    """One coordinate patch with its sampling grid.

    ``domain`` is ``"periodic"``, ``"cube"`` or ``"ball"``.  For cubes
    ``half_width`` is the half side length, for balls the radius.
    """

    def __init__(self, id, domain, center, half_width, lo, hi, grid_shape,
                 metric_eval, shrink_factor=DEFAULT_SHRINK):
        self.id = int(id)
        self.domain = domain
        self.center = np.asarray(center, dtype=float)
        self.half_width = float(half_width)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.grid_shape = tuple(int(n) for n in grid_shape)
        self.metric_eval = metric_eval
        self.shrink_factor = float(shrink_factor)

    @property
    def dim(self):
        return len(self.grid_shape)

    @property
    def periodic(self):
        return self.domain == "periodic"

    @cached_property
    def spacing(self):
        n = np.asarray(self.grid_shape, dtype=float)
        if self.periodic:
            return (self.hi - self.lo) / n
        return (self.hi - self.lo) / (n - 1)

    @cached_property
    def axes(self):
        return [self.lo[d] + self.spacing[d] * np.arange(n)
                for d, n in enumerate(self.grid_shape)]

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(m,) + grid_shape``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    def points(self):
        """Node coordinates as an ``(N, m)`` array in C order."""
        return self.coords.reshape(self.dim, -1).T

    def scaled_radius(self, x):
        """Distance from the chart centre in units of ``half_width``."""
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.zeros(x.shape[:-1])
        offset = x - self.center
        if self.domain == "cube":
            return np.max(np.abs(offset), axis=-1) / self.half_width
        return np.sqrt(np.sum(offset * offset, axis=-1)) / self.half_width

    def contains(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.ones(x.shape[:-1], dtype=bool)
        with np.errstate(invalid="ignore"):
            inside = self.scaled_radius(x) * self.half_width <= self.half_width + tol
        return inside & np.all(np.isfinite(x), axis=-1)

    def in_shrunk(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.ones(x.shape[:-1], dtype=bool)
        with np.errstate(invalid="ignore"):
            inside = (self.scaled_radius(x) * self.half_width
                      <= self.shrink_factor * self.half_width + tol)
        return inside & np.all(np.isfinite(x), axis=-1)

    @cached_property
    def mask(self):
        """Grid nodes that belong to the chart domain (all nodes except ball ghosts)."""
        return self.contains(np.moveaxis(self.coords, 0, -1))

    def to_index(self, x):
        """Fractional grid index of points ``x`` (shape ``(..., m)``)."""
        idx = (np.asarray(x, dtype=float) - self.lo) / self.spacing
        near = np.round(idx)
        return np.where(np.abs(idx - near) < SNAP_TOL, near, idx)

    def metric(self, x):
        return self.metric_eval(x)

    @cached_property
    def trapezoid_weights(self):
        """Tensor-product quadrature weights: rectangle rule if periodic, trapezoid otherwise."""
        w = np.ones(self.grid_shape)
        for d, n in enumerate(self.grid_shape):
            wd = np.full(n, self.spacing[d])
            if not self.periodic:
                wd[0] *= 0.5
                wd[-1] *= 0.5
            shape = [1] * self.dim
            shape[d] = n
            w = w * wd.reshape(shape)
        return w

    def describe(self):
        return {
            "id": self.id,
            "domain": self.domain,
            "center": self.center.tolist(),
            "half_width": self.half_width,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "grid_shape": list(self.grid_shape),
            "shrink_factor": self.shrink_factor,
        }


class TransitionMap:
    """Closed-form coordinate change from chart ``source`` to chart ``target``."""

    def __init__(self, source, target, kind):
        if kind not in ("identity", "translation", "inversion"):
            raise ValueError(kind)
        self.source = source
        self.target = target
        self.kind = kind

    @property
    def pair(self):
        return (self.source.id, self.target.id)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "translation":
            lift = np.round((self.target.center - x) / TWO_PI)
            return x + TWO_PI * lift
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return x / r2

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        m = x.shape[-1]
        eye = np.broadcast_to(np.eye(m), x.shape[:-1] + (m, m))
        if self.kind != "inversion":
            return eye.copy()
        r2 = np.sum(x * x, axis=-1)[..., None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return (eye - 2.0 * x[..., :, None] * x[..., None, :] / r2) / r2

    def valid(self, x, tol=MEMBERSHIP_TOL):
        x = np.asarray(x, dtype=float)
        return self.source.contains(x, tol) & self.target.contains(self.forward(x), tol)


@dataclass
class LocalizationSystem:
    """Cutoff families on chart grids.

    ``pi2[k]`` is pi_k squared at every node of chart k (ghost nodes included),
    ``pi``, ``zeta`` and ``varpi`` the nested cutoffs.  ``plans[k]`` lists,
    for chart k, the neighbouring charts that contribute to the blended value
    at each node, as ``BlendTerm`` records.
    """

    pi2: list
    pi: list
    zeta: list
    varpi: list
    derivative_bounds: dict
    plans: list
    partition_residual: float
    quadrature: list


@dataclass
class BlendTerm:
    """Contribution of chart ``source`` to the nodes ``nodes`` of a target chart.

    ``coords`` are fractional grid indices in the source chart (shape
    ``(m, n)``) and ``weights`` the values of pi^2 of the source chart there.
    ``jac[a, i]`` is dy^a/dx^i for the map x (target) -> y (source) and
    ``jac_inv`` its inverse; both are ``None`` for translations.
    ``nodes is None`` marks the identity term covering the full grid.
    """

    source: int
    nodes: object
    coords: object
    weights: np.ndarray
    jac: object = None
    jac_inv: object = None
    integral: bool = False


@dataclass
class RegularityReport:
    manifold: str
    dim: int
    k_max: int
    cover_ok: bool
    uncovered_samples: int
    multiplicity_reported: int
    multiplicity_measured: int
    transition_bounds: list
    round_trip_defect: float
    metric_equivalence: float
    metric_eigen_range: tuple
    metric_bounds: list
    localization_bounds: dict = field(default_factory=dict)

    @property
    def flags(self):
        finite = lambda xs: bool(np.all(np.isfinite(xs)))
        return {
            "R1_shrinkable_cover": self.cover_ok,
            "R1_finite_multiplicity": self.multiplicity_measured == self.multiplicity_reported,
            "R2_transition_bounds": finite(self.transition_bounds),
            "R3_metric_equivalence": bool(np.isfinite(self.metric_equivalence)
                                         and self.metric_equivalence >= 1.0),
            "R4_metric_bounds": finite(self.metric_bounds),
        }

    @property
    def passed(self):
        return all(self.flags.values())

    def to_dict(self):
        return {
            "manifold": self.manifold,
            "dim": self.dim,
            "k_max": self.k_max,
            "cover_ok": self.cover_ok,
            "uncovered_samples": self.uncovered_samples,
            "multiplicity_reported": self.multiplicity_reported,
            "multiplicity_measured": self.multiplicity_measured,
            "transition_bounds": [float(v) for v in self.transition_bounds],
            "round_trip_defect": float(self.round_trip_defect),
            "metric_equivalence": float(self.metric_equivalence),
            "metric_eigen_range": [float(v) for v in self.metric_eigen_range],
            "metric_bounds": [float(v) for v in self.metric_bounds],
            "localization_bounds": {k: [float(v) for v in vs]
                                    for k, vs in self.localization_bounds.items()},
            "flags": self.flags,
            "passed": self.passed,
        }


class Atlas:
    """A finite atlas with transition maps, neighbour sets and cutoffs."""

    def __init__(self, manifold, dim, charts, transitions, neighbors,
                 multiplicity, params):
        self.manifold = manifold
        self.dim = int(dim)
        self.charts = list(charts)
        self.transitions = dict(transitions)
        self.neighbors = {k: tuple(v) for k, v in neighbors.items()}
        self.multiplicity = int(multiplicity)
        self.params = dict(params)
        self.localization = None

    def __len__(self):
        return len(self.charts)

    def __repr__(self):
        return (f"Atlas({self.manifold!r}, dim={self.dim}, charts={len(self.charts)}, "
                f"grid={self.charts[0].grid_shape})")

    def transition(self, kappa, eta):
        try:
            return self.transitions[(kappa, eta)]
        except KeyError:
            raise OutOfOverlap(f"chart {eta} is not a neighbour of chart {kappa}") from None

    @property
    def h(self):
        return min(float(np.min(c.spacing)) for c in self.charts)

    @property
    def single_periodic(self):
        return len(self.charts) == 1 and self.charts[0].periodic

    def embed(self, kappa, x):
        """Ambient description of chart points (x has shape ``(m,) + grid`` or ``(m, ...)``).

        Torus: the m angles reduced mod 2 pi.  Sphere: the m+1 coordinates of
        the point on the sphere of the atlas radius in R^{m+1}.
        """
        x = np.asarray(x, dtype=float)
        if self.manifold == "torus":
            return [np.mod(xd, TWO_PI) for xd in x]
        radius = self.params["radius"]
        r2 = np.sum(x * x, axis=0)
        spatial = [radius * 2.0 * xd / (1.0 + r2) for xd in x]
        height = radius * (r2 - 1.0) / (r2 + 1.0)
        if kappa == 1:
            height = -height
        return spatial + [height]

    def owned_masks(self):
        """Canonical sample: domain nodes of chart k not contained in a lower chart."""
        masks = []
        for chart in self.charts:
            pts = np.moveaxis(chart.coords, 0, -1)
            own = chart.mask.copy()
            for eta in self.neighbors[chart.id]:
                if eta >= chart.id:
                    continue
                y = self.transition(chart.id, eta).forward(pts)
                own &= ~self.charts[eta].contains(y)
            masks.append(own)
        return masks

    def active_masks(self):
        """Nodes where the chart's own cutoff is nonzero."""
        if self.localization is None:
            raise DegenerateCover("atlas has no localization system")
        return [p2 > 0.0 for p2 in self.localization.pi2]

    def to_document(self):
        doc = {"manifold": self.manifold, "dim": self.dim}
        doc.update({k: v for k, v in self.params.items() if k != "overlap_effective"})
        doc["charts"] = [c.describe() for c in self.charts]
        return doc

    def dumps(self):
        return json.dumps(self.to_document(), indent=2, sort_keys=True)

    @classmethod
    def from_document(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        if doc["manifold"] == "torus":
            atlas = build_torus_atlas(doc["dim"], doc["charts_per_axis"], doc["overlap"],
                                      doc["grid_n"], shrink=doc["shrink"],
                                      strict=doc.get("strict", True))
        elif doc["manifold"] == "sphere":
            atlas = build_sphere_atlas(doc["radius"], doc["grid_n"], shrink=doc["shrink"],
                                       chart_radius=doc["chart_radius"])
        else:
            raise InvalidParameter(f"unknown manifold {doc['manifold']!r}")
        if "charts" in doc and [c.describe() for c in atlas.charts] != doc["charts"]:
            raise InvalidParameter("chart layout in document does not match its parameters")
        return atlas


def _multi_index(k, n_c, m):
    return np.unravel_index(k, (n_c,) * m)


def build_torus_atlas(m=3, charts_per_axis=1, overlap=0.25, grid_n=24,
                      shrink=DEFAULT_SHRINK, strict=True, localize=True):
    """Atlas of the flat torus (R / 2 pi Z)^m by translated cubes.

    With ``charts_per_axis == 1`` the torus is one periodic chart.  Otherwise
    chart grids share a common lattice; see the module docstring for how the
    overlap is snapped.  ``strict=False`` skips the range checks on
    ``overlap`` so degenerate atlases can be built for validation.
    """
    if m < 3:
        raise InvalidParameter(f"dimension must be >= 3, got {m}")
    if charts_per_axis < 1:
        raise InvalidParameter("charts_per_axis must be >= 1")
    if not 0.0 < shrink < 1.0:
        raise InvalidParameter("shrink factor must lie in (0, 1)")
    grid_n = int(grid_n)
    params = {"charts_per_axis": int(charts_per_axis), "overlap": float(overlap),
              "grid_n": grid_n, "shrink": float(shrink), "strict": bool(strict)}
    metric_eval = identity_metric(m)
    if charts_per_axis == 1:
        if grid_n < 8:
            raise InvalidParameter("grid_n must be >= 8")
        chart = Chart(0, "periodic", np.full(m, np.pi), np.pi, np.zeros(m),
                      np.full(m, TWO_PI), (grid_n,) * m, metric_eval, shrink)
        atlas = Atlas("torus", m, [chart], {(0, 0): TransitionMap(chart, chart, "identity")},
                      {0: (0,)}, 1, dict(params, overlap_effective=0.0))
        if localize:
            build_localization(atlas)
        return atlas

    if strict and not 0.0 < overlap < 0.5:
        raise InvalidParameter(f"overlap must lie in (0, 0.5), got {overlap}")
    if not 0.0 <= overlap < 0.5:
        raise InvalidParameter(f"overlap must lie in [0, 0.5), got {overlap}")
    n_c = int(charts_per_axis)
    cells = int(round((grid_n - 1) / (1.0 + 2.0 * overlap)))
    if cells < 1 or grid_n - 1 >= 2 * cells:
        raise InvalidParameter("grid_n and overlap do not give a valid chart layout")
    across = grid_n - cells
    if strict and across < 8:
        raise InvalidParameter(
            f"grid too coarse: {across} points across each overlap, need at least 8")
    L = TWO_PI / n_c
    h = L / cells
    half = 0.5 * (grid_n - 1) * h
    overlap_eff = 0.5 * ((grid_n - 1) / cells - 1.0)
    charts = []
    for k in range(n_c ** m):
        idx = np.array(_multi_index(k, n_c, m), dtype=float)
        center = (idx + 0.5) * L
        charts.append(Chart(k, "cube", center, half, center - half, center + half,
                            (grid_n,) * m, metric_eval, shrink))
    transitions, neighbors = {}, {}
    for a in charts:
        nbrs = []
        for b in charts:
            gap = np.abs(np.mod(a.center - b.center + np.pi, TWO_PI) - np.pi)
            if np.all(gap <= 2.0 * half + MEMBERSHIP_TOL):
                nbrs.append(b.id)
                kind = "identity" if a.id == b.id else "translation"
                transitions[(a.id, b.id)] = TransitionMap(a, b, kind)
        neighbors[a.id] = tuple(nbrs)
    multiplicity = 2 ** m
    atlas = Atlas("torus", m, charts, transitions, neighbors, multiplicity,
                  dict(params, overlap_effective=overlap_eff))
    if localize:
        cover = _cover_defects(atlas)
        if cover == 0:
            build_localization(atlas)
    return atlas


def build_sphere_atlas(radius=1.0, grid_n=32, shrink=DEFAULT_SHRINK, chart_radius=2.0,
                       localize=True):
    """Two stereographic charts of the round 3-sphere of the given radius.

    Chart 0 projects from the north pole, chart 1 from the south pole; both
    are truncated to the ball of chart radius ``chart_radius`` and the
    transition between them is the inversion x -> x / |x|^2.
    """
    if not radius > 0.0:
        raise InvalidParameter(f"radius must be positive, got {radius}")
    if grid_n < 16:
        raise InvalidParameter(f"grid_n must be >= 16, got {grid_n}")
    if shrink * chart_radius <= 1.0:
        raise InvalidParameter("shrunk balls must reach past the unit sphere to cover")
    m = 3
    metric_eval = stereographic_metric(radius)
    charts = [Chart(k, "ball", np.zeros(m), chart_radius, np.full(m, -chart_radius),
                    np.full(m, chart_radius), (int(grid_n),) * m, metric_eval, shrink)
              for k in range(2)]
    transitions = {
        (0, 0): TransitionMap(charts[0], charts[0], "identity"),
        (1, 1): TransitionMap(charts[1], charts[1], "identity"),
        (0, 1): TransitionMap(charts[0], charts[1], "inversion"),
        (1, 0): TransitionMap(charts[1], charts[0], "inversion"),
    }
    params = {"radius": float(radius), "grid_n": int(grid_n), "shrink": float(shrink),
              "chart_radius": float(chart_radius)}
    atlas = Atlas("sphere", m, charts, transitions, {0: (0, 1), 1: (0, 1)}, 2, params)
    if localize:
        build_localization(atlas)
    return atlas


def transition_apply(atlas, kappa, eta, x):
    """Map chart-``kappa`` coordinates ``x`` into chart ``eta``."""
    tmap = atlas.transition(kappa, eta)
    x = np.asarray(x, dtype=float)
    ok = tmap.valid(x)
    if not np.all(ok):
        raise OutOfOverlap(f"point(s) outside the overlap of charts {kappa} and {eta}")
    return tmap.forward(x)


# --- localization -----------------------------------------------------------------

def _bump(t):
    """exp(-1/(1-t^2)) for |t| < 1, zero elsewhere (elementwise)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0.0, np.exp(-1.0 / np.where(s > 0.0, s, 1.0)), 0.0)
        b = np.where(s < 1.0, np.exp(-1.0 / np.where(s < 1.0, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def _plateau(t, inner, outer):
    """1 for t <= inner, 0 for t >= outer, smooth in between."""
    return _smooth_step((outer - np.asarray(t, dtype=float)) / (outer - inner))


def chart_bump(chart, x):
    """Bump b_k supported on the shrunk patch of ``chart`` (zero outside)."""
    x = np.asarray(x, dtype=float)
    if chart.periodic:
        return np.ones(x.shape[:-1])
    rho = chart.shrink_factor * chart.half_width
    with np.errstate(invalid="ignore"):
        offset = (x - chart.center) / rho
    offset = np.where(np.isfinite(offset), offset, 2.0)
    if chart.domain == "cube":
        return np.prod(_bump(offset), axis=-1)
    return _bump(np.sqrt(np.sum(offset * offset, axis=-1)))


def plateau_radii(shrink):
    """Scaled radii (zeta plateau, zeta support = varpi plateau, varpi support)."""
    step = (1.0 - shrink) / 3.0
    return shrink, shrink + step, shrink + 2.0 * step


def _cutoff(chart, x, inner, outer):
    x = np.asarray(x, dtype=float)
    if chart.periodic:
        return np.ones(x.shape[:-1])
    t = np.abs(x - chart.center) / chart.half_width
    if chart.domain == "cube":
        return np.prod(_plateau(t, inner, outer), axis=-1)
    return _plateau(np.sqrt(np.sum(t * t, axis=-1)), inner, outer)


def _cover_defects(atlas):
    missing = 0
    for chart in atlas.charts:
        pts = np.moveaxis(chart.coords, 0, -1)[chart.mask]
        covered = np.zeros(len(pts), dtype=bool)
        for eta in atlas.neighbors[chart.id]:
            y = atlas.transition(chart.id, eta).forward(pts)
            covered |= atlas.charts[eta].in_shrunk(y)
        missing += int(np.count_nonzero(~covered))
    return missing


def build_localization(atlas, k_max=2):
    """Construct pi, zeta, varpi on every chart grid and attach them to ``atlas``."""
    pi2, pis, zetas, varpis, plans = [], [], [], [], []
    residual = 0.0
    inner, middle, outer = plateau_radii(atlas.charts[0].shrink_factor)
    for chart in atlas.charts:
        pts = np.moveaxis(chart.coords, 0, -1)
        contributions = []
        for eta in atlas.neighbors[chart.id]:
            tmap = atlas.transition(chart.id, eta)
            y = tmap.forward(pts)
            b = chart_bump(atlas.charts[eta], y)
            contributions.append((eta, tmap, y, b))
        total = sum(c[3] for c in contributions)
        if np.any(total[chart.mask] < 1e-300):
            raise DegenerateCover(f"chart {chart.id}: sum of bumps vanishes at a domain node")
        if np.any(total < 1e-300):
            raise DegenerateCover(f"chart {chart.id}: ghost node not covered by any chart")
        plan = []
        own = None
        for eta, tmap, y, b in contributions:
            w = b / total
            if eta == chart.id:
                own = w
                plan.insert(0, BlendTerm(eta, None, None, w))
                continue
            nodes = np.flatnonzero(w > 0.0)
            if nodes.size == 0:
                continue
            ysel = y.reshape(-1, atlas.dim)[nodes]
            coords = atlas.charts[eta].to_index(ysel).T
            integral = bool(np.all(coords == np.round(coords)))
            jac = jac_inv = None
            if tmap.kind == "inversion":
                xsel = pts.reshape(-1, atlas.dim)[nodes]
                jac = np.moveaxis(tmap.jacobian(xsel), 0, -1)
                jac_inv = np.moveaxis(atlas.transition(eta, chart.id).jacobian(ysel), 0, -1)
            plan.append(BlendTerm(eta, nodes, coords, w.reshape(-1)[nodes], jac, jac_inv,
                                  integral))
        residual = max(residual, float(np.max(np.abs(sum(c[3] for c in contributions) / total - 1.0))))
        pi2.append(own)
        pis.append(np.sqrt(own))
        zetas.append(_cutoff(chart, pts, inner, middle))
        varpis.append(_cutoff(chart, pts, middle, outer))
        plans.append(plan)
    bounds = {"pi": [], "zeta": [], "varpi": []}
    for name, family in (("pi", pis), ("zeta", zetas), ("varpi", varpis)):
        for k in range(k_max + 1):
            bounds[name].append(max(_sup_derivatives(c, arr, k)
                                    for c, arr in zip(atlas.charts, family)))
    quadrature = [c.trapezoid_weights * p for c, p in zip(atlas.charts, pi2)]
    loc = LocalizationSystem(pi2, pis, zetas, varpis, bounds, plans, residual, quadrature)
    atlas.localization = loc
    return loc


def _sup_derivatives(chart, arr, k, order=4, mask=None):
    """max over |alpha| = k of sup |d^alpha arr| on the chart domain."""
    mask = chart.mask if mask is None else mask
    layer = [np.asarray(arr, dtype=float)]
    for _ in range(k):
        layer = [fd.derivative(a, d, chart.spacing[d], order, chart.periodic)
                 for a in layer for d in range(chart.dim)]
    return max(float(np.max(np.abs(a[mask]))) if np.any(mask) else 0.0 for a in layer)


# --- validation ---------------------------------------------------------------------

def validate_uniform_regularity(atlas, k_max=2):
    """Measure the uniform-regularity constants of ``atlas`` on its grids."""
    if not 0 <= k_max <= 4:
        raise InvalidParameter("k_max must lie in 0..4")
    uncovered = _cover_defects(atlas)
    measured = 0
    for chart in atlas.charts:
        pts = np.moveaxis(chart.coords, 0, -1)[chart.mask]
        count = np.zeros(len(pts), dtype=int)
        for other in atlas.charts:
            if (chart.id, other.id) in atlas.transitions:
                y = atlas.transition(chart.id, other.id).forward(pts)
                count += other.contains(y)
        measured = max(measured, int(count.max()))

    trans_bounds = np.zeros(k_max + 1)
    round_trip = 0.0
    for (a, b), tmap in atlas.transitions.items():
        src = atlas.charts[a]
        pts = np.moveaxis(src.coords, 0, -1)
        valid = tmap.valid(pts)
        if not np.any(valid):
            continue
        y = tmap.forward(pts)
        trans_bounds[0] = max(trans_bounds[0], float(np.max(np.abs(y[valid]))))
        if k_max >= 1:
            jac = np.moveaxis(tmap.jacobian(pts), (-2, -1), (0, 1))
            jac = np.where(np.isfinite(jac), jac, 0.0)
            # derivatives on the valid region, away from the singular point of inversions
            for k in range(1, k_max + 1):
                comps = [jac[i, j] for i in range(atlas.dim) for j in range(atlas.dim)]
                sup = max(_sup_derivatives(src, c, k - 1, mask=valid & src.mask) for c in comps)
                trans_bounds[k] = max(trans_bounds[k], sup)
        if a != b:
            back = atlas.transition(b, a).forward(y[valid])
            round_trip = max(round_trip, float(np.max(np.abs(back - pts[valid]))))

    lam_min, lam_max = np.inf, 0.0
    metric_bounds = np.zeros(k_max + 1)
    for chart in atlas.charts:
        g = chart.metric(np.moveaxis(chart.coords, 0, -1))
        eig = np.linalg.eigvalsh(g[chart.mask])
        lam_min = min(lam_min, float(eig.min()))
        lam_max = max(lam_max, float(eig.max()))
        comps = [g[..., i, j] for i in range(atlas.dim) for j in range(atlas.dim)]
        for k in range(k_max + 1):
            metric_bounds[k] = max(metric_bounds[k],
                                   max(_sup_derivatives(chart, c, k) for c in comps))
    equivalence = max(lam_max, 1.0 / lam_min)
    loc_bounds = atlas.localization.derivative_bounds if atlas.localization else {}
    return RegularityReport(
        manifold=atlas.manifold, dim=atlas.dim, k_max=k_max,
        cover_ok=uncovered == 0, uncovered_samples=uncovered,
        multiplicity_reported=atlas.multiplicity, multiplicity_measured=measured,
        transition_bounds=trans_bounds.tolist(), round_trip_defect=round_trip,
        metric_equivalence=equivalence, metric_eigen_range=(lam_min, lam_max),
        metric_bounds=metric_bounds.tolist(), localization_bounds=loc_bounds,
    )
