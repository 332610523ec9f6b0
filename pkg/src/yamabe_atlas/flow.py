"""Unnormalized and normalized Yamabe flow in conformal-factor form.

With g = u^{4/(m-2)} g0 the flows read

    d_t u = u^{-4/(m-2)} L0 u                                  (unnormalized)
    d_t u = u^{-4/(m-2)} (L0 u + c(m) s_g u^{(m+2)/(m-2)})     (normalized)

where L0 is the conformal Laplacian of g0 and s_g the mean scalar
curvature of g.  Time stepping is classical RK4 with a parabolic step
size; positivity is enforced by step rejection.
"""

import ast
import csv
import math
import operator
import time
from dataclasses import dataclass, field as dc_field, asdict

import numpy as np

from .atlas import build_sphere_atlas, build_torus_atlas
from .errors import InvalidParameter, PositivityViolation, StepFailure
from .fields import ChartField, blend, holder_norm, read_snapshot
from .geometry import MetricField, integrate
from .operators import conformal_constant, conformal_laplacian

TRACE_COLUMNS = ("t", "V", "s_g", "Rmin", "Rmax", "umin", "umax", "holder_s", "rhs_sup")
MAX_REJECTIONS = 10


def _check_positive(u, b=0.0):
    for chart, arr in zip(u.atlas.charts, u.data):
        idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
        if not arr[idx] > b:
            raise PositivityViolation(
                f"u = {arr[idx]} at chart {chart.id}, index {idx} is not above {b}",
                chart=chart.id, index=idx, value=float(arr[idx]))


def conformal_metric(u, g0, m=None):
    """g = u^{4/(m-2)} g0."""
    m = g0.dim if m is None else m
    _check_positive(u)
    factor = [np.power(a, 4.0 / (m - 2.0)) for a in u.data]
    return MetricField(g0.atlas, [f * g for f, g in zip(factor, g0.data)], g0.fd_order)


def conformal_scalar_curvature(u, g0, L0, m=None, b=0.0, L0u=None):
    """R_g = -(1/c(m)) u^{-(m+2)/(m-2)} L0 u."""
    m = g0.dim if m is None else m
    _check_positive(u, b)
    L0u = L0.apply(u) if L0u is None else L0u
    c = conformal_constant(m)
    return ChartField(u.atlas, [-np.power(a, -(m + 2.0) / (m - 2.0)) * l / c
                                for a, l in zip(u.data, L0u.data)])


def yamabe_rhs(u, L0, m=None, b=0.0, L0u=None):
    """u^{-4/(m-2)} L0 u."""
    m = u.atlas.dim if m is None else m
    _check_positive(u, b)
    L0u = L0.apply(u) if L0u is None else L0u
    return ChartField(u.atlas, [np.power(a, -4.0 / (m - 2.0)) * l
                                for a, l in zip(u.data, L0u.data)])


def volume_density(u, m):
    """u^{2m/(m-2)}, the density of dV_g against dV_g0."""
    return u.map(lambda a: np.power(a, 2.0 * m / (m - 2.0)))


def conformal_volume(u, g0, m=None):
    m = g0.dim if m is None else m
    return integrate(u.atlas, volume_density(u, m), g0)


def s_g_average(u, g0, L0, m=None, b=0.0, L0u=None):
    """s_g = (1/V(g)) int R_g dV_g."""
    m = g0.dim if m is None else m
    R = conformal_scalar_curvature(u, g0, L0, m, b, L0u)
    dens = volume_density(u, m)
    return integrate(u.atlas, R * dens, g0) / integrate(u.atlas, dens, g0)


def normalized_rhs(u, g0, L0, m=None, b=0.0, L0u=None):
    """u^{-4/(m-2)} (L0 u + c(m) s_g u^{(m+2)/(m-2)})."""
    m = g0.dim if m is None else m
    _check_positive(u, b)
    L0u = L0.apply(u) if L0u is None else L0u
    s = s_g_average(u, g0, L0, m, b, L0u)
    c = conformal_constant(m)
    p = (m + 2.0) / (m - 2.0)
    return ChartField(u.atlas, [np.power(a, -4.0 / (m - 2.0)) * (l + c * s * np.power(a, p))
                                for a, l in zip(u.data, L0u.data)])


def volume_rate(u, rhs, g0, m=None):
    """dV/dt = (2m/(m-2)) int u^{(m+2)/(m-2)} d_t u dV_g0."""
    m = g0.dim if m is None else m
    w = u.map(lambda a: np.power(a, (m + 2.0) / (m - 2.0)))
    return 2.0 * m / (m - 2.0) * integrate(u.atlas, w * rhs, g0)


def A_functional(u, h, g0, L0, m=None, b=0.0, both=False):
    """A(u)h in the g0-measure form (1 / int u^{2m/(m-2)} dV_g0) int u L0 h dV_g0.

    With ``both=True`` also returns the dV_g form
    (1/V(g)) int u^{-(m+2)/(m-2)} L0 h dV_g.
    """
    m = g0.dim if m is None else m
    _check_positive(u, b)
    L0h = L0.apply(h)
    dens = volume_density(u, m)
    V = integrate(u.atlas, dens, g0)
    second = integrate(u.atlas, u * L0h, g0) / V
    if not both:
        return second
    weight = u.map(lambda a: np.power(a, -(m + 2.0) / (m - 2.0)))
    first = integrate(u.atlas, weight * L0h * dens, g0) / V
    return first, second


# initial data expressions ------------------------------------------------------

_FUNCS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
          "sqrt": np.sqrt, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh,
          "abs": np.abs, "arctan": np.arctan}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def evaluate_expression(expr, variables):
    """Evaluate an arithmetic expression over numpy arrays without ``eval``.

    Allowed: numbers, the given variables, ``pi``, ``e``, + - * / **,
    and the functions in ``_FUNCS``.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise InvalidParameter(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in variables:
                return variables[node.id]
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise InvalidParameter(f"unknown name {node.id!r} in expression")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise InvalidParameter(f"unsupported construct in expression {expr!r}")

    return ev(tree)


def field_from_expression(atlas, expr):
    """Scalar field from an expression in the ambient coordinates x1, x2, ...

    On the torus x1..xm are the angles in [0, 2 pi); on the sphere x1..x4
    are the coordinates of the point in R^4.
    """
    def func(*coords):
        names = {f"x{i + 1}": c for i, c in enumerate(coords)}
        return evaluate_expression(expr, names)

    return ChartField.from_function(atlas, func)


# configuration and state ----------------------------------------------------------

@dataclass
class FlowConfig:
    manifold: str = "torus"
    m: int = 3
    grid_n: int = 24
    charts_per_axis: int = 1
    overlap: float = 0.25
    radius: float = 1.0
    kind: str = "normalized"
    u0: str = "1 + 0.2*sin(x1)"
    u0_snapshot: str = None
    b: float = 0.1
    T: float = 1.0
    cfl_factor: float = 0.1
    dt_max: float = None
    output_every: int = 10
    holder_s: float = 0.5
    fd_order: int = 4
    max_steps: int = 1000000

    def validate(self):
        if self.manifold not in ("torus", "sphere"):
            raise InvalidParameter(f"manifold must be 'torus' or 'sphere', got {self.manifold!r}")
        if self.kind not in ("unnormalized", "normalized"):
            raise InvalidParameter(f"kind must be 'unnormalized' or 'normalized', got {self.kind!r}")
        if self.manifold == "sphere" and self.m != 3:
            raise InvalidParameter("the sphere atlas is three-dimensional")
        if self.m < 3:
            raise InvalidParameter("m must be >= 3")
        if not 0.0 < self.cfl_factor <= 0.5:
            raise InvalidParameter(f"cfl_factor must lie in (0, 0.5], got {self.cfl_factor}")
        if not self.b > 0.0:
            raise InvalidParameter("positivity floor b must be positive")
        if not self.T > 0.0:
            raise InvalidParameter("horizon T must be positive")
        if self.dt_max is not None and not self.dt_max > 0.0:
            raise InvalidParameter("dt_max must be positive")
        if self.holder_s is not None and not 0.0 < self.holder_s < 1.0:
            raise InvalidParameter("holder_s must lie in (0, 1)")
        if self.output_every < 1:
            raise InvalidParameter("output_every must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class FlowState:
    t: float
    u: ChartField
    dt: float = 0.0
    steps: int = 0
    rejections: int = 0


@dataclass
class FlowTrace:
    rows: list = dc_field(default_factory=list)
    status: str = "running"
    final: FlowState = None
    message: str = ""

    def append(self, row):
        if self.rows and not row["t"] > self.rows[-1]["t"]:
            raise ValueError("trace times must increase strictly")
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.rows:
                w.writerow([repr(float(row[c])) for c in TRACE_COLUMNS])


class FlowProblem:
    """Atlas, background metric and conformal Laplacian for one configuration."""

    def __init__(self, config):
        self.config = config.validate()
        c = config
        if c.manifold == "torus":
            self.atlas = build_torus_atlas(c.m, c.charts_per_axis, c.overlap, c.grid_n)
        else:
            self.atlas = build_sphere_atlas(c.radius, c.grid_n)
        if self.atlas.localization is None:
            raise InvalidParameter("atlas failed the cover check")
        self.m = self.atlas.dim
        self.g0 = MetricField.from_atlas(self.atlas, c.fd_order)
        self.L0 = conformal_laplacian(self.g0)
        active = self.atlas.active_masks()
        # largest eigenvalue of g0^{jk} over active nodes, per chart
        self._lam = []
        for ginv, act in zip(self.g0.inverse, active):
            mats = np.moveaxis(ginv, (0, 1), (-2, -1))[act]
            self._lam.append((act, np.linalg.eigvalsh(mats)[:, -1]))

    def initial_field(self):
        c = self.config
        if c.u0_snapshot:
            u = read_snapshot(c.u0_snapshot, self.atlas)
        else:
            u = field_from_expression(self.atlas, c.u0)
        if not self.atlas.single_periodic:
            u = blend(u)
        return u

    def rhs(self, u, kind=None):
        kind = self.config.kind if kind is None else kind
        L0u = self.L0.apply(u)
        if kind == "normalized":
            return normalized_rhs(u, self.g0, self.L0, self.m, 0.0, L0u)
        return yamabe_rhs(u, self.L0, self.m, 0.0, L0u)

    def stable_dt(self, u):
        """cfl * h^2 / max(u^{-4/(m-2)} lambda_max(g0^{jk})) over active nodes."""
        worst = 0.0
        for (act, lam), arr in zip(self._lam, u.data):
            worst = max(worst, float(np.max(np.power(arr[act], -4.0 / (self.m - 2.0)) * lam)))
        return self.config.cfl_factor * self.atlas.h ** 2 / worst

    def diagnostics(self, state, rhs=None):
        u = state.u
        L0u = self.L0.apply(u)
        R = conformal_scalar_curvature(u, self.g0, self.L0, self.m, 0.0, L0u)
        dens = volume_density(u, self.m)
        V = integrate(self.atlas, dens, self.g0)
        s = integrate(self.atlas, R * dens, self.g0) / V
        if rhs is None:
            rhs = self.rhs(u)
        masks = [c.mask for c in self.atlas.charts]
        Rvals = [r[mk] for r, mk in zip(R.data, masks)]
        holder = float("nan")
        if self.config.holder_s is not None:
            holder = holder_norm(u, self.config.holder_s).value
        return {"t": state.t, "V": V, "s_g": s,
                "Rmin": min(float(r.min()) for r in Rvals),
                "Rmax": max(float(r.max()) for r in Rvals),
                "umin": u.min(), "umax": u.max(), "holder_s": holder, "rhs_sup": rhs.sup()}


def _reblend(problem, u):
    return u if problem.atlas.single_periodic else blend(u)


def step(state, problem, kind=None):
    """One RK4 step; halves dt (up to ten times) when a stage drops to b or below."""
    b = problem.config.b
    k1 = problem.rhs(state.u, kind)
    dt = problem.stable_dt(state.u)
    if problem.config.dt_max is not None:
        dt = min(dt, problem.config.dt_max)
    remaining = problem.config.T - state.t
    if remaining <= 0.0:
        raise InvalidParameter("state is already at the horizon")
    dt = min(dt, remaining)
    rejections = 0
    u = state.u
    while True:
        try:
            stage = _reblend(problem, u + 0.5 * dt * k1)
            _check_positive(stage, b)
            k2 = problem.rhs(stage, kind)
            stage = _reblend(problem, u + 0.5 * dt * k2)
            _check_positive(stage, b)
            k3 = problem.rhs(stage, kind)
            stage = _reblend(problem, u + dt * k3)
            _check_positive(stage, b)
            k4 = problem.rhs(stage, kind)
            new = _reblend(problem, u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            _check_positive(new, b)
        except PositivityViolation as exc:
            rejections += 1
            if rejections > MAX_REJECTIONS:
                raise StepFailure(
                    f"step at t = {state.t} rejected {MAX_REJECTIONS} times: {exc}",
                    state=state) from None
            dt *= 0.5
            continue
        t_new = problem.config.T if dt == remaining else state.t + dt
        return FlowState(t_new, new, dt, state.steps + 1, state.rejections + rejections)


def run(config, callback=None, problem=None):
    """Integrate to the horizon, recording diagnostics every ``output_every`` steps.

    Raises StepFailure carrying the partial trace when a step cannot be
    completed above the positivity floor.
    """
    problem = FlowProblem(config) if problem is None else problem
    u0 = problem.initial_field()
    if not u0.min() > config.b:
        raise InvalidParameter(f"inf u0 = {u0.min()} is not above b = {config.b}")
    state = FlowState(0.0, u0)
    trace = FlowTrace()
    trace.append(problem.diagnostics(state))
    if callback is not None:
        callback(state, trace.rows[-1])
    while state.t < config.T:
        if state.steps >= config.max_steps:
            trace.status, trace.message = "max-steps", f"stopped after {state.steps} steps"
            break
        try:
            state = step(state, problem)
        except StepFailure as exc:
            trace.status, trace.final, trace.message = "step-failure", state, str(exc)
            if trace.rows[-1]["t"] < state.t:
                trace.append(problem.diagnostics(state))
            exc.trace = trace
            raise
        if state.steps % config.output_every == 0 or state.t >= config.T:
            trace.append(problem.diagnostics(state))
            if callback is not None:
                callback(state, trace.rows[-1])
    if trace.status == "running":
        trace.status = "horizon"
    trace.final = state
    return trace
