"""Command-line entry point.

Usage::

    yamabe-atlas run CONFIG.yaml
    yamabe-atlas check CONFIG.yaml

The YAML document selects one subcommand (validate-atlas, curvature, flow,
probe, resolvent or norms) and its parameters.  Unknown keys are errors.
All outputs go to ``output_dir``: JSON reports, CSV tables, text
snapshots, PNG figures and a ``manifest.json``.

Exit statuses: 0 success, 2 configuration or validation error, 3 flow step
failure, 4 probe inconsistency, 1 anything else.
"""

import argparse
import copy
import json
import math
import os
import platform
import sys
import time

import numpy as np
import yaml

from . import __version__
from .errors import (ConfigParseError, ConfigValidationError, InvalidParameter, StepFailure,
                     YamabeAtlasError)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_STEP_FAILURE, EXIT_PROBE = 0, 1, 2, 3, 4
COMMANDS = ("validate-atlas", "curvature", "flow", "probe", "resolvent", "norms")

_ANY = object()

# section -> key -> (types, default)
SCHEMA = {
    None: {
        "subcommand": ((str,), None),
        "output_dir": ((str,), "yamabe-out"),
        "seed": ((int,), 0),
        "figures": ((bool,), True),
    },
    "manifold": {
        "kind": ((str,), "torus"),
        "m": ((int,), 3),
        "charts_per_axis": ((int,), 1),
        "overlap": ((float,), 0.25),
        "grid_n": ((int,), 24),
        "radius": ((float,), 1.0),
        "shrink": ((float,), 0.7),
    },
    "numerics": {
        "fd_order": ((int,), 4),
        "k_max": ((int,), 2),
    },
    "flow": {
        "kind": ((str,), "normalized"),
        "u0": ((str,), "1 + 0.2*sin(x1)"),
        "u0_snapshot": ((str, type(None)), None),
        "b": ((float,), 0.1),
        "T": ((float,), 1.0),
        "cfl_factor": ((float,), 0.1),
        "dt_max": ((float, type(None)), None),
        "output_every": ((int,), 10),
        "holder_s": ((float, type(None)), 0.5),
        "snapshot_every": ((int,), 0),
        "max_steps": ((int,), 1000000),
    },
    "curvature": {
        "conformal_factor": ((str, type(None)), None),
    },
    "probe": {
        "source": ((str,), "expression"),
        "expression": ((str,), "exp(-t)*sin(x1)"),
        "anchor": ((list, type(None)), None),
        "anchor_chart": ((int,), 0),
        "t0": ((float,), 0.5),
        "eps0": ((float,), 0.1),
        "r": ((float,), 1.0),
        "delta": ((float, type(None)), None),
        "max_order": ((int,), 2),
        "profile": ((str,), "quintic"),
        "horizon": ((float,), 1.0),
        "n_times": ((int,), 41),
    },
    "resolvent": {
        "lambdas": ((list,), [1.0, 10.0, 100.0]),
        "theta": ((float,), math.pi / 2),
        "samples": ((int,), 1000),
        "u": ((str,), "1"),
        "b": ((float,), 0.1),
    },
    "norms": {
        "field": ((str,), "sin(x1)"),
        "s": ((float,), 0.5),
        "deltas": ((list, type(None)), None),
    },
}


class RunConfig(dict):
    """Validated configuration: a dict of sections plus top-level keys."""

    @property
    def subcommand(self):
        return self["subcommand"]

    def section(self, name):
        return self[name]


# parsing -----------------------------------------------------------------------

def _line_map(node, prefix=(), out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _line_map(value, path, out)
    return out


def _coerce(value, types, key, line):
    if value is None and type(None) in types:
        return None
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if int in types and isinstance(value, bool):
        raise ConfigParseError("expected an integer, got a boolean", line, key)
    if isinstance(value, tuple(t for t in types if t is not type(None))):
        return value
    names = "/".join(t.__name__ for t in types)
    raise ConfigParseError(f"expected {names}, got {type(value).__name__}", line, key)


def parse_config(document):
    """Parse and validate a YAML configuration document."""
    try:
        node = yaml.compose(document, Loader=yaml.SafeLoader)
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigParseError(f"malformed document: {getattr(exc, 'problem', exc)}",
                               None if mark is None else mark.line + 1) from None
    if not isinstance(data, dict):
        raise ConfigParseError("the configuration must be a mapping")
    lines = _line_map(node)
    config = RunConfig()
    for key, value in data.items():
        line = lines.get((key,))
        if key in SCHEMA[None]:
            config[key] = _coerce(value, SCHEMA[None][key][0], key, line)
        elif key in SCHEMA and key is not None:
            if value is None:
                value = {}
            if not isinstance(value, dict):
                raise ConfigParseError("section must be a mapping", line, key)
            section = {}
            for sub, subval in value.items():
                subline = lines.get((key, sub))
                if sub not in SCHEMA[key]:
                    raise ConfigParseError(f"unknown key in section {key!r}", subline, sub)
                section[sub] = _coerce(subval, SCHEMA[key][sub][0], f"{key}.{sub}", subline)
            config[key] = section
        else:
            raise ConfigParseError("unknown key", line, key)
    for key, (_, default) in SCHEMA[None].items():
        config.setdefault(key, default)
    for name, keys in SCHEMA.items():
        if name is None:
            continue
        section = config.setdefault(name, {})
        for key, (_, default) in keys.items():
            section.setdefault(key, copy.deepcopy(default))
    validate_config(config)
    return config


def _require(cond, message):
    if not cond:
        raise ConfigValidationError(message)


def validate_config(config):
    """Check every numeric parameter against the preconditions of the modules."""
    _require(config["subcommand"] in COMMANDS,
             f"subcommand must be one of {', '.join(COMMANDS)}; got {config['subcommand']!r}")
    man = config["manifold"]
    _require(man["kind"] in ("torus", "sphere"), "manifold.kind must be 'torus' or 'sphere'")
    if man["kind"] == "torus":
        _require(man["m"] >= 3, "manifold.m must be >= 3 (atlas precondition m >= 3)")
        _require(man["charts_per_axis"] >= 1, "manifold.charts_per_axis must be >= 1")
        if man["charts_per_axis"] > 1:
            _require(0.0 < man["overlap"] < 0.5,
                     f"manifold.overlap = {man['overlap']} violates the atlas precondition "
                     "0 < overlap < 0.5")
        _require(man["grid_n"] >= 8, "manifold.grid_n must be >= 8")
    else:
        _require(man["m"] == 3, "the sphere atlas requires manifold.m = 3")
        _require(man["radius"] > 0.0, "manifold.radius must be positive")
        _require(man["grid_n"] >= 16, "manifold.grid_n must be >= 16 for the sphere atlas")
    _require(0.0 < man["shrink"] < 1.0, "manifold.shrink must lie in (0, 1)")
    num = config["numerics"]
    _require(num["fd_order"] in (2, 4, 6), "numerics.fd_order must be 2, 4 or 6")
    _require(0 <= num["k_max"] <= 4, "numerics.k_max must lie in 0..4")
    flow = config["flow"]
    _require(flow["kind"] in ("unnormalized", "normalized"),
             "flow.kind must be 'unnormalized' or 'normalized'")
    _require(0.0 < flow["cfl_factor"] <= 0.5, "flow.cfl_factor must lie in (0, 0.5]")
    _require(flow["b"] > 0.0, "flow.b must be positive")
    _require(flow["T"] > 0.0, "flow.T must be positive")
    _require(flow["dt_max"] is None or flow["dt_max"] > 0.0, "flow.dt_max must be positive")
    _require(flow["holder_s"] is None or 0.0 < flow["holder_s"] < 1.0,
             "flow.holder_s must lie in (0, 1)")
    _require(flow["output_every"] >= 1, "flow.output_every must be >= 1")
    _require(flow["snapshot_every"] >= 0, "flow.snapshot_every must be >= 0")
    probe = config["probe"]
    _require(probe["source"] in ("expression", "flow"), "probe.source must be 'expression' or 'flow'")
    _require(0.0 < probe["eps0"] and 5.0 * probe["eps0"] < 1.0,
             "probe.eps0 must satisfy 0 < 5 eps0 < 1")
    _require(probe["r"] > 0.0, "probe.r must be positive")
    _require(1 <= probe["max_order"] <= 3, "probe.max_order must lie in 1..3")
    _require(probe["profile"] in ("quintic", "smooth"), "probe.profile must be quintic or smooth")
    _require(probe["t0"] - 3 * probe["eps0"] > 0.0
             and probe["t0"] + 3 * probe["eps0"] < probe["horizon"],
             "probe: B(t0, 3 eps0) must lie inside (0, horizon)")
    _require(probe["n_times"] >= 5, "probe.n_times must be >= 5")
    res = config["resolvent"]
    _require(len(res["lambdas"]) >= 1, "resolvent.lambdas must not be empty")
    _require(res["samples"] >= 100, "resolvent.samples must be >= 100")
    _require(res["b"] > 0.0, "resolvent.b must be positive")
    norms = config["norms"]
    _require(0.0 <= norms["s"] < 3.0, "norms.s must lie in [0, 3)")
    return config


# dispatch ----------------------------------------------------------------------

def _dump(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _build_atlas(config):
    from .atlas import build_sphere_atlas, build_torus_atlas

    man = config["manifold"]
    if man["kind"] == "torus":
        return build_torus_atlas(man["m"], man["charts_per_axis"], man["overlap"], man["grid_n"],
                                 shrink=man["shrink"])
    return build_sphere_atlas(man["radius"], man["grid_n"], shrink=man["shrink"])


def _flow_config(config):
    from .flow import FlowConfig

    man, flow = config["manifold"], config["flow"]
    return FlowConfig(manifold=man["kind"], m=man["m"], grid_n=man["grid_n"],
                      charts_per_axis=man["charts_per_axis"], overlap=man["overlap"],
                      radius=man["radius"], kind=flow["kind"], u0=flow["u0"],
                      u0_snapshot=flow["u0_snapshot"], b=flow["b"], T=flow["T"],
                      cfl_factor=flow["cfl_factor"], dt_max=flow["dt_max"],
                      output_every=flow["output_every"], holder_s=flow["holder_s"],
                      fd_order=config["numerics"]["fd_order"], max_steps=flow["max_steps"])


def _cmd_validate_atlas(config, out):
    from .atlas import validate_uniform_regularity
    from .plotting import plot_chart_slice

    atlas = _build_atlas(config)
    report = validate_uniform_regularity(atlas, config["numerics"]["k_max"])
    files = [_dump(os.path.join(out, "regularity.json"), report.to_dict()),
             _dump(os.path.join(out, "atlas.json"), atlas.to_document())]
    if config["figures"] and atlas.localization is not None:
        loc = atlas.localization
        files.append(plot_chart_slice(atlas, [loc.pi2, loc.zeta, loc.varpi],
                                      os.path.join(out, "cutoffs.png"), "localization system",
                                      ["pi^2", "zeta", "varpi"]))
    return EXIT_OK, files, {"passed": report.passed}


def _cmd_curvature(config, out):
    from .flow import conformal_metric, field_from_expression
    from .geometry import MetricField, scalar_curvature
    from .plotting import plot_chart_slice

    atlas = _build_atlas(config)
    g = MetricField.from_atlas(atlas, config["numerics"]["fd_order"])
    expr = config["curvature"]["conformal_factor"]
    if expr is not None:
        g = conformal_metric(field_from_expression(atlas, expr), g)
    rep = scalar_curvature(g)
    payload = rep.to_dict()
    if atlas.manifold == "sphere":
        payload["max_error_vs_round"] = rep.error_against(6.0 / atlas.params["radius"] ** 2, atlas) \
            if expr is None else None
    files = [_dump(os.path.join(out, "curvature.json"), payload)]
    if config["figures"]:
        files.append(plot_chart_slice(atlas, rep.R, os.path.join(out, "curvature.png"),
                                      "scalar curvature"))
    return EXIT_OK, files, payload


def _cmd_flow(config, out):
    from .fields import write_snapshot
    from .flow import FlowProblem, run
    from .plotting import plot_trace

    fcfg = _flow_config(config)
    try:
        problem = FlowProblem(fcfg)
        u0 = problem.initial_field()
    except InvalidParameter as exc:
        raise ConfigValidationError(str(exc)) from None
    if not u0.min() > fcfg.b:
        raise ConfigValidationError(
            f"flow.b = {fcfg.b} is not below inf u0 = {u0.min()} (u0 must lie in W_b)")
    every = config["flow"]["snapshot_every"]
    snapdir = os.path.join(out, "snapshots")
    files = []

    def callback(state, row):
        if every and state.steps % every == 0:
            files.append(write_snapshot(state.u, os.path.join(snapdir, f"step_{state.steps:07d}"),
                                        state.t))

    status, summary = EXIT_OK, {}
    try:
        trace = run(fcfg, callback, problem)
    except StepFailure as exc:
        trace = exc.trace
        status = EXIT_STEP_FAILURE
    final = trace.final
    files.append(write_snapshot(final.u, os.path.join(snapdir, "final"), final.t))
    trace_path = os.path.join(out, "trace.csv")
    trace.write_csv(trace_path)
    files.append(trace_path)
    summary = {"status": trace.status, "message": trace.message, "t_final": final.t,
               "steps": final.steps, "rejections": final.rejections,
               "last_row": trace.rows[-1]}
    files.append(_dump(os.path.join(out, "flow_summary.json"), summary))
    if config["figures"]:
        files.append(plot_trace(trace, os.path.join(out, "trace.png")))
    return status, files, summary


def _cmd_probe(config, out):
    from .diffeo import FunctionTrace, SampledTrace, build_family, smoothness_probe
    from .flow import FlowProblem, evaluate_expression, run
    from .plotting import plot_probe

    pc = config["probe"]
    atlas = _build_atlas(config)
    horizon = pc["horizon"]
    if pc["source"] == "expression":
        expr = pc["expression"]

        def func(t, *coords):
            names = {f"x{i + 1}": c for i, c in enumerate(coords)}
            names["t"] = t
            return evaluate_expression(expr, names) + 0.0 * coords[0]

        trace = FunctionTrace(atlas, func, (0.0, horizon))
    else:
        fcfg = _flow_config(config)
        fcfg.T = horizon
        problem = FlowProblem(fcfg)
        atlas = problem.atlas
        states = []
        run(fcfg, lambda st, row: states.append((st.t, st.u)), problem)
        trace = SampledTrace([t for t, _ in states], [u for _, u in states],
                             degree=max(3, pc["max_order"] + 2))
    anchor = pc["anchor"]
    if anchor is None:
        anchor = atlas.charts[pc["anchor_chart"]].center.tolist()
    try:
        family = build_family(atlas, anchor, pc["t0"], pc["eps0"], pc["r"], pc["anchor_chart"],
                              (0.0, horizon), pc["profile"])
    except (InvalidParameter, YamabeAtlasError) as exc:
        raise ConfigValidationError(str(exc)) from None
    report = smoothness_probe(family, trace, pc["max_order"], pc["delta"], pc["n_times"])
    csv_path = os.path.join(out, "probe.csv")
    report.write_csv(csv_path)
    json_path = os.path.join(out, "probe.json")
    report.write_json(json_path)
    files = [csv_path, json_path]
    if config["figures"]:
        files.append(plot_probe(report, os.path.join(out, "probe.png")))
    status = EXIT_OK if report.consistent else EXIT_PROBE
    return status, files, {"consistent": report.consistent, "verdicts": report.verdicts}


def _cmd_resolvent(config, out):
    from .flow import field_from_expression
    from .geometry import MetricField
    from .operators import (assemble_matrix, ellipticity_check, laplace_beltrami,
                            resolvent_probe)
    from .plotting import plot_resolvent, plot_spectrum

    rc = config["resolvent"]
    atlas = _build_atlas(config)
    g = MetricField.from_atlas(atlas, config["numerics"]["fd_order"])
    lap = laplace_beltrami(g)
    u = field_from_expression(atlas, rc["u"])
    if not u.min() > rc["b"]:
        raise ConfigValidationError(f"resolvent.u has inf {u.min()} not above b = {rc['b']}")
    m = atlas.dim
    P = lap.scaled(u.map(lambda a: -np.power(a, -4.0 / (m - 2.0))), "P(u)")
    ell = ellipticity_check(P, rc["samples"], rc["theta"], config["seed"])
    n = sum(int(np.prod(c.grid_shape)) for c in atlas.charts)
    if n > 20000:
        raise ConfigValidationError(f"resolvent probe needs at most 20000 unknowns, got {n}")
    lambdas = [complex(l) if isinstance(l, str) else float(l) for l in rc["lambdas"]]
    A = -lap
    rep = resolvent_probe(A, lambdas, config["seed"])
    csv_path = os.path.join(out, "resolvent.csv")
    rep.write_csv(csv_path)
    files = [_dump(os.path.join(out, "resolvent.json"), rep.to_dict()),
             _dump(os.path.join(out, "ellipticity.json"), ell.to_dict()), csv_path]
    if config["figures"]:
        eig = np.linalg.eigvals(assemble_matrix(A))
        files.append(plot_spectrum(eig, os.path.join(out, "spectrum.png")))
        files.append(plot_resolvent(rep, os.path.join(out, "resolvent.png")))
    return EXIT_OK, files, {"sup_bound": rep.sup_bound, "elliptic": ell.passed}


def _cmd_norms(config, out):
    import csv

    from .fields import holder_norm, holder_norm_breve, modulus_slope
    from .flow import field_from_expression
    from .plotting import plot_modulus

    nc = config["norms"]
    atlas = _build_atlas(config)
    u = field_from_expression(atlas, nc["field"])
    fd_order = config["numerics"]["fd_order"]
    try:
        plain = holder_norm(u, nc["s"], nc["deltas"], fd_order)
        breve = holder_norm_breve(u, nc["s"], nc["deltas"], fd_order)
    except InvalidParameter as exc:
        raise ConfigValidationError(str(exc)) from None
    payload = {"plain": plain.to_dict(), "breve": breve.to_dict(),
               "modulus_slope": modulus_slope(plain.seminorm_table)}
    csv_path = os.path.join(out, "modulus.csv")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "seminorm"])
        for d, v in plain.seminorm_table:
            w.writerow([repr(float(d)), repr(float(v))])
    files = [_dump(os.path.join(out, "norms.json"), payload), csv_path]
    if config["figures"]:
        files.append(plot_modulus(plain.seminorm_table, os.path.join(out, "modulus.png"),
                                  nc["s"]))
    return EXIT_OK, files, {"value": plain.value, "ratio": breve.ratio}


HANDLERS = {
    "validate-atlas": _cmd_validate_atlas,
    "curvature": _cmd_curvature,
    "flow": _cmd_flow,
    "probe": _cmd_probe,
    "resolvent": _cmd_resolvent,
    "norms": _cmd_norms,
}


def _versions():
    import matplotlib
    import scipy

    return {"yamabe_atlas": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__}


def dispatch(config):
    """Run the configured command; returns ``(exit_status, manifest)``."""
    out = os.path.abspath(config["output_dir"])
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    status, files, summary = HANDLERS[config["subcommand"]](config, out)
    manifest = {
        "subcommand": config["subcommand"],
        "config": dict(config),
        "versions": _versions(),
        "exit_status": status,
        "outputs": sorted(os.path.relpath(f, out) for f in files),
        "summary": summary,
        "wall_time_seconds": time.perf_counter() - start,
    }
    _dump(os.path.join(out, "manifest.json"), manifest)
    return status, manifest


def build_parser():
    parser = argparse.ArgumentParser(
        prog="yamabe-atlas",
        description="Chart-atlas Yamabe flow solver: atlas checks, curvature, flow, probes.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="action", required=True)
    run_p = sub.add_parser("run", help="run the command described by a YAML config")
    run_p.add_argument("config", help="path to the YAML configuration")
    run_p.add_argument("-o", "--output-dir", help="override output_dir from the config")
    check_p = sub.add_parser("check", help="parse and validate a config without running it")
    check_p.add_argument("config")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = parse_config(text)
        if getattr(args, "output_dir", None):
            config["output_dir"] = args.output_dir
    except (ConfigParseError, ConfigValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.action == "check":
        print(json.dumps(_jsonable(dict(config)), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        status, manifest = dispatch(config)
    except ConfigValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except YamabeAtlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(_jsonable(manifest["summary"]), sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
