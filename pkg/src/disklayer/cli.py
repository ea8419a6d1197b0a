"""Command-line entry point: config parsing, experiment orchestration, and
bit-stable CSV/JSON artifacts.

Subcommands: transport, milne, expand, converge, counterexample.  Flags
override JSON config-file values; unknown config keys are rejected.  Every
CSV is preceded by a manifest JSON (inputs, grid, versions, wall time),
and reruns with the same config produce byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time as _time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .core import (AngularGrid, SpaceTimeGrid, graded_nodes, make_radial_grid,
                   make_time_grid)
from .experiments import (MU_ANCHOR_FACTORS, T_ANCHOR_FACTORS,
                          convergence_study, counterexample_datum,
                          counterexample_gap, run_single_epsilon,
                          study_datum_g, study_datum_h)
from .layers import evaluate_expansion
from .milne import MilneProblem, solve_milne
from .transport import TransportProblem, solve_transport

THREADS_ENV = "DISKLAYER_THREADS"

_CONFIG_KEYS = {
    "subcommand", "epsilon", "epsilons", "kind", "force", "order", "n",
    "n_phi", "d_eta", "d_tau", "eta_max", "datum_g", "datum_h", "datum",
    "tol", "horizon", "output_dir", "threads",
}


@dataclass
class RunConfig:
    subcommand: str
    epsilon: Optional[float] = None
    epsilons: Optional[list] = None
    kind: str = "geometric"
    force: str = "geometric"
    order: int = 1
    n: float = 1.0
    n_phi: Optional[int] = None
    d_eta: float = 0.25
    d_tau: float = 0.25
    eta_max: Optional[float] = None
    datum_g: str = "study"
    datum_h: str = "zero"
    datum: str = "counterexample"
    tol: float = 1e-9
    horizon: float = 1.0
    output_dir: str = "."
    threads: int = 1

    def validate(self):
        if self.subcommand in ("transport", "milne", "expand"):
            if self.epsilon is None:
                raise UsageError(f"{self.subcommand} requires --epsilon")
            if not 0.0 < self.epsilon < 1.0:
                raise UsageError(
                    f"epsilon must satisfy 0 < eps < 1, got {self.epsilon}")
        if self.subcommand in ("converge", "counterexample"):
            if not self.epsilons:
                raise UsageError(f"{self.subcommand} requires --epsilons")
        for name in ("epsilon", "n", "d_eta", "d_tau", "tol", "horizon"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise UsageError(f"config value {name!r} must be positive, got {v}")
        for name in ("n_phi", "eta_max", "threads"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise UsageError(f"config value {name!r} must be positive, got {v}")
        if self.epsilons is not None:
            es = list(self.epsilons)
            if any(b >= a for a, b in zip(es, es[1:])):
                raise UsageError("epsilons must be strictly decreasing")
            if any(e <= 0 or e >= 1 for e in es):
                raise UsageError("each epsilon must satisfy 0 < eps < 1")
        if self.order not in (0, 1):
            raise UsageError(f"order must be 0 or 1, got {self.order}")
        if self.kind not in ("geometric", "classical"):
            raise UsageError(f"kind must be geometric|classical, got {self.kind!r}")
        if self.force not in ("geometric", "none"):
            raise UsageError(f"force must be geometric|none, got {self.force!r}")
        if (self.subcommand == "milne" and self.force == "geometric"
                and self.eta_max is not None and self.epsilon is not None
                and self.eta_max * self.epsilon > 0.75):
            raise UsageError(
                "geometric force requires eta_max <= 3/(4 eps) "
                f"= {0.75 / self.epsilon}, got {self.eta_max}")


class UsageError(ValueError):
    pass


def _parse_float_list(s):
    try:
        return [float(v) for v in str(s).split(",") if v != ""]
    except ValueError:
        raise UsageError(f"malformed epsilon list {s!r}")


_EXPR_NAMES = {name: getattr(np, name) for name in
               ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi",
                "arctan2", "cosh", "sinh", "tanh", "minimum", "maximum")}


def _check_expr(expr, variables):
    """Reject expressions that reference anything beyond math + variables."""
    try:
        code = compile(str(expr), "<datum>", "eval")
    except SyntaxError as exc:
        raise UsageError(f"malformed datum expression {expr!r}: {exc}")
    allowed = set(_EXPR_NAMES) | set(variables)
    bad = set(code.co_names) - allowed
    if bad:
        raise UsageError(
            f"datum expression {expr!r} uses unknown names {sorted(bad)}")
    return code


def _expr_fn_g(expr):
    expr = _check_expr(expr, ("t", "theta", "phi"))

    def g(t, theta, phi):
        ns = dict(_EXPR_NAMES, t=np.asarray(t, dtype=float),
                  theta=np.asarray(theta, dtype=float),
                  phi=np.asarray(phi, dtype=float))
        out = eval(expr, {"__builtins__": {}}, ns)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.broadcast(ns["t"], ns["theta"], ns["phi"]).shape)
    return g


def _expr_fn_h(expr):
    expr = _check_expr(expr, ("x1", "x2", "w1", "w2"))

    def h(x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        ns = dict(_EXPR_NAMES, x1=x[..., 0], x2=x[..., 1],
                  w1=w[..., 0], w2=w[..., 1])
        out = eval(expr, {"__builtins__": {}}, ns)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1])
    return h


def resolve_datum_g(sel):
    if sel == "study":
        return study_datum_g
    if sel == "counterexample":
        return lambda t, th, ph: np.broadcast_to(
            counterexample_datum(ph),
            np.broadcast(np.asarray(t), np.asarray(th), np.asarray(ph)).shape)
    if sel.startswith("constant:"):
        c = float(sel.split(":", 1)[1])
        return lambda t, th, ph: np.full(
            np.broadcast(np.asarray(t), np.asarray(th), np.asarray(ph)).shape, c)
    return _expr_fn_g(sel)


def resolve_datum_h(sel):
    if sel == "zero":
        return study_datum_h
    if sel == "counterexample":
        def h(x, w):
            x = np.asarray(x, dtype=float)
            th = np.arctan2(x[..., 1], x[..., 0])
            xi = np.arctan2(-np.asarray(w)[..., 0], -np.asarray(w)[..., 1])
            return counterexample_datum(th + xi)
        return h
    if sel.startswith("constant:"):
        c = float(sel.split(":", 1)[1])
        return lambda x, w: np.full(np.asarray(x).shape[:-1], c)
    return _expr_fn_h(sel)


def resolve_milne_datum(sel):
    if sel == "counterexample":
        return counterexample_datum
    if sel.startswith("constant:"):
        c = float(sel.split(":", 1)[1])
        return lambda ph: np.full(np.shape(ph), c)

    code = _check_expr(sel, ("phi",))

    def H(phi):
        ns = dict(_EXPR_NAMES, phi=np.asarray(phi, dtype=float))
        return np.broadcast_to(
            np.asarray(eval(code, {"__builtins__": {}}, ns), dtype=float),
            np.shape(ns["phi"]))
    return H


def parse_config(argv, config_file=None) -> RunConfig:
    """Build a RunConfig from argv, with optional JSON config-file defaults."""
    parser = argparse.ArgumentParser(
        prog="disklayer",
        description="Diffusive-limit experiments for transport on the unit disk")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None,
                       help="JSON config file (flags take precedence)")
        p.add_argument("--n-phi", dest="n_phi", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--output-dir", dest="output_dir", type=str)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("transport", help="solve the kinetic equation")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--d-eta", dest="d_eta", type=float)
    p.add_argument("--d-tau", dest="d_tau", type=float)
    p.add_argument("--datum-g", dest="datum_g", type=str)
    p.add_argument("--datum-h", dest="datum_h", type=str)

    p = sub.add_parser("milne", help="solve one Milne half-space problem")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--force", type=str, choices=["geometric", "none"])
    p.add_argument("--datum", type=str)
    p.add_argument("--eta-max", dest="eta_max", type=float)

    p = sub.add_parser("expand", help="build an expansion bundle and export components")
    common(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--kind", type=str, choices=["geometric", "classical"])
    p.add_argument("--order", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--datum-g", dest="datum_g", type=str)
    p.add_argument("--datum-h", dest="datum_h", type=str)

    p = sub.add_parser("converge", help="convergence study over epsilon")
    common(p)
    p.add_argument("--epsilons", type=str)
    p.add_argument("--kind", type=str, choices=["geometric", "classical"])
    p.add_argument("--order", type=int)
    p.add_argument("--d-eta", dest="d_eta", type=float)
    p.add_argument("--d-tau", dest="d_tau", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--datum-g", dest="datum_g", type=str)
    p.add_argument("--datum-h", dest="datum_h", type=str)

    p = sub.add_parser("counterexample", help="classical vs geometric gap study")
    common(p)
    p.add_argument("--epsilons", type=str)
    p.add_argument("--n", type=float)

    args = parser.parse_args(argv)
    values = {}

    path = config_file or getattr(args, "config", None)
    if path:
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)

    for key, val in vars(args).items():
        if key == "config":
            continue
        if val is not None:
            values[key] = val
    if isinstance(values.get("epsilons"), str):
        values["epsilons"] = _parse_float_list(values["epsilons"])
    values.setdefault("threads",
                      int(os.environ.get(THREADS_ENV, "1") or 1))
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc))
    cfg.validate()
    return cfg


def _fmt(v):
    """Shortest round-trip decimal for floats; plain str otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(path, config: RunConfig, grid_info, wall_time, outputs):
    manifest = {
        "config": {k: v for k, v in asdict(config).items() if v is not None},
        "grid": grid_info,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "disklayer": __version__,
        },
        "threads": config.threads,
        "wall_time_s": wall_time,
        "outputs": outputs,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_transport(cfg: RunConfig, outdir):
    eps = cfg.epsilon
    if eps is None:
        raise UsageError("transport requires --epsilon")
    g = resolve_datum_g(cfg.datum_g)
    h = resolve_datum_h(cfg.datum_h)
    prob = TransportProblem(eps, g=g, h=h, T=cfg.horizon)
    try:
        prob.validate_compatibility()
    except ValueError as exc:
        raise UsageError(f"compatibility condition violated: {exc}")
    mu_anchors = tuple(a for a in eps * MU_ANCHOR_FACTORS if a < 1.0)
    t_anchors = tuple(a for a in eps * eps * T_ANCHOR_FACTORS if a < cfg.horizon)
    r = make_radial_grid(eps, cfg.d_eta, 0.05, mu_anchors=mu_anchors)
    tg = make_time_grid(eps, cfg.horizon, cfg.d_tau, 0.02, t_anchors=t_anchors)
    n_phi = cfg.n_phi or 64
    keep = np.zeros(tg.size, dtype=bool)
    keep[0] = keep[-1] = True
    for ta in list(t_anchors) + list(np.linspace(cfg.horizon / 10, cfg.horizon, 10)):
        keep[np.argmin(np.abs(tg - ta))] = True
    grid = SpaceTimeGrid(r, np.array([0.0]) if prob.is_rotation_invariant()
                         else np.linspace(-np.pi, np.pi, 32, endpoint=False), tg)
    fld, report = solve_transport(prob, grid, AngularGrid(n_phi),
                                  tol=cfg.tol, store_times=keep)
    rows = []
    og = fld.grid
    for k, tk in enumerate(og.time):
        for i, rv in enumerate(og.radial):
            for m, tv in enumerate(og.theta):
                for j, xv in enumerate(fld.angular.nodes):
                    rows.append((tk, rv, tv, xv, fld.values[k, i, m, j]))
    info = {"n_r": int(r.size), "n_theta": int(og.theta.size),
            "n_time": int(tg.size), "n_phi": int(n_phi),
            "fast_path": bool(report.fast_path)}
    return info, [("transport_field.csv",
                   ["t", "r", "theta", "xi", "u"], rows)]


def _run_milne(cfg: RunConfig, outdir):
    eps = cfg.epsilon
    if eps is None:
        raise UsageError("milne requires --epsilon")
    H = resolve_milne_datum(cfg.datum)
    eta_max = cfg.eta_max or (min(40.0, 0.75 / eps)
                              if cfg.force == "geometric" else 40.0)
    grid = graded_nodes(eta_max, 0.05, 0.25)
    prob = MilneProblem(eps=eps, force_kind=cfg.force, H=H,
                        eta_grid=grid, angular=AngularGrid(cfg.n_phi or 128),
                        eta_max=eta_max)
    sol = solve_milne(prob, tol=cfg.tol)
    rows = []
    for i, ev in enumerate(grid):
        for j, pv in enumerate(prob.angular.nodes):
            rows.append((ev, pv, sol.f[i, j], sol.fbar[i], sol.flux_profile[i]))
    info = {"n_eta": int(grid.size), "n_phi": int(prob.angular.n_phi),
            "eta_max": float(eta_max), "f_inf": float(sol.f_inf),
            "K0_fit": float(sol.K0_fit), "iterations": int(sol.iterations)}
    return info, [("milne_profile.csv",
                   ["eta", "phi", "f", "fbar", "flux"], rows)]


def _run_expand(cfg: RunConfig, outdir):
    eps = cfg.epsilon
    if eps is None:
        raise UsageError("expand requires --epsilon")
    fld, bundle, grid_id = run_single_epsilon(
        eps, cfg.kind, cfg.order,
        g=resolve_datum_g(cfg.datum_g), h=resolve_datum_h(cfg.datum_h),
        T=cfg.horizon, n_phi=cfg.n_phi, d_eta=cfg.d_eta, d_tau=cfg.d_tau)
    og = fld.grid
    from .core import velocity_from_xi
    rows = []
    times = [og.time[0], og.time[og.time.size // 2], og.time[-1]]
    for tk in times:
        for i, rv in enumerate(og.radial):
            for j, pv in enumerate(fld.angular.nodes):
                x = np.array([rv, 0.0])
                w = velocity_from_xi(pv)
                tau = tk / eps ** 2
                eta = (1.0 - rv) / eps
                interior = float(bundle.interior0.at(tk, rv, 0.0))
                init = float(bundle.initial_layer0.evaluate(tau, x, w))
                blay = float(bundle.boundary_layer0.evaluate(tk, eta, 0.0, pv))
                total = float(evaluate_expansion(bundle, tk, x, w))
                rows.append((tk, rv, 0.0, pv, interior, init, blay, total))
    return {"grid_id": grid_id, "kind": cfg.kind, "order": cfg.order}, \
        [("expand_components.csv",
          ["t", "r", "theta", "phi", "interior", "initial_layer",
           "boundary_layer", "total"], rows)]


def _run_converge(cfg: RunConfig, outdir):
    if not cfg.epsilons:
        raise UsageError("converge requires --epsilons")
    report = convergence_study(cfg.epsilons, cfg.kind, cfg.order,
                               g=resolve_datum_g(cfg.datum_g),
                               h=resolve_datum_h(cfg.datum_h),
                               T=cfg.horizon, n_phi=cfg.n_phi,
                               d_eta=cfg.d_eta, d_tau=cfg.d_tau)
    rows = [(r["epsilon"], r["kind"], r["order"], r["error_linf"], r["grid_id"])
            for r in report.rows]
    return {"kind": cfg.kind, "order": cfg.order,
            "epsilons": list(cfg.epsilons)}, \
        [("converge.csv",
          ["epsilon", "kind", "order", "error_linf", "grid_id"], rows)]


def _run_counterexample(cfg: RunConfig, outdir):
    if not cfg.epsilons:
        raise UsageError("counterexample requires --epsilons")
    report = counterexample_gap(cfg.epsilons, n=cfg.n,
                                n_phi=cfg.n_phi or 128)
    rows = [(r["epsilon"], r["n"], r["u_classical"], r["u_geometric"],
             r["pred_classical"], r["pred_geometric"], r["gap"])
            for r in report.rows]
    return {"n": cfg.n, "epsilons": list(cfg.epsilons)}, \
        [("gap.csv",
          ["epsilon", "n", "u_classical", "u_geometric",
           "pred_classical", "pred_geometric", "gap"], rows)]


_RUNNERS = {
    "transport": _run_transport,
    "milne": _run_milne,
    "expand": _run_expand,
    "converge": _run_converge,
    "counterexample": _run_counterexample,
}


def run(config: RunConfig) -> int:
    """Execute a parsed config; writes artifacts + manifest, returns exit status."""
    outdir = config.output_dir
    os.makedirs(outdir, exist_ok=True)
    start = _time.time()
    info, files = _RUNNERS[config.subcommand](config, outdir)
    _write_manifest(os.path.join(outdir, f"{config.subcommand}_manifest.json"),
                    config, info, _time.time() - start,
                    [name for name, _, _ in files])
    for name, header, rows in files:
        _write_csv(os.path.join(outdir, name), header, rows)
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}),
              file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
