"""Command-line entry point.

Every failure prints one line ``<prefix>: <reason>`` on stderr and exits with
2 (configuration), 3 (numerical) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench
from . import cloud as cl
from .assembly import dump_matrix, run
from .config import RunConfig, _size, defaults, load_config
from .elasticity import stress_components, von_mises
from .errors import CollocError, ConfigError, SolverIOError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse prints multi-line usage otherwise
        raise ConfigError(message)


def _onoff(text: str) -> str:
    if text.lower() not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text.lower()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="colloc", description="Meshfree strong-form collocation for linear elasticity.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default="out"):
        sp.add_argument("--config", help="configuration file")
        sp.add_argument("--method", choices=bench.METHOD_NAMES, help="override method.name")
        sp.add_argument("--nodes", help="node file (switches the problem to kind=file)")
        sp.add_argument("--out", default=None, help=f"output directory (default {out_default})")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized inputs")
        sp.add_argument("--dump-matrix", action="store_true", help="write the system matrix")
        sp.add_argument("--fic", type=_onoff, help="boundary stabilization on/off")
        sp.add_argument("--criterion", choices=("none", "visibility", "diffraction"))
        sp.add_argument("--voronoi", type=_onoff, help="Voronoi-weighted stencils on/off")
        sp.add_argument("--solver", choices=("direct", "iterative"))

    g = sub.add_parser("generate", help="write a node file for a benchmark geometry")
    common(g)
    g.add_argument("--problem", choices=("cylinder", "lshape", "sphere"))
    g.add_argument("--inner-radius", type=float)
    g.add_argument("--outer-radius", type=float)
    g.add_argument("--n-r", type=int)
    g.add_argument("--n-t", type=int)
    g.add_argument("--half-side", type=float)
    g.add_argument("--spacing", type=float)
    g.add_argument("--jitter", type=float, default=0.0,
                   help="perturb interior nodes by this fraction of the minimum spacing")

    s = sub.add_parser("solve", help="single solve; writes solution and report")
    common(s)

    w = sub.add_parser("sweep", help="one solve per value of a parameter")
    common(w)
    w.add_argument("--param", help="section.key to sweep (default from [sweep])")
    w.add_argument("--values", help="comma-separated values (default from [sweep])")

    c = sub.add_parser("convergence", help="L2 rates over a size ladder")
    common(c)
    c.add_argument("--sizes", help="comma-separated sizes, e.g. 21x43,32x65 or 32,45,64")
    c.add_argument("--methods", help="comma-separated methods (default: method.name)")

    m = sub.add_parser("compare", help="all listed methods on one cloud")
    common(m)
    m.add_argument("--methods", help="comma-separated methods")
    return p


# -- helpers ------------------------------------------------------------------


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else defaults()
    if args.method:
        cfg = cfg.with_value("method.name", args.method)
    if args.nodes:
        cfg = cfg.with_value("problem.nodes", args.nodes).with_value("problem.kind", "file")
    for flag, key in (("fic", "options.fic"), ("voronoi", "options.voronoi"),
                      ("criterion", "options.criterion"), ("solver", "solver.kind")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg = cfg.with_value(key, value)
    if args.out is not None:
        cfg = cfg.with_value("output.dir", args.out)
    if args.dump_matrix:
        cfg = cfg.with_value("output.dump_matrix", "on")
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("output", "dir"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SolverIOError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise SolverIOError(f"cannot write {path}: {exc}") from None


def _solver_args(cfg: RunConfig) -> dict:
    s = cfg.values["solver"]
    if s["kind"] == "direct":
        return {"solver": "direct"}
    return {"solver": "iterative", "tol": s["tol"], "max_iter": s["max_iter"], "restart": s["restart"]}


def _problem(cfg: RunConfig, size=None, method: str | None = None):
    """``(problem, exact or None)`` for the configured problem."""
    dim = cfg.dim()
    setup = cfg.setup(method, dim)
    if cfg.problem_kind == "file":
        return bench.file_problem(cfg.load_nodes(), setup), None
    return cfg.builder()(size if size is not None else cfg.default_size(), setup)


def _solution_text(fields) -> str:
    dim = fields.x.shape[1]
    comps = stress_components(fields.stress)
    names = ["id"] + ["x", "y", "z"][:dim] + ["ux", "uy", "uz"][:dim] + list(comps) + ["von_mises"]
    vm = von_mises(fields.stress)
    lines = ["# " + " ".join(names)]
    for i in range(len(fields.node_ids)):
        vals = list(fields.x[i]) + list(fields.displacement[i]) + [comps[c][i] for c in comps] + [vm[i]]
        lines.append(" ".join([str(int(fields.node_ids[i]))] + [repr(float(v)) for v in vals]))
    return "\n".join(lines) + "\n"


def _csv(reports, extra=None) -> str:
    """Report CSV with the stabilization flags echoed as extra columns."""
    cols = dict(extra or {})
    for flag in ("fic", "voronoi", "criterion"):
        vals = [r.parameters.get(flag, "") for r in reports]
        cols[flag] = [("on" if v else "off") if isinstance(v, bool) else v for v in vals]
    return bench.reports_to_csv(reports, cols)


def _params_line(cfg: RunConfig, method: str | None = None) -> str:
    o = cfg.values["options"]
    name = method or cfg.method_name
    flags = [f"method={name}", f"fic={'on' if o['fic'] else 'off'}",
             f"voronoi={'on' if o['voronoi'] else 'off'}", f"criterion={o['criterion']}"]
    return " ".join(flags)


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load(args)
    for flag, key in (("problem", "problem.kind"), ("inner_radius", "problem.inner_radius"),
                      ("outer_radius", "problem.outer_radius"), ("n_r", "problem.n_r"),
                      ("n_t", "problem.n_t"), ("half_side", "problem.half_side"),
                      ("spacing", "problem.spacing")):
        value = getattr(args, flag)
        if value is not None:
            cfg = cfg.with_value(key, str(value))
    kind = cfg.problem_kind
    if kind == "file":
        raise ConfigError("generate needs an analytic problem kind (cylinder, lshape or sphere)")
    p = cfg.values["problem"]
    if kind == "cylinder":
        cloud = cl.generate_annulus_quarter(p["inner_radius"], p["outer_radius"], p["n_r"], p["n_t"],
                                            p["pressure"])
    elif kind == "lshape":
        m = cfg.default_size()
        exact = bench.exact_lshape_modeI(p["amplitude"], cfg.material(2))
        cloud = cl.generate_lshape(p["half_side"], p["half_side"] / m, exact.displacement)
    else:
        if p["spacing"] is None:
            raise ConfigError("sphere generation needs --spacing")
        cloud = cl.generate_sphere_eighth(p["inner_radius"], p["outer_radius"], p["spacing"], p["pressure"])
    if args.jitter:
        if not 0 <= args.jitter < 0.5:
            raise ConfigError("jitter must lie in [0, 0.5)")
        cloud = _jitter(cloud, args.jitter, args.seed)
    path = _outdir(cfg) / f"{kind}.nodes"
    cl.save_cloud(cloud, path)
    print(f"wrote {len(cloud)} nodes to {path}")
    return 0


def _jitter(cloud: cl.PointCloud, fraction: float, seed: int) -> cl.PointCloud:
    rng = np.random.default_rng(seed)
    step = fraction * cloud.min_spacing()
    x = cloud.x.copy()
    inner = cloud.role == cl.INTERIOR
    x[inner] += rng.uniform(-step, step, size=(int(inner.sum()), cloud.dim))
    return cl.PointCloud(x, role=cloud.role, normal=cloud.normal, disp=cloud.disp,
                         traction=cloud.traction, singular=cloud.singular, ids=cloud.ids)


def cmd_solve(args) -> int:
    cfg = _load(args)
    problem, exact = _problem(cfg)
    out = _outdir(cfg)
    res = run(problem, **_solver_args(cfg))
    if cfg.get("output", "dump_matrix"):
        dump_matrix(res.system, out / "matrix.txt")
    _write(out / "solution.txt", _solution_text(res.fields))
    print(_params_line(cfg))
    t = res.timing
    print(f"nodes={len(res.fields.node_ids)} residual={res.solve.residual:.3e} "
          f"init_s={t.init_s:.3f} assembly_s={t.assembly_s:.3f} solve_s={t.solve_s:.3f} post_s={t.post_s:.3f}")
    if exact is not None:
        o = cfg.values["options"]
        params = {"fic": o["fic"], "voronoi": o["voronoi"], "criterion": o["criterion"]}
        rep = bench.evaluate(res, exact, cfg.method_name, params)
        _write(out / "report.csv", _csv([rep]))
        for comp in rep.l2:
            print(f"{comp} l2={rep.l2[comp]:.6e} linf={rep.linf[comp]:.6e}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    param = args.param or cfg.get("sweep", "param")
    values = args.values.split(",") if args.values else cfg.get("sweep", "values")
    if not param:
        raise ConfigError("sweep needs a parameter (--param or sweep.param)")
    values = [v.strip() for v in (values or []) if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    reports = []
    for v in values:
        c = cfg.with_value(param, v)
        problem, exact = _problem(c)
        if exact is None:
            raise ConfigError("sweeps need an analytic problem")
        rep, _ = bench.solve_and_evaluate(problem, exact, **_solver_args(c))
        reports.append(rep)
        print(f"{param}={v} " + " ".join(f"{k}={rep.l2[k]:.6e}" for k in rep.l2))
    extra = {"sweep_param": [param] * len(values), "sweep_value": values}
    _write(_outdir(cfg) / "sweep.csv", _csv(reports, extra))
    return 0


def _sizes(cfg: RunConfig, text: str | None):
    if text:
        return [cfg_size(t) for t in text.split(",") if t.strip()]
    sizes = cfg.get("study", "sizes")
    if sizes:
        return sizes
    kind = cfg.problem_kind
    if kind == "cylinder":
        return list(bench.CYLINDER_SIZES)
    if kind == "lshape":
        return list(bench.LSHAPE_SIZES)
    if kind == "sphere":
        return [0.25, 0.2, 0.15]
    raise ConfigError("studies need an analytic problem")


def cfg_size(text: str):
    try:
        return _size(text.strip())
    except ValueError:
        raise ConfigError(f"bad size {text!r}") from None


def _methods(cfg: RunConfig, text: str | None, default):
    if text:
        names = [t.strip() for t in text.split(",") if t.strip()]
    else:
        names = cfg.get("study", "methods") or default
    bad = [n for n in names if n not in bench.METHOD_NAMES]
    if bad or not names:
        raise ConfigError(f"unknown methods {bad}" if bad else "empty method list")
    return names


def cmd_convergence(args) -> int:
    cfg = _load(args)
    if cfg.problem_kind == "file":
        raise ConfigError("studies need an analytic problem")
    sizes = _sizes(cfg, args.sizes)
    methods = _methods(cfg, args.methods, [cfg.method_name])
    builder = cfg.builder()
    out = _outdir(cfg)
    reports, rate_lines = [], ["method,component,rate"]
    for m in methods:
        setup = cfg.setup(m, cfg.dim())
        try:
            res = bench.convergence_study(builder, sizes, m, setup, solver=cfg.get("solver", "kind"))
        except bench.StudyAborted as exc:
            reports.extend(exc.reports)
            _write(out / "convergence.csv", _csv(reports))
            raise
        reports.extend(res.reports)
        for comp, rate in res.rates.items():
            rate_lines.append(f"{m},{comp},{rate!r}")
        rate_lines.append(f"{m},average,{res.average!r}")
        print(f"{m} average_rate={res.average:.4f} " + " ".join(f"{k}={v:.4f}" for k, v in res.rates.items()))
    _write(out / "convergence.csv", _csv(reports))
    _write(out / "rates.csv", "\n".join(rate_lines) + "\n")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    if cfg.problem_kind == "file":
        raise ConfigError("comparisons need an analytic problem")
    methods = _methods(cfg, args.methods, ["gfd", "dcpse1", "mls", "imls", "rbffd"])
    builder = cfg.builder()
    size = cfg.default_size()
    reports = []
    for m in methods:
        problem, exact = builder(size, cfg.setup(m, cfg.dim()))
        rep, _ = bench.solve_and_evaluate(problem, exact, **_solver_args(cfg))
        reports.append(rep)
        print(f"{m} " + " ".join(f"{k}={rep.l2[k]:.6e}" for k in rep.l2))
    _write(_outdir(cfg) / "compare.csv", _csv(reports))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "convergence": cmd_convergence,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except CollocError as exc:
        reason = " ".join(str(exc).split())
        print(f"{exc.prefix}: {reason}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"io: {' '.join(str(exc).split())}", file=sys.stderr)
        return SolverIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
