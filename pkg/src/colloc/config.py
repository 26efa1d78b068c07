"""Run configuration: sectioned key-value files with a fixed schema.

Every key has a type and a default; unknown sections or keys are errors so a
typo in a sweep file cannot silently fall back to a default. Method-dependent
keys default to ``None`` and are filled from the method's defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import bench
from .cloud import PointCloud, load_cloud
from .elasticity import PLANE_STRESS, THREE_D, Material
from .errors import ConfigError, SolverIOError
from .stencils import MethodSpec
from .weights import RbfSpec, WeightSpec

PROBLEMS = ("cylinder", "lshape", "sphere", "file")
SOLVERS = ("direct", "iterative")
_BOOL = {"on": True, "off": False, "true": True, "false": False, "yes": True, "no": False,
         "1": True, "0": False}


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected on/off, got {text!r}") from None


def _list(conv):
    def parse(text: str):
        items = [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]
        return [conv(t) for t in items]
    return parse


def _size(text: str):
    """``33x157`` -> (33, 157); a plain number stays scalar."""
    if "x" in text:
        a, b = text.lower().split("x")
        return int(a), int(b)
    value = float(text)
    return int(value) if value.is_integer() else value


SCHEMA: dict[str, dict[str, tuple]] = {
    "problem": {
        "kind": (str, "cylinder"),
        "inner_radius": (float, 1.0),
        "outer_radius": (float, 2.0),
        "pressure": (float, 1.0),
        "n_r": (int, bench.CYLINDER_MID[0]),
        "n_t": (int, bench.CYLINDER_MID[1]),
        "half_side": (float, 1.0),
        "spacing": (float, None),
        "amplitude": (float, 1.0),
        "nodes": (str, None),
    },
    "material": {
        "young": (float, 1.0),
        "poisson": (float, 0.3),
    },
    "method": {
        "name": (str, "gfd"),
        "weight": (str, None),
        "gamma": (float, None),
        "alpha": (float, None),
        "epsilon": (float, None),
        "imls_n": (float, None),
        "imls_eps": (float, None),
        "rbf": (str, None),
        "rbf_c": (float, None),
        "rbf_q": (float, None),
        "rbf_eta": (float, None),
        "poly_degree": (int, None),
        "dcpse_basis": (str, None),
        "k_interior": (int, None),
        "k_boundary": (int, None),
        "cond_limit": (float, None),
    },
    "options": {
        "voronoi": (_bool, False),
        "fic": (_bool, False),
        "fic_interior": (_bool, False),
        "criterion": (str, "none"),
    },
    "solver": {
        "kind": (str, "direct"),
        "tol": (float, 1e-10),
        "max_iter": (int, 2000),
        "restart": (int, 100),
    },
    "output": {
        "dir": (str, "out"),
        "dump_matrix": (_bool, False),
    },
    "study": {
        "sizes": (_list(_size), None),
        "methods": (_list(str), None),
    },
    "sweep": {
        "param": (str, None),
        "values": (_list(str), None),
    },
}


@dataclass
class RunConfig:
    """Parsed configuration; ``values[section][key]`` holds typed values."""

    values: dict = field(default_factory=dict)
    source: str | None = None

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_value(self, dotted: str, text: str) -> "RunConfig":
        """Copy with ``section.key`` replaced by the parsed ``text``."""
        section, key = _split_key(dotted)
        conv = SCHEMA[section][key][0]
        try:
            value = conv(text)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{dotted}: cannot parse {text!r} ({exc})") from None
        values = {s: dict(v) for s, v in self.values.items()}
        values[section][key] = value
        out = replace(self, values=values)
        out.validate()
        return out

    # -- derived objects ------------------------------------------------------

    @property
    def problem_kind(self) -> str:
        return self.get("problem", "kind")

    @property
    def method_name(self) -> str:
        return self.get("method", "name")

    def material(self, dim: int = 2) -> Material:
        model = PLANE_STRESS if dim == 2 else THREE_D
        return Material(self.get("material", "young"), self.get("material", "poisson"), model)

    def method_spec(self, name: str | None = None) -> MethodSpec:
        """Method defaults overlaid with any explicitly set keys."""
        m = self.values["method"]
        name = name or m["name"]
        spec = bench.default_method(name)
        w = spec.weight
        wkw = {k: v for k, v in (("gamma", m["gamma"]), ("alpha", m["alpha"]),
                                 ("epsilon", m["epsilon"]), ("n", m["imls_n"]),
                                 ("eps", m["imls_eps"])) if v is not None}
        weight = WeightSpec(**{**_fields(w), **wkw, "family": m["weight"] or w.family})
        r = spec.rbf
        rkw = {k: v for k, v in (("c", m["rbf_c"]), ("q", m["rbf_q"]), ("eta", m["rbf_eta"]))
               if v is not None}
        rbf = RbfSpec(**{**_fields(r), **rkw, "family": m["rbf"] or r.family})
        kw = {"weight": weight, "rbf": rbf}
        if m["poly_degree"] is not None:
            kw["poly_degree"] = m["poly_degree"]
        if m["dcpse_basis"] is not None:
            kw["dcpse_basis"] = m["dcpse_basis"]
        if m["cond_limit"] is not None:
            kw["cond_limit"] = m["cond_limit"]
        return replace(spec, **kw)

    def setup(self, name: str | None = None, dim: int = 2) -> bench.Setup:
        m, o = self.values["method"], self.values["options"]
        name = name or m["name"]
        return bench.Setup(
            method=name, spec=self.method_spec(name), k_interior=m["k_interior"],
            k_boundary=m["k_boundary"], voronoi=o["voronoi"], fic=o["fic"],
            fic_interior=o["fic_interior"], criterion=o["criterion"],
            material=self.material(dim),
        )

    def dim(self) -> int:
        if self.problem_kind == "sphere":
            return 3
        if self.problem_kind == "file":
            return self.load_nodes().dim
        return 2

    def load_nodes(self) -> PointCloud:
        path = self.get("problem", "nodes")
        if not path:
            raise ConfigError("problem kind 'file' needs problem.nodes")
        if not Path(path).is_file():
            raise ConfigError(f"node file not found: {path}")
        try:
            return load_cloud(path)
        except SolverIOError as exc:
            raise ConfigError(str(exc)) from None

    def default_size(self):
        p = self.values["problem"]
        kind = self.problem_kind
        if kind == "cylinder":
            return p["n_r"], p["n_t"]
        if kind == "lshape":
            if p["spacing"] is None:
                return bench.LSHAPE_13K
            return _divisions(p["half_side"], p["spacing"])
        if kind == "sphere":
            return p["spacing"] if p["spacing"] is not None else 0.1
        return None

    def builder(self):
        """``builder(size, setup) -> (problem, exact)`` for analytic problems."""
        p = self.values["problem"]
        kind = self.problem_kind
        if kind == "cylinder":
            return lambda size, setup: bench.cylinder_problem(
                size[0], size[1], setup, p["inner_radius"], p["outer_radius"], p["pressure"])
        if kind == "lshape":
            return lambda size, setup: bench.lshape_problem(int(size), setup, p["half_side"],
                                                            p["amplitude"])
        if kind == "sphere":
            return lambda size, setup: bench.sphere_problem(float(size), setup, p["inner_radius"],
                                                            p["outer_radius"], p["pressure"])
        raise ConfigError("node-file problems have no analytic solution for studies")

    def validate(self) -> None:
        p, o, s = self.values["problem"], self.values["options"], self.values["solver"]
        if p["kind"] not in PROBLEMS:
            raise ConfigError(f"problem.kind must be one of {PROBLEMS}")
        if self.method_name not in bench.METHOD_NAMES:
            raise ConfigError(f"method.name must be one of {bench.METHOD_NAMES}")
        if s["kind"] not in SOLVERS:
            raise ConfigError(f"solver.kind must be one of {SOLVERS}")
        crit = o["criterion"]
        if crit not in ("none", "visibility", "diffraction"):
            raise ConfigError("options.criterion must be none, visibility or diffraction")
        if crit != "none" and p["kind"] in ("sphere", "file"):
            raise ConfigError(f"{crit} criterion needs 2D boundary segments (cylinder or lshape)")
        if crit == "diffraction" and p["kind"] != "lshape":
            raise ConfigError("diffraction criterion needs a singular point (lshape only)")
        if not 0 < p["inner_radius"] < p["outer_radius"]:
            raise ConfigError("need 0 < inner_radius < outer_radius")
        if p["kind"] == "lshape" and p["spacing"] is not None:
            _divisions(p["half_side"], p["spacing"])
        if s["tol"] <= 0 or s["max_iter"] < 1 or s["restart"] < 1:
            raise ConfigError("solver tolerances must be positive")
        self.method_spec()  # surfaces invalid weight or RBF settings


def _fields(obj) -> dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def _divisions(length: float, h: float) -> int:
    if not h > 0:
        raise ConfigError("spacing must be positive")
    m = round(length / h)
    if m < 1 or abs(m * h - length) > 1e-9 * length:
        raise ConfigError(f"spacing {h} does not divide {length}")
    return int(m)


def _split_key(dotted: str) -> tuple[str, str]:
    if "." not in dotted:
        raise ConfigError(f"parameter must be written section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"unknown parameter {dotted!r}")
    return section, key


def defaults() -> RunConfig:
    cfg = RunConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    return cfg


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}") from None
    cfg = defaults()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw.strip())
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise SolverIOError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
