"""Analytic benchmarks, error norms, convergence studies and method comparison."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cloud as cl
from .assembly import Problem, RunResult, TimingSplit, run
from .elasticity import PLANE_STRESS, THREE_D, Material, stress_components
from .errors import CollocError, ConfigError, DomainError, SingularPointError
from .stencils import MethodSpec
from .weights import RbfSpec, WeightSpec

CSV_HEADER = ["method", "n_nodes", "component", "l2", "linf", "init_s", "assembly_s", "solve_s", "post_s"]
RATE_COMPONENTS = ("s11", "s12")


# -- analytic solutions -------------------------------------------------------


@dataclass
class AnalyticSolution:
    """``displacement(x) -> (n, dim)``, ``stress(x) -> (n, dim, dim)``."""

    displacement: Callable[[np.ndarray], np.ndarray]
    stress: Callable[[np.ndarray], np.ndarray]
    singular_points: list = field(default_factory=list)
    name: str = ""


def _radial_frame(x: np.ndarray):
    r = np.linalg.norm(x, axis=1)
    return r, x / r[:, None]


def _check_shell(r: np.ndarray, Ri: float, Ro: float):
    tol = 1e-9 * Ro
    if np.any(r < Ri - tol) or np.any(r > Ro + tol):
        raise DomainError(f"point outside the shell Ri={Ri}, Ro={Ro}")


def exact_cylinder(Ri: float = 1.0, Ro: float = 2.0, P: float = 1.0,
                   material: Material | None = None) -> AnalyticSolution:
    """Thick cylinder under internal pressure, plane stress."""
    mat = material or Material()
    E, nu = mat.E, mat.nu
    A = P * Ri**2 / (Ro**2 - Ri**2)
    B = P * Ri**2 * Ro**2 / (Ro**2 - Ri**2)

    def displacement(x):
        x = np.atleast_2d(np.asarray(x, float))
        r, er = _radial_frame(x)
        _check_shell(r, Ri, Ro)
        ur = ((1.0 - nu) * A * r + (1.0 + nu) * B / r) / E
        return ur[:, None] * er

    def stress(x):
        x = np.atleast_2d(np.asarray(x, float))
        r, er = _radial_frame(x)
        _check_shell(r, Ri, Ro)
        srr = A - B / r**2
        stt = A + B / r**2
        rr = np.einsum("ni,nj->nij", er, er)
        return stt[:, None, None] * np.eye(2) + (srr - stt)[:, None, None] * rr

    return AnalyticSolution(displacement, stress, [], "cylinder")


def exact_sphere(Ri: float = 1.0, Ro: float = 2.0, P: float = 1.0,
                 material: Material | None = None) -> AnalyticSolution:
    """Thick sphere under internal pressure."""
    mat = material or Material(model=THREE_D)
    E, nu = mat.E, mat.nu
    c = P * Ri**3 / (Ro**3 - Ri**3)

    def displacement(x):
        x = np.atleast_2d(np.asarray(x, float))
        r, er = _radial_frame(x)
        _check_shell(r, Ri, Ro)
        ur = c * r / E * ((1.0 - 2.0 * nu) + (1.0 + nu) * Ro**3 / (2.0 * r**3))
        return ur[:, None] * er

    def stress(x):
        x = np.atleast_2d(np.asarray(x, float))
        r, er = _radial_frame(x)
        _check_shell(r, Ri, Ro)
        srr = c * (1.0 - Ro**3 / r**3)
        stt = c * (1.0 + Ro**3 / (2.0 * r**3))
        rr = np.einsum("ni,nj->nij", er, er)
        return stt[:, None, None] * np.eye(3) + (srr - stt)[:, None, None] * rr

    return AnalyticSolution(displacement, stress, [], "sphere")


def williams_exponent(half_angle: float = 0.75 * math.pi, lo: float = 0.5, hi: float = 0.6,
                      tol: float = 1e-12) -> float:
    """Smallest symmetric-mode exponent of a traction-free wedge, by bisection.

    Root of ``sin(2 lam a) + lam sin(2 a) = 0`` in ``(lo, hi)``.
    """
    def g(lam):
        return math.sin(2.0 * lam * half_angle) + lam * math.sin(2.0 * half_angle)

    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        raise ConfigError("bracket does not contain a root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def exact_lshape_modeI(K_amplitude: float = 1.0, material: Material | None = None,
                       corner=(0.0, 0.0)) -> AnalyticSolution:
    """Symmetric corner field of the 270 degree wedge ``x <= 0 or y <= 0``.

    The wedge bisector points along 5*pi/4; both reentrant faces are traction
    free. Stresses scale as ``r**(lam - 1)``.
    """
    mat = material or Material()
    G = mat.mu
    nu = mat.nu
    kappa = (3.0 - nu) / (1.0 + nu) if mat.model == PLANE_STRESS else 3.0 - 4.0 * nu
    alpha = 0.75 * math.pi
    lam = williams_exponent(alpha)
    c1 = -math.cos((lam - 1.0) * alpha) / math.cos((lam + 1.0) * alpha)
    bis = 1.25 * math.pi
    x0 = np.asarray(corner, float)

    def polar(x):
        x = np.atleast_2d(np.asarray(x, float)) - x0
        r = np.linalg.norm(x, axis=1)
        if np.any(r <= 0.0):
            raise SingularPointError("corner field is singular at the reentrant corner")
        phi = np.arctan2(x[:, 1], x[:, 0])
        theta = np.mod(phi - bis + math.pi, 2.0 * math.pi) - math.pi
        if np.any(np.abs(theta) > alpha + 1e-9):
            raise DomainError("point lies inside the removed quadrant")
        return r, theta, theta + bis

    def displacement(x):
        r, t, phi = polar(x)
        a, b = (lam + 1.0) * t, (lam - 1.0) * t
        rl = r**lam / (2.0 * G)
        ur = rl * (c1 * -(lam + 1.0) * np.cos(a) + (kappa - lam) * np.cos(b))
        ut = rl * (c1 * (lam + 1.0) * np.sin(a) + (kappa + lam) * np.sin(b))
        c, s = np.cos(phi), np.sin(phi)
        return K_amplitude * np.stack([ur * c - ut * s, ur * s + ut * c], axis=1)

    def stress(x):
        r, t, phi = polar(x)
        a, b = (lam + 1.0) * t, (lam - 1.0) * t
        F = c1 * np.cos(a) + np.cos(b)
        dF = -c1 * (lam + 1.0) * np.sin(a) - (lam - 1.0) * np.sin(b)
        d2F = -c1 * (lam + 1.0) ** 2 * np.cos(a) - (lam - 1.0) ** 2 * np.cos(b)
        rl = r ** (lam - 1.0)
        srr = rl * ((lam + 1.0) * F + d2F)
        stt = rl * (lam + 1.0) * lam * F
        srt = -rl * lam * dF
        c, s = np.cos(phi), np.sin(phi)
        s11 = srr * c * c + stt * s * s - 2.0 * srt * s * c
        s22 = srr * s * s + stt * c * c + 2.0 * srt * s * c
        s12 = (srr - stt) * s * c + srt * (c * c - s * s)
        out = np.stack([np.stack([s11, s12], -1), np.stack([s12, s22], -1)], -2)
        return K_amplitude * out

    sol = AnalyticSolution(displacement, stress, [tuple(x0)], "lshape")
    sol.exponent = lam  # type: ignore[attr-defined]
    return sol


# -- norms --------------------------------------------------------------------


def _included(n: int, exclusions) -> np.ndarray:
    keep = np.ones(n, bool)
    if exclusions is not None:
        ex = np.asarray(exclusions)
        if ex.dtype == bool:
            keep &= ~ex
        else:
            keep[ex.astype(int)] = False
    return keep


def l2_error(exact, approx, exclusions=None) -> float:
    """``sqrt(sum(e**2)) / n`` over the non-excluded nodes."""
    e = np.asarray(approx, float) - np.asarray(exact, float)
    e = e[_included(len(e), exclusions)]
    if len(e) == 0:
        return 0.0
    return float(np.sqrt(np.sum(e**2)) / len(e))


def linf_error(exact, approx, exclusions=None) -> float:
    e = np.asarray(approx, float) - np.asarray(exact, float)
    e = e[_included(len(e), exclusions)]
    return float(np.max(np.abs(e), initial=0.0))


# -- problems -----------------------------------------------------------------

METHOD_NAMES = ("gfd", "dcpse0", "dcpse1", "dcpse2", "mls", "imls", "rbffd")

# Gaussian kernel on radius-scaled distances; the tail reproduces quadratics
RBF_SHAPE = 1.0
RBF_DEGREE = 2


def default_method(name: str) -> MethodSpec:
    if name == "gfd":
        return MethodSpec("gfd", weight=WeightSpec("powered_spline4", gamma=0.75))
    if name.startswith("dcpse"):
        return MethodSpec(name, weight=WeightSpec("exponential", alpha=1.0, epsilon=0.30))
    if name == "mls":
        return MethodSpec("mls", weight=WeightSpec("spline3"))
    if name == "imls":
        return MethodSpec("imls", weight=WeightSpec("imls", n=4.0, eps=1e-15))
    if name == "rbffd":
        return MethodSpec("rbffd", rbf=RbfSpec("gaussian", c=RBF_SHAPE), poly_degree=RBF_DEGREE)
    raise ConfigError(f"unknown method {name!r}; expected one of {METHOD_NAMES}")


def default_support(name: str, dim: int) -> tuple[int, int]:
    if dim == 3:
        return 37, 75
    return (11, 19) if name == "gfd" else (13, 19)


@dataclass
class Setup:
    """Method-independent run settings shared by the benchmark builders."""

    method: str = "gfd"
    spec: MethodSpec | None = None
    k_interior: int | None = None
    k_boundary: int | None = None
    voronoi: bool = False
    fic: bool = False
    fic_interior: bool = False
    criterion: str = "none"
    material: Material | None = None

    def resolve(self, dim: int) -> tuple[MethodSpec, int, int]:
        spec = self.spec or default_method(self.method)
        ki, kb = default_support(spec.method, dim)
        return spec, self.k_interior or ki, self.k_boundary or kb


def cylinder_problem(n_r: int, n_t: int, setup: Setup | None = None, Ri: float = 1.0,
                     Ro: float = 2.0, P: float = 1.0) -> tuple[Problem, AnalyticSolution]:
    setup = setup or Setup()
    mat = setup.material or Material()
    spec, ki, kb = setup.resolve(2)
    cloud = cl.generate_annulus_quarter(Ri, Ro, n_r, n_t, pressure=P)
    problem = Problem(
        cloud, mat, spec, ki, kb,
        voronoi=setup.voronoi, domain_polygon=cl.annulus_quarter_polygon(Ri, Ro),
        fic=setup.fic, fic_interior=setup.fic_interior, criterion=setup.criterion,
        segments=None if setup.criterion == "none" else cl.polygon_segments(
            cl.annulus_quarter_polygon(Ri, Ro, 256)),
        name="cylinder",
    )
    return problem, exact_cylinder(Ri, Ro, P, mat)


def lshape_segments(L: float) -> np.ndarray:
    """The two reentrant faces meeting at the origin."""
    return np.array([[[0.0, 0.0], [L, 0.0]], [[0.0, 0.0], [0.0, L]]])


def lshape_problem(m: int, setup: Setup | None = None, L: float = 1.0,
                   K: float = 1.0) -> tuple[Problem, AnalyticSolution]:
    """L-shape with ``m`` grid steps per half side (spacing ``L / m``)."""
    setup = setup or Setup()
    mat = setup.material or Material()
    spec, ki, kb = setup.resolve(2)
    exact = exact_lshape_modeI(K, mat)
    cloud = cl.generate_lshape(L, L / m, displacement=exact.displacement)
    problem = Problem(
        cloud, mat, spec, ki, kb,
        voronoi=setup.voronoi, domain_polygon=cl.lshape_polygon(L),
        fic=setup.fic, fic_interior=setup.fic_interior, criterion=setup.criterion,
        segments=lshape_segments(L), singular_point=np.zeros(2), name="lshape",
    )
    return problem, exact


def sphere_problem(h: float, setup: Setup | None = None, Ri: float = 1.0, Ro: float = 2.0,
                   P: float = 1.0) -> tuple[Problem, AnalyticSolution]:
    setup = setup or Setup()
    mat = setup.material or Material(model=THREE_D)
    spec, ki, kb = setup.resolve(3)
    cloud = cl.generate_sphere_eighth(Ri, Ro, h, pressure=P)
    problem = Problem(cloud, mat, spec, ki, kb, voronoi=setup.voronoi, fic=setup.fic,
                      fic_interior=setup.fic_interior, name="sphere")
    return problem, exact_sphere(Ri, Ro, P, mat)


def file_problem(cloud: cl.PointCloud, setup: Setup | None = None) -> Problem:
    setup = setup or Setup()
    mat = setup.material or Material(model=PLANE_STRESS if cloud.dim == 2 else THREE_D)
    spec, ki, kb = setup.resolve(cloud.dim)
    return Problem(cloud, mat, spec, ki, kb, voronoi=setup.voronoi, fic=setup.fic,
                   fic_interior=setup.fic_interior, name="file")


# -- reports ------------------------------------------------------------------


@dataclass
class ErrorReport:
    method: str
    n_nodes: int
    l2: dict
    linf: dict
    timing: TimingSplit = field(default_factory=TimingSplit)
    parameters: dict = field(default_factory=dict)

    def rows(self) -> list[list]:
        t = self.timing
        return [
            [self.method, self.n_nodes, comp, self.l2[comp], self.linf[comp],
             t.init_s, t.assembly_s, t.solve_s, t.post_s]
            for comp in self.l2
        ]


def evaluate(result: RunResult, exact: AnalyticSolution, method: str, parameters=None) -> ErrorReport:
    f = result.fields
    sigma_e = exact.stress(f.x)
    num = stress_components(f.stress)
    ref = stress_components(sigma_e)
    l2 = {k: l2_error(ref[k], num[k]) for k in num}
    linf = {k: linf_error(ref[k], num[k]) for k in num}
    return ErrorReport(method, len(f.node_ids), l2, linf, result.timing, dict(parameters or {}))


def solve_and_evaluate(problem: Problem, exact: AnalyticSolution, solver: str = "direct",
                       **solver_args) -> tuple[ErrorReport, RunResult]:
    res = run(problem, solver=solver, **solver_args)
    params = {
        "method": problem.method.method, "k_interior": problem.k_interior,
        "k_boundary": problem.k_boundary, "voronoi": problem.voronoi, "fic": problem.fic,
        "criterion": problem.criterion, "residual": res.solve.residual,
    }
    return evaluate(res, exact, problem.method.method, params), res


# -- convergence and comparison -----------------------------------------------


class StudyAborted(CollocError):
    """A run inside a study failed; ``reports`` keeps the finished ones."""

    def __init__(self, message: str, reports: list, cause: CollocError):
        self.reports = reports
        self.exit_code = cause.exit_code
        self.prefix = cause.prefix
        super().__init__(message)


def convergence_rate(n_nodes: Sequence[float], errors: Sequence[float]) -> float:
    """``-slope`` of the least-squares line through ``(log n, log error)``."""
    n = np.log(np.asarray(n_nodes, float))
    e = np.log(np.asarray(errors, float))
    if len(n) < 2:
        raise ConfigError("need at least two sizes to fit a rate")
    slope = np.polyfit(n, e, 1)[0]
    return float(-slope)


@dataclass
class ConvergenceResult:
    method: str
    rates: dict
    average: float
    reports: list


def convergence_study(builder: Callable[[object], tuple[Problem, AnalyticSolution]],
                      sizes: Iterable, method: str = "gfd", setup: Setup | None = None,
                      components: Sequence[str] = RATE_COMPONENTS, solver: str = "direct"
                      ) -> ConvergenceResult:
    """Solve at each size and fit L2 rates per stress component.

    ``builder(size, setup)`` returns ``(problem, exact)``. The average rate is
    taken over ``components``.
    """
    sizes = list(sizes)
    if len(sizes) < 3:
        raise ConfigError("a convergence study needs at least 3 sizes")
    setup = replace(setup or Setup(), method=method)
    reports = []
    for size in sizes:
        try:
            problem, exact = builder(size, setup)
            rep, _ = solve_and_evaluate(problem, exact, solver)
        except CollocError as exc:
            raise StudyAborted(f"size {size}: {exc}", reports, exc) from exc
        reports.append(rep)
    return fit_rates(method, reports, components)


def fit_rates(method: str, reports: list, components: Sequence[str] = RATE_COMPONENTS) -> ConvergenceResult:
    n = [r.n_nodes for r in reports]
    rates = {c: convergence_rate(n, [r.l2[c] for r in reports]) for c in reports[0].l2}
    avg = float(np.mean([rates[c] for c in components]))
    return ConvergenceResult(method, rates, avg, reports)


def compare_methods(builder: Callable[[object], tuple[Problem, AnalyticSolution]], size,
                    methods: Sequence[str], setup: Setup | None = None,
                    solver: str = "direct") -> list[ErrorReport]:
    """One report per method on the same cloud size."""
    out = []
    for m in methods:
        problem, exact = builder(size, replace(setup or Setup(), method=m, spec=None))
        try:
            rep, _ = solve_and_evaluate(problem, exact, solver)
        except CollocError as exc:
            raise StudyAborted(f"method {m}: {exc}", out, exc) from exc
        out.append(rep)
    return out


def timing_study(builder, sizes, method: str = "gfd", setup: Setup | None = None,
                 repeats: int = 3, solver: str = "direct") -> list[tuple[int, TimingSplit]]:
    """Median phase times per size after one warm-up solve at the first size."""
    setup = replace(setup or Setup(), method=method)
    run(builder(sizes[0], setup)[0], solver=solver)
    out = []
    for size in sizes:
        problem, _ = builder(size, setup)
        splits = [run(problem, solver=solver).timing for _ in range(repeats)]
        med = TimingSplit(*(float(np.median([getattr(t, f) for t in splits]))
                            for f in ("init_s", "assembly_s", "solve_s", "post_s")))
        out.append((len(problem.cloud), med))
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def reports_to_csv(reports: Sequence[ErrorReport], extra: dict | None = None) -> str:
    """CSV text with the standard header (plus ``extra`` columns per report)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra_cols = list(extra) if extra else []
    w.writerow(CSV_HEADER + extra_cols)
    for k, rep in enumerate(reports):
        for row in rep.rows():
            tail = [extra[c][k] for c in extra_cols] if extra else []
            w.writerow([_fmt(v) for v in row + tail])
    return buf.getvalue()


# -- size ladders used by the studies ----------------------------------------

# n_t = 2 n_r keeps cells near square at mid radius; 968 to 11,858 nodes
CYLINDER_SIZES = ((21, 43), (32, 65), (49, 99), (76, 153))
CYLINDER_MID = (49, 99)  # 5,000 nodes
CYLINDER_5K = (33, 157)  # 34 x 158 = 5,372 nodes
# a 34 x 158 polar grid only has square cells (at mid radius) on a thin shell;
# on Ro/Ri = 2 it is three times coarser radially than tangentially
CYLINDER_5K_RO = 1.4
LSHAPE_SIZES = (32, 45, 64, 90, 140)
LSHAPE_13K = 67  # 13,735 active nodes


def cylinder_builder(size, setup: Setup):
    n_r, n_t = size
    return cylinder_problem(n_r, n_t, setup)


def cylinder_5k_problem(setup: Setup | None = None) -> tuple[Problem, AnalyticSolution]:
    """The 5,372-node cylinder used by the sensitivity and variant studies."""
    return cylinder_problem(*CYLINDER_5K, setup, Ro=CYLINDER_5K_RO)


def lshape_builder(size, setup: Setup):
    return lshape_problem(int(size), setup)


def sphere_builder(size, setup: Setup):
    return sphere_problem(float(size), setup)
