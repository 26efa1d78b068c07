"""Global system assembly, sparse solvers and the four-phase timing split."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import cloud as cl
from .elasticity import (
    Material,
    characteristic_length,
    fic_block,
    navier_block,
    split_ops,
    stress_from_gradient,
    traction_block,
    value_block,
)
from .errors import (
    AssemblyError,
    ConfigError,
    ConvergenceError,
    SingularSystemError,
    SolverIOError,
)
from .stencils import MethodSpec, StencilSet, build_stencils, derivative_indices
from .weights import WeightSpec

CRITERIA = ("none", "visibility", "diffraction")


@dataclass
class Problem:
    """A compiled problem: cloud, material, operator settings and toggles.

    ``segments`` are the boundary segments tested by the visibility and
    diffraction criteria; ``singular_point`` is the corner used by
    diffraction. Nodes flagged ``singular`` are left out of the system.
    """

    cloud: cl.PointCloud
    material: Material
    method: MethodSpec
    k_interior: int
    k_boundary: int
    voronoi: bool = False
    domain_polygon: np.ndarray | None = None
    fic: bool = False
    fic_interior: bool = False
    criterion: str = "none"
    segments: np.ndarray | None = None
    singular_point: np.ndarray | None = None
    body_force: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "problem"

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown support criterion {self.criterion!r}")
        if self.criterion != "none" and self.segments is None:
            raise ConfigError(f"{self.criterion} criterion needs boundary segments")
        if self.criterion == "diffraction" and self.singular_point is None:
            raise ConfigError("diffraction criterion needs a singular point")
        if self.cloud.dim != self.material.dim:
            raise ConfigError(
                f"{self.cloud.dim}D cloud does not match the {self.material.model} material"
            )
        if self.k_interior < 1 or self.k_boundary < 1:
            raise ConfigError("support sizes must be positive")


@dataclass
class TimingSplit:
    init_s: float = 0.0
    assembly_s: float = 0.0
    solve_s: float = 0.0
    post_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.init_s + self.assembly_s + self.solve_s + self.post_s

    def fractions(self) -> dict:
        t = self.total_s or 1.0
        return {
            "init": self.init_s / t,
            "assembly": self.assembly_s / t,
            "solve": self.solve_s / t,
            "post": self.post_s / t,
        }


@dataclass
class SparseSystem:
    """Square system ``matrix @ x = rhs`` with ``dim`` unknowns per active node.

    Rows were divided by ``row_scale`` (their largest absolute coefficient).
    Unknown ``dim * i + k`` is component ``k`` of ``node_ids[i]``.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dim: int
    node_ids: np.ndarray
    row_scale: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    relative_residual: float
    iterations: int = 0
    solver: str = "direct"


@dataclass
class AssemblyState:
    """Intermediate products kept for post-processing and inspection."""

    active: cl.PointCloud
    supports: list
    stencils: StencilSet
    voronoi: np.ndarray | None = None
    fic_h: np.ndarray | None = None


# -- initialization -----------------------------------------------------------


def active_cloud(cloud: cl.PointCloud) -> cl.PointCloud:
    return cloud.subset(~cloud.singular) if np.any(cloud.singular) else cloud


def prepare_supports(problem: Problem, active: cl.PointCloud) -> list:
    supports = cl.select_supports(active, problem.k_interior, problem.k_boundary)
    if problem.criterion == "none":
        return supports
    need = len(derivative_indices(active.dim, 2))
    for i in cl.near_segments(active, supports, problem.segments):
        if problem.criterion == "visibility":
            supports[i] = cl.apply_visibility(
                supports[i], active, problem.segments, need, problem.domain_polygon
            )
        else:
            supports[i] = cl.apply_diffraction(
                supports[i], active, problem.singular_point, problem.segments, need,
                problem.domain_polygon,
            )
    return supports


def _init(problem: Problem):
    active = active_cloud(problem.cloud)
    supports = prepare_supports(problem, active)
    vol = cl.voronoi_volumes(active, problem.domain_polygon) if problem.voronoi else None
    return active, supports, vol


# -- assembly -----------------------------------------------------------------


def _row_kinds(active: cl.PointCloud, rows: np.ndarray):
    """Per (node, component): 0 equilibrium, 1 traction, 2 prescribed value."""
    role = active.role[rows]
    dim = active.dim
    kind = np.zeros((len(rows), dim), dtype=int)
    kind[role == cl.NEUMANN] = 1
    dmask = role == cl.DIRICHLET
    fixed = np.isfinite(active.disp[rows])
    kind[dmask] = np.where(fixed[dmask], 2, 1)
    return kind


def _third_order_interior(problem, active, supports, vol, rows_needed):
    """Third-derivative GFD tables for the interior FIC term."""
    weight = problem.method.weight if problem.method.method == "gfd" else WeightSpec()
    spec = MethodSpec("gfd", weight=weight, cond_limit=problem.method.cond_limit)
    return build_stencils(active, [supports[i] for i in rows_needed], spec, vol, max_order=3)


def assemble_rows(problem: Problem, active, supports, stencils: StencilSet, vol=None):
    """COO triplets, rhs and FIC lengths for the whole system."""
    dim = active.dim
    mat = problem.material
    n = len(active)
    rhs = np.zeros(n * dim)
    I_parts, J_parts, V_parts = [], [], []
    fic_h = np.zeros(n)
    radius = np.array([s.radius for s in supports])
    count = np.array([len(s.member_ids) for s in supports])
    if problem.fic or problem.fic_interior:
        fic_h = characteristic_length(radius, np.maximum(count, 1), dim)

    third = None
    if problem.fic_interior:
        interior = np.flatnonzero(active.role == cl.INTERIOR)
        third = _third_order_interior(problem, active, supports, vol, interior)

    for grp in stencils.groups:
        rows = grp.rows
        V, D1, D2 = split_ops(grp.coeffs, stencils.ops, dim)
        kind = _row_kinds(active, rows)
        normal = np.nan_to_num(active.normal[rows])
        x = active.x[rows]
        body = np.zeros((len(rows), dim)) if problem.body_force is None else np.asarray(
            problem.body_force(x), float
        ).reshape(len(rows), dim)

        nav = navier_block(D2, mat)
        nav_rhs = -body
        if third is not None:
            nav, nav_rhs = _fic_interior(nav, nav_rhs, grp, third, kind, fic_h, mat, dim)
        tra = traction_block(D1, normal, mat)
        tra_rhs = active.traction[rows].copy()
        if problem.fic:
            h = fic_h[rows]
            tra = fic_block(tra, navier_block(D2, mat), h, normal)
            tra_rhs = tra_rhs + (h * normal.sum(axis=1))[:, None] * body
        val = value_block(V, dim)
        val_rhs = np.nan_to_num(active.disp[rows])

        k4 = kind[:, :, None, None]
        block = np.where(k4 == 0, nav, np.where(k4 == 1, tra, val))
        brhs = np.where(kind == 0, nav_rhs, np.where(kind == 1, tra_rhs, val_rhs))

        g, _, ncol, _ = block.shape
        ri = (dim * rows[:, None] + np.arange(dim)[None, :])  # (g, dim)
        cj = (dim * grp.cols[:, :, None] + np.arange(dim)[None, None, :])  # (g, ncol, dim)
        I = np.broadcast_to(ri[:, :, None, None], block.shape)
        J = np.broadcast_to(cj[:, None, :, :], block.shape)
        nz = block != 0.0
        I_parts.append(I[nz])
        J_parts.append(J[nz])
        V_parts.append(block[nz])
        rhs[ri.ravel()] = brhs.ravel()

    if not np.all(np.isfinite(rhs)):
        raise AssemblyError("non-finite right-hand side (check boundary data)")
    return np.concatenate(I_parts), np.concatenate(J_parts), np.concatenate(V_parts), rhs, fic_h


def _fic_interior(nav, nav_rhs, grp, third: StencilSet, kind, fic_h, mat, dim):
    """Interior rows ``A - 1/2 * h * sum_j dA/dx_j`` where third derivatives exist."""
    lam, mu = mat.lam, mat.mu
    ops3 = {tuple(op): k for k, op in enumerate(third.ops)}
    nav = nav.copy()
    for j, r in enumerate(grp.rows):
        if kind[j, 0] != 0:
            continue
        g3, jj = third.locate(r)
        if g3.cols.shape[1] != grp.cols.shape[1] or np.any(g3.cols[jj] != grp.cols[j]):
            raise AssemblyError("third-derivative stencil columns do not match")
        T = g3.coeffs[jj]

        def d3(a, b, c):
            idx = [0] * dim
            for ax in (a, b, c):
                idx[ax] += 1
            return T[ops3[tuple(idx)]]

        h = fic_h[r]
        extra = np.zeros(nav.shape[1:])
        for i in range(dim):
            for k in range(dim):
                for jx in range(dim):
                    term = (lam + mu) * d3(i, k, jx)
                    if i == k:
                        term = term + mu * sum(d3(l, l, jx) for l in range(dim))
                    extra[i, :, k] += term
        nav[j] -= 0.5 * h * extra
    return nav, nav_rhs


def build_system(I, J, V, rhs, n_dofs, dim, node_ids) -> SparseSystem:
    A = sp.csr_matrix((V, (I, J)), shape=(n_dofs, n_dofs))
    A.sum_duplicates()
    A.sort_indices()
    scale = np.zeros(n_dofs)
    if A.nnz:
        scale = np.abs(A).max(axis=1).toarray().ravel()
    empty = np.flatnonzero(scale == 0.0)
    if len(empty):
        raise SingularSystemError("assembled matrix has all-zero rows", empty.tolist())
    A = sp.diags(1.0 / scale) @ A
    return SparseSystem(A.tocsr(), rhs / scale, dim, node_ids, scale)


def assemble(problem: Problem):
    """Assemble the system; returns ``(SparseSystem, AssemblyState, TimingSplit)``."""
    timing = TimingSplit()
    t0 = time.perf_counter()
    active, supports, vol = _init(problem)
    t1 = time.perf_counter()
    stencils = build_stencils(active, supports, problem.method, vol)
    I, J, V, rhs, fic_h = assemble_rows(problem, active, supports, stencils, vol)
    system = build_system(I, J, V, rhs, len(active) * active.dim, active.dim, active.ids)
    t2 = time.perf_counter()
    timing.init_s = t1 - t0
    timing.assembly_s = t2 - t1
    state = AssemblyState(active, supports, stencils, vol, fic_h if problem.fic else None)
    return system, state, timing


# -- solvers ------------------------------------------------------------------


def _residual(system: SparseSystem, x: np.ndarray):
    r = float(np.max(np.abs(system.matrix @ x - system.rhs), initial=0.0))
    b = float(np.max(np.abs(system.rhs), initial=0.0))
    return r, (r / b if b > 0 else r)


def _suspect_rows(A: sp.csr_matrix, max_dense: int = 600) -> list[int]:
    """Zero rows, else rows carrying the left null vector (small systems),
    else the indices of empty columns."""
    A = A.tocsr()
    suspects = np.flatnonzero(np.diff(A.indptr) == 0).tolist()
    if not suspects and A.shape[0] <= max_dense:
        u, _, _ = np.linalg.svd(A.toarray())
        null = np.abs(u[:, -1])
        suspects = np.flatnonzero(null > 0.1 * null.max()).tolist()
    if not suspects:
        suspects = np.flatnonzero(np.bincount(A.indices, minlength=A.shape[1]) == 0).tolist()
    return sorted(suspects)


def solve_direct(system: SparseSystem) -> SolveResult:
    """Sparse LU solve; a failed factorization names suspect rows."""
    A = system.matrix.tocsc()
    try:
        lu = spla.splu(A)
        x = lu.solve(system.rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed ({exc})", _suspect_rows(system.matrix)) from None
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite values", _suspect_rows(system.matrix))
    r, rel = _residual(system, x)
    return SolveResult(x, r, rel, 0, "direct")


def solve_iterative(
    system: SparseSystem, tol: float = 1e-10, max_iter: int = 2000, restart: int = 100,
    drop_tol: float = 1e-5, fill_factor: float = 20.0,
) -> SolveResult:
    """Restarted GMRES with an incomplete-LU preconditioner.

    ``tol`` bounds the preconditioned residual relative to the preconditioned
    right-hand side. Breakdown and plain non-convergence raise
    :class:`ConvergenceError` with different ``breakdown`` flags.
    """
    A = system.matrix.tocsc()
    b = system.rhs
    n = A.shape[0]
    if not np.any(b):
        return SolveResult(np.zeros(n), 0.0, 0.0, 0, "gmres")
    try:
        ilu = spla.spilu(A, drop_tol=drop_tol, fill_factor=fill_factor)
        M = spla.LinearOperator((n, n), matvec=ilu.solve)
    except RuntimeError:
        M = None  # singular incomplete factor: run unpreconditioned
    history: list[float] = []
    with np.errstate(all="ignore"):
        x, info = spla.gmres(
            A, b, rtol=tol, atol=0.0, restart=min(restart, n), maxiter=max_iter, M=M,
            callback=history.append, callback_type="pr_norm",
        )
    iterations = len(history)
    r, rel = _residual(system, x)
    finite = np.all(np.isfinite(x))
    if info < 0 or not finite:
        raise ConvergenceError("Krylov iteration broke down", r if finite else float("inf"),
                               iterations, breakdown=True)
    if info > 0:
        last = history[-1] if history else float("nan")
        raise ConvergenceError(
            f"preconditioned residual {last:.3e} above tolerance {tol:.1e}", r, iterations
        )
    return SolveResult(x, r, rel, iterations, "gmres")


def dump_matrix(system: SparseSystem, path) -> None:
    """Write ``i j value`` lines (0-based, row-scaled matrix)."""
    A = system.matrix.tocoo()
    order = np.lexsort((A.col, A.row))
    lines = [f"{i} {j} {format(v, '.17g')}" for i, j, v in zip(A.row[order], A.col[order], A.data[order])]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise SolverIOError(f"cannot write matrix dump {path}: {exc}") from exc


def load_matrix(path, n: int) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((n, n))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))


# -- post-processing ----------------------------------------------------------


@dataclass
class FieldResult:
    """Nodal displacement and stress on the active cloud (row order)."""

    node_ids: np.ndarray
    x: np.ndarray
    displacement: np.ndarray
    stress: np.ndarray


def postprocess(state: AssemblyState, x: np.ndarray, material: Material) -> FieldResult:
    active, st = state.active, state.stencils
    dim = active.dim
    U = x.reshape(-1, dim)
    disp = np.zeros_like(U)
    grad = np.zeros((len(active), dim, dim))
    for grp in st.groups:
        V, D1, _ = split_ops(grp.coeffs, st.ops, dim)
        Ucols = U[grp.cols]  # (g, ncol, dim)
        disp[grp.rows] = np.einsum("gp,gpk->gk", V, Ucols)
        grad[grp.rows] = np.einsum("gjp,gpi->gij", D1, Ucols)
    return FieldResult(active.ids, active.x, disp, stress_from_gradient(grad, material))


@dataclass
class RunResult:
    system: SparseSystem
    state: AssemblyState
    solve: SolveResult
    fields: FieldResult
    timing: TimingSplit = field(default_factory=TimingSplit)


def run(problem: Problem, solver: str = "direct", tol: float = 1e-10, max_iter: int = 2000,
        restart: int = 100) -> RunResult:
    """Assemble, solve and post-process, timing each phase."""
    system, state, timing = assemble(problem)
    t0 = time.perf_counter()
    if solver == "direct":
        res = solve_direct(system)
    elif solver == "iterative":
        res = solve_iterative(system, tol=tol, max_iter=max_iter, restart=restart)
    else:
        raise ConfigError(f"unknown solver {solver!r}")
    t1 = time.perf_counter()
    fields = postprocess(state, res.x, problem.material)
    t2 = time.perf_counter()
    timing.solve_s = t1 - t0
    timing.post_s = t2 - t1
    return RunResult(system, state, res, fields, timing)


# -- 1D tutorial --------------------------------------------------------------


def poisson_1d_system(
    x: Sequence[float],
    method: str = "gfd",
    source: Callable[[np.ndarray], np.ndarray] | None = None,
    left_value: float = 0.0,
    right_slope: float = 0.0,
    weight: WeightSpec | None = None,
) -> tuple[SparseSystem, StencilSet]:
    """``f'' = source`` on a 1D grid, ``f = left_value`` at the first node and
    ``f' = right_slope`` at the last one. Three-point supports (k = 2)."""
    xs = np.asarray(x, float)
    n = len(xs)
    if n < 3:
        raise ConfigError("need at least 3 nodes")
    role = np.full(n, cl.INTERIOR)
    role[0], role[-1] = cl.DIRICHLET, cl.NEUMANN
    normal = np.full((n, 1), np.nan)
    normal[0], normal[-1] = -1.0, 1.0
    cloud1 = cl.PointCloud(xs, role=role, normal=normal, dim=1)
    supports = cl.select_supports(cloud1, 2)
    default = WeightSpec("exponential") if method.startswith("dcpse") else WeightSpec()
    st = build_stencils(cloud1, supports, MethodSpec(method, weight=weight or default))
    src = np.zeros(n) if source is None else np.asarray(source(xs), float)
    I, J, V = [], [], []
    rhs = np.zeros(n)
    for grp in st.groups:
        for j, r in enumerate(grp.rows):
            op = 2 if role[r] == cl.INTERIOR else (0 if role[r] == cl.DIRICHLET else 1)
            coeffs = grp.coeffs[j, op]
            I += [r] * len(coeffs)
            J += grp.cols[j].tolist()
            V += coeffs.tolist()
            rhs[r] = {2: src[r], 0: left_value, 1: right_slope}[op]
    I, J, V = np.array(I), np.array(J), np.array(V)
    keep = V != 0.0
    return build_system(I[keep], J[keep], V[keep], rhs, n, 1, cloud1.ids), st
