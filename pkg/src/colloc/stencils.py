"""Derivative stencils for GFD, DC PSE (three variants), RBF-FD, MLS and IMLS.

Every builder works on batches of supports with equal member count. Local
coordinates are centered at the collocation node and divided by its support
radius before any matrix is formed; coefficients are rescaled afterwards.

A stencil table has one column per node of ``[center, member_1, ...]`` and one
row per operator. Operator 0 is the field value (the identity for the direct
methods, the shape-function row for MLS/IMLS); the remaining operators are the
derivatives returned by :func:`derivative_indices`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np

from .cloud import PointCloud, Support, VoronoiMeasure
from .errors import ConfigError, IllConditionedSupportError, InsufficientSupportError
from .weights import RbfSpec, WeightSpec, eval_imls_weight, eval_rbf, eval_weight

METHODS = ("gfd", "dcpse0", "dcpse1", "dcpse2", "mls", "imls", "rbffd")
DEFAULT_COND_LIMIT = 1e12

DerivIndex = tuple


def derivative_indices(dim: int, max_order: int = 2) -> list[DerivIndex]:
    """Multi-indices of total order 1..max_order, by order then descending lex.

    2D order 2 gives ``(1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    out = []
    for order in range(1, max_order + 1):
        level = set()
        for combo in combinations_with_replacement(range(dim), order):
            idx = [0] * dim
            for axis in combo:
                idx[axis] += 1
            level.add(tuple(idx))
        out.extend(sorted(level, reverse=True))
    return out


def monomial_indices(dim: int, degree: int, constant: bool = True) -> list[DerivIndex]:
    head = [(0,) * dim] if constant else []
    return head + derivative_indices(dim, degree)


def _monomials(z: np.ndarray, exps: Sequence[DerivIndex]) -> np.ndarray:
    """``z`` (..., dim) -> (..., len(exps)) with columns prod_a z_a**e_a."""
    e = np.asarray(exps, dtype=int)
    out = np.ones(z.shape[:-1] + (len(e),))
    for a in range(z.shape[-1]):
        for p in range(1, int(e[:, a].max(initial=0)) + 1):
            out[..., e[:, a] >= p] *= z[..., a, None]
    return out


def _factorial(exps: Sequence[DerivIndex]) -> np.ndarray:
    return np.array([math.prod(math.factorial(v) for v in ex) for ex in exps], float)


def _order(exps: Sequence[DerivIndex]) -> np.ndarray:
    return np.array([sum(ex) for ex in exps], dtype=int)


# -- specs and containers -----------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    """Operator construction settings.

    ``weight`` is the distance weight of GFD, DC PSE and MLS/IMLS; ``rbf`` and
    ``poly_degree`` configure RBF-FD; ``dcpse_basis`` selects the correction
    function basis.
    """

    method: str = "gfd"
    weight: WeightSpec = field(default_factory=WeightSpec)
    rbf: RbfSpec = field(default_factory=RbfSpec)
    poly_degree: int = 2
    dcpse_basis: str = "polynomial"
    rbf_include_center: bool = True
    cond_limit: float = DEFAULT_COND_LIMIT

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.dcpse_basis not in ("polynomial", "exponential"):
            raise ConfigError(f"unknown DC PSE basis {self.dcpse_basis!r}")
        if self.poly_degree not in (-1, 0, 1, 2, 3):
            raise ConfigError("RBF-FD polynomial degree must be -1 (none) or 0..3")
        if not self.cond_limit > 1:
            raise ConfigError("cond_limit must exceed 1")

    @property
    def direct(self) -> bool:
        """True when the value row is the identity (the method interpolates)."""
        return self.method not in ("mls", "imls")


@dataclass
class StencilRow:
    center_id: int
    deriv: DerivIndex
    coeff_center: float
    coeffs: dict

    def apply(self, values: dict) -> float:
        """Evaluate the row on nodal values given as ``{node_id: value}``."""
        total = self.coeff_center * values[self.center_id]
        for nid, c in self.coeffs.items():
            total += c * values[nid]
        return float(total)


@dataclass
class MlsShape:
    center_id: int
    center_value: float
    values: dict
    deriv_rows: dict

    def total(self) -> float:
        return self.center_value + float(sum(self.values.values()))


@dataclass
class StencilGroup:
    """Stencils of centers sharing one member count.

    ``rows`` (g,) and ``cols`` (g, m+1) are cloud row positions; ``cols[:, 0]``
    is the center. ``coeffs`` has shape (g, n_ops, m+1).
    """

    rows: np.ndarray
    cols: np.ndarray
    coeffs: np.ndarray


@dataclass
class StencilSet:
    ops: list
    groups: list
    method: str = ""

    def op_index(self, deriv: DerivIndex) -> int:
        return self.ops.index(tuple(deriv))

    def locate(self, row: int) -> tuple[StencilGroup, int]:
        if not hasattr(self, "_where"):
            self._where = {}
            for g in self.groups:
                for j, r in enumerate(g.rows):
                    self._where[int(r)] = (g, j)
        return self._where[int(row)]

    def row(self, cloud: PointCloud, row: int, deriv: DerivIndex) -> StencilRow:
        g, j = self.locate(row)
        k = self.op_index(deriv)
        c = g.coeffs[j, k]
        ids = cloud.ids[g.cols[j]]
        return StencilRow(int(ids[0]), tuple(deriv), float(c[0]), dict(zip(ids[1:].tolist(), c[1:].tolist())))


# -- batched linear algebra ---------------------------------------------------


def _check_condition(A: np.ndarray, ids: np.ndarray, limit: float, symmetric: bool):
    """Raise on the first matrix whose equilibrated condition number exceeds ``limit``."""
    if symmetric:
        d = np.sqrt(np.abs(np.einsum("gii->gi", A)))
        d = np.where(d > 0, d, 1.0)
        B = A / d[:, :, None] / d[:, None, :]
    else:
        r = np.max(np.abs(A), axis=2, keepdims=True)
        B = A / np.where(r > 0, r, 1.0)
        c = np.max(np.abs(B), axis=1, keepdims=True)
        B = B / np.where(c > 0, c, 1.0)
    with np.errstate(all="ignore"):
        sv = np.linalg.svd(B, compute_uv=False)
        cond = sv[:, 0] / sv[:, -1]
    bad = ~(cond <= limit)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise IllConditionedSupportError(int(ids[i]), float(cond[i]), limit)


def _solve(A, B, ids, limit, symmetric):
    _check_condition(A, ids, limit, symmetric)
    return np.linalg.solve(A, B)


# -- method cores (scaled coordinates) ----------------------------------------
# z: (g, m, d) member offsets / r; s: (g, m) normalized effective distances.


def _gfd_core(z, w, derivs, ids, limit):
    T = _monomials(z, derivs) / _factorial(derivs)  # (g, m, nd)
    TW = np.swapaxes(T, 1, 2) * w[:, None, :]  # (g, nd, m)
    A = TW @ T
    C = _solve(A, TW, ids, limit, symmetric=True)
    return np.concatenate([-C.sum(axis=2, keepdims=True), C], axis=2)


def _dcpse_core(variant, z, w, vol, derivs, basis, ids, limit):
    """``z``, ``w`` and ``vol`` include the center as column 0."""
    dim = z.shape[-1]
    degree = max(sum(d) for d in derivs)
    constant = variant != "dcpse2"
    exps = monomial_indices(dim, degree, constant=constant)
    Q = _monomials(z, exps) / _factorial(exps)  # (g, n, nb)
    S = -z
    if basis == "polynomial":
        P = _monomials(S, exps)
    else:
        P = np.exp(S @ np.asarray(exps, float).T)
    kern = vol * w  # (g, n)
    A = np.einsum("gpi,gp,gpj->gij", Q, kern, P)
    rhs = np.zeros((len(exps), len(derivs)))
    for k, d in enumerate(derivs):
        rhs[exps.index(tuple(d)), k] = 1.0
    if variant == "dcpse1":
        rhs[0, :] = 1.0
    a = _solve(A, np.broadcast_to(rhs, A.shape[:1] + rhs.shape), ids, limit, symmetric=False)
    eta = np.einsum("gpj,gjk->gkp", P, a) * w[:, None, :]
    coeff = vol[:, None, :] * eta
    if variant == "dcpse1":
        coeff[:, :, 0] -= 1.0
    elif variant == "dcpse2":
        # unconstrained zeroth moment, removed with the center value
        coeff[:, :, 0] -= coeff.sum(axis=2)
    return coeff


def _mls_core(z, w, degree, derivs, ids, limit):
    """``z`` and ``w`` include the center as column 0."""
    dim = z.shape[-1]
    exps = monomial_indices(dim, degree)
    P = _monomials(z, exps)  # (g, n, nb)
    PW = np.swapaxes(P, 1, 2) * w[:, None, :]
    A = PW @ P
    C = _solve(A, PW, ids, limit, symmetric=True)  # (g, nb, n)
    pick = [0] + [exps.index(tuple(d)) for d in derivs]
    scale = np.concatenate([[1.0], _factorial(derivs)])
    return C[:, pick, :] * scale[None, :, None]


def _rbf_rhs(spec: RbfSpec, z, derivs):
    """Derivatives of phi(|x - y_j|) at x = 0 for the nodes ``y_j = z``.

    Returns (g, nd, n). First and second derivatives only.
    """
    x = -z  # x - y_j at x = 0
    s = np.linalg.norm(x, axis=-1)
    at0 = s == 0.0
    if np.any(at0) and not spec.smooth_at_origin:
        eval_rbf(spec, np.zeros(1))  # raises the domain error
    safe = np.where(at0, 1.0, s)
    _, d1, d2 = eval_rbf(spec, np.where(at0, 1.0, s))
    _, d1_0, d2_0 = eval_rbf(spec, np.zeros(1)) if np.any(at0) else (None, 0.0, 0.0)
    out = np.empty(z.shape[:2] + (len(derivs),))
    for k, d in enumerate(derivs):
        axes = [a for a, n in enumerate(d) for _ in range(n)]
        if len(axes) == 1:
            a = axes[0]
            val = d1 * x[..., a] / safe
            val = np.where(at0, 0.0, val)
        elif len(axes) == 2:
            a, b = axes
            xa, xb = x[..., a], x[..., b]
            delta = 1.0 if a == b else 0.0
            val = d2 * xa * xb / safe**2 + d1 * (delta / safe - xa * xb / safe**3)
            val = np.where(at0, d2_0 * delta, val)
        else:
            raise ConfigError("RBF-FD stencils support first and second derivatives only")
        out[..., k] = val
    return np.swapaxes(out, 1, 2)


def _rbffd_core(spec: RbfSpec, z, degree, derivs, ids, limit):
    """``z`` holds the interpolation nodes (the center first when included)."""
    g, n, dim = z.shape
    diff = z[:, :, None, :] - z[:, None, :, :]
    phi, _, _ = eval_rbf(spec, np.linalg.norm(diff, axis=-1))
    rhs_phi = _rbf_rhs(spec, z, derivs)  # (g, nd, n)
    if degree >= 0:
        exps = monomial_indices(dim, degree)
        P = _monomials(z, exps)  # (g, n, np)
        npoly = len(exps)
        if n < npoly:
            raise InsufficientSupportError(int(ids[0]), n, npoly)
        M = np.zeros((g, n + npoly, n + npoly))
        M[:, :n, :n] = phi
        M[:, :n, n:] = P
        M[:, n:, :n] = np.swapaxes(P, 1, 2)
        rhs_poly = np.zeros((len(derivs), npoly))
        for k, d in enumerate(derivs):
            if tuple(d) in exps:
                rhs_poly[k, exps.index(tuple(d))] = _factorial([d])[0]
        rhs = np.concatenate([rhs_phi, np.broadcast_to(rhs_poly, (g,) + rhs_poly.shape)], axis=2)
    else:
        M, rhs = phi, rhs_phi
    sol = _solve(M, np.swapaxes(rhs, 1, 2), ids, limit, symmetric=False)
    return np.swapaxes(sol[:, :n, :], 1, 2)  # (g, nd, n)


# -- public builders ----------------------------------------------------------


def _measure_array(cloud: PointCloud, voronoi) -> np.ndarray | None:
    if voronoi is None:
        return None
    if isinstance(voronoi, np.ndarray):
        vol = np.asarray(voronoi, float)
    elif isinstance(voronoi, dict):
        vol = np.array([voronoi[int(i)] for i in cloud.ids], float)
    else:
        items = list(voronoi)
        if items and isinstance(items[0], VoronoiMeasure):
            lookup = {m.node_id: m.measure for m in items}
            vol = np.array([lookup[int(i)] for i in cloud.ids], float)
        else:
            vol = np.asarray(items, float)
    if vol.shape != (len(cloud),):
        raise ConfigError("need one Voronoi measure per node")
    if not np.all(vol > 0):
        raise ConfigError("Voronoi measures must be positive")
    return vol


def _weights(spec: WeightSpec, s: np.ndarray) -> np.ndarray:
    if spec.family == "imls":
        return eval_imls_weight(spec, s)
    return eval_weight(spec, s)


def _group_supports(supports: Sequence[Support]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, sup in enumerate(supports):
        groups.setdefault(len(sup.member_ids), []).append(i)
    return dict(sorted(groups.items()))


def stencil_group(
    cloud: PointCloud,
    supports: Sequence[Support],
    spec: MethodSpec,
    derivs: Sequence[DerivIndex],
    voronoi: np.ndarray | None = None,
) -> StencilGroup:
    """Stencils for supports that all have the same member count."""
    dim = cloud.dim
    m = len(supports[0].member_ids)
    rows = cloud.index_of([s.center_id for s in supports])
    members = cloud.index_of(np.concatenate([s.member_ids for s in supports])).reshape(-1, m)
    radius = np.array([s.radius for s in supports])
    eff = np.stack([np.asarray(s.effective_distance, float) for s in supports])
    ids = cloud.ids[rows]
    cols = np.concatenate([rows[:, None], members], axis=1)
    z = (cloud.x[members] - cloud.x[rows][:, None, :]) / radius[:, None, None]
    s = eff / radius[:, None]
    max_order = max(sum(d) for d in derivs)
    need = len(derivs)
    method = spec.method
    limit = spec.cond_limit

    if method == "gfd":
        if m < need:
            raise InsufficientSupportError(int(ids[0]), m, need)
        w = _weights(spec.weight, s)
        if voronoi is not None:
            w = w * voronoi[members]
        deriv_c = _gfd_core(z, w, derivs, ids, limit)
        value = np.zeros((len(rows), 1, m + 1))
        value[:, 0, 0] = 1.0
    elif method.startswith("dcpse"):
        nb = len(monomial_indices(dim, max_order, constant=method != "dcpse2"))
        if m + 1 < nb:
            raise InsufficientSupportError(int(ids[0]), m, nb - 1)
        z_all = np.concatenate([np.zeros((len(rows), 1, dim)), z], axis=1)
        s_all = np.concatenate([np.zeros((len(rows), 1)), s], axis=1)
        w = _weights(spec.weight, s_all)
        vol = np.ones_like(w) if voronoi is None else voronoi[cols]
        deriv_c = _dcpse_core(method, z_all, w, vol, derivs, spec.dcpse_basis, ids, limit)
        value = np.zeros((len(rows), 1, m + 1))
        value[:, 0, 0] = 1.0
    elif method in ("mls", "imls"):
        nb = len(monomial_indices(dim, max_order))
        if m + 1 < nb:
            raise InsufficientSupportError(int(ids[0]), m, nb - 1)
        z_all = np.concatenate([np.zeros((len(rows), 1, dim)), z], axis=1)
        s_all = np.concatenate([np.zeros((len(rows), 1)), s], axis=1)
        w = _weights(spec.weight, s_all)
        both = _mls_core(z_all, w, max_order, derivs, ids, limit)
        value, deriv_c = both[:, :1], both[:, 1:]
    else:
        degree = spec.poly_degree
        if spec.rbf_include_center:
            z_all = np.concatenate([np.zeros((len(rows), 1, dim)), z], axis=1)
            deriv_c = _rbffd_core(spec.rbf, z_all, degree, derivs, ids, limit)
        else:
            inner = _rbffd_core(spec.rbf, z, degree, derivs, ids, limit)
            deriv_c = np.concatenate([np.zeros(inner.shape[:2] + (1,)), inner], axis=2)
        value = np.zeros((len(rows), 1, m + 1))
        value[:, 0, 0] = 1.0

    order = _order(derivs)
    deriv_c = deriv_c / radius[:, None, None] ** order[None, :, None]
    coeffs = np.concatenate([value, deriv_c], axis=1)
    return StencilGroup(rows=rows, cols=cols, coeffs=coeffs)


def build_stencils(
    cloud: PointCloud,
    supports: Sequence[Support],
    spec: MethodSpec,
    voronoi=None,
    max_order: int = 2,
) -> StencilSet:
    """Value and derivative stencils (orders 1..max_order) for every support."""
    derivs = derivative_indices(cloud.dim, max_order)
    vol = _measure_array(cloud, voronoi)
    groups = []
    by_size = _group_supports(supports)
    for size, idx in by_size.items():
        if size < 1:
            sup = supports[idx[0]]
            raise InsufficientSupportError(sup.center_id, size, len(derivs))
        groups.append(stencil_group(cloud, [supports[i] for i in idx], spec, derivs, vol))
    ops = [(0,) * cloud.dim] + derivs
    return StencilSet(ops=ops, groups=groups, method=spec.method)


def _single(cloud, support, spec, derivs, voronoi=None):
    vol = _measure_array(cloud, voronoi)
    grp = stencil_group(cloud, [support], spec, derivs, vol)
    ids = cloud.ids[grp.cols[0]]
    return ids, grp.coeffs[0]


def _to_rows(ids, coeffs, ops) -> list[StencilRow]:
    return [
        StencilRow(int(ids[0]), tuple(op), float(c[0]), dict(zip(ids[1:].tolist(), c[1:].tolist())))
        for op, c in zip(ops, coeffs)
    ]


def build_gfd(
    cloud: PointCloud, support: Support, wspec: WeightSpec | None = None, voronoi=None,
    max_order: int = 2, cond_limit: float = DEFAULT_COND_LIMIT,
) -> list[StencilRow]:
    """All first and second derivative rows of one node (GFD)."""
    spec = MethodSpec("gfd", weight=wspec or WeightSpec(), cond_limit=cond_limit)
    derivs = derivative_indices(cloud.dim, max_order)
    ids, c = _single(cloud, support, spec, derivs, voronoi)
    return _to_rows(ids, c[1:], derivs)


def build_dcpse(
    variant: str,
    cloud: PointCloud,
    support: Support,
    wspec: WeightSpec | None = None,
    basis: str = "polynomial",
    target: DerivIndex = None,
    voronoi=None,
    cond_limit: float = DEFAULT_COND_LIMIT,
) -> StencilRow:
    """One DC PSE derivative row; ``variant`` is dcpse0, dcpse1 or dcpse2."""
    if variant not in ("dcpse0", "dcpse1", "dcpse2"):
        raise ConfigError(f"unknown DC PSE variant {variant!r}")
    spec = MethodSpec(
        variant,
        weight=wspec or WeightSpec("exponential"),
        dcpse_basis=basis,
        cond_limit=cond_limit,
    )
    derivs = derivative_indices(cloud.dim, 2)
    target = tuple(target) if target is not None else derivs[0]
    ids, c = _single(cloud, support, spec, derivs, voronoi)
    return _to_rows(ids, c[1 + derivs.index(target)][None], [target])[0]


def build_rbffd(
    cloud: PointCloud,
    support: Support,
    rbfspec: RbfSpec | None = None,
    poly_degree: int = 2,
    target: DerivIndex = None,
    include_center: bool = True,
    cond_limit: float = DEFAULT_COND_LIMIT,
) -> StencilRow:
    spec = MethodSpec(
        "rbffd",
        rbf=rbfspec or RbfSpec(),
        poly_degree=poly_degree,
        rbf_include_center=include_center,
        cond_limit=cond_limit,
    )
    derivs = derivative_indices(cloud.dim, 2)
    target = tuple(target) if target is not None else derivs[0]
    ids, c = _single(cloud, support, spec, derivs)
    return _to_rows(ids, c[1 + derivs.index(target)][None], [target])[0]


def build_mls(
    cloud: PointCloud,
    support: Support,
    wspec: WeightSpec | None = None,
    interpolating: bool = False,
    cond_limit: float = DEFAULT_COND_LIMIT,
) -> MlsShape:
    """Shape values and diffuse derivative rows of one node.

    ``interpolating`` switches to the near-singular weight unless ``wspec``
    already names a family.
    """
    if wspec is None:
        wspec = WeightSpec("imls") if interpolating else WeightSpec("spline3")
    spec = MethodSpec("imls" if interpolating else "mls", weight=wspec, cond_limit=cond_limit)
    derivs = derivative_indices(cloud.dim, 2)
    ids, c = _single(cloud, support, spec, derivs)
    return MlsShape(
        center_id=int(ids[0]),
        center_value=float(c[0, 0]),
        values=dict(zip(ids[1:].tolist(), c[0, 1:].tolist())),
        deriv_rows={d: r for d, r in zip(derivs, _to_rows(ids, c[1:], derivs))},
    )


def verify_reproduction(row: StencilRow, cloud: PointCloud, degree: int = 2) -> float:
    """Worst error of ``row`` on every monomial of total degree <= ``degree``.

    Monomials are centered at the collocation node and scaled by the largest
    member distance ``h``; the error of an order-k row is multiplied by
    ``h**k`` so the result is dimensionless.
    """
    ids = np.array([row.center_id] + list(row.coeffs), dtype=np.int64)
    coef = np.array([row.coeff_center] + list(row.coeffs.values()))
    x = cloud.x[cloud.index_of(ids)]
    rel = x - x[0]
    h = float(np.max(np.linalg.norm(rel, axis=1))) or 1.0
    exps = monomial_indices(cloud.dim, degree)
    vals = _monomials(rel / h, exps)  # (n, nb)
    got = coef @ vals
    k = sum(row.deriv)
    exact = np.array(
        [_factorial([row.deriv])[0] if tuple(e) == tuple(row.deriv) else 0.0 for e in exps]
    ) / h**k
    return float(np.max(np.abs(got - exact)) * h**k)
