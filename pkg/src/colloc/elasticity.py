"""Strong-form linear elasticity rows.

Row blocks are built from stencil coefficient tables and have the layout
``(..., dim_rows, n_cols, dim_components)``: entry ``[i, p, k]`` multiplies
displacement component ``k`` of support column ``p`` in equation ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ConfigError
from .stencils import MlsShape, StencilRow, derivative_indices

PLANE_STRESS, THREE_D = "plane_stress", "3d"


@dataclass(frozen=True)
class Material:
    E: float = 1.0
    nu: float = 0.3
    model: str = PLANE_STRESS

    def __post_init__(self):
        if not self.E > 0:
            raise ConfigError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ConfigError("Poisson ratio must lie in (-1, 0.5)")
        if self.model not in (PLANE_STRESS, THREE_D):
            raise ConfigError(f"unknown material model {self.model!r}")

    @property
    def dim(self) -> int:
        return 2 if self.model == PLANE_STRESS else 3

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        """First Lame constant (the reduced plane-stress value in 2D)."""
        E, nu = self.E, self.nu
        if self.model == PLANE_STRESS:
            return E * nu / (1.0 - nu**2)
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass
class EquationRow:
    """``row_id`` is ``(node_id, component)``; coefficients map ``(node_id, dof)``."""

    row_id: tuple
    coefficients: dict
    rhs: float = 0.0

    def residual(self, u: dict) -> float:
        """``sum(c * u[node][dof]) - rhs`` for nodal vectors ``u``."""
        return float(sum(c * u[n][k] for (n, k), c in self.coefficients.items()) - self.rhs)


# -- operator tables ----------------------------------------------------------


def split_ops(coeffs: np.ndarray, ops: list, dim: int):
    """Split a stencil table (..., n_ops, n_cols) into value, gradient and Hessian rows.

    Returns ``V`` (..., n_cols), ``D1`` (..., dim, n_cols) and ``D2``
    (..., dim, dim, n_cols) (``D2`` is None without second derivatives).
    """
    index = {tuple(op): k for k, op in enumerate(ops)}
    V = coeffs[..., index[(0,) * dim], :]
    D1 = np.stack([coeffs[..., index[_unit(dim, a)], :] for a in range(dim)], axis=-2)
    D2 = None
    if _unit(dim, 0, 0) in index:
        D2 = np.empty(coeffs.shape[:-2] + (dim, dim, coeffs.shape[-1]))
        for a in range(dim):
            for b in range(dim):
                D2[..., a, b, :] = coeffs[..., index[_unit(dim, a, b)], :]
    return V, D1, D2


def _unit(dim: int, *axes: int) -> tuple:
    idx = [0] * dim
    for a in axes:
        idx[a] += 1
    return tuple(idx)


def navier_block(D2: np.ndarray, material: Material) -> np.ndarray:
    """Coefficients of ``div sigma(u)``: mu * Lap(u_i) + (lam + mu) * d_i div(u)."""
    dim = D2.shape[-2]
    lam, mu = material.lam, material.mu
    lap = np.einsum("...jjp->...p", D2)
    eye = np.eye(dim)
    out = (lam + mu) * np.swapaxes(D2, -1, -2)  # [..., i, p, k] = D2[i, k, p]
    out = out + mu * eye[:, None, :] * lap[..., None, :, None]
    return out


def traction_block(D1: np.ndarray, normal: np.ndarray, material: Material) -> np.ndarray:
    """Coefficients of ``sigma(u) . n``."""
    dim = D1.shape[-2]
    lam, mu = material.lam, material.mu
    n = np.asarray(normal, float)
    eye = np.eye(dim)
    dn = np.einsum("...j,...jp->...p", n, D1)
    # lam n_i D_k + mu (delta_ik n.D + n_k D_i)
    out = lam * n[..., :, None, None] * np.swapaxes(D1, -1, -2)[..., None, :, :]
    out = out + mu * eye[:, None, :] * dn[..., None, :, None]
    out = out + mu * D1[..., :, :, None] * n[..., None, None, :]
    return out


def value_block(V: np.ndarray, dim: int) -> np.ndarray:
    eye = np.eye(dim)
    return V[..., None, :, None] * eye[:, None, :]


def characteristic_length(r_sup: float, n_sup: int, dim: int):
    """Length scale from support radius and member count (vectorized)."""
    r = np.asarray(r_sup, float)
    n = np.asarray(n_sup, float)
    if np.any(r <= 0) or np.any(n < 1):
        raise ConfigError("characteristic length needs r > 0 and N >= 1")
    if dim == 2:
        h = r * np.sqrt(math.pi / n)
    elif dim == 3:
        h = r * np.cbrt(4.0 * math.pi / (3.0 * n))
    else:
        raise ConfigError("characteristic length is defined for 2D and 3D")
    return float(h) if h.ndim == 0 else h


def fic_block(traction: np.ndarray, navier: np.ndarray, h, normal) -> np.ndarray:
    """``B - h * (sum_j n_j) * A`` applied blockwise."""
    factor = np.asarray(h, float) * np.sum(np.asarray(normal, float), axis=-1)
    return traction - factor[..., None, None, None] * navier


# -- stress -------------------------------------------------------------------


def stress_from_gradient(grad: np.ndarray, material: Material) -> np.ndarray:
    """Cauchy stress from ``grad[..., i, j] = du_i/dx_j``."""
    eps = 0.5 * (grad + np.swapaxes(grad, -1, -2))
    tr = np.einsum("...ii->...", eps)
    dim = grad.shape[-1]
    return material.lam * tr[..., None, None] * np.eye(dim) + 2.0 * material.mu * eps


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Equivalent stress; a 2x2 tensor is read as plane stress."""
    if sigma.shape[-1] == 2:
        s11, s22, s12 = sigma[..., 0, 0], sigma[..., 1, 1], sigma[..., 0, 1]
        return np.sqrt(s11**2 - s11 * s22 + s22**2 + 3.0 * s12**2)
    dev = sigma - np.einsum("...ii->...", sigma)[..., None, None] / 3.0 * np.eye(3)
    return np.sqrt(1.5 * np.einsum("...ij,...ij->...", dev, dev))


def stress_components(sigma: np.ndarray) -> dict:
    """Named components: s11, s22, s12 (2D) plus s33, s23, s13 (3D)."""
    out = {"s11": sigma[..., 0, 0], "s22": sigma[..., 1, 1], "s12": sigma[..., 0, 1]}
    if sigma.shape[-1] == 3:
        out.update(s33=sigma[..., 2, 2], s23=sigma[..., 1, 2], s13=sigma[..., 0, 2])
    return out


# -- per-node row API ---------------------------------------------------------


def _table(node_id: int, rows: dict, derivs: list) -> tuple[list, np.ndarray]:
    """Align StencilRows on a shared column list ``[center, members...]``."""
    missing = [d for d in derivs if tuple(d) not in rows]
    if missing:
        raise AssemblyError(f"node {node_id}: missing stencil rows for {missing}")
    cols = [node_id]
    for d in derivs:
        for nid in rows[tuple(d)].coeffs:
            if nid not in cols:
                cols.append(nid)
    pos = {nid: j for j, nid in enumerate(cols)}
    table = np.zeros((len(derivs), len(cols)))
    for k, d in enumerate(derivs):
        r: StencilRow = rows[tuple(d)]
        table[k, 0] += r.coeff_center
        for nid, c in r.coeffs.items():
            table[k, pos[nid]] += c
    return cols, table


def _block_rows(node_id, cols, block, rhs) -> list[EquationRow]:
    out = []
    for i in range(block.shape[0]):
        coeffs = {}
        for p, nid in enumerate(cols):
            for k in range(block.shape[2]):
                if block[i, p, k] != 0.0:
                    coeffs[(nid, k)] = float(block[i, p, k])
        out.append(EquationRow((node_id, i), coeffs, float(rhs[i])))
    return out


def interior_rows(node_id: int, stencils: dict, material: Material, body_force=None) -> list[EquationRow]:
    """Equilibrium rows ``div sigma(u) = -b`` at one node."""
    dim = material.dim
    derivs = [d for d in derivative_indices(dim, 2) if sum(d) == 2]
    cols, table = _table(node_id, stencils, derivs)
    D2 = np.empty((dim, dim, len(cols)))
    for a in range(dim):
        for b in range(dim):
            D2[a, b] = table[derivs.index(_unit(dim, a, b))]
    b = np.zeros(dim) if body_force is None else np.asarray(body_force, float)
    return _block_rows(node_id, cols, navier_block(D2, material), -b)


def traction_rows(
    node_id: int, stencils: dict, material: Material, normal, traction, components=None
) -> list[EquationRow]:
    """Rows ``sigma(u) . n = t`` (only ``components`` when given)."""
    dim = material.dim
    if normal is None:
        raise AssemblyError(f"node {node_id}: traction row needs a normal")
    derivs = [d for d in derivative_indices(dim, 1)]
    cols, table = _table(node_id, stencils, derivs)
    rows = _block_rows(node_id, cols, traction_block(table, np.asarray(normal, float), material),
                       np.asarray(traction, float))
    if components is not None:
        rows = [r for r in rows if r.row_id[1] in components]
    return rows


def dirichlet_rows(node_id: int, value, mls_shape: MlsShape | None = None, components=None) -> list[EquationRow]:
    """``u_k(node) = value_k``; MLS/IMLS rows use the node's shape values."""
    value = np.asarray(value, float)
    dim = len(value)
    comps = range(dim) if components is None else components
    out = []
    for k in comps:
        if mls_shape is None:
            coeffs = {(node_id, k): 1.0}
        else:
            coeffs = {(node_id, k): mls_shape.center_value}
            for nid, c in mls_shape.values.items():
                coeffs[(nid, k)] = coeffs.get((nid, k), 0.0) + c
        out.append(EquationRow((node_id, k), coeffs, float(value[k])))
    return out


def fic_stabilize_neumann(
    row_set: list[EquationRow], interior_operator_rows: list[EquationRow], h: float, normal
) -> list[EquationRow]:
    """Replace each traction row by ``B - h * (sum_j n_j) * A`` for the same component."""
    factor = h * float(np.sum(normal))
    by_comp = {r.row_id[1]: r for r in interior_operator_rows}
    out = []
    for r in row_set:
        a = by_comp[r.row_id[1]]
        coeffs = dict(r.coefficients)
        for key, c in a.coefficients.items():
            coeffs[key] = coeffs.get(key, 0.0) - factor * c
        out.append(EquationRow(r.row_id, coeffs, r.rhs - factor * a.rhs))
    return out


def stress_post(node_id: int, first_derivative_rows: dict, solution: dict, material: Material):
    """Stress tensor and von Mises stress at one node.

    ``solution`` maps node id to its displacement vector.
    """
    dim = material.dim
    derivs = derivative_indices(dim, 1)
    cols, table = _table(node_id, first_derivative_rows, derivs)
    U = np.array([solution[n] for n in cols])  # (n_cols, dim)
    grad = (table @ U).T  # grad[i, j] = d u_i / d x_j
    sigma = stress_from_gradient(grad, material)
    return sigma, float(von_mises(sigma))
