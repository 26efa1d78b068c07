"""Point clouds, node files, support selection and Voronoi cell measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import shapely
from scipy.spatial import ConvexHull, HalfspaceIntersection, Voronoi, cKDTree

from .errors import (
    CloudFormatError,
    ConfigError,
    InsufficientSupportError,
    SolverIOError,
)

INTERIOR, DIRICHLET, NEUMANN = "I", "D", "N"
ROLES = (INTERIOR, DIRICHLET, NEUMANN)

# r_c = SUPPORT_INFLATION * (distance to the k-th neighbor)
SUPPORT_INFLATION = 1.0001


@dataclass
class Node:
    """One collocation node.

    ``bc_value`` holds the prescribed displacement for Dirichlet nodes (``None``
    entries mark free components) and the prescribed traction for Neumann
    nodes. ``traction`` is the traction applied to the free components of a
    Dirichlet node.
    """

    id: int
    x: tuple
    role: str = INTERIOR
    normal: tuple | None = None
    bc_value: tuple | None = None
    traction: tuple | None = None
    singular: bool = False


class PointCloud:
    """Nodes stored column-wise; rows are kept sorted by node id.

    Arrays: ``ids`` (n,), ``x`` (n, dim), ``role`` (n,) of ``"I"|"D"|"N"``,
    ``normal`` (n, dim, NaN for interior nodes), ``disp`` (n, dim, NaN where
    free), ``traction`` (n, dim) and ``singular`` (n,).
    """

    def __init__(
        self,
        x,
        role=None,
        normal=None,
        disp=None,
        traction=None,
        singular=None,
        ids=None,
        dim: int | None = None,
    ):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(x), -1) if dim is None else x.reshape(-1, dim)
        if x.size == 0:
            x = x.reshape(0, dim or 2)
        n, d = x.shape
        if d not in (1, 2, 3):
            raise ConfigError(f"cloud dimension must be 1, 2 or 3, got {d}")
        ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
        role = np.full(n, INTERIOR) if role is None else np.asarray(role, dtype="<U1")
        normal = np.full((n, d), np.nan) if normal is None else np.asarray(normal, float)
        disp = np.full((n, d), np.nan) if disp is None else np.asarray(disp, float)
        traction = np.zeros((n, d)) if traction is None else np.asarray(traction, float)
        singular = np.zeros(n, bool) if singular is None else np.asarray(singular, bool)

        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.x = x[order]
        self.role = role[order]
        self.normal = normal.reshape(n, d)[order] + 0.0  # drop signed zeros
        self.disp = disp.reshape(n, d)[order]
        self.traction = traction.reshape(n, d)[order]
        self.singular = singular[order]
        self._tree = None
        self._validate()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_nodes(cls, nodes: Sequence[Node], dim: int | None = None) -> "PointCloud":
        if not nodes:
            return cls(np.zeros((0, dim or 2)), dim=dim or 2)
        d = len(nodes[0].x) if dim is None else dim
        nan = (math.nan,) * d
        return cls(
            x=[nd.x for nd in nodes],
            ids=[nd.id for nd in nodes],
            role=[nd.role for nd in nodes],
            normal=[nd.normal if nd.normal is not None else nan for nd in nodes],
            disp=[
                tuple(math.nan if v is None else v for v in nd.bc_value)
                if nd.role == DIRICHLET and nd.bc_value is not None
                else nan
                for nd in nodes
            ],
            traction=[
                nd.bc_value if nd.role == NEUMANN and nd.bc_value is not None
                else (nd.traction if nd.traction is not None else (0.0,) * d)
                for nd in nodes
            ],
            singular=[nd.singular for nd in nodes],
            dim=d,
        )

    def _validate(self):
        if np.any(np.diff(self.ids) == 0):
            dup = self.ids[np.flatnonzero(np.diff(self.ids) == 0)[0]]
            raise ConfigError(f"duplicate node id {dup}")
        if not np.all(np.isfinite(self.x)):
            raise ConfigError("node coordinates must be finite")
        bad = ~np.isin(self.role, ROLES)
        if np.any(bad):
            raise ConfigError(f"unknown role {self.role[bad][0]!r}")
        boundary = self.role != INTERIOR
        self.normal[~boundary] = np.nan
        if np.any(boundary):
            norms = np.linalg.norm(self.normal[boundary], axis=1)
            if not np.all(np.abs(norms - 1.0) <= 1e-12):
                raise ConfigError("every boundary node needs a unit normal")
        if len(self) > 1:
            dist, _ = self.tree.query(self.x, k=2)
            if np.min(dist[:, 1]) <= 0.0:
                raise ConfigError("two nodes share the same coordinates")

    # -- accessors ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.x)
        return self._tree

    @property
    def boundary(self) -> np.ndarray:
        return self.role != INTERIOR

    def index_of(self, ids) -> np.ndarray:
        """Row positions of the given node ids."""
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        pos = np.clip(pos, 0, max(len(self) - 1, 0))
        if len(self) == 0 or np.any(self.ids[pos] != ids):
            raise KeyError("unknown node id")
        return pos

    def node(self, i: int) -> Node:
        """Node at row position ``i``."""
        role = str(self.role[i])
        d = self.dim
        normal = None if role == INTERIOR else tuple(float(v) for v in self.normal[i])
        bc = trac = None
        if role == DIRICHLET:
            bc = tuple(None if math.isnan(v) else float(v) for v in self.disp[i])
            trac = tuple(float(v) for v in self.traction[i])
        elif role == NEUMANN:
            bc = tuple(float(v) for v in self.traction[i])
        return Node(
            id=int(self.ids[i]),
            x=tuple(float(v) for v in self.x[i]),
            role=role,
            normal=normal,
            bc_value=bc if d else None,
            traction=trac,
            singular=bool(self.singular[i]),
        )

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(len(self))]

    def subset(self, mask) -> "PointCloud":
        mask = np.asarray(mask, bool)
        return PointCloud(
            self.x[mask],
            role=self.role[mask],
            normal=self.normal[mask],
            disp=self.disp[mask],
            traction=self.traction[mask],
            singular=self.singular[mask],
            ids=self.ids[mask],
            dim=self.dim,
        )

    def min_spacing(self) -> float:
        if len(self) < 2:
            return math.inf
        dist, _ = self.tree.query(self.x, k=2)
        return float(dist[:, 1].min())


# -- generators ---------------------------------------------------------------


def generate_annulus_quarter(
    Ri: float, Ro: float, n_r: int, n_t: int, pressure: float = 1.0
) -> PointCloud:
    """Structured quarter annulus (constant radius and angle increments).

    The inner rim carries the pressure traction, the outer rim is free and the
    two straight edges are symmetry edges (zero normal displacement, free
    tangential component). Rim/edge corner nodes keep the rim normal and
    traction for their free component.
    """
    if not (0 < Ri < Ro) or not all(map(math.isfinite, (Ri, Ro))):
        raise ConfigError(f"need 0 < Ri < Ro, got Ri={Ri}, Ro={Ro}")
    if n_r < 1 or n_t < 1:
        raise ConfigError("n_r and n_t must be at least 1")
    r = Ri + (Ro - Ri) * np.arange(n_r + 1) / n_r
    r[-1] = Ro
    t = 0.5 * math.pi * np.arange(n_t + 1) / n_t
    R, T = np.meshgrid(r, t, indexing="ij")
    c, s = np.cos(T), np.sin(T)
    c[:, -1], s[:, -1] = 0.0, 1.0
    x = np.stack([R * c, R * s], axis=-1).reshape(-1, 2)
    radial = np.stack([c, s], axis=-1).reshape(-1, 2)
    ii, jj = np.meshgrid(np.arange(n_r + 1), np.arange(n_t + 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()

    n = len(x)
    role = np.full(n, INTERIOR)
    normal = np.full((n, 2), np.nan)
    disp = np.full((n, 2), np.nan)
    traction = np.zeros((n, 2))

    inner, outer = ii == 0, ii == n_r
    on_y0, on_x0 = jj == 0, jj == n_t
    role[inner | outer] = NEUMANN
    normal[inner] = -radial[inner]
    normal[outer] = radial[outer]
    traction[inner] = pressure * radial[inner]

    edge = (on_y0 | on_x0) & ~(inner | outer)
    normal[edge & on_y0] = (0.0, -1.0)
    normal[edge & on_x0] = (-1.0, 0.0)
    role[on_y0 | on_x0] = DIRICHLET
    disp[on_y0, 1] = 0.0
    disp[on_x0, 0] = 0.0
    return PointCloud(x, role=role, normal=normal, disp=disp, traction=traction)


def _grid_divisions(length: float, h: float) -> int:
    if not (length > 0 and h > 0):
        raise ConfigError("length and spacing must be positive")
    m = round(length / h)
    if m < 1 or abs(m * h - length) > 1e-9 * length:
        raise ConfigError(f"spacing {h} does not divide length {length}")
    return m


def generate_lshape(
    L: float, h: float, displacement: Callable[[np.ndarray], np.ndarray] | None = None
) -> PointCloud:
    """Regular grid on ``[-L, L]^2`` minus the open quadrant ``x > 0, y > 0``.

    Outer edges are Dirichlet (values from ``displacement`` when given), the
    two reentrant edges are traction free. The reentrant corner at the origin
    is kept, tagged Neumann and flagged ``singular``.
    """
    m = _grid_divisions(L, h)
    k = np.arange(-m, m + 1)
    I, J = np.meshgrid(k, k, indexing="ij")
    keep = ~((I > 0) & (J > 0))
    I, J = I[keep], J[keep]
    x = np.stack([L * I / m, L * J / m], axis=-1)
    n = len(x)

    role = np.full(n, INTERIOR)
    normal = np.zeros((n, 2))
    outer = (np.abs(I) == m) | (np.abs(J) == m)
    normal[:, 0] = np.where(I == -m, -1.0, np.where(I == m, 1.0, 0.0))
    normal[:, 1] = np.where(J == -m, -1.0, np.where(J == m, 1.0, 0.0))
    re_x = (J == 0) & (I > 0) & ~outer
    re_y = (I == 0) & (J > 0) & ~outer
    corner = (I == 0) & (J == 0)
    normal[re_x] = (0.0, 1.0)
    normal[re_y] = (1.0, 0.0)
    normal[corner] = (1.0, 1.0)
    role[outer] = DIRICHLET
    role[re_x | re_y | corner] = NEUMANN
    nrm = np.linalg.norm(normal, axis=1)
    normal[nrm > 0] /= nrm[nrm > 0, None]
    normal[role == INTERIOR] = np.nan

    disp = np.full((n, 2), np.nan)
    if np.any(outer):
        disp[outer] = 0.0 if displacement is None else displacement(x[outer])
    return PointCloud(x, role=role, normal=normal, disp=disp, singular=corner)


def generate_sphere_eighth(
    Ri: float, Ro: float, h: float, pressure: float = 1.0
) -> PointCloud:
    """Shell lattice on the octant ``x, y, z >= 0`` with spacing close to ``h``.

    Each spherical layer is covered ring by ring in polar angle; every ring
    includes both symmetry planes. Symmetry-plane nodes constrain the normal
    displacement component(s), rims carry pressure (inner) or are free (outer).
    """
    if not (0 < Ri < Ro):
        raise ConfigError(f"need 0 < Ri < Ro, got Ri={Ri}, Ro={Ro}")
    if not h > 0:
        raise ConfigError("spacing must be positive")
    n_layers = round((Ro - Ri) / h)
    if n_layers < 1:
        raise ConfigError("spacing too coarse: fewer than 2 radial layers")

    pts, flags = [], []
    for il in range(n_layers + 1):
        r = Ri + (Ro - Ri) * il / n_layers
        n_th = max(1, round(r * 0.5 * math.pi / h))
        for j in range(n_th + 1):
            th = 0.5 * math.pi * j / n_th
            st, ct = (1.0, 0.0) if j == n_th else (math.sin(th), math.cos(th))
            n_ph = round(r * st * 0.5 * math.pi / h)
            if j == 0 or n_ph == 0:
                if j != 0:
                    n_ph = 1
                else:
                    pts.append((0.0, 0.0, r))
                    flags.append((il, True, True, False))
                    continue
            for k in range(n_ph + 1):
                ph = 0.5 * math.pi * k / n_ph
                sp, cp = (1.0, 0.0) if k == n_ph else (math.sin(ph), math.cos(ph))
                pts.append((r * st * cp, r * st * sp, r * ct))
                flags.append((il, k == n_ph, k == 0, j == n_th))

    x = np.array(pts)
    n = len(x)
    layer = np.array([f[0] for f in flags])
    planes = np.array([f[1:] for f in flags], dtype=bool)  # on x=0, y=0, z=0
    radial = x / np.linalg.norm(x, axis=1)[:, None]
    inner, outer = layer == 0, layer == n_layers

    role = np.full(n, INTERIOR)
    normal = np.full((n, 3), np.nan)
    disp = np.full((n, 3), np.nan)
    traction = np.zeros((n, 3))
    role[inner | outer] = NEUMANN
    normal[inner] = -radial[inner]
    normal[outer] = radial[outer]
    traction[inner] = pressure * radial[inner]
    on_plane = planes.any(axis=1)
    role[on_plane] = DIRICHLET
    disp[planes] = 0.0
    for i in np.flatnonzero(on_plane & ~(inner | outer)):
        axis = int(np.flatnonzero(planes[i])[0])
        normal[i] = 0.0
        normal[i, axis] = -1.0
    return PointCloud(x, role=role, normal=normal, disp=disp, traction=traction)


# -- geometry helpers ---------------------------------------------------------


def annulus_quarter_polygon(Ri: float, Ro: float, n_arc: int = 4096) -> np.ndarray:
    t = np.linspace(0.0, 0.5 * math.pi, n_arc + 1)
    outer = np.stack([Ro * np.cos(t), Ro * np.sin(t)], axis=1)
    inner = np.stack([Ri * np.cos(t[::-1]), Ri * np.sin(t[::-1])], axis=1)
    outer[-1] = (0.0, Ro)
    inner[0] = (0.0, Ri)
    return np.vstack([outer, inner])


def lshape_polygon(L: float) -> np.ndarray:
    return np.array(
        [(-L, -L), (L, -L), (L, 0.0), (0.0, 0.0), (0.0, L), (-L, L)], dtype=float
    )


def polygon_segments(vertices) -> np.ndarray:
    """Closed polyline as an array of segments, shape (n, 2, 2)."""
    v = np.asarray(vertices, dtype=float)
    return np.stack([v, np.roll(v, -1, axis=0)], axis=1)


# -- node files ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return "*" if math.isnan(v) else format(float(v), ".17g")


def save_cloud(cloud: PointCloud, path) -> None:
    """Write ``id x y [z] role [nx ny [nz]] [bc...] [singular]`` lines."""
    lines = [f"# colloc node file, dim {cloud.dim}"]
    for i in range(len(cloud)):
        role = str(cloud.role[i])
        parts = [str(int(cloud.ids[i]))] + [_fmt(v) for v in cloud.x[i]] + [role]
        if role != INTERIOR:
            parts += [_fmt(v) for v in cloud.normal[i]]
            if role == DIRICHLET:
                parts += [_fmt(v) for v in cloud.disp[i]]
            parts += [_fmt(v) for v in cloud.traction[i]]
        if cloud.singular[i]:
            parts.append("singular")
        lines.append(" ".join(parts))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise SolverIOError(f"cannot write node file {path}: {exc}") from exc


def _parse_float(tok: str, lineno: int, allow_free: bool = False) -> float:
    if allow_free and tok == "*":
        return math.nan
    try:
        v = float(tok)
    except ValueError:
        raise CloudFormatError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise CloudFormatError(f"non-finite value {tok!r}", lineno)
    return v


def load_cloud(path) -> PointCloud:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SolverIOError(f"cannot read node file {path}: {exc}") from exc
    return parse_cloud(text.splitlines())


def parse_cloud(lines: Iterable[str]) -> PointCloud:
    ids, xs, roles, normals, disps, tracs, sing = [], [], [], [], [], [], []
    dim = None
    seen = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            nid = int(tok[0])
        except ValueError:
            raise CloudFormatError(f"bad node id {tok[0]!r}", lineno) from None
        if nid in seen:
            raise CloudFormatError(f"duplicate node id {nid}", lineno)
        seen.add(nid)
        role_pos = next((k for k, t in enumerate(tok) if t in ROLES), None)
        if role_pos is None or role_pos < 2:
            raise CloudFormatError("missing role (I, D or N)", lineno)
        d = role_pos - 1
        if dim is None:
            if d not in (1, 2, 3):
                raise CloudFormatError(f"unsupported dimension {d}", lineno)
            dim = d
        elif d != dim:
            raise CloudFormatError(f"expected {dim} coordinates, got {d}", lineno)
        x = [_parse_float(t, lineno) for t in tok[1:role_pos]]
        role = tok[role_pos]
        rest = tok[role_pos + 1 :]
        singular = bool(rest) and rest[-1] == "singular"
        if singular:
            rest = rest[:-1]
        nan = [math.nan] * dim
        normal, disp, trac = nan, nan, [0.0] * dim
        if role == INTERIOR:
            if rest and len(rest) != dim:
                raise CloudFormatError("interior node takes no boundary data", lineno)
        else:
            if len(rest) < dim:
                raise CloudFormatError("boundary node needs a normal", lineno)
            normal = [_parse_float(t, lineno) for t in rest[:dim]]
            vals = rest[dim:]
            if role == NEUMANN:
                if len(vals) not in (0, dim):
                    raise CloudFormatError(f"Neumann node takes {dim} traction values", lineno)
                if vals:
                    trac = [_parse_float(t, lineno) for t in vals]
            else:
                if len(vals) not in (dim, 2 * dim):
                    raise CloudFormatError(
                        f"Dirichlet node takes {dim} displacement values "
                        f"(optionally followed by {dim} traction values)",
                        lineno,
                    )
                disp = [_parse_float(t, lineno, allow_free=True) for t in vals[:dim]]
                if len(vals) == 2 * dim:
                    trac = [_parse_float(t, lineno) for t in vals[dim:]]
            nrm = math.sqrt(sum(v * v for v in normal))
            if abs(nrm - 1.0) > 1e-12:
                raise CloudFormatError(f"normal is not a unit vector (norm {nrm})", lineno)
        ids.append(nid)
        xs.append(x)
        roles.append(role)
        normals.append(normal)
        disps.append(disp)
        tracs.append(trac)
        sing.append(singular)
    dim = dim or 2
    if not ids:
        return PointCloud(np.zeros((0, dim)), dim=dim)
    return PointCloud(
        np.array(xs), role=roles, normal=normals, disp=disps, traction=tracs,
        singular=sing, ids=ids, dim=dim,
    )


# -- supports -----------------------------------------------------------------


@dataclass
class Support:
    """Neighbor set of one collocation node (the center is not a member)."""

    center_id: int
    member_ids: np.ndarray
    effective_distance: np.ndarray
    radius: float

    def __len__(self) -> int:
        return len(self.member_ids)


def _snap(d: np.ndarray) -> np.ndarray:
    """Quantize distances so that values equal to ~12 digits tie exactly."""
    scale = np.max(d) if d.size else 1.0
    if scale <= 0:
        return d
    q = scale * 1e-12
    return np.round(d / q)


def _knn_rows(cloud: PointCloud, rows: np.ndarray, k: int):
    """k nearest neighbors (center excluded) of each row, id tie-break."""
    n = len(cloud)
    if k > n - 1:
        raise InsufficientSupportError(int(cloud.ids[rows[0]]) if len(rows) else -1, n - 1, k)
    pad = 8
    out_idx = np.empty((len(rows), k), dtype=np.int64)
    out_d = np.empty((len(rows), k))
    todo = np.arange(len(rows))
    while len(todo):
        kq = min(k + 1 + pad, n)
        d, idx = cloud.tree.query(cloud.x[rows[todo]], k=kq)
        d = np.atleast_2d(d).reshape(len(todo), kq)
        idx = np.atleast_2d(idx).reshape(len(todo), kq)
        self_hit = idx == rows[todo][:, None]
        d = np.where(self_hit, np.inf, d)
        dq = _snap(np.where(np.isinf(d), 0.0, d))
        dq = np.where(self_hit, np.inf, dq)
        order = np.lexsort((cloud.ids[idx], dq), axis=-1)
        idx = np.take_along_axis(idx, order, axis=1)
        d = np.take_along_axis(d, order, axis=1)
        dq = np.take_along_axis(dq, order, axis=1)
        # window is safe when the last candidate lies strictly beyond the k-th
        complete = (kq == n) | (dq[:, kq - 2] > dq[:, k - 1])
        done = todo[complete]
        out_idx[done] = idx[complete, :k]
        out_d[done] = d[complete, :k]
        todo = todo[~complete]
        pad *= 4
    return out_idx, out_d


def select_support(cloud: PointCloud, center_id: int, k: int) -> Support:
    """The ``k`` nearest neighbors of ``center_id`` (ties broken by node id)."""
    if k < 1:
        raise ConfigError("support size must be positive")
    row = cloud.index_of([center_id])
    if k > len(cloud) - 1:
        raise InsufficientSupportError(center_id, len(cloud) - 1, k)
    idx, d = _knn_rows(cloud, row, k)
    return Support(
        center_id=int(center_id),
        member_ids=cloud.ids[idx[0]].copy(),
        effective_distance=d[0].copy(),
        radius=float(SUPPORT_INFLATION * d[0, -1]),
    )


def select_supports(cloud: PointCloud, k_interior: int, k_boundary: int | None = None) -> list[Support]:
    """Supports for every node; boundary nodes use ``k_boundary`` neighbors."""
    k_boundary = k_interior if k_boundary is None else k_boundary
    supports: list[Support | None] = [None] * len(cloud)
    for k, mask in ((k_interior, ~cloud.boundary), (k_boundary, cloud.boundary)):
        rows = np.flatnonzero(mask)
        if not len(rows):
            continue
        if k > len(cloud) - 1:
            raise InsufficientSupportError(int(cloud.ids[rows[0]]), len(cloud) - 1, k)
        idx, d = _knn_rows(cloud, rows, k)
        radius = SUPPORT_INFLATION * d[:, -1]
        for j, r in enumerate(rows):
            supports[r] = Support(
                int(cloud.ids[r]), cloud.ids[idx[j]], d[j], float(radius[j])
            )
    return supports  # type: ignore[return-value]


def _orient(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
        c[..., 0] - a[..., 0]
    )


def hidden_mask(center, members, segments, domain_polygon=None) -> np.ndarray:
    """True where the segment center->member properly crosses a boundary segment.

    Touching a segment (including at its end points) or running along it does
    not count as a crossing. With ``domain_polygon``, a segment whose midpoint
    lies strictly outside the domain is hidden as well: two boundary nodes can
    see each other across a notch without any proper crossing.
    """
    c = np.asarray(center, float)
    p = np.asarray(members, float)
    seg = np.asarray(segments, float).reshape(-1, 2, 2)
    if c.shape[-1] != 2:
        raise ConfigError("visibility criteria are implemented for 2D clouds only")
    if len(seg) == 0 or len(p) == 0:
        return np.zeros(len(p), bool)
    a = seg[None, :, 0, :]
    b = seg[None, :, 1, :]
    cc = np.broadcast_to(c, p.shape)[:, None, :]
    pp = p[:, None, :]
    len1 = np.linalg.norm(pp - cc, axis=-1)
    len2 = np.linalg.norm(b - a, axis=-1)
    tol = 1e-12 * len1 * len2
    o1 = _orient(cc, pp, a)
    o2 = _orient(cc, pp, b)
    o3 = _orient(a, b, cc)
    o4 = _orient(a, b, pp)
    cross = (
        ((o1 > tol) & (o2 < -tol) | (o1 < -tol) & (o2 > tol))
        & ((o3 > tol) & (o4 < -tol) | (o3 < -tol) & (o4 > tol))
    )
    hidden = cross.any(axis=1)
    if domain_polygon is not None:
        mid = 0.5 * (p + c)
        poly = shapely.Polygon(np.asarray(domain_polygon, float))
        hidden |= ~shapely.intersects_xy(poly, mid[:, 0], mid[:, 1])
    return hidden


def _check_size(support: Support, min_members: int):
    if len(support) < min_members:
        raise InsufficientSupportError(support.center_id, len(support), min_members)


def apply_visibility(
    support: Support, cloud: PointCloud, segments, min_members: int = 0, domain_polygon=None
) -> Support:
    """Drop members whose line of sight to the center crosses the boundary."""
    xc = cloud.x[cloud.index_of([support.center_id])[0]]
    xp = cloud.x[cloud.index_of(support.member_ids)]
    keep = ~hidden_mask(xc, xp, segments, domain_polygon)
    out = Support(
        support.center_id,
        support.member_ids[keep],
        support.effective_distance[keep],
        support.radius,
    )
    _check_size(out, min_members)
    return out


def apply_diffraction(
    support: Support, cloud: PointCloud, singular_point, segments, min_members: int = 0,
    domain_polygon=None,
) -> Support:
    """Hidden members get the path length around ``singular_point``.

    A hidden member stays in the support only when that path is not longer
    than the support radius.
    """
    xs = np.asarray(singular_point, float)
    xc = cloud.x[cloud.index_of([support.center_id])[0]]
    xp = cloud.x[cloud.index_of(support.member_ids)]
    hidden = hidden_mask(xc, xp, segments, domain_polygon)
    eff = support.effective_distance.copy()
    path = np.linalg.norm(xp - xs, axis=1) + np.linalg.norm(xs - xc)
    eff[hidden] = np.maximum(path[hidden], eff[hidden])
    keep = ~hidden | (eff <= support.radius)
    out = Support(support.center_id, support.member_ids[keep], eff[keep], support.radius)
    _check_size(out, min_members)
    return out


def near_segments(cloud: PointCloud, supports: Sequence[Support], segments) -> np.ndarray:
    """Indices of supports whose disc touches one of the segments."""
    seg = np.asarray(segments, float).reshape(-1, 2, 2)
    radius = np.array([s.radius for s in supports])
    xc = cloud.x[cloud.index_of([s.center_id for s in supports])]
    a, b = seg[:, 0], seg[:, 1]
    ab = b - a
    t = np.einsum("nsk,sk->ns", xc[:, None, :] - a[None], ab) / np.einsum("sk,sk->s", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(xc[:, None, :] - closest, axis=-1).min(axis=1)
    return np.flatnonzero(dist <= radius)


# -- Voronoi ------------------------------------------------------------------


@dataclass(frozen=True)
class VoronoiMeasure:
    node_id: int
    measure: float


def _cells_2d(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    poly = shapely.Polygon(polygon)
    if not poly.is_valid:
        poly = poly.buffer(0)
    # dummy generators must sit far outside both the nodes and the clip polygon
    bx = np.asarray(poly.bounds).reshape(2, 2)
    lo = np.minimum(points.min(axis=0), bx[0])
    hi = np.maximum(points.max(axis=0), bx[1])
    span = max(float(np.max(hi - lo)), 1e-300)
    tol = 1e-9 * span
    if not np.all(shapely.distance(poly, shapely.points(points)) <= tol):
        raise ConfigError("domain polygon does not enclose every node")
    n = len(points)
    if n == 1:
        return np.array([poly.area])
    center = 0.5 * (lo + hi)
    far = 50.0 * span
    ang = np.arange(8) * (math.pi / 4)
    dummies = center + far * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    vor = Voronoi(np.vstack([points, dummies]))
    cells = []
    for i in range(n):
        region = vor.regions[vor.point_region[i]]
        cells.append(shapely.Polygon(vor.vertices[region]))
    clipped = shapely.intersection(np.array(cells, dtype=object), poly)
    return shapely.area(clipped)


def _cells_3d(points: np.ndarray) -> np.ndarray:
    lo, hi = points.min(axis=0), points.max(axis=0)
    span = float(np.max(hi - lo))
    n = len(points)
    box = np.array(
        [[-1, 0, 0, lo[0]], [1, 0, 0, -hi[0]], [0, -1, 0, lo[1]],
         [0, 1, 0, -hi[1]], [0, 0, -1, lo[2]], [0, 0, 1, -hi[2]]],
        dtype=float,
    )
    if n == 1:
        return np.array([float(np.prod(hi - lo))])
    vor = Voronoi(points)
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for a, b in vor.ridge_points:
        neighbors[a].append(b)
        neighbors[b].append(a)
    out = np.empty(n)
    shrink = 1e-9 * span
    for i in range(n):
        p = points[i]
        q = points[neighbors[i]]
        normal = q - p
        offset = -np.einsum("ij,ij->i", normal, 0.5 * (p + q))
        hs = np.vstack([np.column_stack([normal, offset]), box])
        interior = np.clip(p, lo + shrink, hi - shrink)
        interior = interior + 1e-3 * (np.mean(q, axis=0) - interior) if np.any(interior != p) else interior
        try:
            verts = HalfspaceIntersection(hs, interior).intersections
            out[i] = ConvexHull(verts).volume
        except Exception:  # degenerate sliver cells
            out[i] = 0.0
    return out


def voronoi_volumes(cloud: PointCloud, domain_polygon=None) -> np.ndarray:
    """Clipped Voronoi cell area (2D) or volume (3D) per node, in row order.

    2D cells are clipped to ``domain_polygon``; 3D cells to the bounding box of
    the cloud.
    """
    if len(cloud) == 0:
        return np.zeros(0)
    if cloud.dim == 2:
        if domain_polygon is None:
            hull = ConvexHull(cloud.x)
            domain_polygon = cloud.x[hull.vertices]
        return _cells_2d(cloud.x, np.asarray(domain_polygon, float))
    if cloud.dim == 3:
        return _cells_3d(cloud.x)
    raise ConfigError("Voronoi measures need a 2D or 3D cloud")


def voronoi_measures(cloud: PointCloud, domain_polygon=None) -> list[VoronoiMeasure]:
    vol = voronoi_volumes(cloud, domain_polygon)
    return [VoronoiMeasure(int(i), float(v)) for i, v in zip(cloud.ids, vol)]
