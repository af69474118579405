"""Shape quantities of graded meshes: relative distances along singular edges,
reference maps, mesh layers, face angles and similarity classes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .mesh import CHILDREN, Mesh, SingularSet, TetType, refine_tet
from .weights import EdgeFrame, edge_frame

__all__ = [
    "ShapeError", "ZeroEdgeLength", "FrameMismatch", "AncestryError",
    "RefMap", "tet_frame", "to_local", "reference_tet", "reference_children",
    "relative_z_distances", "absolute_distance",
    "reference_map_e", "reference_map_ve", "reference_map_ev", "dilation_v",
    "ChainNode", "singular_chain", "LayerAssignment", "mesh_layers",
    "face_angles", "max_face_angle", "dihedral_angles", "shape_signature", "similarity_classes",
    "angle_trajectory", "e_shear", "quality_rows", "quality_csv",
]


class ShapeError(Exception):
    pass


class ZeroEdgeLength(ShapeError):
    pass


class FrameMismatch(ShapeError):
    pass


class AncestryError(ShapeError):
    pass


# ---------------------------------------------------------------- frames

@dataclass(frozen=True)
class RefMap:
    """Linear map [[s,0,0],[0,s,0],[b1 s, b2 s, w]] acting on local coordinates."""

    s: float
    w: float
    b1: float = 0.0
    b2: float = 0.0

    def __post_init__(self):
        for name in ("s", "w", "b1", "b2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def matrix(self) -> np.ndarray:
        s = self.s
        return np.array([[s, 0.0, 0.0], [0.0, s, 0.0], [self.b1 * s, self.b2 * s, self.w]])

    def __call__(self, local_points) -> np.ndarray:
        return np.asarray(local_points, dtype=float) @ self.matrix.T


def tet_frame(T0) -> EdgeFrame:
    """z along x0 -> x1, x2 in the xz-plane (x > 0)."""
    T0 = np.asarray(T0, dtype=float)
    return edge_frame(T0[0], T0[1], in_plane=T0[2])


def to_local(points, frame: EdgeFrame, origin) -> np.ndarray:
    return (np.asarray(points, dtype=float) - np.asarray(origin, dtype=float)) @ frame.rotation.T


def reference_tet(T0):
    """Reference tet built from an initial tet with a singular edge x0x1.

    Vertices (0,0,-l0/2), (0,0,l0/2), (λ2, 0, -l0/2), (λ3, ξ3, -l0/2) where
    (λk, ξk) are the transverse coordinates of xk.  Returns (vertices, frame).
    """
    T0 = np.asarray(T0, dtype=float)
    fr = tet_frame(T0)
    loc = to_local(T0, fr, T0[0])
    l0 = float(np.linalg.norm(T0[1] - T0[0]))
    h = -l0 / 2
    That = np.array([[0, 0, h], [0, 0, -h], [loc[2, 0], loc[2, 1], h], [loc[3, 0], loc[3, 1], h]])
    return That, fr


def reference_children(T0, ttype, *, kappa_v=None, kappa_e=None, kappa_ev=None):
    """Children of the reference tet after one refinement: (coords (8,4,3), types)."""
    That, _ = reference_tet(T0)
    nodes, ch, types, _ = refine_tet(That, ttype, kappa_v=kappa_v, kappa_e=kappa_e, kappa_ev=kappa_ev)
    return nodes[ch], types


def _check_aligned(T, fr: EdgeFrame, tol=1e-9):
    T = np.asarray(T, dtype=float)
    d = T[1] - T[0]
    L = np.linalg.norm(d)
    if L < 1e-14:
        raise ZeroEdgeLength("singular edge of the tet has zero length")
    off = np.cross(fr.axis, T[:2] - fr.origin)
    scale = max(L, np.linalg.norm(T[:2] - fr.origin, axis=1).max())
    if np.abs(off).max() > tol * scale or d @ fr.axis <= 0:
        raise FrameMismatch("tet edge x0x1 is not on the frame axis in the positive direction")
    return L


# ---------------------------------------------------------------- relative distances

def relative_z_distances(tet, frame: EdgeFrame | None = None) -> np.ndarray:
    """[[c_{γ2,1}, c_{γ2,2}], [c_{γ3,1}, c_{γ3,2}]] for a tet whose edge γ0γ1 is singular.

    c_{γ,1} is the signed offset of the projection of γ from γ0, in units of
    |γ0γ1|, positive toward γ1; c_{γ,2} = 1 - c_{γ,1}.
    """
    T = np.asarray(tet, dtype=float)
    if frame is not None:
        _check_aligned(T, frame)
    d = T[1] - T[0]
    L2 = float(d @ d)
    if L2 < 1e-28:
        raise ZeroEdgeLength("|γ0γ1| below 1e-14")
    c1 = (T[2:] - T[0]) @ d / L2
    return np.stack([c1, 1.0 - c1], axis=1)


def absolute_distance(tet) -> float:
    return float(np.abs(relative_z_distances(tet)).max())


# ---------------------------------------------------------------- reference maps

def _shear(T, fr, That, zscale):
    """b1, b2 for a tet with transverse coordinates already scaled to T̂."""
    origin = 0.5 * (T[0] + T[1])
    loc = to_local(T, fr, origin)
    l0 = That[1, 2] - That[0, 2]
    lam2, lam3, xi3 = That[2, 0], That[3, 0], That[3, 1]
    z2, z3 = loc[2, 2], loc[3, 2]
    b1 = -(zscale * z2 + l0 / 2) / lam2
    b2 = (zscale * (z2 * lam3 - lam2 * z3) + l0 / 2 * (lam3 - lam2)) / (lam2 * xi3)
    return b1, b2, loc


def reference_map_e(T0, T, i: int, kappa_e: float) -> RefMap:
    """B_{e,i} for an E-tet T at depth i below the E-tet T0 (same edge direction).

    Coordinates: T0's frame, origin at the midpoint of T's singular edge.
    """
    T0 = np.asarray(T0, dtype=float)
    T = np.asarray(T, dtype=float)
    That, fr = reference_tet(T0)
    _check_aligned(T, fr)
    b1, b2, _ = _shear(T, fr, That, 2.0**i)
    return RefMap(kappa_e ** (-i), 2.0**i, b1, b2)


def reference_map_ev(T0, T, i: int, kappa_v: float, kappa_ev: float) -> RefMap:
    """B_{ev,i} for the EV-tet T at depth i below the EV-tet T0."""
    T0 = np.asarray(T0, dtype=float)
    T = np.asarray(T, dtype=float)
    That, fr = reference_tet(T0)
    _check_aligned(T, fr)
    b1, b2, _ = _shear(T, fr, That, kappa_v ** (-i))
    return RefMap(kappa_ev ** (-i), kappa_v ** (-i), b1, b2)


def reference_map_ve(T0, T_parent, i: int, k: int, kappa_e: float) -> tuple:
    """B_{i,k} for a VE-tet at level i whose VE ancestry starts at level k.

    ``T_parent`` is the E-tet at level k-1 (depth k-1 below T0) whose child
    started the VE chain.  Returns (RefMap, origin); the map acts on
    coordinates in T0's frame centred at the midpoint of T_parent's edge.
    """
    if k < 1 or i < k:
        raise AncestryError(f"need 1 <= k <= i, got k={k}, i={i}")
    T0 = np.asarray(T0, dtype=float)
    Tp = np.asarray(T_parent, dtype=float)
    That, fr = reference_tet(T0)
    _check_aligned(Tp, fr)
    b1, b2, _ = _shear(Tp, fr, That, 2.0 ** (k - 1))
    s = kappa_e ** (1 - i)
    w = 2.0 ** (k - 1) * kappa_e ** (k - i)
    return RefMap(s, w, b1, b2), 0.5 * (Tp[0] + Tp[1])


def dilation_v(i: int, kappa: float) -> RefMap:
    """B_{v,i} = κ^{-i} I, centred at the singular vertex."""
    if not (0.0 < kappa <= 0.5):
        raise ValueError(f"kappa={kappa} outside (0, 1/2]")
    return RefMap(kappa ** (-i), kappa ** (-i))


# ---------------------------------------------------------------- chains

@dataclass(frozen=True)
class ChainNode:
    coords: np.ndarray
    ttype: TetType
    level: int
    parent: int  # index into the previous level's list, -1 at the root
    child: int  # child slot in the parent


def singular_chain(coords, ttype, levels: int, *, kappa_v=None, kappa_e=None, kappa_ev=None,
                   follow=(TetType.E, TetType.EV, TetType.VE, TetType.V)) -> list:
    """Refine only tets whose type is in ``follow``, level by level.

    Returns a list of levels, each a list of :class:`ChainNode`.
    """
    out = [[ChainNode(np.asarray(coords, dtype=float), TetType(ttype), 0, -1, -1)]]
    follow = {TetType(t) for t in follow}
    for lev in range(1, levels + 1):
        nxt = []
        for pi, node in enumerate(out[-1]):
            if node.ttype not in follow:
                continue
            nodes, ch, types, _ = refine_tet(node.coords, node.ttype, kappa_v=kappa_v,
                                             kappa_e=kappa_e, kappa_ev=kappa_ev)
            for c in range(8):
                if TetType(types[c]) in follow:
                    nxt.append(ChainNode(nodes[ch[c]], TetType(types[c]), lev, pi, c))
        out.append(nxt)
    return out


_CHAIN_TYPES = {
    TetType.V: ({TetType.V}, "v"),
    TetType.VE: ({TetType.VE}, "v"),
    TetType.E: ({TetType.E, TetType.VE}, "e"),
    TetType.EV: ({TetType.EV}, "ev"),
}


@dataclass(frozen=True)
class LayerAssignment:
    root: int
    kind: str
    tets: np.ndarray  # tet ids in the fine mesh
    layer: np.ndarray  # layer number per tet, 0..n

    def counts(self) -> np.ndarray:
        n = int(self.layer.max()) if len(self.layer) else 0
        return np.bincount(self.layer, minlength=n + 1)


def mesh_layers(mesh: Mesh, root: int) -> LayerAssignment:
    """Layer of every descendant of the level-0 tet ``root``.

    A tet lies in layer i when its ancestor left the singular chain of the
    root (V, VE, E/VE or EV tets) at refinement step i + 1; tets still in
    the chain at level n are in layer n.
    """
    hier = mesh.hierarchy()
    n = mesh.level
    rtype = TetType(hier[0].ttype[root])
    if rtype == TetType.O:
        raise AncestryError("O-tets have no mesh layers")
    chain, kind = _CHAIN_TYPES[rtype]
    chain = np.array([int(t) for t in chain])
    tets = np.arange(root * 8**n, (root + 1) * 8**n)
    layer = np.full(len(tets), n, dtype=np.int64)
    left = np.zeros(len(tets), dtype=bool)
    for k in range(1, n + 1):
        anc = tets // 8 ** (n - k)
        out = ~np.isin(hier[k].ttype[anc], chain)
        new = out & ~left
        layer[new] = k - 1
        left |= out
    return LayerAssignment(root, kind, tets, layer)


# ---------------------------------------------------------------- angles, classes

_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


def face_angles(coords) -> np.ndarray:
    """Interior angles (M, 4 faces, 3) of the faces of tets (M,4,3), radians."""
    X = np.asarray(coords, dtype=float).reshape(-1, 4, 3)
    F = X[:, _FACES]  # (M,4,3,3)
    out = np.empty(F.shape[:3])
    for j in range(3):
        a = F[:, :, (j + 1) % 3] - F[:, :, j]
        b = F[:, :, (j + 2) % 3] - F[:, :, j]
        cosv = (a * b).sum(-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
        out[:, :, j] = np.arccos(np.clip(cosv, -1.0, 1.0))
    return out


_CHUNK = 200_000


def _coord_chunks(mesh_or_coords):
    if isinstance(mesh_or_coords, Mesh):
        P, T = mesh_or_coords.points, mesh_or_coords.tets
        for s in range(0, len(T), _CHUNK):
            yield P[T[s:s + _CHUNK]]
    else:
        X = np.asarray(mesh_or_coords, dtype=float).reshape(-1, 4, 3)
        for s in range(0, len(X), _CHUNK):
            yield X[s:s + _CHUNK]


def max_face_angle(mesh_or_coords) -> float:
    """Largest interior angle over all triangular faces, radians."""
    return max(float(face_angles(X).max()) for X in _coord_chunks(mesh_or_coords))


def dihedral_angles(coords) -> np.ndarray:
    """Six dihedral angles (M,6) at the edges 01,02,03,12,13,23."""
    X = np.asarray(coords, dtype=float).reshape(-1, 4, 3)
    out = np.empty((len(X), 6))
    for e, (k, l) in enumerate(((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))):
        m, n = [v for v in range(4) if v not in (k, l)]
        d = X[:, l] - X[:, k]
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        u = X[:, m] - X[:, k]
        v = X[:, n] - X[:, k]
        u = u - (u * d).sum(1, keepdims=True) * d
        v = v - (v * d).sum(1, keepdims=True) * d
        c = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, e] = np.arccos(np.clip(c, -1.0, 1.0))
    return out


def shape_signature(coords, quantum: float = 1e-9) -> np.ndarray:
    """Similarity-invariant signature: sorted edge-length ratios and sorted dihedrals."""
    X = np.asarray(coords, dtype=float).reshape(-1, 4, 3)
    i, j = np.triu_indices(4, 1)
    L = np.linalg.norm(X[:, i] - X[:, j], axis=2)
    L = np.sort(L / L.max(axis=1, keepdims=True), axis=1)
    D = np.sort(dihedral_angles(X), axis=1)
    return np.round(np.hstack([L, D]) / quantum).astype(np.int64)


def similarity_classes(mesh_or_coords, quantum: float = 1e-9) -> int:
    seen = np.zeros((0, 12), dtype=np.int64)
    for X in _coord_chunks(mesh_or_coords):
        seen = np.unique(np.vstack([seen, np.unique(shape_signature(X, quantum), axis=0)]), axis=0)
    return int(len(seen))


def _ordered_key(X, ttype, quantum=1e-9):
    i, j = np.triu_indices(4, 1)
    L = np.linalg.norm(X[i] - X[j], axis=1)
    return (int(ttype),) + tuple(np.round(L / L.max() / quantum).astype(np.int64))


def angle_trajectory(coords, ttype, levels: int, *, kappa_v=None, kappa_e=None, kappa_ev=None):
    """Max face angle (radians) of the fully refined single-tet mesh, per level.

    Refinement commutes with similarity transforms once vertex order and
    type are fixed, so only one representative per ordered similarity class
    is refined; this keeps deep levels cheap while giving the same maximum.
    """
    reps = {(_ordered_key(np.asarray(coords, float), ttype)): (np.asarray(coords, float), TetType(ttype))}
    out = [max_face_angle(np.asarray(coords, float)[None])]
    for _ in range(levels):
        nxt = {}
        for X, t in reps.values():
            nodes, ch, types, _ = refine_tet(X, t, kappa_v=kappa_v, kappa_e=kappa_e, kappa_ev=kappa_ev)
            for c in range(8):
                Y = nodes[ch[c]]
                key = _ordered_key(Y, types[c])
                if key not in nxt:
                    nxt[key] = (Y, TetType(types[c]))
        reps = nxt
        out.append(max(max_face_angle(X[None]) for X, _ in reps.values()))
    return out


# ---------------------------------------------------------------- quality table

def quality_rows(mesh: Mesh, S: SingularSet) -> list:
    """Per-level quality summary over a refinement hierarchy.

    Columns: level, max_angle_deg, similarity_classes, max_cT, max_|b1|, max_|b2|.
    c_T is taken over E and EV tets; the shear coefficients over E tets
    (see :func:`e_shear`) and EV tets (relative to the level-0 EV tet).
    """
    hier = mesh.hierarchy()
    rows = []
    for m in hier:
        sel = np.flatnonzero(np.isin(m.ttype, (int(TetType.E), int(TetType.EV))))
        cT = max((absolute_distance(m.points[m.tets[j]]) for j in sel), default=float("nan"))
        b1, b2 = _shear_extremes(hier, m.level, S)
        rows.append({
            "level": m.level,
            "max_angle_deg": float(np.degrees(max_face_angle(m))),
            "similarity_classes": similarity_classes(m),
            "max_cT": cT,
            "max_|b1|": b1,
            "max_|b2|": b2,
        })
    return rows


def _root_of(hier, level, j, types):
    """Walk up from tet j at ``level`` while the ancestor type stays in ``types``."""
    k = level
    while k > 0 and int(hier[k - 1].ttype[j // 8]) in types:
        j //= 8
        k -= 1
    return k, j


def _ev_image(hier, k, r, S, coords):
    """Image of ``coords`` under B_{ev,k} of the EV-tet r at level k (local frame of its level-0 root)."""
    root = r // 8**k
    T0 = hier[0].points[hier[0].tets[root]]
    Tk = hier[k].points[hier[k].tets[r]]
    v = hier[k].vert_ent[r]
    B = reference_map_ev(T0, Tk, k, float(S.kappa[v]), float(S.kappa_ev[v]))
    return B(to_local(coords, tet_frame(T0), 0.5 * (Tk[0] + Tk[1])))


def e_shear(hier, level: int, j: int, S: SingularSet) -> RefMap:
    """Reference map of the E-tet j at ``level``.

    The chain of E ancestors is followed up to its first E-tet.  When that
    tet is a child of an EV-tet, the EV map of the parent is applied first,
    so the shear is measured against the fixed E child of the refined
    reference tet rather than against an increasingly flat E-tet.
    """
    m = hier[level]
    ke = float(S.kappa[S.n_vertices + m.edge_ent[j]])
    k, r = _root_of(hier, level, int(j), {int(TetType.E)})
    T = m.points[m.tets[j]]
    R = hier[k].points[hier[k].tets[r]]
    if k > 0 and int(hier[k - 1].ttype[r // 8]) == int(TetType.EV):
        T = _ev_image(hier, k - 1, r // 8, S, T)
        R = _ev_image(hier, k - 1, r // 8, S, R)
    return reference_map_e(R, T, level - k, ke)


def _shear_extremes(hier, level, S):
    m = hier[level]
    b1m = b2m = 0.0
    found = False
    for j in np.flatnonzero(m.ttype == int(TetType.E)):
        B = e_shear(hier, level, int(j), S)
        b1m, b2m, found = max(b1m, abs(B.b1)), max(b2m, abs(B.b2)), True
    for j in np.flatnonzero(m.ttype == int(TetType.EV)):
        r = int(j) // 8**level
        T0 = hier[0].points[hier[0].tets[r]]
        v = m.vert_ent[j]
        B = reference_map_ev(T0, m.points[m.tets[j]], level, float(S.kappa[v]), float(S.kappa_ev[v]))
        b1m, b2m, found = max(b1m, abs(B.b1)), max(b2m, abs(B.b2)), True
    if not found:
        return float("nan"), float("nan")
    return b1m, b2m


def quality_csv(rows, path=None) -> str:
    cols = ["level", "max_angle_deg", "similarity_classes", "max_cT", "max_|b1|", "max_|b2|"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: (f"{r[c]:.6g}" if isinstance(r[c], float) else r[c]) for c in cols})
    text = buf.getvalue()
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write quality table to {path}: {exc}") from exc
    return text
