"""Tetrahedral meshes with anisotropic graded refinement toward vertices and edges.

Every tetrahedron carries a type tag (O, V, VE, E, EV) describing how its
closure meets the singular set, and its vertex order encodes the singular
entity: ``x0`` is the singular vertex for V/VE/EV tets and ``x0x1`` lies on
the singular edge for E/EV tets.  Refinement splits each tet into eight
children; split points on the six edges are chosen from the grading
parameters of the singular entities.

Meshes are immutable.  A refined mesh keeps a link to its parent, and the
children of coarse tet ``p`` are stored at indices ``8*p .. 8*p + 7``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TetType",
    "SingularSet",
    "Mesh",
    "MeshError",
    "AmbiguousClassification",
    "MissingParameter",
    "DegenerateChild",
    "ConformityBreak",
    "EDGES",
    "CHILDREN",
    "CHILD_TYPES",
    "classify_tet",
    "classify_tets",
    "orient_tet",
    "validate_initial_mesh",
    "edge_ratio",
    "edge_ratios",
    "refine_tet",
    "refine_mesh",
    "refine",
    "check_conformity",
    "tet_volumes",
]


class MeshError(Exception):
    pass


class AmbiguousClassification(MeshError):
    pass


class MissingParameter(MeshError):
    pass


class DegenerateChild(MeshError):
    pass


class ConformityBreak(MeshError):
    pass


class TetType(enum.IntEnum):
    O = 0
    V = 1
    VE = 2
    E = 3
    EV = 4


# local edge (k, l) order used for split parameters and new nodes x_kl
EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# children as indices into [x0, x1, x2, x3, x01, x02, x03, x12, x13, x23].
# Each corner child keeps its parent vertex in the parent's slot; with this
# labelling, repeated midpoint refinement stays within three similarity
# classes, and E children keep their edge oriented the same way as the parent.
CHILDREN = np.array(
    [
        [0, 4, 5, 6],  # x0 x01 x02 x03
        [4, 1, 7, 8],  # x01 x1 x12 x13
        [5, 7, 2, 9],  # x02 x12 x2 x23
        [6, 8, 9, 3],  # x03 x13 x23 x3
        [4, 5, 6, 8],  # x01 x02 x03 x13
        [4, 5, 7, 8],  # x01 x02 x12 x13
        [5, 6, 8, 9],  # x02 x03 x13 x23
        [5, 7, 8, 9],  # x02 x12 x13 x23
    ],
    dtype=np.int64,
)

_O, _V, _VE, _E, _EV = (int(t) for t in TetType)

# CHILD_TYPES[parent_type][child] -> child type
CHILD_TYPES = np.array(
    [
        [_O] * 8,
        [_V] + [_O] * 7,
        [_VE] + [_O] * 7,
        [_E, _E, _O, _O, _VE, _VE, _O, _O],
        [_EV, _E, _O, _O, _VE, _VE, _O, _O],
    ],
    dtype=np.int8,
)


@dataclass(frozen=True)
class SingularSet:
    """Singular vertices and open edges of a polyhedral domain.

    Entities are numbered vertices first, then edges.  ``kappa`` holds one
    grading parameter per entity, in the same order.
    """

    vertices: np.ndarray  # (Nv, 3)
    edges: np.ndarray  # (Ne, 2, 3) endpoint coordinates
    kappa: np.ndarray  # (Nv + Ne,)
    edge_of_vertex: tuple = field(default=())
    kappa_ev: np.ndarray = field(default=None)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        E = np.asarray(self.edges, dtype=float).reshape(-1, 2, 3)
        k = np.asarray(self.kappa, dtype=float).reshape(-1)
        if k.size != len(V) + len(E):
            raise ValueError(f"expected {len(V) + len(E)} grading parameters, got {k.size}")
        if np.any(k <= 0) or np.any(k > 0.5):
            raise ValueError("grading parameters must lie in (0, 1/2]")
        if len(E) and np.any(np.linalg.norm(E[:, 1] - E[:, 0], axis=1) == 0):
            raise ValueError("singular edge with coincident endpoints")
        scale = max(1.0, float(np.abs(np.concatenate([V.ravel(), E.ravel()])).max(initial=0)))
        tol = 1e-12 * scale
        touching = []
        for v in V:
            ids = [j for j, (a, b) in enumerate(E)
                   if np.linalg.norm(a - v) <= tol or np.linalg.norm(b - v) <= tol]
            touching.append(tuple(ids))
        kev = np.array(
            [min([k[i]] + [k[len(V) + j] for j in touching[i]]) for i in range(len(V))]
        )
        for name, val in (("vertices", V), ("edges", E), ("kappa", k), ("kappa_ev", kev)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "edge_of_vertex", tuple(touching))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def kappa_v(self, i):
        return self.kappa[i]

    def kappa_e(self, j):
        return self.kappa[self.n_vertices + np.asarray(j)]

    def with_kappa(self, kappa) -> "SingularSet":
        return SingularSet(self.vertices, self.edges, kappa)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral mesh.

    ``vert_ent`` is the singular-vertex entity of V/EV tets; ``edge_ent`` is
    the singular-edge entity of VE/E/EV tets (for VE, the edge containing
    x0).  Both are -1 where unused.  ``prov_parents``/``prov_t`` record how
    each vertex was created: ``p = (1 - t) * P[a] + t * P[b]`` with ``a < b``;
    original vertices have parents ``(-1, -1)``.  ``facets`` is a bitmask of
    the boundary facets each vertex lies on.
    """

    points: np.ndarray
    tets: np.ndarray
    ttype: np.ndarray
    vert_ent: np.ndarray
    edge_ent: np.ndarray
    prov_parents: np.ndarray = None
    prov_t: np.ndarray = None
    facets: np.ndarray = None
    level: int = 0
    parent: "Mesh | None" = None

    def __post_init__(self):
        n = len(np.asarray(self.points))
        m = len(np.asarray(self.tets))
        defaults = {
            "points": (np.asarray(self.points, dtype=float).reshape(-1, 3),),
            "tets": (np.asarray(self.tets, dtype=np.int64).reshape(-1, 4),),
            "ttype": (np.asarray(self.ttype, dtype=np.int8).reshape(m),),
            "vert_ent": (np.asarray(self.vert_ent, dtype=np.int64).reshape(m),),
            "edge_ent": (np.asarray(self.edge_ent, dtype=np.int64).reshape(m),),
        }
        if self.prov_parents is None:
            defaults["prov_parents"] = (np.full((n, 2), -1, dtype=np.int64),)
        else:
            defaults["prov_parents"] = (np.asarray(self.prov_parents, dtype=np.int64).reshape(n, 2),)
        if self.prov_t is None:
            defaults["prov_t"] = (np.zeros(n),)
        else:
            defaults["prov_t"] = (np.asarray(self.prov_t, dtype=float).reshape(n),)
        if self.facets is None:
            defaults["facets"] = (np.zeros(n, dtype=np.int64),)
        else:
            defaults["facets"] = (np.asarray(self.facets, dtype=np.int64).reshape(n),)
        for name, (arr,) in defaults.items():
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, points, tets, ttype=None, vert_ent=None, edge_ent=None, **kw) -> "Mesh":
        m = len(tets)
        if ttype is None:
            ttype = np.zeros(m, dtype=np.int8)
        if vert_ent is None:
            vert_ent = np.full(m, -1)
        if edge_ent is None:
            edge_ent = np.full(m, -1)
        return cls(points, tets, ttype, vert_ent, edge_ent, **kw)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def boundary(self) -> np.ndarray:
        return self.facets != 0

    def hierarchy(self) -> list:
        """Meshes from level 0 up to this one."""
        out = []
        m = self
        while m is not None:
            out.append(m)
            m = m.parent
        return out[::-1]

    def census(self) -> dict:
        counts = np.bincount(self.ttype, minlength=5)
        return {t.name: int(counts[t]) for t in TetType}

    def __repr__(self):
        return f"Mesh(level={self.level}, points={self.n_points}, tets={self.n_tets})"


def tet_volumes(points, tets, signed=False, chunk=1_000_000):
    P = np.asarray(points)
    T = np.asarray(tets)
    vol = np.empty(len(T))
    for s in range(0, len(T), chunk):
        Tc = T[s:s + chunk]
        vol[s:s + chunk] = np.linalg.det(P[Tc[:, 1:]] - P[Tc[:, :1]]) / 6.0
    return vol if signed else np.abs(vol)


# ---------------------------------------------------------------------------
# classification


def _scale(points):
    return max(1.0, float(np.abs(points).max(initial=0.0)))


def classify_tets(coords, S: SingularSet, tol=1e-9):
    """Geometric classification of tets given as a (M, 4, 3) coordinate array.

    Returns ``(ttype, vert_ent, edge_ent, perm, ok)`` where ``perm`` reorders
    each tet's vertices so that x0 (and x1) follow the singular-entity
    convention, and ``ok`` is False where the intersection with the singular
    set matches none of the five patterns.
    """
    X = np.asarray(coords, dtype=float).reshape(-1, 4, 3)
    M = len(X)
    tol = tol * _scale(X)
    nv, ne = S.n_vertices, S.n_edges

    # vertex hits: (M, 4) index of coincident singular vertex or -1
    vhit = np.full((M, 4), -1, dtype=np.int64)
    for i, v in enumerate(S.vertices):
        d = np.linalg.norm(X - v, axis=2)
        vhit[d <= tol] = i

    # open-edge hits: (M, 4) index of edge whose open segment contains the point
    ehit = np.full((M, 4), -1, dtype=np.int64)
    # closed-segment membership per edge: (ne, M, 4)
    on_closed = np.zeros((ne, M, 4), dtype=bool)
    for j, (a, b) in enumerate(S.edges):
        ab = b - a
        L2 = ab @ ab
        s = ((X - a) @ ab) / L2
        foot = a + s[..., None] * ab
        dist = np.linalg.norm(X - foot, axis=2)
        stol = tol / np.sqrt(L2)
        on_line = dist <= tol
        on_closed[j] = on_line & (s >= -stol) & (s <= 1 + stol)
        inside = on_line & (s > stol) & (s < 1 - stol)
        ehit[inside] = j

    ttype = np.zeros(M, dtype=np.int8)
    vent = np.full(M, -1, dtype=np.int64)
    eent = np.full(M, -1, dtype=np.int64)
    perm = np.tile(np.arange(4), (M, 1))
    ok = np.ones(M, dtype=bool)

    for m in range(M):
        sv = [k for k in range(4) if vhit[m, k] >= 0]
        sedges = []  # (k, l, edge) tet edges lying on a singular edge
        for j in range(ne):
            ks = np.flatnonzero(on_closed[j, m])
            if len(ks) >= 2:
                if len(ks) > 2:
                    ok[m] = False
                sedges.append((int(ks[0]), int(ks[1]), j))
        on_open = [k for k in range(4) if ehit[m, k] >= 0]
        if len(sedges) > 1 or len(sv) > 1:
            ok[m] = False
            continue
        if not sedges:
            if not sv and not on_open:
                continue  # O
            if len(sv) + len(on_open) != 1:
                ok[m] = False
                continue
            if sv:
                k = sv[0]
                ttype[m], vent[m] = _V, vhit[m, k]
            else:
                k = on_open[0]
                ttype[m], eent[m] = _VE, ehit[m, k]
            rest = [i for i in range(4) if i != k]
            perm[m] = [k] + rest
            continue
        k, l, j = sedges[0]
        # other vertices on open singular edges would be extra singular vertices
        extra = [i for i in on_open if i not in (k, l)]
        if extra:
            ok[m] = False
            continue
        if not sv:
            ttype[m], eent[m] = _E, j
            if not (ehit[m, k] == j and ehit[m, l] == j):
                ok[m] = False
                continue
            rest = [i for i in range(4) if i not in (k, l)]
            perm[m] = [k, l] + rest
            continue
        kv = sv[0]
        if kv not in (k, l) or j not in S.edge_of_vertex[vhit[m, kv]]:
            ok[m] = False
            continue
        other = l if kv == k else k
        ttype[m], vent[m], eent[m] = _EV, vhit[m, kv], j
        rest = [i for i in range(4) if i not in (k, l)]
        perm[m] = [kv, other] + rest
    return ttype, vent, eent, perm, ok


def classify_tet(coords, S: SingularSet, tol=1e-9):
    """Classify one tetrahedron from its (4, 3) vertex coordinates.

    Returns ``(ttype, vert_ent, edge_ent)``.  Raises AmbiguousClassification
    when the tet meets the singular set in a way none of the five types allow.
    """
    t, v, e, _, ok = classify_tets(np.asarray(coords)[None], S, tol)
    if not ok[0]:
        raise AmbiguousClassification(f"tet {np.asarray(coords).tolist()} meets the singular set ambiguously")
    return TetType(int(t[0])), int(v[0]), int(e[0])


def orient_tet(coords, S: SingularSet, tol=1e-9):
    """Vertex permutation putting the singular vertex first and the singular edge on x0x1."""
    t, _, _, perm, ok = classify_tets(np.asarray(coords)[None], S, tol)
    if not ok[0]:
        raise AmbiguousClassification("cannot orient tet")
    return perm[0]


def validate_initial_mesh(mesh: Mesh, S: SingularSet, tol=1e-9) -> list:
    """Check the initial-mesh conditions.  Returns a list of violation strings."""
    report = []
    coords = mesh.points[mesh.tets]
    ttype, vent, eent, perm, ok = classify_tets(coords, S, tol)
    for m in np.flatnonzero(~ok):
        report.append(f"tet {m}: meets the singular set in more than one vertex/edge or "
                      f"its singular vertex is not an endpoint of its singular edge")
    good = ok.copy()
    bad_type = good & (ttype != mesh.ttype)
    for m in np.flatnonzero(bad_type):
        report.append(f"tet {m}: tagged {TetType(mesh.ttype[m]).name}, geometry says {TetType(ttype[m]).name}")
    good &= ~bad_type
    # vertex order convention
    need_x0 = np.isin(ttype, (_V, _VE, _EV)) & good
    bad_order = need_x0 & (perm[:, 0] != 0)
    need_x1 = np.isin(ttype, (_E, _EV)) & good
    bad_order |= need_x1 & ~(np.sort(perm[:, :2], axis=1) == [0, 1]).all(axis=1)
    bad_order |= (ttype == _EV) & good & (perm[:, 1] != 1)
    for m in np.flatnonzero(bad_order):
        report.append(f"tet {m}: vertex order does not put the singular entity at x0/x0x1")
    bad_ent = good & ((vent != mesh.vert_ent) | (eent != mesh.edge_ent))
    for m in np.flatnonzero(bad_ent):
        report.append(f"tet {m}: singular entity references disagree with geometry")
    vol = tet_volumes(mesh.points, mesh.tets)
    for m in np.flatnonzero(vol <= 1e-14 * _scale(mesh.points) ** 3):
        report.append(f"tet {m}: degenerate")
    report.extend(check_conformity(mesh))
    return report


# ---------------------------------------------------------------------------
# refinement


def edge_ratio(ttype, k, l, kappa_v=None, kappa_e=None, kappa_ev=None) -> float:
    """Split parameter t with x_kl = (1 - t) x_k + t x_l."""
    if not 0 <= k < l <= 3:
        raise ValueError(f"bad local edge ({k}, {l})")
    ttype = TetType(ttype)

    def need(name, val):
        if val is None:
            raise MissingParameter(f"{ttype.name}-tet needs {name}")
        return float(val)

    if ttype == TetType.O:
        return 0.5
    if ttype == TetType.V:
        return need("kappa_ev", kappa_ev) if k == 0 else 0.5
    if ttype == TetType.VE:
        return need("kappa_e", kappa_e) if k == 0 else 0.5
    if ttype == TetType.E:
        return need("kappa_e", kappa_e) if (k, l) not in ((0, 1), (2, 3)) else 0.5
    # EV
    if (k, l) == (0, 1):
        return need("kappa_v", kappa_v)
    if k == 0:
        return need("kappa_ev", kappa_ev)
    if k == 1:
        return need("kappa_e", kappa_e)
    return 0.5


def edge_ratios(ttype, vert_ent, edge_ent, S: SingularSet) -> np.ndarray:
    """Vectorised split parameters, shape (M, 6) in ``EDGES`` order."""
    M = len(ttype)
    t = np.full((M, 6), 0.5)
    nv = S.n_vertices
    kap = S.kappa
    ve = np.asarray(vert_ent)
    ee = np.asarray(edge_ent)

    def pick(mask, ents, table):
        bad = mask & (ents < 0)
        if bad.any():
            raise MissingParameter(f"tet {int(np.flatnonzero(bad)[0])} lacks a singular entity reference")
        out = np.zeros(M)
        out[mask] = table[ents[mask]]
        return out

    m = ttype == _V
    if m.any():
        kev = pick(m, ve, S.kappa_ev)
        t[m, 0:3] = kev[m, None]
    m = ttype == _VE
    if m.any():
        ke = pick(m, ee, kap[nv:])
        t[m, 0:3] = ke[m, None]
    m = ttype == _E
    if m.any():
        ke = pick(m, ee, kap[nv:])
        t[m, 1:5] = ke[m, None]
    m = ttype == _EV
    if m.any():
        kv = pick(m, ve, kap[:nv])
        kev = pick(m, ve, S.kappa_ev)
        ke = pick(m, ee, kap[nv:])
        t[m, 0] = kv[m]
        t[m, 1:3] = kev[m, None]
        t[m, 3:5] = ke[m, None]
    return t


def _longest_edge(X):
    kl = np.array(EDGES)
    return np.linalg.norm(X[:, kl[:, 1]] - X[:, kl[:, 0]], axis=2).max(axis=1)


def refine_tet(coords, ttype, S: SingularSet = None, vert_ent=-1, edge_ent=-1, *,
               kappa_v=None, kappa_e=None, kappa_ev=None):
    """Refine a single tet.

    Returns ``(nodes, children, child_types, t)``: the 10 local nodes
    ``[x0, x1, x2, x3, x01, x02, x03, x12, x13, x23]``, the (8, 4) children
    as local node indices, their types and the six split parameters.
    Grading parameters come from ``S`` and the entity references, or can be
    passed directly.
    """
    X = np.asarray(coords, dtype=float).reshape(4, 3)
    ttype = TetType(ttype)
    if S is not None:
        nv = S.n_vertices
        if vert_ent >= 0:
            kappa_v = S.kappa[vert_ent] if kappa_v is None else kappa_v
            kappa_ev = S.kappa_ev[vert_ent] if kappa_ev is None else kappa_ev
        if edge_ent >= 0:
            kappa_e = S.kappa[nv + edge_ent] if kappa_e is None else kappa_e
    t = np.array([edge_ratio(ttype, k, l, kappa_v, kappa_e, kappa_ev) for k, l in EDGES])
    kl = np.array(EDGES)
    new = (1 - t)[:, None] * X[kl[:, 0]] + t[:, None] * X[kl[:, 1]]
    nodes = np.vstack([X, new])
    cv = tet_volumes(nodes, CHILDREN)
    if np.any(cv <= 1e-14 * _longest_edge(X[None])[0] ** 3):
        raise DegenerateChild("child tet volume below tolerance")
    return nodes, CHILDREN.copy(), CHILD_TYPES[int(ttype)].copy(), t


def refine_mesh(mesh: Mesh, S: SingularSet, *, check_types=False) -> Mesh:
    """One refinement step: every tet is split into eight children.

    New nodes are shared between tets through the key (sorted parent ids,
    split parameter relative to the smaller id quantised at 1e-12).  Two
    tets asking for different split points on a shared edge raise
    ConformityBreak.
    """
    P, T = mesh.points, mesh.tets
    N, M = len(P), len(T)
    tpar = edge_ratios(mesh.ttype, mesh.vert_ent, mesh.edge_ent, S)  # (M, 6)
    kl = np.array(EDGES)
    a = T[:, kl[:, 0]]  # (M, 6)
    b = T[:, kl[:, 1]]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    trel = np.where(a < b, tpar, 1.0 - tpar)
    key = (lo * N + hi).ravel()
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    tq = np.round(trel.ravel() * 1e12).astype(np.int64)
    tq_min = np.full(len(uniq), np.iinfo(np.int64).max)
    tq_max = np.full(len(uniq), np.iinfo(np.int64).min)
    np.minimum.at(tq_min, inv, tq)
    np.maximum.at(tq_max, inv, tq)
    clash = np.flatnonzero(tq_max != tq_min)
    if len(clash):
        e = uniq[clash[0]]
        raise ConformityBreak(
            f"edge ({e // N}, {e % N}) requested with split parameters "
            f"{tq_min[clash[0]] * 1e-12:.12g} and {tq_max[clash[0]] * 1e-12:.12g}"
        )
    ea = uniq // N
    eb = uniq % N
    et = trel.ravel()[first]
    newp = (1 - et)[:, None] * P[ea] + et[:, None] * P[eb]
    points = np.vstack([P, newp])
    parents = np.vstack([mesh.prov_parents, np.stack([ea, eb], axis=1)])
    prov_t = np.concatenate([mesh.prov_t, et])
    facets = np.concatenate([mesh.facets, mesh.facets[ea] & mesh.facets[eb]])

    local = np.empty((M, 10), dtype=np.int64)
    local[:, :4] = T
    local[:, 4:] = N + inv.reshape(M, 6)
    tets = local[:, CHILDREN].reshape(-1, 4)  # child c of tet p at 8p + c
    ttype = CHILD_TYPES[mesh.ttype].reshape(-1)
    keep_v = np.isin(ttype, (_V, _EV))
    keep_e = np.isin(ttype, (_VE, _E, _EV))
    vert_ent = np.where(keep_v, np.repeat(mesh.vert_ent, 8), -1)
    edge_ent = np.where(keep_e, np.repeat(mesh.edge_ent, 8), -1)

    step = 125_000  # parents per chunk
    degenerate = any(
        np.any(tet_volumes(points, tets[8 * s:8 * (s + step)])
               <= 1e-14 * np.repeat(_longest_edge(P[T[s:s + step]]), 8) ** 3)
        for s in range(0, M, step))
    if degenerate:
        raise DegenerateChild(f"degenerate child at refinement of level {mesh.level}")

    fine = Mesh(points, tets, ttype, vert_ent, edge_ent, parents, prov_t, facets,
                level=mesh.level + 1, parent=mesh)
    if check_types:
        g, gv, ge, perm, ok = classify_tets(points[tets], S)
        bad = ~ok | (g != ttype) | (gv != vert_ent) | (ge != edge_ent)
        bad |= np.isin(ttype, (_V, _VE, _EV)) & (perm[:, 0] != 0)
        bad |= (ttype == _EV) & (perm[:, 1] != 1)
        bad |= (ttype == _E) & ~(np.sort(perm[:, :2], axis=1) == [0, 1]).all(axis=1)
        if bad.any():
            m = int(np.flatnonzero(bad)[0])
            raise AssertionError(
                f"child {m}: rule table says {TetType(ttype[m]).name}, geometry says {TetType(g[m]).name}"
            )
    return fine


def refine(mesh: Mesh, S: SingularSet, levels: int, **kw) -> Mesh:
    for _ in range(levels):
        mesh = refine_mesh(mesh, S, **kw)
    return mesh


# ---------------------------------------------------------------------------
# conformity


def _faces(tets):
    """All tet faces with sorted vertex ids, (4M, 3)."""
    out = np.empty((4 * len(tets), 3), dtype=np.int64)
    for k, (i, j, l) in enumerate(((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))):
        a, b, c = tets[:, i], tets[:, j], tets[:, l]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        blk = out[k * len(tets):(k + 1) * len(tets)]
        blk[:, 0] = lo
        blk[:, 1] = a + b + c - lo - hi
        blk[:, 2] = hi
    return out


def _unique_rows(rows, return_counts=False):
    """np.unique(rows, axis=0), via packed int64 keys when they fit and a lexsort otherwise."""
    rows = np.asarray(rows, dtype=np.int64)
    k = rows.shape[1]
    base = int(rows.max(initial=0)) + 1
    if base ** k > 2**63 - 1:
        srt = rows[np.lexsort(rows.T[::-1])]
        start = np.ones(len(srt), dtype=bool)
        start[1:] = (srt[1:] != srt[:-1]).any(axis=1)
        u = srt[start]
        if not return_counts:
            return u
        idx = np.flatnonzero(start)
        return u, np.diff(np.append(idx, len(srt)))
    key = np.zeros(len(rows), dtype=np.int64)
    for j in range(k):
        key = key * base + rows[:, j]
    out = np.unique(key, return_counts=return_counts)
    u = _decode(out[0] if return_counts else out, base, k)
    return (u, out[1]) if return_counts else u


def _mesh_edges(tets):
    kl = np.array(EDGES)
    a, b = tets[:, kl[:, 0]].ravel(), tets[:, kl[:, 1]].ravel()
    return _unique_rows(np.column_stack([np.minimum(a, b), np.maximum(a, b)]))


def _face_keys(tets, base):
    """Packed sorted-face keys lo*base^2 + mid*base + hi for all 4M faces."""
    out = np.empty(4 * len(tets), dtype=np.int64)
    for k, (i, j, l) in enumerate(((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))):
        a, b, c = (tets[:, t].astype(np.int64) for t in (i, j, l))
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        out[k * len(tets):(k + 1) * len(tets)] = (lo * base + (a + b + c - lo - hi)) * base + hi
    return out


def _decode(keys, base, k):
    cols = []
    for _ in range(k):
        cols.append(keys % base)
        keys = keys // base
    return np.stack(cols[::-1], axis=1)


def check_conformity(mesh: Mesh, geometric_limit=2_000_000) -> list:
    """Report of conformity violations; empty list means conforming.

    Checks face multiplicities, faces exposed on the boundary that do not lie
    on a common boundary facet (when facet tags are present), split nodes
    whose parent edge survives in the mesh, and, on small meshes, vertices
    lying inside mesh edges.
    """
    report = []
    T = mesh.tets
    N = mesh.n_points
    if N ** 3 <= 2**63 - 1:
        ukey, counts = np.unique(_face_keys(T, N), return_counts=True)
        bad = _decode(ukey[counts > 2][:20], N, 3)
        exposed = _decode(ukey[counts == 1], N, 3) if mesh.facets.any() else None
        del ukey, counts
    else:
        uf, counts = _unique_rows(_faces(T), return_counts=True)
        bad = uf[counts > 2][:20]
        exposed = uf[counts == 1] if mesh.facets.any() else None
        del uf, counts
    for f in bad:
        report.append(f"face {tuple(int(i) for i in f)} shared by more than two tets")
    if exposed is not None:
        common = mesh.facets[exposed[:, 0]] & mesh.facets[exposed[:, 1]] & mesh.facets[exposed[:, 2]]
        for f in exposed[common == 0][:20]:
            report.append(f"face {tuple(int(i) for i in f)} has one tet but is not on the boundary")

    split = np.flatnonzero(mesh.prov_parents[:, 0] >= 0)
    if len(split):
        ekey = np.empty(6 * len(T), dtype=np.int64)
        for k, (i, j) in enumerate(EDGES):
            a, b = T[:, i], T[:, j]
            ekey[k * len(T):(k + 1) * len(T)] = np.minimum(a, b) * N + np.maximum(a, b)
        ekey = np.unique(ekey)
        pa = mesh.prov_parents[split]
        pkey = np.minimum(pa[:, 0], pa[:, 1]) * N + np.maximum(pa[:, 0], pa[:, 1])
        # only nodes created at the latest refinement can leave a parent edge behind
        hanging = np.isin(pkey, ekey, assume_unique=False)
        del ekey
        for v in split[hanging][:20]:
            a, b = mesh.prov_parents[v]
            report.append(f"node {int(v)} splits edge ({int(a)}, {int(b)}) which is still a mesh edge")

    # a tet mesh has at least as many edges as tets, so the first test is a cheap pre-filter
    edges = _mesh_edges(T) if len(T) * N <= geometric_limit else None
    if edges is not None and len(edges) * N <= geometric_limit:
        P = mesh.points
        A = P[edges[:, 0]]
        B = P[edges[:, 1]]
        AB = B - A
        L2 = np.einsum("ij,ij->i", AB, AB)
        tol = 1e-10 * _scale(P)
        s = ((P[None, :, :] - A[:, None, :]) @ AB[:, :, None])[..., 0] / L2[:, None]
        foot = A[:, None, :] + s[..., None] * AB[:, None, :]
        d = np.linalg.norm(P[None] - foot, axis=2)
        hit = (d < tol) & (s > 1e-10) & (s < 1 - 1e-10)
        for ei, v in zip(*np.nonzero(hit)):
            if len(report) > 40:
                break
            report.append(f"vertex {int(v)} lies inside edge ({int(edges[ei, 0])}, {int(edges[ei, 1])})")
    return report
