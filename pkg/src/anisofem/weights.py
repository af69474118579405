"""Grading exponents, distances to the singular set, and weighted norms."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .mesh import Mesh, SingularSet

__all__ = [
    "WeightError", "OutOfRange", "AtSingularity", "ConfigError", "UnsupportedOrder",
    "kappa_from_a", "a_from_kappa", "compute_aV", "GradingExponents",
    "distance_rho", "angular_distance", "EdgeFrame", "edge_frame",
    "RegionTag", "Decomposition", "decompose_domain",
    "tet_rule", "AnalyticFunction", "weighted_seminorm", "weighted_norm",
]


class WeightError(Exception):
    pass


class OutOfRange(WeightError, ValueError):
    pass


class AtSingularity(WeightError, ValueError):
    pass


class ConfigError(WeightError, ValueError):
    pass


class UnsupportedOrder(WeightError, ValueError):
    pass


# ---------------------------------------------------------------- exponents

def kappa_from_a(a: float, m: int = 1) -> float:
    """κ = 2^(-m/a) for a in (0, m]."""
    if m < 1:
        raise OutOfRange(f"degree m={m} must be >= 1")
    if not (0.0 < a <= m):
        raise OutOfRange(f"a={a} outside (0, {m}]")
    return 2.0 ** (-m / a)


def a_from_kappa(kappa: float, m: int = 1) -> float:
    """Inverse of :func:`kappa_from_a`: a = -m / log2(κ)."""
    if m < 1:
        raise OutOfRange(f"degree m={m} must be >= 1")
    if not (0.0 < kappa <= 0.5):
        raise OutOfRange(f"kappa={kappa} outside (0, 1/2]")
    return -m / math.log2(kappa)


def compute_aV(a_v: float, a_e_list, m: int = 1):
    """Return (a_ev, a_V) with a_ev = min(a_v, a_e...) and
    a_V = (m + 1)(1 - a_ev / a_v) + a_ev."""
    a_e = [float(x) for x in a_e_list]
    for x in [a_v, *a_e]:
        if not (0.0 < x <= m):
            raise OutOfRange(f"exponent {x} outside (0, {m}]")
    a_ev = min([a_v, *a_e])
    a_V = (m + 1) * (1.0 - a_ev / a_v) + a_ev
    return a_ev, a_V


@dataclass(frozen=True)
class GradingExponents:
    """Per-entity exponents a_ℓ (vertices first) for a singular set."""

    a: tuple
    m: int
    n_vertices: int
    vertex_edges: tuple  # per vertex, the edge indices touching it

    @classmethod
    def from_singular_set(cls, S: SingularSet, m: int = 1) -> "GradingExponents":
        a = tuple(a_from_kappa(float(k), m) for k in S.kappa)
        ve = tuple(tuple(int(j) for j in S.edge_of_vertex[i]) for i in range(S.n_vertices))
        return cls(a, m, S.n_vertices, ve)

    @property
    def kappa(self) -> np.ndarray:
        return np.array([kappa_from_a(x, self.m) for x in self.a])

    def a_ev(self, v: int) -> float:
        return compute_aV(self.a[v], [self.a[self.n_vertices + j] for j in self.vertex_edges[v]], self.m)[0]

    def a_V(self, v: int) -> float:
        return compute_aV(self.a[v], [self.a[self.n_vertices + j] for j in self.vertex_edges[v]], self.m)[1]


# ---------------------------------------------------------------- distances

def distance_rho(points, entity) -> np.ndarray:
    """Distance from points (N,3) to a vertex (3,) or an edge segment (2,3)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    E = np.asarray(entity, dtype=float)
    if E.shape == (3,):
        return np.linalg.norm(P - E, axis=1)
    if E.shape != (2, 3):
        raise ValueError("entity must be a point (3,) or a segment (2, 3)")
    a, b = E
    d = b - a
    s = np.clip((P - a) @ d / (d @ d), 0.0, 1.0)
    return np.linalg.norm(P - (a + s[:, None] * d), axis=1)


def angular_distance(points, vertex, edge) -> np.ndarray:
    """ρ_e / ρ_v for points near a vertex v of edge e."""
    rv = distance_rho(points, vertex)
    if np.any(rv == 0.0):
        raise AtSingularity("angular distance evaluated at the vertex")
    return distance_rho(points, edge) / rv


@dataclass(frozen=True)
class EdgeFrame:
    """Orthonormal frame with ``axis`` along a singular edge."""

    origin: np.ndarray
    axis: np.ndarray
    n1: np.ndarray
    n2: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        """Rows (n1, n2, axis): maps global vectors to local (x, y, z)."""
        return np.stack([self.n1, self.n2, self.axis])


def edge_frame(a, b, in_plane=None) -> EdgeFrame:
    """Frame with z from a to b.  If ``in_plane`` is given, it ends up in the xz-plane at x >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = b - a
    L = np.linalg.norm(t)
    if L < 1e-14:
        raise ValueError("zero-length edge")
    t = t / L
    if in_plane is None:
        seed = np.eye(3)[int(np.argmin(np.abs(t)))]
    else:
        seed = np.asarray(in_plane, dtype=float) - a
    n1 = seed - (seed @ t) * t
    nn = np.linalg.norm(n1)
    if nn < 1e-14:
        raise ValueError("in-plane point lies on the edge line")
    n1 /= nn
    n2 = np.cross(t, n1)
    return EdgeFrame(a.copy(), t, n1, n2)


# ---------------------------------------------------------------- regions

class RegionTag(enum.IntEnum):
    VERTEX_CORE = 0  # O_v^o
    EDGE_NEAR_VERTEX = 1  # O_e^v
    EDGE_CORE = 2  # O_e^o
    INTERIOR = 3  # Ω^o


@dataclass(frozen=True, eq=False)
class Decomposition:
    singular: SingularSet
    r_v: float
    r_e: float
    aperture: float

    def tag(self, points):
        """Return (tags, vertex index, edge index) per point; -1 where unused."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        S = self.singular
        n = len(P)
        tags = np.full(n, int(RegionTag.INTERIOR), dtype=np.int8)
        vid = np.full(n, -1, dtype=np.int64)
        eid = np.full(n, -1, dtype=np.int64)
        if S.n_edges:
            rho_e = np.stack([distance_rho(P, S.edges[j]) for j in range(S.n_edges)], axis=1)
            near_e = np.argmin(rho_e, axis=1)
            min_e = rho_e[np.arange(n), near_e]
            core = min_e < self.r_e
            tags[core] = RegionTag.EDGE_CORE
            eid[core] = near_e[core]
        if S.n_vertices:
            rho_v = np.stack([distance_rho(P, S.vertices[i]) for i in range(S.n_vertices)], axis=1)
            near_v = np.argmin(rho_v, axis=1)
            min_v = rho_v[np.arange(n), near_v]
            inball = min_v < self.r_v
            tags[inball] = RegionTag.VERTEX_CORE
            vid[inball] = near_v[inball]
            eid[inball] = -1
            for i in range(S.n_vertices):
                sel = np.flatnonzero(inball & (near_v == i))
                js = S.edge_of_vertex[i]
                if len(sel) == 0 or len(js) == 0:
                    continue
                ratio = rho_e[np.ix_(sel, js)] / np.maximum(min_v[sel], np.finfo(float).tiny)[:, None]
                k = np.argmin(ratio, axis=1)
                hit = ratio[np.arange(len(sel)), k] < self.aperture
                tags[sel[hit]] = RegionTag.EDGE_NEAR_VERTEX
                eid[sel[hit]] = np.asarray(js)[k[hit]]
        return tags, vid, eid


def _segment_distance(p0, p1, q0, q1, samples=201):
    s = np.linspace(0.0, 1.0, samples)
    P = p0 + s[:, None] * (p1 - p0)
    return float(distance_rho(P, np.stack([q0, q1])).min())


def decompose_domain(S: SingularSet, r_v: float | None = None, r_e: float | None = None,
                     aperture: float = 0.5) -> Decomposition:
    """Neighbourhood radii default to a third of the relevant separations.

    r_v: a third of the smallest distance between singular vertices.  r_e: a
    third of the smallest distance between disjoint singular edges, or of the
    shortest edge when no two edges are disjoint.
    """
    V = S.vertices
    E = S.edges
    if r_v is None:
        if S.n_vertices > 1:
            d = np.linalg.norm(V[:, None] - V[None], axis=2)
            r_v = d[np.triu_indices(len(V), 1)].min() / 3.0
        elif S.n_edges:
            r_v = np.linalg.norm(E[:, 1] - E[:, 0], axis=1).min() / 3.0
        else:
            r_v = 1.0
    if r_e is None:
        seps = []
        for i, j in itertools.combinations(range(S.n_edges), 2):
            shared = min(np.linalg.norm(E[i][a] - E[j][b]) for a in range(2) for b in range(2))
            if shared > 1e-12:
                seps.append(_segment_distance(E[i][0], E[i][1], E[j][0], E[j][1]))
        if seps:
            r_e = min(seps) / 3.0
        elif S.n_edges:
            r_e = np.linalg.norm(E[:, 1] - E[:, 0], axis=1).min() / 3.0
        else:
            r_e = 0.0
    if S.n_vertices > 1 and r_v > 0:
        d = np.linalg.norm(V[:, None] - V[None], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() <= r_v:
            raise ConfigError(f"vertex ball radius {r_v} contains another singular vertex")
    if not (0.0 < aperture):
        raise ConfigError("aperture must be positive")
    return Decomposition(S, float(r_v), float(r_e), float(aperture))


# ---------------------------------------------------------------- quadrature

@lru_cache(maxsize=None)
def tet_rule(order: int = 4):
    """Conical-product Gauss-Jacobi rule on the unit tet.

    Returns (barycentric points (Q,4), weights (Q,)) with weights summing to
    1 and exact for polynomials of total degree ``order``.  All points lie
    strictly inside.
    """
    n = max(1, (order + 2) // 2)
    x0, w0 = roots_jacobi(n, 2, 0)
    x1, w1 = roots_jacobi(n, 1, 0)
    x2, w2 = roots_jacobi(n, 0, 0)
    a, b, c = (1 + x0) / 2, (1 + x1) / 2, (1 + x2) / 2
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    W = np.einsum("i,j,k->ijk", w0, w1, w2).ravel()
    l1 = A.ravel()
    l2 = ((1 - A) * B).ravel()
    l3 = ((1 - A) * (1 - B) * C).ravel()
    P = np.stack([1 - l1 - l2 - l3, l1, l2, l3], axis=1)
    P.setflags(write=False)
    W = W / W.sum()
    W.setflags(write=False)
    return P, W


# ---------------------------------------------------------------- functions

def _multi_indices(k):
    """Multi-indices of order k as index tuples into a symmetric tensor."""
    return list(itertools.combinations_with_replacement(range(3), k))


class AnalyticFunction:
    """Function with exact derivative tensors, built from a sympy expression."""

    def __init__(self, expr, symbols=None, max_order: int = 2):
        import sympy

        if symbols is None:
            symbols = sympy.symbols("x y z", real=True)
        self.expr = expr
        self.symbols = tuple(symbols)
        self.max_order = max_order
        self._tensors = []
        for k in range(max_order + 1):
            comps = {}
            for idx in _multi_indices(k):
                d = expr
                for i in idx:
                    d = sympy.diff(d, self.symbols[i])
                comps[idx] = sympy.lambdify(self.symbols, d, "numpy")
            self._tensors.append(comps)

    def derivatives(self, points, k: int) -> np.ndarray:
        """Symmetric derivative tensor of order k, shape (N,) + (3,)*k."""
        if k > self.max_order:
            raise UnsupportedOrder(f"derivatives of order {k} not prepared (max {self.max_order})")
        P = np.atleast_2d(points)
        out = np.zeros((len(P),) + (3,) * k)
        for idx, fn in self._tensors[k].items():
            val = np.broadcast_to(np.asarray(fn(P[:, 0], P[:, 1], P[:, 2]), dtype=float), (len(P),))
            for perm in set(itertools.permutations(idx)):
                out[(slice(None),) + perm] = val
        return out

    def __call__(self, points):
        return self.derivatives(points, 0)


def _rotate(T, R):
    """Express a derivative tensor (N,3,..,3) in the frame whose rows are R."""
    for axis in range(1, T.ndim):
        T = np.moveaxis(np.tensordot(T, R, axes=([axis], [1])), -1, axis)
    return T


def _components(T, k):
    """Derivatives ∂^α for each multi-index α (N, n_alpha) and their transverse orders."""
    idx = _multi_indices(k)
    if k == 0:
        return T[:, None], np.zeros(1, dtype=int)
    vals = np.stack([T[(slice(None),) + i] for i in idx], axis=1)
    perp = np.array([sum(1 for j in i if j < 2) for i in idx])
    return vals, perp


def _fe_derivatives(u, mesh, tets, bary, k):
    c = u.coefficients[mesh.tets[tets]]  # (M,4)
    if k == 0:
        return np.einsum("qi,mi->mq", bary, c).reshape(-1)
    if k == 1:
        from .fem import p1_gradients

        g, _ = p1_gradients(mesh.points[mesh.tets[tets]])
        grad = np.einsum("mi,mik->mk", c, g)
        return np.repeat(grad, len(bary), axis=0)
    return np.zeros((len(tets) * len(bary),) + (3,) * k)


def weighted_seminorm(u, mesh: Mesh, mu, m: int = 1, *, orders=None, order: int = 4,
                      decomposition: Decomposition | None = None, chunk: int = 100_000) -> float:
    """Anisotropic weighted (semi)norm by per-tet quadrature.

    ``u`` is an FEFunction on ``mesh`` (m <= 1) or an :class:`AnalyticFunction`.
    ``orders`` lists the derivative orders |α| that are summed; by default only
    |α| = m (the seminorm).  Weights: ρ_v^{|α|-μ_v} in the vertex cores,
    ρ_e^{|α⊥|-μ_e} in the edge cores, ρ_v^{|α|-μ_v} ρ_{e,v}^{|α⊥|-μ_e} near a
    vertex along an edge, 1 elsewhere.  Transverse orders α⊥ are counted in a
    frame aligned with the edge.
    """
    from .fem import FEFunction

    S = decomposition.singular if decomposition is not None else None
    if decomposition is None:
        raise ConfigError("a Decomposition of the domain is required")
    mu = np.asarray(mu, dtype=float)
    if len(mu) != S.n_vertices + S.n_edges:
        raise ConfigError(f"weight vector has {len(mu)} entries, singular set has {S.n_vertices + S.n_edges}")
    orders = (m,) if orders is None else tuple(orders)
    is_fe = isinstance(u, FEFunction)
    if is_fe and max(orders) > 1:
        raise UnsupportedOrder("piecewise-linear functions only carry derivatives up to order 1")
    if not is_fe and not hasattr(u, "derivatives"):
        raise UnsupportedOrder("u must be an FEFunction or provide derivatives(points, k)")
    bary, w = tet_rule(order)
    nv = S.n_vertices
    frames = [edge_frame(S.edges[j][0], S.edges[j][1]).rotation for j in range(S.n_edges)]
    total = 0.0
    for s in range(0, mesh.n_tets, chunk):
        tets = np.arange(s, min(s + chunk, mesh.n_tets))
        X = mesh.points[mesh.tets[tets]]
        vol = np.abs(np.linalg.det(X[:, 1:] - X[:, :1])) / 6.0
        qp = np.einsum("qi,mik->mqk", bary, X).reshape(-1, 3)
        qw = (vol[:, None] * w[None, :]).reshape(-1)
        tags, vid, eid = decomposition.tag(qp)
        rho_v = np.ones(len(qp))
        rho_e = np.ones(len(qp))
        for i in range(nv):
            sel = vid == i
            if sel.any():
                rho_v[sel] = distance_rho(qp[sel], S.vertices[i])
        for j in range(S.n_edges):
            sel = eid == j
            if sel.any():
                rho_e[sel] = distance_rho(qp[sel], S.edges[j])
        mu_v = np.where(vid >= 0, mu[np.maximum(vid, 0)], 0.0) if nv else np.zeros(len(qp))
        mu_e = np.where(eid >= 0, mu[nv + np.maximum(eid, 0)], 0.0) if S.n_edges else np.zeros(len(qp))
        if np.any((tags != RegionTag.INTERIOR) & ((rho_v == 0) | (rho_e == 0))):
            raise AtSingularity("quadrature point on the singular set")
        for k in orders:
            D = _fe_derivatives(u, mesh, tets, bary, k) if is_fe else u.derivatives(qp, k)
            for t in RegionTag:
                sel = tags == t
                if not sel.any():
                    continue
                if t in (RegionTag.EDGE_CORE, RegionTag.EDGE_NEAR_VERTEX):
                    for j in np.unique(eid[sel]):
                        sj = sel & (eid == j)
                        vals, perp = _components(_rotate(D[sj], frames[j]), k)
                        if t == RegionTag.EDGE_CORE:
                            wt = rho_e[sj, None] ** (perp[None, :] - mu_e[sj, None])
                        else:
                            ang = rho_e[sj] / rho_v[sj]
                            wt = (rho_v[sj, None] ** (k - mu_v[sj, None])
                                  * ang[:, None] ** (perp[None, :] - mu_e[sj, None]))
                        total += float(qw[sj] @ ((wt * vals) ** 2).sum(axis=1))
                else:
                    vals, _ = _components(D[sel], k)
                    if t == RegionTag.VERTEX_CORE:
                        wt = rho_v[sel] ** (k - mu_v[sel])
                        total += float(qw[sel] @ ((wt[:, None] * vals) ** 2).sum(axis=1))
                    else:
                        total += float(qw[sel] @ (vals**2).sum(axis=1))
    return math.sqrt(total)


def weighted_norm(u, mesh: Mesh, mu, m: int = 1, **kw) -> float:
    """Full norm: all derivative orders 0..m."""
    return weighted_seminorm(u, mesh, mu, m, orders=range(m + 1), **kw)
