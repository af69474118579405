"""Embedded model domains: the reentrant prism and the Fichera corner."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, SingularSet, TetType, classify_tets, validate_initial_mesh, _faces

__all__ = ["DomainSpec", "build_domain", "prism_domain", "fichera_domain", "DOMAINS"]

ETA_EDGE = 2.0 / 3.0
ETA_VERTEX_PRISM = 13.0 / 6.0
ETA_VERTEX_FICHERA = 0.954


@dataclass(frozen=True, eq=False)
class DomainSpec:
    name: str
    mesh: Mesh
    singular: SingularSet
    facet_planes: np.ndarray  # (F, 4): n . x = d stored as (nx, ny, nz, d)
    volume: float
    eta: dict
    # indices of singular vertices that are the "real" corner singularities
    corner_vertices: tuple = ()

    def with_kappa(self, kappa_edge: float, kappa_vertex: float | None = None,
                   kappa_other_vertices: float = 0.5) -> "DomainSpec":
        """Copy with new grading parameters.

        ``kappa_vertex`` applies to the corner vertices (default 0.5), the
        remaining singular vertices get ``kappa_other_vertices``; every
        singular edge gets ``kappa_edge``.
        """
        S = self.singular
        kv = 0.5 if kappa_vertex is None else kappa_vertex
        k = np.empty(S.n_vertices + S.n_edges)
        for i in range(S.n_vertices):
            k[i] = kv if i in self.corner_vertices else kappa_other_vertices
        k[S.n_vertices:] = kappa_edge
        return DomainSpec(self.name, self.mesh, S.with_kappa(k), self.facet_planes,
                          self.volume, self.eta, self.corner_vertices)


def _facet_tags(points, tets, planes, tol=1e-12):
    """Bitmask of boundary facets per vertex from the exposed faces of a mesh."""
    faces = _faces(tets)
    uf, counts = np.unique(faces, axis=0, return_counts=True)
    exposed = uf[counts == 1]
    tags = np.zeros(len(points), dtype=np.int64)
    n = planes[:, :3]
    d = planes[:, 3]
    for f in exposed:
        res = np.abs(points[f] @ n.T - d)  # (3, F)
        on = np.flatnonzero((res <= tol).all(axis=0))
        if len(on) == 0:
            raise AssertionError(f"boundary face {f.tolist()} lies on no domain facet")
        for j in on:
            tags[f] |= np.int64(1) << np.int64(j)
    return tags


def _assemble(name, points, tets, S, planes, volume, eta, corners=()):
    points = np.asarray(points, dtype=float)
    tets = np.asarray(tets, dtype=np.int64)
    ttype, vent, eent, perm, ok = classify_tets(points[tets], S)
    if not ok.all():
        raise AssertionError(f"{name}: initial tets {np.flatnonzero(~ok).tolist()} are not classifiable")
    tets = np.take_along_axis(tets, perm, axis=1)
    tags = _facet_tags(points, tets, planes)
    mesh = Mesh(points, tets, ttype, vent, eent, facets=tags)
    report = validate_initial_mesh(mesh, S)
    if report:
        raise AssertionError(f"{name}: embedded initial mesh invalid: {report[:3]}")
    return DomainSpec(name, mesh, S, np.asarray(planes, dtype=float), volume, eta, tuple(corners))


def prism_domain(kappa_edge: float = 0.5, kappa_vertex: float = 0.5) -> DomainSpec:
    """((0,1)^2 minus the triangle (0,0),(1,0),(0.5,0.5)) x (0,1), 18 tets.

    The reentrant edge {(0.5, 0.5)} x (0, 1) is singular, together with its
    two endpoints.
    """
    cs = np.array([[0.5, 0.5], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    zs = (0.0, 0.5, 1.0)
    # ids: centre line first (one per z level), then the others level by level
    pts = [[0.5, 0.5, z] for z in zs]
    idx = {}
    for iz, z in enumerate(zs):
        idx[(0, iz)] = iz
    for iz, z in enumerate(zs):
        for ip in range(1, 5):
            idx[(ip, iz)] = len(pts)
            pts.append([cs[ip, 0], cs[ip, 1], z])
    tets = []
    for a, b in ((1, 2), (2, 3), (3, 4)):
        for iz in (0, 1):
            c0, c1 = idx[(0, iz)], idx[(0, iz + 1)]
            a0, a1 = idx[(a, iz)], idx[(a, iz + 1)]
            b0, b1 = idx[(b, iz)], idx[(b, iz + 1)]
            if a0 > b0:
                a0, a1, b0, b1 = b0, b1, a0, a1
            tets += [[c0, c1, a1, b1], [c0, a0, a1, b1], [c0, a0, b0, b1]]
    V = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 1.0]])
    E = np.array([[[0.5, 0.5, 0.0], [0.5, 0.5, 1.0]]])
    S = SingularSet(V, E, [kappa_vertex, kappa_vertex, kappa_edge])
    r2 = np.sqrt(0.5)
    planes = np.array([
        [0, 0, 1, 0.0],
        [0, 0, 1, 1.0],
        [1, 0, 0, 0.0],
        [1, 0, 0, 1.0],
        [0, 1, 0, 1.0],
        [r2, -r2, 0, 0.0],  # through (0,0) and (0.5,0.5)
        [r2, r2, 0, r2],  # through (1,0) and (0.5,0.5)
    ])
    return _assemble("prism", pts, tets, S, planes, 0.75,
                     {"edge": ETA_EDGE, "vertex": ETA_VERTEX_PRISM}, corners=(0, 1))


def _kuhn_tets(corner, h, index):
    """Six tets of the cube [corner, corner + h]^3, all sharing the main diagonal."""
    out = []
    c = np.asarray(corner)
    for perm in itertools.permutations(range(3)):
        p = c.copy()
        verts = [index(p)]
        for axis in perm:
            p = p.copy()
            p[axis] += h
            verts.append(index(p))
        out.append(verts)
    return out


def fichera_domain(kappa_edge: float = 0.5, kappa_vertex: float = 0.5,
                   kappa_far: float = 0.5) -> DomainSpec:
    """(-1,1)^3 minus [0,1)^3 on a 0.5-grid, 56 cubes x 6 = 336 tets.

    Singular set: the corner at the origin, the three reentrant edges along
    the positive axes, and the far endpoints of those edges.  The far
    endpoints must be singular vertices: a tet touching them along a
    singular edge would otherwise grade its edges toward a non-singular
    point and break conformity with its ungraded neighbours.
    """
    h = 0.5
    grid = np.arange(-1.0, 1.0, h)
    ids = {}
    pts = []

    def index(p):
        key = tuple(np.round(np.asarray(p) / h).astype(int))
        if key not in ids:
            ids[key] = len(pts)
            pts.append([key[0] * h, key[1] * h, key[2] * h])
        return ids[key]

    # singular points get the smallest ids
    for p in ([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]):
        index(p)
    tets = []
    for cx, cy, cz in itertools.product(grid, grid, grid):
        if cx >= 0 and cy >= 0 and cz >= 0:
            continue
        tets += _kuhn_tets((cx, cy, cz), h, index)
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    E = np.array([[[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [0, 1, 0]], [[0, 0, 0], [0, 0, 1]]], dtype=float)
    S = SingularSet(V, E, [kappa_vertex, kappa_far, kappa_far, kappa_far] + [kappa_edge] * 3)
    planes = []
    for axis in range(3):
        n = np.zeros(3)
        n[axis] = 1
        planes += [list(n) + [-1.0], list(n) + [1.0], list(n) + [0.0]]
    return _assemble("fichera", pts, tets, S, np.array(planes), 7.0,
                     {"edge": ETA_EDGE, "vertex": ETA_VERTEX_FICHERA, "far_vertex": ETA_VERTEX_PRISM},
                     corners=(0,))


DOMAINS = {"prism": prism_domain, "fichera": fichera_domain}


def build_domain(name: str, kappa_edge: float = 0.5, kappa_vertex: float | None = None) -> DomainSpec:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; choose from {sorted(DOMAINS)}") from None
    dom = factory()
    return dom.with_kappa(kappa_edge, kappa_vertex)
