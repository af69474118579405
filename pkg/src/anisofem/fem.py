"""P1 finite elements for -Δu = f with homogeneous Dirichlet data."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

__all__ = [
    "FEMError", "DegenerateTet", "EmptyInterior", "NoConvergence", "NotAncestor",
    "MeshMismatch", "ZeroDiff",
    "FEFunction", "LinearSystem", "ReducedSystem", "CGResult",
    "p1_gradients", "element_stiffness", "assemble", "apply_dirichlet",
    "solve_cg", "solve", "prolong", "h1_seminorm", "h1_diff", "convergence_rates",
    "evaluate",
]


class FEMError(Exception):
    pass


class DegenerateTet(FEMError):
    pass


class EmptyInterior(FEMError):
    pass


class NoConvergence(FEMError):
    pass


class NotAncestor(FEMError):
    pass


class MeshMismatch(FEMError):
    pass


class ZeroDiff(FEMError):
    pass


@dataclass(frozen=True, eq=False)
class FEFunction:
    """Nodal coefficients of a continuous piecewise-linear function."""

    mesh: Mesh
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float, copy=True).reshape(-1)
        if len(c) != self.mesh.n_points:
            raise MeshMismatch(f"{len(c)} coefficients for {self.mesh.n_points} vertices")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __sub__(self, other: "FEFunction") -> "FEFunction":
        if other.mesh is not self.mesh:
            raise MeshMismatch("functions live on different meshes")
        return FEFunction(self.mesh, self.coefficients - other.coefficients)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    boundary: np.ndarray
    volumes: np.ndarray


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    A: sp.csr_matrix
    b: np.ndarray
    interior: np.ndarray  # vertex ids of the unknowns
    n_points: int
    boundary_values: np.ndarray  # full-length vector, zero in the interior


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


# Symmetric 4-point rule, exact for quadratics (barycentric coordinates).
_Q2_A = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
_Q2_B = (5.0 - math.sqrt(5.0)) / 20.0
Q2_POINTS = np.full((4, 4), _Q2_B) + np.eye(4) * (_Q2_A - _Q2_B)
Q2_WEIGHTS = np.full(4, 0.25)


def p1_gradients(coords):
    """Barycentric gradients (M,4,3) and signed volumes (M,) of tets (M,4,3)."""
    coords = np.asarray(coords, dtype=float)
    J = coords[:, 1:] - coords[:, :1]  # rows are edge vectors
    det = np.linalg.det(J)
    try:
        Jinv = np.linalg.inv(J)  # columns are grads of lambda_1..3
    except np.linalg.LinAlgError:
        raise DegenerateTet(f"{int(np.sum(det == 0))} tets with zero volume") from None
    g = np.empty((len(coords), 4, 3))
    g[:, 1:] = np.swapaxes(Jinv, 1, 2)
    g[:, 0] = -g[:, 1:].sum(axis=1)
    return g, det / 6.0


def element_stiffness(coords):
    g, vol = p1_gradients(coords)
    return np.abs(vol)[:, None, None] * np.einsum("mik,mjk->mij", g, g)


def _check_volumes(X, vol, rtol=1e-14):
    # scale-free: volume against the cube of the longest edge of each tet
    i, j = np.triu_indices(4, 1)
    lmax = np.linalg.norm(X[:, i] - X[:, j], axis=2).max(axis=1)
    bad = np.flatnonzero(np.abs(vol) <= rtol * lmax**3)
    if len(bad):
        raise DegenerateTet(f"{len(bad)} tets with near-zero volume, first {bad[0]}")


def assemble(mesh: Mesh, f=1.0, *, chunk: int = 500_000) -> LinearSystem:
    """Stiffness matrix and load vector, before boundary conditions.

    ``f`` is a constant or a callable taking (N,3) points.  The load uses a
    4-point rule exact for quadratics.
    """
    n = mesh.n_points
    A = sp.csr_matrix((n, n))
    b = np.zeros(n)
    vols = np.empty(mesh.n_tets)
    for s in range(0, mesh.n_tets, chunk):
        T = mesh.tets[s:s + chunk]
        X = mesh.points[T]
        g, vol = p1_gradients(X)
        vol = np.abs(vol)
        _check_volumes(X, vol)
        vols[s:s + chunk] = vol
        K = vol[:, None, None] * np.einsum("mik,mjk->mij", g, g)
        rows = np.repeat(T, 4, axis=1).ravel()
        cols = np.tile(T, (1, 4)).ravel()
        A = A + sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
        if callable(f):
            qp = np.einsum("qi,mik->mqk", Q2_POINTS, X)
            fv = np.asarray(f(qp.reshape(-1, 3)), dtype=float).reshape(len(T), 4)
            load = vol[:, None] * np.einsum("q,mq,qi->mi", Q2_WEIGHTS, fv, Q2_POINTS)
        else:
            load = np.repeat(vol[:, None] * (float(f) / 4.0), 4, axis=1)
        b += np.bincount(T.ravel(), weights=load.ravel(), minlength=n)
    A.sum_duplicates()
    return LinearSystem(A.tocsr(), b, mesh.boundary.copy(), vols)


def apply_dirichlet(system: LinearSystem, mesh: Mesh | None = None, g=None) -> ReducedSystem:
    """Eliminate boundary rows and columns.

    ``g`` gives boundary values (callable on points or a full-length vector);
    zero by default.
    """
    n = len(system.b)
    bnd = system.boundary if mesh is None else mesh.boundary
    interior = np.flatnonzero(~bnd)
    if len(interior) == 0:
        raise EmptyInterior("mesh has no interior vertices")
    ub = np.zeros(n)
    if g is not None:
        if callable(g):
            if mesh is None:
                raise ValueError("callable boundary data needs the mesh")
            ub[bnd] = np.asarray(g(mesh.points[bnd]), dtype=float)
        else:
            ub[bnd] = np.asarray(g, dtype=float)[bnd]
    A = system.A
    Aii = A[interior][:, interior].tocsr()
    rhs = system.b[interior]
    if np.any(ub):
        rhs = rhs - (A[interior] @ ub)
    return ReducedSystem(Aii, rhs, interior, n, ub)


def solve_cg(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None) -> CGResult:
    """Jacobi-preconditioned conjugate gradients.

    Stops when ||b - Ax|| <= tol ||b||.  The true residual is recomputed at
    the end and returned.
    """
    n = len(b)
    if max_iter is None:
        max_iter = max(50, int(50 * math.sqrt(n)))
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, 0.0)
    dinv = 1.0 / A.diagonal()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while np.linalg.norm(r) > tol * bnorm:
        if it >= max_iter:
            raise NoConvergence(f"relative residual {np.linalg.norm(r) / bnorm:.3e} after {it} iterations")
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    res = float(np.linalg.norm(b - A @ x)) / bnorm
    return CGResult(x, it, res)


def solve(mesh: Mesh, f=1.0, *, g=None, tol: float = 1e-10, max_iter=None, guess: FEFunction | None = None,
          system: LinearSystem | None = None):
    """Assemble, impose Dirichlet data, solve.  Returns (FEFunction, CGResult, LinearSystem)."""
    system = assemble(mesh, f) if system is None else system
    red = apply_dirichlet(system, mesh, g)
    x0 = None if guess is None else guess.coefficients[red.interior]
    res = solve_cg(red.A, red.b, tol, max_iter, x0)
    u = red.boundary_values.copy()
    u[red.interior] = res.x
    return FEFunction(mesh, u), res, system


def prolong(coarse: FEFunction, fine: Mesh) -> FEFunction:
    """Interpolate a coarse P1 function onto a descendant mesh, level by level."""
    chain = []
    m = fine
    while m is not None and m is not coarse.mesh:
        chain.append(m)
        m = m.parent
    if m is None:
        raise NotAncestor("fine mesh does not descend from the coarse mesh")
    u = coarse.coefficients
    for mesh in reversed(chain):
        n_old = len(u)
        a, b = mesh.prov_parents[n_old:, 0], mesh.prov_parents[n_old:, 1]
        t = mesh.prov_t[n_old:]
        u = np.concatenate([u, (1.0 - t) * u[a] + t * u[b]])
    return FEFunction(fine, u)


def h1_seminorm(u: FEFunction, A=None) -> float:
    if A is None:
        A = assemble(u.mesh).A
    c = u.coefficients
    return math.sqrt(max(float(c @ (A @ c)), 0.0))


def h1_diff(u_fine: FEFunction, u_coarse_prolonged: FEFunction, A=None) -> float:
    """|u_fine - u_coarse|_{H^1}, both given on the same mesh."""
    if u_fine.mesh is not u_coarse_prolonged.mesh:
        raise MeshMismatch("h1_diff needs both functions on the same mesh; prolong first")
    return h1_seminorm(u_fine - u_coarse_prolonged, A)


def convergence_rates(diffs) -> list:
    """rate_j = log2(diffs[j] / diffs[j+1]) for consecutive seminorm differences."""
    d = np.asarray(diffs, dtype=float)
    if len(d) < 2:
        raise ValueError("need at least two differences")
    if np.any(d <= np.finfo(float).tiny):
        raise ZeroDiff("a difference vanished; consecutive solutions are identical")
    return list(np.log2(d[:-1] / d[1:]))


def evaluate(u: FEFunction, points, tol: float = 1e-12):
    """Point evaluation by brute-force location (for small meshes and tests)."""
    mesh = u.mesh
    P = np.atleast_2d(np.asarray(points, dtype=float))
    X = mesh.points[mesh.tets]
    J = X[:, 1:] - X[:, :1]
    Jinv = np.linalg.inv(J)
    out = np.full(len(P), np.nan)
    for k, p in enumerate(P):
        lam123 = np.einsum("mij,mj->mi", np.swapaxes(Jinv, 1, 2), p - X[:, 0])
        lam = np.concatenate([1.0 - lam123.sum(axis=1)[:, None], lam123], axis=1)
        ok = np.flatnonzero((lam >= -tol).all(axis=1))
        if len(ok) == 0:
            raise ValueError(f"point {p} outside the mesh")
        j = ok[0]
        out[k] = lam[j] @ u.coefficients[mesh.tets[j]]
    return out
