import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, strategies as st

from anisofem.domains import build_domain
from anisofem.fem import (
    DegenerateTet, EmptyInterior, FEFunction, MeshMismatch, NoConvergence, NotAncestor, ZeroDiff,
    apply_dirichlet, assemble, convergence_rates, element_stiffness, evaluate, h1_diff, h1_seminorm,
    p1_gradients, prolong, solve, solve_cg,
)
from anisofem.mesh import Mesh, refine, refine_mesh

UNIT = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def linear(x):
    return 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1] + 0.5 * x[:, 2]


@pytest.fixture(scope="module")
def graded_meshes():
    out = []
    for name, ke, kv, n in (("prism", 0.2, 0.5, 3), ("prism", 0.1, 0.3, 2), ("fichera", 0.3, 0.3, 2)):
        dom = build_domain(name, ke, kv)
        out.append(refine(dom.mesh, dom.singular, n))
    return out


def test_reference_stiffness():
    K = element_stiffness(UNIT[None])[0]
    expect = np.array([[3, -1, -1, -1], [-1, 1, 0, 0], [-1, 0, 1, 0], [-1, 0, 0, 1]]) / 6.0
    np.testing.assert_allclose(K, expect, atol=1e-15)


@given(st.lists(st.floats(-2, 2), min_size=12, max_size=12))
def test_gradients_reproduce_linears(vals):
    X = UNIT + 0.1 * np.array(vals).reshape(4, 3)
    g, vol = p1_gradients(X[None])
    if abs(vol[0]) < 1e-3:
        return
    c = np.array([0.3, -1.2, 2.0])
    u = X @ c
    np.testing.assert_allclose(np.einsum("i,ik->k", u, g[0]), c, atol=1e-9)
    np.testing.assert_allclose(g[0].sum(axis=0), 0, atol=1e-12)


def test_load_vector_exact_for_linear_f():
    m = Mesh.from_arrays(UNIT, [[0, 1, 2, 3]])
    b = assemble(m, linear).b
    fv = linear(UNIT)
    vol = 1 / 6
    # ∫ f φ_i = vol/20 (f_i + Σ f_j) for linear f
    np.testing.assert_allclose(b, vol / 20 * (fv + fv.sum()), rtol=1e-13)
    np.testing.assert_allclose(assemble(m, 1.0).b, vol / 4, rtol=1e-14)


def test_stiffness_properties(graded_meshes):
    for m in graded_meshes:
        s = assemble(m)
        A = s.A
        assert abs(A - A.T).max() < 1e-14
        np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 0, atol=1e-12)
        x = linear(m.points)
        # energy of a linear function is |∇|^2 * volume
        assert x @ (A @ x) == pytest.approx((4 + 9 + 0.25) * s.volumes.sum(), rel=1e-11)


def test_patch_test(graded_meshes):
    for m in graded_meshes:
        u, res, _ = solve(m, 0.0, g=linear, tol=1e-14)
        assert np.abs(u.coefficients - linear(m.points)).max() < 1e-10


def test_cg_matches_cholesky(graded_meshes):
    m = graded_meshes[1]
    red = apply_dirichlet(assemble(m, 1.0))
    dense = red.A.toarray()
    ref = sla.cho_solve(sla.cho_factor(dense), red.b)
    res = solve_cg(red.A, red.b, tol=1e-13)
    np.testing.assert_allclose(res.x, ref, rtol=1e-9, atol=1e-13)
    assert res.residual <= 1e-13


def test_cg_reports_true_residual():
    A = sp.diags([1.0, 2.0, 3.0]).tocsr()
    res = solve_cg(A, np.ones(3), tol=1e-12)
    assert res.residual == pytest.approx(np.linalg.norm(np.ones(3) - A @ res.x) / math.sqrt(3))
    assert solve_cg(A, np.zeros(3)).iterations == 0


def test_no_convergence(graded_meshes):
    red = apply_dirichlet(assemble(graded_meshes[0], 1.0))
    with pytest.raises(NoConvergence):
        solve_cg(red.A, red.b, tol=1e-12, max_iter=2)


def test_galerkin_identity():
    dom = build_domain("prism", 0.2)
    coarse = refine(dom.mesh, dom.singular, 2)
    fine = refine_mesh(coarse, dom.singular)
    u_f, _, sf = solve(fine, 1.0, tol=1e-13)
    u_c, _, _ = solve(coarse, 1.0, tol=1e-13)
    # a(u_f, v) = (f, v) for every v in the fine space vanishing on the boundary
    rng = np.random.default_rng(3)
    for _ in range(3):
        v = rng.standard_normal(fine.n_points)
        v[fine.boundary] = 0.0
        assert abs(u_f.coefficients @ (sf.A @ v) - sf.b @ v) < 1e-8 * max(1.0, np.abs(sf.b @ v))
    # and for the coarse solution, which lies in the fine space
    vc = prolong(u_c, fine).coefficients
    assert u_f.coefficients @ (sf.A @ vc) == pytest.approx(sf.b @ vc, abs=1e-8)


def test_pythagoras_and_monotone_energy():
    dom = build_domain("fichera", 0.3, 0.3)
    m = dom.mesh
    u_prev = None
    energies = []
    for _ in range(3):
        u, _, s = solve(m, 1.0, tol=1e-12)
        e = h1_seminorm(u, s.A) ** 2
        if u_prev is not None:
            up = prolong(u_prev, m)
            d = h1_diff(u, up, s.A)
            assert e == pytest.approx(energies[-1] + d**2, rel=1e-6)
        energies.append(e)
        u_prev = u
        m = refine_mesh(m, dom.singular)
    assert all(np.diff(energies) > 0)


def test_prolong_matches_evaluation():
    dom = build_domain("prism", 0.3)
    c = refine(dom.mesh, dom.singular, 1)
    f = refine(c, dom.singular, 2)
    rng = np.random.default_rng(0)
    u = FEFunction(c, rng.standard_normal(c.n_points))
    up = prolong(u, f)
    sample = rng.choice(f.n_points, 200, replace=False)
    np.testing.assert_allclose(up.coefficients[sample], evaluate(u, f.points[sample]), atol=1e-12)
    assert prolong(u, c).coefficients is not None
    with pytest.raises(NotAncestor):
        prolong(up, c)


def test_harmonic_solution_converges():
    # u = e^x sin(y) is harmonic; on the uniform prism mesh the H1 error halves per level
    def exact(P):
        return np.exp(P[:, 0]) * np.sin(P[:, 1])

    dom = build_domain("prism", 0.5)
    errs = []
    for n in (2, 3):
        m = refine(dom.mesh, dom.singular, n)
        u, _, s = solve(m, 0.0, g=exact, tol=1e-12)
        # H1 error of u_h against the interpolant approximates the true error at O(h^2)
        errs.append(h1_seminorm(FEFunction(m, u.coefficients - exact(m.points)), s.A))
    assert errs[1] < errs[0] / 3.0


def test_convergence_rates():
    np.testing.assert_allclose(convergence_rates([1.0, 0.5, 0.125]), [1.0, 2.0])
    with pytest.raises(ZeroDiff):
        convergence_rates([1.0, 0.0])
    with pytest.raises(ValueError):
        convergence_rates([1.0])


def test_errors(prism):
    with pytest.raises(EmptyInterior):
        solve(prism.mesh, 1.0)
    flat = Mesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2, 3]])
    with pytest.raises(DegenerateTet):
        assemble(flat)
    m = refine_mesh(prism.mesh, prism.singular)
    with pytest.raises(MeshMismatch):
        FEFunction(m, np.zeros(3))
    a = FEFunction(m, np.zeros(m.n_points))
    with pytest.raises(MeshMismatch):
        h1_diff(a, FEFunction(prism.mesh, np.zeros(prism.mesh.n_points)))
    with pytest.raises(ValueError):
        a.coefficients[0] = 1.0


def test_scale_free_degeneracy_check():
    tiny = Mesh.from_arrays(UNIT * 1e-6, [[0, 1, 2, 3]])
    assert assemble(tiny).volumes[0] == pytest.approx(1e-18 / 6)


def test_solve_deterministic():
    dom = build_domain("prism", 0.2)
    m = refine(dom.mesh, dom.singular, 3)
    a = solve(m, 1.0)[0].coefficients
    b = solve(m, 1.0)[0].coefficients
    assert np.array_equal(a, b)
