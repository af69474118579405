import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from scipy.integrate import quad

from anisofem.domains import build_domain
from anisofem.fem import FEFunction, assemble, h1_seminorm
from anisofem.mesh import SingularSet, refine
from anisofem.weights import (
    AnalyticFunction, AtSingularity, ConfigError, GradingExponents, OutOfRange, RegionTag, UnsupportedOrder,
    a_from_kappa, angular_distance, compute_aV, decompose_domain, distance_rho, edge_frame, kappa_from_a,
    tet_rule, weighted_norm, weighted_seminorm,
)

x, y, z = sp.symbols("x y z", real=True)


# ---------------------------------------------------------------- grading algebra

def test_kappa_a_round_trip():
    for a in np.linspace(0.05, 1.0, 100):
        assert abs(a_from_kappa(kappa_from_a(a)) - a) <= 1e-14
    for k in np.linspace(0.01, 0.5, 100):
        assert abs(kappa_from_a(a_from_kappa(k)) - k) <= 1e-14
    assert kappa_from_a(1.0) == 0.5
    assert kappa_from_a(2.0, m=2) == 0.5
    with pytest.raises(OutOfRange):
        kappa_from_a(1.2)
    with pytest.raises(OutOfRange):
        a_from_kappa(0.6)


def test_quoted_exponents():
    # κ = 0.3 corresponds to a = 0.576
    assert a_from_kappa(0.3) == pytest.approx(0.576, abs=5e-4)
    # a_v = 1: a_V = 2 - a_e
    for a_e in (0.3, 0.576, 0.9):
        assert compute_aV(1.0, [a_e]) == (a_e, 2.0 - a_e)
    # equal exponents: a_V = a_v
    a = a_from_kappa(0.3)
    assert compute_aV(a, [a, a, a]) == (a, a)
    # 2 - a_e stays below 13/6 for every feasible a_e
    assert all(compute_aV(1.0, [t])[1] < 13 / 6 for t in np.linspace(0.01, 1, 50))


@given(st.floats(0.05, 1.0), st.lists(st.floats(0.05, 1.0), max_size=4), st.integers(1, 3))
def test_aV_at_least_av(a_v, a_e, m):
    a_v, a_e = a_v * m, [t * m for t in a_e]
    a_ev, a_V = compute_aV(a_v, a_e, m)
    assert a_ev == min([a_v, *a_e])
    assert a_V >= a_v - 1e-12
    if a_ev == a_v:
        assert a_V == pytest.approx(a_v, abs=1e-14)


def test_grading_exponents_from_fichera():
    dom = build_domain("fichera", 0.3, 0.4)
    g = GradingExponents.from_singular_set(dom.singular)
    assert g.a_ev(0) == pytest.approx(a_from_kappa(0.3))
    assert g.a_V(0) == pytest.approx(2 * (1 - a_from_kappa(0.3) / a_from_kappa(0.4)) + a_from_kappa(0.3))
    np.testing.assert_allclose(g.kappa, dom.singular.kappa, rtol=1e-14)


# ---------------------------------------------------------------- distances and regions

def test_distances():
    seg = np.array([[0, 0, 0], [0, 0, 1.0]])
    P = np.array([[3, 4, 0.5], [0, 0, 2], [1, 0, -1]])
    np.testing.assert_allclose(distance_rho(P, seg), [5, 1, math.sqrt(2)])
    np.testing.assert_allclose(distance_rho(P, seg[0]), [math.sqrt(25.25), 2, math.sqrt(2)])
    np.testing.assert_allclose(angular_distance([[1, 0, 1.0]], seg[0], seg), [1 / math.sqrt(2)])
    with pytest.raises(AtSingularity):
        angular_distance([[0, 0, 0.0]], seg[0], seg)
    with pytest.raises(ValueError):
        distance_rho(P, np.zeros((3, 3)))


def test_edge_frame_orthonormal():
    fr = edge_frame(np.array([1.0, 2, 3]), np.array([2.0, 0, 5]), in_plane=np.array([0.0, 0, 0]))
    R = fr.rotation
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(R[2], np.array([1, -2, 2]) / 3, atol=1e-15)


def region_oracle(p, S, r_v, r_e, aperture):
    """Tag of one point straight from the definitions."""
    dv = [np.linalg.norm(p - v) for v in S.vertices]
    de = [float(distance_rho(p[None], e)[0]) for e in S.edges]
    iv = int(np.argmin(dv)) if dv else -1
    if iv >= 0 and dv[iv] < r_v:
        ratios = [de[j] / dv[iv] for j in S.edge_of_vertex[iv]]
        if ratios and min(ratios) < aperture:
            return RegionTag.EDGE_NEAR_VERTEX
        return RegionTag.VERTEX_CORE
    if de and min(de) < r_e:
        return RegionTag.EDGE_CORE
    return RegionTag.INTERIOR


def test_region_partition():
    dom = build_domain("fichera", 0.3, 0.3)
    S = dom.singular
    dec = decompose_domain(S)
    # radii: a third of the smallest vertex separation; edges all meet, so a third of the shortest edge
    assert dec.r_v == pytest.approx(1 / 3)
    assert dec.r_e == pytest.approx(1 / 3)
    rng = np.random.default_rng(7)
    P = rng.uniform(-1, 1, (100_000, 3))
    P = P[~(P >= 0).all(axis=1)]
    tags, vid, eid = dec.tag(P)
    counts = np.bincount(tags, minlength=4)
    assert counts.sum() == len(P) and np.all(counts > 0)
    # consistency of the side information with the tag
    assert np.all((vid >= 0) == np.isin(tags, (RegionTag.VERTEX_CORE, RegionTag.EDGE_NEAR_VERTEX)))
    assert np.all((eid >= 0) == np.isin(tags, (RegionTag.EDGE_CORE, RegionTag.EDGE_NEAR_VERTEX)))
    for k in rng.choice(len(P), 2000, replace=False):
        assert tags[k] == region_oracle(P[k], S, dec.r_v, dec.r_e, dec.aperture)


def test_decomposition_errors():
    S = SingularSet([[0, 0, 0], [1, 0, 0]], np.zeros((0, 2, 3)), [0.3, 0.3])
    with pytest.raises(ConfigError):
        decompose_domain(S, r_v=2.0)
    with pytest.raises(ConfigError):
        decompose_domain(S, aperture=0.0)


# ---------------------------------------------------------------- quadrature

@pytest.mark.parametrize("order", [2, 4, 6])
def test_tet_rule_exactness(order):
    P, W = tet_rule(order)
    assert W.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(P > 0)
    lam = P[:, 1:]
    for a in range(order + 1):
        for b in range(order + 1 - a):
            for c in range(order + 1 - a - b):
                approx = (W * lam[:, 0]**a * lam[:, 1]**b * lam[:, 2]**c).sum() / 6
                exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
                assert approx == pytest.approx(exact, rel=1e-12)


# ---------------------------------------------------------------- norms

@pytest.fixture(scope="module")
def prism2():
    dom = build_domain("prism", 0.2)
    return dom, refine(dom.mesh, dom.singular, 2)


def test_unweighted_reduces_to_h1(prism2):
    dom, m = prism2
    rng = np.random.default_rng(1)
    u = FEFunction(m, rng.standard_normal(m.n_points))
    A = assemble(m).A
    plain = decompose_domain(dom.singular, r_v=0.0, r_e=0.0)
    assert weighted_seminorm(u, m, [1, 1, 1], decomposition=plain) == pytest.approx(h1_seminorm(u, A), rel=1e-12)
    # a single vertex ball covering everything with μ_v = |α| gives weight 1 as well
    S = SingularSet([[0.5, 0.5, 0.0]], np.zeros((0, 2, 3)), [0.5])
    ball = decompose_domain(S, r_v=10.0)
    assert weighted_seminorm(u, m, [1.0], decomposition=ball) == pytest.approx(h1_seminorm(u, A), rel=1e-12)


def test_second_order_analytic(prism2):
    dom, m = prism2
    u = AnalyticFunction(x**2 + y**2, max_order=2)
    plain = decompose_domain(dom.singular, r_v=0.0, r_e=0.0)
    # Σ_{|α|=2} |∂^α u|^2 = 8 over volume 3/4
    assert weighted_seminorm(u, m, [0, 0, 0], m=2, decomposition=plain) == pytest.approx(math.sqrt(6.0), rel=1e-12)
    full = weighted_norm(AnalyticFunction(x + 0 * y, max_order=1), m, [0, 0, 0], m=1, decomposition=plain)
    exact_l2 = quad(lambda t: t**2 * (1 - min(t, 1 - t)), 0, 1)[0]  # cross-section width at x = t
    assert full == pytest.approx(math.sqrt(exact_l2 + 0.75), rel=1e-10)


def test_norm_errors(prism2):
    dom, m = prism2
    u = FEFunction(m, np.zeros(m.n_points))
    dec = decompose_domain(dom.singular)
    with pytest.raises(ConfigError):
        weighted_seminorm(u, m, [1, 1, 1])
    with pytest.raises(ConfigError):
        weighted_seminorm(u, m, [1, 1], decomposition=dec)
    with pytest.raises(UnsupportedOrder):
        weighted_seminorm(u, m, [1, 1, 1], m=2, decomposition=dec)
    with pytest.raises(UnsupportedOrder):
        weighted_seminorm(object(), m, [1, 1, 1], decomposition=dec)


def test_edge_weight_rotation_invariance(prism2):
    # in the edge core only transverse derivatives carry the extra weight:
    # u = z has |∂_z u|^2 ρ_e^{-2μ}, u = x has |∂_x u|^2 ρ_e^{2-2μ}
    dom, m = prism2
    dec = decompose_domain(dom.singular, r_v=0.0, r_e=10.0)
    uz = weighted_seminorm(AnalyticFunction(z + 0 * x, max_order=1), m, [0, 0, 1.0], decomposition=dec)
    ux = weighted_seminorm(AnalyticFunction(x + 0 * z, max_order=1), m, [0, 0, 1.0], decomposition=dec)
    assert ux == pytest.approx(math.sqrt(0.75), rel=1e-12)
    assert uz > ux
