import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthodl._rng import child_rng
from orthodl.geometry import hausdorff_estimate
from orthodl.model import sample_bg
from orthodl.objective import (
    SCALE,
    NotUnitError,
    SubdifferentialSet,
    SupportDistribution,
    c_theta_k,
    objective_value,
    population_base_batch,
    population_objective,
    population_objective_mc,
    population_subdifferential,
    riemannian_subgradient,
    subgradient,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def rand_unit(rng, n):
    return unit(rng.standard_normal(n))


def brute_population_objective(q, theta):
    # independent oracle: loop over every support explicitly
    n = len(q)
    total = 0.0
    for bits in itertools.product([0, 1], repeat=n):
        k = sum(bits)
        w = theta ** k * (1 - theta) ** (n - k)
        total += w * math.sqrt(sum(b * x * x for b, x in zip(bits, q)))
    return total


def brute_population_base(q, theta):
    n = len(q)
    g = np.zeros(n)
    for bits in itertools.product([0, 1], repeat=n):
        k = sum(bits)
        w = theta ** k * (1 - theta) ** (n - k)
        qo = np.array(bits) * q
        nrm = np.linalg.norm(qo)
        if nrm > 0:
            g += w * qo / nrm
    return g


# --- empirical objective -----------------------------------------------------


def test_value_single_sample():
    assert objective_value([1.0, 0.0], [[1.0], [0.0]]) == pytest.approx(SCALE, abs=1e-15)


def test_value_orthogonal_samples():
    Y = np.array([[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]])
    assert objective_value([1.0, 0.0, 0.0], Y) == 0.0


def test_value_matches_naive_loop():
    rng = child_rng(1)
    Y = rng.standard_normal((3, 5))
    q = rand_unit(rng, 3)
    naive = 0.0
    for i in range(5):
        s = 0.0
        for j in range(3):
            s += q[j] * Y[j, i]
        naive += abs(s)
    naive *= math.sqrt(math.pi / 2) / 5
    assert abs(objective_value(q, Y) - naive) < 1e-14


def test_value_requires_unit():
    with pytest.raises(NotUnitError):
        objective_value([1.0, 1.0], np.eye(2))
    # the unconstrained form is allowed on request
    assert objective_value([1.0, 1.0], np.eye(2), unit_tol=None) > 0


def test_subgradient_examples():
    S = subgradient([1.0, 0.0], [[1.0], [0.0]])
    np.testing.assert_allclose(S.base, [SCALE, 0.0])
    assert S.is_singleton
    S = subgradient([1.0, 0.0], [[0.0], [1.0]])
    np.testing.assert_allclose(S.base, [0.0, 0.0])
    np.testing.assert_allclose(S.generators, [[0.0, SCALE]])


def test_subgradient_singleton_formula():
    rng = child_rng(2)
    Y = rng.standard_normal((4, 30))
    q = rand_unit(rng, 4)
    S = subgradient(q, Y)
    assert S.is_singleton
    expect = SCALE / 30 * sum(np.sign(q @ Y[:, i]) * Y[:, i] for i in range(30))
    np.testing.assert_allclose(S.base, expect, atol=1e-14)


def test_riemannian_subgradient_examples():
    np.testing.assert_allclose(riemannian_subgradient([1.0, 0.0], [[1.0], [0.0]]), 0.0)
    rng = child_rng(3)
    for _ in range(10):
        Y = rng.standard_normal((5, 40))
        q = rand_unit(rng, 5)
        assert abs(riemannian_subgradient(q, Y) @ q) < 1e-10


def test_riemannian_subgradient_finite_differences():
    rng = child_rng(4)
    Y = rng.standard_normal((3, 50))
    q = rand_unit(rng, 3)
    v = riemannian_subgradient(q, Y)
    h = 1e-6
    for _ in range(6):
        d = rng.standard_normal(3)
        d -= (d @ q) * q
        d /= np.linalg.norm(d)
        fp = objective_value(unit(q + h * d), Y)
        fm = objective_value(unit(q - h * d), Y)
        assert abs((fp - fm) / (2 * h) - v @ d) < 1e-5


def vertex_support(S, u):
    # brute force over all vertices of the zonotope base + sum_g [-1, 1] g
    best = -np.inf
    for signs in itertools.product([-1.0, 1.0], repeat=S.generators.shape[0]):
        x = S.base + np.asarray(signs) @ S.generators
        best = max(best, x @ u)
    return best


def test_support_function_matches_vertices():
    rng = child_rng(5)
    gens = rng.standard_normal((4, 3))
    S = SubdifferentialSet(rng.standard_normal(3), gens)
    for _ in range(20):
        u = rng.standard_normal(3)
        assert abs(S.support(u) - vertex_support(S, u)) < 1e-12
        assert abs(S.inf_inner(u) + vertex_support(S, -u)) < 1e-12


def test_projected_support_function():
    rng = child_rng(6)
    q = rand_unit(rng, 3)
    S = SubdifferentialSet(rng.standard_normal(3), rng.standard_normal((2, 3)))
    PS = S.project(q)
    P = np.eye(3) - np.outer(q, q)
    img = SubdifferentialSet(P @ S.base, S.generators @ P)
    for _ in range(10):
        u = rng.standard_normal(3)
        assert abs(PS.support(u) - img.support(u)) < 1e-12


def test_singleton_inf_is_inner_product():
    g = np.array([0.3, -1.0, 2.0])
    S = SubdifferentialSet(g)
    u = np.array([1.0, 2.0, -0.5])
    assert S.inf_inner(u) == pytest.approx(g @ u)
    assert S.radius() == pytest.approx(np.linalg.norm(g))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.01, 100))
def test_support_convex_and_homogeneous(seed, t):
    rng = child_rng(seed)
    S = SubdifferentialSet(rng.standard_normal(4), rng.standard_normal((3, 4)),
                           ball_weights=rng.random(2), ball_masks=rng.random((2, 4)) < 0.5)
    u, v = rng.standard_normal(4), rng.standard_normal(4)
    assert S.support(t * u) == pytest.approx(t * S.support(u), rel=1e-10, abs=1e-10)
    assert S.support(u + v) <= S.support(u) + S.support(v) + 1e-10
    assert S.inf_inner(u) <= S.support(u) + 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_objective_is_lipschitz_on_sphere(seed):
    # |f(p) - f(q)| <= (sqrt(pi/2)/m) sum ||y_i|| ||p - q||
    rng = child_rng(seed)
    Y = sample_bg(6, 50, 0.3, rng=rng)
    p, q = rand_unit(rng, 6), rand_unit(rng, 6)
    L = SCALE * np.linalg.norm(Y, axis=0).mean()
    assert abs(objective_value(p, Y) - objective_value(q, Y)) <= L * np.linalg.norm(p - q) + 1e-12


# --- population --------------------------------------------------------------


def test_population_at_basis_vector():
    for theta in (0.1, 0.3, 0.5):
        assert population_objective(np.eye(5)[0], SupportDistribution(5, theta)) == pytest.approx(theta)


def test_population_two_coordinates():
    theta = 0.3
    q = unit([1.0, 1.0, 0.0, 0.0])
    expect = theta ** 2 + math.sqrt(2) * theta * (1 - theta)
    assert population_objective(q, SupportDistribution(4, theta)) == pytest.approx(expect, abs=1e-14)


def test_population_matches_brute_force():
    rng = child_rng(7)
    dist = SupportDistribution(6, 0.35)
    for _ in range(5):
        q = rand_unit(rng, 6)
        assert population_objective(q, dist) == pytest.approx(brute_population_objective(q, 0.35), abs=1e-13)
        np.testing.assert_allclose(population_base_batch(q, dist)[0], brute_population_base(q, 0.35),
                                   atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), theta=st.floats(0.05, 0.5))
def test_population_at_least_theta(seed, theta):
    q = rand_unit(child_rng(seed), 5)
    assert population_objective(q, SupportDistribution(5, theta)) >= theta - 1e-12


def test_c_theta_two():
    theta = 0.3
    q = unit([1.0, 1.0])
    S = population_subdifferential(q, SupportDistribution(2, theta))
    c2 = theta ** 2 + math.sqrt(2) * theta * (1 - theta)
    assert c_theta_k(theta, 2) == pytest.approx(c2, abs=1e-15)
    np.testing.assert_allclose(S.base, c2 * q, atol=1e-14)


def test_c_theta_k_matches_enumeration():
    theta = 0.27
    n = 7
    dist = SupportDistribution(n, theta)
    for k in range(1, n + 1):
        s = np.zeros(n)
        s[:k] = [1, -1] * (k // 2) + [1] * (k % 2)
        q = s / math.sqrt(k)
        np.testing.assert_allclose(population_base_batch(q, dist)[0], c_theta_k(theta, k) * q, atol=1e-13)


def test_population_subdifferential_at_minimizer():
    dist = SupportDistribution(5, 0.3)
    e = np.eye(5)[4]
    S = population_subdifferential(e, dist)
    assert np.linalg.norm(S.project(e).selection()) < 1e-15
    # balls live only on the zero coordinates
    assert not S.ball_masks[:, 4].any()


def test_population_base_matches_monte_carlo():
    theta, n = 0.3, 6
    q = rand_unit(child_rng(8), n)
    dist = SupportDistribution(n, theta)
    base = population_subdifferential(q, dist).base
    N = 10**6
    X = sample_bg(n, N, theta, rng=child_rng(9))
    vals = SCALE * np.sign(q @ X) * X
    mean, se = vals.mean(axis=1), vals.std(axis=1) / math.sqrt(N)
    assert np.all(np.abs(mean - base) <= 3 * se)


def test_empirical_subdifferential_approaches_population_at_sparse_point():
    # at q = e_1 the population set has balls; a large sample fills them in
    theta, n = 0.3, 4
    q = np.eye(n)[0]
    X = sample_bg(n, 20000, theta, rng=child_rng(10))
    emp = subgradient(q, X)
    pop = population_subdifferential(q, SupportDistribution(n, theta))
    assert not pop.is_singleton
    assert hausdorff_estimate(emp, pop, 2000, seed=1) < 0.05


def test_population_mc():
    est, se = population_objective_mc(np.eye(4)[0], 0.5, 10**6, seed=1)
    assert abs(est - 0.5) <= 3 * se
    _, se_small = population_objective_mc(np.eye(4)[0], 0.5, 10**4, seed=2)
    assert 8.0 <= se_small / se <= 12.0


def test_population_mc_matches_enumeration():
    rng = child_rng(11)
    dist = SupportDistribution(8, 0.25)
    for r in range(20):
        q = rand_unit(rng, 8)
        est, se = population_objective_mc(q, 0.25, 100_000, seed=r)
        assert abs(est - population_objective(q, dist)) <= 4 * se


def test_enumeration_cap():
    with pytest.raises(ValueError):
        SupportDistribution(23, 0.1)
    assert SupportDistribution(3, 0.2).total_weight() == pytest.approx(1.0)
