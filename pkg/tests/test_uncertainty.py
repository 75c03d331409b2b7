"""Budget sets, lifted polyhedra, moments, and the scenario sampler."""

import numpy as np
import pytest
from scipy.optimize import linprog

from helpers import budget_halfspaces, polytope_vertices_bruteforce, vertex_sets_equal

from chpdispatch.errors import (
    DimensionMismatch,
    DimensionTooLarge,
    NegativeSigma,
    NotPSD,
    UnsupportedSet,
)
from chpdispatch.stochastic import ScenarioSet
from chpdispatch.uncertainty import (
    BudgetUncertaintySet,
    LiftedPolyhedron,
    MomentModel,
    demand_price_uncertainty,
    enumerate_lifted_vertices,
    enumerate_vertices,
    gaussian_cross_moments,
    halfnormal_mean,
    linearize_budget_set,
    sample_scenarios,
)


def lifted_support(poly, w):
    """max w.x over {x : L x >= l} via LP."""
    res = linprog(c=-np.asarray(w, dtype=float), A_ub=-poly.L, b_ub=-poly.l,
                  bounds=[(None, None)] * poly.L.shape[1], method="highs")
    assert res.status == 0, res.message
    return -res.fun


def test_lifted_row_count_and_budget_row():
    for dim, gamma in [(1, 1.0), (2, 1.0), (3, 2.0), (4, 2.5)]:
        poly = linearize_budget_set(BudgetUncertaintySet(dim=dim, gamma=gamma))
        assert poly.n_rows == 6 * dim + 1
        assert poly.L.shape == (6 * dim + 1, 3 * dim)
        assert poly.l[-1] == -gamma
        # budget row sums the split parts only
        assert np.array_equal(poly.L[-1, :dim], np.zeros(dim))
        assert np.array_equal(poly.L[-1, dim:], -np.ones(2 * dim))


def test_projection_dim1_is_unit_interval():
    poly = linearize_budget_set(BudgetUncertaintySet(dim=1, gamma=1.0))
    assert lifted_support(poly, [1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert lifted_support(poly, [-1.0, 0.0, 0.0]) == pytest.approx(1.0)


def test_projection_dim2_is_diamond():
    uset = BudgetUncertaintySet(dim=2, gamma=1.0)
    verts = enumerate_vertices(uset)
    assert vertex_sets_equal(verts, [(1, 0), (-1, 0), (0, 1), (0, -1)])
    poly = linearize_budget_set(uset)
    # the diagonal direction sees the budget, not the box
    assert lifted_support(poly, [1.0, 1.0, 0, 0, 0, 0]) == pytest.approx(1.0)


def test_vertex_count_dim3_budget2():
    # all pairs of coordinates at +-1: C(3,2) * 2^2 = 12 vertices
    uset = BudgetUncertaintySet(dim=3, gamma=2.0)
    verts = enumerate_vertices(uset)
    assert verts.shape == (12, 3)
    A, b = budget_halfspaces(3, 2.0)
    oracle = polytope_vertices_bruteforce(A, b)
    assert oracle.shape[0] == 12
    assert vertex_sets_equal(verts, oracle)


def test_box_corners_when_budget_slack():
    verts = enumerate_vertices(BudgetUncertaintySet(dim=2, gamma=2.0))
    assert vertex_sets_equal(verts, [(1, 1), (1, -1), (-1, 1), (-1, -1)])


@pytest.mark.parametrize("dim,gamma", [
    (2, 0.5), (2, 1.0), (2, 1.5), (2, 2.0),
    (3, 1.0), (3, 1.5), (3, 2.0), (3, 3.0),
    (4, 2.0),
])
def test_vertices_match_bruteforce(dim, gamma):
    verts = enumerate_vertices(BudgetUncertaintySet(dim=dim, gamma=gamma))
    A, b = budget_halfspaces(dim, gamma)
    oracle = polytope_vertices_bruteforce(A, b)
    assert vertex_sets_equal(verts, oracle)


def test_fractional_budget_vertex_structure():
    # floor(gamma) coordinates at +-1 plus one carrying the remainder;
    # the pure +-1 pattern (1,0,0) sits inside an edge, not at a vertex
    verts = enumerate_vertices(BudgetUncertaintySet(dim=3, gamma=1.5))
    assert verts.shape == (24, 3)
    for v in verts:
        mags = np.sort(np.abs(v))
        assert np.allclose(mags, [0.0, 0.5, 1.0])
    assert not any(np.allclose(np.abs(v), [1, 0, 0]) for v in verts)
    A, b = budget_halfspaces(3, 1.5)
    assert vertex_sets_equal(verts, polytope_vertices_bruteforce(A, b))


def test_zero_budget_collapses_to_origin():
    uset = BudgetUncertaintySet(dim=3, gamma=0.0)
    assert np.array_equal(enumerate_vertices(uset), np.zeros((1, 3)))
    assert uset.contains(np.zeros(3))
    assert not uset.contains(np.array([0.1, 0.0, 0.0]))


def test_set_validation_and_dimension_guard():
    with pytest.raises(UnsupportedSet):
        BudgetUncertaintySet(dim=2, gamma=-0.5)
    with pytest.raises(UnsupportedSet):
        BudgetUncertaintySet(dim=2, gamma=2.5)
    with pytest.raises(UnsupportedSet):
        BudgetUncertaintySet(dim=2, gamma=1.0, radius=[-1.0, 1.0])
    with pytest.raises(DimensionTooLarge):
        enumerate_vertices(BudgetUncertaintySet(dim=13, gamma=2.0))
    with pytest.raises(DimensionTooLarge):
        enumerate_lifted_vertices(BudgetUncertaintySet(dim=13, gamma=2.0))


def test_lift_point_membership():
    rng = np.random.default_rng(11)
    uset = BudgetUncertaintySet(dim=4, gamma=2.0)
    poly = linearize_budget_set(uset)
    for _ in range(50):
        delta = rng.uniform(-1.0, 1.0, size=4)
        norm = np.abs(delta).sum()
        if norm > uset.gamma:
            delta *= uset.gamma / norm
        assert uset.contains(delta)
        assert poly.contains(LiftedPolyhedron.lift_point(delta))
    outside = np.array([1.5, 0.0, 0.0, 0.0])
    assert not uset.contains(outside)
    assert not poly.contains(LiftedPolyhedron.lift_point(outside))
    over_budget = np.array([1.0, 1.0, 1.0, 0.0])
    assert not poly.contains(LiftedPolyhedron.lift_point(over_budget))


@pytest.mark.parametrize("dim,gamma", [(3, 2.0), (4, 3.0), (5, 2.0)])
def test_lifted_support_attained_on_canonical_lifts(dim, gamma):
    # linear functionals over the lifted polyhedron peak at canonical lifts
    # of sign patterns with at most gamma active coordinates
    uset = BudgetUncertaintySet(dim=dim, gamma=gamma)
    poly = linearize_budget_set(uset)
    verts = enumerate_lifted_vertices(uset)
    rng = np.random.default_rng(17)
    directions = list(rng.standard_normal((100, 3 * dim)))
    directions.append(np.ones(3 * dim))  # pushes both split parts up at once
    for w in directions:
        lp_val = lifted_support(poly, w)
        vert_val = (verts @ w).max()
        assert lp_val == pytest.approx(vert_val, abs=1e-8)


@pytest.mark.parametrize("dim,gamma", [(3, 2.0), (3, 1.5), (2, 0.5)])
def test_lifted_projection_matches_delta_vertices(dim, gamma):
    uset = BudgetUncertaintySet(dim=dim, gamma=gamma)
    poly = linearize_budget_set(uset)
    verts = enumerate_vertices(uset)
    rng = np.random.default_rng(23)
    for wd in rng.standard_normal((60, dim)):
        w = np.concatenate([wd, np.zeros(2 * dim)])
        assert lifted_support(poly, w) == pytest.approx((verts @ wd).max(), abs=1e-8)


@pytest.mark.parametrize("gamma", [1.0, 2.0])
def test_lifted_vertices_are_exactly_polyhedron_vertices(gamma):
    uset = BudgetUncertaintySet(dim=2, gamma=gamma)
    poly = linearize_budget_set(uset)
    canonical = enumerate_lifted_vertices(uset)
    oracle = polytope_vertices_bruteforce(poly.L, poly.l)
    assert vertex_sets_equal(canonical, oracle)


def test_lifted_vertex_counts():
    # sum over k <= gamma of C(2 dim, k) split-part patterns
    assert enumerate_lifted_vertices(BudgetUncertaintySet(3, 2.0)).shape == (22, 9)
    assert enumerate_lifted_vertices(BudgetUncertaintySet(4, 3.0)).shape == (93, 12)
    with pytest.raises(UnsupportedSet):
        enumerate_lifted_vertices(BudgetUncertaintySet(3, 1.5))


def test_lifted_vertices_feasible_and_beyond_canonical():
    uset = BudgetUncertaintySet(dim=2, gamma=2.0)
    poly = linearize_budget_set(uset)
    verts = enumerate_lifted_vertices(uset)
    for v in verts:
        assert poly.contains(v)
    # both split parts of one coordinate saturated: cancels in delta but
    # consumes the whole budget, so it is a vertex of the lifted set
    noncanonical = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    assert any(np.allclose(v, noncanonical) for v in verts)


def test_halfnormal_mean_values():
    assert halfnormal_mean(0.0) == 0.0
    assert halfnormal_mean(1.0) == pytest.approx(0.3989422804014327, abs=1e-15)
    assert halfnormal_mean(2.0) == pytest.approx(2 * halfnormal_mean(1.0), abs=1e-15)
    with pytest.raises(NegativeSigma):
        halfnormal_mean(-0.1)


def test_halfnormal_mean_monte_carlo():
    rng = np.random.default_rng(2026)
    draws = rng.normal(0.0, 2.0, size=1_000_000)
    estimate = np.maximum(draws, 0.0).mean()
    assert abs(estimate - halfnormal_mean(2.0)) / halfnormal_mean(2.0) < 0.005


def test_cross_moments_closed_form():
    plus, minus = gaussian_cross_moments(np.eye(2))
    assert np.allclose(plus, np.diag([0.5, 0.5]))
    assert np.allclose(minus, np.diag([-0.5, -0.5]))
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    plus, minus = gaussian_cross_moments(cov)
    assert plus[0, 1] == pytest.approx(0.15)
    # diagonal covariance leaves no off-diagonal cross moments
    plus_d, _ = gaussian_cross_moments(np.diag([2.0, 3.0]))
    assert plus_d[0, 1] == 0.0 and plus_d[1, 0] == 0.0
    # split parts reassemble the covariance exactly
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 4))
    cov = A @ A.T
    plus, minus = gaussian_cross_moments(cov)
    assert np.abs(plus - minus - cov).max() < 1e-12


def test_cross_moments_monte_carlo():
    cov = np.array([[1.0, 0.3], [0.3, 1.0]])
    L = np.linalg.cholesky(cov)
    rng = np.random.default_rng(77)
    Z = rng.standard_normal((1_000_000, 2)) @ L.T
    plus_mc = np.maximum(Z, 0.0).T @ Z / Z.shape[0]
    minus_mc = np.maximum(-Z, 0.0).T @ Z / Z.shape[0]
    plus, minus = gaussian_cross_moments(cov)
    assert np.abs(plus_mc - plus).max() < 0.01
    assert np.abs(minus_mc - minus).max() < 0.01


def test_cross_moments_guards():
    with pytest.raises(DimensionMismatch):
        gaussian_cross_moments(np.ones((2, 3)))
    with pytest.raises(NotPSD):
        gaussian_cross_moments(np.array([[1.0, 0.5], [0.2, 1.0]]))
    with pytest.raises(NotPSD):
        gaussian_cross_moments(np.array([[1.0, 2.0], [2.0, 1.0]]))


def good_moment_model(T=3):
    price = np.linspace(50.0, 60.0, T)
    cov = np.eye(T) * 0.25
    plus, minus = gaussian_cross_moments(cov)
    return MomentModel(
        mean_delta=np.zeros(T), cov_delta=cov,
        mean_plus=np.full(T, halfnormal_mean(0.5)),
        mean_minus=np.full(T, halfnormal_mean(0.5)),
        cross_plus=plus, cross_minus=minus,
        price_mean=price, price_std=0.33 * price, price_corr=0.3)


def test_moment_model_validation():
    mm = good_moment_model()
    mm.validate()
    bad = good_moment_model()
    bad.mean_plus = bad.mean_plus.copy()
    bad.mean_plus[0] = -0.1
    with pytest.raises(ValueError):
        bad.validate()
    bad = good_moment_model()
    bad.mean_minus = bad.mean_minus * 2.0
    with pytest.raises(ValueError):
        bad.validate()
    bad = good_moment_model()
    bad.cross_plus = bad.cross_plus + 0.1
    with pytest.raises(ValueError):
        bad.validate()
    bad = good_moment_model()
    bad.cov_delta = np.array([[1.0, 2.0, 0], [2.0, 1.0, 0], [0, 0, 1.0]])
    with pytest.raises(NotPSD):
        bad.validate()


def test_demand_price_uncertainty_fields():
    price = np.array([50.0, 60.0, 40.0, 55.0])
    demand = np.array([800.0, 900.0, 850.0, 820.0])
    um = demand_price_uncertainty(price, demand, gamma=2.0, radius_mult=3.2)
    assert not um.degenerate
    assert np.allclose(um.uset.radius, 3.2 * 0.07 * demand)
    assert np.allclose(um.moments.cov_delta, np.eye(4) / 3.2 ** 2)
    assert np.allclose(um.moments.mean_plus, halfnormal_mean(1 / 3.2))
    assert np.allclose(um.moments.price_std, 0.33 * price)
    assert np.allclose(um.price_loading, 0.3 * 0.33 * price * 3.2)
    assert np.array_equal(um.moments.price_mean, price)
    um.moments.validate()


def test_demand_price_uncertainty_degenerate():
    price = np.array([50.0, 60.0])
    demand = np.array([800.0, 900.0])
    for kwargs in [dict(gamma=0.0, radius_mult=3.2),
                   dict(gamma=2.0, radius_mult=0.0)]:
        um = demand_price_uncertainty(price, demand, **kwargs)
        assert um.degenerate
        assert np.all(um.uset.radius == 0.0)
        assert np.all(um.moments.cov_delta == 0.0)
        assert np.all(um.price_loading == 0.0)
        um.moments.validate()
    um = demand_price_uncertainty(price, np.zeros(2), gamma=2.0, radius_mult=3.2)
    assert um.degenerate


def test_sample_scenarios_determinism_and_chunking():
    price = np.full(4, 50.0)
    demand = np.full(4, 800.0)
    um = demand_price_uncertainty(price, demand, gamma=4.0, radius_mult=1.0)
    a = sample_scenarios(um.moments, um.uset, 10, seed=7)
    b = sample_scenarios(um.moments, um.uset, 10, seed=7)
    assert np.array_equal(a.paths, b.paths)
    assert np.allclose(a.probs, 0.1)
    # substreams are keyed by scenario index, so prefixes agree
    c = sample_scenarios(um.moments, um.uset, 3, seed=7)
    assert np.array_equal(c.paths, a.paths[:3])
    d = sample_scenarios(um.moments, um.uset, 10, seed=8)
    assert not np.array_equal(d.paths, a.paths)


def test_sample_scenarios_moments():
    T = 2
    price = np.array([50.0, 60.0])
    demand = np.array([1000.0, 1000.0])
    um = demand_price_uncertainty(price, demand, gamma=2.0, radius_mult=2.0)
    sset = sample_scenarios(um.moments, um.uset, 20000, seed=99)
    # physical demand deviation std is rmse * demand regardless of the radius
    assert np.allclose(sset.demand_dev.std(axis=0), 70.0, rtol=0.02)
    assert np.allclose(sset.price_dev.std(axis=0), 0.33 * price, rtol=0.02)
    for t in range(T):
        corr = np.corrcoef(sset.demand_dev[:, t], sset.price_dev[:, t])[0, 1]
        assert corr == pytest.approx(0.3, abs=0.03)
    # different periods are independent
    cross = np.corrcoef(sset.demand_dev[:, 0], sset.demand_dev[:, 1])[0, 1]
    assert abs(cross) < 0.03


def test_sample_scenarios_zero_variance_gives_nominal():
    price = np.array([50.0, 60.0])
    demand = np.array([800.0, 900.0])
    um = demand_price_uncertainty(price, demand, gamma=2.0, radius_mult=3.2,
                                  demand_rmse=0.0, price_rmse=0.0)
    sset = sample_scenarios(um.moments, um.uset, 1, seed=3)
    assert np.all(sset.paths == 0.0)


def test_sample_scenarios_price_noise_survives_degenerate_demand():
    price = np.array([50.0, 60.0])
    demand = np.array([800.0, 900.0])
    um = demand_price_uncertainty(price, demand, gamma=2.0, radius_mult=3.2,
                                  demand_rmse=0.0)
    sset = sample_scenarios(um.moments, um.uset, 5000, seed=5)
    assert np.all(sset.demand_dev == 0.0)
    assert np.allclose(sset.price_dev.std(axis=0), 0.33 * price, rtol=0.05)


def test_scenario_set_guards():
    with pytest.raises(DimensionMismatch):
        ScenarioSet(paths=np.zeros((3, 4)), probs=np.full(3, 1 / 3))
    with pytest.raises(DimensionMismatch):
        ScenarioSet(paths=np.zeros((3, 4, 2)), probs=np.full(2, 0.5))
    with pytest.raises(ValueError):
        ScenarioSet(paths=np.zeros((2, 4, 2)), probs=np.array([0.7, 0.7]))
