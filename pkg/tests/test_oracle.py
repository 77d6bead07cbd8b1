import numpy as np
import pytest

from gossipbayes import expfam, oracle
from gossipbayes.exceptions import NonFinite

PRIOR = expfam.from_shape(2.0, 2.0)


@pytest.fixture(scope="module")
def exponential_data():
    rng = np.random.default_rng(0)
    return [rng.exponential(0.5, 100) for _ in range(10)]


def test_exact_conjugate_counts():
    data = [np.r_[np.ones(25), np.zeros(25)], np.r_[np.ones(15), np.zeros(35)]]
    np.testing.assert_array_equal(oracle.exact_conjugate_posterior(PRIOR, data), expfam.from_shape(42, 62))


def test_exact_conjugate_empty_and_exclude():
    np.testing.assert_array_equal(oracle.exact_conjugate_posterior(PRIOR, []), PRIOR)
    data = [np.array([1.0, 1.0]), np.array([0.0])]
    np.testing.assert_array_equal(oracle.exact_conjugate_posterior(PRIOR, data, exclude=0), [1.0, 2.0])
    np.testing.assert_array_equal(oracle.exact_conjugate_posterior(PRIOR, data, exclude=1), [3.0, 1.0])


def test_grid_without_data_is_prior():
    density = oracle.grid_generalized_posterior(PRIOR, [], M=10_001)
    assert oracle.kl_variational_to_oracle(PRIOR, density) < 1e-6
    np.testing.assert_allclose(density.log_density, expfam.log_pdf(PRIOR, density.grid), atol=1e-6)


def test_grid_matches_conjugate_posterior():
    rng = np.random.default_rng(1)
    data = [(rng.random(100) < 0.7).astype(float) for _ in range(10)]
    density = oracle.grid_generalized_posterior(PRIOR, data, 1.0, "bernoulli", M=10_001)
    exact = oracle.exact_conjugate_posterior(PRIOR, data)
    assert oracle.kl_variational_to_oracle(exact, density) < 1e-6


def test_grid_tempered_matches_conjugate():
    data = [np.r_[np.ones(12), np.zeros(5)]]
    density = oracle.grid_generalized_posterior(PRIOR, data, 2.5, "bernoulli")
    exact = oracle.exact_conjugate_posterior(PRIOR, data, alpha=2.5)
    assert oracle.kl_variational_to_oracle(exact, density) < 1e-6


def test_grid_normalizes(exponential_data):
    one_point = oracle.grid_generalized_posterior(PRIOR, [np.array([1.0])], 1.0, "exponential")
    assert abs(one_point.integral() - 1.0) < 1e-8
    full = oracle.grid_generalized_posterior(PRIOR, exponential_data, 1.0, "exponential")
    assert abs(full.integral() - 1.0) < 1e-8
    assert full.M == oracle.DEFAULT_GRID_POINTS


def test_exclude_is_bitwise_equal_to_removal(exponential_data):
    with_exclude = oracle.grid_generalized_posterior(PRIOR, exponential_data, 1.0, "exponential", exclude=3)
    removed = [d for k, d in enumerate(exponential_data) if k != 3]
    direct = oracle.grid_generalized_posterior(PRIOR, removed, 1.0, "exponential")
    assert np.array_equal(with_exclude.log_density, direct.log_density)


@pytest.mark.parametrize("p, q", [((2.0, 2.0), (3.0, 5.0)), ((40.0, 12.0), (35.0, 14.0)), ((2.5, 9.0), (4.0, 4.0))])
def test_quadrature_matches_closed_form(p, q):
    p, q = expfam.from_shape(*p), expfam.from_shape(*q)
    grid = oracle.midpoint_grid(10_001)
    reference = oracle.GridDensity(grid, expfam.log_pdf(q, grid), 0.0)
    assert abs(oracle.kl_variational_to_oracle(p, reference) - expfam.kl(p, q)) < 1e-6


def test_closed_form_branch():
    assert oracle.kl_variational_to_oracle(PRIOR, PRIOR) == 0.0
    assert oracle.kl_variational_to_oracle(PRIOR, expfam.from_shape(3, 1)) == expfam.kl(PRIOR, expfam.from_shape(3, 1))


def test_grid_kl_non_negative(exponential_data):
    density = oracle.grid_generalized_posterior(PRIOR, exponential_data, 1.0, "exponential")
    for shape in [(1.0, 1.0), (500.0, 500.0), (0.3, 2.0), (2000.0, 10.0)]:
        assert oracle.kl_variational_to_oracle(expfam.from_shape(*shape), density) >= 0.0


def test_doubling_grid_is_stable(exponential_data):
    coarse = oracle.grid_generalized_posterior(PRIOR, exponential_data, 1.0, "exponential", M=10_001)
    fine = oracle.grid_generalized_posterior(PRIOR, exponential_data, 1.0, "exponential", M=20_002)
    for shape in [(300.0, 300.0), (150.0, 160.0), (520.0, 480.0)]:
        q = expfam.from_shape(*shape)
        assert abs(oracle.kl_variational_to_oracle(q, coarse) - oracle.kl_variational_to_oracle(q, fine)) < 1e-6


def test_validation():
    with pytest.raises(ValueError):
        oracle.grid_generalized_posterior(PRIOR, [], M=500)

    class Broken(expfam.LikelihoodModel):
        def total_loss(self, data, theta, scale=1.0):
            return np.full(np.shape(theta), np.inf)

    with pytest.raises(NonFinite):
        oracle.grid_generalized_posterior(PRIOR, [np.ones(3)], likelihood=Broken())
