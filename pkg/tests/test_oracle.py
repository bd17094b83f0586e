import csv
import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from gibbs_tv import truncnorm
from gibbs_tv.bounds import coupon_collector_M, normal_tv
from gibbs_tv.graph import build_custom_graph, build_grid_graph
from gibbs_tv.model import FullConditional, ModelParams
from gibbs_tv.oracle import (
    build_discretized_chain,
    coupon_collector_tail,
    discretized_chain_exact_tv,
    numeric_tv_normal,
    numeric_tv_params,
    numeric_tv_truncated,
    simulate_coupon_collector,
    truncated_mean,
    two_site_cell_probabilities,
    write_tv_series_csv,
)

# exact rational evaluation, frozen
COUPON = {
    (4, 18): 0.022527952329255640,
    (4, 27): 0.0016931780773878913,
    (16, 93): 0.039094615420208,
    (16, 130): 0.00363054016703007,
    (64, 458): 0.0462119167172972,
    (64, 606): 0.00457769913766328,
}


def test_tv_identical():
    fc = FullConditional(0, 0.3, 0.2)
    assert numeric_tv_truncated(fc, fc) < 1e-12


def test_tv_grid_convergence():
    for m1, v1, m2, v2 in [(0.4, 1 / 3, 0.6, 1 / 3), (0.1, 0.05, 0.8, 0.2), (-1.0, 0.3, 2.0, 0.3)]:
        a = numeric_tv_params(m1, v1, m2, v2, 2**14 + 1)
        b = numeric_tv_params(m1, v1, m2, v2, 2**15 + 1)
        assert abs(a - b) < 1e-9


def test_tv_against_monte_carlo():
    m1, m2, v = 0.4, 0.6, 1 / 3
    gen = np.random.default_rng(2)
    x = truncnorm.quantile(m1, v, gen.uniform(size=400_000))
    ratio = truncnorm.pdf(x, m2, v) / truncnorm.pdf(x, m1, v)
    mc = np.mean(np.maximum(0, 1 - ratio))
    assert numeric_tv_params(m1, v, m2, v) == pytest.approx(mc, abs=4 * np.std(np.maximum(0, 1 - ratio)) / 632)


def test_tv_wide_variance_tends_to_uniform_limit():
    # nearly flat densities on [0, 1] have tiny TV
    assert numeric_tv_params(0.4, 1e4, 0.6, 1e4) < 1e-4


def test_normal_quadrature_matches_formula():
    for d in (0.01, 0.2, 1.0, 3.0):
        assert numeric_tv_normal(0, d, 0.7) == pytest.approx(normal_tv(0, d, 0.7)[0], abs=1e-9)
    with pytest.raises(ValueError):
        numeric_tv_params(0, 1, 1, 1, grid_points=999)


def test_truncated_mean_formula():
    for m, v in [(0.3, 0.2), (-1.0, 0.5), (2.0, 1.0)]:
        x = np.linspace(0, 1, 200_001)
        num = trapezoid(x * truncnorm.pdf(x, m, v), x)
        assert truncated_mean(m, v) == pytest.approx(num, abs=1e-8)


@pytest.mark.parametrize("NM", sorted(COUPON))
def test_coupon_tail_frozen(NM):
    N, M = NM
    assert coupon_collector_tail(N, M) == pytest.approx(COUPON[NM], rel=1e-12)


def test_coupon_tail_examples():
    assert coupon_collector_tail(1, 1) == 0
    assert coupon_collector_tail(1, 0) == 1
    assert coupon_collector_tail(5, 0) == 1
    assert coupon_collector_tail(5, 4) == 1
    assert coupon_collector_tail(4, coupon_collector_M(4, 0.1)) <= 0.05
    with pytest.raises(ValueError):
        coupon_collector_tail(0, 3)


def test_coupon_tail_logspace_path():
    # large N * M switches to floating point; compare with the exact sum
    N, M = 400, 4000
    exact = coupon_collector_tail(N, M)
    from gibbs_tv.oracle import _coupon_tail_logspace

    assert _coupon_tail_logspace(N, M) == pytest.approx(exact, rel=1e-9)
    assert _coupon_tail_logspace(64, 458) == pytest.approx(COUPON[(64, 458)], rel=1e-9)


@pytest.mark.parametrize("N", [2, 5, 16, 40])
def test_coupon_tail_standard_bound(N):
    for M in range(math.ceil(N * math.log(N)), 8 * N, max(1, N // 3)):
        assert coupon_collector_tail(N, M) <= math.exp(-(M - N * math.log(N)) / N) + 1e-15


def test_coupon_simulation():
    p = simulate_coupon_collector(4, 18, 200_000, np.random.default_rng(1))
    assert abs(p - COUPON[(4, 18)]) < 4 * math.sqrt(COUPON[(4, 18)] / 200_000)


@pytest.fixture(scope="module")
def two_site():
    return ModelParams(1.0, 1.0, [0.5, 0.5]), build_custom_graph([(0, 1)], 2)


def test_discretized_chain_invariants(two_site):
    p, g = two_site
    chain = build_discretized_chain(p, g, 17)
    rows = np.asarray(chain.transition.sum(axis=1)).ravel()
    assert np.max(np.abs(rows - 1)) <= 1e-12
    pi = chain.stationary
    assert np.max(np.abs(chain.step(pi) - pi)) <= 1e-10
    assert pi.sum() == pytest.approx(1)


def test_discretized_chain_limits():
    with pytest.raises(ValueError):
        build_discretized_chain(ModelParams(1, 1, [0.5] * 4), build_grid_graph(2, 2), 5)
    with pytest.raises(ValueError):
        build_discretized_chain(ModelParams(1, 1, [0.5] * 3), build_grid_graph(3, 1), 50)


def test_discretized_tv_series(two_site):
    p, g = two_site
    same = discretized_chain_exact_tv(p, g, 17, [0.2, 0.2], [0.2, 0.2], 10)
    assert np.all(same == 0)
    tv = discretized_chain_exact_tv(p, g, 17, [0, 0], [1, 1], 40)
    assert tv[0] == 1
    assert np.all(np.diff(tv) <= 1e-12)
    assert tv[-1] < 0.1


def test_discretized_stationary_near_posterior(two_site):
    # coarse agreement only: the discretised chain is an approximation
    p, g = two_site
    chain = build_discretized_chain(p, g, 20)
    pi = chain.stationary.reshape(20, 20)
    coarse = pi.reshape(4, 5, 4, 5).sum(axis=(1, 3))
    np.testing.assert_allclose(coarse, two_site_cell_probabilities(p, 4), atol=0.01)


def test_cell_probabilities_decoupled():
    p = ModelParams(0.0, 0.5, [0.3, 0.8])
    probs = two_site_cell_probabilities(p, 4)
    edges = np.linspace(0, 1, 5)
    a = np.diff(truncnorm.cdf(edges, 0.3, 0.25))
    b = np.diff(truncnorm.cdf(edges, 0.8, 0.25))
    np.testing.assert_allclose(probs, np.outer(a, b), atol=1e-10)


def test_tv_csv(tmp_path):
    write_tv_series_csv([1.0, 0.5], tmp_path / "tv.csv")
    assert list(csv.reader(open(tmp_path / "tv.csv"))) == [["t", "tv"], ["0", "1.0"], ["1", "0.5"]]
