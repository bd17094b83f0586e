import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbs_tv.coupling import CoupledPair
from gibbs_tv.graph import build_custom_graph, build_grid_graph
from gibbs_tv.metrics import (
    CSV_HEADER,
    fit_decay_rate,
    metric_conversion_bounds,
    summarize_arrays,
    summarize_pairs,
    taxicab,
    weighted_l1,
    write_summary_csv,
)
from gibbs_tv.sampler import ChainState

G = build_grid_graph(3, 3, "N8")
vec = st.lists(st.floats(0, 1), min_size=9, max_size=9).map(np.array)


def test_examples():
    g = build_grid_graph(2, 2)
    assert weighted_l1(np.ones(4), np.zeros(4), g) == 8
    assert taxicab(np.ones(4), np.zeros(4)) == 4
    assert weighted_l1(np.full(4, 0.3), np.full(4, 0.3), g) == 0
    with pytest.raises(ValueError):
        weighted_l1(np.ones(4), np.ones(3), g)


def test_isolated_site_is_invisible():
    g = build_custom_graph([(0, 1)], 3)
    assert weighted_l1([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], g) == 0


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec)
def test_metric_axioms(x, y, z):
    assert weighted_l1(x, y, G) == pytest.approx(weighted_l1(y, x, G))
    assert weighted_l1(x, z, G) <= weighted_l1(x, y, G) + weighted_l1(y, z, G) + 1e-12
    assert taxicab(x, z) <= taxicab(x, y) + taxicab(y, z) + 1e-12
    d, dh = weighted_l1(x, y, G), taxicab(x, y)
    assert G.n_min * dh - 1e-12 <= d <= G.n_max * dh + 1e-12


def _pair(x, z):
    return CoupledPair(ChainState(x), ChainState(z))


def test_summaries():
    g = build_grid_graph(2, 2)
    s = summarize_pairs([_pair(np.ones(4), np.zeros(4))], g)
    assert (s.mean_weighted_d, s.mean_taxicab, s.noncoalesced_fraction) == (8, 4, 1)
    same = summarize_pairs([_pair(np.full(4, 0.2), np.full(4, 0.2))] * 3, g)
    assert (same.mean_weighted_d, same.mean_taxicab, same.noncoalesced_fraction) == (0, 0, 0)
    gen = np.random.default_rng(0)
    pairs = [_pair(gen.uniform(size=4), gen.uniform(size=4)) for _ in range(10)]
    a, b = summarize_pairs(pairs, g), summarize_pairs(pairs + pairs, g)
    assert a.mean_weighted_d == pytest.approx(b.mean_weighted_d)
    assert a.mean_taxicab == pytest.approx(b.mean_taxicab)
    assert g.n_min * a.mean_taxicab <= a.mean_weighted_d + 1e-12 <= g.n_max * a.mean_taxicab + 2e-12
    with pytest.raises(ValueError):
        summarize_pairs([], g)


def test_summary_csv(tmp_path):
    g = build_grid_graph(2, 2)
    rows = [summarize_arrays(np.zeros((3, 4)), np.ones((3, 4)), g, t) for t in (0, 1)]
    write_summary_csv(rows, tmp_path / "s.csv")
    lines = list(csv.reader(open(tmp_path / "s.csv")))
    assert lines[0] == CSV_HEADER == ["t", "mean_d", "se_d", "mean_dhat", "se_dhat", "frac_neq", "se_frac"]
    assert lines[2][0] == "1" and float(lines[2][1]) == 8.0


def test_conversion_bounds():
    g = build_grid_graph(2, 2)
    assert all(v == 0 for v in metric_conversion_bounds(0.0, 0.0, g).values())
    b = metric_conversion_bounds(0.1, 0.5, g)
    assert b["d_w_from_tv"] == pytest.approx(0.8)
    assert b["d_hat_w_from_tv"] == pytest.approx(0.4)
    # 2x2 N4 is regular, so the sandwich collapses
    assert b["d_w_lower_from_d_hat_w"] == b["d_w_upper_from_d_hat_w"] == 1.0


def test_fit_decay_rate():
    t = np.arange(60)
    means = 3.0 * 0.9**t
    fit = fit_decay_rate(t, means, means * 0.01)
    assert fit.rate == pytest.approx(0.9, rel=1e-10) and not fit.degenerate
    # noise floor cuts the window
    ses = np.full(60, 3.0 * 0.9**30 / 10)
    fit = fit_decay_rate(t, means, ses)
    assert fit.window == (0, 29)
    assert fit_decay_rate(t, np.zeros(60), np.zeros(60)).degenerate
