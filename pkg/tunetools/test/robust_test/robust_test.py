"""
tune-tools
Copyright (c) 2026 The tune-tools authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
"""
from collections import OrderedDict

import numpy as np
import pytest
from scipy.optimize import linprog

from tunetools.utils import OptimizationException
from tunetools.data_model import Method, WeightVector, FilterMask
from tunetools.chi2 import IdealTuneTable
from tunetools.robust import (RobustConfig, RobustTerms, worst_case_terms, knapsack_weights, worst_case_residual,
                              optimal_weights_for_p, robust_objective, compass_search, solve_robust, CdfCurve,
                              cdf_curve, ideal_cdf_curve, area_between, random_mus, sweep_mu)
from tunetools.test.synthetic import make_space, make_reference, polynomial_surrogate

FAST = RobustConfig(multistarts=3)


def spread_problem():
    """ o1, o2: two bins each at 0.3 +- 0.02; o3: bins at -1 and 2.6 +- 0.1; f_b = p on [0, 1].
        With every weight at 1 the tune settles at p = 0.4533; at mu = 30 only o1 counts and p = 0.3.
    """
    space = make_space([0.0], [1.0])
    ref = make_reference(OrderedDict([
        ("o1", ([0.3, 0.3], [0.02, 0.02])),
        ("o2", ([0.3, 0.3], [0.02, 0.02])),
        ("o3", ([-1.0, 2.6], [0.1, 0.1])),
    ]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]] * 6, 1, n_runs=5)
    return space, ref, s


@pytest.mark.parametrize("f, df, R, dR, expected", [
    (1.0, 0.0, 0.0, 0.5, 2.25),
    (0.0, 1.0, 1.0, 1.0, 9.0),
    (0.0, 0.0, 0.0, 1.0, 1.0),
])
def test_worst_case_terms(f, df, R, dR, expected):
    assert worst_case_terms(np.array([f]), np.array([df]), np.array([R]), np.array([dR]))[0] == expected


def test_smooth_worst_case_bounds_max():
    f = np.linspace(-2.0, 2.0, 41)
    exact = worst_case_terms(f, 0.1, 0.0, 0.5)
    smooth = worst_case_terms(f, 0.1, 0.0, 0.5, epsilon=1e-3)
    assert np.all(smooth >= exact)
    assert smooth == pytest.approx(exact, abs=1e-3)


def test_worst_case_residual_floor():
    space, ref, s = spread_problem()
    for p in np.linspace(0.0, 1.0, 11):
        assert worst_case_residual([p], s, ref, "o1", 1) >= 0.02 ** 2 * (1 - 1e-9)
    assert worst_case_residual([0.3], s, ref, "o1", 2) == pytest.approx(0.02 ** 2)
    with pytest.raises(OptimizationException):
        worst_case_residual([0.3], s, ref, "o1", 3)


def test_full_budget_selects_everything():
    assert knapsack_weights([5.0, 1.0, 3.0], [2, 1, 7], 100.0).tolist() == [1.0, 1.0, 1.0]


def test_half_budget():
    assert knapsack_weights([3.0, 1.0], [1, 1], 50.0).tolist() == [0.0, 1.0]
    w = knapsack_weights([1.0, 5.0], [2, 1], 50.0)
    assert w == pytest.approx([1.0, 0.25])
    assert np.sum(w * np.array([1.0, 5.0]) / np.array([2.0, 1.0])) == pytest.approx(1.75)


def test_knapsack_matches_lp():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = int(rng.integers(1, 7))
        totals = rng.exponential(size=m)
        counts = rng.integers(1, 6, size=m).astype(float)
        mu = float(100.0 * (1.0 - rng.random()))
        w = knapsack_weights(totals, counts, mu)
        assert np.all(w >= 0) and np.all(w <= 1)
        assert np.sum(w / counts) >= mu / 100.0 * np.sum(1.0 / counts) * (1 - 1e-9)
        lp = linprog(totals / counts, A_ub=[-1.0 / counts], b_ub=[-mu / 100.0 * np.sum(1.0 / counts)],
                     bounds=[(0.0, 1.0)] * m, method="highs")
        assert np.sum(w * totals / counts) == pytest.approx(lp.fun, rel=1e-9, abs=1e-12)


def test_reformulation_equivalence():
    space, ref, s = spread_problem()
    terms = RobustTerms(ref)
    for p in np.linspace(0.0, 1.0, 7):
        for mu in (10.0, 50.0, 100.0):
            w = optimal_weights_for_p([p], s, ref, mu)
            assert robust_objective([p], w, s, ref) == pytest.approx(terms.objective(s, [p], mu))


def test_optimal_weights_skip_excluded():
    space, ref, s = spread_problem()
    w = optimal_weights_for_p([0.3], s, ref, 100.0, FilterMask(["o2"]))
    assert w["o2"] == 0.0
    assert w["o1"] == 1.0 and w["o3"] == 1.0
    with pytest.raises(OptimizationException):
        optimal_weights_for_p([0.3], s, ref, 0.0)


def test_compass_search_quadratic():
    x, value = compass_search(lambda x: float(np.sum((x - np.array([0.3, 0.8])) ** 2)), [0.5, 0.5])
    assert x == pytest.approx([0.3, 0.8], abs=1e-8)
    assert value == pytest.approx(0.0, abs=1e-12)
    x, _ = compass_search(lambda x: -float(x[0]), [0.2])
    assert x[0] == 1.0


def test_all_weights_one_at_full_budget():
    space, ref, s = spread_problem()
    result = solve_robust(s, ref, cfg=FAST)
    assert result.method == Method.ROBUST
    assert result.p_star[0] == pytest.approx(2.72 / 6.0, abs=1e-6)
    assert result.metadata["raw_weights"] == OrderedDict([("o1", 1.0), ("o2", 1.0), ("o3", 1.0)])
    assert result.weights.normalized


def test_grid_oracle():
    space, ref, s = spread_problem()
    for mu in (30.0, 70.0, 100.0):
        result = solve_robust(s, ref, cfg=FAST.with_mu(mu))
        terms = RobustTerms(ref)
        grid_min = min(terms.objective(s, [p], mu) for p in np.linspace(0.0, 1.0, 1001))
        assert result.objective_value <= grid_min + 1e-9
        raw = optimal_weights_for_p(result.p_star, s, ref, mu)
        assert robust_objective(result.p_star, raw, s, ref) == pytest.approx(result.objective_value)


def test_low_budget_tunes_to_cheapest():
    space, ref, s = spread_problem()
    result = solve_robust(s, ref, cfg=FAST.with_mu(30.0))
    assert result.p_star[0] == pytest.approx(0.3, abs=1e-6)
    assert result.metadata["raw_weights"]["o1"] == pytest.approx(0.9)
    assert result.weights["o1"] == pytest.approx(1.0)


def test_robust_config():
    with pytest.raises(OptimizationException):
        RobustConfig(mu=0.0)
    with pytest.raises(OptimizationException):
        RobustConfig(mu=101.0)
    with pytest.raises(OptimizationException):
        RobustConfig(epsilon=-1.0)
    assert FAST.with_mu(20.0).multistarts == 3


def test_cdf_counts():
    curve = CdfCurve.from_statistics([0.5, 1.5, 2.5], [1.0, 2.0, 3.0])
    assert curve.counts.tolist() == [1, 2, 3]
    assert curve.rows() == [(1.0, 1), (2.0, 2), (3.0, 3)]
    with pytest.raises(OptimizationException):
        CdfCurve([2.0, 1.0], [0, 0])


def test_area():
    run = CdfCurve([0.0, 2.0], [0, 0])
    ideal = CdfCurve([0.0, 2.0], [5, 5])
    assert area_between(run, ideal) == 10.0
    with pytest.raises(OptimizationException):
        area_between(run, CdfCurve([0.0, 3.0], [5, 5]))


def test_cdf_curves():
    space, ref, s = spread_problem()
    taus = [1.0, 340.0, 400.0]
    # at p = 0.3: o1 and o2 are exact, o3 averages (1.3^2 + 2.3^2) / 0.01 over two bins
    assert cdf_curve([0.3], s, ref, taus).counts.tolist() == [2, 2, 3]
    assert cdf_curve([0.3], s, ref, taus, FilterMask(["o1"])).counts.tolist() == [1, 1, 2]
    ideal = IdealTuneTable(OrderedDict([("o1", ([0.3], 0.0)), ("o3", ([0.8], 324.0))]))
    assert ideal_cdf_curve(ideal, taus).counts.tolist() == [1, 2, 2]


def test_random_mus():
    mus = random_mus(50, seed=3)
    assert len(mus) == 50
    assert all(0.0 < mu <= 100.0 for mu in mus)
    assert mus == random_mus(50, seed=3)


def test_sweep_prefers_spread_budget():
    space, ref, s = spread_problem()
    best_mu, results = sweep_mu(s, ref, mus=[100.0, 30.0], cfg=FAST, taus=np.linspace(0.0, 500.0, 5001))
    assert best_mu == 30.0
    assert len(results) == 2
    assert results[1].metadata["area"] < results[0].metadata["area"]
    assert results[0].metadata["robust"]["mu"] == 100.0


def test_sweep_tie_goes_to_smaller_mu():
    space, ref, s = spread_problem()
    ideal = IdealTuneTable(OrderedDict((id, ([0.5], 0.0)) for id in ref.ids))
    # every statistic is below the single tau, so all areas are 0
    best_mu, _ = sweep_mu(s, ref, mus=[80.0, 40.0, 60.0], cfg=FAST, ideal=ideal, taus=[1e6])
    assert best_mu == 40.0


def test_worst_case_is_an_interval_end():
    rng = np.random.default_rng(2)
    n = 10000
    f, R = rng.normal(size=n), rng.normal(size=n)
    df, dR = rng.exponential(size=n), rng.exponential(size=n)
    u = np.linspace(0.0, 1.0, 1001)
    lower, upper = R - dR - df, R + dR + df
    computed = worst_case_terms(f, df, R, dR)
    for chunk in np.array_split(np.arange(n), 10):
        grid = lower[chunk, None] + (upper - lower)[chunk, None] * u[None, :]
        expected = np.max((f[chunk, None] - grid) ** 2, axis=1)
        assert np.max(np.abs(computed[chunk] - expected)) <= 1e-9
