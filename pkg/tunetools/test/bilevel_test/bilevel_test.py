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
from scipy.spatial.distance import cdist

from tunetools.utils import OptimizationException
from tunetools.data_model import Method, FilterMask, WeightVector
from tunetools.chi2 import Chi2Config, minimize_chi2
from tunetools import bilevel
from tunetools.bilevel import (PORTFOLIO, MEANSCORE, MEDIANSCORE, OuterConfig, dirichlet_design, reduce_points,
                               fit_rbf, score_candidates, propose_candidate, outer_portfolio, score_sum,
                               outer_meanscore, outer_medianscore, outer_value, run_bilevel, run_equal_weights,
                               min_distances)
from tunetools.test.synthetic import make_space, make_reference, polynomial_surrogate

INNER = Chi2Config(multistarts=2)


def pulled_problem():
    """ Three consistent observables at R = 0.5 and one precise outlier at R = 0, all f = p.
        Equal weights let the outlier drag the tune to p ~ 0.015.
    """
    space = make_space([0.0], [1.0])
    ref = make_reference(OrderedDict([
        ("o1", ([0.5], [0.1])), ("o2", ([0.5], [0.1])), ("o3", ([0.5], [0.1])), ("out", ([0.0], [0.01])),
    ]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]] * 4, 1, n_runs=5)
    return space, ref, s


def test_dirichlet_design():
    points = dirichlet_design(100000, 4, seed=0)
    assert points.shape == (100000, 4)
    assert np.allclose(points.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(points >= 0)
    assert points.mean(axis=0) == pytest.approx([0.25] * 4, abs=0.01)
    assert dirichlet_design(3, 1).tolist() == [[1.0], [1.0], [1.0]]
    assert np.array_equal(dirichlet_design(5, 3, seed=7), dirichlet_design(5, 3, seed=7))


def test_rbf_reproduces_linear():
    points = dirichlet_design(10, 3, seed=1)
    linear = lambda W: 1.0 + 2.0 * W[:, 0] - W[:, 1]
    model = fit_rbf(points, linear(points))
    other = dirichlet_design(20, 3, seed=2)
    assert model.predict(other) == pytest.approx(linear(other), abs=1e-8)


def test_blocked_distances(monkeypatch):
    X = dirichlet_design(1000, 4, seed=5)[:, :-1]
    Y = dirichlet_design(30, 4, seed=6)[:, :-1]
    model = fit_rbf(dirichlet_design(30, 4, seed=6), np.random.default_rng(7).normal(size=30))
    whole = model.predict_reduced(X)
    monkeypatch.setattr(bilevel, "CHUNK_ROWS", 7)
    assert min_distances(X, Y) == pytest.approx(cdist(X, Y).min(axis=1), abs=1e-15)
    assert model.predict_reduced(X) == pytest.approx(whole, abs=1e-12)


def test_rbf_interpolates():
    points = dirichlet_design(12, 4, seed=3)
    values = np.random.default_rng(4).normal(size=12)
    model = fit_rbf(points, values)
    assert model.predict(points) == pytest.approx(values, abs=1e-8)


@pytest.mark.parametrize("points, message", [
    ([[0.5, 0.5], [0.5, 0.5], [0.2, 0.8]], "duplicate"),
    ([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]], "needs at least 3 points"),
    ([[1.0], [1.0]], "at least 2 observables"),
    ([[0.2, 0.2, 0.6], [0.3, 0.3, 0.4], [0.4, 0.4, 0.2]], "affinely dependent"),
])
def test_rbf_errors(points, message):
    with pytest.raises(OptimizationException) as e:
        fit_rbf(points, np.arange(len(points), dtype=float))
    assert message in str(e.value)


def test_candidate_scores():
    predictions = [0.0, 10.0, 5.0]
    distances = [0.5, 1.0, 0.0]
    assert score_candidates(predictions, distances, 0.5) == pytest.approx([0.25, 0.5, 0.75])
    assert int(np.argmin(score_candidates(predictions, distances, 0.5))) == 0
    assert int(np.argmin(score_candidates(predictions, distances, 0.0))) == 1
    assert score_candidates([3.0, 3.0], [0.2, 0.2], 0.7).tolist() == [0.0, 0.0]


def test_propose_by_distance():
    evaluated = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    w = propose_candidate(None, evaluated, 0.0, 500, seed=5)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0)
    # distances are measured on the first two coordinates
    assert np.min(np.linalg.norm(reduce_points(evaluated) - reduce_points(w), axis=1)) > 0.5


@pytest.mark.parametrize("errors, expected", [
    ([2.0, 2.0, 2.0], 2.0),
    ([1.0, 3.0], 3.0),
    ([5.0], 5.0),
])
def test_portfolio(errors, expected):
    assert outer_portfolio(errors, lam=1.0) == pytest.approx(expected)


def test_portfolio_risk_neutral():
    assert outer_portfolio([1.0, 3.0], lam=0.0) == pytest.approx(2.0)
    with pytest.raises(OptimizationException):
        outer_portfolio([])


def test_score_reductions():
    assert score_sum([np.array([1.0, 5.0, 9.0])], np.median) == 5.0
    assert score_sum([np.array([1.0, 3.0, 5.0, 7.0])], np.median) == 4.0
    assert score_sum([np.array([1.0, 3.0]), np.array([-1.0])], np.mean) == pytest.approx(1.0)


def test_outer_scores():
    space = make_space([0.0], [3.0])
    ref = make_reference(OrderedDict([("a", ([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])), ("b", ([0.0], [np.e ** 0.5]))]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]] * 4, 1, n_runs=5)
    # a: (2, 1, 0)^2 + log 1; b: 4 / e + log e
    assert outer_meanscore([2.0], s, ref) == pytest.approx(5.0 / 3.0 + 4.0 / np.e + 1.0)
    assert outer_medianscore([2.0], s, ref) == pytest.approx(1.0 + 4.0 / np.e + 1.0)
    assert outer_meanscore([2.0], s, ref, FilterMask(["b"])) == pytest.approx(5.0 / 3.0)
    with pytest.raises(OptimizationException):
        outer_value("worst", [2.0], s, ref)


def test_outer_config():
    assert OuterConfig().resolve(4) == (5, 1000, 2000)
    with pytest.raises(OptimizationException):
        OuterConfig(n0=3).resolve(4)
    with pytest.raises(OptimizationException):
        OuterConfig(n0=6, n_max=5).resolve(4)
    with pytest.raises(OptimizationException):
        OuterConfig(nu_cycle=[1.5])


def test_initial_design_only():
    _, ref, s = pulled_problem()
    result = run_bilevel(PORTFOLIO, s, ref, outer_cfg=OuterConfig(n0=6, n_max=6, seed=2), inner_cfg=INNER)
    assert len(result.history) == 6
    assert result.metadata["rbf_fallbacks"] == 0
    assert result.method == Method.BILEVEL_PORTFOLIO


def test_weights_stay_on_simplex():
    _, ref, s = pulled_problem()
    result = run_bilevel(MEANSCORE, s, ref, outer_cfg=OuterConfig(n_max=200, n_cand=100, seed=3), inner_cfg=INNER)
    assert len(result.history) == 200
    for entry in result.history:
        w = entry.weights.as_array(ref.ids)
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0, abs=1e-10)
    assert result.weights.as_array(ref.ids).sum() == pytest.approx(1.0, abs=1e-12)
    assert result.objective_value == min(h.value for h in result.history)


def test_beats_equal_weights():
    _, ref, s = pulled_problem()
    equal = run_equal_weights(s, ref, inner_cfg=INNER)
    assert equal.p_star[0] == pytest.approx(37.5 / 2575.0, abs=1e-5)
    tuned = run_bilevel(PORTFOLIO, s, ref, outer_cfg=OuterConfig(n_max=25, n_cand=200, seed=1), inner_cfg=INNER)
    assert tuned.objective_value < equal.objective_value
    assert tuned.weights["out"] < 0.25
    assert tuned.p_star[0] > equal.p_star[0]


def test_outer_value_depends_on_p_only():
    _, ref, s = pulled_problem()
    equal = run_equal_weights(s, ref, inner_cfg=INNER, objective=MEDIANSCORE)
    assert equal.objective_value == outer_value(MEDIANSCORE, equal.p_star, s, ref)


def test_excluded_observables_get_zero_weight():
    _, ref, s = pulled_problem()
    mask = FilterMask(["out"])
    result = run_bilevel(PORTFOLIO, s, ref, mask, OuterConfig(n_max=8, n_cand=100, seed=4), INNER)
    assert all(h.weights["out"] == 0.0 for h in result.history)
    assert result.p_star[0] == pytest.approx(0.5, abs=1e-6)


def test_single_active_observable():
    _, ref, s = pulled_problem()
    mask = FilterMask(["o1", "o2", "o3"])
    result = run_bilevel(PORTFOLIO, s, ref, mask, OuterConfig(seed=5), INNER)
    assert len(result.history) == 1
    assert result.weights["out"] == 1.0
    assert result.p_star[0] == pytest.approx(0.0, abs=1e-6)
    assert result.objective_value == pytest.approx(0.0, abs=1e-6)


def test_identical_observables():
    space = make_space([0.0], [1.0])
    data = ([0.3, 0.5], [0.1, 0.2])
    ref = make_reference(OrderedDict([("a", data), ("b", data)]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]] * 4, 1, n_runs=5)
    single, _ = minimize_chi2(WeightVector({"a": 1.0}), s, ref, cfg=INNER)
    # inverse-variance mean of the two bins
    assert single[0] == pytest.approx(0.34, abs=1e-6)
    for objective in (PORTFOLIO, MEANSCORE, MEDIANSCORE):
        result = run_bilevel(objective, s, ref, outer_cfg=OuterConfig(n_max=5, n_cand=50, seed=2), inner_cfg=INNER)
        assert result.p_star == pytest.approx(single, abs=1e-6)
        for entry in result.history:
            assert entry.p_hat == pytest.approx(single, abs=1e-6)


def test_unknown_objective():
    _, ref, s = pulled_problem()
    with pytest.raises(OptimizationException):
        run_bilevel("worst", s, ref)
