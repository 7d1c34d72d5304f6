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

from tunetools.utils import DataException, OptimizationException, SurrogateException
from tunetools.data_model import WeightVector, FilterMask
from tunetools.chi2 import (Chi2Config, Chi2Terms, chi2, chi2_gradient, per_observable_chi2, per_observable_chi2s,
                            minimize_chi2, ideal_tunes, save_ideal_tunes, load_ideal_tunes)
from tunetools.test.synthetic import make_space, make_reference, polynomial_surrogate, linear_problem, sample_points


def two_observables():
    """ a: one bin at R = 0, b: one bin at R = 1, both f = p with zero MC uncertainty """
    space = make_space([0.0], [3.0])
    ref = make_reference(OrderedDict([("a", ([0.0], [1.0])), ("b", ([1.0], [1.0]))]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0], p[0]], 1, n_runs=5)
    return space, ref, s


def weighted_mean_problem():
    """ One observable of three bins, f_b = p; its chi2 is minimal at the inverse-variance mean 5/3 """
    space = make_space([-10.0], [10.0])
    ref = make_reference(OrderedDict([("o", ([1.0, 2.0, 3.0], [1.0, 1.0, 2.0]))]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]] * 3, 1, n_runs=5)
    return space, ref, s


class FailingSurrogate(object):
    def __init__(self, space):
        self.space = space
        self.dim = space.dim

    def evaluate(self, p, bins=None):
        raise SurrogateException("Rational denominator <= 0 for bin 'o#1'")

    evaluate_with_gradient = evaluate


def test_hand_computed_value():
    _, ref, s = two_observables()
    assert chi2([2.0], WeightVector({"a": 1.0, "b": 2.0}), s, ref) == pytest.approx(6.0)
    assert chi2([1.0], WeightVector({"a": 1.0, "b": 1.0}), s, ref) == pytest.approx(1.0)


def test_mc_uncertainty_in_denominator():
    space = make_space([0.0], [3.0])
    ref = make_reference(OrderedDict([("a", ([0.0], [1.0]))]))
    s = polynomial_surrogate(space, ref, lambda p: [p[0]], 1, unc_func=lambda p: [1.0], n_runs=5)
    # (2 - 0)^2 / (1 + 1)
    assert chi2([2.0], WeightVector({"a": 1.0}), s, ref) == pytest.approx(2.0)


def test_masked_bins_ignored():
    _, ref, s = two_observables()
    w = WeightVector({"a": 1.0, "b": 1.0})
    assert chi2([2.0], w, s, ref, FilterMask(["b"])) == pytest.approx(4.0)
    assert chi2([2.0], WeightVector({"a": 1.0, "b": 0.0}), s, ref) == pytest.approx(4.0)
    assert len(Chi2Terms(ref, WeightVector({"a": 0.0, "b": 1.0}))) == 1


def test_recovers_true_parameters():
    space, ref, s = linear_problem([0.3, 0.7], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], [0.1, 0.1, 0.1],
                                   [0.0, 0.0], [1.0, 1.0])
    p_hat, value = minimize_chi2(WeightVector.equal(ref.ids), s, ref, cfg=Chi2Config(multistarts=5))
    assert p_hat == pytest.approx([0.3, 0.7], abs=1e-5)
    assert value == pytest.approx(0.0, abs=1e-8)


def test_bimodal_global_minimum():
    space = make_space([0.0], [1.0])
    ref = make_reference(OrderedDict([("o", ([0.0, 0.0], [1.0, 1.0]))]))
    # chi2 = 100 (p - 0.2)^2 (p - 0.8)^2 + p^2
    s = polynomial_surrogate(space, ref, lambda p: [10.0 * (p[0] - 0.2) * (p[0] - 0.8), p[0]], 2, n_runs=8)
    w = WeightVector({"o": 1.0})
    p_hat, value = minimize_chi2(w, s, ref, cfg=Chi2Config(multistarts=20, seed=4))
    grid_min = min(chi2([x], w, s, ref) for x in np.linspace(0.0, 1.0, 10001))
    assert value <= grid_min + 1e-6
    assert p_hat[0] < 0.5


def test_deterministic():
    space, ref, s = linear_problem([0.2, 0.4], [[1.0, 2.0], [3.0, -1.0]], [0.2, 0.1], [0.0, 0.0], [1.0, 1.0])
    w = WeightVector({"o1": 0.3, "o2": 0.7})
    cfg = Chi2Config(multistarts=4, seed=9)
    first = minimize_chi2(w, s, ref, cfg=cfg)
    second = minimize_chi2(w, s, ref, cfg=cfg)
    assert np.array_equal(first[0], second[0])
    assert first[1] == second[1]


def test_weight_scale_invariance():
    space, ref, s = linear_problem([0.2, 0.4], [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]], [0.2, 0.1, 0.3],
                                   [0.0, 0.0], [1.0, 1.0])
    cfg = Chi2Config(multistarts=4)
    small = minimize_chi2(WeightVector({"o1": 1.0, "o2": 3.0, "o3": 2.0}), s, ref, cfg=cfg)
    large = minimize_chi2(WeightVector({"o1": 10.0, "o2": 30.0, "o3": 20.0}), s, ref, cfg=cfg)
    assert small[0] == pytest.approx(large[0], abs=1e-8)
    assert large[1] == pytest.approx(10.0 * small[1], rel=1e-9)


def test_value_uses_given_weights():
    space, ref, s = two_observables()
    w = WeightVector({"a": 1.0, "b": 1.0})
    p_hat, value = minimize_chi2(w, s, ref, cfg=Chi2Config(multistarts=3))
    assert p_hat[0] == pytest.approx(0.5, abs=1e-6)
    assert value == pytest.approx(0.5, abs=1e-9)
    assert value == pytest.approx(chi2(p_hat, w, s, ref), rel=1e-12)
    _, scaled = minimize_chi2(WeightVector({"a": 10.0, "b": 10.0}), s, ref, cfg=Chi2Config(multistarts=3))
    assert scaled == pytest.approx(5.0, abs=1e-8)


def test_gradient_finite_differences():
    space = make_space([0.0, 0.0], [1.0, 2.0])
    ref = make_reference(OrderedDict([("a", ([0.5, 1.0], [0.1, 0.2])), ("b", ([2.0], [0.5]))]))
    value = lambda p: [p[0] * p[1], p[0] ** 2 + p[1], 1.0 + p[1] ** 2]
    unc = lambda p: [0.05 + 0.1 * p[0], 0.1, 0.2 + 0.05 * p[1]]
    s = polynomial_surrogate(space, ref, value, 2, unc_func=unc, n_runs=20)
    w = WeightVector({"a": 0.4, "b": 0.6})
    h = 1e-6
    for p in sample_points(space, 10, seed=3):
        grad = chi2_gradient(p, w, s, ref)
        for k in range(2):
            step = np.zeros(2)
            step[k] = h
            fd = (chi2(p + step, w, s, ref) - chi2(p - step, w, s, ref)) / (2 * h)
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_zero_weight_gradient():
    _, ref, s = two_observables()
    only_a = chi2_gradient([2.0], WeightVector({"a": 1.0, "b": 0.0}), s, ref)
    masked = chi2_gradient([2.0], WeightVector({"a": 1.0, "b": 1.0}), s, ref, FilterMask(["b"]))
    assert only_a == pytest.approx(masked)
    assert only_a[0] == pytest.approx(4.0)


def test_no_bins_left():
    _, ref, s = two_observables()
    with pytest.raises(OptimizationException):
        minimize_chi2(WeightVector({"a": 1.0, "b": 0.0}), s, ref, FilterMask(["a"]))
    with pytest.raises(DataException):
        minimize_chi2(WeightVector({"a": 0.0, "b": 0.0}), s, ref)


def test_all_starts_fail():
    space = make_space([0.0], [1.0])
    ref = make_reference(OrderedDict([("o", ([0.0], [1.0]))]))
    with pytest.raises(OptimizationException) as e:
        minimize_chi2(WeightVector({"o": 1.0}), FailingSurrogate(space), ref, cfg=Chi2Config(multistarts=3))
    assert "All 3 starts" in str(e.value)


def test_per_observable_mean():
    _, ref, s = weighted_mean_problem()
    # bin terms at p = 1 are 0, 1 and 1
    assert per_observable_chi2([1.0], s, ref, "o") == pytest.approx(2.0 / 3.0)
    with pytest.raises(DataException):
        per_observable_chi2([1.0], s, ref, "missing")
    with pytest.raises(DataException):
        per_observable_chi2([1.0], s, ref, "o", FilterMask(["o"]))


def test_per_observable_chi2s_masked():
    _, ref, s = two_observables()
    chis = per_observable_chi2s([2.0], s, ref, FilterMask(["b"]))
    assert chis[0] == pytest.approx(4.0)
    assert np.isnan(chis[1])


def test_ideal_tunes_closed_form(tmp_path):
    _, ref, s = weighted_mean_problem()
    table = ideal_tunes(s, ref, Chi2Config(multistarts=5))
    assert table.ids == ["o"]
    assert table.p_ideal("o")[0] == pytest.approx(5.0 / 3.0, abs=1e-6)
    assert table.chi_ideal("o") == pytest.approx(1.0 / 3.0, abs=1e-8)
    path = str(tmp_path / "ideal.json")
    save_ideal_tunes(table, path)
    again = load_ideal_tunes(path)
    assert again.to_dict() == table.to_dict()


def test_ideal_tunes_skip_excluded():
    _, ref, s = two_observables()
    table = ideal_tunes(s, ref, Chi2Config(multistarts=3), FilterMask(["a"]))
    assert table.ids == ["b"]
    assert table.p_ideal("b")[0] == pytest.approx(1.0, abs=1e-6)
