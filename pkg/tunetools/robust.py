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

# Robust (minimax) tuning.
#
# For fixed p the slack variables have the closed form t_b = max of the two
# squared distances to the ends of the uncertainty interval, and the weights
# solve a fractional knapsack: objective sum w_O T_O / |O| subject to
# sum w_O / |O| >= mu/100 sum 1/|O| and 0 <= w_O <= 1, with T_O = sum_b t_b.
# The cost per unit of constraint is T_O, so weights are raised to 1 in
# ascending T_O order. What is left is a piecewise smooth function of p,
# minimized by multistart compass search.
import logging
from collections import OrderedDict

import numpy as np
from scipy.integrate import trapezoid

from tunetools import settings
from tunetools.utils import OptimizationException, SurrogateException, parallel_map
from tunetools.data_model import Method, WeightVector, FilterMask, TuneResult, HistoryEntry
from tunetools.data_model import normalize_weights
from tunetools.chi2 import Chi2Config, ideal_tunes, per_observable_chi2s

logger = logging.getLogger(__name__)

BUDGET_TOL = 1e-12
CDF_STATISTIC = "per-observable chi2, averaged once over the bins of the observable"


class RobustConfig(object):
    def __init__(self, mu=100.0, multistarts=settings.MULTISTARTS, seed=settings.SEED,
                 epsilon=settings.ROBUST_EPSILON, max_evals=settings.COMPASS_MAX_EVALS, jobs=1):
        self.mu = float(mu)
        if not 0.0 < self.mu <= 100.0:
            raise OptimizationException("mu must be in (0, 100], got %g" % self.mu)
        if int(multistarts) < 1:
            raise OptimizationException("multistarts must be >= 1, got %s" % multistarts)
        if float(epsilon) < 0:
            raise OptimizationException("epsilon must be >= 0, got %s" % epsilon)
        self.multistarts = int(multistarts)
        self.seed = int(seed)
        self.epsilon = float(epsilon)
        self.max_evals = int(max_evals)
        self.jobs = jobs

    def with_mu(self, mu):
        return RobustConfig(mu, self.multistarts, self.seed, self.epsilon, self.max_evals, self.jobs)

    def to_dict(self):
        return OrderedDict([("mu", self.mu), ("multistarts", self.multistarts), ("seed", self.seed),
                            ("epsilon", self.epsilon), ("max_evals", self.max_evals)])


def worst_case_terms(f, df, R, dR, epsilon=0.0):
    """ Largest squared deviation of f from the interval [R - dR - df, R + dR + df].
        With epsilon > 0 the max is replaced by a smooth upper bound.
    """
    below = (f - (R - dR - df)) ** 2
    above = (f - (R + dR + df)) ** 2
    if epsilon > 0:
        return 0.5 * (below + above + np.sqrt((below - above) ** 2 + epsilon ** 2))
    return np.maximum(below, above)


class RobustTerms(object):
    """ Kept bins of the active observables and their per-observable totals """

    def __init__(self, ref, mask=None, epsilon=0.0):
        mask = mask or FilterMask()
        self.ids = mask.active_ids(ref)
        positions = [ref.index[id] for id in self.ids]
        keep = mask.bin_mask(ref)
        self.bins = np.flatnonzero(keep)
        owners = ref.observable_of_bin[self.bins]
        # owner positions relative to the active observables
        lookup = np.full(len(ref), -1)
        lookup[positions] = np.arange(len(positions))
        self.owners = lookup[owners]
        self.counts = np.bincount(self.owners, minlength=len(self.ids)).astype(float)
        self.values = ref.values[self.bins]
        self.uncertainties = ref.uncertainties[self.bins]
        self.epsilon = epsilon

    def totals(self, s, p):
        """ T_O = sum_b t_b for every active observable """
        ev = s.evaluate(p, bins=self.bins)
        t = worst_case_terms(ev.values, ev.uncertainties, self.values, self.uncertainties, self.epsilon)
        return np.bincount(self.owners, weights=t, minlength=len(self.ids))

    def weights(self, totals, mu):
        return knapsack_weights(totals, self.counts, mu)

    def objective(self, s, p, mu):
        totals = self.totals(s, p)
        w = self.weights(totals, mu)
        return float(np.sum(w * totals / self.counts))


def knapsack_weights(totals, counts, mu):
    """ Minimize sum w T / n over 0 <= w <= 1 with sum w / n >= mu/100 sum 1/n """
    totals = np.asarray(totals, dtype=float)
    counts = np.asarray(counts, dtype=float)
    budget = mu / 100.0 * np.sum(1.0 / counts)
    w = np.zeros(len(totals))
    used = 0.0
    for i in np.argsort(totals, kind="stable"):
        if used >= budget * (1.0 - BUDGET_TOL):
            break
        share = 1.0 / counts[i]
        if used + share <= budget * (1.0 + BUDGET_TOL):
            w[i] = 1.0
            used += share
        else:
            w[i] = (budget - used) * counts[i]
            used = budget
    return w


def worst_case_residual(p, s, ref, id, b, epsilon=0.0):
    """ t_b for bin b (1-based) of observable id """
    obs = ref[id]
    if not 1 <= b <= len(obs):
        raise OptimizationException("Observable '%s' has no bin %d" % (id, b))
    column = ref.slices[id].start + b - 1
    ev = s.evaluate(np.asarray(p, dtype=float), bins=np.array([column]))
    return float(worst_case_terms(ev.values, ev.uncertainties, ref.values[column],
                                  ref.uncertainties[column], epsilon)[0])


def optimal_weights_for_p(p, s, ref, mu, mask=None, epsilon=0.0):
    """ The LP-optimal weights at fixed p, before normalization; excluded observables weigh 0 """
    if not 0.0 < mu <= 100.0:
        raise OptimizationException("mu must be in (0, 100], got %g" % mu)
    terms = RobustTerms(ref, mask, epsilon)
    w = terms.weights(terms.totals(s, np.asarray(p, dtype=float)), mu)
    weights = OrderedDict((id, 0.0) for id in ref.ids)
    weights.update(zip(terms.ids, w.tolist()))
    return WeightVector(weights)


def robust_objective(p, w, s, ref, mask=None, epsilon=0.0):
    """ sum_O w_O / |O| sum_b t_b at given p and weights """
    terms = RobustTerms(ref, mask, epsilon)
    totals = terms.totals(s, np.asarray(p, dtype=float))
    return float(np.sum(w.as_array(terms.ids) * totals / terms.counts))


def compass_search(func, x0, step=settings.COMPASS_STEP, tol=settings.COMPASS_TOL,
                   max_evals=settings.COMPASS_MAX_EVALS):
    """ Coordinate pattern search in the unit box. Polls +e_i, -e_i in order and moves
        to the first improvement; the step is halved when no poll improves.
    """
    x = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    fx = func(x)
    evals = 1
    while step >= tol and evals < max_evals:
        improved = False
        for i in range(len(x)):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[i] = min(1.0, max(0.0, trial[i] + sign * step))
                if trial[i] == x[i]:
                    continue
                ft = func(trial)
                evals += 1
                if ft < fx:
                    x, fx = trial, ft
                    improved = True
                    break
            if improved or evals >= max_evals:
                break
        if not improved:
            step /= 2.0
    return x, fx


def robust_start(job):
    terms, s, start, mu, max_evals = job
    space = s.space

    def func(x):
        try:
            return terms.objective(s, space.lower + space.width * x, mu)
        except SurrogateException:
            return float("inf")

    x, value = compass_search(func, start, max_evals=max_evals)
    if not np.isfinite(value):
        return None
    return space.lower + space.width * x, value


def solve_robust(s, ref, mask=None, cfg=None):
    """ min over p of the robust objective with t and w eliminated in closed form """
    cfg = cfg or RobustConfig()
    mask = mask or FilterMask()
    mask.validate(ref)
    terms = RobustTerms(ref, mask, cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    starts = rng.random((cfg.multistarts, s.dim))
    queue = [(terms, s, start, cfg.mu, cfg.max_evals) for start in starts]
    best = None
    for result in parallel_map(robust_start, queue, cfg.jobs):
        if result is not None and (best is None or result[1] < best[1]):
            best = result
    if best is None:
        raise OptimizationException("All %d robust starts failed (mu=%g)" % (cfg.multistarts, cfg.mu))
    p_hat, value = best
    raw = optimal_weights_for_p(p_hat, s, ref, cfg.mu, mask, cfg.epsilon)
    weights = normalize_weights(raw)
    logger.info("Robust tune mu=%g: objective %g", cfg.mu, value)
    metadata = OrderedDict([("robust", cfg.to_dict()), ("raw_weights", raw.to_dict()),
                            ("cdf_statistic", CDF_STATISTIC)])
    return TuneResult(Method.ROBUST, weights, p_hat, value, [HistoryEntry(weights, p_hat, value)], mask,
                      cfg.seed, metadata)


class CdfCurve(object):
    """ Number of observables whose statistic is <= tau, for each tau """

    def __init__(self, taus, counts):
        self.taus = np.asarray(taus, dtype=float)
        self.counts = np.asarray(counts, dtype=int)
        if len(self.taus) != len(self.counts):
            raise OptimizationException("CDF curve has %d taus and %d counts" % (len(self.taus), len(self.counts)))
        if np.any(np.diff(self.taus) < 0):
            raise OptimizationException("CDF curve taus must be sorted")

    @staticmethod
    def from_statistics(statistics, taus):
        statistics = np.asarray(statistics, dtype=float)
        taus = np.asarray(taus, dtype=float)
        return CdfCurve(taus, np.sum(statistics[None, :] <= taus[:, None], axis=1))

    def rows(self):
        return list(zip(self.taus.tolist(), self.counts.tolist()))


def default_taus():
    return np.logspace(np.log10(settings.TAU_MIN), np.log10(settings.TAU_MAX), settings.TAU_COUNT)


def cdf_curve(p, s, ref, taus=None, mask=None):
    taus = default_taus() if taus is None else taus
    stats = per_observable_chi2s(np.asarray(p, dtype=float), s, ref, mask)
    return CdfCurve.from_statistics(stats[~np.isnan(stats)], taus)


def ideal_cdf_curve(ideal, taus=None):
    taus = default_taus() if taus is None else taus
    return CdfCurve.from_statistics([ideal.chi_ideal(id) for id in ideal.ids], taus)


def area_between(run, ideal):
    """ Trapezoidal area of (ideal - run) over the shared tau grid; smaller is better """
    if not np.array_equal(run.taus, ideal.taus):
        raise OptimizationException("CDF curves must share the same tau grid")
    return float(trapezoid(ideal.counts - run.counts, run.taus))


def random_mus(count=settings.MU_COUNT, seed=settings.SEED):
    """ count values drawn uniformly from (0, 100] """
    rng = np.random.default_rng(seed)
    return (100.0 * (1.0 - rng.random(count))).tolist()


def sweep_worker(job):
    s, ref, mask, cfg = job
    return solve_robust(s, ref, mask, cfg)


def sweep_mu(s, ref, mask=None, mus=None, cfg=None, ideal=None, taus=None):
    """ One robust tune per mu; the best mu has the smallest area to the ideal CDF curve.

        Returns (best_mu, results in mus order). Ties go to the smaller mu.
    """
    cfg = cfg or RobustConfig()
    mask = mask or FilterMask()
    mus = random_mus(settings.MU_COUNT, cfg.seed) if mus is None else list(mus)
    if not mus:
        raise OptimizationException("No mu values to sweep")
    taus = default_taus() if taus is None else np.asarray(taus, dtype=float)
    if ideal is None:
        ideal = ideal_tunes(s, ref, Chi2Config(multistarts=cfg.multistarts, seed=cfg.seed, jobs=cfg.jobs), mask)
    ideal_curve = ideal_cdf_curve(ideal, taus)

    single = RobustConfig(cfg.mu, cfg.multistarts, cfg.seed, cfg.epsilon, cfg.max_evals, jobs=1)
    queue = [(s, ref, mask, single.with_mu(mu)) for mu in mus]
    results = parallel_map(sweep_worker, queue, cfg.jobs)
    ranking = []
    for mu, result in zip(mus, results):
        area = area_between(cdf_curve(result.p_star, s, ref, taus, mask), ideal_curve)
        result.metadata["area"] = area
        ranking.append((area, mu))
        logger.info("mu=%g: area to the ideal CDF curve %g", mu, area)
    best_area, best_mu = min(ranking)
    logger.info("Best mu=%g (area %g)", best_mu, best_area)
    return best_mu, results
