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

# Outer optimization over the weight simplex: choose w so that the inner tune
# p_hat(w) = argmin chi2(p, w) scores best under an outer objective.
# The outer objective is expensive (one multistart inner solve per call), so it
# is modelled by a cubic RBF interpolant and new weights are picked from a
# random candidate pool by trading predicted value against distance.
import logging
from collections import OrderedDict

import numpy as np
from scipy.stats import dirichlet
from scipy.spatial.distance import cdist, pdist

from tunetools import settings
from tunetools.utils import OptimizationException, SurrogateException
from tunetools.data_model import Method, WeightVector, FilterMask, TuneResult, HistoryEntry
from tunetools.chi2 import Chi2Config, minimize_chi2, per_observable_chi2s

logger = logging.getLogger(__name__)

PORTFOLIO = "portfolio"
MEANSCORE = "meanscore"
MEDIANSCORE = "medianscore"
OBJECTIVES = OrderedDict([
    (PORTFOLIO, Method.BILEVEL_PORTFOLIO),
    (MEANSCORE, Method.BILEVEL_MEANSCORE),
    (MEDIANSCORE, Method.BILEVEL_MEDIANSCORE),
])

RBF_TOL = 1e-8
# Candidates closer than this to an evaluated point would make the RBF system singular
DISTANCE_TOL = 1e-12
# rows of candidate-to-center distance blocks
CHUNK_ROWS = 4096


class OuterConfig(object):
    """ Settings of the outer loop. n0 and n_cand default to values derived from the
        number of observables and are fixed by resolve().
    """

    def __init__(self, n0=None, n_max=settings.N_MAX, n_cand=None, nu_cycle=settings.NU_CYCLE,
                 lam=settings.RISK_AVERSION, seed=settings.SEED):
        self.n0 = None if n0 is None else int(n0)
        self.n_max = int(n_max)
        self.n_cand = None if n_cand is None else int(n_cand)
        self.nu_cycle = tuple(float(nu) for nu in nu_cycle)
        self.lam = float(lam)
        self.seed = int(seed)
        if not self.nu_cycle or any(not 0.0 <= nu <= 1.0 for nu in self.nu_cycle):
            raise OptimizationException("nu_cycle must be a non-empty list of values in [0, 1]")
        if self.lam < 0:
            raise OptimizationException("lambda must be >= 0, got %g" % self.lam)

    def resolve(self, n_observables):
        """ (n0, n_max, n_cand) for a simplex over n_observables """
        n0 = self.n0 if self.n0 is not None else n_observables + 1
        n_cand = self.n_cand if self.n_cand is not None else settings.N_CAND_PER_OBSERVABLE * n_observables
        if n0 < n_observables + 1:
            raise OptimizationException("The initial design needs at least %d points for %d observables, got %d"
                                        % (n_observables + 1, n_observables, n0))
        if self.n_max < n0:
            raise OptimizationException("n_max (%d) must be >= n0 (%d)" % (self.n_max, n0))
        if n_cand < 1:
            raise OptimizationException("n_cand must be >= 1, got %d" % n_cand)
        return n0, self.n_max, n_cand

    def to_dict(self):
        return OrderedDict([("n0", self.n0), ("n_max", self.n_max), ("n_cand", self.n_cand),
                            ("nu_cycle", list(self.nu_cycle)), ("lambda", self.lam), ("seed", self.seed)])


def dirichlet_design(n, dim, seed=None):
    """ n points drawn uniformly from the unit simplex in dim coordinates.
        seed may be an integer or a numpy Generator.
    """
    if n < 1 or dim < 1:
        raise OptimizationException("Dirichlet design needs n >= 1 and dim >= 1, got (%d, %d)" % (n, dim))
    if dim == 1:
        return np.ones((n, 1))
    rng = np.random.default_rng(seed)
    points = dirichlet.rvs(np.ones(dim), size=n, random_state=rng)
    return points / points.sum(axis=1)[:, None]


def reduce_points(W):
    """ Simplex points are modelled by their first dim - 1 coordinates """
    return np.atleast_2d(W)[:, :-1]


def complete_point(x):
    return np.append(x, max(0.0, 1.0 - float(np.sum(x))))


class RbfModel(object):
    """ s(x) = sum_i gamma_i |x - c_i|^3 + beta . x + beta0 over reduced simplex points """

    def __init__(self, centers, gamma, beta, beta0):
        self.centers = np.asarray(centers, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.beta0 = float(beta0)

    def predict_reduced(self, X):
        X = np.atleast_2d(X)
        radial = np.concatenate([cdist(X[i:i + CHUNK_ROWS], self.centers) ** 3 @ self.gamma
                                 for i in range(0, len(X), CHUNK_ROWS)])
        return radial + X @ self.beta + self.beta0

    def predict(self, W):
        """ Predictions at full simplex points (rows of W) """
        return self.predict_reduced(reduce_points(W))


def fit_rbf(points, values):
    """ Cubic RBF with a linear tail interpolating values at the simplex points """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    X = reduce_points(points)
    n, k = X.shape
    if k < 1:
        raise OptimizationException("An RBF over the weight simplex needs at least 2 observables")
    if n < k + 1:
        raise OptimizationException("An RBF in dimension %d needs at least %d points, got %d; "
                                    "evaluate more weight vectors" % (k, k + 1, n))
    if np.min(pdist(X)) <= DISTANCE_TOL:
        raise OptimizationException("Singular RBF system: duplicate centers; use better spread weight vectors")
    P = np.hstack([X, np.ones((n, 1))])
    if np.linalg.matrix_rank(P) < k + 1:
        raise OptimizationException("Singular RBF system: centers are affinely dependent; "
                                    "add more or better spread weight vectors")
    Phi = cdist(X, X) ** 3
    A = np.block([[Phi, P], [P.T, np.zeros((k + 1, k + 1))]])
    rhs = np.concatenate([values, np.zeros(k + 1)])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as e:
        raise OptimizationException("Singular RBF system (%s); add more or better spread weight vectors" % e)
    model = RbfModel(X, sol[:n], sol[n:n + k], sol[n + k])
    residual = np.max(np.abs(model.predict_reduced(X) - values))
    if residual > RBF_TOL * max(1.0, np.max(np.abs(values))):
        raise OptimizationException("RBF interpolation error %.3g at the centers; the system is ill-conditioned"
                                    % residual)
    return model


def _unit_scale(v):
    lo, hi = np.min(v), np.max(v)
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def score_candidates(predictions, distances, nu):
    """ nu * V_s + (1 - nu) * V_d with both criteria scaled to [0, 1].
        Low predicted values and large distances score best; a flat criterion scores 0.
    """
    predictions = np.asarray(predictions, dtype=float)
    distances = np.asarray(distances, dtype=float)
    v_s = _unit_scale(predictions)
    dmin, dmax = np.min(distances), np.max(distances)
    v_d = np.zeros_like(distances) if dmax == dmin else (dmax - distances) / (dmax - dmin)
    return nu * v_s + (1.0 - nu) * v_d


def min_distances(X, Y):
    """ Distance from every row of X to its nearest row of Y, in blocks of CHUNK_ROWS rows """
    return np.concatenate([cdist(X[i:i + CHUNK_ROWS], Y).min(axis=1) for i in range(0, len(X), CHUNK_ROWS)])


def propose_candidate(model, evaluated, nu, n_cand, seed=None):
    """ Best of n_cand Dirichlet candidates; model None selects on distance alone """
    evaluated = np.atleast_2d(evaluated)
    rng = np.random.default_rng(seed)
    candidates = dirichlet_design(n_cand, evaluated.shape[1], rng)
    X = reduce_points(candidates)
    distances = min_distances(X, reduce_points(evaluated))
    predictions = model.predict_reduced(X) if model is not None else np.zeros(len(X))
    scores = score_candidates(predictions, distances, nu)
    scores[distances <= DISTANCE_TOL] = np.inf
    return complete_point(X[int(np.argmin(scores))])


def outer_portfolio(errors, lam=settings.RISK_AVERSION):
    """ mean + lam * population variance of the per-observable errors """
    errors = np.asarray(errors, dtype=float)
    if not len(errors):
        raise OptimizationException("The portfolio objective needs at least one observable")
    return float(np.mean(errors) + lam * np.var(errors))


def bin_scores(p, s, ref, mask=None):
    """ Per-bin ((f_b - R_b) / dR_b)^2 + log(dR_b^2), grouped by kept observable """
    mask = mask or FilterMask()
    keep = mask.bin_mask(ref)
    bins = np.flatnonzero(keep)
    f = s.evaluate(p, bins=bins).values
    R, dR = ref.values[bins], ref.uncertainties[bins]
    scores = ((f - R) / dR) ** 2 + np.log(dR ** 2)
    owners = ref.observable_of_bin[bins]
    return [scores[owners == i] for i in range(len(ref)) if np.any(owners == i)]


def score_sum(groups, reduce):
    return float(sum(reduce(g) for g in groups))


def outer_medianscore(p, s, ref, mask=None):
    return score_sum(bin_scores(p, s, ref, mask), np.median)


def outer_meanscore(p, s, ref, mask=None):
    return score_sum(bin_scores(p, s, ref, mask), np.mean)


def outer_value(objective, p, s, ref, mask=None, lam=settings.RISK_AVERSION):
    """ The outer objective at a given parameter point; depends on the weights only via p """
    if objective == PORTFOLIO:
        errors = per_observable_chi2s(p, s, ref, mask)
        return outer_portfolio(errors[~np.isnan(errors)], lam)
    elif objective == MEANSCORE:
        return outer_meanscore(p, s, ref, mask)
    elif objective == MEDIANSCORE:
        return outer_medianscore(p, s, ref, mask)
    raise OptimizationException("Unknown outer objective '%s' (%s)" % (objective, ", ".join(OBJECTIVES)))


def full_weights(ref, active, w):
    """ Simplex point over the active observables as a WeightVector over all of ref """
    weights = OrderedDict((id, 0.0) for id in ref.ids)
    weights.update(zip(active, np.asarray(w, dtype=float).tolist()))
    return WeightVector(weights)


def _evaluate_weights(objective, w, s, ref, mask, inner_cfg, lam):
    try:
        p_hat, _ = minimize_chi2(w, s, ref, mask, inner_cfg)
        value = outer_value(objective, p_hat, s, ref, mask, lam)
    except (OptimizationException, SurrogateException) as e:
        logger.warning("Inner tune failed at %r: %s", w, e)
        return HistoryEntry(w, None, float("inf"))
    return HistoryEntry(w, p_hat, value)


def _best(history):
    values = np.array([h.value for h in history])
    if not np.any(np.isfinite(values)):
        raise OptimizationException("Every inner tune failed; no weight vector could be scored")
    return history[int(np.argmin(values))]


def run_bilevel(objective, s, ref, mask=None, outer_cfg=None, inner_cfg=None):
    """ Derivative-free search of the weight simplex over the active observables.

        Exactly n_max inner tunes are run (one when a single observable is active);
        the result is the evaluated weight vector with the smallest outer value.
    """
    if objective not in OBJECTIVES:
        raise OptimizationException("Unknown outer objective '%s' (%s)" % (objective, ", ".join(OBJECTIVES)))
    mask = mask or FilterMask()
    mask.validate(ref)
    outer_cfg = outer_cfg or OuterConfig()
    inner_cfg = inner_cfg or Chi2Config()
    active = mask.active_ids(ref)
    m = len(active)
    metadata = OrderedDict([("objective", objective), ("outer", outer_cfg.to_dict()),
                            ("active_observables", m)])

    def evaluate(w):
        return _evaluate_weights(objective, full_weights(ref, active, w), s, ref, mask,
                                 inner_cfg, outer_cfg.lam)

    if m == 1:
        logger.info("Single active observable '%s': one inner tune", active[0])
        history = [evaluate([1.0])]
        best = _best(history)
        return TuneResult(OBJECTIVES[objective], best.weights, best.p_hat, best.value, history, mask,
                          outer_cfg.seed, metadata)

    n0, n_max, n_cand = outer_cfg.resolve(m)
    rng = np.random.default_rng(outer_cfg.seed)
    points = list(dirichlet_design(n0, m, rng))
    history = [evaluate(w) for w in points]
    logger.info("Initial design: %d weight vectors, best outer value %g", n0, _best(history).value)

    fallbacks = 0
    for it in range(n0, n_max):
        nu = outer_cfg.nu_cycle[(it - n0) % len(outer_cfg.nu_cycle)]
        values = np.array([h.value for h in history])
        finite = np.isfinite(values)
        try:
            model = fit_rbf(np.array(points)[finite], values[finite])
        except OptimizationException as e:
            logger.warning("Iteration %d: %s; selecting by distance only", it, e)
            model = None
            fallbacks += 1
        w = propose_candidate(model, np.array(points), nu, n_cand, rng)
        points.append(w)
        history.append(evaluate(w))
        logger.info("Iteration %d/%d (nu=%g): outer value %g", it + 1, n_max, nu, history[-1].value)

    best = _best(history)
    metadata["rbf_fallbacks"] = fallbacks
    return TuneResult(OBJECTIVES[objective], best.weights, best.p_hat, best.value, history, mask,
                      outer_cfg.seed, metadata)


def run_equal_weights(s, ref, mask=None, inner_cfg=None, objective=PORTFOLIO, lam=settings.RISK_AVERSION):
    """ The all-weights-equal baseline, scored by an outer objective for comparison """
    mask = mask or FilterMask()
    mask.validate(ref)
    inner_cfg = inner_cfg or Chi2Config()
    active = mask.active_ids(ref)
    w = full_weights(ref, active, np.full(len(active), 1.0 / len(active)))
    p_hat, chi = minimize_chi2(w, s, ref, mask, inner_cfg)
    value = outer_value(objective, p_hat, s, ref, mask, lam)
    metadata = OrderedDict([("objective", objective), ("chi2", chi)])
    return TuneResult(Method.EQUAL_WEIGHTS, w, p_hat, value, [HistoryEntry(w, p_hat, value)], mask,
                      inner_cfg.seed, metadata)
