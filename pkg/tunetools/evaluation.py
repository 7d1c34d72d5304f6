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
import logging
from collections import OrderedDict

import numpy as np
from scipy.optimize import brentq

from tunetools import settings
from tunetools.utils import EvaluationException, SurrogateException, parallel_map
from tunetools.data_model import WeightVector, normalize_weights
from tunetools.chi2 import Chi2Terms, chi2

logger = logging.getLogger(__name__)

BRACKET_START = 1e-3
BRACKET_REACH = 1e3
ROOT_XTOL = 1e-14


class PosteriorCovariance(object):
    """ Symmetric covariance of the tuned parameters with its eigendecomposition
        (eigenvalues ascending, eigenvectors in columns)
    """

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=float)
        self.matrix = 0.5 * (matrix + matrix.T)
        self.eigenvalues, self.eigenvectors = np.linalg.eigh(self.matrix)

    @property
    def dim(self):
        return len(self.matrix)

    def cholesky(self):
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError:
            raise EvaluationException("Posterior covariance is not positive definite (eigenvalues %s)"
                                      % np.array2string(self.eigenvalues))


def gamma_post(p_hat, w, s, ref, mask=None):
    """ Inverse of sum_O w_O F_O^T noise^-1 F_O, the linearized posterior covariance at p_hat.
        F_O holds the gradients of f_b; the noise is diagonal df_b^2 + dR_b^2.
    """
    terms = Chi2Terms(ref, normalize_weights(w), mask)
    ev, grad_f, _ = s.evaluate_with_gradient(np.asarray(p_hat, dtype=float), bins=terms.bins)
    noise = ev.uncertainties ** 2 + terms.variances
    info = (grad_f * (terms.weights / noise)[:, None]).T @ grad_f
    eigenvalues = np.linalg.eigvalsh(info)
    if eigenvalues[0] <= info.shape[0] * np.finfo(float).eps * max(eigenvalues[-1], np.finfo(float).tiny):
        raise EvaluationException("parameters unidentifiable at p_hat = %s (information eigenvalues %s)"
                                  % (np.array2string(np.asarray(p_hat)), np.array2string(eigenvalues)))
    return PosteriorCovariance(np.linalg.inv(info))


def weighted_chi2_metric(result, s, ref):
    """ chi2 at the tuned parameters with the normalized tuned weights """
    return chi2(result.p_star, normalize_weights(result.weights), s, ref, result.mask)


def a_optimality(G):
    return float(np.trace(G.matrix))


def d_optimality_log(G):
    """ log det G from the Cholesky factor """
    return float(2.0 * np.sum(np.log(np.diag(G.cholesky()))))


def ellipsoid_coverage(p, p_hat, G):
    """ s = ||L^T (p - p_hat)|| with G = L L^T; s < 1 means p is covered """
    delta = np.asarray(p, dtype=float) - np.asarray(p_hat, dtype=float)
    return float(np.linalg.norm(G.cholesky().T @ delta))


def effective_n(w, d, gamma=settings.GAMMA):
    """ gamma * ((sum w)^2 / sum w^2 - d) """
    values = w.as_array(w.ids) if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if not np.sum(values) > 0:
        raise EvaluationException("trivial solution: all weights are zero")
    n_eff = np.sum(values) ** 2 / np.sum(values ** 2)
    if n_eff <= d:
        raise EvaluationException("too few effective observables for eigentunes: %.4g, d=%d" % (n_eff, d))
    return float(gamma * (n_eff - d))


class Eigentune(object):
    """ Per-parameter (min, max) over the four displaced tunes, negative edges clamped to 0 """

    def __init__(self, names, points, alphas, n_effective, gamma):
        self.names = list(names)
        self.points = np.asarray(points, dtype=float)
        self.alphas = np.asarray(alphas, dtype=float)
        self.n_effective = float(n_effective)
        self.gamma = float(gamma)
        self.intervals = np.maximum(np.column_stack([self.points.min(axis=0), self.points.max(axis=0)]), 0.0)

    def to_dict(self):
        return OrderedDict([
            ("n_effective", self.n_effective),
            ("gamma", self.gamma),
            ("alphas", self.alphas.tolist()),
            ("intervals", OrderedDict((name, list(interval))
                                      for name, interval in zip(self.names, self.intervals.tolist()))),
        ])


def solve_offset(job):
    """ alpha > 0 with chi2(p_hat + alpha u) = chi2(p_hat) + n """
    terms, s, p_hat, direction, n, reach, label = job
    base = terms.value(s, p_hat)

    def h(alpha):
        return terms.value(s, p_hat + alpha * direction) - base - n

    if n == 0:
        return 0.0
    lo, hi = 0.0, BRACKET_START
    while h(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > reach:
            raise EvaluationException("flat direction: chi2 never rises by %g along %s" % (n, label))
    alpha = brentq(h, lo, hi, xtol=ROOT_XTOL, maxiter=500)
    if abs(h(alpha)) > 1e-6 * (1.0 + n):
        logger.warning("Eigentune offset along %s misses the target by %g", label, h(alpha))
    return alpha


def eigentune(p_hat, w, s, ref, n, mask=None, gamma=settings.GAMMA, jobs=1):
    """ Displace p_hat along the eigenvectors of the posterior covariance with the largest
        and the smallest eigenvalue, both ways, until chi2 has risen by n.
    """
    if n < 0:
        raise EvaluationException("eigentune offset must be >= 0, got %g" % n)
    p_hat = np.asarray(p_hat, dtype=float)
    w = normalize_weights(w)
    G = gamma_post(p_hat, w, s, ref, mask)
    terms = Chi2Terms(ref, w, mask)
    reach = BRACKET_REACH * s.space.diagonal
    directions = []
    for name, column in (("largest", -1), ("smallest", 0)):
        u = G.eigenvectors[:, column]
        directions.append(("+u_%s" % name, u))
        directions.append(("-u_%s" % name, -u))
    queue = [(terms, s, p_hat, u, n, reach, "eigenvector %s" % label) for label, u in directions]
    alphas = parallel_map(solve_offset, queue, jobs)
    points = [p_hat + alpha * u for alpha, (_, u) in zip(alphas, directions)]
    return Eigentune(s.space.names, points, alphas, n, gamma)


def normalized_position(p, space):
    """ (p - lower) / (upper - lower) per parameter """
    return (np.asarray(p, dtype=float) - space.lower) / space.width


def bins_within_one_sigma(p, s, ref, mask=None):
    """ Number of kept bins with |f_b - R_b| <= sqrt(df_b^2 + dR_b^2) """
    terms = Chi2Terms(ref, None, mask)
    return int(np.sum(terms.bin_terms(s, np.asarray(p, dtype=float)) <= 1.0))


UNGROUPED = "ungrouped"


def group_summary(p, w, s, ref, mask=None):
    """ Per observable group: summed normalized weight, active observables, bins within
        one sigma and the mean per-observable chi2. Groups appear in reference order.
    """
    p = np.asarray(p, dtype=float)
    w_obs = normalize_weights(w).as_array(ref.ids)
    active = set(ref.ids if mask is None else mask.active_ids(ref))
    terms = Chi2Terms(ref, None, mask)
    obs_chi = terms.observable_means(s, p)
    within = np.bincount(terms.observables, weights=(terms.bin_terms(s, p) <= 1.0).astype(float), minlength=len(ref))
    groups = OrderedDict()
    for pos, obs in enumerate(ref):
        group = groups.setdefault(obs.group or UNGROUPED, {"weight": 0.0, "observables": 0,
                                                           "bins_within_one_sigma": 0, "chi2": []})
        group["weight"] += float(w_obs[pos])
        if obs.id in active:
            group["observables"] += 1
            group["bins_within_one_sigma"] += int(within[pos])
            if np.isfinite(obs_chi[pos]):
                group["chi2"].append(float(obs_chi[pos]))
    summary = OrderedDict()
    for name, group in groups.items():
        summary[name] = OrderedDict([
            ("weight", group["weight"]),
            ("observables", group["observables"]),
            ("bins_within_one_sigma", group["bins_within_one_sigma"]),
            ("mean_chi2", float(np.mean(group["chi2"])) if group["chi2"] else None),
        ])
    return summary


def metrics_report(result, s, ref, gamma=settings.GAMMA, jobs=1):
    """ The metric document of a tune result """
    p = result.p_star
    G = gamma_post(p, result.weights, s, ref, result.mask)
    report = OrderedDict([
        ("method", result.method),
        ("weighted_chi2", weighted_chi2_metric(result, s, ref)),
        ("a_optimality", a_optimality(G)),
        ("d_optimality_log", d_optimality_log(G)),
        ("normalized_position", OrderedDict(zip(s.space.names, normalized_position(p, s.space).tolist()))),
        ("bins_within_one_sigma", bins_within_one_sigma(p, s, ref, result.mask)),
        ("bins", len(Chi2Terms(ref, None, result.mask))),
        ("groups", group_summary(p, result.weights, s, ref, result.mask)),
    ])
    try:
        n = effective_n(result.weights, s.dim, gamma)
        report["eigentune"] = eigentune(p, result.weights, s, ref, n, result.mask, gamma, jobs).to_dict()
    except (EvaluationException, SurrogateException) as e:
        logger.warning("No eigentunes for this result: %s", e)
        report["eigentune"] = None
    return report
