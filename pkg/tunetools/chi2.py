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
from scipy.optimize import minimize

from tunetools import settings
from tunetools.utils import (OptimizationException, SurrogateException, DataException,
                             parallel_map, json_file_to_dict, dict_to_json_file)
from tunetools.data_model import WeightVector, normalize_weights

logger = logging.getLogger(__name__)

# L-BFGS-B stops on relative reduction below ftol before looking at the gradient
FTOL = np.finfo(float).eps


class Chi2Config(object):
    def __init__(self, multistarts=settings.MULTISTARTS, max_iterations=settings.MAX_ITERATIONS,
                 gtol=settings.GRADIENT_TOL, seed=settings.SEED, jobs=1):
        if int(multistarts) < 1:
            raise OptimizationException("multistarts must be >= 1, got %s" % multistarts)
        if int(max_iterations) < 1:
            raise OptimizationException("max_iterations must be >= 1, got %s" % max_iterations)
        self.multistarts = int(multistarts)
        self.max_iterations = int(max_iterations)
        self.gtol = float(gtol)
        self.seed = int(seed)
        self.jobs = jobs

    def starts(self, space):
        """ Multistart points drawn uniformly in the box, reproducible from the seed """
        rng = np.random.default_rng(self.seed)
        return space.lower + space.width * rng.random((self.multistarts, space.dim))


class Chi2Terms(object):
    """ The bins entering a weighted chi2: included by the mask and with non-zero weight.

        Only these bins are ever evaluated on the surrogate.
    """

    def __init__(self, ref, weights=None, mask=None):
        keep = mask.bin_mask(ref) if mask is not None else np.ones(ref.total_bins, dtype=bool)
        if weights is not None:
            w_obs = weights.as_array(ref.ids)
        else:
            w_obs = np.ones(len(ref))
        w_bin = w_obs[ref.observable_of_bin]
        keep &= w_bin > 0
        self.bins = np.flatnonzero(keep)
        self.weights = w_bin[self.bins]
        self.values = ref.values[self.bins]
        self.variances = ref.uncertainties[self.bins] ** 2
        self.observables = ref.observable_of_bin[self.bins]
        self.n_observables = len(ref)

    def __len__(self):
        return len(self.bins)

    def bin_terms(self, s, p):
        """ (f_b - R_b)^2 / (df_b^2 + dR_b^2) for every bin, unweighted """
        ev = s.evaluate(p, bins=self.bins)
        r = ev.values - self.values
        return r * r / (ev.uncertainties ** 2 + self.variances)

    def value(self, s, p):
        if not len(self):
            return 0.0
        return float(np.sum(self.weights * self.bin_terms(s, p)))

    def value_and_gradient(self, s, p):
        if not len(self):
            return 0.0, np.zeros(s.dim)
        ev, grad_f, grad_df = s.evaluate_with_gradient(p, bins=self.bins)
        r = ev.values - self.values
        denom = ev.uncertainties ** 2 + self.variances
        value = float(np.sum(self.weights * r * r / denom))
        # d/dp of r^2/D with D = df^2 + dR^2
        coef_f = self.weights * 2.0 * r / denom
        coef_df = self.weights * 2.0 * r * r * ev.uncertainties / denom ** 2
        grad = coef_f @ grad_f - coef_df @ grad_df
        return value, grad

    def observable_means(self, s, p):
        """ Mean bin term per observable (NaN where an observable has no bins) """
        terms = self.bin_terms(s, p)
        sums = np.bincount(self.observables, weights=terms, minlength=self.n_observables)
        counts = np.bincount(self.observables, minlength=self.n_observables)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def chi2(p, w, s, ref, mask=None):
    """ sum_O w_O sum_b (f_b(p) - R_b)^2 / (df_b(p)^2 + dR_b^2) over the bins the mask keeps """
    return Chi2Terms(ref, w, mask).value(s, np.asarray(p, dtype=float))


def chi2_gradient(p, w, s, ref, mask=None):
    return Chi2Terms(ref, w, mask).value_and_gradient(s, np.asarray(p, dtype=float))[1]


def per_observable_chi2(p, s, ref, id, mask=None):
    """ chi2 of one observable averaged over its (kept) bins """
    ref[id]  # raises on unknown ids
    terms = Chi2Terms(ref, WeightVector({id: 1.0}), mask)
    if not len(terms):
        raise DataException("Observable '%s' has no bins left after masking" % id)
    return float(np.mean(terms.bin_terms(s, np.asarray(p, dtype=float))))


def per_observable_chi2s(p, s, ref, mask=None):
    """ per_observable_chi2 for every observable in ref order; excluded observables give NaN """
    return Chi2Terms(ref, None, mask).observable_means(s, np.asarray(p, dtype=float))


def local_solve(job):
    """ One bounded quasi-Newton descent. Returns (p, value) or None when the start fails """
    terms, s, start, cfg = job
    space = s.space
    try:
        res = minimize(lambda p: terms.value_and_gradient(s, p), start, jac=True, method="L-BFGS-B",
                       bounds=list(zip(space.lower, space.upper)),
                       options={"maxiter": cfg.max_iterations, "gtol": cfg.gtol, "ftol": FTOL})
        p = space.clip(res.x)
        value = terms.value(s, p)
    except (SurrogateException, FloatingPointError, ValueError, np.linalg.LinAlgError) as e:
        logger.debug("Start %s failed: %s", start, e)
        return None
    if not np.isfinite(value):
        return None
    return p, value


def best_of(results):
    """ Smallest value, ties broken by the smallest start index """
    best = None
    for result in results:
        if result is not None and (best is None or result[1] < best[1]):
            best = result
    return best


def _minimize_terms(terms, s, cfg, x0=None, jobs=None):
    starts = cfg.starts(s.space)
    if x0 is not None:
        starts = np.vstack([s.space.clip(np.asarray(x0, dtype=float)), starts])
    queue = [(terms, s, start, cfg) for start in starts]
    best = best_of(parallel_map(local_solve, queue, cfg.jobs if jobs is None else jobs))
    if best is None:
        raise OptimizationException("All %d starts of the chi2 minimization failed" % len(starts))
    return best


def minimize_chi2(w, s, ref, mask=None, cfg=None, x0=None):
    """ p_hat = argmin_p chi2(p, w) by multistart L-BFGS-B.

        The solve runs on normalized weights, so the argmin does not depend on their scale.
        Returns (p_hat, chi2(p_hat, w)) with the value under the weights as given.
    """
    cfg = cfg or Chi2Config()
    terms = Chi2Terms(ref, normalize_weights(w), mask)
    if not len(terms):
        raise OptimizationException("No bins with non-zero weight to tune to")
    p_hat, _ = _minimize_terms(terms, s, cfg, x0)
    return p_hat, Chi2Terms(ref, w, mask).value(s, p_hat)


class IdealTuneTable(object):
    """ Per observable: the parameters minimizing its own chi2 and the chi2 reached there """

    def __init__(self, entries):
        self.entries = OrderedDict()
        for id, (p_ideal, chi_ideal) in entries.items():
            if not chi_ideal >= 0:
                raise DataException("Ideal chi2 of observable '%s' must be >= 0, got %r" % (id, chi_ideal))
            self.entries[id] = (np.asarray(p_ideal, dtype=float), float(chi_ideal))

    @property
    def ids(self):
        return list(self.entries.keys())

    def __len__(self):
        return len(self.entries)

    def __contains__(self, id):
        return id in self.entries

    def p_ideal(self, id):
        return self.entries[id][0]

    def chi_ideal(self, id):
        return self.entries[id][1]

    def to_dict(self):
        return [OrderedDict([("id", id), ("p_ideal", p.tolist()), ("chi_ideal", c)])
                for id, (p, c) in self.entries.items()]

    @staticmethod
    def from_dict(data, source="<document>"):
        try:
            return IdealTuneTable(OrderedDict((e["id"], (e["p_ideal"], e["chi_ideal"])) for e in data))
        except (KeyError, TypeError) as e:
            raise DataException("'%s': malformed ideal tune table (%s)" % (source, e))


def save_ideal_tunes(table, path):
    dict_to_json_file(table.to_dict(), path)


def load_ideal_tunes(path):
    return IdealTuneTable.from_dict(json_file_to_dict(path), source=path)


def ideal_tune_worker(job):
    id, terms, s, cfg = job
    p, value = _minimize_terms(terms, s, cfg, jobs=1)
    return id, p, value / len(terms)


def ideal_tunes(s, ref, cfg=None, mask=None):
    """ Minimize every observable's own chi2 separately, with the same multistart scheme """
    cfg = cfg or Chi2Config()
    ids = ref.ids if mask is None else mask.active_ids(ref)
    queue = []
    for id in ids:
        terms = Chi2Terms(ref, WeightVector({id: 1.0}), mask)
        if len(terms):
            queue.append((id, terms, s, cfg))
    entries = OrderedDict()
    for id, p, chi in parallel_map(ideal_tune_worker, queue, cfg.jobs):
        entries[id] = (p, chi)
    logger.info("Computed ideal tunes of %d observables", len(entries))
    return IdealTuneTable(entries)
