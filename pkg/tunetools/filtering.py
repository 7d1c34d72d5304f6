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
from scipy.stats import chi2 as chi2_distribution

from tunetools import settings
from tunetools.utils import FilterException, NotApplicableException, construct_enum, enum_values
from tunetools.data_model import FilterMask, WeightVector
from tunetools.surrogate import envelope
from tunetools.chi2 import Chi2Config, Chi2Terms, ideal_tunes, minimize_chi2

logger = logging.getLogger(__name__)

FilterMode = construct_enum(NONE="none", OBSERVABLE="observable", BIN="bin")
FILTER_MODES = enum_values(FilterMode)


class HypothesisConfig(object):
    """ Significance level of the bin test; d is the number of tuned parameters """

    def __init__(self, d, alpha=settings.ALPHA):
        self.alpha = float(alpha)
        self.d = int(d)
        if not 0.0 < self.alpha < 1.0:
            raise FilterException("alpha must be in (0, 1), got %g" % self.alpha)
        if self.d < 1:
            raise FilterException("the parameter count d must be >= 1, got %d" % self.d)

    def limit(self, length):
        """ Largest bin-term sum a window of this length may have """
        if length <= self.d:
            return np.inf
        return length * chi2_critical(length - self.d, self.alpha)


def chi2_critical(rho, alpha=settings.ALPHA):
    """ The (1 - alpha) quantile of the chi2 distribution with rho degrees of freedom """
    if rho < 1:
        raise FilterException("chi2 critical value needs rho >= 1, got %d" % rho)
    if not 0.0 < alpha < 1.0:
        raise FilterException("alpha must be in (0, 1), got %g" % alpha)
    return float(chi2_distribution.ppf(1.0 - alpha, rho))


def envelope_prefilter(ref, grid):
    """ Exclude observables with no data bin inside the min/max band of the MC runs """
    excluded = []
    for id, (lo, hi) in envelope(grid, ref).items():
        R = ref[id].values
        if not np.any((lo <= R) & (R <= hi)):
            excluded.append(id)
    if excluded:
        logger.info("Envelope pre-filter excludes %d of %d observables", len(excluded), len(ref))
    return FilterMask(excluded)


def zscore_outliers(chis, threshold=settings.ZSCORE_THRESHOLD):
    """ Indices whose Z-score (population standard deviation) is >= threshold """
    chis = np.asarray(chis, dtype=float)
    if len(chis) < 2:
        raise FilterException("Z-score filtering needs at least 2 observables, got %d" % len(chis))
    std = np.std(chis)
    if std == 0:
        return set()
    z = (chis - np.mean(chis)) / std
    return set(int(i) for i in np.flatnonzero(z >= threshold))


def brute_force_window(terms, cfg):
    """ Longest feasible (start, end), 1-based inclusive, by enumerating every window.
        Ties go to the lowest mean, then the first start. None if no window is longer than d.
    """
    n = len(terms)
    prefix = np.concatenate([[0.0], np.cumsum(terms)])
    for length in range(n, cfg.d, -1):
        limit = cfg.limit(length)
        sums = prefix[length:] - prefix[:n - length + 1]
        feasible = np.flatnonzero(sums <= limit)
        if len(feasible):
            start = int(feasible[np.argmin(sums[feasible])])
            return start + 1, start + length
    return None


def sliding_window(terms, cfg):
    """ Single pass: grow the window while the sum stays under the limit of the next
        length, otherwise slide it one bin. Followed by a one-bin shift towards
        smaller terms at the edges.
    """
    x = np.concatenate([[0.0], np.asarray(terms, dtype=float)])  # 1-based
    n = len(terms)
    total, size, s, e, tau = 0.0, 0, 0, 0, 1
    for b in range(1, n + 1):
        if total + x[b] <= cfg.limit(size + 1):
            total += x[b]
            size += 1
            s, e = tau, b
        elif total != 0:
            total += x[b] - x[b - size]
            tau = b - size + 1
    if e == 0:
        return None
    if s > 1 and x[s - 1] < x[e]:
        s, e = s - 1, e - 1
    elif e < n and x[s] > x[e + 1]:
        s, e = s + 1, e + 1
    return s, e


def window_mean(terms, window):
    return float(np.mean(terms[window[0] - 1:window[1]]))


def bin_window(terms, cfg):
    """ Largest contiguous window passing its own chi2 test, or None """
    terms = np.asarray(terms, dtype=float)
    if len(terms) <= cfg.d:
        raise NotApplicableException("%d bins, not more than d=%d" % (len(terms), cfg.d))
    best = brute_force_window(terms, cfg)
    found = sliding_window(terms, cfg)
    if best is None:
        return None
    if found is not None:
        length = found[1] - found[0] + 1
        feasible = length > cfg.d and np.sum(terms[found[0] - 1:found[1]]) <= cfg.limit(length)
        if feasible and length == best[1] - best[0] + 1:
            return found
    logger.warning("Sliding bin window %s misses the longest feasible window %s; using the latter", found, best)
    return best


def bin_filter(id, s, ref, cfg, inner_cfg=None, p_ideal=None):
    """ Kept window (start, end) of one observable at its ideal tune, or None when no
        window longer than d passes. NotApplicableException when |O| <= d.
    """
    obs = ref[id]
    if len(obs) <= cfg.d:
        raise NotApplicableException("Bin filter not applicable to '%s': %d bins, d=%d" % (id, len(obs), cfg.d))
    if p_ideal is None:
        p_ideal, _ = minimize_chi2(WeightVector({id: 1.0}), s, ref, None, inner_cfg or Chi2Config())
    terms = Chi2Terms(ref, WeightVector({id: 1.0})).bin_terms(s, p_ideal)
    return bin_window(terms, cfg)


def _filter_row(id, bins, removed, critical, before, after, excluded):
    return OrderedDict([("observable", id), ("bins", bins), ("bins_removed", removed),
                        ("critical_value", critical), ("statistic_before", before),
                        ("statistic_after", after), ("excluded", excluded)])


def apply_filters(ref, s, mode=FilterMode.NONE, alpha=settings.ALPHA, threshold=settings.ZSCORE_THRESHOLD,
                  grid=None, inner_cfg=None, ideal=None, report=None):
    """ Mask for the chosen filter mode, after the envelope pre-filter when grid is given.

        ideal: an IdealTuneTable to reuse; computed when missing and needed.
        report: optional list receiving one row per filtered observable.
    """
    if mode not in FILTER_MODES:
        raise FilterException("Unknown filter mode '%s' (%s)" % (mode, ", ".join(FILTER_MODES)))
    report = report if report is not None else []
    mask = envelope_prefilter(ref, grid) if grid is not None else FilterMask()
    for id in sorted(mask.excluded_observables):
        report.append(_filter_row(id, len(ref[id]), len(ref[id]), None, None, None, "envelope"))
    if mode == FilterMode.NONE:
        return mask

    active = mask.active_ids(ref)
    inner_cfg = inner_cfg or Chi2Config()
    if ideal is None or any(id not in ideal for id in active):
        ideal = ideal_tunes(s, ref, inner_cfg, mask)

    if mode == FilterMode.OBSERVABLE:
        chis = [ideal.chi_ideal(id) for id in active]
        outliers = zscore_outliers(chis, threshold)
        excluded = [active[i] for i in sorted(outliers)]
        for i in sorted(outliers):
            id = active[i]
            report.append(_filter_row(id, len(ref[id]), len(ref[id]), threshold, chis[i], None, "zscore"))
        logger.info("Observable filter: %d Z-score outliers among %d observables", len(excluded), len(active))
        return mask.merge(FilterMask(excluded))

    cfg = HypothesisConfig(s.dim, alpha)
    excluded, ranges = [], OrderedDict()
    for id in active:
        n = len(ref[id])
        if n <= cfg.d:
            logger.debug("Bin filter not applicable to '%s' (%d bins)", id, n)
            continue
        p = ideal.p_ideal(id)
        terms = Chi2Terms(ref, WeightVector({id: 1.0})).bin_terms(s, p)
        window = bin_window(terms, cfg)
        before = float(np.mean(terms))
        if window is None:
            excluded.append(id)
            report.append(_filter_row(id, n, n, None, before, None, "bins"))
        elif window != (1, n):
            length = window[1] - window[0] + 1
            ranges[id] = window
            report.append(_filter_row(id, n, n - length, chi2_critical(length - cfg.d, alpha), before,
                                      window_mean(terms, window), None))
    logger.info("Bin filter: %d observables trimmed, %d fully removed", len(ranges), len(excluded))
    return mask.merge(FilterMask(excluded, ranges))
