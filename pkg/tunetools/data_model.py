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

# Shared domain types: parameter space, reference data, MC run grids, weights,
# filter masks and tune results, together with their document formats.
import logging
from collections import OrderedDict, namedtuple

import numpy as np

from tunetools.utils import DataException, json_file_to_dict, dict_to_json_file, construct_enum

logger = logging.getLogger(__name__)

Method = construct_enum(BILEVEL_PORTFOLIO='bilevel-portfolio',
                        BILEVEL_MEANSCORE='bilevel-meanscore',
                        BILEVEL_MEDIANSCORE='bilevel-medianscore',
                        ROBUST='robust',
                        EQUAL_WEIGHTS='all-weights-equal')

METHODS = [Method.BILEVEL_PORTFOLIO, Method.BILEVEL_MEANSCORE, Method.BILEVEL_MEDIANSCORE,
           Method.ROBUST, Method.EQUAL_WEIGHTS]

# Sum-to-one tolerance of a normalized weight vector
NORMALIZED_TOL = 1e-12


def _frozen(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class ParameterSpace(object):
    """ Names and box bounds of the d tunable parameters """

    def __init__(self, names, lower, upper):
        self.names = tuple(str(n) for n in names)
        self.lower = _frozen(lower)
        self.upper = _frozen(upper)
        if not self.names:
            raise DataException("Parameter space needs at least one parameter")
        if len(set(self.names)) != len(self.names):
            dups = sorted(set(n for n in self.names if self.names.count(n) > 1))
            raise DataException("Duplicate parameter name(s) '%s'" % ",".join(dups))
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise DataException("Parameter bounds must have %d entries" % self.dim)
        for name, lo, hi in zip(self.names, self.lower, self.upper):
            if not lo < hi:
                raise DataException("Parameter '%s': lower bound %r is not below upper bound %r"
                                    % (name, float(lo), float(hi)))

    @property
    def dim(self):
        return len(self.names)

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.width))

    def contains(self, p, tol=0.0):
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def clip(self, p):
        return np.clip(np.asarray(p, dtype=float), self.lower, self.upper)

    def to_unit(self, p):
        """ Affine map of the box onto [-1, 1]^d """
        return 2.0 * (np.asarray(p, dtype=float) - self.lower) / self.width - 1.0

    def from_unit(self, x):
        return self.lower + 0.5 * (np.asarray(x, dtype=float) + 1.0) * self.width

    def __eq__(self, other):
        return (isinstance(other, ParameterSpace) and self.names == other.names
                and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "ParameterSpace(%s)" % ", ".join(
            "%s=[%g, %g]" % (n, lo, hi) for n, lo, hi in zip(self.names, self.lower, self.upper))

    def to_dict(self):
        return OrderedDict([("names", list(self.names)),
                            ("lower", self.lower.tolist()),
                            ("upper", self.upper.tolist())])

    @staticmethod
    def from_dict(data, source="<document>"):
        try:
            return ParameterSpace(data["names"], data["lower"], data["upper"])
        except (KeyError, TypeError) as e:
            raise DataException("'%s': malformed parameter block (%s)" % (source, e))


class Observable(object):
    """ A binned measurement: values R_b and symmetric uncertainties dR_b """

    def __init__(self, id, values, uncertainties, group=None):
        self.id = str(id)
        self.group = group
        self.values = _frozen(values)
        self.uncertainties = _frozen(uncertainties)
        if self.values.ndim != 1 or len(self.values) < 1:
            raise DataException("Observable '%s' has no bins" % self.id)
        if self.uncertainties.shape != self.values.shape:
            raise DataException("Observable '%s': %d values but %d uncertainties"
                                % (self.id, len(self.values), len(self.uncertainties)))
        for b, unc in enumerate(self.uncertainties):
            if not unc > 0:
                raise DataException("Observable '%s', bin %d: uncertainty must be positive, got %r"
                                    % (self.id, b + 1, float(unc)))

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return (isinstance(other, Observable) and self.id == other.id and self.group == other.group
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.uncertainties, other.uncertainties))

    def __ne__(self, other):
        return not self == other

    def to_dict(self):
        data = OrderedDict([("id", self.id)])
        if self.group is not None:
            data["group"] = self.group
        data["bins"] = [OrderedDict([("value", float(v)), ("uncertainty", float(u))])
                        for v, u in zip(self.values, self.uncertainties)]
        return data


class ReferenceSet(object):
    """ The set of observables used for tuning.

        Bins are laid out in one flat column order: observables in document order,
        bins in file order. Every array indexed by bin uses this order.
    """

    def __init__(self, observables):
        self.observables = tuple(observables)
        if not self.observables:
            raise DataException("no observables")
        self.index = OrderedDict()
        for pos, obs in enumerate(self.observables):
            if obs.id in self.index:
                raise DataException("duplicate observable id '%s'" % obs.id)
            self.index[obs.id] = pos

        self.slices = OrderedDict()
        start = 0
        for obs in self.observables:
            self.slices[obs.id] = slice(start, start + len(obs))
            start += len(obs)

        self.values = _frozen(np.concatenate([o.values for o in self.observables]))
        self.uncertainties = _frozen(np.concatenate([o.uncertainties for o in self.observables]))
        self.bin_counts = _frozen([len(o) for o in self.observables], dtype=int)
        self.observable_of_bin = _frozen(np.repeat(np.arange(len(self.observables)), self.bin_counts),
                                         dtype=int)

    @property
    def ids(self):
        return list(self.index.keys())

    @property
    def total_bins(self):
        return int(self.bin_counts.sum())

    def __len__(self):
        return len(self.observables)

    def __iter__(self):
        return iter(self.observables)

    def __contains__(self, id):
        return id in self.index

    def __getitem__(self, id):
        try:
            return self.observables[self.index[id]]
        except KeyError:
            raise DataException("Unknown observable '%s'" % id)

    def __eq__(self, other):
        return isinstance(other, ReferenceSet) and self.observables == other.observables

    def __ne__(self, other):
        return not self == other

    def to_dict(self):
        return OrderedDict([("observables", [o.to_dict() for o in self.observables])])


def reference_from_dict(data, source="<document>"):
    if not isinstance(data, dict) or "observables" not in data:
        raise DataException("'%s': missing top-level \"observables\" list" % source)
    observables = []
    for pos, item in enumerate(data["observables"] or []):
        try:
            bins = item["bins"]
            values = [b["value"] for b in bins]
            uncertainties = [b["uncertainty"] for b in bins]
            observables.append(Observable(item["id"], values, uncertainties, item.get("group")))
        except (KeyError, TypeError) as e:
            raise DataException("'%s': observable record %d is malformed (missing %s)"
                                % (source, pos + 1, e))
        except DataException as e:
            raise DataException("'%s': %s" % (source, e))
    if not observables:
        raise DataException("'%s': no observables" % source)
    try:
        return ReferenceSet(observables)
    except DataException as e:
        raise DataException("'%s': %s" % (source, e))


def load_reference(path):
    return reference_from_dict(json_file_to_dict(path), source=path)


def write_reference(ref, path):
    dict_to_json_file(ref.to_dict(), path)


class MCRunGrid(object):
    """ Sampled parameter points and the simulator's per-bin predictions.

        values[id] and uncertainties[id] are (n_runs x |O|) matrices whose
        columns follow the bin order of the reference set.
    """

    def __init__(self, space, points, values, uncertainties):
        self.space = space
        self.points = _frozen(np.atleast_2d(points))
        self.values = OrderedDict((k, _frozen(np.atleast_2d(v))) for k, v in values.items())
        self.uncertainties = OrderedDict((k, _frozen(np.atleast_2d(v))) for k, v in uncertainties.items())
        if self.points.shape[0] < 1:
            raise DataException("MC run grid has no runs")
        if self.points.shape[1] != space.dim:
            raise DataException("MC run points have %d coordinates, parameter space has %d"
                                % (self.points.shape[1], space.dim))
        for run, point in enumerate(self.points):
            outside = (point < space.lower) | (point > space.upper)
            if np.any(outside):
                i = int(np.argmax(outside))
                raise DataException("Run %d: point outside parameter bounds ('%s' = %r not in [%r, %r])"
                                    % (run + 1, space.names[i], float(point[i]),
                                       float(space.lower[i]), float(space.upper[i])))
        for id, mat in self.values.items():
            if mat.shape[0] != self.n_runs or self.uncertainties[id].shape != mat.shape:
                raise DataException("Observable '%s': predictions do not cover %d runs"
                                    % (id, self.n_runs))

    @property
    def n_runs(self):
        return self.points.shape[0]

    @property
    def ids(self):
        return list(self.values.keys())

    def check_layout(self, ref):
        for obs in ref:
            if obs.id not in self.values:
                raise DataException("MC runs have no predictions for observable '%s'" % obs.id)
            nbins = self.values[obs.id].shape[1]
            if nbins != len(obs):
                raise DataException("Observable '%s': MC runs have %d bins, reference has %d"
                                    % (obs.id, nbins, len(obs)))

    def bin_values(self, ref):
        """ (n_runs x total_bins) matrix in the reference column order """
        self.check_layout(ref)
        return np.hstack([self.values[o.id] for o in ref])

    def bin_uncertainties(self, ref):
        self.check_layout(ref)
        return np.hstack([self.uncertainties[o.id] for o in ref])

    def to_dict(self):
        runs = []
        for i, point in enumerate(self.points):
            runs.append(OrderedDict([
                ("point", point.tolist()),
                ("observables", OrderedDict(
                    (id, OrderedDict([("values", self.values[id][i].tolist()),
                                      ("uncertainties", self.uncertainties[id][i].tolist())]))
                    for id in self.values)),
            ]))
        return OrderedDict([("params", self.space.to_dict()), ("runs", runs)])


def mc_runs_from_dict(data, ref, source="<document>"):
    if not isinstance(data, dict) or "params" not in data:
        raise DataException("'%s': missing \"params\" block" % source)
    space = ParameterSpace.from_dict(data["params"], source)
    runs = data.get("runs") or []
    if len(runs) < 1:
        raise DataException("'%s': fewer runs than 1" % source)
    if len(runs) == 1:
        logger.warning("'%s' holds a single MC run; surrogate fits above degree 0 will fail", source)

    points = []
    values = OrderedDict((o.id, []) for o in ref)
    uncertainties = OrderedDict((o.id, []) for o in ref)
    for r, run in enumerate(runs):
        point = run.get("point")
        if point is None or len(point) != space.dim:
            raise DataException("'%s': run %d must have a point with %d coordinates"
                                % (source, r + 1, space.dim))
        points.append(point)
        predictions = run.get("observables", {})
        for obs in ref:
            if obs.id not in predictions:
                raise DataException("'%s': run %d has no predictions for observable '%s'"
                                    % (source, r + 1, obs.id))
            pred = predictions[obs.id]
            vals = pred.get("values", [])
            uncs = pred.get("uncertainties")
            if uncs is None:
                uncs = [0.0] * len(vals)
            if len(vals) != len(obs) or len(uncs) != len(obs):
                raise DataException("'%s': run %d, observable '%s' has %d bins, reference has %d"
                                    % (source, r + 1, obs.id, len(vals), len(obs)))
            values[obs.id].append(vals)
            uncertainties[obs.id].append(uncs)
        extra = set(predictions) - set(values)
        if extra and r == 0:
            logger.debug("Ignoring MC predictions for observables not in the reference: %s",
                         ", ".join(sorted(extra)))
    try:
        return MCRunGrid(space, np.array(points, dtype=float), values, uncertainties)
    except DataException as e:
        raise DataException("'%s': %s" % (source, e))


def load_mc_runs(path, ref):
    return mc_runs_from_dict(json_file_to_dict(path), ref, source=path)


def write_mc_runs(grid, path):
    dict_to_json_file(grid.to_dict(), path)


class WeightVector(object):
    """ Non-negative per-observable weights, keyed by observable id """

    def __init__(self, weights):
        self.weights = OrderedDict((str(k), float(v)) for k, v in weights.items())
        for k, v in self.weights.items():
            if not (v >= 0 and np.isfinite(v)):
                raise DataException("Weight of observable '%s' must be finite and >= 0, got %r" % (k, v))

    @staticmethod
    def from_array(ids, values):
        return WeightVector(OrderedDict(zip(ids, np.asarray(values, dtype=float).tolist())))

    @staticmethod
    def equal(ids):
        return WeightVector(OrderedDict((id, 1.0) for id in ids))

    @property
    def ids(self):
        return list(self.weights.keys())

    @property
    def total(self):
        return float(sum(self.weights.values()))

    @property
    def normalized(self):
        return abs(self.total - 1.0) <= NORMALIZED_TOL

    def __getitem__(self, id):
        return self.weights[id]

    def __len__(self):
        return len(self.weights)

    def __eq__(self, other):
        return isinstance(other, WeightVector) and self.weights == other.weights

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "WeightVector(%s)" % ", ".join("%s=%g" % kv for kv in self.weights.items())

    def as_array(self, ids):
        """ Weights in the given id order; ids without an entry weigh 0 """
        return np.array([self.weights.get(id, 0.0) for id in ids], dtype=float)

    def to_dict(self):
        return OrderedDict(self.weights)


def normalize_weights(w):
    total = w.total
    if not total > 0:
        raise DataException("trivial solution: all weights are zero")
    return WeightVector(OrderedDict((k, v / total) for k, v in w.weights.items()))


def load_weights(path, ref=None):
    data = json_file_to_dict(path)
    if not isinstance(data, dict):
        raise DataException("'%s': weight file must map observable ids to numbers" % path)
    if ref is not None:
        unknown = [k for k in data if k not in ref]
        if unknown:
            raise DataException("'%s': unknown observable(s) '%s'" % (path, ",".join(unknown)))
    return WeightVector(data)


def write_weights(w, path):
    dict_to_json_file(w.to_dict(), path)


class FilterMask(object):
    """ Observables excluded from tuning and contiguous bin windows kept per observable.

        Bin windows are 1-based and inclusive, as (start, end).
    """

    def __init__(self, excluded_observables=(), kept_bin_range=None):
        self.excluded_observables = frozenset(excluded_observables)
        self.kept_bin_range = OrderedDict()
        for id, window in (kept_bin_range or {}).items():
            if window is None:
                continue
            start, end = int(window[0]), int(window[1])
            if id in self.excluded_observables:
                raise DataException("Observable '%s' is excluded and can't have a bin range" % id)
            if start < 1 or end < start:
                raise DataException("Observable '%s': invalid bin range (%d, %d)" % (id, start, end))
            self.kept_bin_range[id] = (start, end)

    def is_empty(self):
        return not self.excluded_observables and not self.kept_bin_range

    def validate(self, ref):
        for id in self.excluded_observables:
            if id not in ref:
                raise DataException("Mask excludes unknown observable '%s'" % id)
        for id, (start, end) in self.kept_bin_range.items():
            if id not in ref:
                raise DataException("Mask has a bin range for unknown observable '%s'" % id)
            if end > len(ref[id]):
                raise DataException("Observable '%s': bin range (%d, %d) exceeds %d bins"
                                    % (id, start, end, len(ref[id])))
        if not self.active_ids(ref):
            raise DataException("Mask excludes every observable")

    def active_ids(self, ref):
        return [id for id in ref.ids if id not in self.excluded_observables]

    def bin_mask(self, ref):
        """ Boolean array over the flat bins of ref, True where a bin is used """
        keep = np.ones(ref.total_bins, dtype=bool)
        for id in self.excluded_observables:
            keep[ref.slices[id]] = False
        for id, (start, end) in self.kept_bin_range.items():
            sl = ref.slices[id]
            local = np.zeros(len(ref[id]), dtype=bool)
            local[start - 1:end] = True
            keep[sl] &= local
        return keep

    def merge(self, other):
        excluded = self.excluded_observables | other.excluded_observables
        ranges = OrderedDict()
        for mask in (self, other):
            for id, (start, end) in mask.kept_bin_range.items():
                if id in excluded:
                    continue
                if id in ranges:
                    start, end = max(start, ranges[id][0]), min(end, ranges[id][1])
                    if end < start:
                        excluded = excluded | {id}
                        del ranges[id]
                        continue
                ranges[id] = (start, end)
        return FilterMask(excluded, ranges)

    def __eq__(self, other):
        return (isinstance(other, FilterMask)
                and self.excluded_observables == other.excluded_observables
                and dict(self.kept_bin_range) == dict(other.kept_bin_range))

    def __ne__(self, other):
        return not self == other

    def to_dict(self):
        return OrderedDict([
            ("excluded_observables", sorted(self.excluded_observables)),
            ("kept_bin_range", OrderedDict((k, list(v)) for k, v in self.kept_bin_range.items())),
        ])

    @staticmethod
    def from_dict(data):
        return FilterMask(data.get("excluded_observables", []),
                          OrderedDict((k, tuple(v)) for k, v in data.get("kept_bin_range", {}).items()))


def load_mask(path):
    return FilterMask.from_dict(json_file_to_dict(path))


def write_mask(mask, path):
    dict_to_json_file(mask.to_dict(), path)


# One evaluated point of a tuning run: the weights tried, the inner optimum and
# the objective value reached there
HistoryEntry = namedtuple("HistoryEntry", ["weights", "p_hat", "value"])


class TuneResult(object):
    def __init__(self, method, weights, p_star, objective_value, history=(), mask=None, seed=0,
                 metadata=None):
        if method not in METHODS:
            raise DataException("Unknown tuning method '%s'" % method)
        self.method = method
        self.weights = weights
        self.p_star = _frozen(p_star)
        self.objective_value = float(objective_value)
        self.history = list(history)
        self.mask = mask if mask is not None else FilterMask()
        self.seed = int(seed)
        self.metadata = OrderedDict(metadata or {})

    def to_dict(self):
        return OrderedDict([
            ("method", self.method),
            ("weights", self.weights.to_dict()),
            ("p_star", self.p_star.tolist()),
            ("objective_value", self.objective_value),
            ("history", [OrderedDict([("weights", h.weights.to_dict()),
                                      ("p_hat", None if h.p_hat is None else list(h.p_hat)),
                                      ("value", h.value)])
                         for h in self.history]),
            ("mask", self.mask.to_dict()),
            ("seed", self.seed),
            ("metadata", self.metadata),
        ])

    @staticmethod
    def from_dict(data):
        # infinite values are stored as "inf", which float() reads back
        history = [HistoryEntry(WeightVector(h["weights"]),
                                None if h["p_hat"] is None else np.array(h["p_hat"], dtype=float),
                                float(h["value"]))
                   for h in data.get("history", [])]
        return TuneResult(data["method"], WeightVector(data["weights"]), data["p_star"],
                          float(data["objective_value"]), history,
                          FilterMask.from_dict(data.get("mask", {})), data.get("seed", 0),
                          data.get("metadata"))


def load_result(path):
    try:
        return TuneResult.from_dict(json_file_to_dict(path))
    except KeyError as e:
        raise DataException("'%s': tune result is missing %s" % (path, e))


def write_result(result, path):
    dict_to_json_file(result.to_dict(), path)
