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

# Per-bin analytic surrogates f_b(p) and df_b(p) fitted to an MC run grid.
# Parameters are mapped onto [-1, 1]^d before the monomial basis is built.
import logging
from itertools import combinations_with_replacement
from collections import OrderedDict, namedtuple
from math import comb

import numpy as np

from tunetools.utils import SurrogateException, parallel_map, json_file_to_dict, dict_to_json_file
from tunetools.data_model import ParameterSpace
from tunetools import settings

logger = logging.getLogger(__name__)

POLYNOMIAL = "polynomial"
RATIONAL = "rational"
SURROGATE_KINDS = [POLYNOMIAL, RATIONAL]

# Result of evaluating a surrogate set at one parameter point
Evaluation = namedtuple("Evaluation", ["values", "uncertainties", "extrapolated"])


def n_terms(dim, degree):
    return comb(dim + degree, degree)


class MonomialBasis(object):
    """ Monomials of total degree <= degree in dim variables, graded order:
        1, x1, ..., xd, x1^2, x1 x2, ...
    """

    def __init__(self, dim, degree):
        if degree < 0:
            raise SurrogateException("Polynomial degree must be >= 0, got %d" % degree)
        self.dim = dim
        self.degree = degree
        exps = []
        for total in range(degree + 1):
            for combo in combinations_with_replacement(range(dim), total):
                e = [0] * dim
                for k in combo:
                    e[k] += 1
                exps.append(e)
        self.exponents = np.array(exps, dtype=int).reshape(len(exps), dim)

    def __len__(self):
        return len(self.exponents)

    def _powers(self, X):
        # powers[i, k, e] = X[i, k] ** e
        return X[:, :, None] ** np.arange(self.degree + 1)[None, None, :]

    def values(self, X):
        """ (n x terms) design matrix at the rows of X """
        X = np.atleast_2d(X)
        pw = self._powers(X)
        cols = np.arange(self.dim)[None, :]
        return np.prod(pw[:, cols, self.exponents], axis=2)

    def gradients(self, x):
        """ (terms x dim) derivatives of every monomial at the single point x """
        pw = self._powers(np.atleast_2d(x))[0]
        cols = np.arange(self.dim)[None, :]
        factors = pw[cols, self.exponents]
        lowered = self.exponents * pw[cols, np.maximum(self.exponents - 1, 0)]
        grad = np.empty((len(self), self.dim))
        for k in range(self.dim):
            others = np.prod(np.delete(factors, k, axis=1), axis=1)
            grad[:, k] = lowered[:, k] * others
        return grad


class PolynomialModel(object):
    """ One bin's polynomial in scaled coordinates """

    def __init__(self, degree, coefficients, dim):
        self.basis = MonomialBasis(dim, degree)
        self.degree = degree
        self.coefficients = np.asarray(coefficients, dtype=float)
        if len(self.coefficients) != len(self.basis):
            raise SurrogateException("Degree %d in %d dimensions needs %d coefficients, got %d"
                                     % (degree, dim, len(self.basis), len(self.coefficients)))

    def __call__(self, x):
        return float(self.basis.values(x)[0] @ self.coefficients)

    def gradient(self, x):
        return self.coefficients @ self.basis.gradients(x)


class RationalModel(object):
    """ One bin's rational n(x)/q(x) in scaled coordinates, q's constant term pinned to 1 """

    def __init__(self, num_degree, den_degree, num_coefficients, den_coefficients, dim):
        self.numerator = PolynomialModel(num_degree, num_coefficients, dim)
        self.denominator = PolynomialModel(den_degree, den_coefficients, dim)
        self.num_degree = num_degree
        self.den_degree = den_degree
        if self.denominator.coefficients[0] != 1.0:
            raise SurrogateException("Rational denominator must have constant coefficient 1")

    def __call__(self, x):
        q = self.denominator(x)
        if q <= 0:
            raise SurrogateException("Rational denominator %g <= 0" % q)
        return self.numerator(x) / q

    def gradient(self, x):
        n, q = self.numerator(x), self.denominator(x)
        if q <= 0:
            raise SurrogateException("Rational denominator %g <= 0" % q)
        return (self.numerator.gradient(x) * q - n * self.denominator.gradient(x)) / q ** 2


class FitReport(object):
    """ In-sample diagnostics of a surrogate fit """

    def __init__(self, value_rms, unc_rms, condition, n_runs, n_coefficients):
        self.value_rms = np.asarray(value_rms, dtype=float)
        self.unc_rms = np.asarray(unc_rms, dtype=float)
        self.condition = float(condition)
        self.n_runs = int(n_runs)
        self.n_coefficients = int(n_coefficients)

    def quantiles(self, qs=(0.0, 0.5, 0.9, 1.0)):
        return OrderedDict(("q%g" % (100 * q), float(np.quantile(self.value_rms, q))) for q in qs)

    def to_dict(self):
        return OrderedDict([("value_rms", self.value_rms.tolist()),
                            ("uncertainty_rms", self.unc_rms.tolist()),
                            ("condition_number", self.condition),
                            ("n_runs", self.n_runs),
                            ("n_coefficients", self.n_coefficients),
                            ("value_rms_quantiles", self.quantiles())])


class SurrogateSet(object):
    """ Value and uncertainty models for every bin of a reference set.

        Coefficients are stacked per bin (one row per bin, in the reference
        column order) so a whole set is evaluated with one matrix product.
        Denominator arrays are None for polynomial sets.
    """

    def __init__(self, kind, space, labels, num_degree, den_degree,
                 value_num, value_den, unc_num, unc_den, report=None):
        if kind not in SURROGATE_KINDS:
            raise SurrogateException("Unknown surrogate kind '%s'" % kind)
        self.kind = kind
        self.space = space
        self.labels = [(str(id), int(b)) for id, b in labels]
        self.num_degree = int(num_degree)
        self.den_degree = int(den_degree)
        self.num_basis = MonomialBasis(space.dim, self.num_degree)
        self.den_basis = MonomialBasis(space.dim, self.den_degree) if kind == RATIONAL else None
        self.value_num = self._frozen(value_num)
        self.value_den = self._frozen(value_den)
        self.unc_num = self._frozen(unc_num)
        self.unc_den = self._frozen(unc_den)
        self.report = report
        if self.value_num.shape != (len(self.labels), len(self.num_basis)):
            raise SurrogateException("Surrogate set has %s numerator coefficients for %d bins"
                                     % (self.value_num.shape, len(self.labels)))

    @staticmethod
    def _frozen(arr):
        if arr is None:
            return None
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        return arr

    @property
    def n_bins(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.space.dim

    def check_layout(self, ref):
        expected = [(o.id, b + 1) for o in ref for b in range(len(o))]
        if expected != self.labels:
            raise SurrogateException("Surrogate bins do not match the reference layout "
                                     "(%d surrogate bins, %d reference bins)" % (self.n_bins, len(expected)))

    def label(self, column):
        return "%s#%d" % self.labels[column]

    def value_model(self, column):
        return self._model(column, self.value_num, self.value_den)

    def unc_model(self, column):
        return self._model(column, self.unc_num, self.unc_den)

    def _model(self, column, num, den):
        if self.kind == POLYNOMIAL:
            return PolynomialModel(self.num_degree, num[column], self.dim)
        return RationalModel(self.num_degree, self.den_degree, num[column], den[column], self.dim)

    def _rows(self, arr, bins):
        return arr if bins is None else arr[bins]

    def _denominator(self, den, bins, psi, p):
        q = self._rows(den, bins) @ psi
        bad = q <= 0
        if np.any(bad):
            column = int(np.flatnonzero(bad)[0])
            if bins is not None:
                column = int(np.arange(self.n_bins)[bins][column])
            raise SurrogateException("Rational denominator <= 0 for bin '%s' at p = %s"
                                     % (self.label(column), np.array2string(np.asarray(p))))
        return q

    def evaluate(self, p, bins=None):
        """ f_b(p) and df_b(p) for the selected bins (all when bins is None).
            df_b is clamped to >= 0; points outside the box are extrapolated and flagged.
        """
        p = np.asarray(p, dtype=float)
        x = self.space.to_unit(p)
        phi = self.num_basis.values(x)[0]
        values = self._rows(self.value_num, bins) @ phi
        uncs = self._rows(self.unc_num, bins) @ phi
        if self.kind == RATIONAL:
            psi = self.den_basis.values(x)[0]
            values = values / self._denominator(self.value_den, bins, psi, p)
            uncs = uncs / self._denominator(self.unc_den, bins, psi, p)
        extrapolated = not self.space.contains(p)
        if extrapolated:
            logger.debug("Extrapolating surrogate outside the sampled box at p = %s", p)
        return Evaluation(values, np.maximum(uncs, 0.0), extrapolated)

    def evaluate_gradient(self, p, bins=None):
        """ Gradients with respect to p of f_b and df_b, each (n_selected x d).
            The gradient of a clamped df_b is zero.
        """
        values, uncs, grad_f, grad_df, raw_unc = self._evaluate_with_gradient(p, bins)
        return grad_f, np.where((raw_unc < 0)[:, None], 0.0, grad_df)

    def evaluate_with_gradient(self, p, bins=None):
        """ (Evaluation, grad_f, grad_df) with one basis computation """
        p = np.asarray(p, dtype=float)
        values, uncs, grad_f, grad_df, raw_unc = self._evaluate_with_gradient(p, bins)
        grad_df = np.where((raw_unc < 0)[:, None], 0.0, grad_df)
        return Evaluation(values, np.maximum(uncs, 0.0), not self.space.contains(p)), grad_f, grad_df

    def _evaluate_with_gradient(self, p, bins):
        p = np.asarray(p, dtype=float)
        x = self.space.to_unit(p)
        scale = 2.0 / self.space.width
        phi = self.num_basis.values(x)[0]
        dphi = self.num_basis.gradients(x) * scale[None, :]

        def part(num, den):
            C = self._rows(num, bins)
            n, dn = C @ phi, C @ dphi
            if self.kind == POLYNOMIAL:
                return n, dn
            psi = self.den_basis.values(x)[0]
            dpsi = self.den_basis.gradients(x) * scale[None, :]
            D = self._rows(den, bins)
            q = self._denominator(den, bins, psi, p)
            dq = D @ dpsi
            return n / q, (dn * q[:, None] - n[:, None] * dq) / (q ** 2)[:, None]

        values, grad_f = part(self.value_num, self.value_den)
        uncs, grad_df = part(self.unc_num, self.unc_den)
        return values, uncs, grad_f, grad_df, uncs

    def to_dict(self):
        def coeffs(num, den):
            data = OrderedDict([("numerator", num.tolist())])
            if den is not None:
                data["denominator"] = den.tolist()
            return data
        data = OrderedDict([
            ("kind", self.kind),
            ("num_degree", self.num_degree),
            ("den_degree", self.den_degree),
            ("params", self.space.to_dict()),
            ("bins", [list(l) for l in self.labels]),
            ("value", coeffs(self.value_num, self.value_den)),
            ("uncertainty", coeffs(self.unc_num, self.unc_den)),
        ])
        if self.report is not None:
            data["report"] = self.report.to_dict()
        return data

    @staticmethod
    def from_dict(data, source="<document>"):
        try:
            report = None
            if "report" in data:
                r = data["report"]
                report = FitReport(r["value_rms"], r["uncertainty_rms"], r["condition_number"],
                                   r["n_runs"], r["n_coefficients"])
            return SurrogateSet(data["kind"], ParameterSpace.from_dict(data["params"], source),
                                data["bins"], data["num_degree"], data["den_degree"],
                                data["value"]["numerator"], data["value"].get("denominator"),
                                data["uncertainty"]["numerator"], data["uncertainty"].get("denominator"),
                                report)
        except (KeyError, TypeError) as e:
            raise SurrogateException("'%s': malformed surrogate document (%s)" % (source, e))


def save_surrogate(s, path):
    dict_to_json_file(s.to_dict(), path)


def load_surrogate(path):
    return SurrogateSet.from_dict(json_file_to_dict(path), source=path)


def _grid_columns(grid, ref):
    if ref is not None:
        grid.check_layout(ref)
        ids = ref.ids
    else:
        ids = grid.ids
    labels = [(id, b + 1) for id in ids for b in range(grid.values[id].shape[1])]
    Y = np.hstack([grid.values[id] for id in ids])
    E = np.hstack([grid.uncertainties[id] for id in ids])
    return labels, Y, E


def fit_polynomial(grid, degree=settings.POLYNOMIAL_DEGREE, ref=None):
    """ Least-squares polynomial of total degree <= degree for every bin """
    space = grid.space
    basis = MonomialBasis(space.dim, degree)
    labels, Y, E = _grid_columns(grid, ref)
    if grid.n_runs < len(basis):
        raise SurrogateException("Degree %d in %d dimensions needs at least %d runs, got %d"
                                 % (degree, space.dim, len(basis), grid.n_runs))
    V = basis.values(space.to_unit(grid.points))
    rank = np.linalg.matrix_rank(V)
    if rank < len(basis):
        raise SurrogateException("Rank-deficient design matrix for bin '%s#%d' (rank %d < %d terms); "
                                 "add more MC runs or spread them better" % (labels[0] + (rank, len(basis))))
    value_coeffs = np.linalg.lstsq(V, Y, rcond=None)[0].T
    unc_coeffs = np.linalg.lstsq(V, E, rcond=None)[0].T
    report = FitReport(np.sqrt(np.mean((V @ value_coeffs.T - Y) ** 2, axis=0)),
                       np.sqrt(np.mean((V @ unc_coeffs.T - E) ** 2, axis=0)),
                       np.linalg.cond(V), grid.n_runs, len(basis))
    logger.info("Fitted degree %d polynomials to %d bins from %d runs (condition number %.3g)",
                degree, len(labels), grid.n_runs, report.condition)
    return SurrogateSet(POLYNOMIAL, space, labels, degree, 0, value_coeffs, None, unc_coeffs, None, report)


def fit_rational_bin(job):
    """ Linearized least squares for one bin: minimize sum (q(x_i) y_i - n(x_i))^2
        with q's constant term pinned at 1, then optional reweighting by 1/q(x_i)^2.
    """
    Phi, Psi, y, label, reweight, max_sweeps, tol = job
    n_num = Phi.shape[1]
    A = np.hstack([Phi, -y[:, None] * Psi[:, 1:]])
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    if reweight:
        for sweep in range(max_sweeps):
            q = Psi @ np.concatenate([[1.0], coef[n_num:]])
            if np.any(q <= 0):
                break
            new = np.linalg.lstsq(A / q[:, None], y / q, rcond=None)[0]
            change = np.max(np.abs(new - coef))
            coef = new
            if change < tol:
                break
    num = coef[:n_num]
    den = np.concatenate([[1.0], coef[n_num:]])
    q = Psi @ den
    if np.any(q <= 0):
        raise SurrogateException("Pole inside sampled domain for bin '%s#%d': denominator changes sign "
                                 "over the MC run points" % label)
    rms = float(np.sqrt(np.mean((Phi @ num / q - y) ** 2)))
    return num, den, rms


def fit_rational(grid, num_degree=settings.RATIONAL_NUM_DEGREE, den_degree=settings.RATIONAL_DEN_DEGREE,
                 ref=None, reweight=settings.RATIONAL_REWEIGHT, jobs=1):
    space = grid.space
    num_basis = MonomialBasis(space.dim, num_degree)
    den_basis = MonomialBasis(space.dim, den_degree)
    labels, Y, E = _grid_columns(grid, ref)
    needed = len(num_basis) + len(den_basis) - 1
    if grid.n_runs < needed:
        raise SurrogateException("Rational (%d, %d) in %d dimensions needs at least %d runs, got %d"
                                 % (num_degree, den_degree, space.dim, needed, grid.n_runs))
    X = space.to_unit(grid.points)
    Phi, Psi = num_basis.values(X), den_basis.values(X)

    def fit_all(data):
        queue = [(Phi, Psi, data[:, i], labels[i], reweight, settings.RATIONAL_MAX_SWEEPS,
                  settings.RATIONAL_SWEEP_TOL) for i in range(len(labels))]
        fits = parallel_map(fit_rational_bin, queue, jobs)
        return (np.array([f[0] for f in fits]), np.array([f[1] for f in fits]),
                np.array([f[2] for f in fits]))

    value_num, value_den, value_rms = fit_all(Y)
    unc_num, unc_den, unc_rms = fit_all(E)
    report = FitReport(value_rms, unc_rms, np.linalg.cond(np.hstack([Phi, Psi[:, 1:]])),
                       grid.n_runs, needed)
    logger.info("Fitted rational (%d, %d) models to %d bins from %d runs",
                num_degree, den_degree, len(labels), grid.n_runs)
    return SurrogateSet(RATIONAL, space, labels, num_degree, den_degree,
                        value_num, value_den, unc_num, unc_den, report)


def fit_surrogates(grid, kind=settings.SURROGATE_KIND, degree=settings.POLYNOMIAL_DEGREE,
                   num_degree=settings.RATIONAL_NUM_DEGREE, den_degree=settings.RATIONAL_DEN_DEGREE,
                   ref=None, reweight=settings.RATIONAL_REWEIGHT, jobs=1):
    if kind == POLYNOMIAL:
        return fit_polynomial(grid, degree, ref)
    elif kind == RATIONAL:
        return fit_rational(grid, num_degree, den_degree, ref, reweight, jobs)
    raise SurrogateException("Unknown surrogate kind '%s' (%s)" % (kind, ", ".join(SURROGATE_KINDS)))


def envelope(grid, ref=None):
    """ Per-bin (min, max) of the MC predictions over all runs """
    ids = ref.ids if ref is not None else grid.ids
    if ref is not None:
        grid.check_layout(ref)
    return OrderedDict((id, (grid.values[id].min(axis=0), grid.values[id].max(axis=0))) for id in ids)
