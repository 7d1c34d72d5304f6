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

# Human readable output: console tables, CSV curve files and text reports
import csv
from os.path import dirname, abspath, join

from prettytable import PrettyTable
from jinja2 import Environment, FileSystemLoader

from tunetools.utils import mkdir

TEMPLATE_DIR = join(dirname(abspath(__file__)), "templates")


def fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        return "%.6g" % value
    return str(value)


def fit_table(s):
    """ Quantiles of the per-bin in-sample RMS residuals of a surrogate fit """
    table = PrettyTable(["Kind", "Bins", "Runs", "Coefficients", "Condition"] + list(s.report.quantiles()))
    table.add_row([s.kind, s.n_bins, s.report.n_runs, s.report.n_coefficients, fmt(s.report.condition)]
                  + [fmt(v) for v in s.report.quantiles().values()])
    return table


def filter_table(rows):
    columns = ["Observable", "Bins", "Removed", "Critical chi2", "Statistic before", "Statistic after", "Excluded by"]
    table = PrettyTable(columns)
    table.align["Observable"] = "l"
    for row in rows:
        table.add_row([fmt(v) for v in row.values()])
    return table


def metrics_table(metrics):
    table = PrettyTable(["Metric", "Value"])
    table.align["Metric"] = "l"
    for key in ("method", "weighted_chi2", "a_optimality", "d_optimality_log", "bins_within_one_sigma", "bins"):
        table.add_row([key, fmt(metrics[key])])
    return table


def group_table(groups):
    """ Summed weight, observables, bins within one sigma and mean chi2 per observable group """
    table = PrettyTable(["Group", "Weight", "Observables", "Bins within one sigma", "Mean chi2"])
    table.align["Group"] = "l"
    for name, group in groups.items():
        table.add_row([name] + [fmt(v) for v in group.values()])
    return table


def parameter_table(names, p_star, positions, intervals=None):
    columns = ["Parameter", "Value", "Normalized"]
    if intervals is not None:
        columns += ["Eigentune min", "Eigentune max"]
    table = PrettyTable(columns)
    table.align["Parameter"] = "l"
    for i, name in enumerate(names):
        row = [name, fmt(float(p_star[i])), fmt(float(positions[i]))]
        if intervals is not None:
            row += [fmt(float(v)) for v in intervals[name]]
        table.add_row(row)
    return table


def mu_table(mus, results):
    """ Robust runs ranked by their area to the ideal CDF curve """
    table = PrettyTable(["Rank", "mu", "Area", "Objective"])
    ranked = sorted(zip(mus, results), key=lambda mr: (mr[1].metadata["area"], mr[0]))
    for rank, (mu, result) in enumerate(ranked, 1):
        table.add_row([rank, fmt(mu), fmt(result.metadata["area"]), fmt(result.objective_value)])
    return table


def write_curve_csv(curve, fname):
    """ Two columns, tau and count """
    mkdir(dirname(fname))
    with open(fname, "wt", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tau", "count"])
        for tau, count in curve.rows():
            writer.writerow([repr(tau), count])


def write_history_csv(result, ids, names, fname):
    """ One row per evaluated weight vector: iteration, weights, inner optimum, outer value """
    mkdir(dirname(fname))
    with open(fname, "wt", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration"] + ["w_%s" % id for id in ids] + ["p_%s" % n for n in names] + ["value"])
        for i, entry in enumerate(result.history):
            p_hat = [repr(float(v)) for v in entry.p_hat] if entry.p_hat is not None else [""] * len(names)
            writer.writerow([i] + [repr(v) for v in entry.weights.as_array(ids).tolist()] + p_hat
                            + [repr(float(entry.value))])


def render(template_name, **context):
    env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), trim_blocks=True, lstrip_blocks=True)
    env.filters["fmt"] = fmt
    return env.get_template(template_name).render(**context)


def write_metrics_text(metrics, names, fname):
    mkdir(dirname(fname))
    with open(fname, "wt") as f:
        f.write(render("metrics_report.tmpl", metrics=metrics, names=names))
