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
from argparse import ArgumentParser

from tunetools.data_model import METHODS
from tunetools.surrogate import SURROGATE_KINDS
from tunetools.filtering import FILTER_MODES
from tunetools.bilevel import OBJECTIVES


def float_list(value):
    return [float(v) for v in value.split(",") if v.strip()]


def add_common_options(parser):
    parser.add_argument("-c", "--config", metavar="FILE",
                        help="run configuration document (YAML or JSON)")
    parser.add_argument("-r", "--reference", metavar="FILE", help="reference data document")
    parser.add_argument("-m", "--mc-runs", dest="mc_runs", metavar="FILE", help="MC run grid document")
    parser.add_argument("-o", "--output-dir", dest="output_dir", metavar="DIR",
                        help="directory receiving the result documents")
    parser.add_argument("-s", "--surrogate", metavar="FILE",
                        help="reuse a surrogate document written by the 'surrogate' command")
    parser.add_argument("--mask", metavar="FILE", help="filter mask document written by the 'filter' command")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("-j", "--jobs", type=int, metavar="N",
                        help="number of worker processes, 0 for one per core")
    parser.add_argument("-v", "--verbose", action="store_true", default=False, help="verbose diagnostic output")
    parser.add_argument("-q", "--quiet", action="store_true", default=False, help="only warnings and errors")


def add_surrogate_options(parser):
    parser.add_argument("--kind", choices=SURROGATE_KINDS, help="surrogate model kind")
    parser.add_argument("--degree", type=int, help="polynomial degree")
    parser.add_argument("--num-degree", dest="num_degree", type=int, help="rational numerator degree")
    parser.add_argument("--den-degree", dest="den_degree", type=int, help="rational denominator degree")


def add_filter_options(parser):
    parser.add_argument("--mode", choices=FILTER_MODES, help="filter mode")
    parser.add_argument("--alpha", type=float, help="significance level of the bin test")
    parser.add_argument("--threshold", type=float, help="Z-score threshold of the observable filter")
    parser.add_argument("--envelope", action="store_true", default=None,
                        help="also drop observables outside the MC envelope")


def add_tune_options(parser):
    parser.add_argument("--method", choices=METHODS, help="tuning method")
    parser.add_argument("--objective", choices=list(OBJECTIVES),
                        help="outer objective, shorthand for --method bilevel-<objective>")
    parser.add_argument("--multistarts", type=int, help="inner multistart count")
    parser.add_argument("--n0", type=int, help="initial outer design size")
    parser.add_argument("--n-max", dest="n_max", type=int, help="number of weight vectors tried")
    parser.add_argument("--n-cand", dest="n_cand", type=int, help="candidate pool size")
    parser.add_argument("--nu-cycle", dest="nu_cycle", type=float_list, metavar="NU,NU,...",
                        help="repeating candidate scoring weights")
    parser.add_argument("--lambda", dest="lam", type=float, help="risk aversion of the portfolio objective")
    parser.add_argument("--mu-count", dest="mu_count", type=int, help="number of random mu values")
    parser.add_argument("--mus", type=float_list, metavar="MU,MU,...", help="explicit mu values")


def add_result_options(parser):
    parser.add_argument("result", help="tune result document")
    parser.add_argument("--gamma", type=float, help="effective sample size scale")


def get_default_options_parser():
    parser = ArgumentParser(prog="tune", description="Surrogate based tuning of simulator parameters")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    sub = commands.add_parser("surrogate", help="fit per-bin surrogates to the MC runs")
    add_common_options(sub)
    add_surrogate_options(sub)

    sub = commands.add_parser("filter", help="compute a filter mask")
    add_common_options(sub)
    add_surrogate_options(sub)
    add_filter_options(sub)

    sub = commands.add_parser("tune", help="tune parameters and observable weights")
    add_common_options(sub)
    add_surrogate_options(sub)
    add_tune_options(sub)

    sub = commands.add_parser("evaluate", help="metrics of a tune result")
    add_common_options(sub)
    add_surrogate_options(sub)
    add_result_options(sub)

    sub = commands.add_parser("eigentune", help="eigentune intervals of a tune result")
    add_common_options(sub)
    add_surrogate_options(sub)
    add_result_options(sub)

    sub = commands.add_parser("cdf", help="cumulative chi2 curves of a tune result and of the ideal tunes")
    add_common_options(sub)
    add_surrogate_options(sub)
    add_result_options(sub)
    return parser


def config_overrides(args):
    """ Dotted config keys set on the command line """
    get = lambda name: getattr(args, name, None)
    overrides = {
        "reference": get("reference"),
        "mc_runs": get("mc_runs"),
        "output_dir": get("output_dir"),
        "seed": get("seed"),
        "jobs": get("jobs"),
        "surrogate.kind": get("kind"),
        "surrogate.degree": get("degree"),
        "surrogate.num_degree": get("num_degree"),
        "surrogate.den_degree": get("den_degree"),
        "filter.mode": get("mode"),
        "filter.alpha": get("alpha"),
        "filter.threshold": get("threshold"),
        "filter.envelope": get("envelope"),
        "method": get("method"),
        "inner.multistarts": get("multistarts"),
        "outer.n0": get("n0"),
        "outer.n_max": get("n_max"),
        "outer.n_cand": get("n_cand"),
        "outer.nu_cycle": get("nu_cycle"),
        "outer.lambda": get("lam"),
        "robust.mu_count": get("mu_count"),
        "robust.mus": get("mus"),
        "evaluation.gamma": get("gamma"),
    }
    if get("objective"):
        overrides["method"] = OBJECTIVES[get("objective")]
    return overrides
