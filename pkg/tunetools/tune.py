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
import sys
import logging
from os.path import join

import numpy as np
from colorama import Fore, init as colorama_init

from tunetools.utils import TuneException, dict_to_json_file, write_metadata
from tunetools.options import get_default_options_parser, config_overrides
from tunetools.config import RunConfig
from tunetools.data_model import Method, load_reference, load_mc_runs, load_mask, load_result, FilterMask
from tunetools.surrogate import fit_surrogates, load_surrogate
from tunetools.chi2 import ideal_tunes, save_ideal_tunes
from tunetools.filtering import apply_filters
from tunetools.bilevel import OBJECTIVES, run_bilevel, run_equal_weights
from tunetools.robust import sweep_mu, random_mus, cdf_curve, ideal_cdf_curve, area_between, default_taus
from tunetools.evaluation import metrics_report, effective_n, eigentune, normalized_position
from tunetools import report

logger = logging.getLogger("tunetools")

VERSION = "0.1.0"


def status(text, color=Fore.GREEN):
    print(color + text + Fore.RESET)


def write_document(data, fname, cfg, command):
    """ Result document with the effective config echoed into it, plus a .meta.json side file """
    data["config"] = cfg.to_dict()
    dict_to_json_file(data, fname)
    write_metadata(fname, command)
    logger.info("Wrote %s", fname)


def output(cfg, name):
    return join(cfg["output_dir"], name)


def get_surrogate(cfg, args, ref):
    if getattr(args, "surrogate", None):
        s = load_surrogate(args.surrogate)
        s.check_layout(ref)
        return s
    if cfg["mc_runs"] is None:
        raise TuneException("Either a surrogate document (--surrogate) or MC runs (--mc-runs) are needed")
    grid = load_mc_runs(cfg["mc_runs"], ref)
    sc = cfg["surrogate"]
    return fit_surrogates(grid, sc["kind"], sc["degree"], sc["num_degree"], sc["den_degree"], ref,
                          sc["reweight"], cfg["jobs"])


def get_mask(args, ref):
    if getattr(args, "mask", None):
        mask = load_mask(args.mask)
        mask.validate(ref)
        return mask
    return FilterMask()


def get_taus(cfg):
    taus = cfg["evaluation.taus"]
    return default_taus() if taus is None else np.asarray(taus, dtype=float)


def cmd_surrogate(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    write_document(s.to_dict(), output(cfg, "surrogate.json"), cfg, "surrogate")
    print(report.fit_table(s))


def cmd_filter(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    fc = cfg["filter"]
    grid = None
    if fc["envelope"]:
        if cfg["mc_runs"] is None:
            raise TuneException("The envelope pre-filter needs the MC runs (--mc-runs)")
        grid = load_mc_runs(cfg["mc_runs"], ref)
    rows = []
    mask = apply_filters(ref, s, fc["mode"], fc["alpha"], fc["threshold"], grid, cfg.chi2_config(), report=rows)
    write_document(mask.to_dict(), output(cfg, "filter_mask.json"), cfg, "filter")
    if rows:
        print(report.filter_table(rows))
    status("%d observables excluded, %d trimmed" % (len(mask.excluded_observables), len(mask.kept_bin_range)))


def cmd_tune(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    mask = get_mask(args, ref)
    method = cfg["method"]
    inner = cfg.chi2_config()
    lam = cfg["outer.lambda"]

    if method == Method.EQUAL_WEIGHTS:
        result = run_equal_weights(s, ref, mask, inner, lam=lam)
    elif method == Method.ROBUST:
        rc = cfg["robust"]
        mus = rc["mus"] if rc["mus"] else random_mus(rc["mu_count"], cfg["seed"])
        best_mu, results = sweep_mu(s, ref, mask, mus, cfg.robust_config(), taus=get_taus(cfg))
        for i, (mu, r) in enumerate(zip(mus, results)):
            write_document(r.to_dict(), output(cfg, "tune_result_mu_%03d.json" % i), cfg, "tune")
        print(report.mu_table(mus, results))
        result = results[mus.index(best_mu)]
        result.metadata["best_mu"] = best_mu
    else:
        objective = [k for k, v in OBJECTIVES.items() if v == method][0]
        result = run_bilevel(objective, s, ref, mask, cfg.outer_config(), inner)
        report.write_history_csv(result, ref.ids, s.space.names, output(cfg, "history.csv"))

    write_document(result.to_dict(), output(cfg, "tune_result.json"), cfg, "tune")
    print(report.parameter_table(s.space.names, result.p_star, normalized_position(result.p_star, s.space)))
    status("%s: objective %g" % (result.method, result.objective_value))


def cmd_evaluate(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    result = load_result(args.result)
    metrics = metrics_report(result, s, ref, cfg["evaluation.gamma"], cfg["jobs"])
    write_document(metrics, output(cfg, "metrics.json"), cfg, "evaluate")
    report.write_metrics_text(metrics, s.space.names, output(cfg, "metrics.txt"))
    report.write_curve_csv(cdf_curve(result.p_star, s, ref, get_taus(cfg), result.mask), output(cfg, "cdf_run.csv"))
    print(report.metrics_table(metrics))
    print(report.group_table(metrics["groups"]))
    intervals = metrics["eigentune"]["intervals"] if metrics["eigentune"] else None
    print(report.parameter_table(s.space.names, result.p_star,
                                 normalized_position(result.p_star, s.space), intervals))


def cmd_eigentune(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    result = load_result(args.result)
    gamma = cfg["evaluation.gamma"]
    n = effective_n(result.weights, s.dim, gamma)
    tune = eigentune(result.p_star, result.weights, s, ref, n, result.mask, gamma, cfg["jobs"])
    write_document(tune.to_dict(), output(cfg, "eigentune.json"), cfg, "eigentune")
    print(report.parameter_table(s.space.names, result.p_star, normalized_position(result.p_star, s.space),
                                 tune.to_dict()["intervals"]))


def cmd_cdf(cfg, args):
    ref = load_reference(cfg["reference"])
    s = get_surrogate(cfg, args, ref)
    result = load_result(args.result)
    taus = get_taus(cfg)
    ideal = ideal_tunes(s, ref, cfg.chi2_config(), result.mask)
    save_ideal_tunes(ideal, output(cfg, "ideal_tunes.json"))
    run_curve = cdf_curve(result.p_star, s, ref, taus, result.mask)
    ideal_curve = ideal_cdf_curve(ideal, taus)
    report.write_curve_csv(run_curve, output(cfg, "cdf_run.csv"))
    report.write_curve_csv(ideal_curve, output(cfg, "cdf_ideal.csv"))
    status("Area to the ideal curve: %g" % area_between(run_curve, ideal_curve))


COMMANDS = {
    "surrogate": (cmd_surrogate, ["reference"]),
    "filter": (cmd_filter, ["reference"]),
    "tune": (cmd_tune, ["reference"]),
    "evaluate": (cmd_evaluate, ["reference"]),
    "eigentune": (cmd_eigentune, ["reference"]),
    "cdf": (cmd_cdf, ["reference"]),
}


def setup_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    colorama_init()
    parser = get_default_options_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 1
    setup_logging(args)

    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        cfg.override(config_overrides(args))
        command, required = COMMANDS[args.command]
        cfg.validate(required)
        command(cfg, args)
    except KeyboardInterrupt:
        print("\n[CTRL+c] exit")
        return 1
    except TuneException as e:
        if args.verbose:
            import traceback
            traceback.print_exc(file=sys.stdout)
        status("[ERROR] %s" % e, Fore.RED)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
