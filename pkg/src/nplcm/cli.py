"""``nplcm`` command-line interface.

Every subcommand reads an optional TOML config (see :mod:`nplcm.config`),
applies flag overrides, writes its outputs plus ``manifest_<command>.json`` under
``--out`` and exits 0. On failure it prints a JSON object with ``module``,
``operation`` and ``cause`` to stderr and exits 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path


from . import asymptotics, checking, diagnostics
from .config import (config_hash, hyper_priors, load_config, resolve_jobs, sampler_config,
                     scenario_spec, tpr_pair, write_manifest)
from .gibbs import PosteriorSamples, run
from .model import parse_pattern, read_dataset_csv, write_dataset_csv
from .simulation import desk_fit_configs, generate, replicate

log = logging.getLogger("nplcm")


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg):
    path = cfg["data"].get("path")
    if not path:
        raise ValueError("no dataset: set data.path in the config or pass --data")
    if not Path(path).is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    return read_dataset_csv(path, include_other_cause=bool(cfg["data"].get("other_cause")))


def _posterior(cfg, section):
    path = cfg[section].get("posterior") or str(Path(cfg["out"]) / "posterior")
    if not (Path(path) / "manifest.json").is_file():
        raise FileNotFoundError(f"no posterior found at {path}")
    return PosteriorSamples.load(path)


def cmd_simulate(cfg):
    out = _out_dir(cfg)
    spec = scenario_spec(cfg)
    sc = cfg["scenario"]
    data = generate(spec, int(sc["n_cases"]), int(sc["n_controls"]), int(cfg["seed"]))
    write_dataset_csv(data, out / "data.csv")
    (out / "truth.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    write_manifest(out, cfg, "simulate", outputs=["data.csv", "truth.json"])
    return out


def cmd_fit(cfg):
    out = _out_dir(cfg)
    data = _dataset(cfg)
    sampler = sampler_config(cfg)
    post = run(data, hyper_priors(cfg, data.pathogens), sampler, jobs=resolve_jobs(cfg))
    extra = {"run_config_hash": config_hash(cfg)}
    post.save(out / "posterior", extra_manifest=extra)
    diagnostics.write_report(post, out, extra={"config_hash": config_hash(cfg), "seed": cfg["seed"]})
    summary = {k: v.tolist() for k, v in post.pi_summary().items()}
    (out / "pi_summary.json").write_text(
        json.dumps({"class_names": list(post.class_names), **summary}, indent=2) + "\n")
    write_manifest(out, cfg, "fit", outputs=["posterior/", "diagnostics.json", "traces/",
                                             "pi_summary.json"])
    return out


def cmd_check(cfg):
    out = _out_dir(cfg)
    data = _dataset(cfg)
    post = _posterior(cfg, "check")
    chk = cfg["check"]
    rows = []
    for pop, x in (("case", data.cases), ("control", data.controls)):
        rows += checking.observed_lor(x, data.pathogens).rows(population=pop)
    checking.write_rows_csv(rows, out / "lor.csv")
    reps = checking.predictive_replicates(post, data, int(chk["top_n"]), int(cfg["seed"]),
                                          resolve_jobs(cfg))
    stamp = {"config_hash": config_hash(cfg), "seed": cfg["seed"]}
    checking.slord(post, data, _replicates=reps).write_csv(out / "slord.csv")
    checking.ppd_pattern_freq(post, data, _replicates=reps).write_json(out / "ppd.json", stamp)
    ld = checking.ld_interval_null(post, float(chk["epsilon"]))
    (out / "ld_test.json").write_text(json.dumps({**ld, **stamp}, indent=2) + "\n")
    write_manifest(out, cfg, "check", outputs=["lor.csv", "slord.csv", "ppd.json", "ld_test.json"])
    return out


def cmd_predict(cfg):
    out = _out_dir(cfg)
    data = _dataset(cfg)
    post = _posterior(cfg, "predict")
    text = cfg["predict"].get("pattern")
    if not text:
        raise ValueError("no pattern given: pass --pattern or set predict.pattern")
    res = checking.individual_etiology(post, data, parse_pattern(str(text), data.J))
    name = f"etiology_{res.pattern}.json"
    res.write_json(out / name, {"config_hash": config_hash(cfg), "seed": cfg["seed"]})
    write_manifest(out, cfg, "predict", outputs=[name])
    return out


def cmd_asymp(cfg):
    out = _out_dir(cfg)
    a = cfg["asymp"]
    rows = asymptotics.prab_curve(lambda e: scenario_spec(cfg, e), a["eta_grid"],
                                  n_total=int(a["n_total"]), case_weight=float(a["case_weight"]),
                                  fix_psi=bool(a["fix_psi"]), jobs=1)
    asymptotics.write_curve_csv(rows, out / "prab.csv")
    write_manifest(out, cfg, "asymp", outputs=["prab.csv"])
    return out


def cmd_replicate(cfg):
    out = _out_dir(cfg)
    r = cfg["replicate"]
    sc = cfg["scenario"]
    configs = desk_fit_configs(tpr_pair(cfg), n_burn=int(r["n_burn"]), n_keep=int(r["n_keep"]),
                               thin=int(r["thin"]), n_chains=int(r["n_chains"]),
                               k_star=int(r["k_star"]))
    report = replicate(scenario_spec(cfg), int(sc["n_cases"]), int(sc["n_controls"]), int(r["T"]),
                       configs, seed=int(cfg["seed"]), jobs=resolve_jobs(cfg),
                       level=float(r["level"]))
    report.write_csv(out / "replication.csv")
    report.write_json(out / "replication.json")
    write_manifest(out, cfg, "replicate", outputs=["replication.csv", "replication.json"])
    return out


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "check": cmd_check,
            "predict": cmd_predict, "asymp": cmd_asymp, "replicate": cmd_replicate}

HELP = {
    "simulate": "draw a synthetic case-control dataset from a built-in scenario",
    "fit": "run the Gibbs sampler and write draws, diagnostics and a summary of pi",
    "check": "posterior predictive checks: pattern frequencies, SLORD, interval null",
    "predict": "class probabilities for one case measurement pattern",
    "asymp": "pseudo-truth bias and variance ratios of the working model over an eta grid",
    "replicate": "repeated-sampling bias, MSE and coverage for npLCM vs pLCM",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="nplcm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
        p.add_argument("--cut-feedback", action="store_const", const=True, default=None,
                       help="exclude case data from the FPR updates")
        p.add_argument("--k-star", type=int, help="stick-breaking truncation level")
        p.add_argument("--other-cause", action="store_const", const=True, default=None,
                       help="add a class for causes outside the measured pathogens")
        p.add_argument("--data", help="dataset CSV (overrides data.path)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "asymp", "replicate"):
            p.add_argument("--scenario", help="built-in scenario name (I or II)")
            p.add_argument("--eta-o", type=float, help="first case-subclass weight")
        if name in ("check", "predict"):
            p.add_argument("--posterior", help="posterior directory written by fit")
        if name == "predict":
            p.add_argument("--pattern", help="case measurement pattern, e.g. 10010")
        if name == "asymp":
            p.add_argument("--eta-grid", help="comma-separated eta_o values")
    return parser


def _overrides(args):
    ov = {"seed": args.seed, "out": args.out, "jobs": args.jobs,
          "sampler.cut_feedback": args.cut_feedback, "sampler.truncation_K": args.k_star,
          "data.other_cause": args.other_cause, "data.path": args.data}
    if args.k_star is not None:
        ov["replicate.k_star"] = args.k_star
    for key in ("scenario", "eta_o"):
        if getattr(args, key, None) is not None:
            ov[f"scenario.{'name' if key == 'scenario' else key}"] = getattr(args, key)
    if getattr(args, "posterior", None):
        ov[f"{args.command}.posterior"] = args.posterior
    if getattr(args, "pattern", None):
        ov["predict.pattern"] = args.pattern
    if getattr(args, "eta_grid", None):
        ov["asymp.eta_grid"] = [float(v) for v in args.eta_grid.split(",")]
    return ov


def _failure(command, exc):
    """Locate the innermost package frame to name the failing module and operation."""
    module, operation = "cli", command
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "nplcm" in parts and parts[-1].endswith(".py"):
            module, operation = Path(frame.filename).stem, frame.name
    return {"module": module, "operation": operation,
            "cause": f"{type(exc).__name__}: {exc}", "command": command}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        out = COMMANDS[args.command](cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured exit
        print(json.dumps(_failure(args.command, exc)), file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
