"""Run configuration: a TOML file merged with command-line overrides.

Example::

    seed = 7
    out = "runs/fit1"

    [data]
    path = "data.csv"
    other_cause = false

    [sampler]
    truncation_K = 10
    n_burn = 10000
    n_keep = 50000
    thin = 50
    n_chains = 3

    [priors]
    tpr_range = [0.5, 0.99]        # or tpr = [c1, c2]

    [priors.pathogens.C]
    tpr_range = [0.3, 0.8]

    [scenario]
    name = "II"
    eta_o = 0.0
    n_cases = 500
    n_controls = 500
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import platform
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import scipy

from .gibbs import SamplerConfig
from .model import HyperPriors
from .priors import ElicitedRange, beta_from_quantiles

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__version__ = "0.1.0"

DEFAULTS = {
    "seed": 0,
    "out": "nplcm-out",
    "jobs": None,
    "data": {"path": None, "other_cause": False},
    "sampler": {},
    "priors": {},
    "scenario": {"name": "I", "eta_o": 0.5, "nu_o": 0.5, "n_cases": 500, "n_controls": 500},
    "check": {"posterior": None, "top_n": 10, "epsilon": 0.05},
    "predict": {"posterior": None, "pattern": None},
    "asymp": {"eta_grid": [0.0, 0.25, 0.5, 0.75, 1.0], "n_total": 1000, "case_weight": 0.5,
              "fix_psi": False},
    "replicate": {"T": 50, "n_burn": 2000, "n_keep": 4000, "thin": 10, "n_chains": 1,
                  "k_star": 5, "level": 0.95},
}

_SAMPLER_KEYS = {f.name for f in fields(SamplerConfig)}
_SCENARIO_OVERRIDES = ("pi", "theta", "psi", "eta", "nu")


class ConfigError(ValueError):
    pass


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the TOML file, then non-``None`` overrides (dotted keys)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(p, "rb") as fh:
            cfg = _merge(cfg, tomllib.load(fh))
        base = p.resolve().parent
        for section, key in (("data", "path"), ("check", "posterior"), ("predict", "posterior")):
            val = cfg.get(section, {}).get(key)
            if val and not Path(val).is_absolute():
                cfg[section][key] = str(base / val)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = cfg
        *head, last = dotted.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = value
    unknown = set(cfg["sampler"]) - _SAMPLER_KEYS
    if unknown:
        raise ConfigError(f"unknown sampler settings: {sorted(unknown)}")
    return cfg


def config_hash(cfg):
    """SHA-256 of the canonical JSON form of a resolved configuration.

    ``out`` and ``jobs`` do not affect results and are excluded.
    """
    body = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()


def manifest(cfg, command, **extra):
    """Provenance record written next to every output."""
    return {
        "command": command,
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "config": {k: v for k, v in cfg.items() if k not in ("out", "jobs")},
        "versions": {"nplcm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        **extra,
    }


def write_manifest(directory, cfg, command, **extra):
    path = Path(directory) / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest(cfg, command, **extra), indent=2, sort_keys=True,
                               default=str) + "\n")
    return path


def resolve_jobs(cfg):
    jobs = cfg.get("jobs")
    return max(1, int(jobs)) if jobs else max(1, os.cpu_count() or 1)


def sampler_config(cfg):
    s = dict(cfg["sampler"])
    s["seed"] = int(cfg["seed"])
    s["include_other_cause"] = bool(cfg["data"].get("other_cause", False))
    return SamplerConfig(**s)


def _beta_pair(spec, where):
    if "tpr" in spec and "tpr_range" in spec:
        raise ConfigError(f"{where}: give either tpr or tpr_range, not both")
    if "tpr_range" in spec:
        r = spec["tpr_range"]
        q = spec.get("quantiles", (0.025, 0.975))
        return beta_from_quantiles(ElicitedRange(float(r[0]), float(r[1]), float(q[0]), float(q[1])))
    if "tpr" in spec:
        return tuple(float(v) for v in spec["tpr"])
    return None


def tpr_pair(cfg):
    """Default TPR Beta pair shared across pathogens."""
    return _beta_pair(cfg["priors"], "priors") or (1.0, 1.0)


def hyper_priors(cfg, pathogens):
    """Hyperpriors with per-pathogen TPR elicitations applied over the default pair."""
    pri = cfg["priors"]
    default = tpr_pair(cfg)
    per = pri.get("pathogens", {})
    unknown = set(per) - set(pathogens)
    if unknown:
        raise ConfigError(f"priors given for unknown pathogens: {sorted(unknown)}")
    tpr = np.array([_beta_pair(per.get(p, {}), f"priors.pathogens.{p}") or default
                    for p in pathogens])
    hp = HyperPriors.default(len(pathogens), bool(cfg["data"].get("other_cause", False)), tpr=tpr)
    for key in ("alpha0_gamma", "alpha1_gamma"):
        if key in pri:
            hp = HyperPriors(hp.dirichlet_a, hp.tpr_beta, hp.fpr_beta,
                             **{**{"alpha0_gamma": hp.alpha0_gamma, "alpha1_gamma": hp.alpha1_gamma},
                                key: tuple(pri[key])})
    return hp


def scenario_spec(cfg, eta_o=None):
    """Built-in scenario with optional array overrides from the ``[scenario]`` table."""
    from .simulation import custom_scenario, scenario

    sc = cfg["scenario"]
    base = scenario(sc["name"], sc["eta_o"] if eta_o is None else eta_o, sc.get("nu_o", 0.5))
    over = {k: sc[k] for k in _SCENARIO_OVERRIDES if k in sc}
    if not over:
        return base
    parts = {k: np.asarray(over.get(k, getattr(base, k)), float) for k in _SCENARIO_OVERRIDES}
    if eta_o is not None and "eta" not in over and parts["theta"].shape[1] == 2:
        parts["eta"] = np.array([eta_o, 1 - eta_o])
    return custom_scenario(name=f"{base.name}*", **parts)
