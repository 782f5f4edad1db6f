"""Synthetic data from the npLCM generative process and a replication harness
for the frequentist behaviour of posterior summaries."""
from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NplcmError
from .gibbs import SamplerConfig, fit
from .model import Dataset, ModelParams, default_names

log = logging.getLogger(__name__)

PI_TRUE = (0.5, 0.2, 0.15, 0.1, 0.05)

# (K_true, J) rows: subclass profiles over pathogens A-E
_SCENARIOS = {
    "I": {
        "theta": [[0.95, 0.9, 0.9, 0.9, 0.9], [0.95, 0.9, 0.9, 0.9, 0.9]],
        "psi": [[0.25, 0.25, 0.2, 0.15, 0.15], [0.2, 0.2, 0.25, 0.1, 0.1]],
    },
    "II": {
        "theta": [[0.95, 0.95, 0.55, 0.95, 0.95], [0.95, 0.55, 0.95, 0.55, 0.55]],
        "psi": [[0.4, 0.4, 0.05, 0.2, 0.2], [0.05, 0.05, 0.4, 0.05, 0.05]],
    },
}


@dataclass(frozen=True)
class ScenarioSpec:
    """A true data-generating mechanism. ``theta``/``psi`` are ``(J, K_true)``."""

    name: str
    pi: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    eta_o: float | None = None

    def __post_init__(self):
        # validation is delegated to ModelParams
        params = self.to_params()
        for name in ("pi", "theta", "psi", "nu", "eta"):
            object.__setattr__(self, name, getattr(params, name))

    @property
    def J(self):
        return self.theta.shape[0]

    @property
    def K(self):
        return self.theta.shape[1]

    def to_params(self):
        return ModelParams(pi=self.pi, theta=self.theta, psi=self.psi, eta=self.eta, nu=self.nu)

    def with_eta_o(self, eta_o):
        if self.K != 2:
            raise ValueError("eta_o parameterises two-subclass scenarios only")
        return ScenarioSpec(self.name, self.pi, self.theta, self.psi, self.nu,
                            np.array([eta_o, 1.0 - eta_o]), eta_o)

    def to_dict(self):
        return {"name": self.name, "eta_o": self.eta_o,
                **{k: getattr(self, k).tolist() for k in ("pi", "theta", "psi", "nu", "eta")}}


def scenario(name, eta_o=0.5, nu_o=0.5):
    """Built-in scenario ``"I"`` (little dependence) or ``"II"`` (strong dependence)."""
    key = str(name).upper()
    if key not in _SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; built-ins are I and II")
    if not 0.0 <= eta_o <= 1.0:
        raise ValueError("eta_o must lie in [0, 1]")
    spec = _SCENARIOS[key]
    return ScenarioSpec(name=key, pi=np.array(PI_TRUE),
                        theta=np.array(spec["theta"]).T, psi=np.array(spec["psi"]).T,
                        nu=np.array([nu_o, 1.0 - nu_o]), eta=np.array([eta_o, 1.0 - eta_o]),
                        eta_o=float(eta_o))


def custom_scenario(pi, theta, psi, nu, eta, name="custom"):
    return ScenarioSpec(name=name, pi=np.asarray(pi, float), theta=np.asarray(theta, float),
                        psi=np.asarray(psi, float), nu=np.asarray(nu, float),
                        eta=np.asarray(eta, float))


def _categorical(p, n, rng):
    return np.minimum(np.searchsorted(np.cumsum(p), rng.random(n), side="right"), p.size - 1)


def measurement_rates(case_class, subclass, theta, psi):
    """Per-subject positive rates given class (``None`` for controls) and subclass."""
    rates = psi[:, subclass].T.copy()
    if case_class is not None:
        own = np.flatnonzero(case_class < theta.shape[0])
        rates[own, case_class[own]] = theta[case_class[own], subclass[own]]
    return rates


def simulate(params, n_cases, n_controls, rng, return_latent=False, pathogens=None,
             include_other_cause=None):
    """Draw a dataset from ``params``; the single source of the generative process."""
    J = params.J
    z0 = _categorical(params.nu, n_controls, rng)
    controls = (rng.random((n_controls, J)) < measurement_rates(None, z0, params.theta, params.psi))
    cls = _categorical(params.pi, n_cases, rng)
    z1 = _categorical(params.eta, n_cases, rng)
    cases = rng.random((n_cases, J)) < measurement_rates(cls, z1, params.theta, params.psi)
    other = params.has_other if include_other_cause is None else include_other_cause
    data = Dataset(cases=cases.astype(np.int8).reshape(n_cases, J),
                   controls=controls.astype(np.int8).reshape(n_controls, J),
                   pathogens=tuple(pathogens or default_names(J)), include_other_cause=other)
    if return_latent:
        return data, {"case_class": cls, "case_subclass": z1, "control_subclass": z0}
    return data


def generate(spec, n_cases, n_controls, seed):
    """Reproducible synthetic dataset for a scenario."""
    rng = np.random.default_rng(seed)
    return simulate(spec.to_params(), n_cases, n_controls, rng)


# ---------------------------------------------------------------------------
# replication harness


@dataclass(frozen=True)
class FitConfig:
    """One model to fit in each replicate."""

    name: str
    sampler: SamplerConfig
    tpr_prior: tuple = (1.0, 1.0)


def desk_fit_configs(tpr_prior, n_burn=2000, n_keep=4000, thin=10, n_chains=1, k_star=5):
    """npLCM (truncation ``k_star``) and pLCM (K=1) with shortened chains."""
    common = dict(n_burn=n_burn, n_keep=n_keep, thin=thin, n_chains=n_chains)
    return (FitConfig("nplcm", SamplerConfig(truncation_K=k_star, **common), tuple(tpr_prior)),
            FitConfig("plcm", SamplerConfig(truncation_K=1, **common), tuple(tpr_prior)))


@dataclass
class ReplicationReport:
    """Per-model, per-class repeated-sampling summaries of the etiologic fractions."""

    scenario: dict
    class_names: list
    truth: np.ndarray
    n_replicates: int
    models: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def mse_ratio(self, numerator="plcm", denominator="nplcm"):
        return self.models[numerator]["mse"] / self.models[denominator]["mse"]

    def rows(self):
        """Flat rows (class x model) mirroring a bias/MSE/coverage table."""
        out = []
        ratio = None
        if {"plcm", "nplcm"} <= set(self.models):
            ratio = self.mse_ratio()
        for name, stats in self.models.items():
            for l, cls in enumerate(self.class_names):
                out.append({
                    "class": cls, "eta_o": self.scenario.get("eta_o"), "model": name,
                    "truth": float(self.truth[l]),
                    "bias": float(stats["bias"][l]), "bias_se": float(stats["bias_se"][l]),
                    "mse": float(stats["mse"][l]), "mse_se": float(stats["mse_se"][l]),
                    "mse_ratio_plcm_over_nplcm": None if ratio is None else float(ratio[l]),
                    "coverage": float(stats["coverage"][l]),
                    "coverage_se": float(stats["coverage_se"][l]),
                    "n_ok": int(stats["n_ok"]), "n_failed": len(self.failures.get(name, [])),
                })
        return out

    def write_csv(self, path, append=False):
        rows = self.rows()
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            if not append or fh.tell() == 0:
                writer.writeheader()
            writer.writerows(rows)

    def to_dict(self):
        return {
            "scenario": self.scenario, "class_names": self.class_names,
            "truth": self.truth.tolist(), "n_replicates": self.n_replicates,
            "models": {n: {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in s.items()}
                       for n, s in self.models.items()},
            "failures": self.failures,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _one_replicate(args):
    spec, n_cases, n_controls, data_seed, fit_configs, level = args
    data = generate(spec, n_cases, n_controls, data_seed)
    out = {}
    for cfg in fit_configs:
        sampler = SamplerConfig(**{**cfg.sampler.to_dict(), "seed": data_seed})
        try:
            post = fit(data, sampler, tpr_prior=cfg.tpr_prior)
            out[cfg.name] = {k: v.tolist() for k, v in post.pi_summary(level).items()}
        except (NplcmError, ValueError, FloatingPointError) as exc:
            out[cfg.name] = {"error": f"{type(exc).__name__}: {exc}",
                             "trace": traceback.format_exc(limit=3)}
    return out


def replicate(spec, n_cases, n_controls, T, fit_configs, seed=0, jobs=1, level=0.95):
    """Generate ``T`` datasets, fit every config to each, and aggregate.

    Failed fits are recorded per model with their replicate index and message,
    and excluded from that model's aggregates.
    """
    if T < 2:
        raise ValueError("need at least two replicates")
    seeds = np.random.SeedSequence(seed).generate_state(T, dtype=np.uint64).tolist()
    args = [(spec, n_cases, n_controls, int(s), tuple(fit_configs), level) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replicate, args))
    else:
        results = [_one_replicate(a) for a in args]
    truth = np.asarray(spec.pi)
    report = ReplicationReport(scenario=spec.to_dict(),
                               class_names=default_names(spec.J)[:truth.size], truth=truth,
                               n_replicates=T)
    for cfg in fit_configs:
        means, covered, failed = [], [], []
        for t, res in enumerate(results):
            r = res[cfg.name]
            if "error" in r:
                failed.append({"replicate": t, "seed": int(seeds[t]), "error": r["error"]})
                log.warning("replicate %d, model %s failed: %s", t, cfg.name, r["error"])
                continue
            means.append(r["mean"])
            covered.append((np.asarray(r["lower"]) <= truth) & (truth <= np.asarray(r["upper"])))
        report.failures[cfg.name] = failed
        if not means:
            continue
        means = np.asarray(means)
        covered = np.asarray(covered, dtype=float)
        n = len(means)
        err = means - truth
        sq = err ** 2
        cov = covered.mean(axis=0)
        report.models[cfg.name] = {
            "bias": err.mean(axis=0), "bias_se": err.std(axis=0, ddof=1) / np.sqrt(n),
            "mse": sq.mean(axis=0), "mse_se": sq.std(axis=0, ddof=1) / np.sqrt(n),
            "coverage": cov, "coverage_se": np.sqrt(cov * (1 - cov) / n),
            "posterior_means": means, "n_ok": n,
        }
    return report
