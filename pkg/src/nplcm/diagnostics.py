"""Convergence diagnostics for multi-chain output."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import UndefinedVarianceError

QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


def psrf(chains):
    """Potential scale reduction factor for an ``(m, n)`` array of scalar draws.

    Uses the pooled variance estimate W + B/n over the within-chain variance W,
    so chains with identical means give exactly 1.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 10:
        raise ValueError("psrf needs at least 2 chains of at least 10 draws")
    within = x.var(axis=1, ddof=1).mean()
    if not within > 0:
        raise UndefinedVarianceError("within-chain variance is zero")
    between_over_n = x.mean(axis=1).var(ddof=1)
    return float(np.sqrt((within + between_over_n) / within))


def autocorr(draws, max_lag=None):
    """Sample autocorrelation at lags ``0..max_lag`` (biased, FFT-based)."""
    x = np.asarray(draws, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    max_lag = min(int(max_lag), n - 1)
    xc = x - x.mean()
    denom = xc @ xc
    if not denom > 0:
        raise UndefinedVarianceError("constant series has no autocorrelation")
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return acov / denom


def ess(draws):
    """Effective sample size with Geyer's initial positive sequence truncation.

    Accepts a 1-d series or an ``(m, n)`` array (ESS summed over chains).
    Never exceeds the number of draws.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim == 2:
        return float(sum(ess(row) for row in x))
    n = x.size
    rho = autocorr(x)
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0)
    return float(min(n, n / tau))


@dataclass
class ChainSummary:
    name: str
    mean: float
    sd: float
    psrf: float | None
    ess: float
    autocorr: list
    quantiles: list


def summarize_chains(name, chains, max_lag=50):
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    flat = x.ravel()
    try:
        r = psrf(x) if x.shape[0] >= 2 else None
    except UndefinedVarianceError:
        r = None
    try:
        e = ess(x)
        ac = np.mean([autocorr(row, max_lag) for row in x], axis=0).tolist()
    except UndefinedVarianceError:
        e, ac = float(flat.size), []
    return ChainSummary(name=name, mean=float(flat.mean()), sd=float(flat.std(ddof=1)),
                        psrf=r, ess=e, autocorr=ac,
                        quantiles=np.quantile(flat, QUANTILE_LEVELS).tolist())


def monitored_functionals(posterior):
    """Scalar chains watched by default: every pi, both alphas, max eta and max nu."""
    out = {f"pi[{c}]": posterior.pi[:, :, l] for l, c in enumerate(posterior.class_names)}
    out["alpha0"] = posterior.alpha0
    out["alpha1"] = posterior.alpha1
    out["max_eta"] = posterior.eta.max(axis=2)
    out["max_nu"] = posterior.nu.max(axis=2)
    return out


def diagnose(posterior, max_lag=50):
    return {name: summarize_chains(name, x, max_lag)
            for name, x in monitored_functionals(posterior).items()}


def write_report(posterior, directory, max_lag=50, extra=None):
    """Write ``diagnostics.json`` and one trace CSV per monitored functional."""
    directory = Path(directory)
    trace_dir = directory / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    summaries = diagnose(posterior, max_lag)
    report = {"n_chains": posterior.n_chains, "n_draws": posterior.n_draws,
              "parameters": {k: asdict(v) for k, v in summaries.items()}}
    if extra:
        report.update(extra)
    (directory / "diagnostics.json").write_text(json.dumps(report, indent=2) + "\n")
    for name, x in monitored_functionals(posterior).items():
        safe = name.replace("[", "_").replace("]", "").replace("/", "-")
        with open(trace_dir / f"{safe}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", *[f"chain_{c}" for c in range(x.shape[0])]])
            for d in range(x.shape[1]):
                w.writerow([d, *(repr(float(v)) for v in x[:, d])])
    return summaries
