"""Posterior predictive checks, observed log odds ratios, local-dependence
tests and individual etiology prediction."""
from __future__ import annotations

import csv
import json
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DimensionError, PatternNotFound
from .model import pattern_key
from .simulation import simulate

POPULATIONS = ("case", "control")
PPD_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
SLORD_FLAG = 2.0


def lor_from_counts(a, b, c, d):
    """Log odds ratio ``log(ad/bc)`` and its Woolf standard error.

    Adds 0.5 to every cell when any cell is zero.
    """
    cells = np.array([a, b, c, d], dtype=float)
    if np.any(cells == 0):
        cells = cells + 0.5
    a, b, c, d = cells
    return float(np.log(a * d / (b * c))), float(np.sqrt(np.sum(1.0 / cells)))


def _pair_counts(x, j, l):
    xj, xl = x[:, j], x[:, l]
    n11 = int(np.sum(xj & xl))
    n10 = int(np.sum(xj)) - n11
    n01 = int(np.sum(xl)) - n11
    return n11, n10, n01, x.shape[0] - n11 - n10 - n01


def _lor_arrays(x):
    """LOR and SE for every pair of columns; NaN where a column is constant."""
    x = np.asarray(x).astype(bool)
    J = x.shape[1]
    pairs = list(combinations(range(J), 2))
    col_sum = x.sum(axis=0)
    constant = (col_sum == 0) | (col_sum == x.shape[0])
    lor = np.full(len(pairs), np.nan)
    se = np.full(len(pairs), np.nan)
    for p, (j, l) in enumerate(pairs):
        if constant[j] or constant[l]:
            continue
        n11, n10, n01, n00 = _pair_counts(x, j, l)
        lor[p], se[p] = lor_from_counts(n11, n10, n01, n00)
    return pairs, lor, se


@dataclass(frozen=True)
class LorTable:
    """Pairwise observed log odds ratios; undefined pairs hold NaN."""

    pairs: list
    log_or: np.ndarray
    se: np.ndarray
    names: tuple

    @property
    def z(self):
        return self.log_or / self.se

    @property
    def defined(self):
        return np.isfinite(self.log_or)

    def get(self, j, l):
        j, l = sorted((j, l))
        p = self.pairs.index((j, l))
        return float(self.log_or[p]), float(self.se[p])

    def rows(self, population=None):
        out = []
        for p, (j, l) in enumerate(self.pairs):
            row = {"pathogen_1": self.names[j], "pathogen_2": self.names[l]}
            if population is not None:
                row = {"population": population, **row}
            ok = bool(self.defined[p])
            row.update(log_or=float(self.log_or[p]) if ok else None,
                       se=float(self.se[p]) if ok else None,
                       z=float(self.z[p]) if ok else None, defined=ok)
            out.append(row)
        return out


def observed_lor(matrix, names=None):
    """Pairwise LOR table for a binary measurement matrix (rows = subjects)."""
    x = np.asarray(matrix)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError("need a 2-d matrix with at least two columns")
    pairs, lor, se = _lor_arrays(x)
    names = tuple(names) if names is not None else tuple(str(j) for j in range(x.shape[1]))
    return LorTable(pairs=pairs, log_or=lor, se=se, names=names)


def write_rows_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# posterior predictive replicates


def top_patterns(x, top_n):
    """Most frequent rows of ``x`` as (key, count), ties broken by key."""
    counts = Counter(pattern_key(r) for r in np.asarray(x))
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]


def _draw_params(posterior):
    return [posterior.params_at(c, d) for c in range(posterior.n_chains)
            for d in range(posterior.n_draws)]


def _pattern_freq(x, keys):
    if not keys:
        return np.zeros(0)
    J = x.shape[1]
    codes = x.astype(np.int64) @ (1 << np.arange(J - 1, -1, -1))
    targets = np.array([int(k, 2) for k in keys])
    return (codes[:, None] == targets[None, :]).mean(axis=0)


def _replicate_chunk(args):
    params_list, seeds, n_cases, n_controls, keys = args
    freq = {p: [] for p in POPULATIONS}
    lor = {p: [] for p in POPULATIONS}
    for params, s in zip(params_list, seeds):
        rep = simulate(params, n_cases, n_controls, np.random.default_rng(s))
        for pop, x in (("case", rep.cases), ("control", rep.controls)):
            freq[pop].append(_pattern_freq(x, keys[pop]))
            lor[pop].append(_lor_arrays(x)[1])
    return freq, lor


def predictive_replicates(posterior, dataset, top_n=10, seed=0, jobs=1):
    """One replicate dataset of the observed size per retained draw.

    Returns ``(keys, freq, lor)``: the top observed pattern keys per
    population, replicate frequencies ``(draws, top_n)`` of those patterns and
    replicate pairwise LORs ``(draws, n_pairs)``.
    """
    if posterior.n_chains * posterior.n_draws == 0:
        raise ValueError("posterior has no retained draws")
    keys = {"case": [k for k, _ in top_patterns(dataset.cases, top_n)],
            "control": [k for k, _ in top_patterns(dataset.controls, top_n)]}
    params = _draw_params(posterior)
    seeds = np.random.SeedSequence(seed).spawn(len(params))
    n_chunks = max(1, min(jobs, len(params)))
    bounds = np.linspace(0, len(params), n_chunks + 1).astype(int)
    args = [(params[a:b], seeds[a:b], dataset.n_cases, dataset.n_controls, keys)
            for a, b in zip(bounds[:-1], bounds[1:])]
    if n_chunks > 1:
        with ProcessPoolExecutor(max_workers=n_chunks) as pool:
            parts = list(pool.map(_replicate_chunk, args))
    else:
        parts = [_replicate_chunk(a) for a in args]
    freq = {p: np.array([f for part in parts for f in part[0][p]]).reshape(len(params), -1)
            for p in POPULATIONS}
    lor = {p: np.array([v for part in parts for v in part[1][p]]) for p in POPULATIONS}
    return keys, freq, lor


@dataclass(frozen=True)
class PatternPpd:
    """Predictive frequency draws of the top observed patterns in each population."""

    keys: dict
    observed: dict
    draws: dict

    def summary(self):
        out = {}
        for pop in POPULATIONS:
            rows = []
            for i, key in enumerate(self.keys[pop]):
                d = self.draws[pop][:, i]
                q = np.quantile(d, PPD_QUANTILES)
                rows.append({"pattern": key, "observed": float(self.observed[pop][i]),
                             "mean": float(d.mean()),
                             "quantiles": dict(zip([str(v) for v in PPD_QUANTILES], q.tolist())),
                             "inside_95": bool(q[0] <= self.observed[pop][i] <= q[-1])})
            out[pop] = rows
        return out

    def write_json(self, path, extra=None):
        body = {"quantile_levels": list(PPD_QUANTILES), "patterns": self.summary()}
        if extra:
            body.update(extra)
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2)
            fh.write("\n")


def ppd_pattern_freq(posterior, dataset, top_n=10, seed=0, jobs=1, _replicates=None):
    """Posterior predictive distribution of the ``top_n`` most frequent patterns."""
    keys, freq, _ = _replicates or predictive_replicates(posterior, dataset, top_n, seed, jobs)
    observed = {"case": _pattern_freq(np.asarray(dataset.cases), keys["case"]),
                "control": _pattern_freq(np.asarray(dataset.controls), keys["control"])}
    return PatternPpd(keys=keys, observed=observed, draws=freq)


@dataclass(frozen=True)
class SlordMatrix:
    """Standardized observed-minus-predictive LOR per pair and population."""

    pairs: list
    names: tuple
    observed: dict
    pred_mean: dict
    pred_sd: dict
    slord: dict

    @property
    def flagged(self):
        return {p: np.abs(np.nan_to_num(v, nan=0.0)) > SLORD_FLAG for p, v in self.slord.items()}

    def n_flagged(self, population=None):
        f = self.flagged
        if population is not None:
            return int(f[population].sum())
        return {p: int(v.sum()) for p, v in f.items()}

    def matrix(self, population):
        """Symmetric ``(J, J)`` array with NaN on the diagonal and undefined pairs."""
        J = len(self.names)
        out = np.full((J, J), np.nan)
        for p, (j, l) in enumerate(self.pairs):
            out[j, l] = out[l, j] = self.slord[population][p]
        return out

    def rows(self):
        out = []
        for pop in POPULATIONS:
            flags = self.flagged[pop]
            for p, (j, l) in enumerate(self.pairs):
                s = self.slord[pop][p]
                ok = bool(np.isfinite(s))
                out.append({"population": pop, "pathogen_1": self.names[j],
                            "pathogen_2": self.names[l],
                            "observed_lor": _num(self.observed[pop][p]),
                            "predictive_mean": _num(self.pred_mean[pop][p]),
                            "predictive_sd": _num(self.pred_sd[pop][p]),
                            "slord": float(s) if ok else None, "flagged": bool(flags[p]),
                            "defined": ok})
        return out

    def write_csv(self, path):
        write_rows_csv(self.rows(), path)


def _num(v):
    return float(v) if np.isfinite(v) else None


def slord_from_draws(observed, draws):
    """SLORD per pair from observed LORs and replicate LORs ``(draws, pairs)``.

    Replicates where a pair is undefined are dropped; a pair whose predictive
    sd is zero (or which has fewer than two usable replicates) is undefined.
    """
    draws = np.asarray(draws, dtype=float)
    n_ok = np.isfinite(draws).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n_ok > 0, np.nansum(draws, axis=0) / np.maximum(n_ok, 1), np.nan)
        dev = np.where(np.isfinite(draws), draws - mean, 0.0)
        sd = np.where(n_ok > 1, np.sqrt((dev**2).sum(axis=0) / np.maximum(n_ok - 1, 1)), np.nan)
        s = np.where(sd > 0, (np.asarray(observed) - mean) / sd, np.nan)
    return mean, sd, s


def slord(posterior, dataset, seed=0, jobs=1, _replicates=None):
    """Standardized LOR differences between the data and posterior predictive replicates."""
    _, _, lor = _replicates or predictive_replicates(posterior, dataset, 0, seed, jobs)
    obs, mean, sd, s = {}, {}, {}, {}
    pairs = None
    for pop, x in (("case", dataset.cases), ("control", dataset.controls)):
        pairs, obs[pop], _ = _lor_arrays(np.asarray(x))
        mean[pop], sd[pop], s[pop] = slord_from_draws(obs[pop], lor[pop])
    return SlordMatrix(pairs=pairs, names=tuple(dataset.pathogens), observed=obs,
                       pred_mean=mean, pred_sd=sd, slord=s)


def ld_interval_null(posterior, epsilon=0.05, level=0.95):
    """Posterior probability that one subclass carries more than ``1 - epsilon`` of the weight.

    A high probability supports local independence within that population.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    out = {}
    for pop, name in (("case", "eta"), ("control", "nu")):
        mx = posterior.pooled(name).max(axis=1)
        lo, hi = np.quantile(mx, [(1 - level) / 2, (1 + level) / 2])
        out[pop] = {"probability": float(np.mean(mx > 1.0 - epsilon)),
                    "max_weight_mean": float(mx.mean()),
                    "interval": [float(lo), float(hi)], "level": level, "epsilon": epsilon}
    return out


@dataclass(frozen=True)
class EtiologyResult:
    pattern: str
    class_names: tuple
    probabilities: np.ndarray
    n_cases: int

    def to_dict(self):
        return {"pattern": self.pattern, "n_cases": self.n_cases,
                "probabilities": dict(zip(self.class_names, self.probabilities.tolist()))}

    def write_json(self, path, extra=None):
        body = self.to_dict()
        if extra:
            body.update(extra)
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2)
            fh.write("\n")


def individual_etiology(posterior, dataset, pattern):
    """Pooled distribution of the sampled class of every case showing ``pattern``."""
    m = np.asarray(pattern).astype(np.int8).ravel()
    if m.size != dataset.J:
        raise DimensionError(f"pattern has length {m.size}, expected {dataset.J}")
    rows = np.flatnonzero(np.all(np.asarray(dataset.cases) == m, axis=1))
    key = pattern_key(m)
    if rows.size == 0:
        raise PatternNotFound(f"pattern {key} is not observed among cases")
    L = len(posterior.class_names)
    draws = posterior.pooled("case_class")[:, rows].ravel()
    probs = np.bincount(draws, minlength=L)[:L] / draws.size
    return EtiologyResult(pattern=key, class_names=tuple(posterior.class_names),
                          probabilities=probs, n_cases=int(rows.size))
