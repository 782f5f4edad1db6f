"""Domain types and closed-form probability machinery for the nested
partially-latent class model.

Conventions: dimensions, classes and subclasses are 0-based. Rate matrices
``theta`` and ``psi`` have shape ``(J, K)``. When the "other" cause is enabled
``pi`` has length ``J + 1`` and its last entry is the other-cause fraction.
"""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, DimensionError, InfiniteLogOddsRatio

RATE_EPS = 1e-12
SIMPLEX_TOL = 1e-12
MAX_ENUM_J = 20


class ClampWarning(UserWarning):
    """Emitted when a rate of exactly 0 or 1 is moved inside (0, 1)."""


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def clamp_rates(x, name="rate"):
    """Clamp rates into ``[RATE_EPS, 1 - RATE_EPS]``, warning when anything moves."""
    x = np.asarray(x, dtype=float)
    out = np.clip(x, RATE_EPS, 1.0 - RATE_EPS)
    if np.any(out != x):
        warnings.warn(f"{name}: {int(np.sum(out != x))} entries clamped into "
                      f"[{RATE_EPS:g}, 1-{RATE_EPS:g}]", ClampWarning, stacklevel=3)
    return out


def _check_simplex(w, name):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DimensionError(f"{name} must be a non-empty 1-d array")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{name} sums to {w.sum()!r}, not 1")
    return w


@dataclass(frozen=True)
class Dataset:
    """Case and control binary measurement matrices."""

    cases: np.ndarray
    controls: np.ndarray
    pathogens: tuple = ()
    include_other_cause: bool = False

    def __post_init__(self):
        cases = np.asarray(self.cases)
        controls = np.asarray(self.controls)
        if cases.ndim != 2 or controls.ndim != 2:
            raise DimensionError("case and control matrices must be 2-d")
        if cases.shape[1] != controls.shape[1]:
            raise DimensionError(f"cases have {cases.shape[1]} columns, controls {controls.shape[1]}")
        if cases.shape[0] < 1 or controls.shape[0] < 1:
            raise ValueError("need at least one case and one control")
        if cases.shape[1] < 2:
            raise DimensionError("need at least two measurement dimensions")
        for name, m in (("cases", cases), ("controls", controls)):
            if not np.all((m == 0) | (m == 1)):
                raise ValueError(f"{name} must contain only 0/1 entries")
        J = cases.shape[1]
        names = tuple(self.pathogens) if self.pathogens else tuple(default_names(J))
        if len(names) != J:
            raise DimensionError(f"{len(names)} pathogen names for {J} columns")
        object.__setattr__(self, "cases", _readonly(cases.astype(np.int8)))
        object.__setattr__(self, "controls", _readonly(controls.astype(np.int8)))
        object.__setattr__(self, "pathogens", names)

    @property
    def J(self):
        return self.cases.shape[1]

    @property
    def n_cases(self):
        return self.cases.shape[0]

    @property
    def n_controls(self):
        return self.controls.shape[0]

    @property
    def n_classes(self):
        return self.J + int(self.include_other_cause)

    def class_names(self):
        names = list(self.pathogens)
        if self.include_other_cause:
            names.append("other")
        return names


def default_names(J):
    """A, B, ..., Z, then P27, P28, ..."""
    return [chr(ord("A") + j) if j < 26 else f"P{j + 1}" for j in range(J)]


@dataclass(frozen=True)
class ModelParams:
    """Full parameter state of one npLCM configuration."""

    pi: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    alpha0: float = 1.0
    alpha1: float = 1.0

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if theta.shape != psi.shape:
            raise DimensionError(f"theta {theta.shape} and psi {psi.shape} differ")
        J, K = theta.shape
        pi = _check_simplex(self.pi, "pi")
        eta = _check_simplex(self.eta, "eta")
        nu = _check_simplex(self.nu, "nu")
        if pi.size not in (J, J + 1):
            raise DimensionError(f"pi has length {pi.size}; expected {J} or {J + 1}")
        if eta.size != K or nu.size != K:
            raise DimensionError(f"eta/nu lengths {eta.size}/{nu.size} do not match K={K}")
        if not (self.alpha0 > 0 and self.alpha1 > 0):
            raise ValueError("concentration parameters must be positive")
        for name, arr in (("theta", theta), ("psi", psi)):
            if np.any(~np.isfinite(arr)) or np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        object.__setattr__(self, "theta", _readonly(clamp_rates(theta, "theta")))
        object.__setattr__(self, "psi", _readonly(clamp_rates(psi, "psi")))
        object.__setattr__(self, "pi", _readonly(pi))
        object.__setattr__(self, "eta", _readonly(eta))
        object.__setattr__(self, "nu", _readonly(nu))
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "alpha1", float(self.alpha1))

    @property
    def J(self):
        return self.theta.shape[0]

    @property
    def K(self):
        return self.theta.shape[1]

    @property
    def has_other(self):
        return self.pi.size == self.J + 1

    def replace(self, **changes):
        fields = dict(pi=self.pi, theta=self.theta, psi=self.psi, eta=self.eta, nu=self.nu,
                      alpha0=self.alpha0, alpha1=self.alpha1)
        fields.update(changes)
        return ModelParams(**fields)

    def to_dict(self):
        out = {}
        for name in ("pi", "theta", "psi", "eta", "nu"):
            arr = getattr(self, name)
            out[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        out["alpha0"] = self.alpha0
        out["alpha1"] = self.alpha1
        return out

    @classmethod
    def from_dict(cls, doc):
        kw = {}
        for name in ("pi", "theta", "psi", "eta", "nu"):
            entry = doc[name]
            kw[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        return cls(alpha0=doc.get("alpha0", 1.0), alpha1=doc.get("alpha1", 1.0), **kw)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LatentState:
    """Class indicators for cases and subclass indicators for everybody."""

    case_class: np.ndarray
    case_subclass: np.ndarray
    control_subclass: np.ndarray

    def validate(self, n_classes, K):
        for name, arr, hi in (("case_class", self.case_class, n_classes),
                              ("case_subclass", self.case_subclass, K),
                              ("control_subclass", self.control_subclass, K)):
            arr = np.asarray(arr)
            if arr.size and (arr.min() < 0 or arr.max() >= hi):
                raise ValueError(f"{name} has indices outside [0, {hi})")
        if len(self.case_class) != len(self.case_subclass):
            raise DimensionError("case_class and case_subclass lengths differ")
        return self


@dataclass(frozen=True)
class HyperPriors:
    """Prior hyperparameters.

    ``tpr_beta`` and ``fpr_beta`` are ``(J, 2)`` (one pair per dimension,
    replicated over subclasses) or ``(J, K, 2)`` arrays.
    """

    dirichlet_a: np.ndarray
    tpr_beta: np.ndarray
    fpr_beta: np.ndarray
    alpha0_gamma: tuple = (0.25, 0.25)
    alpha1_gamma: tuple = (0.25, 0.25)

    def __post_init__(self):
        for name in ("dirichlet_a", "tpr_beta", "fpr_beta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(~(arr > 0)):
                raise ValueError(f"{name} must be strictly positive")
            object.__setattr__(self, name, _readonly(arr))
        for name in ("alpha0_gamma", "alpha1_gamma"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"{name} must be a positive (shape, rate) pair")
            object.__setattr__(self, name, pair)
        J = self.tpr_beta.shape[0]
        if self.fpr_beta.shape[0] != J or self.dirichlet_a.size not in (J, J + 1):
            raise DimensionError("hyperprior shapes are inconsistent")

    @classmethod
    def default(cls, J, include_other_cause=False, tpr=(1.0, 1.0)):
        """Flat priors everywhere except the TPR pair, shared across dimensions."""
        tpr = np.asarray(tpr, dtype=float)
        tpr_beta = np.broadcast_to(tpr, (J, 2)) if tpr.ndim == 1 else tpr
        return cls(dirichlet_a=np.ones(J + int(include_other_cause)),
                   tpr_beta=np.array(tpr_beta),
                   fpr_beta=np.ones((J, 2)))

    @property
    def J(self):
        return self.tpr_beta.shape[0]

    def _expand(self, arr, K):
        if arr.ndim == 2:
            return np.repeat(arr[:, None, :], K, axis=1)
        if arr.shape[1] < K:
            raise DimensionError(f"per-subclass hyperparameters given for {arr.shape[1]} < K={K} subclasses")
        return arr[:, :K, :]

    def tpr_matrix(self, K):
        """``(J, K, 2)`` Beta pairs for the TPRs."""
        return self._expand(self.tpr_beta, K)

    def fpr_matrix(self, K):
        return self._expand(self.fpr_beta, K)


# ---------------------------------------------------------------------------
# pattern likelihoods


def enumerate_patterns(J):
    """All ``2**J`` binary patterns as rows, in lexicographic order."""
    if J > MAX_ENUM_J:
        raise CapabilityError(f"pattern enumeration limited to J <= {MAX_ENUM_J} (got J={J})")
    return np.array(list(itertools.product((0, 1), repeat=J)), dtype=np.int8)


def _as_rows(m, J):
    m = np.asarray(m)
    single = m.ndim == 1
    m = np.atleast_2d(m)
    if m.shape[1] != J:
        raise DimensionError(f"pattern length {m.shape[1]} does not match J={J}")
    return m.astype(float), single


def _bernoulli_loglik(m, rates):
    """``(n, K)`` log-likelihood of rows ``m`` under each column of ``rates`` (J, K)."""
    return m @ np.log(rates) + (1.0 - m) @ np.log1p(-rates)


def log_control_probs(m, nu, psi):
    """Per-row log P0 and the ``(n, K)`` joint log terms log nu_k + log f_k(m)."""
    with np.errstate(divide="ignore"):
        terms = _bernoulli_loglik(m, psi) + np.log(nu)[None, :]
    return logsumexp(terms, axis=1), terms


def case_class_subclass_logterms(m, pi, theta, psi, eta):
    """``(n, L, K)`` array of log[pi_l eta_k f_lk(m)].

    Class ``l < J`` uses ``theta`` on dimension ``l`` and ``psi`` elsewhere; a
    trailing other-cause class (``len(pi) == J + 1``) uses ``psi`` throughout.
    """
    J, K = theta.shape
    base = _bernoulli_loglik(m, psi)  # (n, K)
    swap_pos = np.log(theta) - np.log(psi)  # (J, K)
    swap_neg = np.log1p(-theta) - np.log1p(-psi)
    delta = m[:, :, None] * swap_pos[None] + (1.0 - m)[:, :, None] * swap_neg[None]  # (n, J, K)
    loglik = base[:, None, :] + delta
    if pi.size == J + 1:
        loglik = np.concatenate([loglik, base[:, None, :]], axis=1)
    with np.errstate(divide="ignore"):
        return loglik + np.log(pi)[None, :, None] + np.log(eta)[None, None, :]


def _check_other(params, include_other):
    if include_other is None:
        return params.has_other
    if bool(include_other) != params.has_other:
        raise DimensionError(
            f"pi has length {params.pi.size} but include_other={include_other} with J={params.J}")
    return bool(include_other)


def log_case_probs(m, params, include_other=None):
    _check_other(params, include_other)
    m, _ = _as_rows(m, params.J)
    terms = case_class_subclass_logterms(m, params.pi, params.theta, params.psi, params.eta)
    return logsumexp(terms.reshape(len(m), -1), axis=1)


def control_pattern_prob(m, nu, psi):
    """P0(m): probability of pattern(s) ``m`` for a control."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    nu = np.asarray(nu, dtype=float)
    if nu.size != psi.shape[1]:
        raise DimensionError(f"nu has length {nu.size} but psi has {psi.shape[1]} subclasses")
    rows, single = _as_rows(m, psi.shape[0])
    out = np.exp(log_control_probs(rows, nu, psi)[0])
    return float(out[0]) if single else out


def case_pattern_prob(m, params, include_other=None):
    """P1(m): probability of pattern(s) ``m`` for a case."""
    _check_other(params, include_other)
    rows, single = _as_rows(m, params.J)
    out = np.exp(log_case_probs(rows, params))
    return float(out[0]) if single else out


def joint_log_likelihood(dataset, params):
    """Sum of log P0 over controls plus sum of log P1 over cases."""
    if dataset.J != params.J:
        raise DimensionError(f"dataset J={dataset.J} but params J={params.J}")
    _check_other(params, dataset.include_other_cause)
    ctrl = log_control_probs(dataset.controls.astype(float), params.nu, params.psi)[0]
    case = log_case_probs(dataset.cases, params)
    return float(ctrl.sum() + case.sum())


def class_posterior(m, params):
    """Exact P(I = l | M = m, params) for a case, marginalising the subclass."""
    rows, single = _as_rows(m, params.J)
    terms = case_class_subclass_logterms(rows, params.pi, params.theta, params.psi, params.eta)
    per_class = logsumexp(terms, axis=2)
    post = np.exp(per_class - logsumexp(per_class, axis=1, keepdims=True))
    return post[0] if single else post


# ---------------------------------------------------------------------------
# marginal summaries


def _population(population):
    if population not in ("case", "control"):
        raise ValueError(f"population must be 'case' or 'control', got {population!r}")
    return population


def marginal_rate(j, params, population):
    """P(M_j = 1) among cases or controls."""
    _population(population)
    if not 0 <= j < params.J:
        raise DimensionError(f"dimension {j} outside [0, {params.J})")
    fpr_case = params.psi[j] @ params.eta
    if population == "control":
        return float(params.psi[j] @ params.nu)
    tpr = params.theta[j] @ params.eta
    return float(params.pi[j] * tpr + (1.0 - params.pi[j]) * fpr_case)


def _pair_rates(j, l, params, population):
    """Per-(class, subclass) positive rates on dims j and l, with class and subclass weights."""
    if population == "control":
        return params.psi[j][None, :], params.psi[l][None, :], np.ones(1), params.nu
    L = params.pi.size
    rj = np.repeat(params.psi[j][None, :], L, axis=0)
    rl = np.repeat(params.psi[l][None, :], L, axis=0)
    rj[j] = params.theta[j]
    rl[l] = params.theta[l]
    return rj, rl, params.pi, params.eta


def pair_cell_probs(j, l, params, population):
    """2x2 array ``P(M_j = a, M_l = b)`` computed in closed form."""
    _population(population)
    if j == l:
        raise ValueError("pairwise quantities need j != l")
    for d in (j, l):
        if not 0 <= d < params.J:
            raise DimensionError(f"dimension {d} outside [0, {params.J})")
    rj, rl, cw, sw = _pair_rates(j, l, params, population)
    cells = np.empty((2, 2))
    for a in (0, 1):
        pj = rj if a else 1.0 - rj
        for b in (0, 1):
            pl = rl if b else 1.0 - rl
            cells[a, b] = cw @ ((pj * pl) @ sw)
    return cells


def pairwise_log_or(j, l, params, population):
    """Marginal log odds ratio between dimensions j and l.

    Raises :class:`InfiniteLogOddsRatio` when a cell probability is zero.
    """
    cells = pair_cell_probs(j, l, params, population)
    num = cells[1, 1] * cells[0, 0]
    den = cells[1, 0] * cells[0, 1]
    if num == 0 or den == 0:
        if num == den:
            raise InfiniteLogOddsRatio(0)
        raise InfiniteLogOddsRatio(1 if den == 0 else -1)
    return float(np.log(cells[1, 1]) + np.log(cells[0, 0]) - np.log(cells[1, 0]) - np.log(cells[0, 1]))


# ---------------------------------------------------------------------------
# file formats


def read_dataset_csv(path, include_other_cause=False):
    """Read a dataset CSV: a ``group`` column (case/control) plus 0/1 pathogen columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "group" not in header:
            raise ValueError(f"{path}: missing 'group' column")
        gidx = header.index("group")
        names = [h for i, h in enumerate(header) if i != gidx]
        cases, controls = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            group = row[gidx].strip().lower()
            try:
                values = [int(v) for i, v in enumerate(row) if i != gidx]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer measurement") from None
            if group == "case":
                cases.append(values)
            elif group == "control":
                controls.append(values)
            else:
                raise ValueError(f"{path}:{lineno}: group must be case or control, got {group!r}")
    J = len(names)
    return Dataset(cases=np.array(cases, dtype=np.int8).reshape(-1, J),
                   controls=np.array(controls, dtype=np.int8).reshape(-1, J),
                   pathogens=tuple(names), include_other_cause=include_other_cause)


def write_dataset_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", *dataset.pathogens])
        for row in dataset.cases:
            writer.writerow(["case", *row.tolist()])
        for row in dataset.controls:
            writer.writerow(["control", *row.tolist()])


def pattern_key(m):
    """Compact string form of a binary pattern, e.g. ``"01001"``."""
    return "".join(str(int(v)) for v in m)


def parse_pattern(text, J=None):
    text = text.strip()
    if not text or any(c not in "01" for c in text):
        raise ValueError(f"pattern must be a string of 0/1 characters, got {text!r}")
    if J is not None and len(text) != J:
        raise DimensionError(f"pattern {text!r} has length {len(text)}, expected {J}")
    return np.array([int(c) for c in text], dtype=np.int8)
