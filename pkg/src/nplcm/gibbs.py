"""Blocked Gibbs sampler for the npLCM with a truncated stick-breaking prior.

One sweep runs, in order: case class indicators, subclass indicators (cases
then controls), case subclass weights, control subclass weights, the two
concentration parameters, TPRs, FPRs and the etiologic fractions.

Randomness: every chain owns one counter-based (Philox) stream per step,
derived from ``(seed, chain, step)``. Control-side steps never read a case
quantity when the feedback cut is on, so their streams are unaffected by the
case data.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import NumericError
from .model import RATE_EPS, HyperPriors, LatentState, ModelParams

log = logging.getLogger(__name__)

STEPS = ("init_case", "init_control", "case_class", "case_subclass", "control_subclass",
         "eta", "nu", "alpha1", "alpha0", "theta", "psi", "pi")


@dataclass(frozen=True)
class SamplerConfig:
    truncation_K: int = 10
    n_burn: int = 10_000
    n_keep: int = 50_000
    thin: int = 50
    n_chains: int = 3
    seed: int = 0
    cut_feedback: bool = False
    include_other_cause: bool = False

    def __post_init__(self):
        if self.truncation_K < 1:
            raise ValueError("truncation_K must be >= 1")
        if self.thin < 1 or self.n_keep < 1 or self.n_chains < 1 or self.n_burn < 0:
            raise ValueError("need thin >= 1, n_keep >= 1, n_chains >= 1, n_burn >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_draws(self):
        return self.n_keep // self.thin

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def chain_streams(seed, chain):
    """One independent Philox generator per sampler step for this chain."""
    return {name: np.random.Generator(np.random.Philox(
                np.random.SeedSequence(seed, spawn_key=(chain, i))))
            for i, name in enumerate(STEPS)}


@dataclass
class ChainState:
    """Mutable working state of one chain.

    Stick-breaking weights are kept on the log scale together with the log
    complements of their sticks, so tiny concentration parameters never
    produce a stick of exactly 1.
    """

    pi: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    log_eta: np.ndarray
    log_nu: np.ndarray
    eta_log1m_sticks: np.ndarray
    nu_log1m_sticks: np.ndarray
    alpha0: float
    alpha1: float
    case_class: np.ndarray
    case_subclass: np.ndarray
    control_subclass: np.ndarray

    @property
    def K(self):
        return self.theta.shape[1]

    @property
    def eta(self):
        return _normalise(np.exp(self.log_eta))

    @property
    def nu(self):
        return _normalise(np.exp(self.log_nu))

    def to_params(self):
        return ModelParams(pi=_normalise(self.pi), theta=self.theta, psi=self.psi, eta=self.eta,
                           nu=self.nu, alpha0=self.alpha0, alpha1=self.alpha1)

    def latent(self):
        return LatentState(self.case_class.copy(), self.case_subclass.copy(),
                           self.control_subclass.copy())

    @classmethod
    def from_params(cls, params, latent):
        """Build a state from a parameter set (sticks recovered from the weights)."""
        from .priors import sticks_from_weights

        def log_parts(w):
            u = sticks_from_weights(w)
            with np.errstate(divide="ignore"):
                return np.log(w), np.log1p(-np.minimum(u, 1 - RATE_EPS))

        log_eta, e1m = log_parts(params.eta)
        log_nu, n1m = log_parts(params.nu)
        return cls(pi=np.array(params.pi), theta=np.array(params.theta), psi=np.array(params.psi),
                   log_eta=log_eta, log_nu=log_nu, eta_log1m_sticks=e1m, nu_log1m_sticks=n1m,
                   alpha0=params.alpha0, alpha1=params.alpha1,
                   case_class=np.asarray(latent.case_class, dtype=np.int64).copy(),
                   case_subclass=np.asarray(latent.case_subclass, dtype=np.int64).copy(),
                   control_subclass=np.asarray(latent.control_subclass, dtype=np.int64).copy())


def _normalise(w):
    w = np.asarray(w, dtype=float)
    s = w.sum()
    return w / s if s != 1.0 else w


def draw_categorical(logw, rng):
    """One categorical draw per row of unnormalised log weights; one uniform per row."""
    logw = np.atleast_2d(logw)
    u = rng.random(logw.shape[0])
    top = logw.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise NumericError("all-zero unnormalised weights in a categorical draw",
                           rows=np.flatnonzero(~np.isfinite(top[:, 0])).tolist()[:10])
    cdf = np.cumsum(np.exp(logw - top), axis=1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, logw.shape[1] - 1)


def _bern_loglik(m, rates):
    return m * np.log(rates) + (1.0 - m) * np.log1p(-rates)


# ---------------------------------------------------------------------------
# step 1: case class indicators


def case_class_logweights(cases, case_subclass, pi, theta, psi):
    """``(n1, L)`` unnormalised log P(I = l | Z, M, params).

    The subclass weight eta_Z is common to every class and is omitted.
    """
    m = np.asarray(cases, dtype=float)
    J = theta.shape[0]
    psi_z = psi[:, case_subclass].T  # (n1, J)
    theta_z = theta[:, case_subclass].T
    base_terms = _bern_loglik(m, psi_z)
    base = base_terms.sum(axis=1)
    logw = base[:, None] - base_terms + _bern_loglik(m, theta_z)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)
    logw = logw + logpi[None, :J]
    if pi.size == J + 1:
        logw = np.column_stack([logw, base + logpi[J]])
    return logw


def case_class_probs(cases, case_subclass, pi, theta, psi):
    logw = case_class_logweights(cases, case_subclass, pi, theta, psi)
    return np.exp(logw - logsumexp(logw, axis=1, keepdims=True))


def step_case_class(state, data, rng):
    logw = case_class_logweights(data.cases, state.case_subclass, state.pi, state.theta, state.psi)
    return draw_categorical(logw, rng)


# ---------------------------------------------------------------------------
# step 2: subclass indicators


def case_subclass_logweights(cases, case_class, theta, psi, log_eta):
    m = np.asarray(cases, dtype=float)
    J = theta.shape[0]
    logw = m @ np.log(psi) + (1.0 - m) @ np.log1p(-psi) + log_eta[None, :]
    own = case_class < J
    if np.any(own):
        rows = np.flatnonzero(own)
        cls = case_class[own]
        mj = m[rows, cls][:, None]
        logw[rows] += (mj * (np.log(theta[cls]) - np.log(psi[cls]))
                       + (1.0 - mj) * (np.log1p(-theta[cls]) - np.log1p(-psi[cls])))
    return logw


def control_subclass_logweights(controls, psi, log_nu):
    m = np.asarray(controls, dtype=float)
    return m @ np.log(psi) + (1.0 - m) @ np.log1p(-psi) + log_nu[None, :]


def step_subclass(state, data, case_rng, control_rng):
    """Returns new ``(case_subclass, control_subclass)``."""
    if state.K == 1:
        return (np.zeros(data.n_cases, dtype=np.int64), np.zeros(data.n_controls, dtype=np.int64))
    zc = draw_categorical(case_subclass_logweights(data.cases, state.case_class, state.theta,
                                                   state.psi, state.log_eta), case_rng)
    z0 = draw_categorical(control_subclass_logweights(data.controls, state.psi, state.log_nu),
                          control_rng)
    return zc, z0


# ---------------------------------------------------------------------------
# steps 3-5: stick-breaking weights and concentrations


def stick_beta_params(counts, alpha):
    """Beta parameters of the K-1 free sticks: (1 + z_k, alpha + sum_{l>k} z_l)."""
    counts = np.asarray(counts, dtype=float)
    tail = np.cumsum(counts[::-1])[::-1]  # tail[k] = sum_{l>=k} z_l
    return 1.0 + counts[:-1], alpha + tail[1:]


def log_beta_draw(a, b, rng):
    """Draw V ~ Beta(a, b) returned as ``(log V, log(1 - V))``.

    Uses log G(s) = log G(s + 1) + log(U) / s, which stays finite for shapes
    far below 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ga = np.log(rng.gamma(a + 1.0)) + np.log(rng.random(a.shape)) / a
    gb = np.log(rng.gamma(b + 1.0)) + np.log(rng.random(b.shape)) / b
    tot = np.logaddexp(ga, gb)
    return ga - tot, gb - tot


def log_stick_weights(log_sticks, log1m_sticks):
    """Log stick-breaking weights; the last segment takes the remainder."""
    prefix = np.concatenate([[0.0], np.cumsum(log1m_sticks)])
    return np.concatenate([log_sticks + prefix[:-1], prefix[-1:]])


def _step_weights(counts, alpha, rng):
    if counts.size == 1:
        return np.zeros(1), np.zeros(0)
    a, b = stick_beta_params(counts, alpha)
    lv, l1m = log_beta_draw(a, b, rng)
    return log_stick_weights(lv, l1m), l1m


def step_eta(state, rng):
    """Case subclass weights; counts pooled over every case class."""
    counts = np.bincount(state.case_subclass, minlength=state.K)
    return _step_weights(counts, state.alpha1, rng)


def step_nu(state, rng):
    counts = np.bincount(state.control_subclass, minlength=state.K)
    return _step_weights(counts, state.alpha0, rng)


def alpha_gamma_params(log1m_sticks, prior, K):
    """Gamma (shape, rate) conditional of a concentration parameter."""
    r = -float(np.sum(log1m_sticks))
    return prior[0] + K - 1, prior[1] + r


def step_alpha(state, hyper, rng0, rng1):
    """Returns new ``(alpha0, alpha1)``."""
    out = []
    for log1m, prior, rng in ((state.nu_log1m_sticks, hyper.alpha0_gamma, rng0),
                              (state.eta_log1m_sticks, hyper.alpha1_gamma, rng1)):
        shape, rate = alpha_gamma_params(log1m, prior, state.K)
        out.append(max(float(rng.gamma(shape, 1.0 / rate)), 1e-300))
    return tuple(out)


# ---------------------------------------------------------------------------
# steps 6-8: rates and etiologic fractions


def tpr_counts(cases, case_class, case_subclass, J, K):
    """``(J, K, 2)`` counts m[j, k, c] = #{cases: I=j, Z=k, M_j=c}."""
    own = case_class < J
    cls = case_class[own]
    sub = case_subclass[own]
    pos = np.asarray(cases)[np.flatnonzero(own), cls]
    flat = cls * K + sub
    n1 = np.bincount(flat, weights=pos, minlength=J * K).reshape(J, K)
    tot = np.bincount(flat, minlength=J * K).reshape(J, K)
    return np.stack([tot - n1, n1], axis=-1)


def fpr_counts(data, case_class, case_subclass, control_subclass, K, cut_feedback):
    """``(J, K, 2)`` counts s[j, k, c] pooling controls and (unless cut) cases with I != j."""
    ctrl = np.asarray(data.controls, dtype=float)
    onehot0 = np.eye(K)[control_subclass]
    pos = ctrl.T @ onehot0
    tot = np.broadcast_to(onehot0.sum(axis=0), pos.shape).copy()
    if not cut_feedback:
        m = np.asarray(data.cases, dtype=float)
        onehot1 = np.eye(K)[case_subclass]
        own = tpr_counts(data.cases, case_class, case_subclass, data.J, K)
        pos = pos + m.T @ onehot1 - own[..., 1]
        tot = tot + onehot1.sum(axis=0)[None, :] - own.sum(axis=-1)
    return np.stack([tot - pos, pos], axis=-1)


def step_tpr(state, data, tpr_prior, rng):
    J, K = state.theta.shape
    counts = tpr_counts(data.cases, state.case_class, state.case_subclass, J, K)
    draw = rng.beta(tpr_prior[..., 0] + counts[..., 1], tpr_prior[..., 1] + counts[..., 0])
    return np.clip(draw, RATE_EPS, 1.0 - RATE_EPS)


def step_fpr(state, data, fpr_prior, rng, cut_feedback):
    counts = fpr_counts(data, state.case_class, state.case_subclass, state.control_subclass,
                        state.K, cut_feedback)
    draw = rng.beta(fpr_prior[..., 0] + counts[..., 1], fpr_prior[..., 1] + counts[..., 0])
    return np.clip(draw, RATE_EPS, 1.0 - RATE_EPS)


def step_pi(state, dirichlet_a, rng):
    t = np.bincount(state.case_class, minlength=dirichlet_a.size)
    return rng.dirichlet(dirichlet_a + t)


# ---------------------------------------------------------------------------
# chains


def _check_inputs(data, hyper, config):
    L = data.J + int(config.include_other_cause)
    if data.include_other_cause != config.include_other_cause:
        data = dataclasses.replace(data, include_other_cause=config.include_other_cause)
    if hyper.J != data.J:
        raise ValueError(f"hyperpriors are for J={hyper.J}, data has J={data.J}")
    if hyper.dirichlet_a.size != L:
        raise ValueError(f"dirichlet_a has length {hyper.dirichlet_a.size}, expected {L}")
    return data


def initial_state(data, hyper, K, include_other, case_rng, control_rng):
    """Heuristic starting point.

    Each case goes to the positive dimension with the highest case/control
    positive-rate ratio (ties broken at random); all-negative cases go to the
    other cause when enabled, otherwise to a uniform class. Rates start at
    their prior means, subclasses uniformly at random.
    """
    J = data.J
    n1, n0 = data.n_cases, data.n_controls
    cases = np.asarray(data.cases)
    r1 = (cases.sum(axis=0) + 0.5) / (n1 + 1.0)
    r0 = (np.asarray(data.controls).sum(axis=0) + 0.5) / (n0 + 1.0)
    ratio = r1 / r0
    key = np.where(cases == 1, ratio[None, :], -np.inf)
    top = key.max(axis=1, keepdims=True)
    tie = (key == top) & np.isfinite(key)
    jitter = case_rng.random((n1, J))
    cls = np.argmax(np.where(tie, jitter, -1.0), axis=1)
    blank = ~np.any(cases == 1, axis=1)
    random_cls = case_rng.integers(J, size=n1)
    cls = np.where(blank, J if include_other else random_cls, cls)
    L = J + int(include_other)
    t = np.bincount(cls, minlength=L)
    tpr = hyper.tpr_matrix(K)
    fpr = hyper.fpr_matrix(K)
    log_w = np.full(K, -np.log(K))
    # sticks for uniform weights: 1/K, 1/(K-1), ..., 1/2
    log1m = np.log1p(-1.0 / np.arange(K, 1, -1)) if K > 1 else np.zeros(0)
    return ChainState(
        pi=(t + hyper.dirichlet_a) / (n1 + hyper.dirichlet_a.sum()),
        theta=tpr[..., 0] / tpr.sum(axis=-1),
        psi=fpr[..., 0] / fpr.sum(axis=-1),
        log_eta=log_w.copy(), log_nu=log_w.copy(),
        eta_log1m_sticks=log1m.copy(), nu_log1m_sticks=log1m.copy(),
        alpha0=1.0, alpha1=1.0,
        case_class=cls.astype(np.int64),
        case_subclass=case_rng.integers(K, size=n1),
        control_subclass=control_rng.integers(K, size=n0),
    )


def sample_prior(hyper, K, n_cases, n_controls, include_other, rng):
    """Draw parameters and latent indicators from the (truncated) prior."""
    J = hyper.J
    a = np.asarray(hyper.dirichlet_a, dtype=float)
    if a.size != J + int(include_other):
        raise ValueError("dirichlet_a length does not match include_other")
    tpr = hyper.tpr_matrix(K)
    fpr = hyper.fpr_matrix(K)
    alpha0 = max(float(rng.gamma(hyper.alpha0_gamma[0], 1.0 / hyper.alpha0_gamma[1])), 1e-300)
    alpha1 = max(float(rng.gamma(hyper.alpha1_gamma[0], 1.0 / hyper.alpha1_gamma[1])), 1e-300)

    def weights(alpha):
        if K == 1:
            return np.zeros(1), np.zeros(0)
        lv, l1m = log_beta_draw(np.ones(K - 1), np.full(K - 1, alpha), rng)
        return log_stick_weights(lv, l1m), l1m

    log_eta, e1m = weights(alpha1)
    log_nu, n1m = weights(alpha0)
    pi = rng.dirichlet(a)
    state = ChainState(
        pi=pi, theta=np.clip(rng.beta(tpr[..., 0], tpr[..., 1]), RATE_EPS, 1 - RATE_EPS),
        psi=np.clip(rng.beta(fpr[..., 0], fpr[..., 1]), RATE_EPS, 1 - RATE_EPS),
        log_eta=log_eta, log_nu=log_nu, eta_log1m_sticks=e1m, nu_log1m_sticks=n1m,
        alpha0=alpha0, alpha1=alpha1,
        case_class=draw_categorical(np.tile(np.log(np.maximum(pi, 1e-300)), (n_cases, 1)), rng),
        case_subclass=draw_categorical(np.tile(log_eta, (n_cases, 1)), rng),
        control_subclass=draw_categorical(np.tile(log_nu, (n_controls, 1)), rng),
    )
    return state


def sweep(state, data, hyper_mats, streams, cut_feedback):
    """One full Gibbs sweep, updating ``state`` in place."""
    dirichlet_a, tpr_prior, fpr_prior, hyper = hyper_mats
    state.case_class = step_case_class(state, data, streams["case_class"])
    state.case_subclass, state.control_subclass = step_subclass(
        state, data, streams["case_subclass"], streams["control_subclass"])
    state.log_eta, state.eta_log1m_sticks = step_eta(state, streams["eta"])
    state.log_nu, state.nu_log1m_sticks = step_nu(state, streams["nu"])
    state.alpha0, state.alpha1 = step_alpha(state, hyper, streams["alpha0"], streams["alpha1"])
    state.theta = step_tpr(state, data, tpr_prior, streams["theta"])
    state.psi = step_fpr(state, data, fpr_prior, streams["psi"], cut_feedback)
    state.pi = step_pi(state, dirichlet_a, streams["pi"])
    return state


def hyper_matrices(hyper, K):
    return (np.asarray(hyper.dirichlet_a, dtype=float), hyper.tpr_matrix(K), hyper.fpr_matrix(K), hyper)


def run_chain(data, hyper, config, chain, initial=None):
    """Run one chain and return a dict of retained draw arrays."""
    data = _check_inputs(data, hyper, config)
    K = config.truncation_K
    streams = chain_streams(config.seed, chain)
    if initial is None:
        state = initial_state(data, hyper, K, config.include_other_cause,
                              streams["init_case"], streams["init_control"])
    else:
        state = initial
    mats = hyper_matrices(hyper, K)
    D = config.n_draws
    J, L = data.J, data.n_classes
    out = {
        "pi": np.empty((D, L)), "theta": np.empty((D, J, K)), "psi": np.empty((D, J, K)),
        "eta": np.empty((D, K)), "nu": np.empty((D, K)),
        "alpha0": np.empty(D), "alpha1": np.empty(D),
        "case_class": np.empty((D, data.n_cases), dtype=np.int16),
        "case_subclass": np.empty((D, data.n_cases), dtype=np.int16),
        "control_subclass": np.empty((D, data.n_controls), dtype=np.int16),
    }
    d = 0
    total = config.n_burn + D * config.thin
    for it in range(total):
        try:
            sweep(state, data, mats, streams, config.cut_feedback)
        except NumericError as exc:
            raise NumericError(str(exc), chain=chain, iteration=it) from exc
        kept = it - config.n_burn + 1
        if kept > 0 and kept % config.thin == 0:
            out["pi"][d] = state.pi
            out["theta"][d] = state.theta
            out["psi"][d] = state.psi
            out["eta"][d] = state.eta
            out["nu"][d] = state.nu
            out["alpha0"][d] = state.alpha0
            out["alpha1"][d] = state.alpha1
            out["case_class"][d] = state.case_class
            out["case_subclass"][d] = state.case_subclass
            out["control_subclass"][d] = state.control_subclass
            d += 1
    return out


def _run_chain_args(args):
    return run_chain(*args)


def run(data, hyper, config, jobs=1):
    """Run ``config.n_chains`` independent chains and collect the retained draws."""
    data = _check_inputs(data, hyper, config)
    args = [(data, hyper, config, c) for c in range(config.n_chains)]
    if jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.n_chains)) as pool:
            chains = list(pool.map(_run_chain_args, args))
    else:
        chains = [run_chain(*a) for a in args]
    stacked = {k: np.stack([c[k] for c in chains]) for k in chains[0]}
    return PosteriorSamples(config=config, pathogens=tuple(data.pathogens),
                            class_names=tuple(data.class_names()), **stacked)


# ---------------------------------------------------------------------------
# posterior container and persistence

_FLOAT_FIELDS = ("pi", "theta", "psi", "eta", "nu", "alpha0", "alpha1")
_INT_FIELDS = ("case_class", "case_subclass", "control_subclass")


@dataclass(frozen=True)
class PosteriorSamples:
    """Retained draws; every array has leading axes ``(chain, draw)``."""

    pi: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    alpha0: np.ndarray
    alpha1: np.ndarray
    case_class: np.ndarray
    case_subclass: np.ndarray
    control_subclass: np.ndarray
    config: SamplerConfig
    pathogens: tuple
    class_names: tuple

    def __post_init__(self):
        for name in _FLOAT_FIELDS + _INT_FIELDS:
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_chains(self):
        return self.pi.shape[0]

    @property
    def n_draws(self):
        return self.pi.shape[1]

    @property
    def J(self):
        return self.theta.shape[2]

    @property
    def K(self):
        return self.theta.shape[3]

    def pooled(self, name):
        arr = getattr(self, name)
        return arr.reshape((-1,) + arr.shape[2:])

    def params_at(self, chain, draw):
        return ModelParams(pi=_normalise(self.pi[chain, draw]), theta=self.theta[chain, draw],
                           psi=self.psi[chain, draw], eta=_normalise(self.eta[chain, draw]),
                           nu=_normalise(self.nu[chain, draw]), alpha0=self.alpha0[chain, draw],
                           alpha1=self.alpha1[chain, draw])

    def iter_params(self):
        for c in range(self.n_chains):
            for d in range(self.n_draws):
                yield self.params_at(c, d)

    def pi_summary(self, level=0.95):
        """Posterior mean and equal-tail interval of each etiologic fraction."""
        draws = self.pooled("pi")
        lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return {"mean": draws.mean(axis=0), "lower": lo, "upper": hi}

    def column_names(self, name):
        k = self.K
        if name == "pi":
            return [f"pi[{c}]" for c in self.class_names]
        if name in ("theta", "psi"):
            return [f"{name}[{p},{s}]" for p in self.pathogens for s in range(k)]
        if name in ("eta", "nu"):
            return [f"{name}[{s}]" for s in range(k)]
        if name in ("alpha0", "alpha1"):
            return [name]
        arr = getattr(self, name)
        prefix = "case" if name.startswith("case") else "control"
        return [f"{prefix}_{i}" for i in range(arr.shape[2])]

    def save(self, directory, extra_manifest=None):
        """Write one CSV draw table per parameter plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for name in _FLOAT_FIELDS + _INT_FIELDS:
            arr = getattr(self, name)
            flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
            path = directory / f"{name}.csv"
            fmt = "%d" if name in _INT_FIELDS else "%.17g"
            with open(path, "w") as fh:
                fh.write(",".join(["chain", "draw", *self.column_names(name)]) + "\n")
                for c in range(flat.shape[0]):
                    idx = np.column_stack([np.full(flat.shape[1], c), np.arange(flat.shape[1])])
                    body = np.column_stack([idx, flat[c]])
                    np.savetxt(fh, body, fmt=["%d", "%d"] + [fmt] * flat.shape[2], delimiter=",")
            files[name] = {"file": path.name, "shape": list(arr.shape)}
        manifest = {
            "format": "nplcm-posterior/1",
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "seed": self.config.seed,
            "pathogens": list(self.pathogens),
            "class_names": list(self.class_names),
            "arrays": files,
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        arrays = {}
        for name, meta in manifest["arrays"].items():
            dtype = np.int16 if name in _INT_FIELDS else float
            shape = tuple(meta["shape"])
            body = np.loadtxt(directory / meta["file"], delimiter=",", skiprows=1, ndmin=2)
            arrays[name] = body[:, 2:].astype(dtype).reshape(shape)
        return cls(config=SamplerConfig(**manifest["config"]),
                   pathogens=tuple(manifest["pathogens"]),
                   class_names=tuple(manifest["class_names"]), **arrays)


def fit(data, config, tpr_prior=(1.0, 1.0), hyper=None, jobs=1):
    """Convenience wrapper: default flat priors with a shared TPR Beta pair."""
    if hyper is None:
        hyper = HyperPriors.default(data.J, config.include_other_cause, tpr=tpr_prior)
    return run(data, hyper, config, jobs=jobs)


__all__ = [
    "SamplerConfig", "ChainState", "PosteriorSamples", "chain_streams", "draw_categorical",
    "case_class_logweights", "case_class_probs", "case_subclass_logweights",
    "control_subclass_logweights", "stick_beta_params", "log_beta_draw", "log_stick_weights",
    "alpha_gamma_params", "tpr_counts", "fpr_counts", "step_case_class", "step_subclass",
    "step_eta", "step_nu", "step_alpha", "step_tpr", "step_fpr", "step_pi", "initial_state",
    "sample_prior",
    "sweep", "run_chain", "run", "fit",
]
