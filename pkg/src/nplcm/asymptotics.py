"""Large-sample behaviour of the locally independent working model (pLCM)
when the data come from an npLCM.

The working model fixes the marginal TPRs at their true values and has free
parameters ``omega = (pi_1, ..., pi_{J-1}, psi^M_1, ..., psi^M_J)``; the last
etiologic fraction is ``1 - sum(pi_1..pi_{J-1})``. Every expectation below is
computed exactly by enumerating the ``2**J`` measurement patterns.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DimensionError, NumericError
from .model import case_pattern_prob, control_pattern_prob, default_names, enumerate_patterns

INTERIOR = 1e-10
GRAD_TOL = 1e-9


@dataclass(frozen=True)
class WorkingModel:
    """Marginal TPRs held at truth; ``psi_fixed`` optionally pins the FPRs as well."""

    theta_marginal: np.ndarray
    psi_fixed: np.ndarray | None = None

    @property
    def J(self):
        return self.theta_marginal.size

    @property
    def n_free(self):
        return self.J - 1 + (0 if self.psi_fixed is not None else self.J)

    def split(self, omega):
        """Full ``(pi, psi)`` from a free-parameter vector."""
        omega = np.asarray(omega, dtype=float)
        J = self.J
        if omega.size != self.n_free:
            raise DimensionError(f"omega has length {omega.size}, expected {self.n_free}")
        pi = np.append(omega[: J - 1], 1.0 - omega[: J - 1].sum())
        psi = self.psi_fixed if self.psi_fixed is not None else omega[J - 1:]
        return pi, np.asarray(psi, dtype=float)


def working_model(spec, fix_psi=False):
    """Working model for a scenario; ``fix_psi`` pins psi^M at the true control marginals."""
    theta_m = spec.theta @ spec.eta
    psi_fixed = spec.psi @ spec.nu if fix_psi else None
    return WorkingModel(theta_marginal=theta_m, psi_fixed=psi_fixed)


def plcm_log_density(m, y, omega, theta_marginal, psi_fixed=None):
    """Log density of pattern(s) ``m`` under the working pLCM; ``y`` is 1 for cases."""
    model = WorkingModel(np.asarray(theta_marginal, float), psi_fixed)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    logp, _, _ = _derivatives(m, y, omega, model, order=0)
    return float(logp[0]) if logp.size == 1 else logp


def plcm_score_hessian(m, y, omega, theta_marginal, psi_fixed=None):
    """Per-pattern ``(log density, score, Hessian)`` with respect to the free parameters."""
    model = WorkingModel(np.asarray(theta_marginal, float), psi_fixed)
    return _derivatives(np.atleast_2d(np.asarray(m, dtype=float)), y, omega, model)


def _derivatives(m, y, omega, model, order=2):
    """Per-pattern log density, score ``(P, d)`` and Hessian ``(P, d, d)``."""
    J = model.J
    pi, psi = model.split(omega)
    th = model.theta_marginal
    P = m.shape[0]
    free_psi = model.psi_fixed is None
    d = model.n_free

    log_h = m @ np.log(psi) + (1 - m) @ np.log1p(-psi)
    dpsi = m / psi - (1 - m) / (1 - psi)  # d log b(m_j; psi_j) / d psi_j
    epsi = -m / psi**2 - (1 - m) / (1 - psi) ** 2
    if y == 0:
        logp = log_h
        if order == 0:
            return logp, None, None
        score = np.zeros((P, d))
        hess = np.zeros((P, d, d))
        if free_psi:
            score[:, J - 1:] = dpsi
            idx = np.arange(J - 1, 2 * J - 1)
            hess[:, idx, idx] = epsi
        return logp, score, hess

    # rho_l = b(m_l; theta_l) / b(m_l; psi_l): likelihood ratio of class l on its own dimension
    rho = np.where(m == 1, th / psi, (1 - th) / (1 - psi))
    S = rho @ pi
    logp = log_h + np.log(S)
    if order == 0:
        return logp, None, None
    score = np.zeros((P, d))
    score[:, : J - 1] = (rho[:, : J - 1] - rho[:, J - 1:J]) / S[:, None]
    # dS/dpsi_j = -pi_j rho_j dpsi_j
    dS_psi = -pi * rho * dpsi
    if free_psi:
        score[:, J - 1:] = dpsi + dS_psi / S[:, None]
    hess = np.zeros((P, d, d))
    grad_S = np.zeros((P, d))
    grad_S[:, : J - 1] = rho[:, : J - 1] - rho[:, J - 1:J]
    if free_psi:
        grad_S[:, J - 1:] = dS_psi
        # second derivatives of S
        d2S = np.zeros((P, d, d))
        ip = np.arange(J - 1)
        # d/dpsi_l of (rho_l - rho_J) for l < J-1
        d2S[:, ip, J - 1 + ip] = -rho[:, : J - 1] * dpsi[:, : J - 1]
        # d/dpsi_J of (rho_l - rho_J)
        d2S[:, ip, 2 * J - 2] += (rho[:, J - 1] * dpsi[:, J - 1])[:, None]
        d2S[:, J - 1 + ip, ip] = d2S[:, ip, J - 1 + ip]
        d2S[:, 2 * J - 2, ip] = d2S[:, ip, 2 * J - 2]
        jj = np.arange(J - 1, 2 * J - 1)
        d2S[:, jj, jj] = pi * rho * (dpsi**2 - epsi)
        hess = d2S / S[:, None, None]
        hess[:, jj, jj] += epsi
    hess -= np.einsum("pi,pj->pij", grad_S, grad_S) / (S**2)[:, None, None]
    return logp, score, hess


class _Expectations:
    """Exact pattern-enumeration expectations under a true scenario."""

    def __init__(self, spec, model, case_weight=0.5):
        self.model = model
        self.patterns = enumerate_patterns(spec.J).astype(float)
        params = spec.to_params()
        self.w = (case_weight, 1.0 - case_weight)
        self.p1 = case_pattern_prob(self.patterns, params)
        self.p0 = control_pattern_prob(self.patterns, params.nu, params.psi)

    def _parts(self, omega, order):
        out = []
        for y, p, w in ((1, self.p1, self.w[0]), (0, self.p0, self.w[1])):
            out.append((w * p, _derivatives(self.patterns, y, omega, self.model, order)))
        return out

    def objective(self, omega):
        return sum(wp @ lp for wp, (lp, _, _) in self._parts(omega, 0))

    def score_hessian(self, omega):
        g = 0.0
        H = 0.0
        for wp, (_, s, h) in self._parts(omega, 2):
            g = g + wp @ s
            H = H + np.einsum("p,pij->ij", wp, h)
        return g, H

    def score_outer(self, omega):
        """E[s s'] and E[s] over the pooled case/control population."""
        outer = 0.0
        mean = 0.0
        for wp, (_, s, _) in self._parts(omega, 2):
            outer = outer + np.einsum("p,pi,pj->ij", wp, s, s)
            mean = mean + wp @ s
        return outer, mean


def _interior(omega, model):
    pi, psi = model.split(omega)
    return (np.all(pi > INTERIOR) and np.all(psi > INTERIOR) and np.all(psi < 1 - INTERIOR))


def _newton(ex, omega, max_iter=200):
    model = ex.model
    f = ex.objective(omega)
    for it in range(max_iter):
        g, H = ex.score_hessian(omega)
        gn = float(np.linalg.norm(g))
        if gn < 1e-13:
            return omega, gn, it
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return omega, gn, it
        if g @ step <= 0:  # not an ascent direction: fall back to the gradient
            step = g
        t = 1.0
        while t > 1e-12:
            cand = omega + t * step
            if _interior(cand, model):
                fc = ex.objective(cand)
                if fc >= f - 1e-15 * abs(f):
                    break
            t *= 0.5
        else:
            return omega, gn, it
        if np.allclose(cand, omega, rtol=0, atol=0):
            return omega, gn, it
        omega, f = cand, fc
    g, _ = ex.score_hessian(omega)
    return omega, float(np.linalg.norm(g)), max_iter


def _quasi_newton(ex, omega):
    """BFGS on the KL objective with pi on the additive-log-ratio scale and psi on the logit scale."""
    model = ex.model
    J = model.J
    free_psi = model.psi_fixed is None

    def to_x(om):
        pi, psi = model.split(om)
        x = np.log(pi[:-1] / pi[-1])
        return np.concatenate([x, np.log(psi / (1 - psi))]) if free_psi else x

    def to_omega(x):
        e = np.exp(np.append(x[: J - 1], 0.0) - max(0.0, x[: J - 1].max()))
        pi = e / e.sum()
        om = pi[:-1]
        if free_psi:
            om = np.concatenate([om, 1 / (1 + np.exp(-x[J - 1:]))])
        return om

    def fun(x):
        om = to_omega(x)
        if not _interior(om, model):
            return np.inf, np.zeros_like(x)
        g, _ = ex.score_hessian(om)
        pi, psi = model.split(om)
        pf = pi[:-1]
        jac_pi = np.diag(pf) - np.outer(pf, pf)
        gx = jac_pi.T @ g[: J - 1]
        if free_psi:
            gx = np.concatenate([gx, g[J - 1:] * psi * (1 - psi)])
        return -ex.objective(om), -gx

    res = optimize.minimize(fun, to_x(omega), jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 2000})
    return to_omega(res.x)


def solve_pseudo_truth(spec, case_weight=0.5, fix_psi=False, start=None):
    """Root of the expected working-model score under the true scenario.

    Returns ``(omega_star, model, grad_norm)``; raises :class:`NumericError`
    if the score norm cannot be driven below ``GRAD_TOL``.
    """
    model = working_model(spec, fix_psi=fix_psi)
    ex = _Expectations(spec, model, case_weight)
    if start is None:
        psi0 = spec.psi @ spec.nu
        start = np.asarray(spec.pi[: spec.J - 1], float)
        if not fix_psi:
            start = np.concatenate([start, psi0])
    start = np.clip(start, 1e-3, None)
    omega, gn, _ = _newton(ex, start)
    if not gn < GRAD_TOL:
        omega = _quasi_newton(ex, start)
        omega, gn, _ = _newton(ex, omega)
    if not gn < GRAD_TOL:
        raise NumericError("pseudo-truth solve did not converge", grad_norm=gn)
    return omega, model, gn


@dataclass(frozen=True)
class AsymptoticsResult:
    omega_star: np.ndarray
    pi_star: np.ndarray
    psi_star: np.ndarray
    pi_true: np.ndarray
    prab: np.ndarray
    A: np.ndarray
    B: np.ndarray
    v_model: np.ndarray
    v_robust: np.ndarray
    variance_ratio: np.ndarray
    grad_norm: float


def class_variances(V, J):
    """Variances of each etiologic fraction, the last one via pi_J = 1 - sum(others)."""
    out = np.empty(J)
    out[: J - 1] = np.diag(V)[: J - 1]
    c = np.zeros(V.shape[0])
    c[: J - 1] = -1.0
    out[J - 1] = c @ V @ c
    return out


def sandwich(omega_star, spec, n_total, case_weight=0.5, fix_psi=False):
    """Model-based and robust variances ``N^-1 A^-1`` and ``N^-1 A^-1 B A^-1``.

    Returns ``(v_model, v_robust, A, B)``.
    """
    model = working_model(spec, fix_psi=fix_psi)
    ex = _Expectations(spec, model, case_weight)
    _, H = ex.score_hessian(omega_star)
    A = -H
    outer, mean = ex.score_outer(omega_star)
    B = outer - np.outer(mean, mean)
    try:
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular expected information matrix") from exc
    if not np.all(np.isfinite(A_inv)) or np.linalg.cond(A) > 1e14:
        raise NumericError("singular expected information matrix", cond=float(np.linalg.cond(A)))
    v_model = A_inv / n_total
    v_robust = A_inv @ B @ A_inv / n_total
    v_robust = 0.5 * (v_robust + v_robust.T)
    return v_model, v_robust, A, B


def prab(pi_star, pi_true):
    """Percent relative asymptotic bias of each etiologic fraction."""
    pi_true = np.asarray(pi_true, float)
    return (np.asarray(pi_star, float) - pi_true) / pi_true * 100.0


def analyze(spec, n_total=1000, case_weight=0.5, fix_psi=False):
    """Pseudo-truth, PRAB and variance comparison for one scenario."""
    omega, model, gn = solve_pseudo_truth(spec, case_weight=case_weight, fix_psi=fix_psi)
    pi_star, psi_star = model.split(omega)
    v_m, v_r, A, B = sandwich(omega, spec, n_total, case_weight=case_weight, fix_psi=fix_psi)
    ratio = np.sqrt(class_variances(v_m, model.J) / class_variances(v_r, model.J))
    return AsymptoticsResult(omega_star=omega, pi_star=pi_star, psi_star=psi_star,
                             pi_true=np.asarray(spec.pi), prab=prab(pi_star, spec.pi),
                             A=A, B=B, v_model=v_m, v_robust=v_r, variance_ratio=ratio,
                             grad_norm=gn)


def _curve_point(args):
    family, eta_o, n_total, case_weight, fix_psi = args
    from .simulation import scenario

    spec = scenario(family, eta_o) if isinstance(family, str) else family(eta_o)
    return eta_o, spec.J, analyze(spec, n_total, case_weight, fix_psi)


def prab_curve(family, eta_grid, n_total=1000, case_weight=0.5, fix_psi=False, jobs=1,
               class_names=None):
    """PRAB and variance ratio per class over a grid of case first-subclass weights.

    ``family`` is a built-in scenario name or a callable ``eta_o -> ScenarioSpec``.
    """
    grid = [float(e) for e in eta_grid]
    if any(not 0.0 <= e <= 1.0 for e in grid):
        raise ValueError("eta grid must lie within [0, 1]")
    args = [(family, e, n_total, case_weight, fix_psi) for e in grid]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_curve_point, args))
    else:
        results = [_curve_point(a) for a in args]
    rows = []
    for eta_o, J, res in results:
        names = class_names or default_names(J)
        for l in range(J):
            rows.append({"eta_o": eta_o, "class": names[l], "prab": float(res.prab[l]),
                         "variance_ratio": float(res.variance_ratio[l])})
    return rows


def write_curve_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["eta_o", "class", "prab", "variance_ratio"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "prab": f"{r['prab']:.10g}", "variance_ratio": f"{r['variance_ratio']:.10g}"})
