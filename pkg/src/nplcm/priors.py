"""Beta hyperparameters from elicited ranges, and stick-breaking weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import NumericError

QUANTILE_TOL = 1e-8


@dataclass(frozen=True)
class ElicitedRange:
    """Expert range for a rate: ``low``/``high`` are read as the given quantiles."""

    low: float
    high: float
    quantile_low: float = 0.025
    quantile_high: float = 0.975

    def __post_init__(self):
        if not 0 < self.low < self.high < 1:
            raise ValueError(f"need 0 < low < high < 1, got ({self.low}, {self.high})")
        if not 0 < self.quantile_low < self.quantile_high < 1:
            raise ValueError("need 0 < quantile_low < quantile_high < 1")


def _residuals(log_c, rng_):
    c1, c2 = np.exp(log_c)
    return np.array([special.betainc(c1, c2, rng_.low) - rng_.quantile_low,
                     special.betainc(c1, c2, rng_.high) - rng_.quantile_high])


def _moment_guess(r):
    mean = 0.5 * (r.low + r.high)
    var = ((r.high - r.low) / 4.0) ** 2
    var = min(var, 0.99 * mean * (1 - mean))
    common = mean * (1 - mean) / var - 1.0
    return np.log([max(mean * common, 1e-3), max((1 - mean) * common, 1e-3)])


def _nested_bisection(r):
    """Solve one shape given the other by bracketing, then bracket the outer shape.

    For fixed c2 the lower-quantile residual is increasing in c1 at fixed x,
    which makes the inner solve a monotone 1-d problem.
    """
    lo_x, hi_x = r.low, r.high

    def c1_for(c2):
        f = lambda lc1: special.betainc(np.exp(lc1), c2, lo_x) - r.quantile_low
        return np.exp(optimize.brentq(f, -25.0, 25.0, xtol=1e-14, maxiter=500))

    def outer(lc2):
        c2 = np.exp(lc2)
        return special.betainc(c1_for(c2), c2, hi_x) - r.quantile_high

    lc2 = optimize.brentq(outer, -20.0, 20.0, xtol=1e-14, maxiter=500)
    c2 = np.exp(lc2)
    return np.array([np.log(c1_for(c2)), lc2])


def beta_from_quantiles(r: ElicitedRange, max_iter: int = 200):
    """Return ``(c1, c2)`` whose Beta CDF hits the two target quantiles.

    Raises :class:`NumericError` with the residuals if no solution is found.
    """
    guess = _moment_guess(r)
    sol = optimize.root(_residuals, guess, args=(r,), method="hybr",
                        options={"xtol": 1e-14, "maxfev": max_iter * 10})
    x = sol.x
    res = _residuals(x, r)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > QUANTILE_TOL:
        try:
            x = _nested_bisection(r)
        except (ValueError, RuntimeError) as exc:
            raise NumericError("beta quantile matching did not converge",
                               residuals=res.tolist(), cause=str(exc)) from exc
        res = _residuals(x, r)
        if np.max(np.abs(res)) > QUANTILE_TOL:
            raise NumericError("beta quantile matching did not converge", residuals=res.tolist())
    c1, c2 = np.exp(x)
    return float(c1), float(c2)


def stick_break(sticks):
    """Map ``K - 1`` stick fractions to a ``K``-simplex; the last weight is the remainder."""
    u = np.asarray(sticks, dtype=float)
    if u.ndim != 1:
        raise ValueError("sticks must be 1-d")
    if u.size == 0:
        return np.ones(1)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - u)])
    w = np.empty(u.size + 1)
    w[:-1] = u * remaining[:-1]
    w[-1] = max(0.0, 1.0 - w[:-1].sum())
    return w


def sticks_from_weights(w):
    """Inverse of :func:`stick_break` (fractions of the remaining stick)."""
    w = np.asarray(w, dtype=float)
    left = 1.0 - np.concatenate([[0.0], np.cumsum(w[:-1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(left[:-1] > 0, w[:-1] / left[:-1], 1.0)
    return np.clip(u, 0.0, 1.0)
