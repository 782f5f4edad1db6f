import json

import numpy as np
import pytest

from nplcm.diagnostics import autocorr, diagnose, ess, psrf, summarize_chains, write_report
from nplcm.errors import UndefinedVarianceError
from nplcm.gibbs import SamplerConfig, fit
from nplcm.simulation import generate, scenario


def ar1(phi, n, rng):
    x = np.empty(n)
    x[0] = rng.normal()
    e = rng.normal(size=n) * np.sqrt(1 - phi**2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


class TestPsrf:
    def test_identical_chains(self, rng):
        x = rng.normal(size=200)
        assert psrf(np.stack([x, x, x])) == 1.0

    def test_separated_chains(self, rng):
        x = np.stack([rng.normal(0, 1e-3, 100), rng.normal(10, 1e-3, 100)])
        assert psrf(x) > 100

    def test_iid_normal_chains(self):
        # sampling oracle: repeat over seeds, every value lands in [1, 1.05]
        for seed in range(20):
            r = psrf(np.random.default_rng(seed).normal(size=(3, 1000)))
            assert 1.0 <= r <= 1.05

    def test_affine_invariance(self, rng):
        x = rng.normal(size=(3, 50)) + np.array([[0.0], [0.3], [-0.2]])
        assert psrf(3.5 * x - 7.0) == pytest.approx(psrf(x), rel=1e-12)

    def test_preconditions(self, rng):
        with pytest.raises(ValueError):
            psrf(rng.normal(size=(1, 100)))
        with pytest.raises(ValueError):
            psrf(rng.normal(size=(3, 9)))
        with pytest.raises(UndefinedVarianceError):
            psrf(np.ones((3, 20)))


class TestAutocorrelation:
    def test_alternating_series(self):
        x = np.tile([1.0, -1.0], 50)
        assert autocorr(x, 1)[1] == pytest.approx(-1.0, abs=0.02)

    def test_ar1(self, rng):
        assert autocorr(ar1(0.9, 50_000, rng), 1)[1] == pytest.approx(0.9, abs=0.01)

    def test_matches_direct_formula(self, rng):
        x = rng.normal(size=300)
        xc = x - x.mean()
        direct = [xc[: 300 - k] @ xc[k:] / (xc @ xc) for k in range(6)]
        assert np.allclose(autocorr(x, 5), direct, atol=1e-12)

    def test_iid_ess_close_to_n(self, rng):
        assert ess(rng.normal(size=5000)) > 4000

    def test_ar1_ess(self, rng):
        # (1 - phi) / (1 + phi) of the draws are effectively independent
        e = ess(ar1(0.9, 100_000, rng))
        assert e == pytest.approx(100_000 / 19, rel=0.25)

    def test_ess_never_exceeds_draws(self, rng):
        for x in (np.tile([1.0, -1.0], 100), rng.normal(size=(3, 100))):
            assert ess(x) <= x.size

    def test_constant_series(self):
        with pytest.raises(UndefinedVarianceError):
            autocorr(np.zeros(10))
        with pytest.raises(UndefinedVarianceError):
            ess(np.zeros(10))


def test_summary_quantiles_monotone(rng):
    s = summarize_chains("x", rng.normal(size=(2, 300)))
    assert np.all(np.diff(s.quantiles) >= 0) and s.ess <= 600 and s.psrf is not None


def test_report_files(tmp_path):
    d = generate(scenario("I"), 30, 30, seed=0)
    post = fit(d, SamplerConfig(truncation_K=3, n_burn=10, n_keep=60, thin=2, n_chains=2))
    summaries = write_report(post, tmp_path, extra={"seed": 0})
    names = set(diagnose(post))
    assert names == {*(f"pi[{c}]" for c in "ABCDE"), "alpha0", "alpha1", "max_eta", "max_nu"}
    report = json.loads((tmp_path / "diagnostics.json").read_text())
    assert set(report["parameters"]) == names and report["seed"] == 0
    trace = (tmp_path / "traces" / "pi_A.csv").read_text().splitlines()
    assert trace[0] == "draw,chain_0,chain_1" and len(trace) == 31
    assert summaries["max_eta"].mean <= 1.0
