import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from nplcm import gibbs
from nplcm.errors import NumericError
from nplcm.gibbs import (ChainState, PosteriorSamples, SamplerConfig, alpha_gamma_params,
                         case_class_probs, chain_streams, control_subclass_logweights,
                         draw_categorical, fit, fpr_counts, initial_state, log_beta_draw,
                         run_chain, stick_beta_params, step_fpr, step_pi, step_tpr, tpr_counts)
from nplcm.model import Dataset, HyperPriors, ModelParams
from nplcm.simulation import generate, scenario


def softmax(x):
    return np.exp(x - logsumexp(x, axis=-1, keepdims=True))


def small_state(J, K, case_class, case_subclass, control_subclass, pi=None):
    return ChainState(pi=np.full(J, 1 / J) if pi is None else np.asarray(pi, float),
                      theta=np.full((J, K), 0.8), psi=np.full((J, K), 0.2),
                      log_eta=np.full(K, -np.log(K)), log_nu=np.full(K, -np.log(K)),
                      eta_log1m_sticks=np.zeros(K - 1), nu_log1m_sticks=np.zeros(K - 1),
                      alpha0=1.0, alpha1=1.0, case_class=np.asarray(case_class),
                      case_subclass=np.asarray(case_subclass),
                      control_subclass=np.asarray(control_subclass))


class TestCaseClassStep:
    def test_hand_example(self):
        p = case_class_probs(np.array([[1, 0]]), np.zeros(1, int), np.array([0.5, 0.5]),
                             np.array([[0.9], [0.9]]), np.array([[0.1], [0.2]]))
        assert p[0] == pytest.approx([0.72 / 0.73, 0.01 / 0.73], abs=1e-12)
        assert p[0] == pytest.approx([0.98630, 0.01370], abs=5e-6)

    def test_degenerate_pi(self, rng):
        m = (rng.random((50, 3)) < 0.5).astype(int)
        p = case_class_probs(m, np.zeros(50, int), np.array([1.0, 0.0, 0.0]),
                             np.full((3, 1), 0.7), np.full((3, 1), 0.3))
        assert np.all(p[:, 0] == 1.0)
        with np.errstate(divide="ignore"):
            assert np.all(draw_categorical(np.log(p), rng) == 0)

    def test_uninformative_measurement(self, rng):
        m = (rng.random((20, 4)) < 0.5).astype(int)
        rates = rng.uniform(0.1, 0.9, (4, 2))
        p = case_class_probs(m, rng.integers(2, size=20), np.full(4, 0.25), rates, rates)
        assert np.allclose(p, 0.25, atol=1e-14)

    def test_other_cause_column(self):
        p = case_class_probs(np.array([[0, 0]]), np.zeros(1, int), np.array([0.25, 0.25, 0.5]),
                             np.array([[0.9], [0.9]]), np.array([[0.1], [0.2]]))
        joint = np.array([0.25 * 0.1 * 0.8, 0.25 * 0.9 * 0.1, 0.5 * 0.9 * 0.8])
        assert p[0] == pytest.approx(joint / joint.sum(), abs=1e-14)

    def test_all_zero_weights_raise(self, rng):
        with pytest.raises(NumericError):
            draw_categorical(np.array([[-np.inf, -np.inf]]), rng)

    def test_categorical_frequencies(self, rng):
        logw = np.log(np.tile([0.2, 0.5, 0.3], (100_000, 1)))
        freq = np.bincount(draw_categorical(logw, rng), minlength=3) / 100_000
        assert freq == pytest.approx([0.2, 0.5, 0.3], abs=0.005)


class TestSubclassStep:
    def test_single_subclass(self):
        data = Dataset(np.zeros((3, 2), np.int8), np.ones((2, 2), np.int8))
        state = small_state(2, 1, [0, 1, 0], [0, 0, 0], [0, 0])
        zc, z0 = gibbs.step_subclass(state, data, None, None)
        assert zc.tolist() == [0, 0, 0] and z0.tolist() == [0, 0]

    def test_identical_columns_follow_weights(self):
        psi = np.array([[0.3, 0.3], [0.6, 0.6]])
        p = softmax(control_subclass_logweights(np.array([[1, 0]]), psi, np.log([0.3, 0.7])))
        assert p[0] == pytest.approx([0.3, 0.7], abs=1e-14)

    def test_two_subclass_hand_example(self):
        psi = np.array([[0.9, 0.1]] * 3)
        p = softmax(control_subclass_logweights(np.ones((1, 3)), psi, np.log([0.5, 0.5])))
        assert p[0] == pytest.approx([0.729 / 0.730, 0.001 / 0.730], abs=1e-14)

    def test_case_weights_use_tpr_on_own_dimension(self):
        theta = np.array([[0.9, 0.5], [0.7, 0.7]])
        psi = np.array([[0.2, 0.4], [0.3, 0.6]])
        lw = gibbs.case_subclass_logweights(np.array([[1, 0]]), np.array([0]), theta, psi,
                                            np.log([0.4, 0.6]))
        want = np.array([0.4 * 0.9 * 0.7, 0.6 * 0.5 * 0.4])
        assert softmax(lw)[0] == pytest.approx(want / want.sum(), abs=1e-14)


class TestStickSteps:
    def test_count_formula(self):
        a, b = stick_beta_params([3, 1, 0], 1.0)
        assert a.tolist() == [4.0, 2.0] and b.tolist() == [2.0, 1.0]

    def test_zero_counts_give_prior(self):
        a, b = stick_beta_params([0, 0, 0, 0], 0.7)
        assert a.tolist() == [1, 1, 1] and b.tolist() == [0.7] * 3

    def test_log_beta_draws_have_beta_law(self, rng):
        for a, b in [(4.0, 2.0), (2.0, 1.0), (0.3, 0.05)]:
            lv, l1m = log_beta_draw(np.full(20_000, a), np.full(20_000, b), rng)
            assert np.allclose(np.exp(lv) + np.exp(l1m), 1.0, atol=1e-12)
            if b >= 1:
                assert stats.kstest(np.exp(lv), stats.beta(a, b).cdf).pvalue > 1e-3
            # the complement is resolved exactly even when V rounds to 1
            assert stats.kstest(np.exp(l1m), stats.beta(b, a).cdf).pvalue > 1e-3

    def test_tiny_concentration_keeps_finite_logs(self, rng):
        lv, l1m = log_beta_draw(np.ones(1000), np.full(1000, 1e-8), rng)
        assert np.all(np.isfinite(l1m)) and np.all(l1m < 0)

    def test_degenerate_counts_concentrate(self):
        rng = np.random.default_rng(1)
        state = small_state(2, 4, [0] * 200, [0] * 200, [0])
        state.alpha1 = 1e-6
        log_w, _ = gibbs.step_eta(state, rng)
        assert np.exp(log_w[0]) > 0.99

    def test_alpha_conditional(self):
        shape, rate = alpha_gamma_params(np.log1p(-np.array([0.5, 0.5])), (0.25, 0.25), 3)
        assert shape == 2.25 and rate == pytest.approx(0.25 + 2 * np.log(2), abs=1e-15)
        assert alpha_gamma_params(np.zeros(0), (0.25, 0.25), 1) == (0.25, 0.25)

    def test_step_eta_reproduces_direct_draw(self):
        state = small_state(2, 3, [0, 0, 0, 1], [0, 0, 0, 1], [2])
        got, l1m = gibbs.step_eta(state, np.random.default_rng(5))
        a, b = np.array([4.0, 2.0]), np.array([2.0, 1.0])
        lv, l1m_want = log_beta_draw(a, b, np.random.default_rng(5))
        assert np.array_equal(l1m, l1m_want)
        assert np.allclose(np.exp(got), [np.exp(lv[0]), np.exp(l1m_want[0] + lv[1]),
                                         np.exp(l1m_want.sum())], atol=1e-15)


class TestRateSteps:
    def test_tpr_counts_partition(self):
        cases = np.array([[1, 0], [1, 1], [0, 1], [1, 0], [0, 0]])
        counts = tpr_counts(cases, np.array([0, 0, 1, 0, 1]), np.array([0, 1, 1, 0, 0]), 2, 2)
        # [j, k, (negatives, positives)]
        assert counts[0, 0].tolist() == [0, 2]
        assert counts[0, 1].tolist() == [0, 1]
        assert counts[1, 1].tolist() == [0, 1]
        assert counts[1, 0].tolist() == [1, 0]

    def test_tpr_draw_is_beta_6_1(self):
        data = Dataset(np.ones((5, 2), np.int8), np.zeros((1, 2), np.int8))
        state = small_state(2, 1, [0] * 5, [0] * 5, [0])
        prior = np.ones((2, 1, 2))
        got = step_tpr(state, data, prior, np.random.default_rng(9))
        want = np.random.default_rng(9).beta(np.array([[6.0], [1.0]]), np.array([[1.0], [1.0]]))
        assert np.array_equal(got, want)

    def _fpr_data(self):
        controls = np.zeros((40, 2), np.int8)
        controls[:10, 0] = 1
        cases = np.array([[1, 1], [1, 0]], np.int8)
        return Dataset(cases, controls)

    def test_fpr_cut_feedback(self):
        data = self._fpr_data()
        counts = fpr_counts(data, np.array([1, 1]), np.array([0, 0]), np.zeros(40, int), 1, True)
        assert counts[0, 0].tolist() == [30, 10]
        state = small_state(2, 1, [1, 1], [0, 0], [0] * 40)
        got = step_fpr(state, data, np.ones((2, 1, 2)), np.random.default_rng(3), True)
        want = np.random.default_rng(3).beta(np.array([[11.0], [1.0]]), np.array([[31.0], [41.0]]))
        assert np.array_equal(got, want)

    def test_fpr_pooled_with_cases(self):
        data = self._fpr_data()
        counts = fpr_counts(data, np.array([1, 1]), np.array([0, 0]), np.zeros(40, int), 1, False)
        assert counts[0, 0].tolist() == [30, 12]  # Beta(13, 31) under a flat prior
        # a case's own-class dimension never counts towards the FPR
        assert counts[1, 0].tolist() == [40, 0]

    def test_zero_controls_in_subclass_gives_prior(self):
        data = self._fpr_data()
        counts = fpr_counts(data, np.array([1, 1]), np.array([0, 0]), np.zeros(40, int), 2, True)
        assert counts[:, 1].sum() == 0

    def test_pi_dirichlet(self):
        state = small_state(3, 1, [0, 0, 0, 1], [0] * 4, [0])
        got = step_pi(state, np.ones(3), np.random.default_rng(2))
        assert np.array_equal(got, np.random.default_rng(2).dirichlet([4.0, 2.0, 1.0]))

    def test_pi_other_cause(self):
        state = small_state(2, 1, [0, 2, 2], [0] * 3, [0], pi=[0.3, 0.3, 0.4])
        got = step_pi(state, np.ones(3), np.random.default_rng(2))
        assert np.array_equal(got, np.random.default_rng(2).dirichlet([2.0, 1.0, 3.0]))


def _plcm_reference(data, hyper, state0, streams, n_iter):
    """Direct pLCM Gibbs sampler sharing the class, rate and pi streams."""
    cases = data.cases.astype(float)
    controls = data.controls.astype(float)
    J = data.J
    pi, theta, psi = state0.pi.copy(), state0.theta[:, 0].copy(), state0.psi[:, 0].copy()
    cls = state0.case_class.copy()
    out = []
    for _ in range(n_iter):
        lik = np.empty((len(cases), J))
        for l in range(J):
            r = psi.copy()
            r[l] = theta[l]
            lik[:, l] = np.prod(np.where(cases == 1, r, 1 - r), axis=1) * pi[l]
        u = streams["case_class"].random(len(cases))
        cdf = np.cumsum(lik / lik.max(axis=1, keepdims=True), axis=1)
        cls = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(axis=1), J - 1)
        pos = np.array([cases[cls == j, j].sum() for j in range(J)])
        tot = np.array([(cls == j).sum() for j in range(J)])
        theta = streams["theta"].beta((1 + pos)[:, None], (1 + tot - pos)[:, None])[:, 0]
        fpos = controls.sum(axis=0) + np.array([cases[cls != j, j].sum() for j in range(J)])
        ftot = len(controls) + np.array([(cls != j).sum() for j in range(J)])
        psi = streams["psi"].beta((1 + fpos)[:, None], (1 + ftot - fpos)[:, None])[:, 0]
        theta, psi = np.clip(theta, 1e-12, 1 - 1e-12), np.clip(psi, 1e-12, 1 - 1e-12)
        pi = streams["pi"].dirichlet(1.0 + np.bincount(cls, minlength=J))
        out.append(pi)
    return np.array(out)


class TestChains:
    def test_retained_draw_count(self):
        assert SamplerConfig(n_burn=10_000, n_keep=50_000, thin=50, n_chains=3).n_draws == 1000
        d = generate(scenario("I"), 20, 20, seed=0)
        post = fit(d, SamplerConfig(truncation_K=2, n_burn=3, n_keep=40, thin=4, n_chains=2))
        assert post.pi.shape == (2, 10, 5) and post.case_class.shape == (2, 10, 20)

    def test_same_seed_same_draws(self):
        d = generate(scenario("II"), 30, 30, seed=1)
        cfg = SamplerConfig(truncation_K=3, n_burn=20, n_keep=50, thin=5, n_chains=2, seed=42)
        a, b = fit(d, cfg), fit(d, cfg)
        for name in ("pi", "theta", "psi", "eta", "nu", "alpha0", "case_class", "control_subclass"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        c = fit(d, SamplerConfig(**{**cfg.to_dict(), "seed": 43}))
        assert not np.array_equal(a.pi, c.pi)

    def test_parallel_chains_match_serial(self):
        d = generate(scenario("I"), 25, 25, seed=2)
        cfg = SamplerConfig(truncation_K=2, n_burn=5, n_keep=20, thin=2, n_chains=2, seed=7)
        assert np.array_equal(fit(d, cfg, jobs=2).pi, fit(d, cfg, jobs=1).pi)

    def test_cut_feedback_isolates_fprs_from_cases(self):
        rng = np.random.default_rng(3)
        controls = (rng.random((40, 4)) < 0.3).astype(np.int8)
        d1 = Dataset((rng.random((40, 4)) < 0.5).astype(np.int8), controls)
        d2 = Dataset((rng.random((40, 4)) < 0.1).astype(np.int8), controls)
        cfg = SamplerConfig(truncation_K=3, n_burn=10, n_keep=60, thin=3, n_chains=1,
                            cut_feedback=True, seed=11)
        a, b = fit(d1, cfg), fit(d2, cfg)
        assert np.array_equal(a.psi, b.psi) and np.array_equal(a.nu, b.nu)
        assert not np.array_equal(a.theta, b.theta)
        off = SamplerConfig(**{**cfg.to_dict(), "cut_feedback": False})
        assert not np.array_equal(fit(d1, off).psi, fit(d2, off).psi)

    def test_single_subclass_matches_direct_plcm(self):
        d = generate(scenario("I"), 60, 60, seed=4)
        hyper = HyperPriors.default(5)
        cfg = SamplerConfig(truncation_K=1, n_burn=0, n_keep=30, thin=1, n_chains=1, seed=8)
        streams = chain_streams(cfg.seed, 0)
        s0 = initial_state(d, hyper, 1, False, streams["init_case"], streams["init_control"])
        start = ChainState(**{k: np.copy(v) for k, v in vars(s0).items()})
        ours = run_chain(d, hyper, cfg, 0, initial=s0)
        ref = _plcm_reference(d, hyper, start, chain_streams(cfg.seed, 0), 30)
        assert np.allclose(ours["pi"], ref, atol=1e-12)
        assert np.all(ours["eta"] == 1.0) and np.all(ours["nu"] == 1.0)

    def test_numeric_errors_carry_context(self, monkeypatch):
        d = generate(scenario("I"), 10, 10, seed=0)

        def boom(*a, **k):
            raise NumericError("bad draw")

        monkeypatch.setattr(gibbs, "step_pi", boom)
        with pytest.raises(NumericError) as info:
            fit(d, SamplerConfig(truncation_K=2, n_burn=2, n_keep=4, thin=1, n_chains=1))
        assert info.value.context == {"chain": 0, "iteration": 0}

    def test_other_cause_fit(self):
        s = scenario("I")
        params = ModelParams(pi=np.append(s.pi * 0.8, 0.2), theta=s.theta, psi=s.psi, eta=s.eta, nu=s.nu)
        from nplcm.simulation import simulate
        d = simulate(params, 80, 80, np.random.default_rng(0))
        post = fit(d, SamplerConfig(truncation_K=2, n_burn=20, n_keep=40, thin=2, n_chains=1,
                                    include_other_cause=True))
        assert post.pi.shape[-1] == 6 and post.class_names[-1] == "other"
        assert np.allclose(post.pi.sum(axis=-1), 1.0)

    def test_hyperprior_dimension_check(self):
        d = generate(scenario("I"), 10, 10, seed=0)
        with pytest.raises(ValueError):
            gibbs.run(d, HyperPriors.default(4), SamplerConfig(n_burn=1, n_keep=2, thin=1, n_chains=1))

    def test_save_load_round_trip(self, tmp_path):
        d = generate(scenario("II"), 15, 12, seed=5)
        post = fit(d, SamplerConfig(truncation_K=3, n_burn=5, n_keep=12, thin=3, n_chains=2))
        post.save(tmp_path / "post", extra_manifest={"note": "x"})
        back = PosteriorSamples.load(tmp_path / "post")
        for name in ("pi", "theta", "psi", "eta", "nu", "alpha0", "alpha1", "case_class",
                     "case_subclass", "control_subclass"):
            assert np.array_equal(getattr(back, name), getattr(post, name)), name
        assert back.config == post.config and back.pathogens == post.pathogens

    def test_posterior_summary(self):
        d = generate(scenario("I"), 30, 30, seed=6)
        post = fit(d, SamplerConfig(truncation_K=2, n_burn=5, n_keep=40, thin=2, n_chains=1))
        s = post.pi_summary()
        assert np.all(s["lower"] <= s["mean"]) and np.all(s["mean"] <= s["upper"])
        assert isinstance(post.params_at(0, 0), ModelParams)
