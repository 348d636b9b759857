import numpy as np
import pytest

from bayes_ssi.gibbs import (
    GibbsChain,
    GibbsConfig,
    effective_sample_size,
    initial_state,
    latent_conditional,
    mean_conditional,
    noise_conditionals,
    run_gibbs,
    split_rhat,
    update_latent,
    update_weight_column,
    weight_column_conditional,
    _scatter_from_grams,
    _residual,
)
from bayes_ssi.model import ModelState, PriorHyper, StackedData, default_priors
from bayes_ssi.rng import Rng, sample_inverse_wishart

import oracles


def single_view_priors(dim, d, noise_scale=2.0, noise_dof=8.0,
                       weight_scale=1.0, mean_scale=1.0):
    return PriorHyper(
        mean_loc=np.zeros(dim), mean_cov=mean_scale * np.eye(dim),
        weight_loc=np.zeros(dim), weight_cov=weight_scale * np.eye(dim),
        noise_scale=(noise_scale * np.eye(dim),), noise_dof=(noise_dof,),
        latent_dim=d, view_dims=(dim,),
    )


def toy_state(gen, view_dims, d, n, noise=None):
    total = sum(view_dims)
    if noise is None:
        noise = []
        for dim in view_dims:
            base = gen.standard_normal((dim, dim))
            noise.append(base @ base.T + dim * np.eye(dim))
    return ModelState(weights=gen.standard_normal((total, d)),
                      mean=gen.standard_normal(total),
                      noise_cov=noise,
                      latent=gen.standard_normal((d, n)))


class TestNoiseConditional:
    def test_zero_state_reduces_to_prior_update(self):
        # W = 0, mean = 0, X = 0: conditional is exactly
        # InverseWishart(K0, nu0 + N); check the parameters and the
        # empirical mean of draws against the formula
        n, dim = 12, 2
        priors = default_priors(dim, dim, 1, noise_scale=3.0)
        data = StackedData(x=np.zeros((2 * dim, n)), view_dims=(dim, dim))
        state = ModelState(weights=np.zeros((2 * dim, 1)), mean=np.zeros(2 * dim),
                           noise_cov=[np.eye(dim), np.eye(dim)],
                           latent=np.zeros((1, n)))
        conds = noise_conditionals(state, data, priors)
        for (scale, dof), scale0, dof0 in zip(conds, priors.noise_scale,
                                              priors.noise_dof):
            assert scale == pytest.approx(scale0)
            assert dof == dof0 + n

        rng = Rng(1, 0)
        scale, dof = conds[0]
        draws = np.array([sample_inverse_wishart(rng, scale, dof)
                          for _ in range(10_000)])
        expected = scale / (dof - dim - 1)
        se = oracles.mc_standard_error(draws)
        assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * se)

    def test_scalar_conjugate_update(self):
        # one view of dimension 1: textbook normal-variance conjugacy,
        # posterior InvGamma((nu0 + N)/2, (k0 + sum r^2)/2)
        gen = np.random.default_rng(2)
        n = 40
        priors = single_view_priors(1, 1, noise_scale=2.5, noise_dof=5.0)
        data = StackedData(x=gen.standard_normal((1, n)), view_dims=(1,))
        state = toy_state(gen, (1,), 1, n)
        resid = data.x - state.mean[:, None] - state.weights @ state.latent
        (scale, dof), = noise_conditionals(state, data, priors)
        assert dof == 5.0 + n
        assert scale[0, 0] == pytest.approx(2.5 + float(np.sum(resid**2)), rel=1e-12)

    def test_scale_grows_linearly_with_n(self):
        gen = np.random.default_rng(3)
        priors = default_priors(2, 2, 1)
        base = gen.standard_normal((4, 2000))
        state = toy_state(gen, (2, 2), 1, 2000)
        small = StackedData(x=base[:, :500], view_dims=(2, 2))
        large = StackedData(x=base[:, :2000], view_dims=(2, 2))
        state_small = state.copy()
        state_small.latent = state.latent[:, :500]
        tr_small = sum(np.trace(s) - np.trace(s0) for (s, _), s0 in
                       zip(noise_conditionals(state_small, small, priors),
                           priors.noise_scale))
        tr_large = sum(np.trace(s) - np.trace(s0) for (s, _), s0 in
                       zip(noise_conditionals(state, large, priors),
                           priors.noise_scale))
        assert tr_large / tr_small == pytest.approx(4.0, rel=0.25)


class TestMeanConditional:
    def test_zero_residual_case(self):
        # X = W Z exactly and prior mean 0: conditional mean 0 and
        # covariance (N Sigma^-1 + I)^-1
        gen = np.random.default_rng(4)
        n, d = 25, 2
        weights = gen.standard_normal((4, d))
        latent = gen.standard_normal((d, n))
        priors = default_priors(2, 2, d)
        data = StackedData(x=weights @ latent, view_dims=(2, 2))
        noise = [0.5 * np.eye(2), 2.0 * np.eye(2)]
        state = ModelState(weights=weights, mean=np.zeros(4), noise_cov=noise,
                           latent=latent)
        mean, cov = mean_conditional(state, data, priors)
        assert mean == pytest.approx(np.zeros(4), abs=1e-10)
        prec = np.diag([n / 0.5, n / 0.5, n / 2.0, n / 2.0]) + np.eye(4)
        assert cov == pytest.approx(np.linalg.inv(prec))

    def test_large_n_approaches_demeaned_average(self):
        # Sigma = I, prior I: posterior mean -> sample mean of (x - W z)
        gen = np.random.default_rng(5)
        n = 10_000
        priors = default_priors(1, 1, 1)
        weights = gen.standard_normal((2, 1))
        latent = gen.standard_normal((1, n))
        truth = np.array([0.7, -0.4])
        x = weights @ latent + truth[:, None] + gen.standard_normal((2, n))
        data = StackedData(x=x, view_dims=(1, 1))
        state = ModelState(weights=weights, mean=np.zeros(2),
                           noise_cov=[np.eye(1), np.eye(1)], latent=latent)
        mean, cov = mean_conditional(state, data, priors)
        target = (x - weights @ latent).mean(axis=1)
        assert mean == pytest.approx(target, abs=3 / np.sqrt(n))

    def test_scalar_formula(self):
        # one view, D = 1: hand-derived normal posterior for the mean
        gen = np.random.default_rng(6)
        n = 9
        priors = single_view_priors(1, 1, mean_scale=4.0)
        x = gen.standard_normal((1, n)) + 2.0
        data = StackedData(x=x, view_dims=(1,))
        state = toy_state(gen, (1,), 1, n, noise=[np.array([[0.5]])])
        mean, cov = mean_conditional(state, data, priors)
        demeaned = x - state.weights @ state.latent
        prec = n / 0.5 + 1 / 4.0
        expected_mean = (demeaned.sum() / 0.5) / prec
        assert cov[0, 0] == pytest.approx(1 / prec, rel=1e-12)
        assert mean[0] == pytest.approx(expected_mean, rel=1e-12)


class TestWeightConditional:
    def test_no_information_returns_prior(self):
        gen = np.random.default_rng(7)
        n, d = 10, 2
        priors = default_priors(2, 2, d)
        state = toy_state(gen, (2, 2), d, n)
        state.latent[0] = 0.0
        data = StackedData(x=gen.standard_normal((4, n)), view_dims=(2, 2))
        mean, cov = weight_column_conditional(state, data, priors, 0)
        assert mean == pytest.approx(priors.weight_loc)
        assert cov == pytest.approx(priors.weight_cov)

    def test_matches_ridge_regression(self):
        # d = 1, one view, Sigma = I: Bayesian linear regression with
        # design vector z: cov = (z.z I + I)^-1, mean = cov (X z)
        gen = np.random.default_rng(8)
        n, dim = 50, 3
        priors = PriorHyper(
            mean_loc=np.zeros(dim), mean_cov=np.eye(dim),
            weight_loc=np.zeros(dim), weight_cov=np.eye(dim),
            noise_scale=(np.eye(dim),), noise_dof=(dim + 2.0,),
            latent_dim=1, view_dims=(dim,))
        x = gen.standard_normal((dim, n))
        z = gen.standard_normal((1, n))
        state = ModelState(weights=np.zeros((dim, 1)), mean=np.zeros(dim),
                           noise_cov=[np.eye(dim)], latent=z)
        mean, cov = weight_column_conditional(state, data=StackedData(x=x, view_dims=(dim,)),
                                              priors=priors, i=0)
        ridge_prec = float(z[0] @ z[0]) + 1.0
        assert cov == pytest.approx(np.eye(dim) / ridge_prec)
        assert mean == pytest.approx((x @ z[0]) / ridge_prec)

    def test_consistency_against_planted_weights(self):
        # orthogonal latent rows, noiseless X = W0 Z: conditional mean of
        # each column approaches the planted column
        gen = np.random.default_rng(9)
        n, d, dim = 10_000, 2, 3
        z = gen.standard_normal((d, n))
        # orthogonalize rows
        z[1] -= (z[1] @ z[0]) / (z[0] @ z[0]) * z[0]
        w0 = gen.standard_normal((dim, d))
        x = w0 @ z
        priors = PriorHyper(
            mean_loc=np.zeros(dim), mean_cov=np.eye(dim),
            weight_loc=np.zeros(dim), weight_cov=np.eye(dim),
            noise_scale=(np.eye(dim),), noise_dof=(dim + 2.0,),
            latent_dim=d, view_dims=(dim,))
        state = ModelState(weights=w0.copy(), mean=np.zeros(dim),
                           noise_cov=[0.01 * np.eye(dim)], latent=z)
        data = StackedData(x=x, view_dims=(dim,))
        for i in range(d):
            mean, cov = weight_column_conditional(state, data, priors, i)
            sd = np.sqrt(np.diag(cov))
            assert np.all(np.abs(mean - w0[:, i]) < 3 * sd + 1e-9)


class TestLatentConditional:
    def test_zero_weights_prior_fallback(self):
        gen = np.random.default_rng(10)
        n = 8
        state = ModelState(weights=np.zeros((4, 2)), mean=np.zeros(4),
                           noise_cov=[np.eye(2), np.eye(2)],
                           latent=np.zeros((2, n)))
        data = StackedData(x=gen.standard_normal((4, n)), view_dims=(2, 2))
        means, cov = latent_conditional(state, data)
        assert cov == pytest.approx(np.eye(2))
        assert means == pytest.approx(np.zeros((2, n)))

    def test_identity_weights_algebraic_identity(self):
        # W = I, Sigma = I, mean = 0: z_n ~ N(x_n / 2, I / 2)
        gen = np.random.default_rng(11)
        n = 5
        x = gen.standard_normal((2, n))
        state = ModelState(weights=np.eye(2), mean=np.zeros(2),
                           noise_cov=[np.eye(1), np.eye(1)],
                           latent=np.zeros((2, n)))
        data = StackedData(x=x, view_dims=(1, 1))
        means, cov = latent_conditional(state, data)
        assert cov == pytest.approx(np.eye(2) / 2)
        assert means == pytest.approx(x / 2)

    def test_matches_dense_gaussian_conditioning(self):
        gen = np.random.default_rng(12)
        n, d = 6, 2
        state = toy_state(gen, (2, 3), d, n)
        data = StackedData(x=gen.standard_normal((5, n)), view_dims=(2, 3))
        means, cov = latent_conditional(state, data)
        full_cov = np.zeros((5, 5))
        full_cov[:2, :2] = state.noise_cov[0]
        full_cov[2:, 2:] = state.noise_cov[1]
        for k in range(n):
            mean_o, cov_o = oracles.gaussian_condition_oracle(
                state.weights, state.mean, full_cov, data.x[:, k])
            assert means[:, k] == pytest.approx(mean_o, abs=1e-10)
        assert cov == pytest.approx(cov_o, abs=1e-10)


class TestRunGibbs:
    def test_record_count_benchmark_protocol(self):
        cfg = GibbsConfig(n_samples=5000, burn_in_fraction=0.2)
        assert cfg.n_records == 4000

    def test_record_count_small(self):
        cfg = GibbsConfig(n_samples=10, burn_in_fraction=0.2, thinning=1)
        assert cfg.n_records == 8
        assert GibbsConfig(n_samples=10, burn_in_fraction=0.2, thinning=3).n_records == 2

    def test_chain_reproducible(self):
        gen = np.random.default_rng(13)
        data = StackedData(x=gen.standard_normal((4, 40)), view_dims=(2, 2))
        priors = default_priors(2, 2, 1)
        cfg = GibbsConfig(n_samples=30, seed=21)
        a = run_gibbs(data, priors, cfg)
        b = run_gibbs(data, priors, cfg)
        assert np.array_equal(a.weight_samples, b.weight_samples)
        assert np.array_equal(a.mean_samples, b.mean_samples)
        for blk_a, blk_b in zip(a.noise_samples, b.noise_samples):
            assert np.array_equal(blk_a, blk_b)

    def test_records_finite_and_spd(self):
        gen = np.random.default_rng(14)
        data = StackedData(x=gen.standard_normal((4, 60)), view_dims=(2, 2))
        priors = default_priors(2, 2, 2)
        chain = run_gibbs(data, priors, GibbsConfig(n_samples=50, seed=3))
        assert np.all(np.isfinite(chain.weight_samples))
        assert np.all(np.isfinite(chain.mean_samples))
        for blocks in chain.noise_samples:
            for blk in blocks:
                np.linalg.cholesky(blk)
        # conditional draws are always accepted
        assert chain.acceptance_rate == 1.0

    def test_sweep_matches_public_updates(self):
        # one optimized sweep equals one sweep through the public update
        # functions, draw for draw (same stream, same conditionals)
        gen = np.random.default_rng(23)
        data = StackedData(x=gen.standard_normal((4, 80)), view_dims=(2, 2))
        priors = default_priors(2, 2, 2)
        chain = run_gibbs(data, priors, GibbsConfig(n_samples=1, seed=31,
                                                    burn_in_fraction=0.0))

        rng = Rng(31, 1)
        state = initial_state(data, priors, rng)
        from bayes_ssi.gibbs import update_mean, update_noise
        resid = data.x - state.mean[:, None] - state.weights @ state.latent
        update_noise(state, data, priors, rng, resid)
        update_mean(state, data, priors, rng)
        for i in range(2):
            update_weight_column(state, data, priors, i, rng)
        update_latent(state, data, rng)

        assert chain.weight_samples[0] == pytest.approx(state.weights, rel=1e-8)
        assert chain.mean_samples[0] == pytest.approx(state.mean, rel=1e-8)
        for blk, expect in zip(chain.noise_samples, state.noise_cov):
            assert blk[0] == pytest.approx(expect, rel=1e-8)

    def test_gram_scatter_matches_residual_scatter(self):
        gen = np.random.default_rng(15)
        n = 37
        data = StackedData(x=gen.standard_normal((5, n)), view_dims=(2, 3))
        state = toy_state(gen, (2, 3), 2, n)
        resid = _residual(state, data)
        direct = resid @ resid.T
        grams = _scatter_from_grams(
            data.x @ data.x.T, data.x.sum(axis=1), data.x @ state.latent.T,
            state.latent @ state.latent.T, state.latent.sum(axis=1),
            state.weights, state.mean, n)
        assert grams == pytest.approx(direct, rel=1e-10)

    def test_subspace_angle_shrinks_with_data(self):
        # planted two-view model: the posterior-mean weight subspace
        # approaches the planted subspace as N grows
        gen = np.random.default_rng(16)
        dims = (4, 4)
        d = 2
        w0 = gen.standard_normal((8, d))
        priors = default_priors(4, 4, d)
        angles = []
        for n in (2**8, 2**10, 2**12):
            z = gen.standard_normal((d, n))
            x = w0 @ z + 0.3 * gen.standard_normal((8, n))
            data = StackedData(x=x, view_dims=dims)
            chain = run_gibbs(data, priors, GibbsConfig(n_samples=400, seed=5))
            w_hat = chain.weight_samples[100:].mean(axis=0)
            # largest principal angle between column spaces
            q0, _ = np.linalg.qr(w0)
            q1, _ = np.linalg.qr(w_hat)
            svals = np.linalg.svd(q0.T @ q1, compute_uv=False)
            angles.append(float(np.arccos(np.clip(svals.min(), -1, 1))))
        assert angles[1] <= angles[0] * 1.25
        assert angles[2] <= angles[1] * 1.25
        assert angles[2] < angles[0]

    def test_warm_start_runs(self):
        gen = np.random.default_rng(17)
        data = StackedData(x=gen.standard_normal((4, 120)), view_dims=(2, 2))
        priors = default_priors(2, 2, 1)
        chain = run_gibbs(data, priors,
                          GibbsConfig(n_samples=20, seed=1, warm_start=True))
        assert chain.n_records == 16

    def test_initial_state_from_priors_deterministic(self):
        gen = np.random.default_rng(18)
        data = StackedData(x=gen.standard_normal((4, 10)), view_dims=(2, 2))
        priors = default_priors(2, 2, 1)
        a = initial_state(data, priors, Rng(9, 1))
        b = initial_state(data, priors, Rng(9, 1))
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.latent, b.latent)


class TestDiagnostics:
    def test_ess_iid_close_to_n(self):
        gen = np.random.default_rng(19)
        x = gen.standard_normal(4000)
        assert effective_sample_size(x) > 2000

    def test_ess_correlated_much_smaller(self):
        gen = np.random.default_rng(20)
        x = np.zeros(4000)
        for k in range(1, x.size):
            x[k] = 0.95 * x[k - 1] + gen.standard_normal()
        assert effective_sample_size(x) < 1000

    def test_split_rhat_stationary_near_one(self):
        gen = np.random.default_rng(21)
        assert split_rhat(gen.standard_normal(4000)) == pytest.approx(1.0, abs=0.05)

    def test_split_rhat_detects_drift(self):
        x = np.linspace(0.0, 5.0, 2000) + np.random.default_rng(22).standard_normal(2000)
        assert split_rhat(x) > 1.2
