import math

import numpy as np
import pytest

from fracvi import multinomial as M

import oracles


def moments_by_quadrature(params, counts):
    n = int(sum(counts))
    m, s2, _ = M.qc_quantities(params, n)
    centre_d = params.mu + params.sigma2 * np.asarray(counts) / (n + 1)
    return oracles.logit_moments(params.mu, params.sigma2, counts, (m + s2 / 2, 1.3 * np.sqrt(s2)), (centre_d, np.sqrt(params.sigma2)))


class TestQcQuantities:
    def test_symmetric_weights(self):
        _, _, rho = M.qc_quantities(M.LogitPosteriorParams.default(3), 10)
        assert np.allclose(rho, 1 / 3, atol=1e-15)

    def test_boundary(self):
        n = 4
        _, s2, _ = M.qc_quantities(M.LogitPosteriorParams([0.0, 0.0], [n + 1 - 1e-6, 1.0]), n)
        assert s2[0] > 1e6
        with pytest.raises(M.InvalidVariance):
            M.qc_quantities(M.LogitPosteriorParams([0.0, 0.0], [n + 1.0, 1.0]), n)

    def test_rho_matches_quadrature(self):
        params = M.LogitPosteriorParams([0.3, -0.2], [0.8, 1.1])
        m, s2, rho = M.qc_quantities(params, 10)
        # rho_c is proportional to the Gaussian expectation of exp(z_c)
        mass = [
            oracles.log_integral(lambda z, c=c: oracles.log_normal(z, m[c], s2[c]) + z, m[c] + s2[c], math.sqrt(s2[c]))
            for c in (0, 1)
        ]
        assert rho[0] == pytest.approx(1.0 / (1.0 + math.exp(mass[1] - mass[0])), abs=1e-8)
        assert rho.sum() == pytest.approx(1.0, abs=1e-12)


class TestMoments:
    def test_untilted_class(self):
        model = M.LogitModel([0, 4])
        params = M.LogitPosteriorParams([0.0, 0.5], [0.7, 1.2])
        _, _, eqd_z, eqd_z2 = M.moments(params, model)
        assert eqd_z[0] == 0.0 and eqd_z2[0] == pytest.approx(0.7, abs=1e-15)

    def test_match_quadrature(self):
        model = M.LogitModel([3, 2])
        params = M.LogitPosteriorParams([0.2, -0.4], [0.9, 1.3])
        ref = moments_by_quadrature(params, model.class_counts)
        for got, want in zip(M.moments(params, model), ref):
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-7)

    def test_dominant_class_limit(self):
        model = M.LogitModel([2, 3])
        params = M.LogitPosteriorParams([30.0, 0.0], [0.5, 0.5])
        m, s2, rho = M.qc_quantities(params, model.n)
        eqc_z, eqc_z2, _, _ = M.moments(params, model)
        assert rho[0] > 1 - 1e-12
        # class 0 is a Gaussian shifted by s2, class 1 is untouched
        assert eqc_z[0] == pytest.approx(m[0] + s2[0], rel=1e-12)
        assert eqc_z2[0] == pytest.approx(s2[0] + (m[0] + s2[0]) ** 2, rel=1e-12)
        assert eqc_z[1] == pytest.approx(m[1], abs=1e-10)


class TestGradient:
    def test_matches_finite_differences(self):
        model = M.LogitModel([3, 2])
        params = M.LogitPosteriorParams([0.0, 0.0], [1.0, 1.0])
        gm, gs = M.lb_gradient(params, model)
        f_mu = lambda mu: M.lb_value_quadrature(M.LogitPosteriorParams(mu, params.sigma2), model)
        f_s2 = lambda s2: M.lb_value_quadrature(M.LogitPosteriorParams(params.mu, s2), model)
        np.testing.assert_allclose(gm, oracles.central_difference(f_mu, params.mu), rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(gs, oracles.central_difference(f_s2, params.sigma2), rtol=1e-4, atol=1e-6)

    def test_equivariant_under_relabeling(self):
        model = M.LogitModel([5, 1, 3])
        params = M.LogitPosteriorParams([0.2, -0.1, 0.4], [0.8, 1.5, 0.6])
        perm = np.array([2, 0, 1])
        gm, gs = M.lb_gradient(params, model)
        gm_p, gs_p = M.lb_gradient(M.LogitPosteriorParams(params.mu[perm], params.sigma2[perm]), M.LogitModel(model.class_counts[perm]))
        np.testing.assert_allclose(gm_p, gm[perm], rtol=1e-13)
        np.testing.assert_allclose(gs_p, gs[perm], rtol=1e-13)

    def test_vanishes_at_fit(self):
        model = M.LogitModel([4, 1, 2])
        res = M.fit(model, tol=1e-8)
        gm, gs = M.lb_gradient(res.params, model)
        assert math.sqrt(np.sum(gm**2) + np.sum(gs**2)) < 1e-6


class TestQuadratureValue:
    def test_scale_invariance(self):
        # scaling uq by 5 adds log 5 to log Z_d and (1/gamma) log 5 to log Z_c; the bound is unchanged
        model = M.LogitModel([3, 2])
        params = M.LogitPosteriorParams([0.1, -0.3], [0.9, 1.2])
        n, g = model.n, model.gamma
        base = M._tensor_quadrature
        centre_d = params.mu + params.sigma2 * model.class_counts / (n + 1)
        m, s2, _ = M.qc_quantities(params, n)
        log5 = math.log(5.0)
        log_zd = base(lambda z: M._log_uq(z, params, n) + log5 + (1 - g) * M._log_lik(z, model), centre_d, np.sqrt(params.sigma2), 120)
        log_zc = base(lambda z: (M._log_uq(z, params, n) + log5) / g + (1 - 1 / g) * M._log_prior(z), m + s2 / 2, 1.25 * np.sqrt(s2), 120)
        scaled = log_zd / (1 - g) - g / (1 - g) * log_zc
        assert scaled == pytest.approx(M.lb_value_quadrature(params, model), abs=1e-9)

    def test_below_log_evidence(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            model = M.LogitModel(rng.integers(0, 6, 2) + 1)
            params = M.LogitPosteriorParams(rng.normal(0, 1, 2), rng.uniform(0.2, 2.0, 2))
            assert M.lb_value_quadrature(params, model) <= M.log_evidence_quadrature(model) + 1e-9

    def test_closed_form_agrees(self):
        model = M.LogitModel([2, 0, 3])
        params = M.LogitPosteriorParams([0.1, -0.3, 0.2], [0.9, 1.2, 0.7])
        assert M.lb_value(params, model) == pytest.approx(M.lb_value_quadrature(params, model), abs=1e-8)

    def test_evidence_against_adaptive_quadrature(self):
        model = M.LogitModel([3, 1])
        log_f = lambda x, y: -math.log(2 * math.pi) - 0.5 * (x * x + y * y) + 3 * x + y - 4 * oracles.logaddexp2(x, y)
        ref = oracles.log_integral_2d(log_f, (0.2, -0.2), (1.0, 1.0))
        assert M.log_evidence_quadrature(model) == pytest.approx(ref, abs=1e-8)

    def test_dimension_limit(self):
        with pytest.raises(M.DimensionTooLarge):
            M.lb_value_quadrature(M.LogitPosteriorParams.default(4), M.LogitModel([1, 1, 1, 1]))


class TestFit:
    def test_majority_class_largest(self):
        res = M.fit(M.LogitModel([0, 0, 9]))
        assert np.argmax(res.params.mu) == 2
        assert res.params.mu[2] > res.params.mu[0] and res.params.mu[2] > res.params.mu[1]

    def test_init_at_optimum_returns_immediately(self):
        model = M.LogitModel([3, 5, 2])
        first = M.fit(model, tol=1e-9)
        again = M.fit(model, init=first.params, tol=1e-6)
        assert again.iterations <= 1

    def test_ascent(self):
        model = M.LogitModel([3, 5, 2])
        res = M.fit(model)
        init = M.LogitPosteriorParams.default(3)
        assert M.lb_value_quadrature(res.params, model) >= M.lb_value_quadrature(init, model)
        assert np.all(np.diff(res.trace) >= -1e-12)

    def test_relabeling(self):
        a = M.fit(M.LogitModel([1, 4]))
        b = M.fit(M.LogitModel([4, 1]))
        np.testing.assert_allclose(a.params.mu, b.params.mu[::-1], atol=1e-12)

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            M.fit(M.LogitModel([1, 1]), step=0.0)
