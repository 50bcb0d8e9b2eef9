import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracvi import estimators as E
from fracvi import gmm
from fracvi.bounds import ConjugateGaussianModel, elbo, lb_gamma, log_evidence
from fracvi.calibration import generate_replica, preset, study_model
from fracvi.gaussian import Gaussian1D


def demo_model():
    rng = np.random.default_rng(3)
    return ConjugateGaussianModel(Gaussian1D(0.0, 4.0), 1.0, tuple(1.0 + rng.standard_normal(20)))


MODEL = demo_model()


def spread(fn, seeds=range(20)):
    vals = np.array([fn(s) for s in seeds])
    return vals.mean(), vals.std(ddof=1) / math.sqrt(len(vals)), vals


class TestSamplerSpec:
    @pytest.mark.parametrize("kw", [dict(Ns=0), dict(Ns_prime=0), dict(Ui_size=0), dict(seed=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            E.SamplerSpec(**kw)

    def test_divisibility(self):
        q = E.SemiImplicitToy(Gaussian1D(0, 1))
        with pytest.raises(ValueError, match="Ns"):
            E.estimate_lbh(q, MODEL, 0.5, E.SamplerSpec(Ns=10, Ns_prime=3))


class TestSingleSampleCollapse:
    @given(seed=st.integers(0, 2**32 - 1), g=st.floats(0.01, 0.99), m=st.floats(-2, 3), v=st.floats(0.01, 3))
    def test_plug_in(self, seed, g, m, v):
        q = Gaussian1D(m, v)
        rep = E.estimate_lb(MODEL, q, g, E.SamplerSpec(Ns=1, seed=seed))
        z = q.mean + q.sd * np.random.default_rng(seed).standard_normal(1)
        per_sample = MODEL.log_likelihood_at(z)[0] - (q.logpdf(z)[0] - MODEL.prior.logpdf(z)[0])
        assert rep.value == per_sample

    @given(seed=st.integers(0, 2**32 - 1), g=st.floats(0.01, 0.99))
    def test_unnormalized(self, seed, g):
        q = Gaussian1D(0.7, 0.2)
        rep = E.estimate_lb_unnormalized(MODEL, q.logpdf, 0.0, g, E.SamplerSpec(Ns=1, seed=seed), q)
        assert rep.value == E.estimate_lb(MODEL, q, 0.5, E.SamplerSpec(Ns=1, seed=seed)).value

    @given(seed=st.integers(0, 2**32 - 1), g=st.floats(0.01, 0.99))
    def test_hierarchical(self, seed, g):
        toy = E.SemiImplicitToy(Gaussian1D(0.5, 0.3), 1.0, 0.2, 0.4)
        rep = E.estimate_lbh(toy, MODEL, g, E.SamplerSpec(Ns=1, Ns_prime=1, seed=seed))
        rng = np.random.default_rng(seed)
        u = toy.sample_u(rng.standard_normal(1))
        z = toy.sample_z(u[:, None], rng.standard_normal((1, 1)))
        per_sample = MODEL.log_likelihood_at(z) - (toy.cond_logpdf(z, u[:, None]) - MODEL.prior.logpdf(z))
        assert rep.value == per_sample.item()


class TestPlugIn:
    def test_deterministic(self):
        q = MODEL.posterior(0.4)
        a = E.estimate_lb(MODEL, q, 0.4, E.SamplerSpec(Ns=500, seed=9))
        b = E.estimate_lb(MODEL, q, 0.4, E.SamplerSpec(Ns=500, seed=9))
        assert a == b

    def test_exact_fractional_posterior(self):
        g = 0.4
        q = MODEL.posterior(g)
        mean, se, _ = spread(lambda s: E.estimate_lb(MODEL, q, g, E.SamplerSpec(Ns=10**5, seed=s)).value)
        assert abs(mean - log_evidence(MODEL)) < 3 * se + 1e-12

    def test_error_shrinks_with_samples(self):
        g = 0.6
        q = Gaussian1D(1.0, 0.3)
        exact = lb_gamma(MODEL, q, g).total
        medians = [
            np.median([abs(E.estimate_lb(MODEL, q, g, E.SamplerSpec(Ns=ns, seed=s)).value - exact) for s in range(20)])
            for ns in (10**2, 10**4, 10**6)
        ]
        assert medians[0] > medians[1] > medians[2]

    def test_separate_draws_consistent(self):
        g = 0.5
        q = Gaussian1D(1.0, 0.3)
        mean, se, _ = spread(
            lambda s: E.estimate_lb(MODEL, q, g, E.SamplerSpec(Ns=10**4, seed=s, separate_draws=True)).value
        )
        assert abs(mean - lb_gamma(MODEL, q, g).total) < 3 * se + 1e-3

    def test_rejects_gamma_one(self):
        with pytest.raises(ValueError):
            E.estimate_lb(MODEL, Gaussian1D(0, 1), 1.0, E.SamplerSpec(Ns=4))


class TestUnnormalized:
    def test_known_constant(self):
        q = Gaussian1D(1.0, 0.3)
        log_Z = math.log(2.5)
        spec = E.SamplerSpec(Ns=10**4, seed=4)
        rep = E.estimate_lb_unnormalized(MODEL, lambda z: q.logpdf(z) + log_Z, log_Z, 0.5, spec, q)
        ref = E.estimate_lb(MODEL, q, 0.5, spec)
        assert rep.value == pytest.approx(ref.value, abs=1e-10)

    @pytest.mark.parametrize("c", [-1.5, 0.3, 2.0])
    def test_misspecified_constant_shifts_by_error(self, c):
        q = Gaussian1D(1.0, 0.3)
        log_Z = 0.9
        spec = E.SamplerSpec(Ns=1000, seed=5)
        right = E.estimate_lb_unnormalized(MODEL, lambda z: q.logpdf(z) + log_Z, log_Z, 0.3, spec, q)
        wrong = E.estimate_lb_unnormalized(MODEL, lambda z: q.logpdf(z) + log_Z, log_Z + c, 0.3, spec, q)
        assert wrong.value - right.value == pytest.approx(c, abs=1e-10)


class TestHierarchical:
    def test_degenerate_mixing(self):
        g = 0.5
        toy = E.SemiImplicitToy(Gaussian1D(0.8, 1e-12), 1.0, 0.1, 0.3)
        flat = Gaussian1D(0.9, 0.3)
        a, se_a, _ = spread(lambda s: E.estimate_lbh(toy, MODEL, g, E.SamplerSpec(10**4, 100, seed=s)).value)
        b, se_b, _ = spread(lambda s: E.estimate_lb(MODEL, flat, g, E.SamplerSpec(10**4, seed=s)).value)
        assert abs(a - b) < 3 * math.hypot(se_a, se_b) + 1e-6

    def test_below_marginal_bound(self):
        g = 0.5
        toy = E.SemiImplicitToy(Gaussian1D(0.0, 0.5), 1.0, 0.0, 0.5)
        exact = lb_gamma(MODEL, toy.marginal, g).total
        mean, se, _ = spread(lambda s: E.estimate_lbh(toy, MODEL, g, E.SamplerSpec(10**5, 100, seed=s)).value, range(10))
        assert mean <= exact + 3 * se

    def test_marginal(self):
        toy = E.SemiImplicitToy(Gaussian1D(1.0, 2.0), 3.0, -1.0, 0.5)
        assert toy.marginal == Gaussian1D(2.0, 18.5)


class TestLbbh:
    def test_same_conditional_has_zero_kl(self):
        toy = E.SemiImplicitToy(Gaussian1D(0.3, 0.4), 0.7, 0.1, 0.2)
        rep = E.estimate_lbbh(toy, toy, MODEL, 0.4, E.SamplerSpec(400, 20, seed=2))
        assert rep.extra_kl_term == 0.0

    def test_optimal_pair_recovers_elbo(self):
        g = 0.3
        r = Gaussian1D(1.2, 0.1)
        s0 = MODEL.prior.variance
        prec = g / r.variance + (1 - g) / s0
        q = Gaussian1D(g * r.mean / r.variance / prec, 1.0 / prec)
        mixing = Gaussian1D(0.0, 1.0)
        toy_q = E.SemiImplicitToy(mixing, 0.0, q.mean, q.variance)
        toy_r = E.SemiImplicitToy(mixing, 0.0, r.mean, r.variance)
        mean, se, _ = spread(lambda s: E.estimate_lbbh(toy_q, toy_r, MODEL, g, E.SamplerSpec(10**5, 10, seed=s)).value)
        ref = elbo(MODEL, r).total
        assert mean <= ref + 3 * se
        assert mean == pytest.approx(ref, abs=0.05)

    def test_requires_shared_mixing(self):
        a = E.SemiImplicitToy(Gaussian1D(0.0, 1.0))
        b = E.SemiImplicitToy(Gaussian1D(0.0, 2.0))
        with pytest.raises(ValueError):
            E.estimate_lbbh(a, b, MODEL, 0.5, E.SamplerSpec(10, 2))

    def test_deterministic(self):
        toy_q = E.SemiImplicitToy(Gaussian1D(0.3, 0.4), 0.7, 0.1, 0.2)
        toy_r = E.SemiImplicitToy(Gaussian1D(0.3, 0.4), 0.5, 0.3, 0.1)
        spec = E.SamplerSpec(400, 20, seed=8)
        assert E.estimate_lbbh(toy_q, toy_r, MODEL, 0.4, spec) == E.estimate_lbbh(toy_q, toy_r, MODEL, 0.4, spec)


class TestLbbhAlt:
    def test_subsets_exclude_self(self):
        sub = E.cyclic_subsets(5, 3)
        assert sub.shape == (5, 3)
        assert all(i not in row for i, row in enumerate(sub))

    def test_subset_too_large(self):
        with pytest.raises(E.SubsetInvalid):
            E.cyclic_subsets(4, 4)
        toy = E.SemiImplicitToy(Gaussian1D(0, 1))
        with pytest.raises(E.SubsetInvalid):
            E.estimate_lbbh_alt(toy, toy, MODEL, 0.5, E.SamplerSpec(Ns=8, Ns_prime=4, Ui_size=4))

    def test_smallest_config(self):
        toy = E.SemiImplicitToy(Gaussian1D(0.3, 0.4), 0.7, 0.1, 0.2)
        spec = E.SamplerSpec(Ns=2, Ns_prime=2, Ui_size=1, seed=3)
        a = E.estimate_lbbh_alt(toy, toy, MODEL, 0.5, spec)
        assert math.isfinite(a.value)
        assert a == E.estimate_lbbh_alt(toy, toy, MODEL, 0.5, spec)

    def test_agrees_when_conditionals_ignore_u(self):
        mixing = Gaussian1D(0.0, 1.0)
        toy_q = E.SemiImplicitToy(mixing, 0.0, 1.0, 0.3)
        toy_r = E.SemiImplicitToy(mixing, 0.0, 1.1, 0.1)
        spec = E.SamplerSpec(Ns=2000, Ns_prime=20, Ui_size=3, seed=6)
        a = E.estimate_lbbh(toy_q, toy_r, MODEL, 0.5, spec)
        b = E.estimate_lbbh_alt(toy_q, toy_r, MODEL, 0.5, spec)
        assert a.value == pytest.approx(b.value, abs=1e-9)

    def test_self_cross_term_differs(self):
        # with u-dependent conditionals the held-out cross term is larger than the matched one
        toy = E.SemiImplicitToy(Gaussian1D(0.0, 1.0), 1.0, 0.0, 0.05)
        spec = E.SamplerSpec(Ns=2000, Ns_prime=20, Ui_size=3, seed=6)
        assert E.estimate_lbbh_alt(toy, toy, MODEL, 0.5, spec).extra_kl_term > 0.0


class TestImportanceSampling:
    def test_exact_posterior_has_zero_variance(self):
        post = MODEL.posterior()

        def log_joint(z):
            return MODEL.prior.logpdf(z) + MODEL.log_likelihood_at(z)

        sample = lambda rng, n: post.mean + post.sd * rng.standard_normal(n)
        est = E.is_log_evidence(log_joint, sample, post.logpdf, 200, seed=1)
        assert est.cv < 1e-12
        assert est.log_evidence == pytest.approx(log_evidence(MODEL), abs=1e-10)

    def test_needs_two_draws(self):
        with pytest.raises(ValueError):
            E.is_from_log_weights([0.0])

    def test_negligible_weights_keep_cv_finite(self):
        est = E.is_from_log_weights([0.0, -1e300, -1e300])
        assert math.isfinite(est.cv) and not est.cv_overflow

    def test_cv_of_known_weights(self):
        w = np.array([1.0, 2.0, 3.0, 6.0])
        est = E.is_from_log_weights(np.log(w) + 700.0)
        assert est.cv == pytest.approx(w.std(ddof=1) / w.mean(), rel=1e-12)
        assert est.log_evidence == pytest.approx(math.log(3.0) + 700.0, rel=1e-14)

    def test_gmm_single_component_matches_evidence_scale(self):
        data = np.array([0.4, 1.1, -0.3, 0.9])
        m = gmm.GmmModel(data=data, K=1, prior_variance=4.0)
        res = gmm.fit(m, 1.0, gmm.init_state(m))
        est = E.gmm_is_log_evidence(m, res.state, Ns=4000, seed=2)
        exact = log_evidence(ConjugateGaussianModel(Gaussian1D(0.0, 4.0), 1.0, tuple(data)))
        assert est.cv < 1e-10
        assert est.log_evidence == pytest.approx(exact, abs=1e-10)

    def test_gmm_batches_do_not_change_draw_count(self):
        spec = preset("table2a")
        m = study_model(spec, generate_replica(spec, 0))
        s = gmm.fit(m, 0.5, gmm.init_state(m)).state
        a = E.gmm_is_log_evidence(m, s, Ns=300, seed=1, batch=300)
        assert a.ns == 300
        assert a == E.gmm_is_log_evidence(m, s, Ns=300, seed=1, batch=300)

    def test_gmm_above_bound(self):
        spec = preset("table2a")
        m = study_model(spec, generate_replica(spec, 1))
        for g in (0.1, 0.5, 0.9, 1.0):
            s = gmm.fit(m, g, gmm.init_state(m)).state
            est = E.gmm_is_log_evidence(m, s, Ns=2000, seed=3)
            assert est.log_evidence >= gmm.evaluate_bound(m, s, g).total - 3 * est.stderr


class TestTwoPoint:
    def test_reference_tuple(self):
        f1, f2, g1, g2, g = 2.0, 1.0, 1.0, 3.0, 0.5
        res = E.two_point_mixing(f1, f2, g1, g2, g)
        denom = (1 - g) * (f1 - f2) * (g1 - g2)
        assert res.q1 == pytest.approx(((1 - g) * f2 * g2 - f1 * g2 + g * f2 * g1) / denom, rel=1e-15)
        assert res.q2 == pytest.approx(((1 - g) * f1 * g1 - f2 * g1 + g * f1 * g2) / denom, rel=1e-15)
        if res.valid:
            assert res.residual < 1e-10

    def test_constructed_symmetric_solution(self):
        # choose g2 so that the half-half mixture is stationary
        f1, f2, g1, g = 1.3, 1.0, 2.0, 0.4
        F = 0.5 * (f1 + f2)
        # stationarity at atom 1: f1/F = 1 - g + g g1 / G  ->  G = g g1 / (f1/F - 1 + g)
        G = g * g1 / (f1 / F - 1 + g)
        g2 = 2 * G - g1
        res = E.two_point_mixing(f1, f2, g1, g2, g)
        assert res.valid
        assert res.q1 == pytest.approx(0.5, abs=1e-12) and res.q2 == pytest.approx(0.5, abs=1e-12)
        assert res.residual < 1e-10

    def test_zero_denominator(self):
        res = E.two_point_mixing(2.0, 1.0, 1.5, 1.5, 0.5)
        assert not res.valid and math.isnan(res.q1)

    def test_exterior_flagged(self):
        res = E.two_point_mixing(10.0, 1.0, 1.0, 1.1, 0.5)
        assert not res.valid
        assert not (0 < res.q1 < 1 and 0 < res.q2 < 1)

    @given(
        f1=st.floats(0.1, 5),
        f2=st.floats(0.1, 5),
        g1=st.floats(0.1, 5),
        g2=st.floats(0.1, 5),
        g=st.floats(0.05, 0.95),
    )
    def test_interior_solutions_are_stationary(self, f1, f2, g1, g2, g):
        res = E.two_point_mixing(f1, f2, g1, g2, g)
        if res.valid:
            assert res.residual <= 1e-10
            assert abs(res.q1 + res.q2 - 1) <= 1e-12
