import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cellkit.cvae import (
    ConditionEncoder,
    CvaeArch,
    CvaeConfig,
    ZinbParams,
    condition_vector,
    decode,
    elbo_loss,
    encode,
    estimate_library_prior,
    generate,
    init_cvae,
    kl_gaussian,
    kl_lognormal,
    load_cvae,
    nb_log_pmf,
    reparameterize,
    sample_zinb_chain,
    save_cvae,
    train_cvae,
    zinb_log_pmf,
    zinb_log_prob,
)
from cellkit.errors import (
    NumericalError,
    ShapeError,
    TrainingDivergedError,
    UnknownConditionError,
    ValidationError,
)
from cellkit.expr import assign_splits
from cellkit.numkit import RngStream, backward, check_gradients
from cellkit.synthetic import zinb_dataset

CONDS = [("A", "human", "lung"), ("B", "human", "lung"), ("A", "mouse", "liver")]


def small_model(n_genes=6, seed=0, init_scale=1.0, alpha=1.0):
    arch = CvaeArch(n_genes, d_z=3, d_c=4, hidden=(5,), embed_dim=2)
    enc = ConditionEncoder.from_conditions(CONDS)
    return init_cvae(arch, enc, 4.0, 0.3, seed=seed, alpha=alpha, init_scale=init_scale)


def small_batch(n_genes=6, seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(8.0, (3, n_genes)).astype(float)
    counts[0, :2] = 0
    totals = counts.sum(axis=1, keepdims=True)
    inputs = np.log1p(counts / totals * 1e4)
    noise = rng.normal(size=(3, 4))
    return counts, inputs, noise


def scipy_zinb(y, mu, theta, pi):
    nb = stats.nbinom.logpmf(y, theta, theta / (theta + mu))
    return np.where(y == 0, np.log(pi + (1 - pi) * np.exp(nb)), np.log1p(-pi) + nb)


class TestZinb:
    @pytest.mark.parametrize("mu", [1e-3, 0.5, 10.0, 1e4])
    @pytest.mark.parametrize("theta", [0.05, 1.0, 100.0])
    def test_matches_scipy(self, mu, theta):
        y = np.arange(0, 30)
        np.testing.assert_allclose(zinb_log_pmf(y, mu, theta, 0.2), scipy_zinb(y, mu, theta, 0.2), rtol=1e-9)

    def test_nb_matches_scipy(self):
        y = np.arange(20)
        np.testing.assert_allclose(nb_log_pmf(y, 3.0, 2.0), stats.nbinom.logpmf(y, 2.0, 0.4), rtol=1e-12)

    def test_pi_zero_is_nb(self):
        y = np.arange(10)
        np.testing.assert_allclose(zinb_log_pmf(y, 4.0, 1.5, 0.0), nb_log_pmf(y, 4.0, 1.5), rtol=1e-12)

    def test_pi_one(self):
        lp = zinb_log_pmf(np.array([0, 1, 5]), 2.0, 1.0, 1.0)
        assert lp[0] == 0.0
        assert np.all(lp[1:] == -np.inf)

    def test_large_theta_tends_to_poisson(self):
        # lgamma(theta + y) - lgamma(theta) cancels about eps * theta * log(theta) absolutely
        y = np.arange(15)
        np.testing.assert_allclose(zinb_log_pmf(y, 3.0, 1e8, 0.0), stats.poisson.logpmf(y, 3.0), atol=1e-6)

    def test_finite_over_extreme_range(self):
        y = np.array([0, 1, 10, 1000, 10**6])
        for mu in (1e-8, 1.0, 1e8):
            for theta in (1e-8, 1.0, 1e8):
                assert np.all(np.isfinite(zinb_log_pmf(y, mu, theta, 0.5))), (mu, theta)

    def test_normalizes(self):
        y = np.arange(0, 2000)
        assert np.exp(zinb_log_pmf(y, 20.0, 0.7, 0.3)).sum() == pytest.approx(1.0, abs=1e-10)

    def test_frozen_value(self):
        # log(0.1 + 0.9 * (2/5)^2) computed by hand
        assert zinb_log_pmf(np.array([0]), 3.0, 2.0, 0.1)[0] == pytest.approx(math.log(0.244), rel=1e-13)

    def test_negative_count(self):
        with pytest.raises(ValidationError):
            zinb_log_pmf(np.array([-1]), 1.0, 1.0, 0.1)

    def test_log_prob_sums_genes(self):
        p = ZinbParams(np.array([1.0, 5.0]), np.array([2.0, 3.0]), np.array([0.1, 0.2]))
        s = np.array([0, 4])
        assert zinb_log_prob(p, s) == pytest.approx(float(scipy_zinb(s, p.mu, p.theta, p.pi).sum()), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(mu=st.floats(1e-4, 1e5), theta=st.floats(1e-3, 1e4), pi=st.floats(0, 0.99), y=st.integers(0, 500))
    def test_finite_and_nonpositive(self, mu, theta, pi, y):
        v = zinb_log_pmf(np.array([y]), mu, theta, pi)[0]
        assert np.isfinite(v) and v <= 1e-12


class TestKl:
    def test_frozen_value(self):
        assert kl_gaussian(0.0, 1.0, 1.0, 2.0) == pytest.approx(0.5 * math.log(2.0), rel=1e-14)

    def test_zero_iff_equal(self):
        assert kl_gaussian([1.0, -2.0], [0.5, 3.0], [1.0, -2.0], [0.5, 3.0]) == 0.0

    def test_matches_quadrature(self):
        p, q = stats.norm(0.3, math.sqrt(0.7)), stats.norm(-1.0, math.sqrt(2.5))
        ref, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), -20, 20)
        assert kl_gaussian(0.3, 0.7, -1.0, 2.5) == pytest.approx(ref, rel=1e-9)

    def test_lognormal_equals_gaussian(self):
        assert kl_lognormal(1.0, 0.2, 0.5, 0.4) == kl_gaussian(1.0, 0.2, 0.5, 0.4)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValidationError):
            kl_gaussian(0.0, 0.0, 0.0, 1.0)

    @settings(max_examples=80)
    @given(st.floats(-5, 5), st.floats(1e-3, 10), st.floats(-5, 5), st.floats(1e-3, 10))
    def test_nonnegative(self, m1, v1, m2, v2):
        assert kl_gaussian(m1, v1, m2, v2) >= -1e-12


class TestSampler:
    def test_moments(self):
        rho = np.array([0.2, 0.5, 0.3])
        rng = RngStream(0)
        draws = np.array([sample_zinb_chain(rho, 50.0, np.array([2.0, 5.0, 1.0]), 0.25, rng) for _ in range(20_000)])
        np.testing.assert_allclose(draws.mean(axis=0), 0.75 * 50 * rho, rtol=0.03)

    def test_tau_one_gives_zeros(self):
        out = sample_zinb_chain(np.array([0.5, 0.5]), 1e4, 1.0, 1.0, RngStream(1))
        np.testing.assert_array_equal(out, [0, 0])

    def test_deterministic(self):
        args = (np.full(5, 0.2), 100.0, 3.0, 0.1)
        np.testing.assert_array_equal(sample_zinb_chain(*args, RngStream(4)), sample_zinb_chain(*args, RngStream(4)))


class TestModel:
    def test_rho_is_simplex(self):
        p = small_model()
        counts, inputs, noise = small_batch()
        c = condition_vector(p, CONDS)
        out = decode(p, reparameterize(encode(p, inputs, c), noise), c)
        np.testing.assert_allclose(out.rho.sum(axis=1), 1.0, rtol=1e-12)
        assert np.all((out.tau > 0) & (out.tau < 1))
        assert np.all(out.theta.data > 0)

    def test_null_condition_is_zero_vector(self):
        p = small_model()
        c = condition_vector(p, [None, CONDS[0]])
        np.testing.assert_array_equal(c.data[0], 0.0)
        assert np.any(c.data[1] != 0)

    def test_unknown_condition(self):
        p = small_model()
        with pytest.raises(UnknownConditionError, match="cell_type"):
            condition_vector(p, [("Z", "human", "lung")])

    def test_shape_errors(self):
        p = small_model()
        c = condition_vector(p, CONDS)
        with pytest.raises(ShapeError):
            encode(p, np.ones((3, 5)), c)
        post = encode(p, np.ones((3, 6)), c)
        with pytest.raises(ShapeError):
            reparameterize(post, np.ones((3, 3)))

    def test_alpha_zero_is_reconstruction(self):
        p = small_model()
        counts, inputs, noise = small_batch()
        t = elbo_loss(p, counts, inputs, CONDS, 0.0, noise)
        assert t.loss.item() == pytest.approx(t.recon, rel=1e-14)
        t1 = elbo_loss(p, counts, inputs, CONDS, 1.0, noise)
        assert t1.loss.item() == pytest.approx(t1.recon + t1.kl_z + t1.kl_l, rel=1e-12)

    def test_recon_matches_scipy(self):
        p = small_model()
        counts, inputs, noise = small_batch()
        c = condition_vector(p, CONDS)
        out = decode(p, reparameterize(encode(p, inputs, c), noise), c)
        z = out.zinb()
        ref = -np.mean([scipy_zinb(counts[i], z.mu[i], z.theta[i], z.pi[i]).sum() for i in range(3)])
        t = elbo_loss(p, counts, inputs, CONDS, 0.0, noise)
        assert t.recon == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("scale", [1.0, 1e-3])
    def test_gradients(self, scale):
        p = small_model(init_scale=scale)
        counts, inputs, noise = small_batch()

        def loss():
            return elbo_loss(p, counts, inputs, CONDS, 1.0, noise).loss.item()

        grads = backward(elbo_loss(p, counts, inputs, CONDS, 1.0, noise).loss, p.store)
        arrays = {k: t.data for k, t in p.store.items()}
        res = check_gradients(loss, arrays, grads)
        assert res.ok(), res

    def test_nonfinite_loss_raises(self):
        p = small_model()
        counts, inputs, noise = small_batch()
        p.store["g"].data[:] = -1e6  # theta underflows to zero
        with pytest.raises(NumericalError, match="recon"), np.errstate(all="ignore"):
            elbo_loss(p, counts, inputs, CONDS, 1.0, noise)

    def test_needs_hidden_layer(self):
        with pytest.raises(ValidationError):
            init_cvae(CvaeArch(4, 2, 2, hidden=()), ConditionEncoder.from_conditions(CONDS), 0.0, 1.0)


def tiny_data(n=120, seed=3):
    d, _ = zinb_dataset(n, 20, 2, seed=seed, log_lib_mean=5.0)
    return d


TINY = dict(d_z=4, d_c=4, hidden=(8,), embed_dim=2, batch_size=32)


class TestTraining:
    def test_library_prior(self):
        d = tiny_data()
        mu, var = estimate_library_prior(d)
        logs = np.log(d.matrix.totals())
        assert mu == pytest.approx(logs.mean(), rel=1e-12)
        assert var == pytest.approx(logs.var(ddof=0), rel=1e-12)

    def test_loss_decreases_and_reproducible(self):
        d = tiny_data()
        cfg = CvaeConfig(epochs=30, seed=1, lr=1e-2, **TINY)
        a = train_cvae(d, cfg)
        b = train_cvae(d, cfg)
        assert a.history[-1] < a.history[0]
        assert a.history == b.history
        for k in a.params.store:
            np.testing.assert_array_equal(a.params.store[k].data, b.params.store[k].data)

    def test_validation_selection(self):
        from dataclasses import replace

        d = tiny_data()
        d = replace(d, split=tuple(assign_splits(d.n_cells, seed=0)))
        r = train_cvae(d, CvaeConfig(epochs=10, seed=0, lr=1e-2, **TINY))
        assert len(r.valid_history) == 10
        assert r.best_epoch == int(np.argmin(r.valid_history))
        assert r.manifest["n_valid"] == 12

    def test_divergence_carries_checkpoint(self, monkeypatch):
        import cellkit.cvae.train as tr

        real = tr.elbo_loss
        calls = {"n": 0}

        def flaky(*a, **kw):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NumericalError("non-finite ELBO: recon=nan")
            return real(*a, **kw)

        monkeypatch.setattr(tr, "elbo_loss", flaky)
        with pytest.raises(TrainingDivergedError) as exc:
            train_cvae(tiny_data(), CvaeConfig(epochs=5, seed=0, **TINY))
        assert exc.value.checkpoint is not None
        for t in exc.value.checkpoint.store.items():
            assert np.all(np.isfinite(t[1].data))

    def test_generate_and_round_trip(self, tmp_path):
        d = tiny_data()
        r = train_cvae(d, CvaeConfig(epochs=5, seed=0, **TINY))
        labels = d.annotations.conditions()[:7]
        g1 = generate(r.params, labels, seed=5)
        assert (g1.n_cells, g1.n_genes) == (7, 20)
        assert g1.vocabulary == d.matrix.vocabulary
        save_cvae(r.params, tmp_path)
        back = load_cvae(tmp_path)
        np.testing.assert_array_equal(generate(back, labels, seed=5).to_dense(), g1.to_dense())
        assert generate(back, labels, seed=6) != g1

    def test_generate_unknown_label(self):
        r = train_cvae(tiny_data(), CvaeConfig(epochs=1, seed=0, **TINY))
        with pytest.raises(UnknownConditionError):
            generate(r.params, [("nope", "human", "synthetic")], seed=0)

    def test_tampered_gene_list(self, tmp_path):
        r = train_cvae(tiny_data(), CvaeConfig(epochs=1, seed=0, **TINY))
        save_cvae(r.params, tmp_path)
        genes = (tmp_path / "model.genes").read_text().splitlines()
        (tmp_path / "model.genes").write_text("\n".join(reversed(genes)) + "\n")
        with pytest.raises(ValidationError, match="hash"):
            load_cvae(tmp_path)
