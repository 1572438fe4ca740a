import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedbbo.acquisition import (
    Utility,
    confidence_bound,
    ei_values,
    eta_default,
    expected_improvement,
    maximize_acquisition,
    mc_expected_utility,
)
from fedbbo.domain import Dataset, Domain
from fedbbo.gp import GPHyperparams, gp_fit
from fedbbo.rng import substream


class TestExpectedImprovement:
    def test_zero_sd_at_incumbent(self):
        assert ei_values(np.array([1.0]), np.array([0.0]), 1.0)[0] == 0.0

    def test_zero_sd_deterministic_improvement(self):
        assert ei_values(np.array([2.0]), np.array([0.0]), 1.0)[0] == pytest.approx(1.0)

    def test_standard_normal_closed_form(self):
        # mu = y*, sd = 1 -> EI = 1/sqrt(2 pi)
        val = ei_values(np.array([0.0]), np.array([1.0]), 0.0)[0]
        assert val == pytest.approx(1.0 / np.sqrt(2 * np.pi), abs=1e-9)

    def test_through_posterior(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([-1.0, 1.0])
        post = gp_fit(GPHyperparams(1.0, np.array([0.5]), 0.01), Dataset.from_arrays(X, y))
        val = expected_improvement(post, np.array([0.8]), incumbent=1.0)
        assert val >= 0

    @given(
        st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 3), st.floats(0.01, 3)
    )
    def test_monotone_in_mean_and_sd(self, mu, ystar, sd, bump):
        lo = ei_values(np.array([mu]), np.array([sd]), ystar)[0]
        hi = ei_values(np.array([mu + bump]), np.array([sd]), ystar)[0]
        assert hi >= lo - 1e-12
        if mu <= ystar:
            wll = ei_values(np.array([mu]), np.array([sd + bump]), ystar)[0]
            assert wll >= lo - 1e-12


class TestConfidenceBound:
    def _post(self):
        X = np.array([[0.0], [1.0]])
        y = np.array([-1.0, 1.0])
        return gp_fit(GPHyperparams(1.0, np.array([0.4]), 0.01), Dataset.from_arrays(X, y))

    def test_arithmetic(self):
        post = self._post()
        x = np.array([0.5])
        mean, sd = post.predict(x[None, :])
        lcb = confidence_bound(post, x, eta=1.0, side="lower")
        assert lcb == pytest.approx(mean[0] - sd[0])
        assert confidence_bound(post, x, eta=0.0, side="lower") == pytest.approx(mean[0])

    def test_lower_below_upper(self):
        post = self._post()
        for xv in (0.2, 0.5, 0.9):
            x = np.array([xv])
            lo = confidence_bound(post, x, eta=0.7, side="lower")
            hi = confidence_bound(post, x, eta=0.7, side="upper")
            assert lo <= hi


class TestMaximize:
    def test_finds_analytic_optimum(self):
        c = np.array([0.3, 0.7])
        dom = Domain.unit(2)
        res = maximize_acquisition(
            lambda X: -np.sum((X - c) ** 2, axis=1), dom, 2048, substream(0, "opt")
        )
        assert np.linalg.norm(res.design - c) < 0.05
        assert dom.contains(res.design)

    def test_constant_score(self):
        dom = Domain.unit(2)
        res = maximize_acquisition(lambda X: np.full(X.shape[0], 3.5), dom, 32, substream(1, "c"))
        assert dom.contains(res.design)
        assert res.value == 3.5

    def test_budget_one_returns_the_sampled_candidate(self):
        dom = Domain.unit(2)
        rng = substream(2, "b1")
        expected = Domain.unit(2).sample(substream(2, "b1"), 1)[0]
        res = maximize_acquisition(
            lambda X: np.zeros(X.shape[0]), dom, 1, rng, refine_sweeps=0
        )
        np.testing.assert_array_equal(res.design, expected)
        assert res.evals == 1

    def test_value_dominates_every_candidate(self):
        dom = Domain.unit(3)

        def score(X):
            return np.sin(5 * X[:, 0]) + X[:, 1] - X[:, 2] ** 2

        rng = substream(3, "dom")
        res = maximize_acquisition(score, dom, 128, rng)
        check = dom.sample(substream(3, "dom"), 128)
        assert res.value >= score(check).max() - 1e-12

    def test_deterministic(self):
        dom = Domain.unit(2)

        def score(X):
            return -np.sum(X**2, axis=1)

        a = maximize_acquisition(score, dom, 64, substream(4, "d"))
        b = maximize_acquisition(score, dom, 64, substream(4, "d"))
        np.testing.assert_array_equal(a.design, b.design)
        assert a.value == b.value

    def test_budget_zero_rejected(self):
        with pytest.raises(ValueError):
            maximize_acquisition(lambda X: X[:, 0], Domain.unit(1), 0, substream(0, "z"))


class TestMcExpectedUtility:
    def test_single_deterministic_sample(self):
        samples = np.array([[1.0, 3.0, 0.5]])
        out = mc_expected_utility(samples, Utility("improvement", incumbent=1.0))
        np.testing.assert_allclose(out, [0.0, 2.0, 0.0])

    def test_all_samples_below_incumbent(self):
        samples = np.full((100, 4), -1.0)
        out = mc_expected_utility(samples, Utility("improvement", incumbent=0.0))
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_matches_closed_form_for_gaussian_draws(self):
        mu, sd, ystar = 0.3, 0.8, 0.5
        rng = substream(5, "mc")
        draws = rng.normal(mu, sd, size=(10_000, 1))
        mc = mc_expected_utility(draws, Utility("improvement", incumbent=ystar))[0]
        exact = ei_values(np.array([mu]), np.array([sd]), ystar)[0]
        # per-draw utility sd is bounded by the draw sd
        se = sd / np.sqrt(draws.shape[0])
        assert abs(mc - exact) < 3 * se

    def test_convergence_rate_halves_with_quadruple_samples(self):
        mu, sd, ystar = 0.0, 1.0, 0.2
        exact = ei_values(np.array([mu]), np.array([sd]), ystar)[0]

        def err(n, reps=40):
            errors = []
            for i in range(reps):
                draws = substream(6, "rate", n, i).normal(mu, sd, size=(n, 1))
                mc = mc_expected_utility(draws, Utility("improvement", incumbent=ystar))[0]
                errors.append(abs(mc - exact))
            return np.mean(errors)

        e1, e4 = err(500), err(2000)
        assert e4 < 0.75 * e1  # ~0.5 expected, with noise slack

    def test_thompson_mean(self):
        samples = np.array([[1.0, 2.0], [3.0, 0.0]])
        np.testing.assert_allclose(
            mc_expected_utility(samples, Utility("thompson")), [2.0, 1.0]
        )

    def test_requires_samples_and_per_draw_form(self):
        with pytest.raises(ValueError):
            mc_expected_utility(np.empty((0, 3)), Utility("thompson"))
        with pytest.raises(ValueError):
            mc_expected_utility(np.ones((2, 2)), Utility("ucb", eta=1.0))


class TestUtilityAndEta:
    def test_params_required(self):
        with pytest.raises(ValueError):
            Utility("improvement")
        with pytest.raises(ValueError):
            Utility("ucb")
        Utility("thompson")

    def test_eta_schedule_grows_slowly(self):
        vals = [eta_default(t, 2) for t in (1, 5, 25)]
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] < 6.0
        with pytest.raises(ValueError):
            eta_default(0, 2)
