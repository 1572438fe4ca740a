import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedbbo.acquisition import Utility
from fedbbo.consensus import (
    ConsensusMatrix,
    WSchedule,
    candidate_step,
    consensus_mix,
    consensus_round,
    identity_consensus,
    uniform_consensus,
    w_update_linear,
)
from fedbbo.domain import Dataset, Domain
from fedbbo.gp import GPHyperparams, gp_fit
from fedbbo.rng import substream


class TestMatrix:
    def test_validation(self):
        ConsensusMatrix(np.array([[0.5, 0.5], [0.5, 0.5]])).validate()
        with pytest.raises(ValueError):
            ConsensusMatrix(np.array([[0.9, 0.2], [0.1, 0.8]])).validate()  # asymmetric
        with pytest.raises(ValueError):
            ConsensusMatrix(np.array([[1.5, -0.5], [-0.5, 1.5]])).validate()  # out of range
        with pytest.raises(ValueError):
            ConsensusMatrix(np.array([[0.4, 0.4], [0.4, 0.4]])).validate()  # sums

    def test_mix_identity_is_noop(self):
        dom = Domain.unit(2)
        X = np.array([[0.1, 0.2], [0.9, 0.8], [0.4, 0.6]])
        out = consensus_mix(identity_consensus(3), X, dom)
        np.testing.assert_array_equal(out, X)

    def test_mix_uniform_two_agents(self):
        dom = Domain(np.array([0.0, 0.0]), np.array([2.0, 4.0]))
        X = np.array([[0.0, 0.0], [1.0, 2.0]])
        out = consensus_mix(uniform_consensus(2), X, dom)
        np.testing.assert_allclose(out, [[0.5, 1.0], [0.5, 1.0]])

    def test_mix_identical_candidates_fixed_point(self):
        dom = Domain.unit(2)
        xbar = np.array([0.3, 0.7])
        X = np.tile(xbar, (4, 1))
        W = w_update_linear(uniform_consensus(4), horizon=10)
        out = consensus_mix(W, X, dom)
        np.testing.assert_allclose(out, X, atol=1e-12)

    def test_mix_rejects_bad_matrix(self):
        with pytest.raises(ValueError):
            consensus_mix(
                ConsensusMatrix(np.array([[2.0, -1.0], [-1.0, 2.0]])),
                np.zeros((2, 2)),
                Domain.unit(2),
            )

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 10_000), st.integers(2, 6))
    def test_convex_hull_containment(self, seed, k):
        rng = np.random.default_rng(seed)
        dom = Domain.unit(3)
        X = rng.uniform(0, 1, size=(k, 3))
        W = uniform_consensus(k)
        for _ in range(rng.integers(0, 5)):
            W = w_update_linear(W, horizon=7)
        out = consensus_mix(W, X, dom)
        lo, hi = X.min(axis=0), X.max(axis=0)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


class TestLinearDecay:
    def test_two_agent_arithmetic(self):
        W = ConsensusMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
        out = w_update_linear(W, horizon=2)
        np.testing.assert_allclose(out.weights, [[0.75, 0.25], [0.25, 0.75]])

    def test_uniform_start_reaches_identity(self):
        for k, T in ((2, 2), (3, 7), (5, 12)):
            W = uniform_consensus(k)
            for _ in range(T):
                W = w_update_linear(W, horizon=T)
            np.testing.assert_allclose(W.weights, np.eye(k), atol=1e-12)

    def test_identity_absorbing(self):
        W = identity_consensus(3)
        out = w_update_linear(W, horizon=4)
        np.testing.assert_array_equal(out.weights, np.eye(3))

    def test_double_stochasticity_preserved_while_unclamped(self):
        W = uniform_consensus(4)
        for _ in range(9):
            W = w_update_linear(W, horizon=9)
            assert np.all(np.abs(W.weights.sum(axis=0) - 1) < 1e-12)
            assert np.all(np.abs(W.weights.sum(axis=1) - 1) < 1e-12)
            np.testing.assert_allclose(W.weights, W.weights.T, atol=1e-15)

    def test_schedule_kinds(self):
        sched = WSchedule(kind="constant", horizon=5)
        W = sched.start(3)
        W2 = sched.step(W)
        np.testing.assert_array_equal(W2.weights, W.weights)
        assert W2.time == W.time + 1
        custom = WSchedule(kind="custom", custom_step=lambda w: identity_consensus(w.n_agents))
        assert np.array_equal(custom.step(W).weights, np.eye(3))
        with pytest.raises(ValueError):
            WSchedule(kind="custom")


def _fit_agent(seed, n=4):
    rng = substream(seed, "agent")
    X = rng.uniform(0, 1, size=(n, 2))
    y = -np.sum((X - 0.5) ** 2, axis=1) + 0.01 * rng.standard_normal(n)
    return gp_fit(GPHyperparams(1.0, np.array([0.3, 0.3]), 1e-4), Dataset.from_arrays(X, y))


class TestRound:
    def test_candidate_step_in_domain(self):
        dom = Domain.unit(2)
        post = _fit_agent(0)
        res = candidate_step(post, Utility("improvement", incumbent=0.0), dom, 64, substream(0, "c"))
        assert dom.contains(res.design)

    def test_round_mixes_and_advances(self):
        dom = Domain.unit(2)
        posts = [_fit_agent(i) for i in range(3)]
        utils = [Utility("improvement", incumbent=0.0)] * 3
        sched = WSchedule(horizon=5)
        W = sched.start(3)
        rngs = [substream(9, k, "acq") for k in range(3)]
        mixed, cands, W2, fallbacks = consensus_round(posts, utils, dom, 64, W, sched, rngs)
        assert mixed.shape == (3, 2)
        assert fallbacks == []
        assert W2.time == 1
        lo, hi = cands.min(axis=0), cands.max(axis=0)
        assert np.all(mixed >= lo - 1e-12) and np.all(mixed <= hi + 1e-12)

    def test_failed_fit_falls_back_to_random(self):
        dom = Domain.unit(2)
        posts = [_fit_agent(0), None]
        utils = [Utility("improvement", incumbent=0.0)] * 2
        sched = WSchedule(horizon=3)
        rngs = [substream(1, k, "acq") for k in range(2)]
        mixed, cands, _, fallbacks = consensus_round(posts, utils, dom, 32, sched.start(2), sched, rngs)
        assert fallbacks == [1]
        expected = Domain.unit(2).sample(substream(1, 1, "acq"), 1)[0]
        np.testing.assert_array_equal(cands[1], expected)

    def test_share_noise_applied(self):
        dom = Domain.unit(2)
        posts = [_fit_agent(i) for i in range(2)]
        utils = [Utility("improvement", incumbent=0.0)] * 2
        sched = WSchedule(horizon=3)

        def run(noise):
            rngs = [substream(2, k, "acq") for k in range(2)]
            nrngs = [substream(2, k, "noise") for k in range(2)]
            return consensus_round(
                posts, utils, dom, 32, sched.start(2), sched, rngs,
                share_noise_sd=noise, noise_rngs=nrngs,
            )[1]

        clean = run(0.0)
        noisy = run(0.5)
        assert not np.allclose(clean, noisy)
