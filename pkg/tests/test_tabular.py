"""Exact-oracle tests: soft evaluation, advantages, bounds, lemmas, Taylor."""

import numpy as np
import pytest

from gossipsac import tabular
from gossipsac.envs import TabularSoftMdp, make_tabular, random_policy


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def value_iteration_eta(mdp, pi, tol=1e-13):
    """Fixed-point iteration on V = r_pi + alpha h_pi + gamma P_pi V."""
    r_pi = (pi * mdp.rewards).sum(axis=1)
    h_pi = tabular.entropy_rows(pi)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    v = np.zeros(mdp.n_states)
    for _ in range(100_000):
        v_new = r_pi + mdp.alpha * h_pi + mdp.gamma * (p_pi @ v)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new
        v = v_new
    raise RuntimeError("value iteration did not converge")


def brute_force_advantage(mdp, pi, pi_ref):
    """Loop-ordered double sum for the normalized policy advantage."""
    ev = tabular.soft_policy_evaluation(mdp, pi)
    d_hat = ev.d_hat
    total = 0.0
    for a in range(mdp.n_actions):          # deliberately action-major
        for s in range(mdp.n_states):
            total += d_hat[s] * pi_ref[s, a] * ev.advantage[s, a]
    for s in range(mdp.n_states):
        h = 0.0
        for a in range(mdp.n_actions):
            if pi_ref[s, a] > 0:
                h -= pi_ref[s, a] * np.log(pi_ref[s, a])
        total += d_hat[s] * mdp.alpha * h
    return total


def monte_carlo_eta(mdp, pi, total_steps, rng):
    """Truncated rollout estimate of the soft return; returns (mean, se)."""
    horizon = int(np.ceil(np.log(1e-9) / np.log(mdp.gamma)))
    n_episodes = max(total_steps // horizon, 2)
    h_pi = tabular.entropy_rows(pi)
    s = rng.choice(mdp.n_states, size=n_episodes, p=mdp.rho0)
    returns = np.zeros(n_episodes)
    discount = 1.0
    for _ in range(horizon):
        u = rng.random(n_episodes)
        a = (np.cumsum(pi[s], axis=1) < u[:, None]).sum(axis=1)
        returns += discount * (mdp.rewards[s, a] + mdp.alpha * h_pi[s])
        u2 = rng.random(n_episodes)
        s = (np.cumsum(mdp.transitions[s, a], axis=1) < u2[:, None]).sum(axis=1)
        discount *= mdp.gamma
    return returns.mean(), returns.std(ddof=1) / np.sqrt(n_episodes)


# ---------------------------------------------------------------------------
# soft policy evaluation
# ---------------------------------------------------------------------------

class TestSoftEvaluation:
    def test_single_state_closed_form(self):
        # 1 state, 2 actions, uniform policy, R=1, gamma=0.5, alpha=1:
        # V = (1 + log 2) / (1 - 0.5)
        mdp = TabularSoftMdp(
            transitions=np.ones((1, 2, 1)),
            rewards=np.ones((1, 2)),
            gamma=0.5, alpha=1.0, rho0=np.array([1.0]))
        ev = tabular.soft_policy_evaluation(mdp, np.array([[0.5, 0.5]]))
        assert ev.v[0] == pytest.approx((1 + np.log(2)) / 0.5, abs=1e-12)

    def test_alpha_zero_matches_value_iteration(self):
        for seed in range(5):
            mdp = make_tabular(seed, 4, 3, gamma=0.9, alpha=0.0)
            pi = random_policy(np.random.default_rng(seed + 100), 4, 3)
            ev = tabular.soft_policy_evaluation(mdp, pi)
            assert np.allclose(ev.v, value_iteration_eta(mdp, pi), atol=1e-10)

    @pytest.mark.parametrize("seed", range(10))
    def test_fixed_point_residual(self, seed):
        mdp = make_tabular(seed, 5, 4, gamma=0.95, alpha=0.3)
        pi = random_policy(np.random.default_rng(seed), 5, 4)
        ev = tabular.soft_policy_evaluation(mdp, pi)
        r_pi = (pi * mdp.rewards).sum(axis=1)
        h_pi = tabular.entropy_rows(pi)
        p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
        residual = ev.v - (r_pi + mdp.alpha * h_pi + mdp.gamma * (p_pi @ ev.v))
        assert np.max(np.abs(residual)) < 1e-10

    def test_bellman_consistency_v_from_q(self):
        mdp = make_tabular(3, 4, 3)
        pi = random_policy(np.random.default_rng(3), 4, 3)
        ev = tabular.soft_policy_evaluation(mdp, pi)
        v_from_q = (pi * ev.q).sum(axis=1) + mdp.alpha * tabular.entropy_rows(pi)
        assert np.max(np.abs(v_from_q - ev.v)) < 1e-10

    def test_visitation_mass(self):
        mdp = make_tabular(7, 5, 3, gamma=0.8)
        pi = random_policy(np.random.default_rng(7), 5, 3)
        ev = tabular.soft_policy_evaluation(mdp, pi)
        assert np.all(ev.d_pi >= 0)
        assert ev.d_pi.sum() == pytest.approx(1.0 / (1.0 - mdp.gamma), rel=1e-12)

    def test_eta_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            mdp = make_tabular(seed, 4, 3, gamma=0.9, alpha=0.2)
            pi = random_policy(np.random.default_rng(seed + 50), 4, 3)
            eta = tabular.soft_policy_evaluation(mdp, pi).eta
            mc, se = monte_carlo_eta(mdp, pi, 1_000_000, rng)
            assert abs(mc - eta) <= 3 * se


class TestExactAdvantage:
    def test_identical_policies_zero(self):
        mdp = make_tabular(1, 4, 3, alpha=0.7)
        pi = random_policy(np.random.default_rng(1), 4, 3)
        assert tabular.exact_policy_advantage(mdp, pi, pi) == pytest.approx(0.0, abs=1e-12)

    def test_greedy_advantage_nonnegative(self):
        # alpha = 0, 2 states: enumerate all four deterministic policies
        mdp = make_tabular(9, 2, 2, gamma=0.9, alpha=0.0)
        for i in range(2):
            for j in range(2):
                pi = np.zeros((2, 2))
                pi[0, i] = pi[1, j] = 1.0
                ev = tabular.soft_policy_evaluation(mdp, pi)
                greedy = np.zeros((2, 2))
                greedy[np.arange(2), np.argmax(ev.q, axis=1)] = 1.0
                assert tabular.exact_policy_advantage(mdp, pi, greedy) >= -1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force_double_sum(self, seed):
        mdp = make_tabular(seed, 4, 3, alpha=0.25)
        rng = np.random.default_rng(seed + 7)
        pi, pi_ref = random_policy(rng, 4, 3), random_policy(rng, 4, 3)
        got = tabular.exact_policy_advantage(mdp, pi, pi_ref)
        assert got == pytest.approx(brute_force_advantage(mdp, pi, pi_ref), abs=1e-12)


class TestMixAndJs:
    def test_mix_endpoints_and_midpoint(self):
        pi = np.array([[1.0, 0.0]])
        pj = np.array([[0.0, 1.0]])
        assert np.array_equal(tabular.mix_distributions(pi, pj, 0.0), pi)
        assert np.array_equal(tabular.mix_distributions(pi, pj, 1.0), pj)
        assert np.allclose(tabular.mix_distributions(pi, pj, 0.5), [[0.5, 0.5]])

    def test_mix_rows_stay_on_simplex(self):
        rng = np.random.default_rng(2)
        p, q = random_policy(rng, 5, 4), random_policy(rng, 5, 4)
        for beta in rng.random(10):
            mixed = tabular.mix_distributions(p, q, float(beta))
            assert mixed.sum(axis=1) == pytest.approx(np.ones(5), abs=1e-12)
            assert np.min(mixed) >= 0

    def test_js_collapses_at_beta_endpoints(self):
        rng = np.random.default_rng(3)
        p, q = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
        assert tabular.js_beta(p, q, 0.0) == 0.0
        assert tabular.js_beta(p, q, 1.0) == 0.0

    def test_js_zero_for_equal_distributions(self):
        p = np.random.default_rng(4).dirichlet(np.ones(5))
        for beta in (0.0, 0.3, 0.5, 0.9, 1.0):
            assert tabular.js_beta(p, p, beta) == pytest.approx(0.0, abs=1e-15)

    def test_js_disjoint_two_point(self):
        got = tabular.js_beta(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5)
        assert got == pytest.approx(np.log(2), abs=1e-12)

    def test_js_nonnegative_random(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p, q = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
            assert tabular.js_beta(p, q, float(rng.random())) >= 0.0


class TestTheorem1:
    def test_beta_zero_equality(self):
        mdp = make_tabular(11, 3, 3)
        rng = np.random.default_rng(11)
        pi, pi_ref = random_policy(rng, 3, 3), random_policy(rng, 3, 3)
        res = tabular.theorem1_check(mdp, pi, pi_ref, 0.0)
        assert res.lhs == pytest.approx(0.0, abs=1e-12)
        assert res.rhs == pytest.approx(0.0, abs=1e-12)
        assert res.holds

    def test_identical_policies_equality(self):
        mdp = make_tabular(12, 3, 2, alpha=0.5)
        pi = random_policy(np.random.default_rng(12), 3, 2)
        for beta in (0.1, 0.5, 1.0):
            res = tabular.theorem1_check(mdp, pi, pi, beta)
            assert res.epsilon == pytest.approx(0.0, abs=1e-10)
            assert res.lhs == pytest.approx(0.0, abs=1e-9)
            assert res.holds

    def test_random_sweep_holds(self):
        rng = np.random.default_rng(100)
        n = 0
        for alpha in (0.0, 0.1, 1.0):
            for gamma in (0.5, 0.9, 0.99):
                for _ in range(12):
                    seed = int(rng.integers(1 << 31))
                    mdp = make_tabular(seed, 4, 3, gamma=gamma, alpha=alpha)
                    pi = random_policy(rng, 4, 3)
                    pi_ref = random_policy(rng, 4, 3)
                    for beta in np.linspace(0.0, 1.0, 6):
                        res = tabular.theorem1_check(mdp, pi, pi_ref, float(beta))
                        assert res.holds, (seed, alpha, gamma, beta)
                        n += 1
        assert n == 3 * 3 * 12 * 6


class TestCorollary1:
    def test_beta_zero_equality_included(self):
        mdp = make_tabular(21, 3, 2)
        rng = np.random.default_rng(21)
        pi, pi_ref = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
        res = tabular.corollary1_check(mdp, pi, pi_ref, betas=np.array([0.0]))
        assert res.bound_holds and res.positivity_sound

    def test_random_sweep(self):
        rng = np.random.default_rng(200)
        for _ in range(30):
            seed = int(rng.integers(1 << 31))
            mdp = make_tabular(seed, 4, 3,
                               gamma=float(rng.choice([0.5, 0.9])),
                               alpha=float(rng.choice([0.0, 0.1, 1.0])))
            pi = random_policy(rng, 4, 3)
            pi_ref = random_policy(rng, 4, 3)
            res = tabular.corollary1_check(mdp, pi, pi_ref,
                                           betas=np.linspace(0.01, 1.0, 25))
            assert res.bound_holds and res.positivity_sound, seed


class TestLemmas:
    def test_uniform_two_action_expected_advantage(self):
        # uniform pi over 2 actions, alpha=1: E_pi[A] = -log 2 per state
        mdp = make_tabular(31, 3, 2, alpha=1.0)
        pi = np.full((3, 2), 0.5)
        ev = tabular.soft_policy_evaluation(mdp, pi)
        got = (pi * ev.advantage).sum(axis=1)
        assert got == pytest.approx(-np.log(2) * np.ones(3), abs=1e-10)

    def test_entropy_decomposition_beta_zero(self):
        mdp = make_tabular(32, 3, 3)
        rng = np.random.default_rng(32)
        pi, pi_ref = random_policy(rng, 3, 3), random_policy(rng, 3, 3)
        rep = tabular.lemma_checks(mdp, pi, pi_ref, 0.0)
        assert rep.entropy_decomposition_err < 1e-15

    @pytest.mark.parametrize("seed", range(15))
    def test_all_identities_random(self, seed):
        rng = np.random.default_rng(seed)
        mdp = make_tabular(seed, 4, 3, gamma=float(rng.choice([0.5, 0.9, 0.99])),
                           alpha=float(rng.choice([0.1, 1.0])))
        pi, pi_ref = random_policy(rng, 4, 3), random_policy(rng, 4, 3)
        rep = tabular.lemma_checks(mdp, pi, pi_ref, float(rng.random()))
        assert rep.passes(), rep

    def test_soft_improvement_on_random_mdps(self):
        rng = np.random.default_rng(77)
        worst = np.inf
        for _ in range(100):
            seed = int(rng.integers(1 << 31))
            mdp = make_tabular(seed, 4, 3, gamma=0.9,
                               alpha=float(rng.choice([0.1, 0.5, 1.0])))
            pi = random_policy(rng, 4, 3)
            rep = tabular.lemma_checks(mdp, pi, pi, 0.5)
            worst = min(worst, rep.improvement_min_gap)
        assert worst >= -1e-9


class TestTaylor:
    def test_zero_direction(self):
        theta = np.random.default_rng(41).normal(size=(3, 3))
        rep = tabular.kl_and_fim_taylor_check(theta, np.zeros((3, 3)))
        assert all(v == 0.0 for v in rep.residuals.values())

    def test_two_point_closed_form(self):
        # single state, theta=(0,0), delta=(1,-1): KL(zeta) = log cosh(zeta),
        # quadratic term = zeta^2 / 2
        theta = np.zeros((1, 2))
        delta = np.array([[1.0, -1.0]])
        for zeta in (1e-1, 1e-2, 1e-3):
            kl = tabular.kl_rows(theta, theta + zeta * delta)[0]
            assert kl == pytest.approx(np.log(np.cosh(zeta)), abs=1e-14)
            q = tabular.per_state_quad_forms(theta, delta)[0]
            assert q == pytest.approx(1.0, abs=1e-14)
            assert abs(kl - 0.5 * zeta**2 * q) < zeta**3

    @pytest.mark.parametrize("seed", range(10))
    def test_ratio_and_score_identity(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=(4, 3))
        delta = rng.normal(size=(4, 3))
        rep = tabular.kl_and_fim_taylor_check(theta, delta,
                                              zetas=(1e-1, 1e-2, 1e-3))
        assert rep.passes(), rep

    def test_exact_fim_blocks_psd(self):
        rng = np.random.default_rng(55)
        theta = rng.normal(size=(3, 4))
        f = tabular.exact_fim_softmax(theta, np.full(3, 1 / 3))
        assert np.max(np.abs(f - f.T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(f)) > -1e-12
