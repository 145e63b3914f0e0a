import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

import oracle
from gpcm_recovery.errors import DegenerateItemError, InvalidInputError
from gpcm_recovery.mmle import (
    EmConfig,
    QuadratureGrid,
    _item_objective,
    e_step,
    eap_abilities,
    fit_mmle,
    m_step_item,
)
from gpcm_recovery.model import ItemBank, ItemParams, ResponseMatrix, gpcm_category_probs
from gpcm_recovery.simulation import TABLE1, generate_responses

GRID = QuadratureGrid.normal()
CFG = EmConfig()


def simulate(bank, n, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n)
    return theta, generate_responses(bank, theta, rng)


class TestGrid:
    def test_default_grid(self):
        assert GRID.nodes.size == 61
        assert GRID.nodes[0] == -5 and GRID.nodes[-1] == 5
        assert abs(GRID.weights.sum() - 1) <= 1e-12
        assert GRID.weights @ GRID.nodes == pytest.approx(0, abs=1e-15)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            QuadratureGrid(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(InvalidInputError):
            QuadratureGrid(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
        with pytest.raises(InvalidInputError):
            EmConfig(outer_tol=0)


class TestEStep:
    def test_zero_items_returns_prior(self):
        data = ResponseMatrix(np.zeros((4, 0), dtype=int), ())
        es = e_step(data, ItemBank([]), GRID)
        np.testing.assert_allclose(es.posterior, np.tile(GRID.weights, (4, 1)), atol=1e-15)

    def test_symmetric_two_node(self):
        grid = QuadratureGrid(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        data = ResponseMatrix(np.array([[1]]), (3,))
        es = e_step(data, ItemBank([ItemParams(1.2, (-0.5, 0.5))]), grid)
        np.testing.assert_allclose(es.posterior, [[0.5, 0.5]], atol=1e-15)

    def test_toy_matches_bayes_rule(self):
        items = [oracle.TABLE1[0], oracle.TABLE1[3]]
        u = [[0, 4], [2, 2], [4, 1]]
        nodes = [-2.0, -0.5, 0.5, 2.0]
        prior = [0.1, 0.4, 0.4, 0.1]
        grid = QuadratureGrid(np.array(nodes), np.array(prior))
        es = e_step(ResponseMatrix(np.array(u), (5, 5)), ItemBank([ItemParams(*it) for it in items]), grid)
        for i, row in enumerate(u):
            joint = []
            for q, t in enumerate(nodes):
                like = 1.0
                for (a, s), k in zip(items, row):
                    like *= oracle.gpcm_probs(t, a, s)[k]
                joint.append(prior[q] * like)
            z = sum(joint)
            np.testing.assert_allclose(es.posterior[i], [v / z for v in joint], rtol=1e-12)
            assert abs(es.posterior[i].sum() - 1) <= 1e-12
        total = sum(c.sum(axis=1) for c in es.counts[:1])
        assert total.sum() == pytest.approx(3.0, abs=1e-12)
        for c in es.counts:
            assert c.sum() == pytest.approx(3.0, abs=1e-12)


class TestMStep:
    def test_fixed_point_when_counts_proportional(self):
        start = TABLE1[0]
        n = 1000 * GRID.weights
        counts = n[:, None] * np.array([gpcm_category_probs(t, start) for t in GRID.nodes])
        out = m_step_item(counts, GRID, start, CFG)
        np.testing.assert_allclose(out.unconstrained(), start.unconstrained(), atol=1e-10)

    def test_recovers_item1_from_its_probabilities(self):
        n = 2000 * GRID.weights
        counts = n[:, None] * np.array([gpcm_category_probs(t, TABLE1[0]) for t in GRID.nodes])
        out = m_step_item(counts, GRID, ItemParams(1.0, (0.0, 0.0, 0.0, 0.0)), CFG)
        np.testing.assert_allclose(out.unconstrained(), TABLE1[0].unconstrained(), atol=1e-4)

    def test_two_category_matches_nested_search(self):
        n = 500 * GRID.weights
        y = 0.5 + 0.3 * np.tanh(GRID.nodes - 0.4)
        counts = np.column_stack([n * (1 - y), n * y])

        def objective(log_a, step):
            a = math.exp(log_a)
            total = 0.0
            for q, t in enumerate(GRID.nodes):
                p1 = 1.0 / (1.0 + math.exp(-a * (t - step)))
                total += counts[q, 0] * math.log(1 - p1) + counts[q, 1] * math.log(p1)
            return total

        def profile(step):
            r = minimize_scalar(lambda la: -objective(la, step), bounds=(-3, 3), method="bounded",
                                options={"xatol": 1e-10})
            return r.fun

        best = minimize_scalar(profile, bounds=(-2, 2), method="bounded", options={"xatol": 1e-9})
        out = m_step_item(counts, GRID, ItemParams(1.0, (0.0,)), CFG)
        assert out.steps[0] == pytest.approx(best.x, abs=1e-4)

    def test_never_decreases_objective(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            counts = rng.gamma(1.0, 5.0, size=(GRID.nodes.size, 4))
            start = ItemParams(float(np.exp(rng.normal(0, 0.5))), tuple(rng.normal(0, 1, 3)))
            out = m_step_item(counts, GRID, start, CFG)
            before = _item_objective(start.unconstrained(), counts, GRID.nodes, derivs=False)
            after = _item_objective(out.unconstrained(), counts, GRID.nodes, derivs=False)
            assert after >= before - 1e-10

    def test_rejects_negative_counts(self):
        with pytest.raises(InvalidInputError):
            m_step_item(-np.ones((61, 2)), GRID, ItemParams(1.0, (0.0,)), CFG)


class TestEap:
    def test_zero_items(self):
        data = ResponseMatrix(np.zeros((3, 0), dtype=int), ())
        mean, sd = eap_abilities(data, ItemBank([]), GRID)
        np.testing.assert_allclose(mean, 0.0, atol=1e-15)
        expected_sd = math.sqrt(GRID.weights @ GRID.nodes**2)
        np.testing.assert_allclose(sd, expected_sd, rtol=1e-12)
        assert expected_sd == pytest.approx(1.0, abs=1e-3)

    def test_symmetric_response(self):
        bank = ItemBank([ItemParams(1.3, (-1.0, 1.0)), ItemParams(0.7, (-0.4, 0.4))])
        mean, _ = eap_abilities(ResponseMatrix(np.array([[1, 1]]), (3, 3)), bank, GRID)
        assert mean[0] == pytest.approx(0.0, abs=1e-14)

    def test_matches_fine_grid_integration(self):
        items = oracle.TABLE1[:6]
        u = [[0, 1, 0, 2, 1, 0], [4, 4, 3, 4, 4, 4], [2, 2, 2, 2, 2, 2], [1, 3, 0, 4, 2, 2], [3, 0, 4, 1, 2, 3]]
        mean, sd = eap_abilities(
            ResponseMatrix(np.array(u), (5,) * 6), ItemBank([ItemParams(*it) for it in items]), GRID
        )
        fine = [-5 + 10 * q / 600 for q in range(601)]
        for i, row in enumerate(u):
            num = den = 0.0
            for t in fine:
                w = math.exp(-0.5 * t * t)
                for (a, s), k in zip(items, row):
                    w *= oracle.gpcm_probs(t, a, s)[k]
                num += t * w
                den += w
            assert mean[i] == pytest.approx(num / den, abs=1e-3)
            assert abs(mean[i]) <= 5


class TestFit:
    def test_single_binary_item(self):
        _, data = simulate(ItemBank([ItemParams(1.0, (0.0,))]), 5000, 11)
        fit = fit_mmle(data)
        assert fit.bank_hat[0].discrimination == pytest.approx(1.0, abs=0.1)
        assert fit.bank_hat[0].steps[0] == pytest.approx(0.0, abs=0.1)

    def test_degenerate_item_named(self):
        u = np.column_stack([np.zeros(50, dtype=int), np.arange(50) % 3])
        with pytest.raises(DegenerateItemError) as err:
            fit_mmle(ResponseMatrix(u, (3, 3)))
        assert err.value.item == 1

    def test_unobserved_category_collapses(self):
        _, data = simulate(TABLE1[:4], 800, 5)
        u = data.responses.copy()
        u[u[:, 2] == 1, 2] = 0  # category 1 of item 3 never observed
        with pytest.warns(UserWarning, match="item 3"):
            fit = fit_mmle(ResponseMatrix(u, data.n_categories))
        assert fit.collapse_maps == {2: (0, 0, 1, 2, 3)}
        assert fit.bank_hat[2].n_categories == 4

    def test_monotone_and_converged(self):
        _, data = simulate(TABLE1[:10], 1000, 12)
        fit = fit_mmle(data)
        assert fit.converged
        assert np.all(np.diff(fit.loglik_trace) >= -1e-8)

    def test_nonconvergence_is_reported_not_raised(self):
        _, data = simulate(TABLE1[:5], 500, 13)
        fit = fit_mmle(data, config=EmConfig(max_cycles=2))
        assert not fit.converged and fit.n_cycles == 2

    def test_large_sample_start_at_truth_barely_moves(self):
        _, data = simulate(TABLE1[:5], 100_000, 14)
        fit = fit_mmle(data, start=TABLE1[:5])
        for est, true in zip(fit.bank_hat, TABLE1[:5]):
            assert abs(est.discrimination - true.discrimination) < 0.05
            assert np.max(np.abs(np.subtract(est.steps, true.steps))) < 0.05

    def test_consistency_20000(self):
        _, data = simulate(TABLE1[:5], 20_000, 15)
        fit = fit_mmle(data)
        for est, true in zip(fit.bank_hat, TABLE1[:5]):
            assert abs(est.discrimination - true.discrimination) < 0.05
            assert np.max(np.abs(np.subtract(est.steps, true.steps))) < 0.05

    def test_eap_scale(self):
        _, data = simulate(TABLE1[:10], 5000, 16)
        fit = fit_mmle(data)
        assert abs(fit.theta_hat.mean()) < 0.1
        assert abs(fit.theta_hat.std() - 0.9) < 0.1
        assert fit.theta_hat.std() < 1

    def test_person_permutation_bit_identical(self):
        _, data = simulate(TABLE1[:5], 600, 17)
        perm = np.random.default_rng(0).permutation(600)
        a = fit_mmle(data)
        b = fit_mmle(ResponseMatrix(data.responses[perm], data.n_categories))
        assert a.bank_hat == b.bank_hat
        np.testing.assert_array_equal(a.theta_hat[perm], b.theta_hat)

    def test_item_permutation(self):
        _, data = simulate(TABLE1[:5], 600, 18)
        perm = np.array([3, 0, 4, 2, 1])
        a = fit_mmle(data)
        b = fit_mmle(ResponseMatrix(data.responses[:, perm], tuple(np.array(data.n_categories)[perm])))
        for j_new, j_old in enumerate(perm):
            np.testing.assert_allclose(
                b.bank_hat[j_new].unconstrained(), a.bank_hat[j_old].unconstrained(), atol=1e-8
            )
