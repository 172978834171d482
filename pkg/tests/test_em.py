"""EM engine: responsibilities, coordinate updates, full fits."""
import numpy as np
import pytest

import sdsbm.em as em
from sdsbm import (
    BlockTensor,
    ContractError,
    Dataset,
    DegenerateParameterError,
    FitConfig,
    GroundTruth,
    MembershipTensor,
    PatternSpec,
    PriorConfig,
    TemporalCoupling,
    block_matrix,
    edge_probability,
    fit,
    generate_memberships,
    log_posterior,
    m_step_p,
    m_step_theta,
    responsibilities,
    rmse_aligned,
    sample_dataset,
)

from conftest import random_blocks, random_dataset, random_memberships


class TestFitConfig:
    @pytest.mark.parametrize("bad", [
        {"n_clusters": 0},
        {"n_clusters": 2, "max_iterations": 0},
        {"n_clusters": 2, "tol": 0.0},
        {"n_clusters": 2, "restarts": 0},
        {"n_clusters": 2, "p_mode": "frozen"},
        {"n_clusters": 2, "p_mode": "fixed"},                      # missing tensor
        {"n_clusters": 2, "fixed_p": [[1.0, 0.0], [0.0, 1.0]]},    # tensor without mode
    ])
    def test_rejects_bad_settings(self, bad):
        with pytest.raises(ContractError):
            FitConfig(**bad)

    def test_fixed_mode_requires_tensor(self):
        config = FitConfig(n_clusters=2, p_mode="fixed",
                           fixed_p=[[1.0, 0.0], [0.0, 1.0]])
        assert config.p_mode == "fixed"


class TestResponsibilities:
    def test_single_cluster_takes_everything(self):
        omega = responsibilities([[[1.0]]], [[0.3, 0.7]], 0, 1, 0)
        np.testing.assert_array_equal(omega, [1.0])

    def test_hand_computed_split(self):
        theta = [[[0.5, 0.5]]]
        p = [[0.2, 0.8], [0.6, 0.4]]
        omega = responsibilities(theta, p, 0, 0, 0)
        np.testing.assert_allclose(omega, [0.25, 0.75], atol=1e-12)

    def test_hard_membership_stays_hard(self):
        theta = [[[1.0, 0.0]]]
        p = [[0.4, 0.6], [0.9, 0.1]]
        omega = responsibilities(theta, p, 0, 0, 0)
        np.testing.assert_array_equal(omega, [1.0, 0.0])

    def test_normalizes_to_one(self):
        theta = random_memberships(2, 3, 5, seed=1)
        p = random_blocks(2, 5, 4, seed=2)
        for t in range(2):
            for i in range(3):
                for o in range(4):
                    omega = responsibilities(theta, p, i, o, t)
                    assert omega.sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_mass_raises_with_triplet(self):
        theta = [[[1.0, 0.0]]]
        p = [[1.0, 0.0], [0.5, 0.5]]
        with pytest.raises(DegenerateParameterError) as err:
            responsibilities(theta, p, 0, 1, 0)
        assert err.value.triplet == (0, 1, 0)

    def test_jensen_bound_is_tight_at_the_posterior(self):
        # plugging the posterior weights into the bound recovers log P exactly
        theta = random_memberships(2, 2, 4, seed=3)
        p = random_blocks(2, 4, 3, seed=4)
        for (i, o, t) in [(0, 0, 0), (1, 2, 1), (0, 1, 1)]:
            omega = responsibilities(theta, p, i, o, t)
            joint = theta[t, i] * p[t, :, o]
            keep = omega > 0
            bound = np.sum(omega[keep] * (np.log(joint[keep]) - np.log(omega[keep])))
            direct = np.log(edge_probability(theta, p, i, o, t))
            assert bound == pytest.approx(direct, abs=1e-10)


def _two_label_dataset():
    return Dataset([0, 0], [0, 1], [0, 0], n_items=1, n_labels=2, n_epochs=1)


class TestMembershipUpdate:
    def test_plain_maximum_likelihood(self):
        data = _two_label_dataset()
        omega_sums = np.array([[[1.5, 0.5]]])
        theta = m_step_theta(data, omega_sums, None, PriorConfig())
        np.testing.assert_allclose(theta.values, [[[0.75, 0.25]]], atol=1e-15)

    def test_unobserved_row_equals_the_neighbour_average(self):
        data = Dataset([0], [0], [1], n_items=1, n_labels=1, n_epochs=2)
        omega_sums = np.zeros((2, 1, 2))
        omega_sums[1, 0] = [0.4, 0.6]
        avg = np.array([[[0.7, 0.3]], [[0.5, 0.5]]])
        fallback = np.array([False, False])
        prior = PriorConfig(beta_theta=2.0)
        theta = m_step_theta(data, omega_sums, (avg, fallback), prior)
        # epoch 0 has no observations: numerator and denominator are all prior
        np.testing.assert_allclose(theta.values[0], [[0.7, 0.3]], atol=1e-12)

    def test_strong_coupling_pins_rows_to_the_average(self):
        data = _two_label_dataset()
        omega_sums = np.array([[[1.5, 0.5]]])
        avg = np.array([[[0.1, 0.9]]])
        fallback = np.array([False])
        prior = PriorConfig(beta_theta=1e9)
        theta = m_step_theta(data, omega_sums, (avg, fallback), prior)
        np.testing.assert_allclose(theta.values, avg, atol=1e-6)

    def test_fallback_epoch_ignores_the_coupling(self):
        data = _two_label_dataset()
        omega_sums = np.array([[[1.5, 0.5]]])
        avg = np.array([[[0.5, 0.5]]])
        fallback = np.array([True])
        prior = PriorConfig(beta_theta=100.0)
        theta = m_step_theta(data, omega_sums, (avg, fallback), prior)
        np.testing.assert_allclose(theta.values, [[[0.75, 0.25]]], atol=1e-15)

    def test_rows_sum_to_one(self):
        data = random_dataset(3, 5, 4, 50, seed=5)
        rng = np.random.default_rng(6)
        omega_sums = rng.random((3, 5, 4))
        # scale each row to its observation count so the update is consistent
        counts = data.item_epoch_counts
        scale = np.where(counts > 0, counts / omega_sums.sum(axis=2), 0.0)
        omega_sums *= scale[:, :, None]
        coupling = TemporalCoupling(data.epoch_counts, PriorConfig())
        avg, fallback = coupling.average(random_memberships(3, 5, 4, seed=7))
        prior = PriorConfig(beta_theta=2.5)
        theta = m_step_theta(data, omega_sums, (avg, fallback), prior)
        np.testing.assert_allclose(theta.values.sum(axis=2), 1.0, atol=1e-9)

    def test_requires_averages_when_coupled(self):
        data = _two_label_dataset()
        with pytest.raises(ContractError):
            m_step_theta(data, np.ones((1, 1, 2)), None, PriorConfig(beta_theta=1.0))

    def test_shape_mismatch_rejected(self):
        data = _two_label_dataset()
        with pytest.raises(ContractError):
            m_step_theta(data, np.ones((2, 1, 2)), None, PriorConfig())


class TestBlockUpdate:
    def test_single_cluster_single_label(self):
        data = Dataset([0], [0], [0], n_items=1, n_labels=1, n_epochs=1)
        p = m_step_p(data, np.array([[[2.0]]]), None, PriorConfig())
        np.testing.assert_array_equal(p.values, [[[1.0]]])

    def test_plain_maximum_likelihood(self):
        data = random_dataset(1, 2, 2, 4, seed=8)
        omega_sums = np.array([[[3.0, 1.0]]])
        p = m_step_p(data, omega_sums, None, PriorConfig())
        np.testing.assert_allclose(p.values, [[[0.75, 0.25]]], atol=1e-15)

    def test_fixed_mode_returns_the_input_untouched(self):
        data = _two_label_dataset()
        current = BlockTensor([[0.3, 0.7], [0.9, 0.1]])
        result = m_step_p(data, np.ones((1, 2, 2)), None, PriorConfig(), mode="fixed",
                          current=current)
        assert result is current

    def test_dead_cluster_resets_to_uniform(self, caplog):
        data = _two_label_dataset()
        omega_sums = np.array([[[3.0, 1.0], [0.0, 0.0]]])
        with caplog.at_level("WARNING", logger="sdsbm.em"):
            p = m_step_p(data, omega_sums, None, PriorConfig())
        np.testing.assert_allclose(p.values[0, 1], [0.5, 0.5], atol=1e-15)
        assert "dead cluster" in caplog.text

    def test_static_mode_pools_epochs(self):
        data = random_dataset(2, 2, 2, 8, seed=9)
        omega_sums = np.array([[[3.0, 1.0]], [[1.0, 3.0]]])
        p = m_step_p(data, omega_sums, None, PriorConfig(), mode="static")
        assert p.static
        np.testing.assert_allclose(p.values, [[[0.5, 0.5]]], atol=1e-15)

    def test_coupled_update_mixes_in_the_average(self):
        data = _two_label_dataset()
        omega_sums = np.array([[[3.0, 1.0]]])
        avg = np.array([[[0.5, 0.5]]])
        fallback = np.array([False])
        p = m_step_p(data, omega_sums, (avg, fallback), PriorConfig(beta_p=4.0))
        # (3 + 4*0.5) / (4 + 4) and (1 + 4*0.5) / 8
        np.testing.assert_allclose(p.values, [[[0.625, 0.375]]], atol=1e-15)

    def test_rows_sum_to_one(self):
        data = random_dataset(3, 4, 5, 60, seed=10)
        rng = np.random.default_rng(11)
        omega_sums = rng.random((3, 2, 5))
        coupling = TemporalCoupling(data.epoch_counts, PriorConfig())
        avg, fallback = coupling.average(random_blocks(3, 2, 5, seed=12))
        p = m_step_p(data, omega_sums, (avg, fallback), PriorConfig(beta_p=1.5))
        np.testing.assert_allclose(p.values.sum(axis=2), 1.0, atol=1e-9)

    def test_bad_mode_rejected(self):
        with pytest.raises(ContractError):
            m_step_p(_two_label_dataset(), np.ones((1, 1, 2)), None, PriorConfig(),
                     mode="pooled")

    def test_label_extent_checked(self):
        with pytest.raises(ContractError):
            m_step_p(_two_label_dataset(), np.ones((1, 2, 3)), None, PriorConfig())


class TestAccumulation:
    def test_matches_per_observation_responsibilities(self):
        data = random_dataset(3, 4, 3, 80, seed=13)
        theta = random_memberships(3, 4, 2, seed=14)
        p = random_blocks(3, 2, 3, seed=15)
        config = FitConfig(n_clusters=2, max_iterations=1)
        problem = em._Problem(data, config)
        s_theta, s_p = em._accumulate(theta, p, problem)
        expected_theta = np.zeros((3, 4, 2))
        expected_p = np.zeros((3, 2, 3))
        for obs in data:
            omega = responsibilities(theta, p, obs.node, obs.label, obs.epoch)
            expected_theta[obs.epoch, obs.node] += omega
            expected_p[obs.epoch, :, obs.label] += omega
        np.testing.assert_allclose(s_theta, expected_theta, atol=1e-10)
        np.testing.assert_allclose(s_p, expected_p, atol=1e-10)

    def test_static_block_pools_label_sums(self):
        data = random_dataset(3, 4, 3, 60, seed=16)
        theta = random_memberships(3, 4, 2, seed=17)
        p = random_blocks(1, 2, 3, seed=18)
        config = FitConfig(n_clusters=2, max_iterations=1)
        problem = em._Problem(data, config)
        s_theta, s_p = em._accumulate(theta, p, problem)
        assert s_p.shape == (1, 2, 3)
        expected_p = np.zeros((2, 3))
        for obs in data:
            omega = responsibilities(theta, p, obs.node, obs.label, obs.epoch)
            expected_p[:, obs.label] += omega
        np.testing.assert_allclose(s_p[0], expected_p, atol=1e-10)

    def test_responsibility_mass_lands_where_observed(self):
        data = random_dataset(2, 3, 2, 40, seed=19)
        theta = random_memberships(2, 3, 3, seed=20)
        p = random_blocks(2, 3, 2, seed=21)
        config = FitConfig(n_clusters=3, max_iterations=1)
        problem = em._Problem(data, config)
        s_theta, s_p = em._accumulate(theta, p, problem)
        # every observation contributes exactly one unit of responsibility
        np.testing.assert_allclose(
            s_theta.sum(axis=2), data.item_epoch_counts, atol=1e-9
        )
        assert s_theta.sum() == pytest.approx(len(data), abs=1e-9)
        assert s_p.sum() == pytest.approx(len(data), abs=1e-9)


def _toy_truth(n_epochs, n_items, seed=0, noise=0.1):
    pattern = PatternSpec(kind="sinusoidal", n_epochs=n_epochs, n_items=n_items,
                          n_clusters=3, seed=seed)
    return GroundTruth(generate_memberships(pattern), block_matrix(noise), pattern)


class TestFit:
    def test_trace_is_monotone_without_coupling(self):
        truth = _toy_truth(1, 20, seed=1)
        data = sample_dataset(truth, 30, seed=1)
        report = fit(data, FitConfig(n_clusters=3, max_iterations=60, restarts=2,
                                     seed=0))
        assert np.all(np.diff(report.trace) >= -1e-8)

    def test_static_block_trace_is_monotone(self):
        truth = _toy_truth(4, 15, seed=2)
        data = sample_dataset(truth, 10, seed=2)
        report = fit(data, FitConfig(n_clusters=3, p_mode="static",
                                     max_iterations=40, restarts=1, seed=0))
        assert report.p.static
        assert np.all(np.diff(report.trace) >= -1e-8)

    def test_seeded_fits_are_bit_identical(self):
        truth = _toy_truth(3, 10, seed=3)
        data = sample_dataset(truth, 8, seed=3)
        config = FitConfig(n_clusters=3, prior=PriorConfig(beta_theta=2.0, beta_p=2.0),
                           max_iterations=25, restarts=2, seed=11)
        first = fit(data, config)
        second = fit(data, config)
        assert np.array_equal(first.theta.values, second.theta.values)
        assert np.array_equal(first.p.values, second.p.values)
        assert np.array_equal(first.trace, second.trace)
        assert first.best_restart == second.best_restart

    def test_different_seeds_differ(self):
        truth = _toy_truth(2, 10, seed=4)
        data = sample_dataset(truth, 8, seed=4)
        a = fit(data, FitConfig(n_clusters=3, max_iterations=5, restarts=1, seed=0))
        b = fit(data, FitConfig(n_clusters=3, max_iterations=5, restarts=1, seed=1))
        assert not np.array_equal(a.theta.values, b.theta.values)

    def test_tensors_are_row_stochastic_after_fitting(self):
        truth = _toy_truth(4, 12, seed=5)
        data = sample_dataset(truth, 6, seed=5)
        report = fit(data, FitConfig(
            n_clusters=3, prior=PriorConfig(beta_theta=5.0, beta_p=5.0),
            max_iterations=30, restarts=1, seed=2,
        ))
        np.testing.assert_allclose(report.theta.values.sum(axis=2), 1.0, atol=1e-9)
        np.testing.assert_allclose(report.p.values.sum(axis=2), 1.0, atol=1e-9)

    def test_recovers_hard_memberships(self):
        # deterministic labels from one-hot memberships: the fitted rows must
        # land within 0.05 of the planted ones after cluster alignment
        rng = np.random.default_rng(6)
        assignments = np.repeat(np.arange(3), 10)
        theta_true = np.zeros((1, 30, 3))
        theta_true[0, np.arange(30), assignments] = 1.0
        truth = GroundTruth(
            MembershipTensor(theta_true), block_matrix(0.0),
            PatternSpec(kind="sinusoidal", n_epochs=1, n_items=30),
        )
        data = sample_dataset(truth, 100, seed=6)
        report = fit(data, FitConfig(n_clusters=3, max_iterations=120, restarts=4,
                                     seed=3))
        assert rmse_aligned(report.theta, truth.theta) < 0.05

    def test_final_objective_is_near_the_trace_maximum(self):
        truth = _toy_truth(6, 10, seed=7)
        data = sample_dataset(truth, 10, seed=7)
        report = fit(data, FitConfig(
            n_clusters=3, prior=PriorConfig(beta_theta=20.0, beta_p=20.0),
            max_iterations=60, restarts=1, seed=4,
        ))
        peak = report.trace.max()
        assert report.objective >= peak - 1e-6 * abs(peak)

    def test_frozen_average_update_never_decreases_the_objective(self):
        # with the neighbour averages held fixed, one EM sweep is exact ascent
        truth = _toy_truth(5, 10, seed=8)
        data = sample_dataset(truth, 12, seed=8)
        prior = PriorConfig(beta_theta=4.0, beta_p=4.0)
        config = FitConfig(n_clusters=3, prior=prior, max_iterations=3, restarts=1,
                           seed=5)
        problem = em._Problem(data, config)
        theta = random_memberships(5, 10, 3, seed=9)
        p = random_blocks(5, 3, 3, seed=10)
        coupling = problem.coupling
        avg_theta = coupling.average(theta)
        avg_p = coupling.average(p)

        def frozen_objective(th, pv):
            value = log_posterior(th, pv, data)
            for values, (avg, _) in ((th, avg_theta), (pv, avg_p)):
                pull = np.where(avg > 0, avg * np.log(values), 0.0)
                value += 4.0 * pull[~coupling.fallback].sum()
            return value

        before = frozen_objective(theta, p)
        s_theta, s_p = em._accumulate(theta, p, problem)
        theta_new = m_step_theta(data, s_theta, avg_theta, prior, previous=theta)
        p_new = m_step_p(data, s_p, avg_p, prior)
        after = frozen_objective(theta_new.values, p_new.values)
        assert after >= before - 1e-10 * abs(before)

    def test_fixed_block_mode_never_updates_it(self):
        truth = _toy_truth(3, 10, seed=11)
        data = sample_dataset(truth, 10, seed=11)
        fixed = block_matrix(0.1)
        report = fit(data, FitConfig(n_clusters=3, p_mode="fixed", fixed_p=fixed,
                                     max_iterations=20, restarts=1, seed=6))
        assert np.array_equal(report.p.values, fixed.values)

    def test_fixed_block_extent_mismatch(self):
        truth = _toy_truth(2, 5, seed=12)
        data = sample_dataset(truth, 5, seed=12)
        with pytest.raises(ContractError, match="fixed block tensor"):
            fit(data, FitConfig(n_clusters=2, p_mode="fixed", fixed_p=block_matrix(0.1)))

    def test_impossible_observations_abort_every_restart(self):
        data = Dataset([0, 1], [0, 1], [0, 0], n_items=2, n_labels=2, n_epochs=1)
        fixed = BlockTensor([[1.0, 0.0], [1.0, 0.0]])  # label 1 can never occur
        with pytest.raises(DegenerateParameterError) as err:
            fit(data, FitConfig(n_clusters=2, p_mode="fixed", fixed_p=fixed,
                                restarts=3, seed=7))
        assert err.value.triplet == (1, 1, 0)

    def test_diagnostics_are_reported(self):
        truth = _toy_truth(3, 8, seed=13)
        data = sample_dataset(truth, 6, seed=13)
        report = fit(data, FitConfig(n_clusters=3, max_iterations=10, restarts=1,
                                     seed=8))
        for key in ("aborted_restarts", "dead_cluster_resets", "fallback_epochs",
                    "seconds_per_iteration"):
            assert key in report.diagnostics
        assert report.diagnostics["aborted_restarts"] == 0
        assert report.n_iterations == len(report.trace)

    def test_empty_epoch_in_range_is_handled(self):
        data = Dataset([0, 1, 0, 1], [0, 1, 1, 0], [0, 0, 2, 2],
                       n_items=2, n_labels=2, n_epochs=3)
        report = fit(data, FitConfig(n_clusters=2, prior=PriorConfig(beta_theta=1.0),
                                     max_iterations=15, restarts=1, seed=9))
        assert report.theta.n_epochs == 3
        np.testing.assert_allclose(report.theta.values.sum(axis=2), 1.0, atol=1e-9)
