"""NLL objective, analytic gradients and correlation recovery."""

import numpy as np
import pytest

from jointmotion import (
    CorrelationMatrix,
    JointGaussian,
    ScenarioConfig,
    assemble_joint,
    correlation_for,
    empirical_increment_pcc,
    increments_from_positions,
    scene_nll,
    tikhonov_regularize,
)
from jointmotion.fit import (
    DirectRhoParams,
    FitConfig,
    FitDataset,
    RelevanceParams,
    StepFactorizationError,
    finite_difference_gradient,
    fit_parameters,
    grad_nll,
    gradient_check,
    nll_objective,
    relative_gradient_errors,
)

LOG_TWO_PI = np.log(2.0 * np.pi)


def small_dataset(seed=1, n_futures=64, pattern="mixed", n_agents=3, target=0.5):
    config = ScenarioConfig(
        pattern=pattern,
        n_agents=n_agents,
        t_obs=2,
        t_fut=4,
        target_rho=target,
        noise_sigma=0.5,
        seed=seed,
    )
    return config, FitDataset.from_config(config, n_futures=n_futures)


def split_dataset(dataset, boundary):
    def subset(sl):
        return FitDataset(
            current=dataset.current,
            theta=dataset.theta,
            mu_delta=dataset.mu_delta,
            sigma_delta=dataset.sigma_delta,
            futures=dataset.futures[sl],
        )

    return subset(slice(0, boundary)), subset(slice(boundary, None))


class TestObjective:
    def test_matches_per_scene_loop_oracle(self):
        _, dataset = small_dataset()
        rng = np.random.default_rng(0)
        params = DirectRhoParams(rng.uniform(-0.4, 0.4, (4, 3)), 3)
        value = nll_objective(params, dataset, 1e-4)
        rho = params.rho_matrices()
        total = 0.0
        for k in range(dataset.n_futures):
            for t in range(dataset.t_fut):
                joint = assemble_joint(
                    dataset.marginals[t], CorrelationMatrix(rho[t]), dataset.theta[t]
                )
                regular = JointGaussian(joint.mean, tikhonov_regularize(joint.cov, 1e-4))
                total += scene_nll(regular, dataset.futures[k, :, t, :].reshape(-1))
        np.testing.assert_allclose(value, total / dataset.n_futures, rtol=1e-10)

    def test_identity_correlation_equals_sum_of_marginal_nlls(self):
        _, dataset = small_dataset(n_futures=1)
        params = DirectRhoParams.zeros(dataset.t_fut, dataset.n_agents)
        value = nll_objective(params, dataset, 1e-4)
        total = 0.0
        for t in range(dataset.t_fut):
            marg = dataset.marginals[t]
            for i in range(dataset.n_agents):
                block = tikhonov_regularize(marg.block(i), 1e-4)
                dist = JointGaussian(mean=[marg.mu_x[i], marg.mu_y[i]], cov=block)
                total += scene_nll(dist, dataset.futures[0, i, t, :])
        np.testing.assert_allclose(value, total, rtol=1e-10)

    def test_at_truth_matches_expected_nll_oracle(self):
        config, dataset = small_dataset(seed=9, n_futures=20_000, pattern="follow", target=0.8)
        truth_rho = correlation_for(config).rho
        params = DirectRhoParams.from_rho(truth_rho, t_fut=dataset.t_fut)
        value = nll_objective(params, dataset, 1e-4)

        # closed-form expectation: E[nll] = 0.5 (ln|C| + tr(C^-1 S_true) + 2N ln 2pi)
        expected = 0.0
        for t in range(dataset.t_fut):
            joint = assemble_joint(
                dataset.marginals[t], CorrelationMatrix(truth_rho), dataset.theta[t]
            )
            evaluated = tikhonov_regularize(joint.cov, 1e-4)
            sign, log_det = np.linalg.slogdet(evaluated)
            assert sign > 0
            expected += 0.5 * (
                log_det
                + np.trace(np.linalg.inv(evaluated) @ joint.cov)
                + 2 * dataset.n_agents * LOG_TWO_PI
            )
        per_scene = dataset.residuals.shape[0]
        spread = np.std(
            [
                sum(
                    scene_nll(
                        JointGaussian(
                            assemble_joint(
                                dataset.marginals[t],
                                CorrelationMatrix(truth_rho),
                                dataset.theta[t],
                            ).mean,
                            tikhonov_regularize(
                                assemble_joint(
                                    dataset.marginals[t],
                                    CorrelationMatrix(truth_rho),
                                    dataset.theta[t],
                                ).cov,
                                1e-4,
                            ),
                        ),
                        dataset.futures[k, :, t, :].reshape(-1),
                    )
                    for t in range(dataset.t_fut)
                )
                for k in range(0, per_scene, 400)
            ]
        )
        tolerance = 5.0 * spread / np.sqrt(dataset.n_futures)
        assert abs(value - expected) < tolerance

    def test_factorization_failure_reports_step(self):
        _, dataset = small_dataset()
        params = DirectRhoParams.zeros(dataset.t_fut, dataset.n_agents)
        with pytest.raises(StepFactorizationError) as excinfo:
            nll_objective(params, dataset, 0.0)
        assert excinfo.value.step == 0
        assert "step 0" in str(excinfo.value)


class TestGradients:
    def test_direct_rho_matches_finite_differences(self):
        _, dataset = small_dataset()
        rng = np.random.default_rng(3)
        for _ in range(5):
            params = DirectRhoParams(rng.uniform(-0.4, 0.4, (4, 3)), 3)
            assert gradient_check(params, dataset, delta_reg=1e-4) < 1e-5

    def test_relevance_head_matches_finite_differences(self):
        _, dataset = small_dataset()
        for seed in range(5):
            params = RelevanceParams.initialize(8, seed=seed)
            assert gradient_check(params, dataset, delta_reg=1e-2) < 1e-5

    def test_gradient_symmetric_for_symmetric_pairs(self):
        # two agents on the same heading with identical marginals: the
        # cross-pair derivative must be invariant to swapping the pair
        config = ScenarioConfig(
            pattern="follow", n_agents=2, t_obs=2, t_fut=3, target_rho=0.5, seed=5
        )
        dataset = FitDataset.from_config(config, n_futures=128)
        params = DirectRhoParams.zeros(3, 2)
        swapped = FitDataset(
            current=dataset.current[::-1],
            theta=dataset.theta[:, ::-1],
            mu_delta=dataset.mu_delta[:, ::-1],
            sigma_delta=dataset.sigma_delta[:, ::-1],
            futures=dataset.futures[:, ::-1],
        )
        np.testing.assert_allclose(
            grad_nll(params, dataset, 1e-4), grad_nll(params, swapped, 1e-4), rtol=1e-10
        )

    def test_quadratic_toy_gradient_error_tiny(self):
        def toy(vec):
            return float(vec @ np.array([2.0, -1.0]) + 3.0 * (vec**2).sum())

        # central differences are exact for quadratics; a moderate step
        # leaves only roundoff
        x = np.array([0.7, -1.2])
        numeric = finite_difference_gradient(toy, x, 1e-4)
        exact = np.array([2.0, -1.0]) + 6.0 * x
        assert np.max(relative_gradient_errors(exact, numeric)) < 1e-10

    def test_gradient_vanishes_at_one_parameter_minimum(self):
        from scipy.optimize import brentq

        config = ScenarioConfig(
            pattern="follow", n_agents=2, t_obs=2, t_fut=1, target_rho=0.6, seed=6
        )
        dataset = FitDataset.from_config(config, n_futures=2_000)

        def slope(z):
            return grad_nll(DirectRhoParams(np.array([[z]]), 2), dataset, 1e-4)[0]

        z_star = brentq(slope, -3.0, 3.0, xtol=1e-14)
        assert abs(slope(z_star)) < 1e-8
        objective = lambda vec: nll_objective(
            DirectRhoParams(vec.reshape(1, 1), 2), dataset, 1e-4
        )
        numeric = finite_difference_gradient(objective, np.array([z_star]), 1e-5)
        assert abs(numeric[0]) < 1e-6

    def test_larger_step_grows_truncation_error(self):
        _, dataset = small_dataset()
        rng = np.random.default_rng(8)
        params = DirectRhoParams(rng.uniform(-0.4, 0.4, (4, 3)), 3)
        fine = gradient_check(params, dataset, delta_reg=1e-1, step=1e-6)
        coarse = gradient_check(params, dataset, delta_reg=1e-1, step=1e-1)
        assert coarse > fine
        assert coarse > 1e-5


class TestFitParameters:
    def test_direct_recovery_smoke(self):
        config, dataset = small_dataset(seed=13, n_futures=2_000, pattern="follow", target=0.8)
        report = fit_parameters(
            FitConfig(max_iters=400, convergence_tol=1e-10), dataset
        )
        assert not report.failure_flag
        assert np.all(np.abs(report.recovered_rho[:, 0, 1] - 0.8) < 0.1)
        assert np.all(np.isfinite(report.nll_trace))

    def test_recovered_matrices_are_valid_correlations(self):
        _, dataset = small_dataset(seed=14, n_futures=500)
        report = fit_parameters(FitConfig(max_iters=150), dataset)
        for rho in report.recovered_rho:
            CorrelationMatrix(rho)  # validates symmetry, diagonal, range

    def test_ml_consistency_error_shrinks_with_data(self):
        config = ScenarioConfig(
            pattern="follow", n_agents=2, t_obs=2, t_fut=2, target_rho=0.8,
            noise_sigma=0.5, seed=15,
        )
        dataset = FitDataset.from_config(config, n_futures=10_000)
        small, _ = split_dataset(dataset, 1_000)

        def recovery_error(ds):
            report = fit_parameters(
                FitConfig(max_iters=500, convergence_tol=1e-11), ds
            )
            return np.max(np.abs(report.recovered_rho[:, 0, 1] - 0.8))

        assert recovery_error(dataset) < recovery_error(small)

    def test_single_pair_optimum_matches_empirical_pcc(self):
        config = ScenarioConfig(
            pattern="follow", n_agents=2, t_obs=2, t_fut=3, target_rho=0.7,
            noise_sigma=0.6, seed=16,
        )
        dataset = FitDataset.from_config(config, n_futures=10_000)
        report = fit_parameters(FitConfig(max_iters=600, convergence_tol=1e-11), dataset)
        for t in range(dataset.t_fut):
            increments = increments_from_positions(
                dataset.futures[:, :, t, :], dataset.current, dataset.theta[t]
            )
            empirical = empirical_increment_pcc(increments).rho[0, 1]
            assert abs(report.recovered_rho[t, 0, 1] - empirical) < 0.02

    def test_zero_delta_fails_at_first_iteration(self):
        _, dataset = small_dataset(seed=17, n_futures=200)
        report = fit_parameters(FitConfig(delta_reg=0.0, max_iters=50), dataset)
        assert report.failure_flag
        assert report.iterations_run == 0
        assert "not positive definite" in report.failure_reason
        assert report.delta_reg_used == 0.0
        assert np.isnan(report.final_nll)

    def test_escalation_recovers_once_then_proceeds(self):
        _, dataset = small_dataset(seed=18, n_futures=200, n_agents=3, target=0.3)
        start = DirectRhoParams.from_rho(
            np.array([[1.0, -0.52, -0.52], [-0.52, 1.0, -0.52], [-0.52, -0.52, 1.0]]),
            t_fut=dataset.t_fut,
        )
        config = FitConfig(delta_reg=1e-2, max_iters=50)
        report = fit_parameters(config, dataset, initial=start)
        assert not report.failure_flag
        assert report.delta_reg_used == pytest.approx(1e-1)

    def test_trace_decreases_monotonically_at_small_learning_rate(self):
        config = ScenarioConfig(
            pattern="follow", n_agents=2, t_obs=2, t_fut=1, target_rho=0.6,
            noise_sigma=0.5, seed=31,
        )
        dataset = FitDataset.from_config(config, n_futures=500)
        report = fit_parameters(
            FitConfig(learning_rate=0.005, max_iters=120, convergence_tol=0.0), dataset
        )
        assert np.all(np.diff(report.nll_trace) <= 0)

    def test_relevance_head_smoke(self):
        _, dataset = small_dataset(seed=19, n_futures=2_000, pattern="follow", target=0.8)
        config = FitConfig(
            parameterization="relevance-head", learning_rate=0.03, max_iters=700,
            convergence_tol=1e-12, seed=2,
        )
        report = fit_parameters(config, dataset)
        assert not report.failure_flag
        assert np.all(np.abs(report.recovered_rho[:, 0, 1] - 0.8) < 0.15)

    def test_report_dict_round_trips_through_json(self, tmp_path):
        import json

        _, dataset = small_dataset(seed=20, n_futures=100)
        report = fit_parameters(FitConfig(max_iters=20), dataset)
        path = tmp_path / "report.json"
        path.write_text(json.dumps(report.to_dict()))
        loaded = json.loads(path.read_text())
        assert loaded["iterations_run"] == report.iterations_run
        np.testing.assert_allclose(loaded["recovered_rho"], report.recovered_rho)


class TestFitConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            FitConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            FitConfig(delta_reg=-1.0)
        with pytest.raises(ValueError):
            FitConfig(parameterization="mlp")

    def test_dict_round_trip(self):
        config = FitConfig(parameterization="relevance-head", seed=4, delta_reg=1e-3)
        assert FitConfig.from_dict(config.to_dict()) == config

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            FitConfig.from_dict({"moomentum": 0.9})


class TestFitDataset:
    def test_from_scenes_matches_from_config(self):
        from jointmotion import generate_scenes

        config = ScenarioConfig(pattern="follow", n_agents=2, t_fut=3, seed=21)
        scenes, truth = generate_scenes(config, 50)
        via_scenes = FitDataset.from_scenes(scenes, truth)
        via_config = FitDataset.from_config(config, 50)
        np.testing.assert_array_equal(via_scenes.futures, via_config.futures)
        np.testing.assert_array_equal(via_scenes.theta, via_config.theta)
        np.testing.assert_array_equal(via_scenes.scatter, via_config.scatter)

    def test_mismatched_families_rejected(self):
        from jointmotion import generate_scenes

        config_a = ScenarioConfig(pattern="follow", n_agents=2, t_fut=3, seed=22)
        config_b = ScenarioConfig(pattern="follow", n_agents=2, t_fut=3, seed=23)
        scenes_a, truth = generate_scenes(config_a, 2)
        scenes_b, _ = generate_scenes(config_b, 2)
        with pytest.raises(ValueError):
            FitDataset.from_scenes([scenes_a[0], scenes_b[0]], truth)

    def test_requires_noisy_increments(self):
        config = ScenarioConfig(pattern="follow", n_agents=2, noise_sigma=0.0, seed=24)
        with pytest.raises(ValueError):
            FitDataset.from_config(config, 10)

    def test_requires_shared_headings(self):
        config = ScenarioConfig(pattern="follow", n_agents=2, heading_noise=0.01, seed=25)
        with pytest.raises(ValueError):
            FitDataset.from_config(config, 10)
