import dataclasses
import math

import numpy as np
import pytest

from aeroforecast.rnn import RnnModel, SequenceDataset, forward, init_rnn, loss_mse
from aeroforecast.trainers import (TrainConfig, _EpochLog, br_least_squares,
                                   lm_least_squares, scg_minimize, train,
                                   train_br, train_lm, train_scg)


def linear_identity_model(seed=0):
    """One identity-activation neuron: y = V*(U*x + W*h_prev + b_h) + b_y."""
    base = init_rnn(1, 1, 1, seed=seed, hidden_activation="identity")
    return base


def noisy_dataset(seed, T=60, n_input=2):
    rng = np.random.default_rng(seed)
    return SequenceDataset(inputs=rng.standard_normal((T, n_input)),
                           targets=rng.standard_normal(T))


class TestLm:
    def test_recovers_linear_regression(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1.0, 1.0, size=40)
        y = 2.0 * x + 1.0  # noiseless; analytic least squares is exact
        data = SequenceDataset(inputs=x[:, None], targets=y)
        model = linear_identity_model(seed=3)
        cfg = TrainConfig(algorithm="lm", max_epochs=20)
        trained, rec = train_lm(model, data, np.arange(40), [], cfg)
        preds = forward(trained, data)
        slope, intercept = np.polyfit(x, preds, 1)
        assert rec.total_epochs <= 20
        assert slope == pytest.approx(2.0, abs=1e-8)
        assert intercept == pytest.approx(1.0, abs=1e-8)

    def test_already_optimal_start_converges_at_epoch_1(self):
        model = init_rnn(2, 3, 1, seed=4).with_params(np.zeros(6 + 9 + 3 + 3 + 1))
        data = SequenceDataset(inputs=np.random.default_rng(5).standard_normal((20, 2)),
                               targets=np.zeros(20))
        trained, rec = train_lm(model, data, np.arange(20), [], TrainConfig())
        assert rec.total_epochs == 1
        assert rec.stop_reason == "converged"
        assert np.array_equal(trained.params_to_vector(), model.params_to_vector())

    def test_exponential_fit_matches_refined_grid_oracle(self):
        rng = np.random.default_rng(6)
        t = np.arange(20, dtype=float)
        y = 2.0 * np.exp(-0.3 * t) + 0.01 * rng.standard_normal(20)

        def residuals(theta):
            return theta[0] * np.exp(-theta[1] * t) - y

        def jacobian(theta):
            J = np.empty((20, 2))
            J[:, 0] = np.exp(-theta[1] * t)
            J[:, 1] = -theta[0] * t * np.exp(-theta[1] * t)
            return J

        theta, rec = lm_least_squares(residuals, jacobian,
                                      np.array([1.0, 0.1]), TrainConfig())
        lm_sse = float(residuals(theta) @ residuals(theta))

        def sse_at(a, b):
            r = a * np.exp(-b * t) - y
            return float(r @ r)

        center, span = np.array([1.5, 0.5]), np.array([1.5, 0.5])
        best = None
        for _ in range(8):  # iteratively refined dense grid
            grid_a = np.linspace(center[0] - span[0], center[0] + span[0], 21)
            grid_b = np.linspace(center[1] - span[1], center[1] + span[1], 21)
            best = min((sse_at(a, b), a, b) for a in grid_a for b in grid_b)
            center = np.array([best[1], best[2]])
            span = span * 0.2
        assert abs(lm_sse - best[0]) <= 1e-6

    def test_accepted_steps_strictly_decrease_sse(self):
        model = init_rnn(2, 4, 1, seed=7)
        data = noisy_dataset(8)
        _, rec = train_lm(model, data, np.arange(40), np.arange(40, 60),
                          TrainConfig(max_epochs=50))
        assert rec.step_deltas and max(rec.step_deltas) < 0
        # the recorded train curve never increases for LM
        assert all(b <= a + 1e-15 for a, b in zip(rec.train_mse, rec.train_mse[1:]))


class TestScg:
    def test_quadratic_reaches_direct_solve_optimum(self):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((10, 10))
        A = M @ M.T + 10.0 * np.eye(10)
        b = rng.standard_normal(10)
        theta_star = np.linalg.solve(A, b)

        def f(theta):
            return 0.5 * float(theta @ A @ theta) - float(b @ theta)

        def g(theta):
            return A @ theta - b

        theta, rec = scg_minimize(f, g, np.zeros(10),
                                  TrainConfig(algorithm="scg", max_epochs=30))
        assert rec.total_epochs <= 30
        assert np.abs(theta - theta_star).max() <= 1e-6

    def test_start_at_optimum_immediate_convergence(self):
        A = np.eye(3)

        def f(theta):
            return 0.5 * float(theta @ A @ theta)

        def g(theta):
            return A @ theta

        theta, rec = scg_minimize(f, g, np.zeros(3), TrainConfig(algorithm="scg"))
        assert rec.total_epochs == 1
        assert rec.stop_reason == "converged"

    def test_accepted_steps_never_increase_mse(self):
        model = init_rnn(2, 4, 1, seed=10)
        data = noisy_dataset(11)
        _, rec = train_scg(model, data, np.arange(40), np.arange(40, 60),
                           TrainConfig(algorithm="scg", max_epochs=80))
        assert rec.step_deltas and max(rec.step_deltas) <= 0


class TestBr:
    def test_first_evidence_update_gamma_equals_n_params(self):
        # alpha starts at 0, so gamma = P - 2*alpha*tr(H^-1) = P exactly
        model = init_rnn(2, 3, 1, seed=12)
        data = noisy_dataset(13)
        _, rec = train_br(model, data, np.arange(40), np.arange(40, 60),
                          TrainConfig(algorithm="br", max_epochs=5))
        assert rec.gammas
        assert rec.gammas[0] == pytest.approx(model.n_params)

    def test_gamma_stays_in_bounds(self):
        for seed in range(6):
            model = init_rnn(2, 3, 1, seed=20 + seed)
            data = noisy_dataset(30 + seed)
            _, rec = train_br(model, data, np.arange(40), np.arange(40, 60),
                              TrainConfig(algorithm="br", max_epochs=30))
            assert all(0.0 <= g <= model.n_params for g in rec.gammas)

    def test_accepted_steps_decrease_objective(self):
        model = init_rnn(2, 4, 1, seed=14)
        data = noisy_dataset(15)
        _, rec = train_br(model, data, np.arange(40), np.arange(40, 60),
                          TrainConfig(algorithm="br", max_epochs=40))
        assert rec.step_deltas and max(rec.step_deltas) < 0

    def test_regularization_pulls_weight_norm_down(self):
        # pure-noise targets: BR's weight decay should often yield a
        # smaller final weight norm than plain LM on the same start
        wins = 0
        for seed in range(20):
            model = init_rnn(2, 3, 1, seed=100 + seed)
            data = noisy_dataset(200 + seed, T=50)
            idx, val = np.arange(35), np.arange(35, 50)
            cfg = TrainConfig(max_epochs=60)
            lm_model, _ = train_lm(model, data, idx, val,
                                   dataclasses.replace(cfg, algorithm="lm"))
            br_model, _ = train_br(model, data, idx, val,
                                   dataclasses.replace(cfg, algorithm="br"))
            lm_norm = float(np.linalg.norm(lm_model.params_to_vector()))
            br_norm = float(np.linalg.norm(br_model.params_to_vector()))
            wins += br_norm <= lm_norm
        assert wins > 10

    def test_no_validation_early_stop_by_default(self):
        model = init_rnn(2, 3, 1, seed=16)
        data = noisy_dataset(17)
        _, rec = train_br(model, data, np.arange(40), np.arange(40, 60),
                          TrainConfig(algorithm="br", max_epochs=25))
        assert rec.stop_reason != "val_patience"
        assert not np.isnan(rec.val_mse).any()  # still recorded


class TestSharedBehavior:
    @pytest.mark.parametrize("algo", ["lm", "br", "scg"])
    def test_best_validation_snapshot(self, algo):
        model = init_rnn(2, 4, 1, seed=18)
        data = noisy_dataset(19)
        idx, val = np.arange(40), np.arange(40, 60)
        trained, rec = train(model, data, idx, val,
                             TrainConfig(algorithm=algo, max_epochs=40))
        preds = forward(trained, data)
        returned_val = loss_mse(preds[val], data.targets[val])
        assert returned_val <= min(rec.val_mse) + 1e-12
        assert rec.best_epoch <= rec.total_epochs

    @pytest.mark.parametrize("algo", ["lm", "br", "scg"])
    def test_determinism(self, algo):
        model = init_rnn(2, 3, 1, seed=21)
        data = noisy_dataset(22)
        idx, val = np.arange(40), np.arange(40, 60)
        cfg = TrainConfig(algorithm=algo, max_epochs=25)
        m1, r1 = train(model, data, idx, val, cfg)
        m2, r2 = train(model, data, idx, val, cfg)
        assert r1.train_mse == r2.train_mse
        assert r1.val_mse == r2.val_mse
        assert r1.total_epochs == r2.total_epochs
        assert r1.best_epoch == r2.best_epoch
        assert np.array_equal(m1.params_to_vector(), m2.params_to_vector())

    @pytest.mark.parametrize("algo", ["lm", "br", "scg"])
    def test_epoch_cap(self, algo):
        model = init_rnn(2, 3, 1, seed=23)
        data = noisy_dataset(24)
        _, rec = train(model, data, np.arange(40), np.arange(40, 60),
                       TrainConfig(algorithm=algo, max_epochs=15))
        assert rec.total_epochs <= 15
        assert len(rec.train_mse) == rec.total_epochs == len(rec.val_mse)

    def test_empty_training_set_rejected(self):
        model = init_rnn(2, 3, 1, seed=25)
        data = noisy_dataset(26)
        for fn in (train_lm, train_br, train_scg):
            with pytest.raises(ValueError, match="empty"):
                fn(model, data, [], [], TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError, match="algorithm"):
            TrainConfig(algorithm="adam")
        with pytest.raises(ValueError, match="max_epochs"):
            TrainConfig(max_epochs=0)
        with pytest.raises(ValueError, match="grad_tol"):
            TrainConfig(grad_tol=0.0)

    def test_learning_rate_recorded_but_inert(self):
        model = init_rnn(2, 3, 1, seed=27)
        data = noisy_dataset(28)
        idx, val = np.arange(40), np.arange(40, 60)
        a = train(model, data, idx, val, TrainConfig(max_epochs=10, learning_rate=0.02))
        b = train(model, data, idx, val, TrainConfig(max_epochs=10, learning_rate=0.5))
        assert a[1].train_mse == b[1].train_mse
        assert np.array_equal(a[0].params_to_vector(), b[0].params_to_vector())


class TestEpochLog:
    def test_patience_counts_consecutive_increases(self):
        vals = iter([1.0, 0.9, 0.95, 1.0, 1.05, 1.1])
        log = _EpochLog(lambda theta: next(vals), patience=3)
        theta = np.zeros(2)
        trips = [log.log(0.0, theta) for _ in range(6)]
        # increases at epochs 3,4,5,6; third consecutive increase trips
        assert trips == [False, False, False, False, True, True]
        assert log.record.best_epoch == 2

    def test_no_patience_without_validation(self):
        log = _EpochLog(None, patience=2)
        theta = np.zeros(1)
        assert not any(log.log(v, theta) for v in [1.0, 2.0, 3.0, 4.0])
        assert log.record.best_epoch == 1  # lowest train MSE
