"""Optimizer mechanics, the training loop, evaluation, and history output."""

import csv

import numpy as np
import numpy.testing as npt
import pytest

from destat.autodiff import ParameterSet
from destat.data import SplitSpec, SyntheticSpec, generate_synthetic, make_windows
from destat.errors import ConfigurationError, TrainingDivergenceError
from destat.model import ModelConfig, NSTransformer
from destat.training import (
    Adam,
    TrainConfig,
    batch_loss,
    evaluate,
    predict_windows,
    train,
    write_history_csv,
)


def _param_set(values):
    params = ParameterSet()
    for i, v in enumerate(values):
        params.add(f"p{i}", np.asarray(v, dtype=np.float64))
    return params


def _tiny_model(mode="stationarization_only", seed=0):
    return NSTransformer(ModelConfig(
        input_len=16, pred_len=8, channels=2, d_model=8, n_heads=2,
        encoder_layers=1, decoder_layers=1, ffn_width=16, projector_hidden=4,
        mode=mode, dropout=0.0, seed=seed))


def _windows(t_len=260, seed=0):
    ds = generate_synthetic(SyntheticSpec(
        kind="trend_seasonal", length=t_len, channels=2, seed=seed,
        params={"amplitude": 2.0, "period": 24.0, "phase": 0.0,
                "slope": 0.05, "noise_sigma": 0.1, "n_regimes": 2,
                "regime_scales": [1.0, 2.0]}))
    return make_windows(ds.values, input_len=16, pred_len=8,
                        split=SplitSpec(7, 2, 2))


# ---- optimizer ------------------------------------------------------------------------


def test_adam_single_step_hand_value():
    params = _param_set([[1.0]])
    params["p0"].grad = np.array([1.0])
    opt = Adam(params, lr=0.1)
    opt.step()
    # First step: m_hat = v_hat = 1, so the update is -lr / (1 + eps).
    expected = 1.0 - 0.1 / (1.0 + 1e-8)
    assert abs(params["p0"].data[0] - expected) < 1e-15


def test_adam_first_step_size_is_gradient_scale_free():
    # First step: m_hat = g and sqrt(v_hat) = |g|, so the step is
    # -lr * g / (|g| + eps) -- about lr in magnitude for any g >> eps.
    for g in (1e-3, 1.0, 1e6):
        params = _param_set([[0.0]])
        params["p0"].grad = np.array([g])
        opt = Adam(params, lr=0.01)
        opt.step()
        expected = -0.01 * g / (g + 1e-8)
        assert abs(params["p0"].data[0] - expected) < 1e-15
        assert abs(params["p0"].data[0] + 0.01) < 1e-4


def test_adam_zero_lr_is_noop():
    params = _param_set([[3.0, -2.0]])
    params["p0"].grad = np.array([5.0, -1.0])
    opt = Adam(params, lr=0.0)
    opt.step()
    opt.step()
    npt.assert_array_equal(params["p0"].data, [3.0, -2.0])


def test_adam_missing_gradient_is_zero_gradient():
    params = _param_set([[1.0]])
    opt = Adam(params, lr=0.1)
    opt.step()  # no gradient at all: moments stay zero, update is exactly 0
    npt.assert_array_equal(params["p0"].data, [1.0])

    params["p0"].grad = np.array([1.0])
    opt.step()
    after_grad = params["p0"].data.copy()
    params["p0"].grad = None
    opt.step()  # moments persist and keep decaying
    assert params["p0"].data[0] != after_grad[0]


def test_adam_converges_on_quadratic():
    params = _param_set([[10.0]])
    opt = Adam(params, lr=0.5)
    for _ in range(200):
        opt.zero_grad()
        params["p0"].grad = 2.0 * params["p0"].data  # d/dx of x^2
        opt.step()
    assert abs(params["p0"].data[0]) < 1e-2


def test_adam_validation():
    params = _param_set([[1.0]])
    with pytest.raises(ConfigurationError, match="learning rate"):
        Adam(params, lr=-1.0)
    with pytest.raises(ConfigurationError, match="betas"):
        Adam(params, beta1=1.0)
    with pytest.raises(ConfigurationError, match="betas"):
        Adam(params, beta2=-0.1)


# ---- config ----------------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigurationError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError, match="max_epochs"):
        TrainConfig(max_epochs=0)
    with pytest.raises(ConfigurationError, match="patience"):
        TrainConfig(patience=-1)
    with pytest.raises(ConfigurationError, match="loss_space"):
        TrainConfig(loss_space="log")
    with pytest.raises(ConfigurationError, match="learning_rate"):
        TrainConfig(learning_rate=-0.1)


# ---- loss -------------------------------------------------------------------------------


def test_batch_loss_original_space():
    model = _tiny_model()
    groups = _windows()
    x = np.stack([w.x for w in groups["train"][:4]])
    y = np.stack([w.target for w in groups["train"][:4]])
    loss = batch_loss(model, x, y, loss_space="original", train=True)
    out = model.forward(x, train=False)
    expected = np.mean((out.y_hat.data - y) ** 2)
    assert abs(float(loss.data) - expected) < 1e-12


def test_batch_loss_normalized_space():
    model = _tiny_model()
    groups = _windows()
    x = np.stack([w.x for w in groups["train"][:4]])
    y = np.stack([w.target for w in groups["train"][:4]])
    loss = batch_loss(model, x, y, loss_space="normalized", train=True)
    out = model.forward(x, train=False)
    target_norm = (y - out.stats.mu.data) / out.stats.sigma.data
    expected = np.mean((out.y_prime.data - target_norm) ** 2)
    assert abs(float(loss.data) - expected) < 1e-12


def test_batch_loss_vanilla_falls_back_to_original():
    model = _tiny_model(mode="vanilla")
    groups = _windows()
    x = np.stack([w.x for w in groups["train"][:4]])
    y = np.stack([w.target for w in groups["train"][:4]])
    norm = batch_loss(model, x, y, loss_space="normalized", train=True)
    orig = batch_loss(model, x, y, loss_space="original", train=True)
    assert float(norm.data) == float(orig.data)


# ---- training loop ----------------------------------------------------------------------


def test_train_requires_windows():
    model = _tiny_model()
    groups = _windows()
    with pytest.raises(ConfigurationError, match="non-empty"):
        train(model, [], groups["val"], TrainConfig())
    with pytest.raises(ConfigurationError, match="non-empty"):
        train(model, groups["train"], [], TrainConfig())


def test_training_beats_untrained_model():
    groups = _windows()
    untrained = _tiny_model(seed=1)
    preds, truths = predict_windows(untrained, groups["val"])
    untrained_mse = float(np.mean((preds - truths) ** 2))

    model = _tiny_model(seed=1)
    config = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=2,
                         patience=3, seed=0)
    result = train(model, groups["train"], groups["val"], config)
    assert result.best_val_mse < untrained_mse

    # History bookkeeping.
    assert [row["epoch"] for row in result.history] == [0, 1]
    assert all(row["lr"] == 1e-3 for row in result.history)
    assert result.best_epoch == int(np.argmin(
        [row["val_mse"] for row in result.history]))
    assert result.best_val_mse == min(row["val_mse"] for row in result.history)

    # The best parameters were restored: re-evaluating reproduces best_val.
    preds, truths = predict_windows(model, groups["val"],
                                    batch_size=config.batch_size)
    assert float(np.mean((preds - truths) ** 2)) == result.best_val_mse


def test_train_logs_each_epoch():
    groups = _windows()
    rows = []
    result = train(_tiny_model(), groups["train"], groups["val"],
                   TrainConfig(learning_rate=1e-3, max_epochs=2, seed=0),
                   log=rows.append)
    assert rows == result.history


def test_patience_zero_stops_at_first_plateau():
    # lr=0 freezes the parameters, so epoch 1 cannot improve on epoch 0.
    groups = _windows()
    result = train(_tiny_model(), groups["train"], groups["val"],
                   TrainConfig(learning_rate=0.0, max_epochs=10, patience=0))
    assert result.stopped_early
    assert len(result.history) == 2
    assert result.best_epoch == 0


def test_patience_counts_consecutive_bad_epochs():
    groups = _windows()
    result = train(_tiny_model(), groups["train"], groups["val"],
                   TrainConfig(learning_rate=0.0, max_epochs=10, patience=2))
    assert result.stopped_early
    assert len(result.history) == 4  # best epoch + 3 non-improving


def test_lr_decay_halves_each_epoch():
    groups = _windows()
    result = train(_tiny_model(), groups["train"], groups["val"],
                   TrainConfig(learning_rate=4e-4, max_epochs=3, patience=5,
                               lr_decay=True))
    assert [row["lr"] for row in result.history] == [4e-4, 2e-4, 1e-4]


def test_training_is_deterministic():
    groups = _windows()
    config = TrainConfig(learning_rate=1e-3, max_epochs=2, seed=7)
    a = train(_tiny_model(seed=2), groups["train"], groups["val"], config)
    b = train(_tiny_model(seed=2), groups["train"], groups["val"], config)
    assert a.history == b.history
    assert a.best_val_mse == b.best_val_mse


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_raises_with_location():
    groups = _windows()
    model = _tiny_model()
    model.params["head.w"].data[:] = 1e200  # squared error overflows
    with pytest.raises(TrainingDivergenceError,
                       match=r"epoch 0, batch 0"):
        train(model, groups["train"], groups["val"],
              TrainConfig(learning_rate=1e-3, max_epochs=1))


def test_gradients_reach_the_factor_projector():
    model = _tiny_model(mode="both")
    groups = _windows()
    x = np.stack([w.x for w in groups["train"][:4]])
    y = np.stack([w.target for w in groups["train"][:4]])
    loss = batch_loss(model, x, y, train=True)
    model.params.zero_grad()
    loss.backward()
    for head in ("tau", "delta"):
        grad = model.params[f"projector.{head}.fc2_w"].grad
        assert grad is not None and np.any(grad != 0.0)


# ---- evaluation and history persistence --------------------------------------------------


def test_evaluate_report_contents():
    groups = _windows()
    model = _tiny_model()
    report = evaluate(model, groups["test"], max_lag=2)
    assert report.n_windows == len(groups["test"])
    assert len(report.mse_per_step) == 8
    assert len(report.mae_per_step) == 8
    assert report.mse > 0.0
    # Per-step means recombine to the total.
    assert abs(np.mean(report.mse_per_step) - report.mse) < 1e-12
    assert report.relative_stationarity is not None
    assert len(report.relative_stationarity_per_variable) == 2
    assert all(isinstance(v, float) and not isinstance(v, np.floating)
               for v in report.mse_per_step)


def test_evaluate_can_skip_stationarity():
    groups = _windows()
    report = evaluate(_tiny_model(), groups["test"], with_stationarity=False)
    assert report.relative_stationarity is None
    assert report.relative_stationarity_per_variable == []


def test_write_history_csv_roundtrip(tmp_path):
    history = [
        {"epoch": 0, "train_loss": 1.5, "val_mse": 2.0 / 3.0,
         "val_mae": 0.25, "lr": 1e-4},
        {"epoch": 1, "train_loss": 1.25, "val_mse": 0.6,
         "val_mae": 0.2, "lr": 1e-4},
    ]
    path = tmp_path / "history.csv"
    write_history_csv(history, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    # repr() serialization round-trips doubles exactly.
    assert float(rows[0]["val_mse"]) == 2.0 / 3.0
    assert rows[0]["lr"] == "0.0001"
