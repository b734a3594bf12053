"""Estimator-style wrapper around the forecaster.

`NonstationaryTransformerForecaster` follows the scikit-learn
conventions: hyperparameters are stored verbatim in `__init__`,
validation happens in `fit`, fitted state lives in trailing-underscore
attributes, and `fit` returns `self`, so the object composes with
`clone`, pipelines, and parameter search utilities.
"""

from sklearn.base import BaseEstimator

from .data import make_windows
from .errors import ConfigurationError, DataValidationError
from .metrics import mse
from .model import ModelConfig, NSTransformer
from .training import TrainConfig, evaluate, predict_windows, train
from .validation import check_series_matrix, check_window_stack


class NonstationaryTransformerForecaster(BaseEstimator):
    """Multivariate forecaster trained on one continuous series.

    `fit(X)` slices the `[T, C]` series into sliding windows, splits
    them chronologically into train/validation, and optimizes the model
    with early stopping. `predict(X)` maps input windows (`[S, C]` or
    `[n, S, C]`) to forecasts of the next `pred_len` rows.
    """

    def __init__(self, input_len=48, pred_len=24, d_model=64, n_heads=4,
                 encoder_layers=2, decoder_layers=1, ffn_width=None,
                 projector_hidden=128, mode="both", factor_pairing="main",
                 denorm_mode="inverse", epsilon=1e-5, dropout=0.05,
                 learning_rate=1e-4, batch_size=32, max_epochs=10, patience=3,
                 loss_space="original", lr_decay=False, val_fraction=0.2,
                 stride=1, seed=0):
        self.input_len = input_len
        self.pred_len = pred_len
        self.d_model = d_model
        self.n_heads = n_heads
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.ffn_width = ffn_width
        self.projector_hidden = projector_hidden
        self.mode = mode
        self.factor_pairing = factor_pairing
        self.denorm_mode = denorm_mode
        self.epsilon = epsilon
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.loss_space = loss_space
        self.lr_decay = lr_decay
        self.val_fraction = val_fraction
        self.stride = stride
        self.seed = seed

    def _model_config(self, channels):
        return ModelConfig(
            input_len=self.input_len,
            pred_len=self.pred_len,
            channels=channels,
            d_model=self.d_model,
            n_heads=self.n_heads,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            ffn_width=self.ffn_width,
            projector_hidden=self.projector_hidden,
            mode=self.mode,
            factor_pairing=self.factor_pairing,
            denorm_mode=self.denorm_mode,
            epsilon=self.epsilon,
            dropout=self.dropout,
            seed=self.seed,
        )

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            loss_space=self.loss_space,
            lr_decay=self.lr_decay,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        """Train on a `[T, C]` series; returns self."""
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigurationError(
                f"val_fraction must be in (0, 1), got {self.val_fraction}"
            )
        X = check_series_matrix(X, min_rows=self.input_len + self.pred_len + 1)
        # Chronological two-way split: trailing fraction is validation, and
        # the validation block keeps an input_len context prefix.
        cut = int(X.shape[0] * (1.0 - self.val_fraction))
        train_group = make_windows(X[:cut], self.input_len, self.pred_len,
                                   stride=self.stride)["all"]
        val_values = X[max(cut - self.input_len, 0):]
        val_group = make_windows(val_values, self.input_len, self.pred_len,
                                 stride=self.stride)["all"]

        self.n_features_in_ = X.shape[1]
        self.model_ = NSTransformer(self._model_config(X.shape[1]))
        result = train(self.model_, train_group, val_group, self._train_config())
        self.history_ = result.history
        self.best_val_mse_ = result.best_val_mse
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X):
        """Forecast the next `pred_len` rows for each input window."""
        self._check_fitted()
        X, single = check_window_stack(X, self.input_len, self.n_features_in_)
        preds = self.model_.predict(X)
        return preds[0] if single else preds

    def score(self, X, y=None):
        """Negative MSE over windows sliced from a held-out series."""
        self._check_fitted()
        X = check_series_matrix(X, min_rows=self.input_len + self.pred_len)
        windows = make_windows(X, self.input_len, self.pred_len)["all"]
        preds, truths = predict_windows(self.model_, windows)
        return -mse(preds, truths)

    def evaluate(self, X, with_stationarity=True):
        """Full EvalReport over windows sliced from a held-out series."""
        self._check_fitted()
        X = check_series_matrix(X, min_rows=self.input_len + self.pred_len)
        windows = make_windows(X, self.input_len, self.pred_len)["all"]
        return evaluate(self.model_, windows, with_stationarity=with_stationarity)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise DataValidationError(
                "this forecaster is not fitted yet; call fit first"
            )
