"""Per-window series stationarization: normalize, de-normalize, model wrapping.

Each input window is shifted and scaled by its own per-variable
statistics (mean and population standard deviation over the time axis),
the wrapped model operates on the normalized window, and the output is
mapped back to the original scale. Two de-normalization modes exist:

* ``inverse`` (default): ``y = sigma * y' + mu`` - the algebraic inverse
  of normalization, so round trips are exact.
* ``literal``: ``y = sigma * (y' + mu)`` - an alternative published
  form, kept selectable for comparison; it is not the inverse map.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DataValidationError

DEFAULT_EPSILON = 1e-5

DENORM_MODES = ("inverse", "literal")


@dataclass
class StationaryStats:
    """Per-variable statistics of one window (or a batch of windows).

    `mu` and `sigma` keep a singleton time axis (`[..., 1, C]`) so they
    broadcast directly against `[..., S, C]` windows. `sigma` already has
    the epsilon floor applied.
    """

    mu: Tensor
    sigma: Tensor
    epsilon: float = DEFAULT_EPSILON


@dataclass
class ForecastBatch:
    """Paired normalized-space and original-space model outputs."""

    y_prime: Tensor
    y_hat: Tensor


def _window_values(window):
    """Accept a raw array, a Tensor, or anything exposing `.x`."""
    if hasattr(window, "x") and not isinstance(window, Tensor):
        window = window.x
    if isinstance(window, Tensor):
        return window
    return Tensor(np.asarray(window, dtype=np.float64))


def _validate_window(x):
    if x.ndim < 2:
        raise DataValidationError(
            f"normalize expects [..., S, C] with ndim >= 2, got shape {x.shape}"
        )
    if x.shape[-2] < 2:
        raise DataValidationError(
            f"normalize needs at least 2 time rows, got S={x.shape[-2]}"
        )
    if not np.isfinite(x.data).all():
        bad = np.argwhere(~np.isfinite(x.data))[0]
        raise DataValidationError(
            f"normalize: non-finite value at index {tuple(int(v) for v in bad)}"
        )


def compute_stats(window, epsilon=DEFAULT_EPSILON):
    """Mean and floored population std over the time axis of a window."""
    x = _window_values(window)
    _validate_window(x)
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    mu, sigma = ad.reduce_mean_std(x, axis=-2, keepdims=True)
    sigma = ad.clamp_min(sigma, epsilon)
    return StationaryStats(mu=mu, sigma=sigma, epsilon=epsilon)


def normalize(window, epsilon=DEFAULT_EPSILON):
    """Shift and scale a window by its own statistics.

    Returns `(normalized, stats)` where `normalized = (x - mu) / sigma`
    with `sigma` floored at `epsilon`. Differentiable end to end, so the
    factor projector can backpropagate through raw-window statistics.
    """
    x = _window_values(window)
    stats = compute_stats(x, epsilon=epsilon)
    normalized = ad.div(ad.sub(x, stats.mu), stats.sigma)
    return normalized, stats


def denormalize(y_prime, stats, mode="inverse"):
    """Map normalized-space outputs back to the original scale.

    `inverse` applies `sigma * y' + mu`; `literal` applies
    `sigma * (y' + mu)`. Statistics broadcast over the output rows.
    """
    if mode not in DENORM_MODES:
        raise ConfigurationError(
            f"denormalize mode must be one of {DENORM_MODES}, got {mode!r}"
        )
    y_prime = y_prime if isinstance(y_prime, Tensor) else Tensor(y_prime)
    if mode == "inverse":
        return ad.add(ad.mul(stats.sigma, y_prime), stats.mu)
    return ad.mul(stats.sigma, ad.add(y_prime, stats.mu))


def wrap_model(base_forward, window, epsilon=DEFAULT_EPSILON, mode="inverse"):
    """Run `base_forward` between a normalize and a de-normalize step.

    `base_forward` maps a normalized `[..., S, C]` Tensor to a
    normalized-space forecast `[..., O, C]` Tensor. Returns a
    ForecastBatch with both the normalized-space and original-space
    outputs.
    """
    normalized, stats = normalize(window, epsilon=epsilon)
    y_prime = base_forward(normalized)
    y_prime = y_prime if isinstance(y_prime, Tensor) else Tensor(y_prime)
    y_hat = denormalize(y_prime, stats, mode=mode)
    return ForecastBatch(y_prime=y_prime, y_hat=y_hat)


class SeriesStationarizer:
    """Stateful per-window scaler with a transformer-style interface.

    `fit` captures the statistics of one window, `transform` normalizes
    with them, and `inverse_transform` maps back. Parameters follow the
    estimator convention (stored verbatim, validated at fit time) so the
    object clones cleanly.
    """

    def __init__(self, epsilon=DEFAULT_EPSILON, mode="inverse"):
        self.epsilon = epsilon
        self.mode = mode

    def get_params(self, deep=True):
        return {"epsilon": self.epsilon, "mode": self.mode}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in ("epsilon", "mode"):
                raise ConfigurationError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y=None):
        if self.mode not in DENORM_MODES:
            raise ConfigurationError(
                f"mode must be one of {DENORM_MODES}, got {self.mode!r}"
            )
        self.stats_ = compute_stats(X, epsilon=self.epsilon)
        return self

    def transform(self, X):
        self._check_fitted()
        x = _window_values(X)
        return ad.div(ad.sub(x, self.stats_.mu), self.stats_.sigma).data

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)

    def inverse_transform(self, Y):
        self._check_fitted()
        return denormalize(np.asarray(Y, dtype=np.float64), self.stats_, mode=self.mode).data

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise DataValidationError("SeriesStationarizer used before fit")
