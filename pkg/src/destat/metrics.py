"""Forecast accuracy metrics and a unit-root-based stationarity measure.

The augmented Dickey-Fuller statistic here is the t-value of gamma in
the constant-only regression

    dy_t = alpha + gamma * y_{t-1} + sum_i beta_i * dy_{t-i} + e_t,

with the lag order chosen by the standard T^(1/4) rule (capped to keep
at least 10 residual degrees of freedom). More NEGATIVE values mean more
stationary. Relative stationarity compares predictions against the
ground truth as 100 * adf(pred) / adf(truth) per variable; values near
100 mean the forecasts preserve the real series' degree of
non-stationarity (neither over-smoothed nor excessively wild).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError, DegenerateSeriesError

MIN_ADF_LENGTH = 20
MIN_RESIDUAL_DOF = 10


def mse(pred, truth):
    """Mean squared error over all elements."""
    pred, truth = _paired(pred, truth)
    d = pred - truth
    return float(np.mean(d * d))


def mae(pred, truth):
    """Mean absolute error over all elements."""
    pred, truth = _paired(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def _paired(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DataValidationError(
            f"prediction shape {pred.shape} != truth shape {truth.shape}"
        )
    if pred.size == 0:
        raise DataValidationError("empty arrays")
    return pred, truth


@dataclass
class AdfResult:
    """Unit-root test outcome for one univariate series."""

    statistic: float
    lag_order: int
    n_obs: int
    regression: str = "c"


def schwert_lag(t_len):
    """Rule-of-thumb lag order floor(12 * (T/100)^(1/4)), DoF-capped."""
    p = int(math.floor(12.0 * (t_len / 100.0) ** 0.25))
    # n_obs - params = (T - 1 - p) - (p + 2) must stay >= MIN_RESIDUAL_DOF.
    cap = (t_len - 3 - MIN_RESIDUAL_DOF) // 2
    return max(0, min(p, cap))


def _ols_normal_equations(x, y):
    """OLS via normal equations plus one iterative-refinement step.

    Returns (theta, xtx_inverse, residuals). Raises on singular or
    numerically degenerate designs.
    """
    xtx = x.T @ x
    xty = x.T @ y
    try:
        cond = np.linalg.cond(xtx)
        if not np.isfinite(cond) or cond > 1e12:
            raise DegenerateSeriesError(
                f"regression design is near-singular (cond={cond:.3e})"
            )
        theta = np.linalg.solve(xtx, xty)
        theta = theta + np.linalg.solve(xtx, xty - xtx @ theta)
        xtx_inv = np.linalg.inv(xtx)
    except np.linalg.LinAlgError as e:
        raise DegenerateSeriesError(f"regression design is singular: {e}") from e
    return theta, xtx_inv, y - x @ theta


def adf_statistic(series, max_lag=None):
    """Augmented Dickey-Fuller t-statistic (constant-only regression).

    `max_lag=None` selects the capped T^(1/4) rule. Requires a finite
    1-D series of at least MIN_ADF_LENGTH points with enough variation
    for a non-singular design.
    """
    y = np.asarray(series, dtype=np.float64).reshape(-1)
    t_len = y.shape[0]
    if t_len < MIN_ADF_LENGTH:
        raise DegenerateSeriesError(
            f"series too short for a unit-root test: T={t_len} < {MIN_ADF_LENGTH}"
        )
    if not np.isfinite(y).all():
        raise DataValidationError("series contains non-finite values")
    p = schwert_lag(t_len) if max_lag is None else int(max_lag)
    if p < 0:
        raise DegenerateSeriesError(f"negative lag order {p}")
    n = t_len - 1 - p
    k = p + 2
    if n - k < MIN_RESIDUAL_DOF:
        raise DegenerateSeriesError(
            f"not enough observations: n={n}, params={k}, need "
            f">= {MIN_RESIDUAL_DOF} residual DoF"
        )

    dy = np.diff(y)
    # Rows are t = p+1 .. T-1 (0-indexed on y).
    target = dy[p:]
    design = np.empty((n, k))
    design[:, 0] = 1.0
    design[:, 1] = y[p:-1]
    for i in range(1, p + 1):
        design[:, 1 + i] = dy[p - i:-i]

    theta, xtx_inv, resid = _ols_normal_equations(design, target)
    dof = n - k
    s2 = float(resid @ resid) / dof
    se_gamma = math.sqrt(s2 * xtx_inv[1, 1])
    if se_gamma == 0.0:
        raise DegenerateSeriesError("zero standard error for the unit-root term")
    return AdfResult(
        statistic=float(theta[1] / se_gamma),
        lag_order=p,
        n_obs=n,
        regression="c",
    )


def relative_stationarity(pred, truth, max_lag=None):
    """Per-variable 100 * adf(pred) / adf(truth), plus their mean.

    Inputs are `[T, C]` (or 1-D) chronologically arranged sequences.
    Returns (per_variable ndarray, aggregate float). A truth statistic
    indistinguishable from zero makes the ratio undefined and raises.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if pred.shape != truth.shape:
        raise DataValidationError(
            f"prediction shape {pred.shape} != truth shape {truth.shape}"
        )
    ratios = np.empty(pred.shape[1])
    for j in range(pred.shape[1]):
        stat_truth = adf_statistic(truth[:, j], max_lag=max_lag).statistic
        if abs(stat_truth) < 1e-9:
            raise DegenerateSeriesError(
                f"variable {j}: truth unit-root statistic is zero; "
                "relative stationarity undefined"
            )
        stat_pred = adf_statistic(pred[:, j], max_lag=max_lag).statistic
        ratios[j] = 100.0 * stat_pred / stat_truth
    return ratios, float(ratios.mean())


@dataclass
class EvalReport:
    """Metrics of one evaluation pass over a window set."""

    mse: float
    mae: float
    mse_per_step: list = field(default_factory=list)
    mae_per_step: list = field(default_factory=list)
    relative_stationarity: float | None = None
    relative_stationarity_per_variable: list = field(default_factory=list)
    n_windows: int = 0

    def rows(self):
        """Flat key/value pairs for the machine-readable report file."""
        items = [
            ("n_windows", self.n_windows),
            ("mse", self.mse),
            ("mae", self.mae),
        ]
        if self.relative_stationarity is not None:
            items.append(("relative_stationarity", self.relative_stationarity))
            items.extend(
                (f"relative_stationarity_v{j + 1}", v)
                for j, v in enumerate(self.relative_stationarity_per_variable)
            )
        items.extend((f"mse_step_{i + 1}", v) for i, v in enumerate(self.mse_per_step))
        items.extend((f"mae_step_{i + 1}", v) for i, v in enumerate(self.mae_per_step))
        return items
