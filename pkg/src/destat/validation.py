"""Input validation helpers shared by the estimator and the CLI."""

import numpy as np

from .errors import DataValidationError


def check_series_matrix(X, min_rows=1, name="X"):
    """Coerce to a finite float64 `[T, C]` matrix.

    1-D input is treated as a single-variable series. Raises
    DataValidationError for wrong rank, non-finite entries, or too few
    rows.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DataValidationError(
            f"{name} must be 2-D [time, variables], got shape {X.shape}"
        )
    if X.shape[0] < min_rows:
        raise DataValidationError(
            f"{name} needs at least {min_rows} rows, got {X.shape[0]}"
        )
    if not np.isfinite(X).all():
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DataValidationError(
            f"{name} has a non-finite value at row {int(bad[0])}, "
            f"column {int(bad[1])}"
        )
    return X


def check_window_stack(X, input_len, channels, name="X"):
    """Coerce to `[n, S, C]` windows matching the fitted dimensions.

    Accepts a single `[S, C]` window or a stack; validates S and C
    against the fitted model.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise DataValidationError(
            f"{name} must be [S, C] or [n, S, C], got shape {X.shape}"
        )
    if X.shape[1] != input_len or X.shape[2] != channels:
        raise DataValidationError(
            f"{name} windows must be [{input_len}, {channels}], "
            f"got {tuple(X.shape[1:])}"
        )
    if not np.isfinite(X).all():
        raise DataValidationError(f"{name} has non-finite values")
    return X, single
