"""Dataset loading, chronological splitting, windowing, synthetic series.

CSV files have a header row; an optional leading timestamp column
(header named date/time/timestamp/datetime, case-insensitive) is kept as
labels but excluded from the value matrix. Splits are contiguous,
chronological, and non-overlapping. Sliding windows never mix rows from
different splits, except that validation/test windows may reach back
into an S-row context prefix from the preceding segment so their first
forecast targets are predictable.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataValidationError

TIMESTAMP_HEADERS = {"date", "time", "timestamp", "datetime"}

SYNTHETIC_KINDS = ("trend_seasonal", "ar1", "random_walk", "white_noise")

MISSING_POLICIES = ("strict", "forward_fill")


@dataclass
class Dataset:
    """A named multivariate series: values `[T, C]` plus column names."""

    name: str
    values: np.ndarray
    columns: list
    timestamps: list | None = None

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]


@dataclass
class SeriesWindow:
    """One supervised example: `x` is `[S, C]`, `target` is `[O, C]`.

    `start` is the row index of the first input row in the source
    series; `split` names the segment the window belongs to.
    """

    x: np.ndarray
    target: np.ndarray
    start: int = 0
    split: str = ""


@dataclass
class SplitSpec:
    """Chronological split ratios, e.g. (7, 2, 2) or (3, 1, 1)."""

    train: float = 7.0
    val: float = 2.0
    test: float = 2.0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or \
                self.train + self.val + self.test <= 0:
            raise ConfigurationError(
                f"split ratios must be non-negative with positive sum, got "
                f"({self.train}, {self.val}, {self.test})"
            )

    def boundaries(self, length):
        """Row indices [0, a, b, length] delimiting train/val/test."""
        total = self.train + self.val + self.test
        a = int(length * self.train / total)
        b = int(length * (self.train + self.val) / total)
        return 0, a, b, length


@dataclass
class SyntheticSpec:
    """Recipe for a generated series; `params` tunes the chosen kind."""

    kind: str
    length: int
    channels: int = 1
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ConfigurationError(
                f"kind must be one of {SYNTHETIC_KINDS}, got {self.kind!r}"
            )
        if self.length < 1:
            raise ConfigurationError(f"length must be >= 1, got {self.length}")
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")


# ---- CSV ------------------------------------------------------------------------


def load_csv(path, name=None, missing_policy="strict"):
    """Read a delimited series file into a Dataset.

    Unparseable or missing cells raise DataValidationError naming the
    1-based data row and the column; with `missing_policy="forward_fill"`
    empty cells repeat the previous row's value instead (leading gaps
    still raise).
    """
    if missing_policy not in MISSING_POLICIES:
        raise ConfigurationError(
            f"missing_policy must be one of {MISSING_POLICIES}"
        )
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: file is empty") from None
        rows = list(reader)
    if not rows:
        raise DataValidationError(f"{path}: no data rows")

    header = [h.strip() for h in header]
    has_timestamp = bool(header) and header[0].lower() in TIMESTAMP_HEADERS
    value_columns = header[1:] if has_timestamp else header
    if not value_columns:
        raise DataValidationError(f"{path}: no value columns")
    first = 1 if has_timestamp else 0

    timestamps = [] if has_timestamp else None
    values = np.empty((len(rows), len(value_columns)))
    last_valid = [None] * len(value_columns)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataValidationError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {len(header)}"
            )
        if has_timestamp:
            timestamps.append(row[0])
        for j, cell in enumerate(row[first:]):
            cell = cell.strip()
            column = value_columns[j]
            if cell == "":
                if missing_policy == "forward_fill" and last_valid[j] is not None:
                    values[r, j] = last_valid[j]
                    continue
                raise DataValidationError(
                    f"{path}: missing value at row {r + 1}, column {column!r}"
                )
            try:
                parsed = float(cell)
            except ValueError:
                raise DataValidationError(
                    f"{path}: unparseable value {cell!r} at row {r + 1}, "
                    f"column {column!r}"
                ) from None
            if not np.isfinite(parsed):
                raise DataValidationError(
                    f"{path}: non-finite value at row {r + 1}, column {column!r}"
                )
            values[r, j] = parsed
            last_valid[j] = parsed
    return Dataset(
        name=name or str(path),
        values=values,
        columns=value_columns,
        timestamps=timestamps,
    )


def save_csv(dataset, path):
    """Write a Dataset back out with a header row (repr round-trips floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if dataset.timestamps is not None:
            writer.writerow(["date", *dataset.columns])
            for ts, row in zip(dataset.timestamps, dataset.values):
                writer.writerow([ts, *[repr(float(v)) for v in row]])
        else:
            writer.writerow(dataset.columns)
            for row in dataset.values:
                writer.writerow([repr(float(v)) for v in row])


# ---- windowing ------------------------------------------------------------------


def make_windows(values, input_len, pred_len, split=None, stride=1,
                 context_prefix=True):
    """Sliding supervised windows, grouped chronologically by split.

    Returns `{"train": [...], "val": [...], "test": [...]}` of
    SeriesWindow (a single `{"all": [...]}` group when `split` is None).
    Targets always lie inside their own segment; with `context_prefix`
    the val/test inputs may start up to `input_len` rows before the
    segment so the first in-segment rows are predictable. Each segment
    must fit at least one window.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataValidationError(f"expected [T, C], got shape {values.shape}")
    if input_len < 2 or pred_len < 1 or stride < 1:
        raise ConfigurationError(
            f"need input_len >= 2, pred_len >= 1, stride >= 1; got "
            f"{input_len}, {pred_len}, {stride}"
        )
    length = values.shape[0]
    if split is None:
        segments = [("all", 0, length, False)]
    else:
        _, a, b, end = split.boundaries(length)
        segments = [
            ("train", 0, a, False),
            ("val", a, b, context_prefix),
            ("test", b, end, context_prefix),
        ]

    out = {}
    for name, seg_start, seg_end, prefixed in segments:
        windows = []
        # A prefixed segment may read inputs up to input_len rows earlier,
        # which still keeps every target row inside [seg_start, seg_end).
        start = max(seg_start - input_len, 0) if prefixed else seg_start
        while start + input_len + pred_len <= seg_end:
            t0 = start + input_len
            windows.append(
                SeriesWindow(
                    x=values[start:t0].copy(),
                    target=values[t0:t0 + pred_len].copy(),
                    start=start,
                    split=name,
                )
            )
            start += stride
        if not windows:
            raise DataValidationError(
                f"segment {name!r} (rows {seg_start}..{seg_end}) too short for "
                f"input_len={input_len}, pred_len={pred_len}"
            )
        out[name] = windows
    return out


def stack_windows(windows):
    """Batch a window list into `(x [B,S,C], target [B,O,C])` arrays."""
    x = np.stack([w.x for w in windows])
    y = np.stack([w.target for w in windows])
    return x, y


# ---- synthetic generators -------------------------------------------------------


def _param(spec, key, default):
    return spec.params.get(key, default)


def _per_channel(rng, spec, key, default_range):
    """Per-channel parameter: explicit scalar/list, or seeded range draw."""
    value = spec.params.get(key, default_range)
    c = spec.channels
    if np.isscalar(value):
        return np.full(c, float(value))
    value = list(value)
    if len(value) == 2 and all(np.isscalar(v) for v in value) and key.endswith("_range"):
        return rng.uniform(value[0], value[1], size=c)
    if len(value) == c:
        return np.asarray(value, dtype=np.float64)
    if len(value) == 2:
        return rng.uniform(value[0], value[1], size=c)
    raise ConfigurationError(
        f"synthetic param {key!r} must be a scalar, a (low, high) range, or "
        f"one value per channel"
    )


def generate_synthetic(spec):
    """Deterministically generate a series from a SyntheticSpec.

    Kinds:
      * `white_noise`: iid Gaussian, param `sigma`.
      * `ar1`: driftless AR(1) `y_t = phi * y_{t-1} + e_t`, params `phi`
        (|phi| < 1), `sigma`.
      * `random_walk`: cumulative sum of Gaussian steps, param `sigma`.
      * `trend_seasonal`: per channel `amplitude * scale(t) * sin(2 pi t
        / period + phase) + slope * t + noise_sigma * scale(t) * e_t`,
        where `scale(t)` is piecewise-constant over `n_regimes` equal
        blocks with multipliers from `regime_range` (or an explicit
        `regime_scales` list). Explicit scalar params bypass range draws.
    """
    rng = np.random.default_rng(spec.seed)
    t_len, c = spec.length, spec.channels

    if spec.kind == "white_noise":
        sigma = float(_param(spec, "sigma", 1.0))
        values = sigma * rng.standard_normal((t_len, c))
    elif spec.kind == "random_walk":
        sigma = float(_param(spec, "sigma", 1.0))
        values = np.cumsum(sigma * rng.standard_normal((t_len, c)), axis=0)
    elif spec.kind == "ar1":
        phi = float(_param(spec, "phi", 0.8))
        if abs(phi) >= 1.0:
            raise ConfigurationError(f"ar1 needs |phi| < 1, got {phi}")
        sigma = float(_param(spec, "sigma", 1.0))
        shocks = sigma * rng.standard_normal((t_len, c))
        values = np.empty_like(shocks)
        values[0] = shocks[0]
        for t in range(1, t_len):
            values[t] = phi * values[t - 1] + shocks[t]
    else:  # trend_seasonal
        amplitude = _per_channel(rng, spec, "amplitude", (1.0, 3.0))
        period = _per_channel(rng, spec, "period", (16.0, 64.0))
        phase = _per_channel(rng, spec, "phase", (0.0, 2 * np.pi))
        slope = _per_channel(rng, spec, "slope", (-0.01, 0.01))
        noise_sigma = _per_channel(rng, spec, "noise_sigma", (0.1, 0.5))
        n_regimes = int(_param(spec, "n_regimes", 4))
        if n_regimes < 1:
            raise ConfigurationError(f"n_regimes must be >= 1, got {n_regimes}")
        if "regime_scales" in spec.params:
            scales = np.asarray(spec.params["regime_scales"], dtype=np.float64)
            if scales.shape != (n_regimes,):
                raise ConfigurationError(
                    f"regime_scales must have n_regimes={n_regimes} entries"
                )
        else:
            lo, hi = _param(spec, "regime_range", (0.5, 3.0))
            scales = rng.uniform(lo, hi, size=n_regimes)
        boundaries = np.linspace(0, t_len, n_regimes + 1).astype(int)
        scale_t = np.empty(t_len)
        for i in range(n_regimes):
            scale_t[boundaries[i]:boundaries[i + 1]] = scales[i]
        t = np.arange(t_len, dtype=np.float64)[:, None]
        noise = rng.standard_normal((t_len, c))
        values = (
            amplitude[None, :] * scale_t[:, None]
            * np.sin(2 * np.pi * t / period[None, :] + phase[None, :])
            + slope[None, :] * t
            + noise_sigma[None, :] * scale_t[:, None] * noise
        )

    columns = [f"v{j + 1}" for j in range(c)]
    return Dataset(name=f"synthetic-{spec.kind}", values=values, columns=columns)
