"""De-stationary attention: factor projection and rescaled dot-product attention.

Per-window normalization erases scale and level information from the
attention inputs. The factor projector reads the RAW window together
with its statistics and emits a positive per-window rescaling factor
``tau`` and a per-key-position shift vector ``delta``; attention then
computes ``softmax((tau * Q K^T + 1 delta^T) / sqrt(d_k)) V``, which can
re-express the attention pattern the un-normalized inputs would have
produced. Masking, when requested, is applied after the rescaling and
before the softmax. Ablation modes disable either factor or both.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import (
    AssumptionViolationError,
    ConfigurationError,
    ShapeMismatchError,
)

ATTENTION_MODES = ("vanilla", "tau_only", "delta_only", "both")
FACTOR_PAIRINGS = ("main", "appendix")

NEG_INF = -np.inf


@dataclass
class DestatFactors:
    """Shared de-stationarization factors for one window (or batch).

    `tau` is positive with shape `[1]` (single window) or `[B, 1]`;
    `delta` has shape `[S]` or `[B, S]`. Either may be None when the
    active mode does not use it. The same object is passed to every
    attention layer of a forward pass.
    """

    tau: Tensor | None = None
    delta: Tensor | None = None


@dataclass
class AttentionConfig:
    """Head layout and ablation mode for de-stationary attention."""

    d_k: int
    n_heads: int = 1
    mode: str = "both"

    def __post_init__(self):
        if self.d_k < 1:
            raise ConfigurationError(f"d_k must be >= 1, got {self.d_k}")
        if self.n_heads < 1:
            raise ConfigurationError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.mode not in ATTENTION_MODES:
            raise ConfigurationError(
                f"mode must be one of {ATTENTION_MODES}, got {self.mode!r}"
            )

    @property
    def d_model(self):
        return self.d_k * self.n_heads


def causal_mask(l_q, l_k=None):
    """Additive mask forbidding attention to keys ahead of the query.

    Rectangular masks right-align the key axis: query row i may attend
    key j only when ``j - i <= l_k - l_q``.
    """
    l_k = l_q if l_k is None else l_k
    offset = l_k - l_q
    rows = np.arange(l_q)[:, None]
    cols = np.arange(l_k)[None, :]
    mask = np.where(cols - rows > offset, NEG_INF, 0.0)
    return Tensor(mask)


def _uses_tau(mode):
    return mode in ("tau_only", "both")


def _uses_delta(mode):
    return mode in ("delta_only", "both")


def destationary_attention(q, k, v, factors=None, mode="both", mask=None,
                           weights_dropout=None):
    """Scaled dot-product attention with de-stationarization factors.

    Args:
        q, k, v: Tensors shaped `[..., L, d]`; leading axes broadcast.
        factors: DestatFactors or None. Inactive or absent factors are
            skipped (a key length that cannot match `delta` is the
            caller's cue to pass `delta=None`).
        mode: one of ATTENTION_MODES.
        mask: additive Tensor/array broadcastable to the score matrix,
            applied after the factor rescaling.
        weights_dropout: optional callable applied to the softmax output
            (training-time regularization).

    Returns:
        (output `[..., Lq, dv]`, weights `[..., Lq, Lk]`).
    """
    if mode not in ATTENTION_MODES:
        raise ConfigurationError(f"mode must be one of {ATTENTION_MODES}, got {mode!r}")
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(
            f"query width {q.shape[-1]} != key width {k.shape[-1]}"
        )
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(
            f"key length {k.shape[-2]} != value length {v.shape[-2]}"
        )
    d_k = q.shape[-1]
    l_k = k.shape[-2]

    scores = ad.matmul(q, ad.swap_axes(k, -1, -2))
    if factors is not None and _uses_tau(mode) and factors.tau is not None:
        tau = factors.tau
        if not np.all(tau.data > 0.0):
            raise AssumptionViolationError("tau must be strictly positive")
        scores = ad.mul(scores, _lift_factor(tau, scores.ndim, last=1))
    if factors is not None and _uses_delta(mode) and factors.delta is not None:
        delta = factors.delta
        if delta.shape[-1] != l_k:
            raise ShapeMismatchError(
                f"delta length {delta.shape[-1]} != key length {l_k}"
            )
        scores = ad.add(scores, _lift_factor(delta, scores.ndim, last=l_k))
    scores = ad.div(scores, math.sqrt(d_k))
    if mask is not None:
        mask = mask if isinstance(mask, Tensor) else Tensor(mask)
        scores = ad.add(scores, mask)
    weights = ad.softmax_rows(scores)
    if weights_dropout is not None:
        weights = weights_dropout(weights)
    output = ad.matmul(weights, v)
    return output, weights


def _lift_factor(t, score_ndim, last):
    """Reshape a `[..., last]` factor so it broadcasts against scores.

    A 1-D factor broadcasts as-is. A factor with leading batch axes gets
    singleton axes inserted before its last axis until its rank matches
    the score matrix (batch axes stay left-aligned).
    """
    if t.ndim <= 1:
        return t
    need = score_ndim - t.ndim
    if need <= 0:
        return t
    shape = t.shape[:-1] + (1,) * need + (t.shape[-1],)
    return ad.reshape(t, shape)


def multi_head_destat(q, k, v, config, factors=None, out_w=None, out_b=None,
                      mask=None, weights_dropout=None):
    """Multi-head de-stationary attention over pre-projected inputs.

    `q`, `k`, `v` are `[..., L, d_model]` with `d_model = n_heads * d_k`;
    every head observes the same shared factors. Heads are concatenated
    and, when `out_w` is given, linearly projected.

    Returns:
        (output `[..., Lq, d_model]`, weights `[..., n_heads, Lq, Lk]`).
    """
    q = q if isinstance(q, Tensor) else Tensor(q)
    k = k if isinstance(k, Tensor) else Tensor(k)
    v = v if isinstance(v, Tensor) else Tensor(v)
    h = config.n_heads
    if q.shape[-1] != config.d_model:
        raise ConfigurationError(
            f"model width {q.shape[-1]} does not equal n_heads*d_k = {config.d_model}"
        )
    if q.shape[-1] % h != 0:
        raise ConfigurationError(
            f"model width {q.shape[-1]} not divisible by n_heads={h}"
        )

    qh, kh, vh = (_split_heads(t, h) for t in (q, k, v))
    out, weights = destationary_attention(
        qh, kh, vh, factors=factors, mode=config.mode, mask=mask,
        weights_dropout=weights_dropout,
    )
    merged = _merge_heads(out)
    if out_w is not None:
        merged = ad.matmul(merged, out_w)
        if out_b is not None:
            merged = ad.add(merged, out_b)
    if h == 1:
        weights = _squeeze_head_axis(weights)
    return merged, weights


def _split_heads(t, n_heads):
    """`[..., L, D]` -> `[..., H, L, D/H]`; no-op axis shuffle for H=1."""
    *lead, length, width = t.shape
    t = ad.reshape(t, (*lead, length, n_heads, width // n_heads))
    return ad.swap_axes(t, -2, -3)


def _merge_heads(t):
    """`[..., H, L, dh]` -> `[..., L, H*dh]`."""
    t = ad.swap_axes(t, -2, -3)
    *lead, length, n_heads, dh = t.shape
    return ad.reshape(t, (*lead, length, n_heads * dh))


def _squeeze_head_axis(weights):
    """Drop the singleton head axis so n_heads=1 matches the single-head kernel."""
    *lead, one, l_q, l_k = weights.shape
    return ad.reshape(weights, (*lead, l_q, l_k))


class FactorProjector:
    """Two-layer MLP heads mapping a raw window and its statistics to factors.

    Each head first compresses the raw window over the time axis with a
    learned linear pooling (weights shared across variables), then feeds
    the pooled per-variable summary concatenated with the per-variable
    statistic vector through Linear -> ReLU -> Linear. The `tau` head
    exponentiates a single logit (so `tau` is always positive); the
    `delta` head emits one value per key position. Output layers start
    at exactly zero, so a fresh projector yields `tau = 1`, `delta = 0`
    and de-stationary attention degenerates to vanilla attention.

    `pairing` selects which statistic feeds which head: "main" pairs
    `tau` with sigma and `delta` with mu; "appendix" swaps them.
    """

    def __init__(self, params, rng, seq_len, channels, hidden,
                 mode="both", pairing="main", prefix="projector"):
        if seq_len < 1 or channels < 1:
            raise ConfigurationError(
                f"seq_len and channels must be >= 1, got {seq_len}, {channels}"
            )
        if hidden < 1:
            raise ConfigurationError(f"hidden width must be >= 1, got {hidden}")
        if mode not in ATTENTION_MODES:
            raise ConfigurationError(f"mode must be one of {ATTENTION_MODES}")
        if pairing not in FACTOR_PAIRINGS:
            raise ConfigurationError(
                f"pairing must be one of {FACTOR_PAIRINGS}, got {pairing!r}"
            )
        self.seq_len = seq_len
        self.channels = channels
        self.hidden = hidden
        self.mode = mode
        self.pairing = pairing
        self.heads = {}
        if _uses_tau(mode):
            self.heads["tau"] = self._build_head(params, rng, prefix, "tau", out_dim=1)
        if _uses_delta(mode):
            self.heads["delta"] = self._build_head(
                params, rng, prefix, "delta", out_dim=seq_len
            )

    def _build_head(self, params, rng, prefix, name, out_dim):
        s, c, h = self.seq_len, self.channels, self.hidden
        base = f"{prefix}.{name}"
        fan_in, fan_out = 2 * c, h
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return {
            # Time pooling starts as the plain time average.
            "pool_w": params.add(f"{base}.pool_w", np.full((s, 1), 1.0 / s)),
            "pool_b": params.add(f"{base}.pool_b", np.zeros(1)),
            "fc1_w": params.add(
                f"{base}.fc1_w", rng.uniform(-limit, limit, size=(2 * c, h))
            ),
            "fc1_b": params.add(f"{base}.fc1_b", np.zeros(h)),
            # Zero output layer: factors are exactly neutral at init.
            "fc2_w": params.add(f"{base}.fc2_w", np.zeros((h, out_dim))),
            "fc2_b": params.add(f"{base}.fc2_b", np.zeros(out_dim)),
        }

    def __call__(self, raw_x, stats):
        """Project a raw window (plus statistics) to DestatFactors.

        `raw_x` is `[S, C]` or `[B, S, C]`; outputs follow the batching
        (`tau`: `[1]` or `[B, 1]`; `delta`: `[S]` or `[B, S]`).
        """
        x = raw_x if isinstance(raw_x, Tensor) else Tensor(raw_x)
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1, *x.shape))
        if x.shape[-2] != self.seq_len or x.shape[-1] != self.channels:
            raise ConfigurationError(
                f"projector built for [S={self.seq_len}, C={self.channels}] windows, "
                f"got {tuple(x.shape[-2:])}"
            )
        batch = x.shape[0]
        stat_for = {"tau": stats.sigma, "delta": stats.mu}
        if self.pairing == "appendix":
            stat_for = {"tau": stats.mu, "delta": stats.sigma}

        tau = delta = None
        if "tau" in self.heads:
            logits = self._head_forward(self.heads["tau"], x, stat_for["tau"], batch)
            tau = ad.exp(logits)
        if "delta" in self.heads:
            delta = self._head_forward(self.heads["delta"], x, stat_for["delta"], batch)
        if single:
            tau = ad.reshape(tau, (tau.shape[-1],)) if tau is not None else None
            delta = ad.reshape(delta, (delta.shape[-1],)) if delta is not None else None
        return DestatFactors(tau=tau, delta=delta)

    def _head_forward(self, head, x, stat, batch):
        pooled = ad.matmul(ad.swap_axes(x, -1, -2), head["pool_w"])  # [B, C, 1]
        pooled = ad.add(ad.reshape(pooled, (batch, self.channels)), head["pool_b"])
        stat = stat if isinstance(stat, Tensor) else Tensor(stat)
        stat_vec = ad.reshape(stat, (batch, self.channels))
        inp = ad.concat([pooled, stat_vec], axis=-1)  # [B, 2C]
        hidden = ad.relu(ad.add(ad.matmul(inp, head["fc1_w"]), head["fc1_b"]))
        return ad.add(ad.matmul(hidden, head["fc2_w"]), head["fc2_b"])


def project_factors(projector, raw_x, stats):
    """Functional alias for FactorProjector.__call__."""
    return projector(raw_x, stats)
