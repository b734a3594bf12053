"""Encoder-decoder forecaster with per-window stationarization and
de-stationary attention.

Forward pipeline for a raw window `x` of `S` time rows and `C` variables:

1. normalize `x` by its own per-variable statistics (skipped in
   `vanilla` mode);
2. project the de-stationarization factors `tau`, `delta` from the RAW
   window and its statistics (factor modes only); the same factor pair
   is shared by every attention layer;
3. embed (value projection plus sinusoidal positional encoding), run
   N encoder layers of de-stationary self-attention + feed-forward;
4. build the decoder input as the last `S/2` normalized rows followed
   by `O` zero rows, run M decoder layers (causally masked
   self-attention WITHOUT `delta` - the key length differs from `S` -
   then cross-attention against the encoder output with both factors);
5. apply a linear head, keep the last `O` rows, and de-normalize.

All predictions are produced in one step (no autoregressive loop).
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .attention import (
    FACTOR_PAIRINGS,
    AttentionConfig,
    DestatFactors,
    FactorProjector,
    causal_mask,
    multi_head_destat,
)
from .autodiff import ParameterSet, Tensor
from .errors import (
    CheckpointError,
    ConfigurationError,
    ModelExecutionError,
    ShapeMismatchError,
)
from .stationarization import DENORM_MODES, denormalize, normalize

MODEL_MODES = ("vanilla", "stationarization_only", "tau_only", "delta_only", "both")

CHECKPOINT_FORMAT = "destat-checkpoint"
CHECKPOINT_VERSION = 1

# Model modes that construct the factor projector, and the attention-level
# mode each model mode runs with.
_FACTOR_MODES = ("tau_only", "delta_only", "both")
_ATTENTION_MODE_FOR = {
    "vanilla": "vanilla",
    "stationarization_only": "vanilla",
    "tau_only": "tau_only",
    "delta_only": "delta_only",
    "both": "both",
}


@dataclass
class ModelConfig:
    """Hyperparameters of the forecaster.

    `input_len` must be even: the decoder consumes the trailing half of
    the input window as its start token block. `ffn_width` defaults to
    `4 * d_model`.
    """

    input_len: int = 96
    pred_len: int = 24
    channels: int = 7
    d_model: int = 512
    n_heads: int = 8
    encoder_layers: int = 2
    decoder_layers: int = 1
    ffn_width: int | None = None
    projector_hidden: int = 128
    mode: str = "both"
    factor_pairing: str = "main"
    denorm_mode: str = "inverse"
    epsilon: float = 1e-5
    dropout: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.ffn_width is None:
            self.ffn_width = 4 * self.d_model
        self.validate()

    def validate(self):
        if self.input_len < 2 or self.input_len % 2 != 0:
            raise ConfigurationError(
                f"input_len must be even and >= 2, got {self.input_len}"
            )
        if self.pred_len < 1:
            raise ConfigurationError(f"pred_len must be >= 1, got {self.pred_len}")
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")
        if self.d_model < 1 or self.n_heads < 1:
            raise ConfigurationError(
                f"d_model and n_heads must be >= 1, got {self.d_model}, {self.n_heads}"
            )
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigurationError("encoder_layers and decoder_layers must be >= 1")
        if self.ffn_width < 1:
            raise ConfigurationError(f"ffn_width must be >= 1, got {self.ffn_width}")
        if self.projector_hidden < 1:
            raise ConfigurationError(
                f"projector_hidden must be >= 1, got {self.projector_hidden}"
            )
        if self.mode not in MODEL_MODES:
            raise ConfigurationError(
                f"mode must be one of {MODEL_MODES}, got {self.mode!r}"
            )
        if self.factor_pairing not in FACTOR_PAIRINGS:
            raise ConfigurationError(
                f"factor_pairing must be one of {FACTOR_PAIRINGS}"
            )
        if self.denorm_mode not in DENORM_MODES:
            raise ConfigurationError(f"denorm_mode must be one of {DENORM_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def label_len(self):
        return self.input_len // 2


@dataclass
class ModelOutput:
    """Forward results: original-scale forecast plus internals."""

    y_hat: Tensor
    y_prime: Tensor | None = None
    stats: object | None = None
    factors: DestatFactors | None = None


def sinusoidal_encoding(max_len, d_model):
    """Fixed sin/cos positional table `[max_len, d_model]`."""
    pe = np.zeros((max_len, d_model))
    position = np.arange(max_len)[:, None].astype(np.float64)
    idx = np.arange(0, d_model, 2).astype(np.float64)
    div = np.exp(-math.log(10000.0) * idx / d_model)
    pe[:, 0::2] = np.sin(position * div)
    pe[:, 1::2] = np.cos(position * div)[:, : d_model // 2]
    return pe


def build_decoder_input(x_model, pred_len):
    """Trailing half of the (possibly normalized) window plus zero rows."""
    *lead, s, c = x_model.shape
    label = s // 2
    tail = x_model[..., label:, :]
    zeros = Tensor(np.zeros((*lead, pred_len, c)))
    return ad.concat([tail, zeros], axis=-2)


class NSTransformer:
    """The forecaster: parameters, forward pass, and parameter accounting.

    Base parameters (embeddings, attention, feed-forward, head) are
    drawn from one seeded stream and the projector from a second, so two
    models built from the same seed share identical base weights even
    when their modes differ.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params = ParameterSet()
        ss = np.random.SeedSequence(config.seed)
        base_ss, proj_ss, drop_ss = ss.spawn(3)
        rng = np.random.default_rng(base_ss)
        self._dropout_rng = np.random.default_rng(drop_ss)

        d, c = config.d_model, config.channels
        self._add_linear(rng, "enc_embed", c, d)
        self._add_linear(rng, "dec_embed", c, d)
        for i in range(config.encoder_layers):
            self._add_attention_block(rng, f"encoder.{i}.attn", d)
            self._add_layer_norm(f"encoder.{i}.ln1", d)
            self._add_ffn(rng, f"encoder.{i}.ffn", d, config.ffn_width)
            self._add_layer_norm(f"encoder.{i}.ln2", d)
        for i in range(config.decoder_layers):
            self._add_attention_block(rng, f"decoder.{i}.self_attn", d)
            self._add_layer_norm(f"decoder.{i}.ln1", d)
            self._add_attention_block(rng, f"decoder.{i}.cross_attn", d)
            self._add_layer_norm(f"decoder.{i}.ln2", d)
            self._add_ffn(rng, f"decoder.{i}.ffn", d, config.ffn_width)
            self._add_layer_norm(f"decoder.{i}.ln3", d)
        self._add_linear(rng, "head", d, c)

        self.projector = None
        if config.mode in _FACTOR_MODES:
            self.projector = FactorProjector(
                self.params,
                np.random.default_rng(proj_ss),
                seq_len=config.input_len,
                channels=config.channels,
                hidden=config.projector_hidden,
                mode=_ATTENTION_MODE_FOR[config.mode],
                pairing=config.factor_pairing,
            )

        self._attn_config = AttentionConfig(
            d_k=d // config.n_heads,
            n_heads=config.n_heads,
            mode=_ATTENTION_MODE_FOR[config.mode],
        )
        max_len = max(config.input_len, config.label_len + config.pred_len)
        self._pos_table = sinusoidal_encoding(max_len, d)
        self._dec_mask = causal_mask(config.label_len + config.pred_len)

    # ---- parameter construction -------------------------------------------

    def _xavier(self, rng, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def _add_linear(self, rng, path, fan_in, fan_out):
        self.params.add(f"{path}.w", self._xavier(rng, fan_in, fan_out))
        self.params.add(f"{path}.b", np.zeros(fan_out))

    def _add_attention_block(self, rng, path, d):
        for name in ("q", "k", "v", "o"):
            self._add_linear(rng, f"{path}.{name}", d, d)

    def _add_layer_norm(self, path, d):
        self.params.add(f"{path}.g", np.ones(d))
        self.params.add(f"{path}.b", np.zeros(d))

    def _add_ffn(self, rng, path, d, width):
        self._add_linear(rng, f"{path}.fc1", d, width)
        self._add_linear(rng, f"{path}.fc2", width, d)

    def count_parameters(self):
        """(base_count, projector_count) by parameter-path prefix."""
        projector = self.params.count(prefix="projector.")
        return self.params.count() - projector, projector

    # ---- forward ------------------------------------------------------------

    def forward(self, x, train=False):
        """Run the model on `[S, C]` or `[B, S, C]` input.

        Returns a ModelOutput whose `y_hat` follows the input batching
        (`[O, C]` or `[B, O, C]`). `train=True` enables dropout.
        """
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1, *x.shape))
        if x.ndim != 3 or x.shape[-2] != self.config.input_len \
                or x.shape[-1] != self.config.channels:
            raise ShapeMismatchError(
                f"expected input [batch, {self.config.input_len}, "
                f"{self.config.channels}], got {tuple(x.shape)}"
            )

        cfg = self.config
        if cfg.mode == "vanilla":
            x_model, stats = x, None
        else:
            x_model, stats = normalize(x, epsilon=cfg.epsilon)

        factors = None
        if self.projector is not None:
            factors = self.projector(x, stats)
        # Decoder self-attention keys are label_len + pred_len rows, not S,
        # so the per-key shift cannot apply there.
        factors_no_delta = None
        if factors is not None:
            factors_no_delta = DestatFactors(tau=factors.tau, delta=None)

        enc = self._embed(x_model, "enc_embed", train)
        for i in range(cfg.encoder_layers):
            enc = self._run_layer(
                "encoder", i, self._encoder_layer, enc, factors, train
            )

        dec_in = build_decoder_input(x_model, cfg.pred_len)
        dec = self._embed(dec_in, "dec_embed", train)
        for i in range(cfg.decoder_layers):
            dec = self._run_layer(
                "decoder", i, self._decoder_layer, dec, (enc, factors,
                                                         factors_no_delta), train
            )

        out = ad.add(ad.matmul(dec, self.params["head.w"]), self.params["head.b"])
        y_prime = out[..., -cfg.pred_len:, :]

        if cfg.mode == "vanilla":
            y_hat = y_prime
            y_prime_out = None
        else:
            y_hat = denormalize(y_prime, stats, mode=cfg.denorm_mode)
            y_prime_out = y_prime
        if single:
            y_hat = ad.reshape(y_hat, y_hat.shape[1:])
            if y_prime_out is not None:
                y_prime_out = ad.reshape(y_prime_out, y_prime_out.shape[1:])
        return ModelOutput(y_hat=y_hat, y_prime=y_prime_out, stats=stats,
                           factors=factors)

    def predict(self, x):
        """Original-scale forecast values without graph construction."""
        with ad.no_grad():
            return self.forward(x, train=False).y_hat.data

    def _run_layer(self, kind, index, fn, x, extra, train):
        try:
            return fn(index, x, extra, train)
        except Exception as e:
            if isinstance(e, ModelExecutionError):
                raise
            raise ModelExecutionError(f"{kind} layer {index}: {e}") from e

    def _embed(self, x, path, train):
        proj = ad.add(ad.matmul(x, self.params[f"{path}.w"]),
                      self.params[f"{path}.b"])
        length = proj.shape[-2]
        return ad.add(proj, Tensor(self._pos_table[:length]))

    def _dropout_fn(self, train):
        rate = self.config.dropout
        if not train or rate == 0.0:
            return None

        def apply(t):
            keep = self._dropout_rng.random(t.shape) >= rate
            return ad.mul(t, Tensor(keep / (1.0 - rate)))

        return apply

    def _attention(self, path, q_src, kv_src, factors, train, mask=None):
        p = self.params
        q = ad.add(ad.matmul(q_src, p[f"{path}.q.w"]), p[f"{path}.q.b"])
        k = ad.add(ad.matmul(kv_src, p[f"{path}.k.w"]), p[f"{path}.k.b"])
        v = ad.add(ad.matmul(kv_src, p[f"{path}.v.w"]), p[f"{path}.v.b"])
        out, _ = multi_head_destat(
            q, k, v, self._attn_config, factors=factors,
            out_w=p[f"{path}.o.w"], out_b=p[f"{path}.o.b"], mask=mask,
            weights_dropout=self._dropout_fn(train),
        )
        return out

    def _ffn(self, path, x):
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{path}.fc1.w"]), p[f"{path}.fc1.b"]))
        return ad.add(ad.matmul(h, p[f"{path}.fc2.w"]), p[f"{path}.fc2.b"])

    def _residual_norm(self, ln_path, x, sub_out, train, dropout_sub=False):
        if dropout_sub:
            drop = self._dropout_fn(train)
            if drop is not None:
                sub_out = drop(sub_out)
        p = self.params
        return ad.layer_norm(ad.add(x, sub_out), p[f"{ln_path}.g"],
                             p[f"{ln_path}.b"])

    def _encoder_layer(self, i, x, factors, train):
        attn = self._attention(f"encoder.{i}.attn", x, x, factors, train)
        x = self._residual_norm(f"encoder.{i}.ln1", x, attn, train)
        ffn = self._ffn(f"encoder.{i}.ffn", x)
        return self._residual_norm(f"encoder.{i}.ln2", x, ffn, train,
                                   dropout_sub=True)

    def _decoder_layer(self, i, x, extra, train):
        enc, factors, factors_no_delta = extra
        self_attn = self._attention(
            f"decoder.{i}.self_attn", x, x, factors_no_delta, train,
            mask=self._dec_mask,
        )
        x = self._residual_norm(f"decoder.{i}.ln1", x, self_attn, train)
        cross = self._attention(f"decoder.{i}.cross_attn", x, enc, factors, train)
        x = self._residual_norm(f"decoder.{i}.ln2", x, cross, train)
        ffn = self._ffn(f"decoder.{i}.ffn", x)
        return self._residual_norm(f"decoder.{i}.ln3", x, ffn, train,
                                   dropout_sub=True)


# ---- checkpointing ------------------------------------------------------------


def save_checkpoint(model, path):
    """Write parameters plus config as a versioned npz key-value dump."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
    }
    arrays = {f"param::{k}": v for k, v in model.params.state_arrays().items()}
    arrays["__meta__"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint written by `save_checkpoint`."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data:
                raise CheckpointError(f"{path}: missing __meta__ entry")
            meta = json.loads(str(data["__meta__"]))
            arrays = {
                key[len("param::"):]: data[key]
                for key in data.files
                if key.startswith("param::")
            }
    except (OSError, ValueError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {meta.get('version')}"
        )
    try:
        config = ModelConfig(**meta["config"])
    except (TypeError, ConfigurationError) as e:
        raise CheckpointError(f"{path}: invalid stored config: {e}") from e
    model = NSTransformer(config)
    model.params.load_arrays(arrays)
    return model
