"""Four dialogue-policy architectures over frozen encoder activation stacks.

A1: last text layer at the decision position, linear predictor.
A2: A1 vector concatenated with time-averaged selected speech layers.
A3: learned layer-weighted sum over text, MHA fusion, attention pooling.
A4: layer-weighted sums of both modalities concatenated along time
    (speech first), then the same MHA + pooling head as A3.

All activations enter the graph as constants; only the parameters held in
FusionParams receive gradients.
"""

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embx import ActivationStack
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    TruncationError,
    ValidationError,
)

VARIANTS = ("A1", "A2", "A3", "A4")
NEG_INF = np.float32(-np.inf)

CHECKPOINT_MAGIC = b"DFCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureConfig:
    variant: str
    n_classes: int
    text_layers: int
    text_dim: int
    heads: int = 4
    speech_layers: int = 0
    speech_dim: int = 0
    selected_speech_layers: tuple = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_classes < 2:
            raise ValidationError("n_classes must be at least 2")
        if self.text_layers < 1 or self.text_dim < 1:
            raise ValidationError("text stack extents must be positive")
        object.__setattr__(self, "selected_speech_layers", tuple(self.selected_speech_layers))
        if self.variant == "A2":
            if not self.selected_speech_layers:
                raise ValidationError("A2 requires non-empty selected_speech_layers")
            if any(not 0 <= i < self.speech_layers for i in self.selected_speech_layers):
                raise ValidationError(
                    f"selected speech layers {self.selected_speech_layers} out of range "
                    f"for {self.speech_layers} layers"
                )
        elif self.selected_speech_layers:
            raise ValidationError("selected_speech_layers is A2-only")
        if self.uses_speech and (self.speech_layers < 1 or self.speech_dim < 1):
            raise ValidationError(f"{self.variant} requires speech stack extents")
        if self.uses_mha:
            if self.heads < 1:
                raise ValidationError("heads must be positive")
            if self.text_dim % self.heads:
                raise DimensionError(
                    f"model dim {self.text_dim} not divisible by {self.heads} heads"
                )

    @property
    def uses_speech(self):
        return self.variant in ("A2", "A4")

    @property
    def uses_mha(self):
        return self.variant in ("A3", "A4")

    @property
    def model_dim(self):
        return self.text_dim

    @property
    def predictor_in(self):
        if self.variant == "A2":
            return self.text_dim + len(self.selected_speech_layers) * self.speech_dim
        return self.text_dim

    def to_json(self):
        return json.dumps(
            {
                "variant": self.variant,
                "n_classes": self.n_classes,
                "text_layers": self.text_layers,
                "text_dim": self.text_dim,
                "heads": self.heads,
                "speech_layers": self.speech_layers,
                "speech_dim": self.speech_dim,
                "selected_speech_layers": list(self.selected_speech_layers),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, payload):
        raw = json.loads(payload)
        raw["selected_speech_layers"] = tuple(raw.get("selected_speech_layers", ()))
        return cls(**raw)


@dataclass
class MhaParams:
    W_q: T.Tensor
    b_q: T.Tensor
    W_k: T.Tensor
    b_k: T.Tensor
    W_v: T.Tensor
    b_v: T.Tensor
    W_o: T.Tensor
    b_o: T.Tensor
    heads: int = 4


@dataclass
class FusionParams:
    predictor_W: T.Tensor  # (n_classes, predictor_in)
    predictor_b: T.Tensor  # (n_classes,)
    text_layer_logits: T.Tensor | None = None
    speech_layer_logits: T.Tensor | None = None
    adapter_W: T.Tensor | None = None  # (speech_dim, model_dim)
    adapter_b: T.Tensor | None = None
    mha: MhaParams | None = None
    pool_query: T.Tensor | None = None

    @classmethod
    def init(cls, config, rng):
        """Fresh parameters: Xavier-uniform projections, zero biases/logits,
        zero pool query (uniform averaging at the start), identity adapter
        when the modality dims already match."""

        def xavier(shape, fan_in, fan_out, name):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            return T.parameter(data, name=name)

        def zeros(shape, name):
            return T.parameter(np.zeros(shape, np.float32), name=name)

        d = config.model_dim
        kwargs = {}
        if config.uses_mha:
            kwargs["text_layer_logits"] = zeros((config.text_layers,), "text_layer_logits")
            kwargs["mha"] = MhaParams(
                W_q=xavier((d, d), d, d, "mha.W_q"),
                b_q=zeros((d,), "mha.b_q"),
                W_k=xavier((d, d), d, d, "mha.W_k"),
                b_k=zeros((d,), "mha.b_k"),
                W_v=xavier((d, d), d, d, "mha.W_v"),
                b_v=zeros((d,), "mha.b_v"),
                W_o=xavier((d, d), d, d, "mha.W_o"),
                b_o=zeros((d,), "mha.b_o"),
                heads=config.heads,
            )
            kwargs["pool_query"] = zeros((d,), "pool_query")
        if config.variant == "A4":
            kwargs["speech_layer_logits"] = zeros(
                (config.speech_layers,), "speech_layer_logits"
            )
            if config.speech_dim == d:
                adapter = T.parameter(np.eye(d, dtype=np.float32), name="adapter_W")
            else:
                adapter = xavier((config.speech_dim, d), config.speech_dim, d, "adapter_W")
            kwargs["adapter_W"] = adapter
            kwargs["adapter_b"] = zeros((d,), "adapter_b")
        predictor_W = xavier(
            (config.n_classes, config.predictor_in),
            config.predictor_in,
            config.n_classes,
            "predictor_W",
        )
        predictor_b = zeros((config.n_classes,), "predictor_b")
        return cls(predictor_W=predictor_W, predictor_b=predictor_b, **kwargs)

    def named_parameters(self):
        """Stable name -> tensor mapping; order fixes optimizer slot layout
        and checkpoint block order."""
        out = {}
        for name in ("text_layer_logits", "speech_layer_logits", "adapter_W", "adapter_b"):
            tensor = getattr(self, name)
            if tensor is not None:
                out[name] = tensor
        if self.mha is not None:
            for name in ("W_q", "b_q", "W_k", "b_k", "W_v", "b_v", "W_o", "b_o"):
                out[f"mha.{name}"] = getattr(self.mha, name)
        if self.pool_query is not None:
            out["pool_query"] = self.pool_query
        out["predictor_W"] = self.predictor_W
        out["predictor_b"] = self.predictor_b
        return out


# -- primitives -----------------------------------------------------------------


def _stack_values(stack):
    return stack.values if isinstance(stack, ActivationStack) else np.asarray(stack)


def layer_weighted_sum(stack, logits):
    """Token-wise convex combination of the L layers with softmax(logits)."""
    values = _stack_values(stack)
    logits = T.as_tensor(logits)
    if logits.data.shape != (values.shape[0],):
        raise DimensionError(
            f"logits shape {logits.data.shape} does not match {values.shape[0]} layers"
        )
    weights = T.softmax(logits, axis=-1)
    return T.layer_combine(weights, T.constant(values))


def _batched_layer_weighted_sum(values, logits):
    # values: (B, L, T, D) constant activations; combine drops the layer axis
    weights = T.softmax(logits, axis=-1)
    moved = np.ascontiguousarray(np.moveaxis(values, 1, 0))
    return T.layer_combine(weights, T.constant(moved))


def time_average_layers(stack, selected):
    """Mean over valid frames for each selected layer, concatenated in the
    order given. Pure input preprocessing: no gradient path."""
    if not selected:
        raise ContractError("time_average_layers requires a non-empty layer selection")
    values = _stack_values(stack)
    frames_valid = stack.frames_valid if isinstance(stack, ActivationStack) else values.shape[1]
    n_layers = values.shape[0]
    for idx in selected:
        if not 0 <= idx < n_layers:
            raise DimensionError(f"layer index {idx} out of range for {n_layers} layers")
    parts = [values[idx, :frames_valid].mean(axis=0) for idx in selected]
    return np.concatenate(parts).astype(np.float32)


def _mask_bias(valid_mask):
    bias = np.zeros(valid_mask.shape, np.float32)
    bias[~valid_mask] = NEG_INF
    return bias


def _check_mask(valid_mask, length, what):
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if valid_mask.shape[-1] != length:
        raise DimensionError(
            f"{what} mask length {valid_mask.shape[-1]} does not match sequence length {length}"
        )
    if not valid_mask.any(axis=-1).all():
        raise ContractError(f"{what} input is entirely masked")
    return valid_mask


def mha_forward(X, valid_mask, mha):
    """Scaled dot-product attention with masked keys, no residual, no FFN.

    Accepts (T, D) with mask (T,) or batched (B, T, D) with mask (B, T).
    Masked key positions get a -inf score bias so their attention weight is
    exactly zero; masked query rows are computed but carry no meaning.
    """
    X = T.as_tensor(X)
    single = X.data.ndim == 2
    if single:
        X = T.reshape(X, (1,) + X.data.shape)
    if X.data.ndim != 3:
        raise DimensionError(f"expected (T, D) or (B, T, D), got {X.data.shape}")
    b, t, d = X.data.shape
    heads = mha.heads
    if d % heads:
        raise DimensionError(f"model dim {d} not divisible by {heads} heads")
    head_dim = d // heads
    valid_mask = _check_mask(np.atleast_2d(valid_mask), t, "attention")

    def split(proj):
        return T.transpose(T.reshape(proj, (b, t, heads, head_dim)), 1, 2)

    q = split(T.add(T.matmul(X, mha.W_q), mha.b_q))
    k = split(T.add(T.matmul(X, mha.W_k), mha.b_k))
    v = split(T.add(T.matmul(X, mha.W_v), mha.b_v))

    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(head_dim))
    bias = _mask_bias(valid_mask)[:, None, None, :]
    weights = T.softmax(T.add(scores, T.constant(bias)), axis=-1)
    mixed = T.reshape(T.transpose(T.matmul(weights, v), 1, 2), (b, t, d))
    out = T.add(T.matmul(mixed, mha.W_o), mha.b_o)
    return T.reshape(out, (t, d)) if single else out


def attention_pool(X, valid_mask, pool_query):
    """Collapse a sequence to one vector: scores (q . x_t)/sqrt(D) over valid
    positions, softmax, convex combination."""
    X = T.as_tensor(X)
    single = X.data.ndim == 2
    if single:
        X = T.reshape(X, (1,) + X.data.shape)
    b, t, d = X.data.shape
    pool_query = T.as_tensor(pool_query)
    if pool_query.data.shape != (d,):
        raise DimensionError(f"pool query shape {pool_query.data.shape}, expected ({d},)")
    valid_mask = _check_mask(np.atleast_2d(valid_mask), t, "pooling")

    scores = T.reshape(T.matmul(X, T.reshape(pool_query, (d, 1))), (b, t))
    scores = T.scale(scores, 1.0 / math.sqrt(d))
    scores = T.add(scores, T.constant(_mask_bias(valid_mask)))
    weights = T.reshape(T.softmax(scores, axis=-1), (b, 1, t))
    pooled = T.reshape(T.matmul(weights, X), (b, d))
    return T.reshape(pooled, (d,)) if single else pooled


def _predict(params, features):
    logits = T.add(T.matmul(features, T.transpose(params.predictor_W)), params.predictor_b)
    return T.softmax(logits, axis=-1)


def build_features(config, text_stack, speech_stack, da_pred_position):
    """Frozen input vector for the linear variants (A1, A2)."""
    text = _stack_values(text_stack)
    decision = text[-1, da_pred_position].astype(np.float32)
    if config.variant == "A1":
        return decision
    speech_vec = time_average_layers(speech_stack, config.selected_speech_layers)
    return np.concatenate([decision, speech_vec])


def _validate_inputs(config, text_stack, speech_stack, da_pred_position):
    if config.uses_speech and speech_stack is None:
        raise ContractError(f"{config.variant} requires a speech activation stack")
    if not config.uses_speech and speech_stack is not None:
        raise ContractError(f"{config.variant} takes no speech input")
    if isinstance(text_stack, ActivationStack):
        if da_pred_position is not None and not 0 <= da_pred_position < text_stack.frames_valid:
            raise ContractError(
                f"da_pred_position {da_pred_position} outside valid range "
                f"[0, {text_stack.frames_valid})"
            )


def forward(config, params, text_stack, speech_stack=None, da_pred_position=None):
    """Class probabilities for one decision. Stacks may be ActivationStack
    (mask from frames_valid) or raw (L, T, D) arrays (all frames valid)."""
    _validate_inputs(config, text_stack, speech_stack, da_pred_position)
    if config.variant in ("A1", "A2"):
        if da_pred_position is None:
            raise ContractError("A1/A2 require da_pred_position")
        feats = build_features(config, text_stack, speech_stack, da_pred_position)
        probs = _predict(params, T.constant(feats[None, :]))
        return T.reshape(probs, (config.n_classes,))

    text = _stack_values(text_stack)
    text_mask = (
        text_stack.valid_mask()[None, :]
        if isinstance(text_stack, ActivationStack)
        else np.ones((1, text.shape[1]), bool)
    )
    if config.variant == "A3":
        probs = _forward_fused(config, params, text[None], text_mask, None, None)
    else:
        speech = _stack_values(speech_stack)
        speech_mask = (
            speech_stack.valid_mask()[None, :]
            if isinstance(speech_stack, ActivationStack)
            else np.ones((1, speech.shape[1]), bool)
        )
        probs = _forward_fused(config, params, text[None], text_mask, speech[None], speech_mask)
    return T.reshape(probs, (config.n_classes,))


def _forward_fused(config, params, text, text_mask, speech, speech_mask):
    z_text = _batched_layer_weighted_sum(text, params.text_layer_logits)
    if config.variant == "A3":
        tokens, mask = z_text, text_mask
    else:
        z_speech = _batched_layer_weighted_sum(speech, params.speech_layer_logits)
        z_speech = T.add(T.matmul(z_speech, params.adapter_W), params.adapter_b)
        tokens = T.concat([z_speech, z_text], axis=1)
        mask = np.concatenate([speech_mask, text_mask], axis=1)
    fused = mha_forward(tokens, mask, params.mha)
    pooled = attention_pool(fused, mask, params.pool_query)
    return _predict(params, pooled)


def forward_batch(
    config,
    params,
    features=None,
    text=None,
    text_mask=None,
    speech=None,
    speech_mask=None,
):
    """Batched probabilities (B, n_classes).

    A1/A2 consume a precomputed feature matrix (B, D_in); A3/A4 consume
    padded activation arrays (B, L, T, D) with boolean validity masks (B, T).
    """
    if config.variant in ("A1", "A2"):
        if features is None:
            raise ContractError("A1/A2 batches require a feature matrix")
        return _predict(params, T.constant(features))
    if text is None or text_mask is None:
        raise ContractError("A3/A4 batches require text activations and mask")
    if config.variant == "A4" and (speech is None or speech_mask is None):
        raise ContractError("A4 batches require speech activations and mask")
    return _forward_fused(config, params, text, text_mask, speech, speech_mask)


# -- checkpoint I/O ---------------------------------------------------------------

_U32 = struct.Struct("<I")


def _write_block(fh, name, data):
    encoded = name.encode("utf-8")
    fh.write(_U32.pack(len(encoded)))
    fh.write(encoded)
    fh.write(_U32.pack(data.ndim))
    for extent in data.shape:
        fh.write(_U32.pack(extent))
    fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def save_checkpoint(path, config, params):
    named = params.named_parameters()
    config_bytes = config.to_json().encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(_U32.pack(CHECKPOINT_VERSION))
            fh.write(_U32.pack(len(config_bytes)))
            fh.write(config_bytes)
            fh.write(_U32.pack(len(named)))
            for name, tensor in named.items():
                _write_block(fh, name, tensor.data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read_exact(fh, n, what):
    blob = fh.read(n)
    if len(blob) != n:
        raise TruncationError(f"checkpoint ended while reading {what}")
    return blob


def _read_u32(fh, what):
    return _U32.unpack(_read_exact(fh, 4, what))[0]


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version = _read_u32(fh, "version")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        config = ArchitectureConfig.from_json(
            _read_exact(fh, _read_u32(fh, "config length"), "config").decode("utf-8")
        )
        params = FusionParams.init(config, np.random.default_rng(0))
        named = params.named_parameters()
        n_blocks = _read_u32(fh, "block count")
        if n_blocks != len(named):
            raise FormatError(
                f"checkpoint holds {n_blocks} parameter blocks, architecture needs {len(named)}"
            )
        for _ in range(n_blocks):
            name = _read_exact(fh, _read_u32(fh, "name length"), "name").decode("utf-8")
            if name not in named:
                raise FormatError(f"unknown parameter block {name!r}")
            ndim = _read_u32(fh, "rank")
            shape = tuple(_read_u32(fh, "extent") for _ in range(ndim))
            expected = named[name].data.shape
            if shape != expected:
                raise FormatError(f"block {name!r} has shape {shape}, expected {expected}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, 4 * count, f"block {name!r}")
            named[name].data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise FormatError("trailing bytes after final parameter block")
    return config, params
