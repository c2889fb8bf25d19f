"""Speech-to-text encoder-decoder with a windowed-attention encoder.

The encoder takes a log-mel spectrogram straight through a linear projection
(no front-end convolutions), adds sinusoidal positions, then stacks post-norm
blocks of windowed self-attention and ReLU feed-forward layers. An optional
strided 1-D convolution after the encoder halves the output length before
cross-attention. The decoder is a pre-norm transformer decoder over character
tokens with dense causal self-attention and dense cross-attention.

Everything operates on a single utterance at a time; batching is the
trainer's job (it accumulates per-utterance gradients).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .attention import (
    WindowConfig,
    cross_attention,
    dense_attention,
    dilated_window_attention,
    sliding_window_attention,
)
from .autograd import Tensor
from .errors import ConfigError, ShapeError

CONV_KERNEL = 5
CONV_STRIDE = 2
CONV_PADDING = 2

CHECKPOINT_MAGIC = b"S2TLCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture description. The defaults are the full-size recipe; tests
    and the desk preset shrink them."""

    vocab_size: int
    encoder_layers: int = 12
    decoder_layers: int = 6
    heads: int = 4
    embed_dim: int = 256
    ffn_dim: int = 2048
    dropout: float = 0.1
    window: WindowConfig | None = field(default_factory=lambda: WindowConfig(48))
    post_encoder_conv: bool = False
    mel_bins: int = 80
    encoder_prenorm: bool = False  # paper-default is post-norm encoder, pre-norm decoder

    def __post_init__(self):
        if isinstance(self.window, dict):
            self.window = WindowConfig(**self.window)
        if self.embed_dim % self.heads != 0:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the 4 reserved ids, got {self.vocab_size}")

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EncoderOutput:
    states: Tensor  # [n_out, embed_dim]
    n_out: int


def sinusoidal_pe(pos, dim):
    """Positional encoding for one position: sin at even indices, cos at odd,
    with wavelengths 10000^(2i/dim)."""
    if pos < 0:
        raise ShapeError(f"position must be >= 0, got {pos}")
    return sinusoidal_pe_matrix(pos + 1, dim)[pos]


def sinusoidal_pe_matrix(n, dim):
    """[n, dim] table of sinusoidal positional encodings."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    pe = np.empty((n, dim), dtype=np.float32)
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


def conv_output_length(n):
    """Length after the post-encoder reduction: ceil(n / 2)."""
    return (n + 2 * CONV_PADDING - CONV_KERNEL) // CONV_STRIDE + 1


def conv_reduce(states, weight, bias):
    """Strided 1-D convolution along time (kernel 5, stride 2, padding 2)
    keeping the channel count; halves the sequence length (ceil)."""
    return ag.conv1d(states, weight, bias, stride=CONV_STRIDE, padding=CONV_PADDING)


def param_shapes(cfg):
    """Ordered name -> shape map for every trainable tensor. Single source of
    truth for the builder, the parameter count, and checkpoint audits."""
    d, f, v = cfg.embed_dim, cfg.ffn_dim, cfg.vocab_size
    shapes = {}

    def linear(prefix, n_in, n_out):
        shapes[f"{prefix}.weight"] = (n_in, n_out)
        shapes[f"{prefix}.bias"] = (n_out,)

    def norm(prefix):
        shapes[f"{prefix}.gamma"] = (d,)
        shapes[f"{prefix}.beta"] = (d,)

    def attn(prefix):
        for p in ("q_proj", "k_proj", "v_proj", "out_proj"):
            linear(f"{prefix}.{p}", d, d)

    linear("encoder.input_proj", cfg.mel_bins, d)
    for i in range(cfg.encoder_layers):
        base = f"encoder.layers.{i}"
        attn(f"{base}.self_attn")
        norm(f"{base}.self_attn_norm")
        linear(f"{base}.ffn.w1", d, f)
        linear(f"{base}.ffn.w2", f, d)
        norm(f"{base}.ffn_norm")
    if cfg.encoder_prenorm:
        norm("encoder.final_norm")
    if cfg.post_encoder_conv:
        shapes["encoder.conv.weight"] = (d, d, CONV_KERNEL)
        shapes["encoder.conv.bias"] = (d,)
    shapes["decoder.embed.weight"] = (v, d)
    for i in range(cfg.decoder_layers):
        base = f"decoder.layers.{i}"
        norm(f"{base}.self_attn_norm")
        attn(f"{base}.self_attn")
        norm(f"{base}.cross_attn_norm")
        attn(f"{base}.cross_attn")
        norm(f"{base}.ffn_norm")
        linear(f"{base}.ffn.w1", d, f)
        linear(f"{base}.ffn.w2", f, d)
    norm("decoder.final_norm")
    linear("output_proj", d, v)
    return shapes


def count_parameters(cfg):
    """Total trainable parameter count for a config."""
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _init_param(name, shape, rng):
    if name.endswith(".gamma"):
        return np.ones(shape, dtype=np.float32)
    if name.endswith(".bias") or name.endswith(".beta"):
        return np.zeros(shape, dtype=np.float32)
    if name == "decoder.embed.weight":
        # unit variance after the sqrt(d) lookup scale
        return (rng.standard_normal(shape) / np.sqrt(shape[1])).astype(np.float32)
    if name == "encoder.conv.weight":
        fan_in = shape[1] * shape[2]
        fan_out = shape[0]
    else:
        fan_in, fan_out = shape[0], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(np.float32)


class Model:
    """Windowed-encoder speech-to-text transformer over single utterances."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params = {
            name: Tensor(_init_param(name, shape, rng), requires_grad=True)
            for name, shape in param_shapes(cfg).items()
        }
        self._training = False
        self._rng = None
        self._pe_cache = {}

    # -- mode ------------------------------------------------------------

    def train(self, rng):
        """Enable dropout, drawing masks from ``rng`` (a numpy Generator)."""
        self._training = True
        self._rng = rng

    def eval(self):
        self._training = False
        self._rng = None

    # -- parameter plumbing ----------------------------------------------

    def named_parameters(self):
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def load_state(self, arrays):
        for name, arr in arrays.items():
            if name not in self.params:
                raise ConfigError(f"unknown parameter {name!r} in state")
            if self.params[name].shape != arr.shape:
                raise ConfigError(
                    f"shape mismatch for {name!r}: model {self.params[name].shape}, state {arr.shape}"
                )
            self.params[name].data = arr.astype(np.float32).copy()

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    # -- building blocks ---------------------------------------------------

    def _pe(self, n):
        d = self.cfg.embed_dim
        cached = self._pe_cache.get(d)
        if cached is None or cached.shape[0] < n:
            cached = sinusoidal_pe_matrix(max(n, 512), d)
            self._pe_cache[d] = cached
        return Tensor(cached[:n])

    def _linear(self, x, prefix):
        return ag.matmul(x, self.params[f"{prefix}.weight"]) + self.params[f"{prefix}.bias"]

    def _norm(self, x, prefix):
        return ag.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _split_heads(self, x):
        n, d = x.shape
        h = self.cfg.heads
        return ag.transpose(ag.reshape(x, (n, h, d // h)), (1, 0, 2))

    def _merge_heads(self, x):
        h, n, dk = x.shape
        return ag.reshape(ag.transpose(x, (1, 0, 2)), (n, h * dk))

    def _self_attention(self, x, prefix, pattern, weights_sink=None):
        q = self._split_heads(self._linear(x, f"{prefix}.q_proj"))
        k = self._split_heads(self._linear(x, f"{prefix}.k_proj"))
        v = self._split_heads(self._linear(x, f"{prefix}.v_proj"))
        kw = dict(p_drop=self.cfg.dropout, rng=self._rng, training=self._training,
                  weights_sink=weights_sink)
        if pattern == "dense":
            ctx = dense_attention(q, k, v, causal=False, **kw)
        elif pattern == "causal":
            ctx = dense_attention(q, k, v, causal=True, **kw)
        else:
            cfg = self.cfg.window
            if cfg.dilation == 1:
                ctx = sliding_window_attention(q, k, v, cfg, **kw)
            else:
                ctx = dilated_window_attention(q, k, v, cfg, **kw)
        return self._linear(self._merge_heads(ctx), f"{prefix}.out_proj")

    def _cross_attention(self, x, mem, prefix, weights_sink=None):
        q = self._split_heads(self._linear(x, f"{prefix}.q_proj"))
        k = self._split_heads(self._linear(mem, f"{prefix}.k_proj"))
        v = self._split_heads(self._linear(mem, f"{prefix}.v_proj"))
        ctx = cross_attention(q, k, v, p_drop=self.cfg.dropout, rng=self._rng,
                              training=self._training, weights_sink=weights_sink)
        return self._linear(self._merge_heads(ctx), f"{prefix}.out_proj")

    def _ffn(self, x, prefix):
        h = ag.relu(self._linear(x, f"{prefix}.w1"))
        h = ag.dropout(h, self.cfg.dropout, self._rng, self._training)
        return self._linear(h, f"{prefix}.w2")

    # -- encoder -----------------------------------------------------------

    def encode(self, features, attn_sink=None):
        """Run the encoder over a [n_frames, mel_bins] feature matrix.

        ``attn_sink``, when given, is a dict collecting softmaxed attention
        weights per encoder layer under keys ("encoder", layer_index).
        """
        feats = features.frames if hasattr(features, "frames") else features
        feats = feats if isinstance(feats, Tensor) else Tensor(feats)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.mel_bins:
            raise ShapeError(
                f"encoder expects [n_frames, {self.cfg.mel_bins}] features, got {feats.shape}"
            )
        n = feats.shape[0]
        if n < 1:
            raise ShapeError("cannot encode an empty spectrogram")
        pattern = "dense" if self.cfg.window is None else "windowed"
        x = self._linear(feats, "encoder.input_proj") + self._pe(n)
        for i in range(self.cfg.encoder_layers):
            base = f"encoder.layers.{i}"
            sink = [] if attn_sink is not None else None
            if self.cfg.encoder_prenorm:
                x = x + self._self_attention(self._norm(x, f"{base}.self_attn_norm"), f"{base}.self_attn",
                                             pattern, weights_sink=sink)
                x = x + self._ffn(self._norm(x, f"{base}.ffn_norm"), f"{base}.ffn")
            else:
                x = self._norm(x + self._self_attention(x, f"{base}.self_attn", pattern, weights_sink=sink),
                               f"{base}.self_attn_norm")
                x = self._norm(x + self._ffn(x, f"{base}.ffn"), f"{base}.ffn_norm")
            if sink is not None:
                attn_sink[("encoder", i)] = sink[0].data.copy()
        if self.cfg.encoder_prenorm:
            x = self._norm(x, "encoder.final_norm")
        if self.cfg.post_encoder_conv:
            x = conv_reduce(x, self.params["encoder.conv.weight"], self.params["encoder.conv.bias"])
        return EncoderOutput(states=x, n_out=x.shape[0])

    # -- decoder -----------------------------------------------------------

    def decode_full(self, tokens, enc, attn_sink=None):
        """Teacher-forced decoder pass: next-token logits for every prefix.

        tokens is an int sequence starting with BOS; returns [len(tokens),
        vocab_size]. ``attn_sink`` collects ("decoder_self", i) and
        ("decoder_cross", i) attention weights when provided.
        """
        ids = np.asarray(tokens, dtype=np.intp)
        if ids.size == 0:
            raise ShapeError("decoder needs at least the BOS token")
        d = self.cfg.embed_dim
        y = ag.embedding_lookup(self.params["decoder.embed.weight"], ids) * float(np.sqrt(d))
        y = y + self._pe(ids.size)
        for i in range(self.cfg.decoder_layers):
            base = f"decoder.layers.{i}"
            self_sink = [] if attn_sink is not None else None
            cross_sink = [] if attn_sink is not None else None
            y = y + self._self_attention(self._norm(y, f"{base}.self_attn_norm"), f"{base}.self_attn",
                                         "causal", weights_sink=self_sink)
            y = y + self._cross_attention(self._norm(y, f"{base}.cross_attn_norm"), enc.states,
                                          f"{base}.cross_attn", weights_sink=cross_sink)
            y = y + self._ffn(self._norm(y, f"{base}.ffn_norm"), f"{base}.ffn")
            if attn_sink is not None:
                attn_sink[("decoder_self", i)] = self_sink[0].data.copy()
                attn_sink[("decoder_cross", i)] = cross_sink[0].data.copy()
        y = self._norm(y, "decoder.final_norm")
        return self._linear(y, "output_proj")

    def decode_step(self, tokens, enc):
        """Next-token logits for the last position of ``tokens`` ([vocab_size]).
        Inference-oriented: gradient probes should use decode_full."""
        logits = self.decode_full(tokens, enc)
        return Tensor(logits.data[-1])


# -------------------------------------------------------------- checkpoints


def _write_tensors(buf, arrays):
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensors(buf):
    (count,) = struct.unpack("<I", buf.read(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", buf.read(2))
        name = buf.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", buf.read(1))
        shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf.read(4 * n), dtype="<f4").reshape(shape)
        arrays[name] = arr.astype(np.float32)
    return arrays


def save_checkpoint(path, model, train_state=None):
    """Write the documented container: magic, version, config JSON, named
    float32 little-endian tensors, then an optional training-state appendix.

    ``train_state`` is (json_dict, tensor_dict) when present.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    _write_tensors(buf, {name: p.data for name, p in model.params.items()})
    if train_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        meta, tensors = train_state
        buf.write(struct.pack("<B", 1))
        meta_json = json.dumps(meta, sort_keys=True).encode("utf-8")
        buf.write(struct.pack("<I", len(meta_json)))
        buf.write(meta_json)
        _write_tensors(buf, tensors)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, seed=0):
    """Read a checkpoint back: (model, train_state-or-None). Round-trips are
    bit-exact."""
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    magic = buf.read(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise ConfigError(f"not a checkpoint file: bad magic {magic!r}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", buf.read(4))
    cfg = ModelConfig.from_dict(json.loads(buf.read(clen).decode("utf-8")))
    arrays = _read_tensors(buf)
    model = Model(cfg, seed=seed)
    model.load_state(arrays)
    (has_state,) = struct.unpack("<B", buf.read(1))
    train_state = None
    if has_state:
        (mlen,) = struct.unpack("<I", buf.read(4))
        meta = json.loads(buf.read(mlen).decode("utf-8"))
        tensors = _read_tensors(buf)
        train_state = (meta, tensors)
    return model, train_state


def encoder_tensor_names(cfg):
    return [n for n in param_shapes(cfg) if n.startswith("encoder.")]


def transfer_encoder(model, ckpt_path):
    """Copy every encoder.* tensor from an ASR checkpoint into ``model``;
    decoder tensors are untouched. Returns the transferred names. Raises a
    ConfigError listing every incompatible tensor."""
    src_model, _ = load_checkpoint(ckpt_path)
    src = src_model.state_arrays()
    wanted = encoder_tensor_names(model.cfg)
    problems = []
    for name in wanted:
        if name not in src:
            problems.append(f"{name}: missing from checkpoint")
        elif src[name].shape != model.params[name].shape:
            problems.append(
                f"{name}: checkpoint {src[name].shape} vs model {model.params[name].shape}"
            )
    if problems:
        raise ConfigError("encoder transfer incompatible:\n  " + "\n  ".join(problems))
    for name in wanted:
        model.params[name].data = src[name].astype(np.float32).copy()
    return wanted
