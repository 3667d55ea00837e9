"""Transformer encoder-decoder over the autodiff core.

Encoder positions embed four ids each: word piece, position, node depth,
and root-subtree index; the four embeddings are concatenated and projected
to d_model.  The decoder is a standard pre-norm causal transformer whose
input word embedding matrix is also the output projection (tied); passing
``memory=None`` skips cross-attention entirely, which turns the decoder
into a causal language model for pretraining.  Layers can be dropped whole
during training (layerdrop).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

NEG_INF = -1e9
CHECKPOINT_MAGIC = "amr2text-checkpoint v1"


class InvalidConfig(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class IdOutOfRange(ValueError):
    pass


class PrefixTooLong(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


class MalformedEmbeddingFile(ValueError):
    pass


class MalformedCheckpoint(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    enc_vocab: int
    dec_vocab: int
    d_model: int = 256
    n_heads: int = 4
    ffn_dim: int = 1024
    enc_layers: int = 3
    dec_layers: int = 3
    dropout: float = 0.1
    layerdrop: float = 0.0
    max_positions: int = 256
    depth_buckets: int = 32
    subgraph_buckets: int = 64
    d_word: int = 128
    d_pos: int = 64
    d_depth: int = 32
    d_subgraph: int = 32

    def validate(self) -> None:
        positive = (
            "enc_vocab dec_vocab d_model n_heads ffn_dim enc_layers dec_layers "
            "max_positions depth_buckets subgraph_buckets d_word d_pos"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_depth < 0 or self.d_subgraph < 0:
            raise InvalidConfig("feature embedding widths must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise InvalidConfig(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout {self.dropout} outside [0, 1)")
        if not 0.0 <= self.layerdrop < 1.0:
            raise InvalidConfig(f"layerdrop {self.layerdrop} outside [0, 1)")

    @property
    def enc_in_width(self) -> int:
        return self.d_word + self.d_pos + self.d_depth + self.d_subgraph

    @property
    def dec_in_width(self) -> int:
        return self.d_word + self.d_pos


def desk_config(enc_vocab: int, dec_vocab: int, **overrides) -> ModelConfig:
    """Default desk-scale configuration (CPU-trainable)."""
    return replace(ModelConfig(enc_vocab=enc_vocab, dec_vocab=dec_vocab), **overrides)


def paper_scale_config(enc_vocab: int, dec_vocab: int) -> ModelConfig:
    """The reference large configuration; preserved as a named preset only."""
    return ModelConfig(
        enc_vocab=enc_vocab,
        dec_vocab=dec_vocab,
        d_model=1024,
        n_heads=16,
        ffn_dim=4096,
        enc_layers=6,
        dec_layers=6,
        dropout=0.1,
        layerdrop=0.1,
        max_positions=1024,
        d_word=1024,
        d_pos=256,
        d_depth=64,
        d_subgraph=64,
    )


@dataclass
class ModelParams:
    """Named parameter tensors for one model instance."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> list[tuple[str, Tensor]]:
        return sorted(self.tensors.items())

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named()]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag


def _xavier(gen: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return gen.uniform(-limit, limit, size=(rows, cols))


def _schema(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter name with its shape, in creation order."""
    d, f = cfg.d_model, cfg.ffn_dim
    out: list[tuple[str, tuple[int, ...]]] = [
        ("enc_word_emb", (cfg.enc_vocab, cfg.d_word)),
        ("enc_pos_emb", (cfg.max_positions, cfg.d_pos)),
        ("enc_depth_emb", (cfg.depth_buckets + 1, cfg.d_depth)),
        ("enc_subgraph_emb", (cfg.subgraph_buckets + 1, cfg.d_subgraph)),
        ("enc_in_proj", (cfg.enc_in_width, d)),
        ("enc_in_bias", (d,)),
        ("dec_word_emb", (cfg.dec_vocab, cfg.d_word)),
        ("dec_pos_emb", (cfg.max_positions, cfg.d_pos)),
        ("dec_in_proj", (cfg.dec_in_width, d)),
        ("dec_in_bias", (d,)),
        ("dec_out_proj", (d, cfg.d_word)),
        ("dec_out_bias", (cfg.d_word,)),
    ]

    def attn(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        names = []
        for m in ("wq", "wk", "wv", "wo"):
            names.append((f"{prefix}.{m}", (d, d)))
        for b in ("bq", "bk", "bv", "bo"):
            names.append((f"{prefix}.{b}", (d,)))
        return names

    def ln(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        return [(f"{prefix}.gain", (d,)), (f"{prefix}.bias", (d,))]

    def ffn(prefix: str) -> list[tuple[str, tuple[int, ...]]]:
        return [
            (f"{prefix}.w1", (d, f)),
            (f"{prefix}.b1", (f,)),
            (f"{prefix}.w2", (f, d)),
            (f"{prefix}.b2", (d,)),
        ]

    for i in range(cfg.enc_layers):
        out += ln(f"enc.{i}.ln1") + attn(f"enc.{i}.attn") + ln(f"enc.{i}.ln2") + ffn(
            f"enc.{i}.ffn"
        )
    out += ln("enc_final_ln")
    for i in range(cfg.dec_layers):
        out += (
            ln(f"dec.{i}.ln1")
            + attn(f"dec.{i}.self_attn")
            + ln(f"dec.{i}.ln2")
            + attn(f"dec.{i}.cross_attn")
            + ln(f"dec.{i}.ln3")
            + ffn(f"dec.{i}.ffn")
        )
    out += ln("dec_final_ln")
    return out


def build(cfg: ModelConfig, seed: int) -> ModelParams:
    """Xavier-uniform matrices, zero biases, unit layernorm gains."""
    cfg.validate()
    rng = Rng(seed)
    params = ModelParams(config=cfg)
    for name, shape in _schema(cfg):
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith("bias") or name.endswith((".b1", ".b2", ".bq", ".bk", ".bv", ".bo")):
            data = np.zeros(shape)
        elif len(shape) == 2:
            data = _xavier(rng.stream("init", name), shape[0], shape[1])
        else:
            data = np.zeros(shape)
        params.tensors[name] = Tensor(data, requires_grad=True)
    return params


def layerdrop_mask(p: float, gen: np.random.Generator, n_layers: int) -> np.ndarray:
    """Per-layer keep decisions; layer i is skipped with probability p."""
    if p == 0.0:
        return np.ones(n_layers, dtype=bool)
    return gen.random(n_layers) >= p


@dataclass(frozen=True)
class EncoderInput:
    """Encoder-side id rows; 1-D for one example or 2-D padded batches."""

    piece_ids: np.ndarray
    depth_ids: np.ndarray
    subgraph_ids: np.ndarray
    pad_mask: np.ndarray | None = None  # True where the position is real

    def batched(self) -> "EncoderInput":
        if np.asarray(self.piece_ids).ndim == 2:
            return self
        return EncoderInput(
            piece_ids=np.asarray(self.piece_ids)[None, :],
            depth_ids=np.asarray(self.depth_ids)[None, :],
            subgraph_ids=np.asarray(self.subgraph_ids)[None, :],
            pad_mask=None if self.pad_mask is None else np.asarray(self.pad_mask)[None, :],
        )


def _check_ids(name: str, ids: np.ndarray, table_rows: int) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table_rows):
        raise IdOutOfRange(
            f"{name}: ids span [{ids.min()}, {ids.max()}] but table has {table_rows} rows"
        )
    return ids


def _attention(
    params: ModelParams,
    prefix: str,
    x_q: Tensor,
    x_kv: Tensor,
    mask: np.ndarray | None,
    training: bool,
    gen: np.random.Generator | None,
):
    """Multi-head scaled dot-product attention.

    Returns the output and the softmax weights (B, H, Tq, Tk) before
    attention dropout, for inspection dumps.
    """
    cfg = params.config
    b, tq, d = x_q.shape
    tk = x_kv.shape[1]
    h, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

    def heads(x: Tensor, w: str, bias: str, t: int) -> Tensor:
        y = T.add(T.matmul(x, params[f"{prefix}.{w}"]), params[f"{prefix}.{bias}"])
        return T.swapaxes(T.reshape(y, (b, t, h, dh)), 1, 2)

    q = heads(x_q, "wq", "bq", tq)
    k = heads(x_kv, "wk", "bk", tk)
    v = heads(x_kv, "wv", "bv", tk)
    scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
    if mask is not None:
        scores = T.add(scores, mask.astype(scores.data.dtype))
    weights = T.softmax(scores, axis=-1)
    attended = weights
    if training and cfg.dropout > 0.0 and gen is not None:
        attended = T.dropout(weights, cfg.dropout, gen, training)
    ctx = T.reshape(T.swapaxes(T.matmul(attended, v), 1, 2), (b, tq, d))
    out = T.add(T.matmul(ctx, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    return out, weights


def _ffn(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = T.relu(T.add(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return T.add(T.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def _ln(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    return T.layernorm(x, params[f"{prefix}.gain"], params[f"{prefix}.bias"])


def _residual_dropout(
    x: Tensor, cfg: ModelConfig, training: bool, gen: np.random.Generator | None
) -> Tensor:
    if training and cfg.dropout > 0.0 and gen is not None:
        return T.dropout(x, cfg.dropout, gen, training)
    return x


def encode(
    params: ModelParams,
    enc_input: EncoderInput,
    training: bool = False,
    rng: Rng | None = None,
    step: int = 0,
) -> tuple[Tensor, np.ndarray]:
    """Run the encoder stack; returns (memory (B,T,d_model), pad_mask (B,T))."""
    cfg = params.config
    batch = enc_input.batched()
    piece_ids = _check_ids("enc_word_emb", batch.piece_ids, cfg.enc_vocab)
    if piece_ids.size == 0 or piece_ids.shape[1] == 0:
        raise EmptyInput("encoder input has zero length")
    depth_ids = _check_ids("enc_depth_emb", batch.depth_ids, cfg.depth_buckets + 1)
    subgraph_ids = _check_ids(
        "enc_subgraph_emb", batch.subgraph_ids, cfg.subgraph_buckets + 1
    )
    n, t = piece_ids.shape
    if t > cfg.max_positions:
        raise IdOutOfRange(
            f"enc_pos_emb: input length {t} exceeds max_positions {cfg.max_positions}"
        )
    pad_mask = (
        np.ones((n, t), dtype=bool) if batch.pad_mask is None else batch.pad_mask.astype(bool)
    )
    pos_ids = np.broadcast_to(np.arange(t), (n, t))
    parts = [
        T.embed(params["enc_word_emb"], piece_ids),
        T.embed(params["enc_pos_emb"], pos_ids),
    ]
    if cfg.d_depth > 0:
        parts.append(T.embed(params["enc_depth_emb"], depth_ids))
    if cfg.d_subgraph > 0:
        parts.append(T.embed(params["enc_subgraph_emb"], subgraph_ids))
    x = T.add(T.matmul(T.concat_last_dim(parts), params["enc_in_proj"]), params["enc_in_bias"])
    x = _residual_dropout(x, cfg, training, rng.stream("drop", "enc_in", step) if rng else None)

    attn_mask = np.where(pad_mask[:, None, None, :], 0.0, NEG_INF)
    keep = (
        layerdrop_mask(cfg.layerdrop, rng.stream("layerdrop", "enc", step), cfg.enc_layers)
        if training and rng is not None
        else np.ones(cfg.enc_layers, dtype=bool)
    )
    for i in range(cfg.enc_layers):
        if not keep[i]:
            continue
        gen = rng.stream("drop", "enc", i, step) if rng else None
        normed = _ln(params, f"enc.{i}.ln1", x)
        attn_out, _ = _attention(
            params, f"enc.{i}.attn", normed, normed, attn_mask, training, gen
        )
        x = T.add(x, _residual_dropout(attn_out, cfg, training, gen))
        ffn_out = _ffn(params, f"enc.{i}.ffn", _ln(params, f"enc.{i}.ln2", x))
        x = T.add(x, _residual_dropout(ffn_out, cfg, training, gen))
    return _ln(params, "enc_final_ln", x), pad_mask


def decoder_forward(
    params: ModelParams,
    memory: Tensor | None,
    memory_mask: np.ndarray | None,
    prefix_ids: np.ndarray,
    training: bool = False,
    rng: Rng | None = None,
    step: int = 0,
    collect_attention: bool = False,
) -> tuple[Tensor, list[np.ndarray]]:
    """Causal decoder over the whole prefix; memory=None runs LM mode.

    Returns logits (B, T, dec_vocab) and, when requested, each layer's
    cross-attention weights (B, H, T, S) as plain arrays.
    """
    cfg = params.config
    prefix_ids = np.asarray(prefix_ids)
    if prefix_ids.ndim == 1:
        prefix_ids = prefix_ids[None, :]
    if prefix_ids.shape[1] == 0:
        raise EmptyInput("decoder prefix has zero length")
    if prefix_ids.shape[1] > cfg.max_positions:
        raise PrefixTooLong(
            f"prefix length {prefix_ids.shape[1]} exceeds max_positions {cfg.max_positions}"
        )
    _check_ids("dec_word_emb", prefix_ids, cfg.dec_vocab)
    n, t = prefix_ids.shape
    pos_ids = np.broadcast_to(np.arange(t), (n, t))
    x = T.concat_last_dim(
        [T.embed(params["dec_word_emb"], prefix_ids), T.embed(params["dec_pos_emb"], pos_ids)]
    )
    x = T.add(T.matmul(x, params["dec_in_proj"]), params["dec_in_bias"])
    x = _residual_dropout(x, cfg, training, rng.stream("drop", "dec_in", step) if rng else None)

    causal = np.where(np.tril(np.ones((t, t), dtype=bool)), 0.0, NEG_INF)[None, None]
    cross_mask = (
        None
        if memory is None or memory_mask is None
        else np.where(memory_mask[:, None, None, :], 0.0, NEG_INF)
    )
    keep = (
        layerdrop_mask(cfg.layerdrop, rng.stream("layerdrop", "dec", step), cfg.dec_layers)
        if training and rng is not None
        else np.ones(cfg.dec_layers, dtype=bool)
    )
    cross_weights: list[np.ndarray] = []
    for i in range(cfg.dec_layers):
        if not keep[i]:
            continue
        gen = rng.stream("drop", "dec", i, step) if rng else None
        normed = _ln(params, f"dec.{i}.ln1", x)
        self_out, _ = _attention(
            params, f"dec.{i}.self_attn", normed, normed, causal, training, gen
        )
        x = T.add(x, _residual_dropout(self_out, cfg, training, gen))
        if memory is not None:
            cross_out, weights = _attention(
                params,
                f"dec.{i}.cross_attn",
                _ln(params, f"dec.{i}.ln2", x),
                memory,
                cross_mask,
                training,
                gen,
            )
            x = T.add(x, _residual_dropout(cross_out, cfg, training, gen))
            if collect_attention:
                cross_weights.append(weights.data.copy())
        ffn_out = _ffn(params, f"dec.{i}.ffn", _ln(params, f"dec.{i}.ln3", x))
        x = T.add(x, _residual_dropout(ffn_out, cfg, training, gen))
    x = _ln(params, "dec_final_ln", x)
    hidden = T.add(T.matmul(x, params["dec_out_proj"]), params["dec_out_bias"])
    logits = T.matmul(hidden, T.swapaxes(params["dec_word_emb"], 0, 1))
    return logits, cross_weights


def decode_step(
    params: ModelParams,
    memory: Tensor | None,
    memory_mask: np.ndarray | None,
    prefix_ids: Sequence[int],
    bos_id: int,
    collect_attention: bool = False,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Next-token logits for one prefix; prefix must begin with bos."""
    prefix = np.asarray(list(prefix_ids), dtype=np.int64)
    if prefix.size == 0 or prefix[0] != bos_id:
        raise ValueError("prefix must begin with the bos id")
    with T.no_grad():
        logits, weights = decoder_forward(
            params, memory, memory_mask, prefix[None, :], collect_attention=collect_attention
        )
    last = logits.data[0, -1, :]
    return last, [w[0, :, -1, :] for w in weights]


def load_decoder_embeddings(
    params: ModelParams, path, vocab: dict[str, int]
) -> tuple[int, int]:
    """Overwrite decoder word-embedding rows from a text embedding file.

    Each line is "piece v1 v2 ... vd".  Pieces absent from the decoder
    vocabulary are ignored; rows not covered keep their random init.
    Returns (rows initialized, vocabulary size).
    """
    emb = params["dec_word_emb"]
    d_word = emb.shape[1]
    initialized = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise MalformedEmbeddingFile(f"line {lineno}: expected 'piece v1 ... vd'")
            piece, values = parts[0], parts[1:]
            if len(values) != d_word:
                raise WidthMismatch(
                    f"line {lineno}: vector width {len(values)} but d_word is {d_word}"
                )
            if piece not in vocab:
                continue
            try:
                row = np.asarray([float(v) for v in values], dtype=emb.data.dtype)
            except ValueError:
                raise MalformedEmbeddingFile(f"line {lineno}: non-numeric value") from None
            emb.data[vocab[piece]] = row
            initialized += 1
    return initialized, params.config.dec_vocab


def save_checkpoint(params: ModelParams, path) -> None:
    """Header (version + config key=value), then named float32 LE tensors."""
    cfg = params.config
    with open(path, "wb") as f:
        header = io.StringIO()
        header.write(CHECKPOINT_MAGIC + "\n")
        for fld in fields(cfg):
            header.write(f"{fld.name}={getattr(cfg, fld.name)}\n")
        header.write("#tensors\n")
        f.write(header.getvalue().encode("utf-8"))
        for name, t in params.named():
            shape = ",".join(str(d) for d in t.shape)
            f.write(f"tensor {name} {shape}\n".encode("utf-8"))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"#tensors\n")
    if end < 0 or not blob.startswith(CHECKPOINT_MAGIC.encode("utf-8")):
        raise MalformedCheckpoint("missing header or #tensors marker")
    header_lines = blob[:end].decode("utf-8").splitlines()[1:]
    field_types = {f.name: f.type for f in fields(ModelConfig)}
    kwargs = {}
    for line in header_lines:
        key, _, value = line.partition("=")
        if key not in field_types:
            raise MalformedCheckpoint(f"unknown config key {key!r}")
        kwargs[key] = float(value) if field_types[key] == "float" else int(value)
    cfg = ModelConfig(**kwargs)
    params = ModelParams(config=cfg)
    offset = end + len(b"#tensors\n")
    while offset < len(blob):
        newline = blob.index(b"\n", offset)
        line = blob[offset:newline].decode("utf-8")
        offset = newline + 1
        if not line.startswith("tensor "):
            raise MalformedCheckpoint(f"expected tensor line, got {line!r}")
        _, name, shape_text = line.split(" ")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        raw = blob[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise MalformedCheckpoint(f"truncated tensor data for {name!r}")
        offset += nbytes
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(T.default_dtype())
        params.tensors[name] = Tensor(data, requires_grad=True)
    expected = {name for name, _ in _schema(cfg)}
    if set(params.tensors) != expected:
        missing = sorted(expected - set(params.tensors))
        raise MalformedCheckpoint(f"checkpoint tensor names do not match schema: {missing[:3]}")
    return params
