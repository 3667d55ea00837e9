"""Fine-tuning loop: inverse-sqrt schedule, Adam, checkpoint selection.

Training is update-count based.  Batches for epoch e are rebuilt
deterministically from (shuffle_seed, e), and the batch used at update
step k is a pure function of k, so a run resumed from a saved trainer
state reproduces the uninterrupted run exactly.  The best checkpoint is
the one with minimum validation loss, ties broken by the earlier step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Batch, ParallelExample, make_batches
from .model import (
    EncoderInput,
    ModelParams,
    decoder_forward,
    encode,
    load_checkpoint,
    load_decoder_embeddings,
)
from .tensor import AllPadTarget, Rng, Tensor, label_smoothed_nll, no_grad

logger = logging.getLogger(__name__)


class DivergedLoss(RuntimeError):
    def __init__(self, message: str, last_good: ModelParams | None = None):
        super().__init__(message)
        self.last_good = last_good


class DiskFull(OSError):
    pass


class ConfigMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.001
    warmup_steps: int = 4000
    max_updates: int = 100000
    adam_betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    weight_decay: float = 0.0
    label_smoothing: float = 0.1
    dropout: float = 0.1
    layerdrop: float = 0.1
    seed: int = 1
    checkpoint_every: int = 1000
    max_tokens_per_batch: int = 3584

    def validate(self) -> None:
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing outside [0, 1)")
        for name in ("dropout", "layerdrop"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} outside [0, 1)")
        if self.max_updates < 1 or self.checkpoint_every < 1:
            raise ValueError("max_updates and checkpoint_every must be >= 1")


def fresh_preset(**overrides) -> TrainConfig:
    """Recipe for training from random initialization."""
    return replace(TrainConfig(base_lr=0.001, warmup_steps=4000), **overrides)


def pretrained_preset(**overrides) -> TrainConfig:
    """Recipe for fine-tuning from pretrained weights: lower peak, longer warmup."""
    return replace(TrainConfig(base_lr=0.0001, warmup_steps=8000), **overrides)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """base_lr * min(step^-1/2, step * warmup^-3/2); peak at step = warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return cfg.base_lr * min(step**-0.5, step * cfg.warmup_steps**-1.5)


class Adam:
    """Adam over a fixed parameter list, with optional decoupled weight decay."""

    def __init__(self, params: list[Tensor], cfg: TrainConfig):
        self.params = params
        self.betas = cfg.adam_betas
        self.eps = cfg.adam_eps
        self.weight_decay = cfg.weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.t += 1
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / bias1
            vhat = self.v[i] / bias2
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.asarray(a) for a in state["m"]]
        self.v = [np.asarray(a) for a in state["v"]]


def save_trainer_state(path, step: int, opt: Adam) -> None:
    arrays = {"step": np.asarray(step), "t": np.asarray(opt.t)}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"m{i}"] = m
        arrays[f"v{i}"] = v
    try:
        np.savez(path, **arrays)
    except OSError as err:
        raise DiskFull(f"could not write trainer state: {err}") from err


def load_trainer_state(path, opt: Adam) -> int:
    with np.load(path) as z:
        step = int(z["step"])
        opt.t = int(z["t"])
        opt.m = [z[f"m{i}"] for i in range(len(opt.m))]
        opt.v = [z[f"v{i}"] for i in range(len(opt.v))]
    return step


def batch_loss(
    params: ModelParams,
    batch: Batch,
    pad_id: int,
    label_smoothing: float,
    training: bool,
    rng: Rng | None = None,
    step: int = 0,
) -> Tensor:
    """Teacher-forced label-smoothed loss, averaged over non-pad targets."""
    enc_in = EncoderInput(
        piece_ids=batch.src,
        depth_ids=batch.src_depth,
        subgraph_ids=batch.src_subgraph,
        pad_mask=batch.src_pad_mask,
    )
    memory, memory_mask = encode(params, enc_in, training=training, rng=rng, step=step)
    logits, _ = decoder_forward(
        params, memory, memory_mask, batch.tgt[:, :-1],
        training=training, rng=rng, step=step,
    )
    return label_smoothed_nll(logits, batch.tgt[:, 1:], label_smoothing, pad_id)


def dataset_loss(
    params: ModelParams,
    batches: list[Batch],
    pad_id: int,
    label_smoothing: float = 0.0,
) -> float:
    """Average per-token loss over a batched dataset, in eval mode."""
    total = 0.0
    tokens = 0
    with no_grad():
        for batch in batches:
            n = batch.n_target_tokens(pad_id)
            if n == 0:
                continue
            loss = batch_loss(params, batch, pad_id, label_smoothing, training=False)
            total += loss.item() * n
            tokens += n
    if tokens == 0:
        raise AllPadTarget("validation set has no target tokens")
    return total / tokens


@dataclass
class TrainResult:
    best_params: ModelParams
    best_valid_loss: float
    best_step: int
    final_params: ModelParams
    log: list[tuple[int, float, float, float | None]] = field(default_factory=list)


def _snapshot(params: ModelParams) -> ModelParams:
    copy = ModelParams(config=params.config)
    for name, t in params.tensors.items():
        copy.tensors[name] = Tensor(t.data.copy(), requires_grad=True, dtype=t.data.dtype)
    return copy


def train(
    params: ModelParams,
    train_set: list[ParallelExample],
    valid_set: list[ParallelExample],
    cfg: TrainConfig,
    pad_id: int,
    on_checkpoint=None,
    log_path=None,
    start_step: int = 0,
    optimizer: Adam | None = None,
) -> TrainResult:
    """Run Adam updates until max_updates, validating every checkpoint_every.

    ``on_checkpoint(step, params, valid_loss)`` may return True to stop
    early.  Pass ``start_step`` and ``optimizer`` to resume a run; the
    subsequent loss trajectory matches the uninterrupted run.
    """
    cfg.validate()
    params = replace_config_rates(params, cfg)
    rng = Rng(cfg.seed)
    opt = optimizer or Adam(params.parameters(), cfg)
    valid_batches = make_batches(valid_set, cfg.max_tokens_per_batch, cfg.seed, pad_id)
    log: list[tuple[int, float, float, float | None]] = []
    best: tuple[float, int, ModelParams] | None = None
    # Batch counts can differ between epochs (reshuffled packing), so the
    # step -> batch mapping walks epochs from zero; resuming replays the walk.
    epoch = 0
    epoch_start = 0
    epoch_batches = make_batches(train_set, cfg.max_tokens_per_batch, cfg.seed, pad_id)
    while start_step - epoch_start >= len(epoch_batches):
        epoch_start += len(epoch_batches)
        epoch += 1
        epoch_batches = make_batches(
            train_set, cfg.max_tokens_per_batch, cfg.seed + epoch, pad_id
        )
    lines = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(start_step + 1, cfg.max_updates + 1):
            if step - 1 - epoch_start >= len(epoch_batches):
                epoch_start += len(epoch_batches)
                epoch += 1
                epoch_batches = make_batches(
                    train_set, cfg.max_tokens_per_batch, cfg.seed + epoch, pad_id
                )
            batch = epoch_batches[step - 1 - epoch_start]
            for p in params.parameters():
                p.zero_grad()
            loss = batch_loss(
                params, batch, pad_id, cfg.label_smoothing, training=True, rng=rng, step=step
            )
            value = loss.item()
            if not np.isfinite(value):
                raise DivergedLoss(
                    f"non-finite training loss at step {step}",
                    last_good=best[2] if best else None,
                )
            loss.backward()
            lr = lr_at(step, cfg)
            opt.step(lr)
            valid_loss: float | None = None
            if step % cfg.checkpoint_every == 0 or step == cfg.max_updates:
                valid_loss = dataset_loss(params, valid_batches, pad_id)
                if not np.isfinite(valid_loss):
                    raise DivergedLoss(
                        f"non-finite validation loss at step {step}",
                        last_good=best[2] if best else None,
                    )
                if best is None or valid_loss < best[0]:
                    best = (valid_loss, step, _snapshot(params))
                if on_checkpoint is not None and on_checkpoint(step, params, valid_loss):
                    log.append((step, lr, value, valid_loss))
                    if lines:
                        lines.write(f"{step}\t{lr:.8g}\t{value:.6f}\t{valid_loss:.6f}\n")
                    break
            log.append((step, lr, value, valid_loss))
            if lines:
                v = "" if valid_loss is None else f"{valid_loss:.6f}"
                lines.write(f"{step}\t{lr:.8g}\t{value:.6f}\t{v}\n")
    finally:
        if lines:
            lines.close()
    if best is None:
        valid_loss = dataset_loss(params, valid_batches, pad_id)
        best = (valid_loss, log[-1][0] if log else start_step, _snapshot(params))
    return TrainResult(
        best_params=best[2],
        best_valid_loss=best[0],
        best_step=best[1],
        final_params=params,
        log=log,
    )


def replace_config_rates(params: ModelParams, cfg: TrainConfig) -> ModelParams:
    """Propagate the training config's dropout/layerdrop into the model config."""
    if (
        params.config.dropout == cfg.dropout
        and params.config.layerdrop == cfg.layerdrop
    ):
        return params
    new = ModelParams(
        config=replace(params.config, dropout=cfg.dropout, layerdrop=cfg.layerdrop)
    )
    new.tensors = params.tensors
    return new


def initialize_for_finetune(
    params: ModelParams,
    encoder_ckpt=None,
    decoder_ckpt=None,
    embeddings_path=None,
    dec_vocab_map: dict[str, int] | None = None,
) -> tuple[ModelParams, list[str]]:
    """Load encoder weights, then decoder weights, then embedding rows.

    Later sources win where they overlap (the embedding file overwrites
    rows even if the decoder checkpoint set them).  Returns the model and
    a report of what was initialized.
    """
    report: list[str] = []
    for ckpt_path, prefix in ((encoder_ckpt, "enc"), (decoder_ckpt, "dec")):
        if ckpt_path is None:
            continue
        loaded = load_checkpoint(ckpt_path)
        copied = []
        for name, t in loaded.tensors.items():
            if not name.startswith(prefix):
                continue
            if name not in params.tensors:
                continue
            if params.tensors[name].shape != t.shape:
                raise ConfigMismatch(
                    f"{name}: checkpoint shape {t.shape} vs model shape "
                    f"{params.tensors[name].shape}"
                )
            params.tensors[name].data[...] = t.data.astype(params.tensors[name].data.dtype)
            copied.append(name)
        report.append(f"{prefix}: {len(copied)} tensors from {ckpt_path}")
        logger.info("initialized %d %s tensors from %s", len(copied), prefix, ckpt_path)
    if embeddings_path is not None:
        if dec_vocab_map is None:
            raise ValueError("embeddings_path requires dec_vocab_map")
        n, total = load_decoder_embeddings(params, embeddings_path, dec_vocab_map)
        report.append(f"embeddings: {n}/{total} rows from {embeddings_path}")
        logger.info("initialized %d/%d decoder embedding rows", n, total)
    if not report:
        report.append("fresh: no pretrained weights loaded")
    return params, report


def write_run_config(path, cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name in cfg.__dataclass_fields__:
            value = getattr(cfg, name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            f.write(f"train.{name}={value}\n")


def read_run_config(path) -> TrainConfig:
    kwargs: dict = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if not key.startswith("train."):
                continue
            name = key[len("train.") :]
            if name not in TrainConfig.__dataclass_fields__:
                raise ValueError(f"unknown config key {key!r}")
            if name == "adam_betas":
                kwargs[name] = tuple(float(v) for v in value.split(","))
            elif name in ("warmup_steps", "max_updates", "seed", "checkpoint_every",
                          "max_tokens_per_batch"):
                kwargs[name] = int(value)
            else:
                kwargs[name] = float(value)
    return TrainConfig(**kwargs)
