"""Denoising pretraining for the encoder, causal-LM pretraining for the decoder.

Noise operates on linearized AMR token sequences.  Parentheses and the
language token are structural and untouchable: token masking replaces
other tokens with <mask> independently, span masking collapses Poisson-
length runs (never crossing a parenthesis) into a single <mask>, and
shuffling permutes the root's child segments.  All three are deterministic
given (seed, example index).  Encoder pretraining reconstructs the
original sequence from its noised form through a temporary reconstruction
decoder over the encoder vocabulary; only the encoder weights are kept.
Decoder pretraining is a language-token-conditioned causal LM with no
encoder attached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .bpe import MASK, BpeModel, encode
from .corpus import ParallelExample, make_batches, pack_sequences
from .langs import is_lang_token
from .linearize import LinearizedAmr
from .model import EncoderInput, ModelParams, build, decoder_forward
from .model import encode as encode_model
from .tensor import Rng, label_smoothed_nll, no_grad
from .training import Adam, TrainConfig, TrainResult, lr_at
from . import training

logger = logging.getLogger(__name__)


class UnbalancedInput(ValueError):
    pass


class MissingMonolingualData(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    mask_prob: float = 0.15
    span_lambda: float = 3.0
    span_mass: float = 0.3
    shuffle: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob outside [0, 1]")
        if self.span_lambda <= 0:
            raise ValueError("span_lambda must be positive")
        if not 0.0 <= self.span_mass <= 1.0:
            raise ValueError("span_mass outside [0, 1]")


def _maskable(token: str) -> bool:
    return token not in ("(", ")") and not is_lang_token(token)


def _mask_positions(
    tokens: list[str], spec: NoiseSpec, gen: np.random.Generator
) -> set[int]:
    draws = gen.random(len(tokens))
    return {
        i
        for i, t in enumerate(tokens)
        if _maskable(t) and t != MASK and draws[i] < spec.mask_prob
    }


def _span_cover(
    tokens: list[str], spec: NoiseSpec, gen: np.random.Generator
) -> set[int]:
    """Positions covered by sampled spans, totalling ~span_mass of the
    maskable tokens; a span extends rightward without crossing parens."""
    maskable = [i for i, t in enumerate(tokens) if _maskable(t)]
    target = round(spec.span_mass * len(maskable))
    covered: set[int] = set()
    while len(covered) < target:
        remaining = [p for p in maskable if p not in covered]
        if not remaining:
            break
        start = remaining[int(gen.integers(len(remaining)))]
        length = min(max(1, int(gen.poisson(spec.span_lambda))), target - len(covered))
        p = start
        while length > 0 and p < len(tokens) and _maskable(tokens[p]) and p not in covered:
            covered.add(p)
            length -= 1
            p += 1
    return covered


def _collapse_groups(items: list, covered: set[int], mask_item) -> list:
    """Replace each maximal run of covered positions with one mask item."""
    out = []
    i = 0
    while i < len(items):
        if i in covered:
            out.append(mask_item(i))
            while i in covered:
                i += 1
        else:
            out.append(items[i])
            i += 1
    return out


def _check_balance(tokens: list[str]) -> None:
    depth = 0
    for t in tokens:
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth < 0:
                raise UnbalancedInput("close paren without matching open")
    if depth != 0:
        raise UnbalancedInput(f"{depth} unclosed parens")


def _segment_spans(tokens: list[str]) -> tuple[int, list[tuple[int, int]], int]:
    """(body start, per-segment [start, end) spans, body end) of root children.

    A segment is a role token at root depth together with its value or
    parenthesized subtree.  Returns no segments when the sequence is not a
    single parenthesized node.
    """
    offset = 1 if tokens and is_lang_token(tokens[0]) else 0
    if (
        len(tokens) - offset < 3
        or tokens[offset] != "("
        or tokens[-1] != ")"
    ):
        return offset, [], len(tokens)
    segments: list[tuple[int, int]] = []
    depth = 0
    start = None
    for i in range(offset, len(tokens)):
        t = tokens[i]
        if depth == 1 and t.startswith(":") and i > offset + 1:
            if start is not None:
                segments.append((start, i))
            start = i
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth == 0:
                if start is not None:
                    segments.append((start, i))
                return offset, segments, i
    return offset, segments, len(tokens)


def mask_tokens(tokens, spec: NoiseSpec, example_index: int = 0) -> list[str]:
    """Independently replace non-structural tokens with <mask>."""
    tokens = list(tokens)
    gen = Rng(spec.seed).stream("mask", example_index)
    positions = _mask_positions(tokens, spec, gen)
    return [MASK if i in positions else t for i, t in enumerate(tokens)]


def mask_spans(tokens, spec: NoiseSpec, example_index: int = 0) -> list[str]:
    """Collapse Poisson-length spans into single <mask> tokens."""
    tokens = list(tokens)
    gen = Rng(spec.seed).stream("spans", example_index)
    covered = _span_cover(tokens, spec, gen)
    return _collapse_groups(tokens, covered, lambda i: MASK)


def shuffle_segments(tokens, spec: NoiseSpec, example_index: int = 0) -> list[str]:
    """Permute the root's child segments with a seeded permutation."""
    tokens = list(tokens)
    _check_balance(tokens)
    gen = Rng(spec.seed).stream("shuffle", example_index)
    offset, segments, end = _segment_spans(tokens)
    if len(segments) < 2:
        return tokens
    perm = gen.permutation(len(segments))
    head = tokens[: segments[0][0]]
    tail = tokens[segments[-1][1] :]
    body: list[str] = []
    for j in perm:
        s, e = segments[j]
        body.extend(tokens[s:e])
    return head + body + tail


def apply_noise(
    lin_tokens,
    spec: NoiseSpec,
    example_index: int = 0,
    depth_ids=None,
    subgraph_ids=None,
):
    """Spans, then token masking, then segment shuffle; optional feature rows
    move with their tokens (a collapsed span keeps its first token's ids).

    Returns (tokens, depth_ids, subgraph_ids); the feature rows are None
    when not supplied.
    """
    tokens = list(lin_tokens)
    features = None
    if depth_ids is not None and subgraph_ids is not None:
        features = list(zip(depth_ids, subgraph_ids))
    gen_spans = Rng(spec.seed).stream("spans", example_index)
    covered = _span_cover(tokens, spec, gen_spans) if spec.span_mass > 0 else set()
    if covered:
        if features is not None:
            features = _collapse_groups(features, covered, lambda i: features[i])
        tokens = _collapse_groups(tokens, covered, lambda i: MASK)
    gen_mask = Rng(spec.seed).stream("mask", example_index)
    positions = _mask_positions(tokens, spec, gen_mask) if spec.mask_prob > 0 else set()
    tokens = [MASK if i in positions else t for i, t in enumerate(tokens)]
    if spec.shuffle:
        _check_balance(tokens)
        gen_shuffle = Rng(spec.seed).stream("shuffle", example_index)
        offset, segments, _ = _segment_spans(tokens)
        if len(segments) >= 2:
            perm = gen_shuffle.permutation(len(segments))
            head_end, tail_start = segments[0][0], segments[-1][1]
            new_tokens = tokens[:head_end]
            new_features = features[:head_end] if features is not None else None
            for j in perm:
                s, e = segments[j]
                new_tokens.extend(tokens[s:e])
                if new_features is not None:
                    new_features.extend(features[s:e])
            new_tokens.extend(tokens[tail_start:])
            if new_features is not None:
                new_features.extend(features[tail_start:])
                features = new_features
            tokens = new_tokens
    if features is not None:
        return tokens, [d for d, _ in features], [s for _, s in features]
    return tokens, None, None


def noised_examples(
    corpus: list[LinearizedAmr],
    enc_model: BpeModel,
    spec: NoiseSpec,
    rounds: int = 1,
) -> list[ParallelExample]:
    """Denoising pairs: noised pieces as source, original pieces as target.

    ``rounds`` independent corruptions of each example are emitted, keyed
    by (round, example index) for reproducibility.
    """
    examples: list[ParallelExample] = []
    for r in range(rounds):
        for i, lin in enumerate(corpus):
            tokens, depths, subs = apply_noise(
                lin.tokens,
                spec,
                example_index=r * len(corpus) + i,
                depth_ids=lin.depth_ids,
                subgraph_ids=lin.subgraph_ids,
            )
            src_ids: list[int] = []
            src_d: list[int] = []
            src_s: list[int] = []
            for tok, d, s in zip(tokens, depths, subs):
                for pid in encode(enc_model, tok):
                    src_ids.append(pid)
                    src_d.append(d)
                    src_s.append(s)
            tgt_ids = [enc_model.bos_id]
            for tok in lin.tokens:
                tgt_ids.extend(encode(enc_model, tok))
            tgt_ids.append(enc_model.eos_id)
            examples.append(
                ParallelExample(
                    src_ids=tuple(src_ids),
                    src_depth_ids=tuple(src_d),
                    src_subgraph_ids=tuple(src_s),
                    tgt_ids=tuple(tgt_ids),
                    language="en",
                )
            )
    return examples


def pretrain_encoder(
    params: ModelParams,
    corpus: list[LinearizedAmr],
    enc_model: BpeModel,
    spec: NoiseSpec,
    cfg: TrainConfig,
    rounds: int = 1,
    on_checkpoint=None,
) -> tuple[ModelParams, TrainResult]:
    """Train the encoder by seq2seq denoising through a temporary decoder.

    The temporary model shares the encoder tensors of ``params``, so the
    given model's encoder is pretrained in place; its own decoder never
    changes.  Returns (temporary model, training result) so the caller can
    checkpoint either.
    """
    spec.validate()
    temp_cfg = replace(params.config, dec_vocab=params.config.enc_vocab)
    temp = build(temp_cfg, seed=cfg.seed)
    for name in list(temp.tensors):
        if name.startswith("enc"):
            temp.tensors[name] = params.tensors[name]
    examples = noised_examples(corpus, enc_model, spec, rounds=rounds)
    result = training.train(
        temp,
        examples,
        examples,
        cfg,
        pad_id=enc_model.pad_id,
        on_checkpoint=on_checkpoint,
    )
    return temp, result


def token_accuracy(params: ModelParams, examples: list[ParallelExample], pad_id: int) -> float:
    """Teacher-forced argmax accuracy over non-pad target positions."""
    batches = make_batches(examples, max_tokens=4096, shuffle_seed=0, pad_id=pad_id)
    correct = 0
    total = 0
    with no_grad():
        for batch in batches:
            enc_in = EncoderInput(
                piece_ids=batch.src,
                depth_ids=batch.src_depth,
                subgraph_ids=batch.src_subgraph,
                pad_mask=batch.src_pad_mask,
            )
            memory, memory_mask = encode_model(params, enc_in)
            logits, _ = decoder_forward(params, memory, memory_mask, batch.tgt[:, :-1])
            pred = logits.data.argmax(axis=-1)
            gold = batch.tgt[:, 1:]
            mask = gold != pad_id
            correct += int((pred[mask] == gold[mask]).sum())
            total += int(mask.sum())
    return correct / total if total else 0.0


def lm_sequences(
    corpora: dict[str, list[str]], dec_model: BpeModel
) -> list[tuple[str, tuple[int, ...]]]:
    """(language, bos + lang token + pieces + eos) per monolingual line."""
    out: list[tuple[str, tuple[int, ...]]] = []
    for lang, lines in corpora.items():
        if not lines:
            raise MissingMonolingualData(f"no monolingual lines for {lang!r}")
        for line in lines:
            ids = (
                [dec_model.bos_id, dec_model.lang_id(lang)]
                + encode(dec_model, line)
                + [dec_model.eos_id]
            )
            out.append((lang, tuple(ids)))
    return out


def lm_perplexity(params: ModelParams, sequences: list[tuple[int, ...]], pad_id: int) -> float:
    """exp of the mean per-token NLL (unsmoothed), LM mode."""
    packed = pack_sequences(list(sequences), max_tokens=4096, shuffle_seed=0, pad_id=pad_id)
    total = 0.0
    tokens = 0
    with no_grad():
        for arr, _ in packed:
            logits, _ = decoder_forward(params, None, None, arr[:, :-1])
            loss = label_smoothed_nll(logits, arr[:, 1:], 0.0, pad_id)
            n = int((arr[:, 1:] != pad_id).sum())
            total += loss.item() * n
            tokens += n
    return math.exp(total / tokens) if tokens else float("inf")


def pretrain_decoder(
    params: ModelParams,
    corpora: dict[str, list[str]],
    dec_model: BpeModel,
    cfg: TrainConfig,
) -> tuple[ModelParams, dict[str, float], list[tuple[int, float, float]]]:
    """Causal LM pretraining over language-token-prefixed monolingual text.

    Trains the decoder tensors of ``params`` in place (cross-attention is
    never exercised and keeps its initialization).  Returns the model,
    per-language perplexities, and a (step, lr, loss) log.
    """
    cfg.validate()
    tagged = lm_sequences(corpora, dec_model)
    sequences = [ids for _, ids in tagged]
    rng = Rng(cfg.seed)
    opt = Adam(params.parameters(), cfg)
    log: list[tuple[int, float, float]] = []
    epoch = 0
    epoch_start = 0
    packed = pack_sequences(sequences, cfg.max_tokens_per_batch, cfg.seed, dec_model.pad_id)
    for step in range(1, cfg.max_updates + 1):
        if step - 1 - epoch_start >= len(packed):
            epoch_start += len(packed)
            epoch += 1
            packed = pack_sequences(
                sequences, cfg.max_tokens_per_batch, cfg.seed + epoch, dec_model.pad_id
            )
        arr, _ = packed[step - 1 - epoch_start]
        for p in params.parameters():
            p.zero_grad()
        logits, _ = decoder_forward(
            params, None, None, arr[:, :-1], training=True, rng=rng, step=step
        )
        loss = label_smoothed_nll(logits, arr[:, 1:], cfg.label_smoothing, dec_model.pad_id)
        value = loss.item()
        loss.backward()
        lr = lr_at(step, cfg)
        opt.step(lr)
        log.append((step, lr, value))
    perplexities = {}
    for lang in corpora:
        seqs = [ids for tag, ids in tagged if tag == lang]
        perplexities[lang] = lm_perplexity(params, seqs, dec_model.pad_id)
        logger.info("pretrain-decoder %s perplexity %.3f", lang, perplexities[lang])
    return params, perplexities, log
