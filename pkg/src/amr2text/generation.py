"""Beam-search and greedy decoding plus cross-attention export.

A hypothesis is the generated id sequence after bos, ending with eos; its
length n (eos included) feeds the length penalty lp(n) = ((5+n)/6)^alpha
and score = logprob / lp(n).  Finished hypotheses are set aside as they
produce eos (they do not occupy beam slots); live beams are ranked by raw
logprob, finished ones by score.  A beam that reaches max_len without eos
is force-finished with eos so the search always returns something.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EncoderInput, ModelParams, decoder_forward, encode
from .tensor import Tensor, no_grad


class NoHypothesis(RuntimeError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    length_penalty_alpha: float = 1.0
    max_len: int = 64
    min_len: int = 1

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not self.max_len >= self.min_len >= 1:
            raise ValueError("require max_len >= min_len >= 1")


@dataclass(frozen=True)
class Hypothesis:
    """ids includes the leading bos and the final eos when complete."""

    ids: tuple[int, ...]
    logprob: float
    score: float

    def generated(self, eos_id: int) -> tuple[int, ...]:
        body = self.ids[1:]
        if body and body[-1] == eos_id:
            body = body[:-1]
        return body


def length_penalty(n: int, alpha: float) -> float:
    return ((5.0 + n) / 6.0) ** alpha


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _finalize(ids: tuple[int, ...], logprob: float, alpha: float) -> Hypothesis:
    n = len(ids) - 1
    return Hypothesis(ids=ids, logprob=logprob, score=logprob / length_penalty(n, alpha))


def beam_search(
    params: ModelParams,
    enc_input: EncoderInput,
    cfg: BeamConfig,
    bos_id: int,
    eos_id: int,
) -> tuple[Hypothesis, list[Hypothesis]]:
    """Length-normalized beam search over one encoder input.

    Returns (best hypothesis by score, n-best list of size <= beam_size,
    deduplicated by id sequence, sorted by score descending).
    """
    with no_grad():
        memory, memory_mask = encode(params, enc_input)
        live: list[tuple[tuple[int, ...], float]] = [((bos_id,), 0.0)]
        finished: list[Hypothesis] = []
        for _ in range(cfg.max_len):
            prefixes = np.asarray([ids for ids, _ in live], dtype=np.int64)
            b = prefixes.shape[0]
            mem = memory
            mask = memory_mask
            if b > 1:
                # One encoder state row repeated across all live beams.
                mem_data = np.repeat(memory.data, b, axis=0)
                mem = Tensor(mem_data, dtype=mem_data.dtype)
                mask = np.repeat(memory_mask, b, axis=0)
            logits, _ = decoder_forward(params, mem, mask, prefixes)
            logp = _log_softmax(logits.data[:, -1, :])
            candidates: list[tuple[tuple[int, ...], float]] = []
            for row, (ids, lp_sum) in enumerate(live):
                n_generated = len(ids) - 1
                scores = logp[row]
                if n_generated + 1 < cfg.min_len:
                    scores = scores.copy()
                    scores[eos_id] = -np.inf
                if n_generated + 1 >= cfg.max_len:
                    # Budget exhausted on the next token: force eos.
                    finished.append(
                        _finalize(
                            ids + (eos_id,), lp_sum + scores[eos_id],
                            cfg.length_penalty_alpha,
                        )
                    )
                    continue
                for token in range(scores.shape[0]):
                    total = lp_sum + scores[token]
                    if total == -np.inf:
                        continue
                    if token == eos_id:
                        finished.append(
                            _finalize(ids + (eos_id,), total, cfg.length_penalty_alpha)
                        )
                    else:
                        candidates.append((ids + (token,), total))
            candidates.sort(key=lambda c: (-c[1], c[0]))
            live = candidates[: cfg.beam_size]
            if not live:
                break
    if not finished:
        raise NoHypothesis("no hypothesis reached eos within max_len")
    finished.sort(key=lambda h: (-h.score, h.ids))
    nbest: list[Hypothesis] = []
    seen: set[tuple[int, ...]] = set()
    for h in finished:
        if h.ids not in seen:
            seen.add(h.ids)
            nbest.append(h)
        if len(nbest) >= cfg.beam_size:
            break
    return nbest[0], nbest


def greedy(
    params: ModelParams,
    enc_input: EncoderInput,
    max_len: int,
    bos_id: int,
    eos_id: int,
) -> Hypothesis:
    """Argmax decoding; the score is the raw logprob (alpha 0)."""
    with no_grad():
        memory, memory_mask = encode(params, enc_input)
        ids: tuple[int, ...] = (bos_id,)
        logprob = 0.0
        for _ in range(max_len):
            logits, _ = decoder_forward(params, memory, memory_mask, np.asarray([ids]))
            logp = _log_softmax(logits.data[0, -1, :])
            if len(ids) - 1 + 1 >= max_len:
                token = eos_id
            else:
                token = int(logp.argmax())
            logprob += float(logp[token])
            ids = ids + (token,)
            if token == eos_id:
                break
    return Hypothesis(ids=ids, logprob=logprob, score=logprob)


def cross_attention_matrix(
    params: ModelParams,
    enc_input: EncoderInput,
    hypothesis: Hypothesis,
    layer: int = -1,
    head: int | None = None,
) -> np.ndarray:
    """Cross-attention for each generated token (rows) over input positions.

    Row t is the attention of the query that produced hypothesis token t+1
    (so there is one row per id after bos, eos included), averaged over
    heads unless a specific head is selected; defaults to the final
    decoder layer.
    """
    if len(hypothesis.ids) < 2:
        raise LengthMismatch("hypothesis has no generated tokens")
    with no_grad():
        memory, memory_mask = encode(params, enc_input)
        _, weights = decoder_forward(
            params,
            memory,
            memory_mask,
            np.asarray([hypothesis.ids]),
            collect_attention=True,
        )
    picked = weights[layer][0]  # (heads, T, S)
    matrix = picked[head] if head is not None else picked.mean(axis=0)
    return matrix[:-1, :]


def attention_dump(
    params: ModelParams,
    enc_input: EncoderInput,
    hypothesis: Hypothesis,
    input_tokens: list[str],
    output_pieces: list[str],
    path,
    layer: int = -1,
    head: int | None = None,
) -> np.ndarray:
    """Write the labeled attention grid; rows are output pieces.

    Row labels must match the hypothesis body (bos excluded) and column
    labels the encoder input, else LengthMismatch.
    """
    matrix = cross_attention_matrix(params, enc_input, hypothesis, layer, head)
    if matrix.shape[0] != len(output_pieces):
        raise LengthMismatch(
            f"{len(output_pieces)} row labels for {matrix.shape[0]} attention rows"
        )
    if matrix.shape[1] != len(input_tokens):
        raise LengthMismatch(
            f"{len(input_tokens)} column labels for {matrix.shape[1]} attention columns"
        )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t" + "\t".join(input_tokens) + "\n")
        for piece, row in zip(output_pieces, matrix):
            f.write(piece + "\t" + "\t".join(f"{v:.6f}" for v in row) + "\n")
    return matrix


def read_attention_dump(path) -> tuple[list[str], list[str], np.ndarray]:
    """Inverse of attention_dump: (column labels, row labels, matrix)."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    columns = lines[0].split("\t")[1:]
    rows: list[str] = []
    values: list[list[float]] = []
    for line in lines[1:]:
        fields = line.split("\t")
        rows.append(fields[0])
        values.append([float(v) for v in fields[1:]])
    return columns, rows, np.asarray(values)
