"""Independent reference implementations used to pin expected values.

Everything here is deliberately written from the definitions, not from the
package code: straightforward, slow, and structure-free, so that agreement
with the package is evidence rather than tautology.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from amr2text.graph import AmrGraph

ROLES = (":ARG0", ":ARG1", ":ARG2", ":mod", ":time", ":op1", ":manner")
CONCEPTS = (
    "want-01", "go-02", "boy", "girl", "city", "name", "say-01", "fast",
    "believe-01", "dog", "country", "run-02", "person", "new", "house",
)
ATTR_VALUES = ('"New York"', '"hello world"', "-", "42", "3.14", "imperative", "2002")


def random_graph(
    rng: np.random.Generator,
    max_nodes: int = 12,
    p_reentrant: float = 0.3,
    p_attr: float = 0.5,
) -> AmrGraph:
    """A random rooted DAG: tree backbone plus forward re-entrant edges.

    Edges only point from lower to higher node index, so the graph is
    acyclic by construction; every node hangs off the root through its
    tree parent, so it is connected.
    """
    n = int(rng.integers(1, max_nodes + 1))
    nodes = {f"v{i}": str(rng.choice(CONCEPTS)) for i in range(n)}
    names = list(nodes)
    edges = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        edges.append((names[parent], str(rng.choice(ROLES)), names[i]))
    for i in range(2, n):
        if rng.random() < p_reentrant:
            src = int(rng.integers(0, i))
            if (names[src], names[i]) not in [(s, t) for s, _, t in edges]:
                edges.append((names[src], str(rng.choice(ROLES)), names[i]))
    attributes = []
    for i in range(n):
        if rng.random() < p_attr:
            attributes.append(
                (names[i], str(rng.choice(ROLES)), str(rng.choice(ATTR_VALUES)))
            )
    return AmrGraph(
        root=names[0], nodes=nodes, edges=tuple(edges), attributes=tuple(attributes)
    )


def oracle_depth(g: AmrGraph) -> dict[str, int]:
    """Layer-by-layer BFS from the root over directed edges."""
    children: dict[str, list[str]] = {v: [] for v in g.nodes}
    for src, _, tgt in g.edges:
        children[src].append(tgt)
    depth = {}
    layer = [g.root]
    d = 0
    while layer:
        nxt = []
        for v in layer:
            if v in depth:
                continue
            depth[v] = d
            nxt.extend(children[v])
        layer = nxt
        d += 1
    return depth


def oracle_subgraph(g: AmrGraph) -> dict[str, int]:
    """1 + index of the first root child (edge order) that reaches the node."""

    def reachable(start: str) -> set[str]:
        seen = set()
        stack = [start]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(t for s, _, t in g.edges if s == v)
        return seen

    root_children = [t for s, _, t in g.edges if s == g.root]
    sets = [reachable(c) for c in root_children]
    out = {g.root: 0}
    for v in g.nodes:
        if v == g.root:
            continue
        for k, cover in enumerate(sets):
            if v in cover:
                out[v] = k + 1
                break
    return out


def bleu_precision_counts(
    hyp_tokens: list[str], ref_tokens: list[str], n: int
) -> tuple[int, int]:
    """(clipped matches, total) of hypothesis n-grams against one reference."""
    hyp = Counter(tuple(hyp_tokens[i : i + n]) for i in range(len(hyp_tokens) - n + 1))
    ref = Counter(tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1))
    total = sum(hyp.values())
    correct = sum(min(c, ref[g]) for g, c in hyp.items())
    return correct, total


def brute_force_bleu(hyp_corpus: list[list[str]], ref_corpus: list[list[str]]) -> float:
    """Corpus BLEU from the definition: clipped precisions, exp brevity penalty."""
    import math

    correct = [0] * 4
    total = [0] * 4
    hyp_len = sum(len(h) for h in hyp_corpus)
    ref_len = sum(len(r) for r in ref_corpus)
    for h, r in zip(hyp_corpus, ref_corpus):
        for n in range(1, 5):
            c, t = bleu_precision_counts(h, r, n)
            correct[n - 1] += c
            total[n - 1] += t
    precisions = []
    for n in range(4):
        if total[n] == 0 or correct[n] == 0:
            return 0.0
        precisions.append(correct[n] / total[n])
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(sum(math.log(p) for p in precisions) / 4.0) * 100.0


@dataclass
class FdCheck:
    name: str
    max_rel_err: float
    max_abs_err: float


def finite_difference_grads(
    loss_fn, tensors: dict, epsilon: float = 1e-5, probes_per_tensor: int | None = None,
    rng: np.random.Generator | None = None, floor: float = 1e-8,
) -> list[FdCheck]:
    """Central-difference gradients versus stored .grad for named tensors.

    loss_fn() must rebuild the graph and return a float; tensor .grad must
    already hold the analytic gradients for the same loss.  When
    probes_per_tensor is given, only that many randomly chosen entries per
    tensor are probed (the relative error is then over those entries).
    ``floor`` bounds the relative-error denominator from below; raise it for
    parameters whose true gradient is exactly zero (the FD value there is
    pure rounding noise, around machine_eps * |loss| / (2 * epsilon)).
    """
    out = []
    for name, t in tensors.items():
        grad = t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if probes_per_tensor is not None and flat.size > probes_per_tensor:
            idx = rng.choice(flat.size, size=probes_per_tensor, replace=False)
        num = np.zeros(idx.size)
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = loss_fn()
            flat[k] = orig - epsilon
            down = loss_fn()
            flat[k] = orig
            num[j] = (up - down) / (2.0 * epsilon)
        ana = grad.reshape(-1)[idx]
        denom = np.maximum(np.abs(num) + np.abs(ana), floor)
        rel = np.abs(num - ana) / denom
        out.append(FdCheck(name, float(rel.max()), float(np.abs(num - ana).max())))
    return out


def exhaustive_best_sequence(
    step_logprobs, bos_id: int, eos_id: int, vocab: int, max_len: int, alpha: float
):
    """Best-scoring eos-terminated sequence by full enumeration.

    step_logprobs(prefix) must return the next-token log distribution for a
    bos-led prefix.  Scoring matches the package: logprob summed over
    generated tokens (eos included), normalized by ((5+n)/6)^alpha with
    n = sequence length minus the bos.  At the length budget the sequence
    must end with eos.
    """
    best = None

    def walk(prefix: tuple[int, ...], lp: float):
        nonlocal best
        n_generated = len(prefix) - 1
        logp = step_logprobs(prefix)
        for token in range(vocab):
            total = lp + float(logp[token])
            if token == eos_id:
                n = n_generated + 1
                score = total / (((5.0 + n) / 6.0) ** alpha)
                cand = (prefix + (token,), total, score)
                if best is None or score > best[2] or (
                    score == best[2] and cand[0] < best[0]
                ):
                    best = cand
            elif n_generated + 1 < max_len:
                walk(prefix + (token,), total)

    walk((bos_id,), 0.0)
    return best
