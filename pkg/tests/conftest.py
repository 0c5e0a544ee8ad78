"""Shared test fixtures: tiny vocabularies, an independent brute-force
conditional (exact rationals, written against the math rather than the
oracle's code path), and random-instance generators."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from dlmengine.core import Canvas, Vocabulary
from dlmengine.oracle import EnumerationOracle, ExplicitDistribution

MASK, EOS, PAD = 0, 1, 2


def tiny_vocab(*words: str) -> Vocabulary:
    """Vocabulary with the three specials at 0/1/2 followed by the given words."""
    return Vocabulary(
        tokens=("<mask>", "<|endoftext|>", "<pad>", *words),
        mask_id=MASK,
        eos_id=EOS,
        pad_id=PAD,
    )


def ids(vocab: Vocabulary, *words: str) -> tuple[int, ...]:
    return tuple(vocab.tokens.index(w) for w in words)


def brute_conditional(
    support: tuple[tuple[int, ...], ...],
    weights: tuple[float, ...],
    gen: tuple[int, ...],
    mask_id: int,
    position: int,
) -> dict[int, Fraction] | None:
    """Exact re-enumeration of P(y^pos = w | resolved positions of gen).

    Walks the support directly with Fraction arithmetic; returns None when no
    sequence is consistent (the inconsistent-state case).
    """
    totals: dict[int, Fraction] = {}
    denom = Fraction(0)
    for seq, weight in zip(support, weights):
        if any(g != mask_id and g != s for g, s in zip(gen, seq)):
            continue
        w = Fraction(weight)
        denom += w
        totals[seq[position]] = totals.get(seq[position], Fraction(0)) + w
    if denom == 0:
        return None
    return {tok: w / denom for tok, w in totals.items()}


def brute_top(probs: dict[int, Fraction]) -> tuple[int, Fraction]:
    """Argmax with the lowest-index tie rule, in exact arithmetic."""
    peak = max(probs.values())
    token = min(tok for tok, p in probs.items() if p == peak)
    return token, peak


def random_distribution(
    rng: random.Random,
    *,
    length: int,
    vocab_size: int,
    max_support: int,
) -> ExplicitDistribution:
    distinct_limit = (vocab_size - 1) ** length
    n = rng.randint(1, min(max_support, distinct_limit))
    support = []
    seen = set()
    while len(support) < n:
        seq = tuple(rng.randrange(1, vocab_size) for _ in range(length))
        if seq not in seen:
            seen.add(seq)
            support.append(seq)
    weights = [rng.uniform(0.05, 1.0) for _ in support]
    total = sum(weights)
    return ExplicitDistribution(
        support=tuple(support), weights=tuple(w / total for w in weights)
    )


def random_consistent_canvas(
    rng: random.Random, dist: ExplicitDistribution, mask_id: int = MASK
) -> Canvas:
    """A partially resolved canvas consistent with at least one support row."""
    anchor = dist.support[rng.randrange(len(dist.support))]
    gen = [
        anchor[i] if rng.random() < 0.4 else mask_id
        for i in range(len(anchor))
    ]
    if all(tok != mask_id for tok in gen):
        gen[rng.randrange(len(gen))] = mask_id
    return Canvas(prompt=(), gen=tuple(gen), mask_id=mask_id)


class ScriptOracle:
    """Test double keyed by the generation tuple: exact per-state predictions.

    ``script`` maps a gen tuple to {position: (token, prob)}. Queries outside
    the script raise KeyError, which makes unplanned engine states fail loudly.
    """

    def __init__(self, script: dict[tuple[int, ...], dict[int, tuple[int, float]]], *, cost_per_state: bool = False):
        self.script = script
        self.cost_per_state = cost_per_state
        self.calls: list[tuple[tuple[int, ...], tuple[int, ...]]] = []

    def predict(self, request):
        from dlmengine.core import Prediction
        from dlmengine.oracle import OracleResponse

        batches = []
        for canvas, positions in zip(request.states, request.query_positions):
            self.calls.append((canvas.gen, tuple(positions)))
            table = self.script[canvas.gen] if positions else {}
            preds = tuple(
                Prediction(position=pos, top_token=table[pos][0], top_prob=table[pos][1])
                for pos in positions
            )
            batches.append(preds)
        cost = len(request.states) if self.cost_per_state else 1
        return OracleResponse(predictions=tuple(batches), forward_cost=cost)

    def close(self):
        pass


@pytest.fixture
def ab_vocab() -> Vocabulary:
    return tiny_vocab("A", "B", "C")


def uniform_ab_oracle(vocab: Vocabulary) -> tuple[EnumerationOracle, ExplicitDistribution]:
    """The two-sequence distribution {"A B": 0.5, "A C": 0.5}."""
    a, b, c = ids(vocab, "A", "B", "C")
    dist = ExplicitDistribution(support=((a, b), (a, c)), weights=(0.5, 0.5))
    return EnumerationOracle(dist, vocab_size=len(vocab), mask_id=vocab.mask_id), dist
