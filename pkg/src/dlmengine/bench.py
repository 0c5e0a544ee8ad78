"""Desk-scale corpora and experiment drivers.

The structured corpora put near-certain planning tokens at scaffold positions
and split probability mass across competing trajectories at content positions.
Three families ship in the default suite:

* ``dominant``  — one template holds >= 0.9 of the mass; every decoder must
  land exactly on it (the accuracy-equality regime).
* ``pivot``     — structure variants keyed by a planning-token pivot inside the
  planning band, with answer tokens correlated to structure; some instances
  are "traps" where the raw answer marginal points away from the mode until
  the pivot resolves.
* ``independent`` — several content positions split independently below
  tau_high, the regime where speculative multi-token commits pay off.

All generation is deterministic from the seed; identical specs and seeds
produce byte-identical corpora and run outputs.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Canvas, DecodeConfig, EngineError, Vocabulary
from .decoders import (
    AblationMode,
    decode_ablation,
    decode_pvf,
    decode_static,
    decode_threshold,
)
from .metrics import RunReport, write_reports_csv
from .oracle import EnumerationOracle, ExplicitDistribution, Oracle
from .vocabplan import PlanningSet, build_planning_set, default_static_list


class SpecError(EngineError):
    """Inconsistent corpus specification."""


DESK_MAX_LENGTH = 16
DESK_MAX_VOCAB = 64

_SPECIALS = ("<mask>", "<|endoftext|>", "<pad>")
_PLANNING_TOKENS = (
    "Therefore", "Thus", "Hence", "First", "Next", "Step", "Let", "So",
    ":", "=", "+", "return", "if",
)
_CONTENT_TOKENS = (
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "mu", "nu", "xi", "omicron", "rho", "sigma",
    "tau", "upsilon", "phi", "chi", "psi", "omega",
    "x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4",
    "3", "7", "9", "12", "26", "104",
)


def desk_vocabulary() -> Vocabulary:
    """The fixed small vocabulary all shipped corpora share."""
    tokens = _SPECIALS + _PLANNING_TOKENS + _CONTENT_TOKENS
    assert len(tokens) <= DESK_MAX_VOCAB
    return Vocabulary(tokens=tokens, mask_id=0, eos_id=1, pad_id=2)


def _planning_pool(vocab: Vocabulary, planning_set: PlanningSet) -> list[int]:
    special = {vocab.mask_id, vocab.eos_id, vocab.pad_id}
    return [i for i in sorted(planning_set.member_ids) if i not in special]


def _content_pool(vocab: Vocabulary, planning_set: PlanningSet) -> list[int]:
    special = {vocab.mask_id, vocab.eos_id, vocab.pad_id}
    return [i for i in range(len(vocab)) if i not in special and i not in planning_set]


@dataclass(frozen=True)
class Corpus:
    """A desk-scale task: vocabulary, target distribution, mode answer, layout."""

    name: str
    vocab: Vocabulary
    dist: ExplicitDistribution
    target: tuple[int, ...]
    block_size: int
    prompt: tuple[int, ...] = ()

    @property
    def gen_length(self) -> int:
        return self.dist.length

    def oracle(self) -> Oracle:
        return EnumerationOracle(self.dist, vocab_size=len(self.vocab), mask_id=self.vocab.mask_id)

    def fresh_canvas(self) -> Canvas:
        return Canvas.fresh(self.prompt, self.gen_length, self.vocab.mask_id)

    def mode_weight(self) -> float:
        return max(self.dist.weights)

    def config(self, **overrides) -> DecodeConfig:
        params: dict = {
            "gen_length": self.gen_length,
            "block_size": self.block_size,
            "tau_high": 0.9,
            "tau_plan_lo": 0.2,
            "tau_plan_hi": 0.65,
            "tau_ar_lo": 0.1,
            "n_sparsity": 5,
            "max_candidates": 3,
        }
        params.update(overrides)
        return DecodeConfig(**params)

    def planning_set(self) -> PlanningSet:
        return build_planning_set(self.vocab, default_static_list())


@dataclass(frozen=True)
class StructuredCorpusSpec:
    """Declarative corpus shape: shared planning scaffold, per-template content."""

    num_templates: int
    template_length: int
    scaffold_positions: tuple[int, ...]
    content_positions: tuple[int, ...]
    weights: tuple[float, ...]
    rng_seed: int


def gen_structured_corpus(spec: StructuredCorpusSpec, vocab: Vocabulary | None = None) -> Corpus:
    """Materialize the spec: scaffold tokens identical across templates, content
    tokens distinct per template at each content position, deterministic in the seed."""
    vocab = vocab or desk_vocabulary()
    if len(vocab) > DESK_MAX_VOCAB:
        raise SpecError(f"desk-scale vocabulary limited to {DESK_MAX_VOCAB} tokens")
    length = spec.template_length
    if not 1 <= length <= DESK_MAX_LENGTH:
        raise SpecError(f"template_length must be in [1, {DESK_MAX_LENGTH}]")
    if spec.num_templates < 1:
        raise SpecError("num_templates must be >= 1")
    scaffold = set(spec.scaffold_positions)
    content = set(spec.content_positions)
    if scaffold & content:
        raise SpecError("scaffold and content positions overlap")
    for pos in scaffold | content:
        if not 0 <= pos < length:
            raise SpecError(f"position {pos} outside the template")
    if len(spec.weights) != spec.num_templates:
        raise SpecError("weights must align with num_templates")
    if any(w <= 0 for w in spec.weights):
        raise SpecError("weights must be positive")

    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    if spec.num_templates > len(content_pool):
        raise SpecError("not enough content tokens for the requested template count")

    rng = random.Random(spec.rng_seed)
    scaffold_tokens = {pos: rng.choice(plan_pool) for pos in sorted(scaffold)}
    shared_fill = {
        pos: rng.choice(content_pool)
        for pos in range(length)
        if pos not in scaffold and pos not in content
    }
    per_position: dict[int, list[int]] = {
        pos: rng.sample(content_pool, spec.num_templates) for pos in sorted(content)
    }
    templates = []
    for t in range(spec.num_templates):
        row = []
        for pos in range(length):
            if pos in scaffold:
                row.append(scaffold_tokens[pos])
            elif pos in content:
                row.append(per_position[pos][t])
            else:
                row.append(shared_fill[pos])
        templates.append(tuple(row))
    dist = ExplicitDistribution(support=tuple(templates), weights=spec.weights)
    block = length // 2 if length % 2 == 0 else length
    return Corpus(
        name=f"structured-{spec.rng_seed}",
        vocab=vocab,
        dist=dist,
        target=dist.mode(),
        block_size=block,
    )


def _dominant_corpus(name: str, rng: random.Random, *, with_eos: bool) -> Corpus:
    """One template holds >= 0.9 of the mass; minors differ at a few content positions."""
    vocab = desk_vocabulary()
    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    length = rng.choice((12, 16))
    block = length // 2
    scaffold_positions = [0, 1, length // 2, length // 2 + 1]
    base = [rng.choice(content_pool) for _ in range(length)]
    for pos in scaffold_positions:
        base[pos] = rng.choice(plan_pool)
    if with_eos:
        eos_at = length - 3
        base[eos_at] = vocab.eos_id
        for pos in range(eos_at + 1, length):
            base[pos] = vocab.pad_id
    mode_weight = rng.uniform(0.90, 0.96)
    n_minor = rng.randint(1, 3)
    minors = []
    variable = [
        pos
        for pos in range(length)
        if pos not in scaffold_positions and base[pos] not in (vocab.eos_id, vocab.pad_id)
    ]
    for _ in range(n_minor):
        variant = list(base)
        for pos in rng.sample(variable, k=min(2, len(variable))):
            alternatives = [tok for tok in content_pool if tok != base[pos]]
            variant[pos] = rng.choice(alternatives)
        minors.append(tuple(variant))
    rest = 1.0 - mode_weight
    shares = [rng.uniform(0.5, 1.0) for _ in minors]
    total = sum(shares)
    weights = [mode_weight] + [rest * s / total for s in shares]
    dist = ExplicitDistribution(support=(tuple(base), *minors), weights=tuple(weights))
    return Corpus(
        name=name,
        vocab=vocab,
        dist=dist,
        target=tuple(base),
        block_size=block,
        prompt=(vocab.tokens.index("Step"), vocab.tokens.index(":")),
    )


def _pivot_corpus(name: str, rng: random.Random, *, trap: bool) -> Corpus:
    """Structure variants keyed by an in-band planning pivot; answers correlated to structure.

    Cells: (s0,a0)=p, (s0,a1)=q, (s1,a1)=r, (s2,a1)=t. The mode cell is
    (s0,a0); committing the pivot makes the mode answer base-committable
    (P(a0|s0) > tau_high) while the raw answer marginal is in the exploration
    band and, in the trap variant, points at a1.
    """
    vocab = desk_vocabulary()
    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    length = 12
    block = 6
    p = rng.uniform(0.38, 0.46) if trap else rng.uniform(0.52, 0.58)
    q = p * rng.uniform(0.03, 0.06)
    rest = 1.0 - p - q
    r = rest * rng.uniform(0.55, 0.65)
    t = rest - r
    pivots = rng.sample(plan_pool, 3)
    fillers = [rng.sample(content_pool, 3) for _ in range(4)]
    answers = rng.sample([c for c in content_pool if all(c not in f for f in fillers)], 2)
    scaffold = rng.sample(plan_pool, 2)

    def template(structure: int, answer: int) -> tuple[int, ...]:
        row = [0] * length
        for b in range(2):
            off = b * block
            row[off + 0] = scaffold[b]
            row[off + 1] = pivots[structure]
            row[off + 2] = fillers[2 * b][structure]
            row[off + 3] = fillers[2 * b + 1][structure]
            row[off + 4] = answers[answer]
            row[off + 5] = scaffold[b]
        return tuple(row)

    support = (template(0, 0), template(0, 1), template(1, 1), template(2, 1))
    weights = (p, q, r, t)
    dist = ExplicitDistribution(support=support, weights=weights)
    return Corpus(
        name=name,
        vocab=vocab,
        dist=dist,
        target=support[0],
        block_size=block,
    )


def _eos_corpus(name: str, rng: random.Random) -> Corpus:
    """An EOS whose prefix resolves while one post-conclusion noise position
    stays masked: the noise splits 12 ways, putting its confidence (~0.083)
    below tau_ar_lo and the planning band, so no route touches it and early
    truncation fires for every strategy. The target carries pad there.
    """
    vocab = desk_vocabulary()
    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    length = 12
    block = 6
    n_noise = 12
    scaffold = rng.sample(plan_pool, 3)
    shared = rng.sample(content_pool, 5)
    split_pos = rng.choice((2, 3, 4))
    split_tokens = rng.sample([c for c in content_pool if c not in shared], 2)
    noise = rng.sample([c for c in content_pool if c not in shared and c not in split_tokens], n_noise)
    mode_share = rng.uniform(0.91, 0.95)

    def template(variant: int, noise_tok: int) -> tuple[int, ...]:
        row = [0] * length
        row[0] = scaffold[0]
        row[1] = shared[0]
        row[2] = shared[1]
        row[3] = shared[2]
        row[4] = shared[3]
        row[5] = scaffold[1]
        row[6] = scaffold[2]
        row[7] = shared[4]
        row[8] = vocab.eos_id
        row[9] = noise_tok
        row[10] = vocab.pad_id
        row[11] = vocab.pad_id
        row[split_pos] = split_tokens[variant]
        return tuple(row)

    support = []
    weights = []
    for variant, share in ((0, mode_share), (1, 1.0 - mode_share)):
        for noise_tok in noise:
            support.append(template(variant, noise_tok))
            weights.append(share / n_noise)
    target = list(template(0, noise[0]))
    target[9] = vocab.pad_id
    dist = ExplicitDistribution(support=tuple(support), weights=tuple(weights))
    return Corpus(
        name=name,
        vocab=vocab,
        dist=dist,
        target=tuple(target),
        block_size=block,
    )


def _conflict_corpus(name: str, rng: random.Random) -> Corpus:
    """Planning proposals that contradict the visible future at tau_high ~ 0.7.

    One informative base-committable position (marginal ~0.75), one impact
    position whose base-conditioned confidence just clears 0.7, and a pivot
    whose leading planning token correlates against the impact argmax, so
    Filter 1 rejects every proposal and the PAUSE path runs organically.
    Under the default tau_high = 0.9 the same corpus decodes via forced and
    AR steps; the rejection regime appears when run with tau_high ~ 0.7.
    """
    vocab = desk_vocabulary()
    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    length = 8
    block = 4
    k_w = rng.uniform(0.74, 0.78)
    m_w = 1.0 - k_w
    p1_given_k = rng.uniform(0.38, 0.42)
    v_given_k_p1 = rng.uniform(0.66, 0.72)
    pivots = rng.sample(plan_pool, 2)
    scaffold = rng.sample(plan_pool, 2)
    b_tokens = rng.sample(content_pool, 2)
    x_tokens = rng.sample([c for c in content_pool if c not in b_tokens], 2)
    filler = rng.sample([c for c in content_pool if c not in b_tokens and c not in x_tokens], 3)

    def template(b_tok: int, pivot: int, x_tok: int) -> tuple[int, ...]:
        return (
            scaffold[0], b_tok, pivot, x_tok,
            scaffold[1], filler[0], filler[1], filler[2],
        )

    u, v = x_tokens
    cells = [
        (b_tokens[0], pivots[0], u, k_w * p1_given_k * (1.0 - v_given_k_p1)),
        (b_tokens[0], pivots[0], v, k_w * p1_given_k * v_given_k_p1),
        (b_tokens[0], pivots[1], u, k_w * (1.0 - p1_given_k)),
        (b_tokens[1], pivots[0], v, m_w),
    ]
    support = tuple(template(b, piv, x) for b, piv, x, _ in cells)
    weights = tuple(w for _, _, _, w in cells)
    dist = ExplicitDistribution(support=support, weights=weights)
    mode = max(range(len(weights)), key=lambda i: (weights[i], -i))
    return Corpus(
        name=name,
        vocab=vocab,
        dist=dist,
        target=support[mode],
        block_size=block,
    )


def _independent_corpus(name: str, rng: random.Random) -> Corpus:
    """Several content positions split independently below tau_high (no correlations)."""
    vocab = desk_vocabulary()
    planning = build_planning_set(vocab, default_static_list())
    plan_pool = _planning_pool(vocab, planning)
    content_pool = _content_pool(vocab, planning)
    length = 12
    block = 6
    n_splits = rng.randint(3, 4)
    scaffold_positions = [0, 6]
    split_positions = rng.sample([i for i in range(length) if i not in scaffold_positions], n_splits)
    base = [rng.choice(content_pool) for _ in range(length)]
    for pos in scaffold_positions:
        base[pos] = rng.choice(plan_pool)
    split_share = {pos: rng.uniform(0.52, 0.62) for pos in split_positions}
    alternates = {}
    for pos in split_positions:
        alternates[pos] = rng.choice([tok for tok in content_pool if tok != base[pos]])
    support = []
    weights = []
    for mask_bits in range(2 ** n_splits):
        row = list(base)
        w = 1.0
        for bit, pos in enumerate(sorted(split_positions)):
            if mask_bits >> bit & 1:
                row[pos] = alternates[pos]
                w *= 1.0 - split_share[pos]
            else:
                w *= split_share[pos]
        support.append(tuple(row))
        weights.append(w)
    dist = ExplicitDistribution(support=tuple(support), weights=tuple(weights))
    return Corpus(
        name=name,
        vocab=vocab,
        dist=dist,
        target=tuple(base),
        block_size=block,
        prompt=(vocab.tokens.index("Let"),),
    )


def default_suite(seed: int = 7, size: int = 60) -> list[Corpus]:
    """The shipped benchmark suite: a deterministic mix of the three families."""
    if size < 3:
        raise SpecError("suite size must be >= 3")
    rng = random.Random(seed)
    corpora: list[Corpus] = []
    kinds = ["dominant", "pivot", "independent", "dominant", "pivot", "eos"]
    for i in range(size):
        kind = kinds[i % 6]
        if kind == "dominant":
            corpora.append(_dominant_corpus(f"dominant-{i:03d}", rng, with_eos=i % 12 == 0))
        elif kind == "pivot":
            corpora.append(_pivot_corpus(f"pivot-{i:03d}", rng, trap=i % 12 in (1, 4)))
        elif kind == "eos":
            corpora.append(_eos_corpus(f"eos-{i:03d}", rng))
        else:
            corpora.append(_independent_corpus(f"independent-{i:03d}", rng))
    return corpora


def random_suite(seed: int, size: int) -> list[Corpus]:
    """Randomized corpora for fuzz-style end-to-end testing (any family, any weights)."""
    rng = random.Random(seed)
    out = []
    for i in range(size):
        pick = rng.random()
        if pick < 0.24:
            out.append(_dominant_corpus(f"rand-dom-{seed}-{i}", rng, with_eos=rng.random() < 0.25))
        elif pick < 0.55:
            out.append(_pivot_corpus(f"rand-piv-{seed}-{i}", rng, trap=rng.random() < 0.5))
        elif pick < 0.72:
            out.append(_independent_corpus(f"rand-ind-{seed}-{i}", rng))
        elif pick < 0.86:
            out.append(_conflict_corpus(f"rand-con-{seed}-{i}", rng))
        else:
            out.append(_eos_corpus(f"rand-eos-{seed}-{i}", rng))
    return out


STRATEGIES = ("static", "threshold", "pvf", "ablation_random", "ablation_planning")


def run_strategy(
    corpus: Corpus,
    strategy: str,
    cfg: DecodeConfig,
    *,
    oracle: Oracle | None = None,
    seed: int = 0,
    band: tuple[float, float] = (0.2, 0.6),
    trace_path: str | None = None,
) -> tuple[Canvas, RunReport]:
    """Run one named strategy over one corpus."""
    oracle = oracle or corpus.oracle()
    canvas = corpus.fresh_canvas()
    if strategy == "static":
        return decode_static(canvas, oracle, corpus.vocab, cfg, trace_path=trace_path)
    if strategy == "threshold":
        return decode_threshold(canvas, oracle, corpus.vocab, cfg, trace_path=trace_path)
    if strategy == "pvf":
        return decode_pvf(
            canvas, oracle, corpus.vocab, cfg,
            planning_set=corpus.planning_set(), trace_path=trace_path,
        )
    if strategy in ("ablation_random", "ablation_planning"):
        mode = AblationMode.PLANNING if strategy.endswith("planning") else AblationMode.RANDOM
        return decode_ablation(
            canvas, oracle, corpus.vocab, cfg,
            mode=mode, band=band, rng_seed=seed,
            planning_set=corpus.planning_set(), trace_path=trace_path,
        )
    raise SpecError(f"unknown strategy {strategy!r} (expected one of {STRATEGIES})")


def run_matrix(
    corpora: Sequence[Corpus],
    strategies: Sequence[str],
    cfg_grid: Sequence[Mapping[str, object]] = ({},),
    out_dir: str | None = None,
    *,
    seed: int = 0,
    band: tuple[float, float] = (0.2, 0.6),
) -> list[dict]:
    """Cross-product runs; returns one row per (corpus, strategy, grid point).

    Grid entries override DecodeConfig fields; the special keys ``band``
    (an [lo, hi] pair for the ablation strategies) and ``seed`` vary the
    exploration band and RNG per point. When ``out_dir`` is given, writes
    ``runs.csv`` and ``pareto.json`` there; partial rows are flushed even if
    a run raises.
    """
    if not strategies:
        raise SpecError("strategies must be nonempty")
    rows: list[dict] = []
    try:
        run_id = 0
        for overrides in cfg_grid:
            overrides = dict(overrides)
            point_band = tuple(overrides.pop("band", band))  # type: ignore[arg-type]
            point_seed = int(overrides.pop("seed", seed))  # type: ignore[call-overload]
            for corpus in corpora:
                cfg = corpus.config(**overrides)
                for strategy in strategies:
                    _, report = run_strategy(
                        corpus, strategy, cfg, seed=point_seed, band=point_band
                    )
                    rows.append(
                        {
                            "run_id": run_id,
                            "strategy": strategy,
                            "corpus": corpus.name,
                            "tau_high": cfg.tau_high,
                            "band_lo": point_band[0],
                            "band_hi": point_band[1],
                            "max_candidates": cfg.max_candidates,
                            "nfe": report.nfe,
                            "raw_forwards": report.raw_forwards,
                            "steps": report.steps,
                            "planning_rate": report.planning_rate,
                            "accuracy": int(tuple(report.final_text) == tuple(corpus.target)),
                        }
                    )
                    run_id += 1
    finally:
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            write_reports_csv(rows, os.path.join(out_dir, "runs.csv"))
            _write_pareto(rows, os.path.join(out_dir, "pareto.json"))
    return rows


def _write_pareto(rows: Sequence[Mapping[str, object]], path: str) -> None:
    points: dict[str, dict[float, list]] = {}
    for row in rows:
        points.setdefault(str(row["strategy"]), {}).setdefault(float(row["tau_high"]), []).append(row)
    payload = {
        strategy: [
            {
                "tau_high": tau,
                "nfe": sum(r["nfe"] for r in group) / len(group),
                "accuracy": sum(r["accuracy"] for r in group) / len(group),
            }
            for tau, group in sorted(by_tau.items())
        ]
        for strategy, by_tau in points.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_corpus(corpus: Corpus, path: str) -> None:
    payload = {
        "name": corpus.name,
        "vocab": {
            "tokens": list(corpus.vocab.tokens),
            "mask": corpus.vocab.mask_id,
            "eos": corpus.vocab.eos_id,
            "pad": corpus.vocab.pad_id,
        },
        "support": [list(seq) for seq in corpus.dist.support],
        "weights": list(corpus.dist.weights),
        "target": list(corpus.target),
        "prompt": list(corpus.prompt),
        "block_size": corpus.block_size,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_corpus(path: str) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        vocab = Vocabulary(
            tokens=tuple(payload["vocab"]["tokens"]),
            mask_id=int(payload["vocab"]["mask"]),
            eos_id=int(payload["vocab"]["eos"]),
            pad_id=int(payload["vocab"]["pad"]),
        )
        dist = ExplicitDistribution(
            support=tuple(tuple(int(tok) for tok in seq) for seq in payload["support"]),
            weights=tuple(float(w) for w in payload["weights"]),
        )
        return Corpus(
            name=str(payload.get("name", os.path.basename(path))),
            vocab=vocab,
            dist=dist,
            target=tuple(int(tok) for tok in payload["target"]),
            block_size=int(payload["block_size"]),
            prompt=tuple(int(tok) for tok in payload.get("prompt", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"{path}: bad corpus file: {exc}") from exc
