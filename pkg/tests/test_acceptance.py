"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside the measured margins.
"""

from __future__ import annotations

import json
import random
import time

from dlmengine.bench import (
    default_suite,
    desk_vocabulary,
    random_suite,
    run_strategy,
)
from dlmengine.core import Canvas, DecodeConfig, Prediction
from dlmengine.decoders import (
    CandidateKind,
    CandidateTrajectory,
    ar_candidates,
    ar_verify,
    compute_base,
    decode_ablation,
    decode_pvf,
    decode_static,
    decode_threshold,
    filter1_consistency,
    filter2_total_confidence,
    plan_candidates,
)
from dlmengine.oracle import EnumerationOracle, OracleRequest, OracleResponse
from dlmengine.sched import working_set
from dlmengine.vocabplan import PlanningSet, PlanningSource, build_planning_set, default_static_list

from conftest import MASK, brute_conditional, brute_top, random_consistent_canvas, random_distribution
from rule_reference import (
    ref_ar_accept,
    ref_ar_ladder,
    ref_base_set,
    ref_base_state,
    ref_filter1,
    ref_impact_set,
    ref_plan_candidates,
    ref_total_confidence,
    ref_working_set,
)
from trace_checks import check_pvf_trace, check_threshold_trace


def test_oracle_exactness_200_random_distributions():
    """predict matches an independent exact re-enumeration, <= 1e-12 everywhere."""
    rng = random.Random(20240601)
    started = time.time()
    worst = 0.0
    for case in range(200):
        length = rng.randint(2, 8)
        vocab_size = rng.randint(4, 10)
        dist = random_distribution(rng, length=length, vocab_size=vocab_size, max_support=32)
        oracle = EnumerationOracle(dist, vocab_size=vocab_size, mask_id=MASK)
        canvas = random_consistent_canvas(rng, dist)
        positions = canvas.masked_positions
        preds = oracle.predict(
            OracleRequest(states=(canvas,), query_positions=(positions,), want_full_dist=True)
        ).by_position(0)
        for pos in positions:
            probs = brute_conditional(dist.support, dist.weights, canvas.gen, MASK, pos)
            token, peak = brute_top(probs)
            assert preds[pos].top_token == token, f"case {case}: argmax mismatch at {pos}"
            err = abs(preds[pos].top_prob - float(peak))
            worst = max(worst, err)
            assert err <= 1e-12
            for tok, frac in probs.items():
                delta = abs(preds[pos].dist[tok] - float(frac))
                worst = max(worst, delta)
                assert delta <= 1e-12
    elapsed = time.time() - started
    assert elapsed < 10.0
    print(f"\nACCEPTANCE oracle-exactness: PASS (200 distributions, max err {worst:.2e}, {elapsed:.2f}s)")


def _random_cfg(rng: random.Random, length: int):
    sizes = [s for s in (2, 3, 4, 6, 8) if length % s == 0]
    tau_high = rng.uniform(0.5, 0.95)
    hi = rng.uniform(0.15, tau_high)
    lo = rng.uniform(0.01, hi * 0.9)
    return DecodeConfig(
        gen_length=length,
        block_size=rng.choice(sizes),
        tau_high=tau_high,
        tau_plan_lo=lo,
        tau_plan_hi=hi,
        tau_ar_lo=rng.uniform(0.0, 0.5),
        n_sparsity=rng.randint(0, 4),
        max_candidates=rng.randint(1, 3),
    )


def _random_preds(rng: random.Random, positions, vocab_size: int) -> dict[int, Prediction]:
    return {
        pos: Prediction(position=pos, top_token=rng.randrange(1, vocab_size), top_prob=rng.random())
        for pos in positions
    }


def _random_canvas(rng: random.Random, length: int, vocab_size: int) -> Canvas:
    gen = tuple(
        MASK if rng.random() < 0.6 else rng.randrange(1, vocab_size) for _ in range(length)
    )
    if MASK not in gen:
        gen = (MASK,) + gen[1:]
    return Canvas(prompt=(), gen=gen, mask_id=MASK)


def test_rule_level_conformance_1000_cases_each():
    """Each per-step rule matches its literal restatement on randomized inputs."""
    rng = random.Random(77)
    started = time.time()
    cases = 1000
    vocab_size = 12

    for _ in range(cases):
        length = rng.choice((4, 6, 8, 12))
        cfg = _random_cfg(rng, length)
        canvas = _random_canvas(rng, length, vocab_size)
        masked = canvas.masked_positions

        # compute_base (base set, base state, impact set)
        preds = _random_preds(rng, masked, vocab_size)
        base_preds2 = _random_preds(
            rng, [p for p in masked if rng.random() < 0.7], vocab_size
        )
        ctx = compute_base(preds, canvas, cfg, base_preds2)
        want_base = ref_base_set(preds, canvas, cfg.tau_high)
        assert set(ctx.base_set) == want_base
        assert ctx.base_state.gen == ref_base_state(preds, canvas, want_base)
        assert set(ctx.impact_set) == ref_impact_set(
            base_preds2, ctx.base_state.gen, MASK, cfg.tau_high
        )

        # plan_candidates
        members = frozenset(
            tok for tok in range(1, vocab_size) if rng.random() < 0.4
        )
        pset = PlanningSet(member_ids=members, source_tags={m: PlanningSource.STATIC_LIST for m in members})
        got = plan_candidates(preds, canvas, pset, cfg)
        assert got == ref_plan_candidates(
            preds, canvas, set(members), cfg.tau_plan_lo, cfg.tau_plan_hi, cfg.max_candidates
        )

        # ar_candidates + ar_verify
        base_set = tuple(sorted(want_base))
        drafts = ar_candidates(preds, canvas, base_set, cfg)
        ladder = ref_ar_ladder(preds, canvas, want_base, cfg.tau_ar_lo, cfg.max_candidates)
        assert [list(c.anchor_positions) for c in drafts] == [ladder[:k] for k in range(1, len(ladder) + 1)]
        for cand in drafts:
            for pos, tok in zip(cand.anchor_positions, cand.anchor_tokens):
                assert tok == preds[pos].top_token
                assert cand.state.gen[pos] == tok
            for pos in want_base:
                assert cand.state.gen[pos] == preds[pos].top_token
        if drafts:
            verify_preds = _random_preds(rng, ladder, vocab_size)
            # Bias some entries toward agreement so nonzero prefixes occur.
            for pos in ladder:
                if rng.random() < 0.5:
                    verify_preds[pos] = Prediction(
                        position=pos, top_token=preds[pos].top_token, top_prob=rng.random()
                    )
            got_k = ar_verify(verify_preds, drafts)
            assert got_k == ref_ar_accept(
                verify_preds, ladder, [preds[pos].top_token for pos in ladder]
            )

        # filter1 + filter2 over fabricated candidates
        n_cand = rng.randint(1, 3)
        candidates = []
        for _ in range(n_cand):
            anchor = rng.choice(masked)
            anchor_tok = rng.randrange(1, vocab_size)
            state = Canvas(
                prompt=(),
                gen=tuple(
                    anchor_tok if i == anchor else tok for i, tok in enumerate(canvas.gen)
                ),
                mask_id=MASK,
            )
            cand_preds = _random_preds(rng, state.masked_positions, vocab_size)
            candidates.append(
                CandidateTrajectory(
                    kind=CandidateKind.PLAN,
                    state=state,
                    anchor_positions=(anchor,),
                    anchor_tokens=(anchor_tok,),
                    preds=cand_preds,
                )
            )
        impact = tuple(sorted(pos for pos in masked if rng.random() < 0.4))
        base_state_preds = _random_preds(rng, impact, vocab_size)
        for cand in candidates:
            assert filter1_consistency(base_state_preds, cand, impact) == ref_filter1(
                base_state_preds, cand.state.gen, cand.preds, MASK, set(impact)
            )
        working = set(pos for pos in range(length) if rng.random() < 0.7)
        scores = [
            ref_total_confidence(c.state.gen, c.preds, MASK, working) for c in candidates
        ]
        winner = filter2_total_confidence(candidates, tuple(sorted(working)))
        assert winner is candidates[scores.index(max(scores))]

        # working_set
        ws = working_set(canvas, cfg)
        active, expected, expanded = ref_working_set(canvas.gen, MASK, cfg)
        assert ws.active_block == active and set(ws.working_set) == expected and ws.expanded == expanded

    elapsed = time.time() - started
    assert elapsed < 30.0
    print(f"\nACCEPTANCE rule-conformance: PASS ({cases} randomized cases per rule, {elapsed:.2f}s)")


def test_trace_invariants_500_randomized_pvf_decodes():
    """Impact preservation, AR soundness, route exclusivity, PAUSE semantics,
    monotone resolution, block-causality and bit-identical determinism."""
    started = time.time()
    rng = random.Random(4242)
    totals = {"planning_steps": 0, "ar_steps": 0, "forced_steps": 0, "pause_steps": 0}
    runs = 0
    for batch_seed in range(25):
        for corpus in random_suite(seed=batch_seed, size=20):
            tau_high = rng.choice((0.7, 0.85, 0.9, 0.95))
            cfg = corpus.config(
                tau_high=tau_high,
                tau_plan_hi=min(0.65, tau_high),
                posterior_reuse=rng.random() < 0.7,
                n_sparsity=rng.choice((0, 2, 5)),
                max_candidates=rng.choice((1, 2, 3)),
            )
            pset = corpus.planning_set()
            oracle = corpus.oracle()
            canvas = corpus.fresh_canvas()
            final, report = decode_pvf(canvas, oracle, corpus.vocab, cfg, planning_set=pset)
            again, report2 = decode_pvf(canvas, oracle, corpus.vocab, cfg, planning_set=pset)
            assert json.dumps(report.trace, sort_keys=True) == json.dumps(
                report2.trace, sort_keys=True
            ), "two runs must be bit-identical"
            assert final.gen == again.gen
            counters = check_pvf_trace(
                report.trace,
                oracle=oracle,
                vocab=corpus.vocab,
                cfg=cfg,
                planning_set=pset,
                prompt=corpus.prompt,
                final_text=final.gen,
            )
            for key in totals:
                totals[key] += counters[key]
            runs += 1
    elapsed = time.time() - started
    assert runs == 500
    assert totals["planning_steps"] > 0 and totals["ar_steps"] > 0
    assert totals["pause_steps"] > 0, "the PAUSE path must occur organically in the fuzz"
    assert elapsed < 120.0
    print(
        f"\nACCEPTANCE trace-invariants: PASS (500 decodes, zero violations; "
        f"steps: planning={totals['planning_steps']} ar={totals['ar_steps']} "
        f"pause={totals['pause_steps']} forced={totals['forced_steps']}; {elapsed:.1f}s)"
    )


def test_baseline_equivalences():
    """Static NFE = resolved count without truncation; threshold steps equal
    the brute-force rule recomputed from raw oracle outputs."""
    suite = default_suite()
    for corpus in suite:
        cfg = corpus.config()
        final, report = decode_static(
            corpus.fresh_canvas(), corpus.oracle(), corpus.vocab, cfg
        )
        if report.truncated_at is None:
            resolved = sum(1 for tok in final.gen if tok != corpus.vocab.mask_id)
            assert report.nfe == resolved == corpus.gen_length
        else:
            assert report.nfe == len(report.commits)

        t_final, t_report = decode_threshold(
            corpus.fresh_canvas(), corpus.oracle(), corpus.vocab, cfg
        )
        check_threshold_trace(
            t_report.trace,
            oracle=corpus.oracle(),
            vocab=corpus.vocab,
            cfg=cfg,
            prompt=corpus.prompt,
        )
    print(f"\nACCEPTANCE baseline-equivalences: PASS ({len(suite)} corpora, exact)")


def test_directional_nfe_claim():
    """Mean NFE(pvf) <= 0.8 x mean NFE(threshold) on the shipped suite, with
    zero exact-match accuracy difference on the mode-dominant corpora."""
    started = time.time()
    suite = default_suite()
    assert len(suite) >= 50
    nfe = {"threshold": [], "pvf": []}
    dominant_acc = {"threshold": [], "pvf": []}
    for corpus in suite:
        cfg = corpus.config()
        for strategy in ("threshold", "pvf"):
            final, report = run_strategy(corpus, strategy, cfg)
            nfe[strategy].append(report.nfe)
            if corpus.name.startswith("dominant"):
                assert corpus.mode_weight() >= 0.9
                dominant_acc[strategy].append(int(tuple(final.gen) == corpus.target))
    mean_threshold = sum(nfe["threshold"]) / len(nfe["threshold"])
    mean_pvf = sum(nfe["pvf"]) / len(nfe["pvf"])
    ratio = mean_pvf / mean_threshold
    assert mean_pvf <= 0.8 * mean_threshold, f"ratio {ratio:.3f} exceeds 0.8"
    acc_t = sum(dominant_acc["threshold"]) / len(dominant_acc["threshold"])
    acc_p = sum(dominant_acc["pvf"]) / len(dominant_acc["pvf"])
    assert acc_p - acc_t == 0.0, "accuracy must not differ on mode-dominant corpora"
    elapsed = time.time() - started
    assert elapsed < 120.0
    print(
        f"\nACCEPTANCE directional-nfe: PASS (mean nfe threshold={mean_threshold:.2f} "
        f"pvf={mean_pvf:.2f}, ratio={ratio:.3f} <= 0.8, dominant accuracy {acc_p:.2f}=={acc_t:.2f}; "
        f"{elapsed:.1f}s)"
    )


def test_ablation_reproduction_in_kind():
    """Planning-prioritized exploration is at least as fast and at least as
    accurate as random exploration, means over 10 seeds, band [0.2, 0.6]."""
    started = time.time()
    suite = default_suite()
    band = (0.2, 0.6)
    baseline_nfe = []
    for corpus in suite:
        _, report = run_strategy(corpus, "threshold", corpus.config())
        baseline_nfe.append(report.nfe)
    mean_baseline = sum(baseline_nfe) / len(baseline_nfe)

    results = {}
    for strategy in ("ablation_planning", "ablation_random"):
        nfes, accs, confs = [], [], []
        for seed in range(10):
            for corpus in suite:
                final, report = run_strategy(
                    corpus, strategy, corpus.config(), seed=seed, band=band
                )
                nfes.append(report.nfe)
                accs.append(int(tuple(final.gen) == corpus.target))
                if report.extra_conf_mean is not None:
                    confs.append(report.extra_conf_mean)
        results[strategy] = (
            sum(nfes) / len(nfes),
            sum(accs) / len(accs),
            sum(confs) / len(confs) if confs else 0.0,
        )
    plan_nfe, plan_acc, plan_conf = results["ablation_planning"]
    rand_nfe, rand_acc, rand_conf = results["ablation_random"]
    speed_plan = mean_baseline / plan_nfe
    speed_rand = mean_baseline / rand_nfe
    assert speed_plan >= speed_rand, f"planning speedup {speed_plan:.3f} < random {speed_rand:.3f}"
    assert plan_acc >= rand_acc, f"planning accuracy {plan_acc:.3f} < random {rand_acc:.3f}"
    elapsed = time.time() - started
    assert elapsed < 180.0
    print(
        f"\nACCEPTANCE ablation-in-kind: PASS (speedup planning={speed_plan:.3f} >= random={speed_rand:.3f}; "
        f"accuracy {plan_acc:.3f} >= {rand_acc:.3f}; extra-commit conf {plan_conf:.2f} vs {rand_conf:.2f}; "
        f"{elapsed:.1f}s)"
    )


class _FuzzOracle:
    """Deterministic adversarial predictor: fixed confidence regime, token a
    pure function of (state, position)."""

    def __init__(self, kind: str, vocab, pool: list[int]):
        self.kind = kind
        self.vocab = vocab
        self.pool = pool

    def _prob(self, pos: int) -> float:
        if self.kind == "uniform":
            return 0.05
        if self.kind == "near_tie":
            return 0.5
        return 0.85  # all-below-threshold

    def predict(self, request):
        batches = []
        for canvas, positions in zip(request.states, request.query_positions):
            salt = sum(canvas.gen) % 17
            preds = tuple(
                Prediction(
                    position=pos,
                    top_token=self.pool[(pos * 7 + salt) % len(self.pool)],
                    top_prob=self._prob(pos),
                )
                for pos in positions
            )
            batches.append(preds)
        return OracleResponse(predictions=tuple(batches), forward_cost=1)

    def close(self):
        pass


def test_termination_under_adversarial_oracles():
    """No decode exceeds 4x the generation length; forced commits appear only
    with the base, planning and AR sets simultaneously empty."""
    vocab = desk_vocabulary()
    pset = build_planning_set(vocab, default_static_list())
    special = {vocab.mask_id, vocab.eos_id, vocab.pad_id}
    pool = [i for i in range(len(vocab)) if i not in special]
    length, block = 12, 6
    cfg = DecodeConfig(gen_length=length, block_size=block)
    forced_seen = 0
    for kind in ("uniform", "near_tie", "below_threshold"):
        oracle = _FuzzOracle(kind, vocab, pool)
        canvas = Canvas.fresh((), length, vocab.mask_id)
        for decode in (decode_static, decode_threshold):
            final, report = decode(canvas, oracle, vocab, cfg)
            assert report.steps <= 4 * length
            assert final.is_complete or report.truncated_at is not None
        final, report = decode_pvf(canvas, oracle, vocab, cfg, planning_set=pset)
        assert report.steps <= 4 * length
        assert final.is_complete or report.truncated_at is not None
        counters = check_pvf_trace(
            report.trace,
            oracle=oracle,
            vocab=vocab,
            cfg=cfg,
            planning_set=pset,
            final_text=final.gen,
        )
        forced_seen += counters["forced_steps"]
        from dlmengine.decoders import AblationMode

        final, report = decode_ablation(
            canvas, oracle, vocab, cfg,
            mode=AblationMode.PLANNING, band=(0.2, 0.6), rng_seed=0, planning_set=pset,
        )
        assert report.steps <= 4 * length
        assert final.is_complete or report.truncated_at is not None
    assert forced_seen > 0, "the uniform oracle must exercise the forced path"
    print(f"\nACCEPTANCE termination: PASS (3 adversarial regimes, forced steps verified empty-set-only)")
