"""Post-hoc verification of decode traces against a deterministic oracle.

The checker replays a trace step by step, independently recomputing the
working set, the base set, the planning/AR eligibility, the impact set and
the verification rules from fresh oracle queries, and asserts the trace's
commits could only have been produced by the documented control flow.
"""

from __future__ import annotations

from dlmengine.core import Canvas, DecodeConfig, Vocabulary, apply_commits, masked_set
from dlmengine.oracle import OracleRequest
from dlmengine.sched import TerminationKind, check_termination, truncate_fill, working_set
from dlmengine.vocabplan import PlanningSet

from rule_reference import ref_ar_ladder, ref_base_set, ref_plan_candidates, ref_working_set


def _query(oracle, canvas: Canvas, positions) -> dict:
    if not positions:
        return {}
    response = oracle.predict(
        OracleRequest(states=(canvas,), query_positions=(tuple(positions),))
    )
    return response.by_position(0)


def check_pvf_trace(
    trace: tuple[dict, ...],
    *,
    oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    planning_set: PlanningSet,
    prompt: tuple[int, ...] = (),
    final_text: tuple[int, ...] | None = None,
) -> dict:
    """Assert every trace invariant; returns simple counters for reporting."""
    canvas = Canvas.fresh(prompt, cfg.gen_length, vocab.mask_id)
    counters = {"planning_steps": 0, "ar_steps": 0, "forced_steps": 0, "pause_steps": 0}
    prev_pause = False
    prev_nfe = 0
    prev_forwards = 0
    resolved_before = 0

    for line in trace:
        assert check_termination(canvas, vocab).kind is TerminationKind.CONTINUE

        plan = working_set(canvas, cfg)
        active, expected_ws, expanded = ref_working_set(canvas.gen, vocab.mask_id, cfg)
        assert set(plan.working_set) == expected_ws and plan.expanded == expanded

        working = masked_set(canvas, plan.working_set)
        preds = _query(oracle, canvas, working)
        base = ref_base_set(preds, canvas, cfg.tau_high)
        candidates = ref_plan_candidates(
            preds, canvas, set(planning_set.member_ids),
            cfg.tau_plan_lo, cfg.tau_plan_hi, cfg.max_candidates,
        )
        ladder = ref_ar_ladder(preds, canvas, base, cfg.tau_ar_lo, cfg.max_candidates)

        commits = line["commits"]
        by_why: dict[str, list[dict]] = {}
        for commit in commits:
            by_why.setdefault(commit["why"], []).append(commit)
            # Block-causality: every commit stays inside the scheduled
            # working set (active block plus at most the one-block lookahead).
            assert commit["pos"] in expected_ws, "commit escaped the working set"

        # High-confidence commits are exactly the base set with its argmaxes.
        high = by_why.get("HIGH_CONF", [])
        assert {c["pos"] for c in high} == base
        for c in high:
            assert c["tok"] == preds[c["pos"]].top_token

        z_base = apply_commits(canvas, [(pos, preds[pos].top_token) for pos in sorted(base)])
        base_masked = masked_set(z_base, plan.working_set)

        plan_commits = by_why.get("PLANNING", [])
        ar_commits = sorted(by_why.get("AR_FALLBACK", []), key=lambda c: c["pos"])
        forced = by_why.get("FORCED", [])

        # Route exclusivity.
        assert not (plan_commits and ar_commits)
        assert len(plan_commits) <= 1
        if forced:
            assert len(forced) == 1 and not plan_commits and not ar_commits and not high
            assert not base, "forced with a nonempty base set"
            assert not ladder, "forced with AR-eligible positions available"
            assert not candidates or prev_pause, "forced while planning was available"
            counters["forced_steps"] += 1

        # PAUSE semantics.
        if prev_pause:
            assert line["route"] in ("AR", "FORCED"), "pause must route away from planning"
            assert not plan_commits
        if line["route"] in ("AR", "FORCED"):
            assert line["pause"] is False, "AR-route steps clear the pause flag"
        if line["route"] == "BASE" and line["pause"]:
            counters["pause_steps"] += 1
            assert candidates and not prev_pause, "pause requires a rejected planning attempt"
            assert not plan_commits and not ar_commits

        if plan_commits:
            counters["planning_steps"] += 1
            anchor = plan_commits[0]
            assert (anchor["pos"], anchor["tok"]) in candidates, "anchor not among the proposals"

            base_state_preds = _query(oracle, z_base, base_masked)
            impact = [
                pos for pos in base_masked if base_state_preds[pos].top_prob >= cfg.tau_high
            ]
            committed = apply_commits(canvas, [(c["pos"], c["tok"]) for c in commits])
            committed_masked = [pos for pos in impact if committed.gen[pos] == vocab.mask_id]
            committed_preds = _query(oracle, committed, committed_masked)
            for pos in impact:
                if committed.gen[pos] != vocab.mask_id:
                    side = committed.gen[pos]
                else:
                    side = committed_preds[pos].top_token
                assert base_state_preds[pos].top_token == side, "impact argmax flipped"

        if ar_commits:
            counters["ar_steps"] += 1
            positions = [c["pos"] for c in ar_commits]
            assert positions == ladder[: len(positions)], "AR anchors must be the leftmost prefix"
            base_state_preds = _query(oracle, z_base, base_masked)
            for c in ar_commits:
                assert c["tok"] == preds[c["pos"]].top_token, "draft is the proposal-time argmax"
                assert base_state_preds[c["pos"]].top_token == c["tok"], "draft unverified by the base state"

        # Monotone resolution: apply_commits raises on any overwrite.
        canvas = apply_commits(canvas, [(c["pos"], c["tok"]) for c in commits])
        resolved_now = sum(1 for tok in canvas.gen if tok != vocab.mask_id)
        assert resolved_now >= resolved_before
        resolved_before = resolved_now

        assert line["nfe"] >= prev_nfe and line["forwards"] >= prev_forwards
        prev_nfe, prev_forwards = line["nfe"], line["forwards"]
        prev_pause = bool(line["pause"])

    term = check_termination(canvas, vocab)
    if term.kind is TerminationKind.TRUNCATE:
        canvas = truncate_fill(canvas, term.at, vocab)
    else:
        assert term.kind is TerminationKind.DONE
    if final_text is not None:
        assert canvas.gen == tuple(final_text), "replayed commits do not reproduce the final canvas"
    return counters


def check_threshold_trace(
    trace: tuple[dict, ...],
    *,
    oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    prompt: tuple[int, ...] = (),
) -> None:
    """Per-step commit set must equal the brute-force threshold rule."""
    canvas = Canvas.fresh(prompt, cfg.gen_length, vocab.mask_id)
    for line in trace:
        plan = working_set(canvas, cfg)
        working = masked_set(canvas, plan.working_set)
        preds = _query(oracle, canvas, working)
        qualifying = {pos for pos in working if preds[pos].top_prob >= cfg.tau_high}
        commits = line["commits"]
        if qualifying:
            assert {c["pos"] for c in commits} == qualifying
            assert all(c["why"] == "HIGH_CONF" for c in commits)
        else:
            assert len(commits) == 1 and commits[0]["why"] == "FORCED"
            peak = max(preds[pos].top_prob for pos in working)
            expected = min(pos for pos in working if preds[pos].top_prob == peak)
            assert commits[0]["pos"] == expected
        for c in commits:
            assert c["tok"] == preds[c["pos"]].top_token
        canvas = apply_commits(canvas, [(c["pos"], c["tok"]) for c in commits])
