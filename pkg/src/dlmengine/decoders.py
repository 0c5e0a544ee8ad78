"""The four decoding strategies over an oracle and the blockwise scheduler.

``decode_static`` commits the single most confident token per forward;
``decode_threshold`` commits everything clearing tau_high per forward;
``decode_ablation`` adds one extra in-band commit per step (random or
planning-prioritized); ``decode_pvf`` runs the dual-route loop: high-confidence
base commits plus either a verified planning anchor or a speculative AR
prefix, with a one-step PAUSE after total planning rejection.

Every step of every strategy commits through the same value-semantics canvas,
labels provenance per token, and appends one trace line. A progress guard
forces the single most confident commit only when the base, planning and AR
sets are simultaneously empty, so all loops terminate within the step cap.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .core import (
    Canvas,
    CommitRecord,
    ConfigError,
    DecodeConfig,
    EngineError,
    NfeMode,
    Prediction,
    Route,
    Vocabulary,
    apply_commits,
    masked_set,
)
from .metrics import RunReport, planning_rate, write_trace
from .oracle import Oracle, OracleRequest, OracleResponse
from .sched import TerminationKind, check_termination, truncate_fill, working_set
from .vocabplan import PlanningSet


class StepLimitError(EngineError):
    """The decode exceeded its hard step cap without terminating."""


class CandidateKind(str, Enum):
    PLAN = "PLAN"
    AR = "AR"


class AblationMode(str, Enum):
    RANDOM = "RANDOM"
    PLANNING = "PLANNING"


@dataclass(frozen=True)
class StepContext:
    """Base-set bookkeeping for one step: the threshold-clearing members and the resulting base state."""

    base_preds: dict[int, Prediction]
    base_set: tuple[int, ...]
    base_state: Canvas
    impact_set: tuple[int, ...] | None = None
    pause_flag: bool = False


@dataclass
class CandidateTrajectory:
    """One speculative state: a planning anchor or a k-prefix of AR drafts on top of the base state."""

    kind: CandidateKind
    state: Canvas
    anchor_positions: tuple[int, ...]
    anchor_tokens: tuple[int, ...]
    preds: dict[int, Prediction] | None = None


def impact_positions(
    base_state_preds: Mapping[int, Prediction],
    base_state: Canvas,
    cfg: DecodeConfig,
) -> tuple[int, ...]:
    """Masked positions of the base state whose base-conditioned confidence clears tau_high."""
    return tuple(
        sorted(
            i
            for i, pred in base_state_preds.items()
            if base_state.gen[i] == base_state.mask_id and pred.top_prob >= cfg.tau_high
        )
    )


def compute_base(
    preds: Mapping[int, Prediction],
    canvas: Canvas,
    cfg: DecodeConfig,
    base_state_preds: Mapping[int, Prediction] | None = None,
) -> StepContext:
    """Base set membership, the base state, and (when base-conditioned predictions
    are supplied) the impact set."""
    base_set = tuple(
        sorted(
            i
            for i, pred in preds.items()
            if canvas.gen[i] == canvas.mask_id and pred.top_prob >= cfg.tau_high
        )
    )
    base_state = apply_commits(canvas, [(i, preds[i].top_token) for i in base_set])
    impact = None
    if base_state_preds is not None:
        impact = impact_positions(base_state_preds, base_state, cfg)
    return StepContext(
        base_preds=dict(preds),
        base_set=base_set,
        base_state=base_state,
        impact_set=impact,
    )


def plan_candidates(
    preds: Mapping[int, Prediction],
    canvas: Canvas,
    planning_set: PlanningSet,
    cfg: DecodeConfig,
) -> list[tuple[int, int]]:
    """Masked positions predicting a planning token inside [tau_plan_lo, tau_plan_hi),
    most confident first (position breaks ties), truncated to max_candidates."""
    eligible = [
        (pos, pred.top_token, pred.top_prob)
        for pos, pred in preds.items()
        if canvas.gen[pos] == canvas.mask_id
        and pred.top_token in planning_set
        and cfg.tau_plan_lo <= pred.top_prob < cfg.tau_plan_hi
    ]
    eligible.sort(key=lambda item: (-item[2], item[0]))
    return [(pos, tok) for pos, tok, _ in eligible[: cfg.max_candidates]]


def filter1_consistency(
    base_state_preds: Mapping[int, Prediction],
    candidate: CandidateTrajectory,
    impact_set: Sequence[int],
) -> bool:
    """Top-1 predictions over the impact set must be identical under the base
    state and under the candidate; a position the candidate resolved counts as
    predicting its committed token."""
    for pos in impact_set:
        if candidate.state.gen[pos] != candidate.state.mask_id:
            cand_top = candidate.state.gen[pos]
        else:
            assert candidate.preds is not None, "candidate predictions not filled"
            cand_top = candidate.preds[pos].top_token
        if base_state_preds[pos].top_token != cand_top:
            return False
    return True


def filter2_total_confidence(
    candidates: Sequence[CandidateTrajectory],
    working: Sequence[int],
) -> CandidateTrajectory:
    """Among Filter-1 survivors, pick the candidate maximizing the summed top
    probabilities over its remaining masked working-set positions; earlier
    proposal order wins ties."""
    if not candidates:
        raise ValueError("filter2 requires at least one candidate")
    working_positions = set(working)
    best = candidates[0]
    best_score = _total_confidence(candidates[0], working_positions)
    for cand in candidates[1:]:
        score = _total_confidence(cand, working_positions)
        if score > best_score:
            best, best_score = cand, score
    return best


def _total_confidence(candidate: CandidateTrajectory, working_positions: set[int]) -> float:
    assert candidate.preds is not None, "candidate predictions not filled"
    return sum(
        pred.top_prob
        for pos, pred in candidate.preds.items()
        if pos in working_positions and candidate.state.gen[pos] == candidate.state.mask_id
    )


def ar_candidates(
    preds: Mapping[int, Prediction],
    canvas: Canvas,
    base_set: Sequence[int],
    cfg: DecodeConfig,
) -> list[CandidateTrajectory]:
    """Nested prefix drafts: the leftmost masked non-base positions above
    tau_ar_lo, committed cumulatively on top of the base state."""
    base = set(base_set)
    z_base = apply_commits(canvas, [(i, preds[i].top_token) for i in sorted(base)])
    eligible = sorted(
        pos
        for pos, pred in preds.items()
        if canvas.gen[pos] == canvas.mask_id and pos not in base and pred.top_prob > cfg.tau_ar_lo
    )
    ladder = eligible[: cfg.max_candidates]
    candidates = []
    for k in range(1, len(ladder) + 1):
        anchors = tuple(ladder[:k])
        tokens = tuple(preds[pos].top_token for pos in anchors)
        state = apply_commits(z_base, list(zip(anchors, tokens)))
        candidates.append(
            CandidateTrajectory(
                kind=CandidateKind.AR,
                state=state,
                anchor_positions=anchors,
                anchor_tokens=tokens,
            )
        )
    return candidates


def ar_verify(
    base_state_preds: Mapping[int, Prediction],
    candidates: Sequence[CandidateTrajectory],
    *,
    strict_chain: bool = False,
) -> int:
    """Longest draft prefix whose tokens equal the base-conditioned argmaxes.

    ``strict_chain`` is the study variant: draft j >= 2 is checked against the
    predictions conditioned on the (j-1)-anchor state instead of the base state.
    """
    if not candidates:
        return 0
    ladder = candidates[-1]
    accepted = 0
    for j, (pos, tok) in enumerate(zip(ladder.anchor_positions, ladder.anchor_tokens), start=1):
        if strict_chain and j >= 2:
            prev = candidates[j - 2].preds
            assert prev is not None, "candidate predictions not filled"
            reference = prev[pos].top_token
        else:
            reference = base_state_preds[pos].top_token
        if reference != tok:
            break
        accepted = j
    return accepted


@dataclass
class _Session:
    """Mutable bookkeeping for one decode: canvas, provenance, costs, trace."""

    canvas: Canvas
    vocab: Vocabulary
    oracle: Oracle
    cfg: DecodeConfig
    records: list[CommitRecord] = field(default_factory=list)
    trace_lines: list[dict] = field(default_factory=list)
    calls: int = 0
    raw_forwards: int = 0
    steps: int = 0
    truncated_at: int | None = None

    def predict(
        self, states: Sequence[Canvas], positions: Sequence[Sequence[int]]
    ) -> OracleResponse:
        request = OracleRequest(
            states=tuple(states),
            query_positions=tuple(tuple(p) for p in positions),
        )
        response = self.oracle.predict(request)
        self.calls += 1
        self.raw_forwards += response.forward_cost
        return response

    @property
    def nfe(self) -> int:
        if self.cfg.nfe_mode is NfeMode.RAW_FORWARDS:
            return self.raw_forwards
        return self.calls

    def finished(self) -> bool:
        term = check_termination(self.canvas, self.vocab)
        if term.kind is TerminationKind.DONE:
            return True
        if term.kind is TerminationKind.TRUNCATE:
            assert term.at is not None
            self.canvas = truncate_fill(self.canvas, term.at, self.vocab)
            self.truncated_at = term.at
            return True
        if self.steps >= self.cfg.max_steps:
            raise StepLimitError(f"exceeded max_steps={self.cfg.max_steps}")
        return False

    def apply(
        self,
        commits: Sequence[tuple[int, int, Route, float]],
        *,
        route: str,
        pause: bool,
    ) -> None:
        self.steps += 1
        self.canvas = apply_commits(
            self.canvas, [(pos, tok) for pos, tok, _, _ in commits], step=self.steps
        )
        line_commits = []
        for pos, tok, why, conf in commits:
            self.records.append(
                CommitRecord(step=self.steps, position=pos, token=tok, route=why, confidence=conf)
            )
            line_commits.append({"pos": pos, "tok": tok, "why": why.value, "p": conf})
        self.trace_lines.append(
            {
                "t": self.steps,
                "route": route,
                "commits": line_commits,
                "pause": pause,
                "nfe": self.nfe,
                "forwards": self.raw_forwards,
            }
        )

    def report(
        self, *, trace_path: str | None = None, extra_conf_mean: float | None = None
    ) -> RunReport:
        hist = Counter(rec.route for rec in self.records)
        commits_by_route = {route: hist.get(route, 0) for route in Route if hist.get(route, 0)}
        if trace_path is not None:
            write_trace(self.trace_lines, trace_path)
        return RunReport(
            nfe=self.nfe,
            raw_forwards=self.raw_forwards,
            steps=self.steps,
            final_text=self.canvas.gen,
            commits_by_route=commits_by_route,
            planning_rate=planning_rate(commits_by_route),
            commits=tuple(self.records),
            trace=tuple(self.trace_lines),
            trace_path=trace_path,
            truncated_at=self.truncated_at,
            extra_conf_mean=extra_conf_mean,
        )


def _forced_pick(preds: Mapping[int, Prediction], working: Sequence[int]) -> int:
    """Most confident working-set position, lowest index on ties."""
    return max(working, key=lambda i: (preds[i].top_prob, -i))


def decode_static(
    canvas: Canvas,
    oracle: Oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    *,
    trace_path: str | None = None,
) -> tuple[Canvas, RunReport]:
    """Greedy top-1 baseline: one forward and one commit per step."""
    session = _Session(canvas=canvas, vocab=vocab, oracle=oracle, cfg=cfg)
    while not session.finished():
        plan = working_set(session.canvas, cfg)
        working = masked_set(session.canvas, plan.working_set)
        preds = session.predict([session.canvas], [working]).by_position(0)
        pos = _forced_pick(preds, working)
        session.apply(
            [(pos, preds[pos].top_token, Route.HIGH_CONF, preds[pos].top_prob)],
            route="BASE",
            pause=False,
        )
    return session.canvas, session.report(trace_path=trace_path)


def decode_threshold(
    canvas: Canvas,
    oracle: Oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    *,
    trace_path: str | None = None,
) -> tuple[Canvas, RunReport]:
    """Confidence-threshold parallel baseline: commit everything clearing
    tau_high, or force the single most confident token to guarantee progress."""
    session = _Session(canvas=canvas, vocab=vocab, oracle=oracle, cfg=cfg)
    while not session.finished():
        plan = working_set(session.canvas, cfg)
        working = masked_set(session.canvas, plan.working_set)
        preds = session.predict([session.canvas], [working]).by_position(0)
        qualifying = [i for i in working if preds[i].top_prob >= cfg.tau_high]
        if qualifying:
            commits = [
                (i, preds[i].top_token, Route.HIGH_CONF, preds[i].top_prob) for i in qualifying
            ]
            session.apply(commits, route="BASE", pause=False)
        else:
            pos = _forced_pick(preds, working)
            session.apply(
                [(pos, preds[pos].top_token, Route.FORCED, preds[pos].top_prob)],
                route="FORCED",
                pause=False,
            )
    return session.canvas, session.report(trace_path=trace_path)


def decode_ablation(
    canvas: Canvas,
    oracle: Oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    *,
    mode: AblationMode,
    band: tuple[float, float],
    rng_seed: int,
    planning_set: PlanningSet,
    trace_path: str | None = None,
) -> tuple[Canvas, RunReport]:
    """Threshold baseline plus one extra in-band commit per step.

    RANDOM samples uniformly among working-set positions whose confidence lies
    in the closed band; PLANNING samples among the subset predicting a
    planning token, falling back to the random rule when that subset is empty
    so both variants make the same number of exploration commits.
    """
    band_lo, band_hi = band
    if not band_lo < band_hi:
        raise ConfigError("ablation band must satisfy lo < hi")
    if band_hi > cfg.tau_high:
        raise ConfigError("ablation band must not exceed tau_high")
    mode = AblationMode(mode)
    rng = random.Random(rng_seed)
    session = _Session(canvas=canvas, vocab=vocab, oracle=oracle, cfg=cfg)
    extra_confs: list[float] = []
    while not session.finished():
        plan = working_set(session.canvas, cfg)
        working = masked_set(session.canvas, plan.working_set)
        preds = session.predict([session.canvas], [working]).by_position(0)
        qualifying = [i for i in working if preds[i].top_prob >= cfg.tau_high]
        commits = [(i, preds[i].top_token, Route.HIGH_CONF, preds[i].top_prob) for i in qualifying]
        taken = set(qualifying)
        band_eligible = [
            i for i in working if i not in taken and band_lo <= preds[i].top_prob <= band_hi
        ]
        if band_eligible:
            pool = band_eligible
            extra_route = Route.FORCED
            if mode is AblationMode.PLANNING:
                planning_pool = [i for i in band_eligible if preds[i].top_token in planning_set]
                if planning_pool:
                    pool = planning_pool
                    extra_route = Route.PLANNING
            pos = rng.choice(pool)
            commits.append((pos, preds[pos].top_token, extra_route, preds[pos].top_prob))
            extra_confs.append(preds[pos].top_prob)
        if not commits:
            pos = _forced_pick(preds, working)
            commits.append((pos, preds[pos].top_token, Route.FORCED, preds[pos].top_prob))
        session.apply(commits, route="BASE", pause=False)
    mean_conf = sum(extra_confs) / len(extra_confs) if extra_confs else None
    return session.canvas, session.report(trace_path=trace_path, extra_conf_mean=mean_conf)


def decode_pvf(
    canvas: Canvas,
    oracle: Oracle,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    *,
    planning_set: PlanningSet,
    trace_path: str | None = None,
) -> tuple[Canvas, RunReport]:
    """The dual-route loop: plan, verify, fill.

    Each step commits the base set, then either one verified planning anchor
    (batched forward over the base state and up to max_candidates planned
    trajectories, argmax-invariance over the impact set, total-confidence
    selection) or the longest verified AR draft prefix. Total planning
    rejection commits the base state and pauses planning for one step; any
    AR-route step clears the pause. When the committed trajectory's batched
    predictions cover the next step's working set and posterior reuse is on,
    they serve as the next step's base predictions.
    """
    session = _Session(canvas=canvas, vocab=vocab, oracle=oracle, cfg=cfg)
    pause = False
    pending: dict[int, Prediction] | None = None
    while not session.finished():
        plan = working_set(session.canvas, cfg)
        working = masked_set(session.canvas, plan.working_set)
        if cfg.posterior_reuse and pending is not None and set(working) <= set(pending):
            preds = {i: pending[i] for i in working}
        else:
            preds = session.predict([session.canvas], [working]).by_position(0)
        pending = None
        ctx = compute_base(preds, session.canvas, cfg)
        commits = [
            (i, preds[i].top_token, Route.HIGH_CONF, preds[i].top_prob) for i in ctx.base_set
        ]
        candidates = plan_candidates(preds, session.canvas, planning_set, cfg)
        if candidates and not pause:
            trajectories = [
                CandidateTrajectory(
                    kind=CandidateKind.PLAN,
                    state=apply_commits(ctx.base_state, [(pos, tok)]),
                    anchor_positions=(pos,),
                    anchor_tokens=(tok,),
                )
                for pos, tok in candidates
            ]
            states = [ctx.base_state] + [t.state for t in trajectories]
            queries = [masked_set(state, plan.working_set) for state in states]
            response = session.predict(states, queries)
            base_state_preds = response.by_position(0)
            for j, traj in enumerate(trajectories):
                traj.preds = response.by_position(j + 1)
            impact = impact_positions(base_state_preds, ctx.base_state, cfg)
            survivors = [
                t for t in trajectories if filter1_consistency(base_state_preds, t, impact)
            ]
            if not survivors:
                pause = True
                pending = base_state_preds
                session.apply(commits, route="BASE", pause=pause)
            else:
                winner = filter2_total_confidence(survivors, plan.working_set)
                anchor = winner.anchor_positions[0]
                commits.append(
                    (anchor, winner.anchor_tokens[0], Route.PLANNING, preds[anchor].top_prob)
                )
                pending = winner.preds
                session.apply(commits, route="PLANNING", pause=pause)
        else:
            drafts = ar_candidates(preds, session.canvas, ctx.base_set, cfg)
            route = "AR"
            if drafts:
                states = [ctx.base_state] + [t.state for t in drafts]
                queries = [masked_set(state, plan.working_set) for state in states]
                response = session.predict(states, queries)
                base_state_preds = response.by_position(0)
                for j, traj in enumerate(drafts):
                    traj.preds = response.by_position(j + 1)
                accepted = ar_verify(
                    base_state_preds, drafts, strict_chain=cfg.ar_strict_chain
                )
                if accepted > 0:
                    chosen = drafts[accepted - 1]
                    commits.extend(
                        (pos, tok, Route.AR_FALLBACK, preds[pos].top_prob)
                        for pos, tok in zip(chosen.anchor_positions, chosen.anchor_tokens)
                    )
                    pending = chosen.preds
                else:
                    pending = base_state_preds
            elif not ctx.base_set:
                pos = _forced_pick(preds, working)
                commits.append((pos, preds[pos].top_token, Route.FORCED, preds[pos].top_prob))
                route = "FORCED"
            pause = False
            session.apply(commits, route=route, pause=pause)
        if not cfg.posterior_reuse:
            pending = None
    return session.canvas, session.report(trace_path=trace_path)
