"""Forward-pass accounting, route histograms, report aggregation and serialization.

NFE is the headline efficiency number: engine-issued predict calls under
BATCH_AS_ONE, or the sum of per-call raw forward costs under RAW_FORWARDS.
Reports are immutable; aggregation is a pure fold and is recomputable from
trace files alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import CommitRecord, EngineError, Route


class EmptyInputError(EngineError):
    """aggregate() needs at least one report."""


def planning_rate(commits_by_route: Mapping[Route, int]) -> float:
    """Planning commits over planning + AR-fallback commits; 0.0 when neither occurred."""
    plan = commits_by_route.get(Route.PLANNING, 0)
    ar = commits_by_route.get(Route.AR_FALLBACK, 0)
    if plan + ar == 0:
        return 0.0
    return plan / (plan + ar)


@dataclass(frozen=True)
class RunReport:
    """Everything one decode produced: costs, provenance histogram, final ids, trace."""

    nfe: int
    raw_forwards: int
    steps: int
    final_text: tuple[int, ...]
    commits_by_route: dict[Route, int]
    planning_rate: float
    commits: tuple[CommitRecord, ...] = ()
    trace: tuple[dict, ...] = ()
    trace_path: str | None = None
    truncated_at: int | None = None
    extra_conf_mean: float | None = None

    def __post_init__(self) -> None:
        if self.nfe > self.raw_forwards:
            raise ValueError("nfe cannot exceed raw_forwards")


@dataclass(frozen=True)
class Summary:
    """Arithmetic means over a batch of runs, Table-style."""

    runs: int
    mean_nfe: float
    mean_raw_forwards: float
    mean_steps: float
    mean_planning_rate: float
    accuracy: float | None = None


def speedup(baseline, subject) -> float:
    """NFE ratio baseline/subject; accepts reports, summaries or plain numbers."""
    base = _nfe_of(baseline)
    subj = _nfe_of(subject)
    if base <= 0:
        raise ValueError("baseline NFE must be positive")
    if subj <= 0:
        raise ValueError("subject NFE must be positive")
    return base / subj


def _nfe_of(value) -> float:
    if hasattr(value, "mean_nfe"):
        return float(value.mean_nfe)
    if hasattr(value, "nfe"):
        return float(value.nfe)
    return float(value)


def aggregate(
    reports: Sequence[RunReport],
    targets: Sequence[Sequence[int]] | None = None,
) -> Summary:
    """Mean NFE / steps / planning rate, plus exact-match accuracy when targets are given."""
    if not reports:
        raise EmptyInputError("aggregate() requires at least one report")
    n = len(reports)
    accuracy = None
    if targets is not None:
        if len(targets) != n:
            raise ValueError("targets must align with reports")
        hits = sum(1 for rep, tgt in zip(reports, targets) if tuple(rep.final_text) == tuple(tgt))
        accuracy = hits / n
    return Summary(
        runs=n,
        mean_nfe=sum(r.nfe for r in reports) / n,
        mean_raw_forwards=sum(r.raw_forwards for r in reports) / n,
        mean_steps=sum(r.steps for r in reports) / n,
        mean_planning_rate=sum(r.planning_rate for r in reports) / n,
        accuracy=accuracy,
    )


REPORT_CSV_COLUMNS = ("run_id", "strategy", "nfe", "raw_forwards", "steps", "planning_rate", "accuracy")


def write_reports_csv(rows: Sequence[Mapping[str, object]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_summary_json(summaries: Mapping[str, Summary], path: str) -> None:
    payload = {
        name: {
            "runs": s.runs,
            "nfe": s.mean_nfe,
            "raw_forwards": s.mean_raw_forwards,
            "steps": s.mean_steps,
            "planning_rate": s.mean_planning_rate,
            "accuracy": s.accuracy,
        }
        for name, s in summaries.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace(lines: Sequence[Mapping[str, object]], path: str) -> None:
    """One JSON object per step, the engine's trace file format."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, separators=(",", ":"), sort_keys=True) + "\n")


def read_trace(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_trace(
    lines: Sequence[Mapping[str, object]],
    gen_length: int,
    mask_wire: int = -1,
) -> tuple[list[int], dict[str, int], int, int, int]:
    """Rebuild (final gen ids with mask_wire for unresolved, route histogram, nfe, forwards, steps).

    Truncation pad fill is not replayed here; callers holding the vocabulary
    apply the same EOS rule the engine used.
    """
    gen = [mask_wire] * gen_length
    hist: dict[str, int] = {}
    nfe = 0
    forwards = 0
    steps = 0
    for line in lines:
        steps += 1
        nfe = int(line["nfe"])
        forwards = int(line["forwards"])
        for commit in line["commits"]:
            gen[int(commit["pos"])] = int(commit["tok"])
            why = str(commit["why"])
            hist[why] = hist.get(why, 0) + 1
    return gen, hist, nfe, forwards, steps
