"""Replay recorded predict frames through a model and write a table-oracle file."""

from __future__ import annotations

import json
from typing import Iterable

from .model import ModelBackend
from .protocol import fingerprint

TABLE_HEADER = "# dlm-bridge table v1"


def read_record(path: str) -> list[dict]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                frames.append(json.loads(line))
    return frames


def export_table(model: ModelBackend, requests: Iterable[dict], out_path: str, *, top_k: int = 1) -> int:
    """Write one deduplicated table row per (state fingerprint, position).

    Returns the number of rows written. Rows appear in first-query order, so
    identical recordings export byte-identical tables.
    """
    seen: set[tuple[str, int]] = set()
    rows = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(TABLE_HEADER + "\n")
        for frame in requests:
            for state, positions in zip(frame["states"], frame["positions"]):
                fp = fingerprint(state)
                fresh = [pos for pos in positions if (fp, pos) not in seen]
                if not fresh:
                    continue
                ranked = model.predict_positions(state, fresh, top_k)
                for pos, entries in zip(fresh, ranked):
                    tok, prob = entries[0]
                    fh.write(
                        json.dumps(
                            {"fp": fp, "pos": pos, "tok": tok, "p": prob},
                            separators=(",", ":"),
                        )
                        + "\n"
                    )
                    seen.add((fp, pos))
                    rows += 1
    return rows
