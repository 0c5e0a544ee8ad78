"""Frame and fingerprint helpers for the wire protocol (see PROTOCOL.md)."""

from __future__ import annotations

import hashlib
import json
from typing import IO


def fingerprint(state: list[int]) -> str:
    """SHA-256 hex over the comma-joined decimal ids of a state array."""
    return hashlib.sha256(",".join(str(i) for i in state).encode("ascii")).hexdigest()


def write_frame(stream: IO[str], frame: dict) -> None:
    stream.write(json.dumps(frame, separators=(",", ":")) + "\n")
    stream.flush()


def read_frame(stream: IO[str]) -> dict | None:
    """Next frame, or None on EOF. Raises ValueError on a malformed line."""
    line = stream.readline()
    if not line:
        return None
    frame = json.loads(line)
    if not isinstance(frame, dict) or "type" not in frame:
        raise ValueError("frame must be an object with a 'type' field")
    return frame


def err_frame(msg: str) -> dict:
    return {"type": "err", "msg": msg}
