"""Model interfaces: exact enumeration, deterministic table replay, and the bridge client.

The engine only ever talks to a model through ``predict``. The enumeration
oracle computes the ideal conditional over an explicit support by exact
weight sums (it doubles as the verification oracle for small instances);
the table oracle replays recorded predictions byte-for-byte; the bridge
client speaks the newline-delimited JSON protocol documented in
``PROTOCOL.md`` at the repository root.

Oracles are stateless per request and safe for concurrent use from
independent decode sessions; the bridge client serializes frames per
connection.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass
from typing import Sequence

from .core import (
    Canvas,
    EngineError,
    Prediction,
    canvas_fingerprint,
    state_ids,
)


class OracleError(EngineError):
    """Base class for oracle failures."""


class InconsistentStateError(OracleError):
    """No support sequence is consistent with the queried canvas."""


class MissingEntryError(OracleError):
    """The replay table has no entry for a queried (state, position)."""


class ProtocolError(OracleError):
    """Malformed or unexpected bridge frame."""


@dataclass(frozen=True)
class OracleRequest:
    """A batched query: one canvas per candidate state, positions per state.

    Every queried position must hold the mask sentinel in its state; the
    engine queries the masked positions of the current working region.
    """

    states: tuple[Canvas, ...]
    query_positions: tuple[tuple[int, ...], ...]
    want_full_dist: bool = False

    def __post_init__(self) -> None:
        if len(self.states) != len(self.query_positions):
            raise ValueError("states and query_positions must align 1:1")
        if not self.states:
            raise ValueError("request must contain at least one state")
        for canvas, positions in zip(self.states, self.query_positions):
            for pos in positions:
                if canvas.gen[pos] != canvas.mask_id:
                    raise ValueError(f"query position {pos} is not masked")


@dataclass(frozen=True)
class OracleResponse:
    """Per-state predictions plus the number of model forwards this call represents."""

    predictions: tuple[tuple[Prediction, ...], ...]
    forward_cost: int

    def by_position(self, state_index: int) -> dict[int, Prediction]:
        return {p.position: p for p in self.predictions[state_index]}


class Oracle:
    """Interface every model backend implements."""

    def predict(self, request: OracleRequest) -> OracleResponse:
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - only the bridge holds resources
        pass


@dataclass(frozen=True)
class ExplicitDistribution:
    """A finite distribution over full-length generations, weights normalized to 1.

    Desk-scale stand-in for a trained denoiser: the conditional at a masked
    position is the weight-share of support sequences consistent with every
    resolved generation position.
    """

    support: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ValueError("support must be nonempty")
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights must align")
        length = len(self.support[0])
        if any(len(seq) != length for seq in self.support):
            raise ValueError("all support sequences must share one length")
        if any(w <= 0.0 for w in self.weights):
            raise ValueError("weights must be positive")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-12:
            object.__setattr__(self, "weights", tuple(w / total for w in self.weights))

    @property
    def length(self) -> int:
        return len(self.support[0])

    def mode(self) -> tuple[int, ...]:
        best = max(range(len(self.support)), key=lambda i: (self.weights[i], -i))
        return self.support[best]


class EnumerationOracle(Oracle):
    """Exact conditionals over an explicit support; one forward_cost per call.

    ``forward_cost`` is 1 per predict call regardless of batch size, modeling
    the free-lunch batching region; raw-forward accounting for real models is
    the bridge server's job.
    """

    def __init__(self, dist: ExplicitDistribution, vocab_size: int, mask_id: int) -> None:
        if any(mask_id in seq for seq in dist.support):
            raise ValueError("support sequences must not contain the mask sentinel")
        if any(tok < 0 or tok >= vocab_size for seq in dist.support for tok in seq):
            raise ValueError("support token out of vocabulary range")
        self.dist = dist
        self.vocab_size = vocab_size
        self.mask_id = mask_id

    def predict(self, request: OracleRequest) -> OracleResponse:
        batches: list[tuple[Prediction, ...]] = []
        for canvas, positions in zip(request.states, request.query_positions):
            batches.append(self._predict_state(canvas, positions, request.want_full_dist))
        return OracleResponse(predictions=tuple(batches), forward_cost=1)

    def _predict_state(
        self, canvas: Canvas, positions: Sequence[int], want_full_dist: bool
    ) -> tuple[Prediction, ...]:
        resolved = [(i, tok) for i, tok in enumerate(canvas.gen) if tok != canvas.mask_id]
        matching = [
            (seq, w)
            for seq, w in zip(self.dist.support, self.dist.weights)
            if all(seq[i] == tok for i, tok in resolved)
        ]
        if not matching:
            raise InconsistentStateError("no support sequence matches the resolved positions")
        total = sum(w for _, w in matching)
        preds = []
        for pos in positions:
            mass: dict[int, float] = {}
            for seq, w in matching:
                mass[seq[pos]] = mass.get(seq[pos], 0.0) + w
            probs = {tok: w / total for tok, w in mass.items()}
            peak = max(probs.values())
            top = min(tok for tok, p in probs.items() if p == peak)
            dist = None
            if want_full_dist:
                vec = [0.0] * self.vocab_size
                for tok, p in probs.items():
                    vec[tok] = p
                dist = tuple(vec)
            preds.append(Prediction(position=pos, top_token=top, top_prob=peak, dist=dist))
        return tuple(preds)


class TableOracle(Oracle):
    """Replays recorded predictions keyed by (canvas fingerprint, absolute position).

    An unrecorded query raises ``MissingEntryError``: that signals divergence
    between the engine and the recorded session, never a fallback.
    ``count_states_as_forwards`` reproduces bridge-style raw-forward
    accounting for bit-identical session replay; the default reports one
    forward per call like the enumeration oracle.
    """

    def __init__(
        self,
        entries: dict[tuple[str, int], tuple[int, float]],
        *,
        count_states_as_forwards: bool = False,
    ) -> None:
        self.entries = entries
        self.count_states_as_forwards = count_states_as_forwards

    def predict(self, request: OracleRequest) -> OracleResponse:
        batches: list[tuple[Prediction, ...]] = []
        for canvas, positions in zip(request.states, request.query_positions):
            fp = canvas_fingerprint(canvas)
            offset = len(canvas.prompt)
            preds = []
            for pos in positions:
                key = (fp, offset + pos)
                if key not in self.entries:
                    raise MissingEntryError(f"no recorded prediction for state {fp[:12]}.. position {pos}")
                tok, prob = self.entries[key]
                preds.append(Prediction(position=pos, top_token=tok, top_prob=prob))
            batches.append(tuple(preds))
        cost = len(request.states) if self.count_states_as_forwards else 1
        return OracleResponse(predictions=tuple(batches), forward_cost=cost)


def load_table_oracle(path: str, **kwargs: bool) -> TableOracle:
    """Load the JSON-lines table format: {"fp": hex, "pos": int, "tok": int, "p": float}.

    Lines starting with '#' are comments (exporters write a header line).
    """
    entries: dict[tuple[str, int], tuple[int, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = json.loads(line)
                key = (row["fp"], int(row["pos"]))
                entries[key] = (int(row["tok"]), float(row["p"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise OracleError(f"{path}:{lineno}: bad table row: {exc}") from exc
    return TableOracle(entries, **kwargs)


@dataclass(frozen=True)
class BridgeInfo:
    vocab_size: int
    mask_id: int
    eos_id: int
    pad_id: int


class BridgeOracle(Oracle):
    """Client for the newline-delimited JSON wire protocol (see PROTOCOL.md).

    States go over the wire as full prompt+generation arrays with -1 for
    masks; positions are absolute indices into that array. The server's
    ``forwards`` field is the raw-forward truth source.
    """

    def __init__(self, sock: socket.socket, *, timeout: float | None = 30.0) -> None:
        self._sock = sock
        self._sock.settimeout(timeout)
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = sock.makefile("w", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()
        self.info = self._handshake()

    def _send(self, frame: dict) -> None:
        self._writer.write(json.dumps(frame, separators=(",", ":")) + "\n")
        self._writer.flush()

    def _recv(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise ProtocolError("server closed the connection mid-request")
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable frame: {exc}") from exc
        if not isinstance(frame, dict) or "type" not in frame:
            raise ProtocolError("frame is not an object with a 'type' field")
        if frame["type"] == "err":
            raise ProtocolError(f"server error: {frame.get('msg', '?')}")
        return frame

    def _handshake(self) -> BridgeInfo:
        with self._lock:
            self._send({"type": "hello"})
            frame = self._recv()
        if frame["type"] != "info":
            raise ProtocolError(f"expected info frame, got {frame['type']!r}")
        try:
            return BridgeInfo(
                vocab_size=int(frame["vocab"]),
                mask_id=int(frame["mask"]),
                eos_id=int(frame["eos"]),
                pad_id=int(frame["pad"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad info frame: {exc}") from exc

    def predict(self, request: OracleRequest) -> OracleResponse:
        states = [state_ids(canvas) for canvas in request.states]
        offsets = [len(canvas.prompt) for canvas in request.states]
        positions = [
            [off + pos for pos in pos_list]
            for off, pos_list in zip(offsets, request.query_positions)
        ]
        with self._lock:
            self._send(
                {
                    "type": "predict",
                    "states": states,
                    "positions": positions,
                    "full": bool(request.want_full_dist),
                }
            )
            frame = self._recv()
        if frame["type"] != "preds":
            raise ProtocolError(f"expected preds frame, got {frame['type']!r}")
        try:
            raw_batches = frame["preds"]
            forwards = int(frame["forwards"])
            if len(raw_batches) != len(request.states):
                raise ProtocolError("preds batch count does not match request")
            batches = []
            for off, pos_list, raw in zip(offsets, request.query_positions, raw_batches):
                got = {int(entry["pos"]): entry for entry in raw}
                preds = []
                for pos in pos_list:
                    entry = got[off + pos]
                    preds.append(
                        Prediction(position=pos, top_token=int(entry["tok"]), top_prob=float(entry["p"]))
                    )
                batches.append(tuple(preds))
        except ProtocolError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad preds frame: {exc}") from exc
        return OracleResponse(predictions=tuple(batches), forward_cost=forwards)

    def close(self) -> None:
        try:
            self._reader.close()
            self._writer.close()
        finally:
            self._sock.close()


def bridge_connect(endpoint: str, *, timeout: float | None = 30.0) -> BridgeOracle:
    """Connect to a bridge server at ``host:port`` and perform the handshake."""
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ProtocolError(f"bridge endpoint must be host:port, got {endpoint!r}")
    try:
        sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
    except OSError as exc:
        raise ProtocolError(f"cannot connect to bridge at {endpoint}: {exc}") from exc
    return BridgeOracle(sock, timeout=timeout)


def predictions_as_map(response: OracleResponse, state_index: int = 0) -> dict[int, Prediction]:
    """Convenience: predictions of one batched state keyed by position."""
    return response.by_position(state_index)
