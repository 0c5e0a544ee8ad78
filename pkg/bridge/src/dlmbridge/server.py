"""The bridge server: answers predict frames, counts real forwards, records sessions.

One thread per connection; model access is serialized behind a lock so
backends never see concurrent forwards. Malformed input produces an err
frame and the connection keeps serving. Every predict frame can be appended
to a record file for later table export.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import dataclass
from typing import IO, Sequence

from .model import MASK_WIRE, ModelBackend
from .protocol import err_frame, read_frame, write_frame

logger = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    model_id: str = "stub"
    device: str = "cpu"
    max_batch: int = 8
    host: str = "127.0.0.1"
    port: int = 0
    stdio: bool = False
    top_k: int = 8
    record_path: str | None = None


class BridgeServer:
    """Serves the wire protocol for one model backend."""

    def __init__(self, model: ModelBackend, config: ServerConfig | None = None) -> None:
        self.model = model
        self.config = config or ServerConfig()
        self._model_lock = threading.Lock()
        self._record_lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()

    # -- frame handling ------------------------------------------------

    def info_frame(self) -> dict:
        return {
            "type": "info",
            "vocab": len(self.model.tokens),
            "mask": self.model.mask_id,
            "eos": self.model.eos_id,
            "pad": self.model.pad_id,
        }

    def _validate_predict(self, frame: dict) -> str | None:
        states = frame.get("states")
        positions = frame.get("positions")
        if not isinstance(states, list) or not states:
            return "predict needs a nonempty 'states' list"
        if not isinstance(positions, list) or len(positions) != len(states):
            return "'positions' must align with 'states'"
        if len(states) > self.config.max_batch:
            return f"batch larger than max_batch={self.config.max_batch}"
        vocab = len(self.model.tokens)
        for state, pos_list in zip(states, positions):
            if not isinstance(state, list) or not isinstance(pos_list, list):
                return "states and positions must be arrays"
            for tok in state:
                if not isinstance(tok, int) or tok >= vocab or (tok < 0 and tok != MASK_WIRE):
                    return f"token id {tok!r} out of range"
            for pos in pos_list:
                if not isinstance(pos, int) or not 0 <= pos < len(state):
                    return f"position {pos!r} out of range"
                if state[pos] != MASK_WIRE:
                    return f"position {pos} is not masked"
        return None

    def handle_frame(self, frame: dict) -> dict:
        kind = frame.get("type")
        if kind == "hello":
            return self.info_frame()
        if kind == "predict":
            problem = self._validate_predict(frame)
            if problem is not None:
                return err_frame(problem)
            self._record(frame)
            states: Sequence[list[int]] = frame["states"]
            want_full = bool(frame.get("full", False))
            preds = []
            with self._model_lock:
                for state, pos_list in zip(states, frame["positions"]):
                    topk = self.model.predict_positions(state, pos_list, self.config.top_k)
                    entries = []
                    for pos, ranked in zip(pos_list, topk):
                        tok, prob = ranked[0]
                        entry = {"pos": pos, "tok": tok, "p": prob}
                        if want_full:
                            entry["topk"] = [[t, p] for t, p in ranked]
                        entries.append(entry)
                    preds.append(entries)
            return {"type": "preds", "preds": preds, "forwards": len(states)}
        return err_frame(f"unknown frame type {kind!r}")

    def _record(self, frame: dict) -> None:
        if self.config.record_path is None:
            return
        with self._record_lock:
            with open(self.config.record_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(frame, separators=(",", ":"), sort_keys=True) + "\n")

    # -- transports ------------------------------------------------------

    def serve_stream(self, reader: IO[str], writer: IO[str]) -> None:
        """Serve one session over text streams until EOF."""
        while not self._stopping.is_set():
            try:
                frame = read_frame(reader)
            except (ValueError, json.JSONDecodeError) as exc:
                write_frame(writer, err_frame(f"malformed frame: {exc}"))
                continue
            if frame is None:
                return
            try:
                write_frame(writer, self.handle_frame(frame))
            except BrokenPipeError:
                return
            except Exception as exc:  # never crash the session on a bad request
                logger.exception("frame handling failed")
                try:
                    write_frame(writer, err_frame(f"internal error: {exc}"))
                except OSError:
                    return

    def start(self) -> int:
        """Bind and serve TCP connections in background threads; returns the port."""
        self._sock = socket.socket()
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.config.host, self.config.port))
        self._sock.listen(16)
        port = self._sock.getsockname()[1]
        acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        acceptor.start()
        self._threads.append(acceptor)
        logger.info("bridge serving %s on %s:%d", self.config.model_id, self.config.host, port)
        return port

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            worker = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            worker.start()
            self._threads.append(worker)

    def _serve_conn(self, conn: socket.socket) -> None:
        reader = conn.makefile("r", encoding="utf-8", newline="\n")
        writer = conn.makefile("w", encoding="utf-8", newline="\n")
        try:
            self.serve_stream(reader, writer)
        finally:
            conn.close()

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            self._sock.close()

    def serve_forever(self) -> None:
        if self._sock is None:
            self.start()
        try:
            self._stopping.wait()
        except KeyboardInterrupt:  # pragma: no cover
            self.stop()
