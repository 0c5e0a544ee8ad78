"""Model backends behind the bridge: the interface plus a deterministic stub.

A backend answers top-k queries at masked positions of full state arrays
(-1 marks a mask). The stub is a pure function of (state, position) via
SHA-256, so recorded sessions replay bit-identically across processes and
platforms; its confidence levels span the interesting threshold regimes so
every decoding route gets exercised over the wire.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

MASK_WIRE = -1

STUB_TOKENS = (
    "<mask>", "<|endoftext|>", "<pad>",
    "Therefore", "Step", ":", "=", "+", "return", "if",
    "alpha", "beta", "gamma", "delta", "x1", "x2", "y1", "7", "9", "26",
)

_STUB_LEVELS = (0.05, 0.25, 0.4, 0.55, 0.7, 0.92, 0.97)


class ModelBackend(Protocol):
    """What the server needs from a model."""

    tokens: tuple[str, ...]
    mask_id: int
    eos_id: int
    pad_id: int

    def predict_positions(
        self, state: Sequence[int], positions: Sequence[int], top_k: int
    ) -> list[list[tuple[int, float]]]:
        """Per queried position, the top-k (token, probability) pairs, best first."""
        ...


@dataclass
class StubModel:
    """Twenty-token deterministic model for protocol and replay testing."""

    seed: int = 0
    tokens: tuple[str, ...] = STUB_TOKENS
    mask_id: int = 0
    eos_id: int = 1
    pad_id: int = 2
    _pool: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        special = {self.mask_id, self.eos_id, self.pad_id}
        self._pool = tuple(i for i in range(len(self.tokens)) if i not in special)

    def _draw(self, state: Sequence[int], position: int) -> tuple[int, float]:
        key = f"{self.seed}|{','.join(str(i) for i in state)}|{position}".encode("ascii")
        digest = int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
        token = self._pool[digest % len(self._pool)]
        prob = _STUB_LEVELS[(digest >> 16) % len(_STUB_LEVELS)]
        return token, prob

    def predict_positions(
        self, state: Sequence[int], positions: Sequence[int], top_k: int
    ) -> list[list[tuple[int, float]]]:
        out = []
        for pos in positions:
            token, prob = self._draw(state, pos)
            entry = [(token, prob)]
            remaining = 1.0 - prob
            alternates = [t for t in self._pool if t != token][: max(0, top_k - 1)]
            for j, alt in enumerate(alternates):
                share = remaining / (2 ** (j + 1))
                entry.append((alt, min(share, prob)))
            out.append(entry[:top_k])
        return out


def load_backend(model_id: str, device: str = "cpu", seed: int = 0) -> ModelBackend:
    """'stub' (optionally 'stub:<seed>') or a transformers model identifier."""
    if model_id == "stub":
        return StubModel(seed=seed)
    if model_id.startswith("stub:"):
        return StubModel(seed=int(model_id.split(":", 1)[1]))
    from .hf import HFMaskedDiffusionModel

    return HFMaskedDiffusionModel(model_id, device=device)
