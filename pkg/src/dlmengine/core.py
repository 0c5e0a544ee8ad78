"""Shared domain types for masked-diffusion decoding.

Everything here is an immutable value: canvases are snapshots, commits
return new canvases, and all decoders build on the same vocabulary /
prediction / configuration types. The mask sentinel is a real vocabulary
index internally; serialized states use -1 for masked positions.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

MASK_WIRE = -1

_VOCAB_HEADER = re.compile(r"^#mask=(\d+) #eos=(\d+) #pad=(\d+)$")


class EngineError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigError(EngineError):
    """Invalid decode configuration or config file."""


class OverwriteError(EngineError):
    """A commit targeted a position that is already resolved."""


class MaskWriteError(EngineError):
    """A commit tried to write the mask sentinel."""


class Route(str, Enum):
    """Provenance of a committed token."""

    HIGH_CONF = "HIGH_CONF"
    PLANNING = "PLANNING"
    AR_FALLBACK = "AR_FALLBACK"
    FORCED = "FORCED"


class NfeMode(str, Enum):
    BATCH_AS_ONE = "BATCH_AS_ONE"
    RAW_FORWARDS = "RAW_FORWARDS"


@dataclass(frozen=True)
class Vocabulary:
    """Token table plus the three special indices every decoder needs.

    Token indices are dense ``[0, len(tokens))``; mask, EOS and pad must be
    distinct valid indices. The mask id never survives into a finished
    canvas.
    """

    tokens: tuple[str, ...]
    mask_id: int
    eos_id: int
    pad_id: int

    def __post_init__(self) -> None:
        n = len(self.tokens)
        for name, idx in (("mask_id", self.mask_id), ("eos_id", self.eos_id), ("pad_id", self.pad_id)):
            if not 0 <= idx < n:
                raise ConfigError(f"{name}={idx} out of range for vocabulary of size {n}")
        if len({self.mask_id, self.eos_id, self.pad_id}) != 3:
            raise ConfigError("mask_id, eos_id and pad_id must be distinct")

    def __len__(self) -> int:
        return len(self.tokens)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @classmethod
    def from_file(cls, path: str) -> "Vocabulary":
        """Load the one-token-per-line format with a ``#mask= #eos= #pad=`` header."""
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise ConfigError(f"{path}: empty vocabulary file")
        m = _VOCAB_HEADER.match(lines[0])
        if m is None:
            raise ConfigError(f"{path}: missing '#mask=<idx> #eos=<idx> #pad=<idx>' header")
        return cls(
            tokens=tuple(lines[1:]),
            mask_id=int(m.group(1)),
            eos_id=int(m.group(2)),
            pad_id=int(m.group(3)),
        )

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#mask={self.mask_id} #eos={self.eos_id} #pad={self.pad_id}\n")
            for tok in self.tokens:
                fh.write(tok + "\n")


@dataclass(frozen=True)
class Canvas:
    """The sequence under construction: immutable prompt + fixed-length generation region.

    Unresolved generation positions hold ``mask_id``. Positions only ever
    transition mask -> token; commits return a new canvas.
    """

    prompt: tuple[int, ...]
    gen: tuple[int, ...]
    mask_id: int
    step: int = 0

    def __post_init__(self) -> None:
        if self.mask_id in self.prompt:
            raise MaskWriteError("prompt must not contain the mask sentinel")

    @property
    def gen_length(self) -> int:
        return len(self.gen)

    @property
    def masked_positions(self) -> tuple[int, ...]:
        return tuple(i for i, tok in enumerate(self.gen) if tok == self.mask_id)

    @property
    def is_complete(self) -> bool:
        return self.mask_id not in self.gen

    @classmethod
    def fresh(cls, prompt: Sequence[int], gen_length: int, mask_id: int) -> "Canvas":
        return cls(prompt=tuple(prompt), gen=(mask_id,) * gen_length, mask_id=mask_id)


def masked_set(canvas: Canvas, block: Iterable[int]) -> tuple[int, ...]:
    """Positions inside ``block`` that still hold the mask sentinel, ascending."""
    positions = sorted(set(block))
    if positions and not 0 <= positions[0] <= positions[-1] < len(canvas.gen):
        raise IndexError(f"block positions outside [0, {len(canvas.gen)})")
    return tuple(i for i in positions if canvas.gen[i] == canvas.mask_id)


def apply_commits(
    canvas: Canvas,
    commits: Sequence[tuple[int, int]],
    *,
    step: int | None = None,
) -> Canvas:
    """Resolve the given (position, token) pairs, returning a new canvas.

    Raises ``OverwriteError`` if any target position is already resolved and
    ``MaskWriteError`` if any token is the mask sentinel. The step counter is
    caller policy: it is kept unless ``step`` is given.
    """
    gen = list(canvas.gen)
    seen: set[int] = set()
    for pos, tok in commits:
        if tok == canvas.mask_id:
            raise MaskWriteError(f"cannot write mask sentinel at position {pos}")
        if gen[pos] != canvas.mask_id or pos in seen:
            raise OverwriteError(f"position {pos} is already resolved")
        gen[pos] = tok
        seen.add(pos)
    return replace(canvas, gen=tuple(gen), step=canvas.step if step is None else step)


def state_ids(canvas: Canvas) -> list[int]:
    """Serialize prompt + generation as one array, -1 for masked positions."""
    out = list(canvas.prompt)
    out.extend(MASK_WIRE if tok == canvas.mask_id else tok for tok in canvas.gen)
    return out


def gen_snapshot(canvas: Canvas) -> list[int]:
    """Generation region only, -1 for masked positions (trace snapshot format)."""
    return [MASK_WIRE if tok == canvas.mask_id else tok for tok in canvas.gen]


def fingerprint_ids(ids: Sequence[int]) -> str:
    """Hex fingerprint of a serialized state array (sha256 of the id list)."""
    return hashlib.sha256(",".join(str(i) for i in ids).encode("ascii")).hexdigest()


def canvas_fingerprint(canvas: Canvas) -> str:
    return fingerprint_ids(state_ids(canvas))


@dataclass(frozen=True)
class Prediction:
    """Top-1 outcome for one masked position, optionally with the full distribution.

    ``top_token`` is the least index attaining the maximum probability; when
    ``dist`` is present it must be a normalized vector consistent with the
    top-1 fields.
    """

    position: int
    top_token: int
    top_prob: float
    dist: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.top_prob <= 1.0:
            raise ValueError(f"top_prob {self.top_prob} outside [0, 1]")
        if self.dist is not None:
            if any(p < 0.0 for p in self.dist):
                raise ValueError("distribution entries must be nonnegative")
            total = sum(self.dist)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"distribution sums to {total}, expected 1")
            if self.dist[self.top_token] != self.top_prob:
                raise ValueError("dist[top_token] must equal top_prob")
            peak = max(self.dist)
            if self.dist.index(peak) != self.top_token:
                raise ValueError("top_token must be the least index attaining the maximum")


@dataclass(frozen=True)
class DecodeConfig:
    """All thresholds and budgets shared by the decoding strategies.

    The planning interval is half-open ``[tau_plan_lo, tau_plan_hi)`` and must
    not overlap the high-confidence region; the generation length must be a
    whole number of blocks. ``max_steps`` defaults to 4x the generation
    length.
    """

    gen_length: int
    block_size: int
    tau_high: float = 0.9
    tau_plan_lo: float = 0.2
    tau_plan_hi: float = 0.65
    tau_ar_lo: float = 0.1
    n_sparsity: int = 5
    max_candidates: int = 3
    max_steps: int | None = None
    posterior_reuse: bool = True
    ar_strict_chain: bool = False
    nfe_mode: NfeMode = NfeMode.BATCH_AS_ONE

    def __post_init__(self) -> None:
        if self.gen_length < 1:
            raise ConfigError("gen_length must be >= 1")
        if self.block_size < 1 or self.gen_length % self.block_size != 0:
            raise ConfigError(
                f"gen_length {self.gen_length} must be a positive multiple of block_size {self.block_size}"
            )
        for name in ("tau_high", "tau_plan_lo", "tau_plan_hi", "tau_ar_lo"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ConfigError(f"{name}={val} outside [0, 1]")
        if not self.tau_plan_lo < self.tau_plan_hi:
            raise ConfigError("tau_plan_lo must be < tau_plan_hi")
        if self.tau_plan_hi > self.tau_high:
            raise ConfigError("planning interval must not overlap the high-confidence region")
        if self.n_sparsity < 0:
            raise ConfigError("n_sparsity must be >= 0")
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be >= 1")
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 4 * self.gen_length)
        elif self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if isinstance(self.nfe_mode, str) and not isinstance(self.nfe_mode, NfeMode):
            object.__setattr__(self, "nfe_mode", NfeMode(self.nfe_mode))

    @property
    def num_blocks(self) -> int:
        return self.gen_length // self.block_size

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "DecodeConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "gen_length" not in mapping or "block_size" not in mapping:
            raise ConfigError("config requires gen_length and block_size")
        return cls(**{k: v for k, v in mapping.items()})  # type: ignore[arg-type]

    @classmethod
    def from_file(cls, path: str) -> "DecodeConfig":
        """Parse a JSON object or key=value lines mirroring the config fields."""
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON config: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"{path}: config JSON must be an object")
            return cls.from_mapping(raw)
        mapping: dict[str, object] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            mapping[key.strip()] = _coerce_scalar(value.strip())
        return cls.from_mapping(mapping)


def _coerce_scalar(text: str) -> object:
    low = text.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


@dataclass(frozen=True)
class CommitRecord:
    """One committed token with its step, route and confidence at commit time."""

    step: int
    position: int
    token: int
    route: Route
    confidence: float
