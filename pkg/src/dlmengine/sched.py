"""Semi-autoregressive blockwise scheduling: active block, expansion, termination.

Blocks are resolved left to right. The working set is the masked positions of
the first block still containing masks; when those fall to at most
``n_sparsity`` and a next block exists, the whole next block is revealed as
well (single-block lookahead only). Decoding halts early the moment an EOS
sits on a fully resolved prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .core import Canvas, DecodeConfig, EngineError, Vocabulary, masked_set


class NoMaskError(EngineError):
    """working_set was asked for a plan on a fully resolved canvas."""


@dataclass(frozen=True)
class BlockPlan:
    """The positions eligible for replacement this step."""

    block_size: int
    active_block: int
    working_set: tuple[int, ...]
    expanded: bool


class TerminationKind(Enum):
    CONTINUE = "CONTINUE"
    TRUNCATE = "TRUNCATE"
    DONE = "DONE"


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    at: int | None = None

    @property
    def halts(self) -> bool:
        return self.kind is not TerminationKind.CONTINUE


def working_set(canvas: Canvas, cfg: DecodeConfig) -> BlockPlan:
    """Identify the active block and apply the sparsity-triggered expansion."""
    size = cfg.block_size
    active = None
    for block in range(cfg.num_blocks):
        lo, hi = block * size, (block + 1) * size
        if any(tok == canvas.mask_id for tok in canvas.gen[lo:hi]):
            active = block
            break
    if active is None:
        raise NoMaskError("canvas is fully resolved")
    lo, hi = active * size, (active + 1) * size
    active_masked = masked_set(canvas, range(lo, hi))
    expanded = len(active_masked) <= cfg.n_sparsity and active + 1 < cfg.num_blocks
    if expanded:
        positions = tuple(sorted(set(active_masked) | set(range(hi, hi + size))))
    else:
        positions = active_masked
    return BlockPlan(block_size=size, active_block=active, working_set=positions, expanded=expanded)


def check_termination(canvas: Canvas, vocab: Vocabulary) -> Termination:
    """DONE when no mask remains; TRUNCATE at the leftmost EOS on a resolved prefix."""
    if canvas.is_complete:
        return Termination(TerminationKind.DONE)
    for i, tok in enumerate(canvas.gen):
        if tok == canvas.mask_id:
            break
        if tok == vocab.eos_id:
            return Termination(TerminationKind.TRUNCATE, at=i)
    return Termination(TerminationKind.CONTINUE)


def truncate_fill(canvas: Canvas, at: int, vocab: Vocabulary) -> Canvas:
    """Fill still-masked positions right of the EOS with pad; resolved tokens stay."""
    gen = list(canvas.gen)
    for i in range(at + 1, len(gen)):
        if gen[i] == canvas.mask_id:
            gen[i] = vocab.pad_id
    return replace(canvas, gen=tuple(gen))
