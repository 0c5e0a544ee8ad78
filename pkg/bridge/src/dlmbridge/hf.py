"""Optional transformers-backed masked-diffusion backend.

Loads a bidirectional masked-prediction model and answers top-k queries with
one forward per state. Requires the ``models`` extra (torch + transformers);
imports stay inside the class so the stub path never touches them.
"""

from __future__ import annotations

from typing import Sequence

MASK_WIRE = -1


class HFMaskedDiffusionModel:
    """Wraps a tokenizer + model pair from the standard model ecosystem.

    The advertised mask/eos/pad ids come straight from the tokenizer, which
    keeps the info-frame invariant honest by construction. Models whose
    tokenizer lacks a mask token cannot serve this protocol.
    """

    def __init__(self, model_id: str, device: str = "cpu") -> None:
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - exercised only with the extra installed
            raise RuntimeError(
                "transformers backend requires the 'models' extra (pip install dlmbridge[models])"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id, trust_remote_code=True)
        self.model = AutoModel.from_pretrained(model_id, trust_remote_code=True).to(device).eval()
        self.device = device
        if self.tokenizer.mask_token_id is None:
            raise RuntimeError(f"{model_id}: tokenizer has no mask token")
        self.mask_id = int(self.tokenizer.mask_token_id)
        self.eos_id = int(self.tokenizer.eos_token_id)
        pad = self.tokenizer.pad_token_id
        self.pad_id = int(pad if pad is not None else self.eos_id)
        self.tokens = tuple(
            self.tokenizer.convert_ids_to_tokens(i) for i in range(len(self.tokenizer))
        )

    def predict_positions(
        self, state: Sequence[int], positions: Sequence[int], top_k: int
    ) -> list[list[tuple[int, float]]]:
        torch = self._torch
        ids = [self.mask_id if tok == MASK_WIRE else tok for tok in state]
        with torch.no_grad():
            batch = torch.tensor([ids], dtype=torch.long, device=self.device)
            logits = self.model(batch).logits[0]
            probs = torch.softmax(logits.float(), dim=-1)
        out = []
        for pos in positions:
            values, indices = torch.topk(probs[pos], k=min(top_k, probs.shape[-1]))
            out.append([(int(t), float(p)) for t, p in zip(indices, values)])
        return out
