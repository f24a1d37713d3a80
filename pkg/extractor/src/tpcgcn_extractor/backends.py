"""Text encoders behind a tiny common interface.

``transformers`` (the default) runs a frozen pretrained encoder in inference
mode: tokenize to at most ``max_tokens`` (padded to that length), then CLS or
attention-masked mean pooling over the last hidden states. ``hashed`` is a
dependency-free 768-d signed feature hash for fully offline environments;
it exists so pipelines stay runnable without model weights, not as a quality
substitute.
"""

from __future__ import annotations

import re

import numpy as np

HASHED_DIM = 768

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_WORD = re.compile(r"\w+", re.UNICODE)


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class HashedBackend:
    """Deterministic signed bag-of-words hashing to a fixed 768-d vector."""

    name = "hashed"

    def encode(self, texts: list[str], max_tokens: int, pooling: str) -> np.ndarray:
        out = np.zeros((len(texts), HASHED_DIM), dtype=np.float32)
        for row, text in enumerate(texts):
            counts: dict[int, int] = {}
            for token in _WORD.findall(text.lower())[:max_tokens]:
                data = token.encode("utf-8")
                idx = _fnv1a64(b"idx:" + data) % HASHED_DIM
                sign = 1 if _fnv1a64(b"sgn:" + data) & 1 else -1
                counts[idx] = counts.get(idx, 0) + sign
            vec = np.zeros(HASHED_DIM, dtype=np.float64)
            for idx, count in counts.items():
                vec[idx] = float(count)
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec /= norm
            out[row] = vec
        return out


class TransformersBackend:
    """Frozen pretrained encoder via the transformers library."""

    def __init__(self, model_name: str):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "the transformers backend needs the [model] extra "
                "(pip install tpcgcn-extractor[model])"
            ) from exc
        self.name = model_name
        self._torch = torch
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModel.from_pretrained(model_name)
        except Exception as exc:
            raise RuntimeError(f"cannot load model {model_name!r}: {exc}") from exc
        self.model.eval()

    def encode(self, texts: list[str], max_tokens: int, pooling: str) -> np.ndarray:
        torch = self._torch
        batch = self.tokenizer(
            texts,
            truncation=True,
            max_length=max_tokens,
            padding="max_length",
            return_tensors="pt",
        )
        with torch.no_grad():
            hidden = self.model(**batch).last_hidden_state
        if pooling == "cls":
            pooled = hidden[:, 0, :]
        else:
            mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return pooled.cpu().numpy().astype(np.float32)


def get_backend(model_name: str):
    if model_name == "hashed":
        return HashedBackend()
    return TransformersBackend(model_name)
