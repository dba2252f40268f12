"""Trainable sentence encoder producing the condition embedding.

A token-embedding table plus a small transformer pooled to the embedding
width. It is pretrained contrastively against scale-1 motion latents and then
frozen, standing in for a large pretrained text model behind the same
interface.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import InputError

PAD_ID = 0
UNK_ID = 1
_PUNCT = re.compile(r"[^\w\s]")

ENCODER_VERSION = "text-encoder-v1"


def tokenize(text: str, max_tokens: int = 32) -> list[str]:
    """Lowercase, strip punctuation, whitespace-split, truncate."""
    cleaned = _PUNCT.sub(" ", text.lower())
    return cleaned.split()[:max_tokens]


class Vocabulary:
    """Token-to-id table with PAD and UNK specials."""

    def __init__(self, tokens=()):
        self.token_to_id = {"<pad>": PAD_ID, "<unk>": UNK_ID}
        for token in tokens:
            self.token_to_id.setdefault(token, len(self.token_to_id))

    @classmethod
    def from_texts(cls, texts) -> "Vocabulary":
        seen = sorted({t for text in texts for t in tokenize(text)})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        vocab = cls()
        with open(path, "r", encoding="utf-8") as fh:
            vocab.token_to_id = json.load(fh)
        return vocab


@dataclass
class ConditionEmbedding:
    """Text condition vector fed to every denoiser."""

    vector: np.ndarray
    source_text: str
    encoder_version: str = ENCODER_VERSION

    def validate(self, embed_dim: int | None = None) -> None:
        if not np.isfinite(self.vector).all():
            raise InputError("condition embedding contains non-finite values")
        if embed_dim is not None and self.vector.shape != (embed_dim,):
            raise InputError(
                f"condition embedding has shape {self.vector.shape}, "
                f"expected ({embed_dim},)"
            )


class TextEncoder(nn.Module):
    def __init__(
        self,
        vocab: Vocabulary,
        embed_dim: int = 512,
        num_layers: int = 2,
        num_heads: int = 4,
        max_tokens: int = 32,
    ):
        super().__init__()
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.max_tokens = max_tokens
        self.token_embed = nn.Embedding(len(vocab), embed_dim, padding_idx=PAD_ID)
        self.pos_embed = nn.Parameter(torch.zeros(max_tokens, embed_dim))
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim,
            nhead=num_heads,
            dim_feedforward=embed_dim * 2,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)
        self.proj = nn.Linear(embed_dim, embed_dim)

    def token_ids(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = []
        for text in texts:
            if not text or not text.strip():
                raise InputError("cannot encode empty text")
            ids = self.vocab.encode(tokenize(text, self.max_tokens))
            if not ids:
                raise InputError(f"text {text!r} has no tokens")
            rows.append(ids)
        width = max(len(r) for r in rows)
        batch = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, row in enumerate(rows):
            batch[i, : len(row)] = torch.tensor(row)
        mask = batch == PAD_ID
        return batch, mask

    def forward(self, token_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.token_embed(token_ids) + self.pos_embed[: token_ids.shape[1]]
        x = self.transformer(x, src_key_padding_mask=pad_mask)
        keep = (~pad_mask).float().unsqueeze(-1)
        pooled = (x * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        return self.proj(pooled)

    def encode_batch(self, texts: list[str]) -> torch.Tensor:
        token_ids, mask = self.token_ids(texts)
        return self.forward(token_ids, mask)

    @torch.no_grad()
    def encode_text(self, text: str) -> ConditionEmbedding:
        was_training = self.training
        self.eval()
        try:
            vec = self.encode_batch([text])[0].cpu().numpy()
        finally:
            self.train(was_training)
        emb = ConditionEmbedding(vector=vec, source_text=text)
        emb.validate(self.embed_dim)
        return emb


def freeze(encoder: TextEncoder) -> TextEncoder:
    """Make the encoder read-only: no gradients, eval mode."""
    encoder.requires_grad_(False)
    encoder.eval()
    return encoder


def parameter_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


class ExternalEncoderAdapter:
    """Wrap any text -> vector callable behind the encoder interface."""

    def __init__(self, fn, embed_dim: int, version: str = "external"):
        self.fn = fn
        self.embed_dim = embed_dim
        self.version = version

    def encode_text(self, text: str) -> ConditionEmbedding:
        if not text or not text.strip():
            raise InputError("cannot encode empty text")
        vec = np.asarray(self.fn(text), dtype=np.float32)
        emb = ConditionEmbedding(
            vector=vec, source_text=text, encoder_version=self.version
        )
        emb.validate(self.embed_dim)
        return emb
