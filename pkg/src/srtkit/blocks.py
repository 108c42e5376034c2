"""Minimal transformer building blocks shared by encoder, adapter, and LM.

Mask convention: boolean masks mark positions to BLOCK (True = no attention).
``attn_mask`` is (Lq, Lk), ``key_padding_mask`` is (B, Lk).
"""

from __future__ import annotations

import math

import torch
from torch import nn


class KVCache:
    """Per-request cache of past keys/values, one slot per layer."""

    def __init__(self, n_layers: int):
        self.keys: list[torch.Tensor | None] = [None] * n_layers
        self.values: list[torch.Tensor | None] = [None] * n_layers

    def append(self, layer: int, k: torch.Tensor, v: torch.Tensor):
        if self.keys[layer] is None:
            self.keys[layer], self.values[layer] = k, v
        else:
            self.keys[layer] = torch.cat([self.keys[layer], k], dim=2)
            self.values[layer] = torch.cat([self.values[layer], v], dim=2)
        return self.keys[layer], self.values[layer]

    def length(self) -> int:
        return 0 if self.keys[0] is None else self.keys[0].shape[2]

    def expand_beams(self, beam: int) -> "KVCache":
        """Repeat each batch row ``beam`` times (for beam search)."""
        out = KVCache(len(self.keys))
        for i, (k, v) in enumerate(zip(self.keys, self.values)):
            if k is not None:
                out.keys[i] = k.repeat_interleave(beam, dim=0)
                out.values[i] = v.repeat_interleave(beam, dim=0)
        return out

    def reorder(self, index: torch.Tensor):
        for i, (k, v) in enumerate(zip(self.keys, self.values)):
            if k is not None:
                self.keys[i] = k.index_select(0, index)
                self.values[i] = v.index_select(0, index)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with named projections.

    ``memory=None`` gives self-attention. The q/v projections are plain
    nn.Linear modules named ``q_proj``/``v_proj`` so low-rank wrappers can
    target them by name.
    """

    def __init__(self, d_model: int, n_heads: int, d_memory: int | None = None):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        d_memory = d_memory if d_memory is not None else d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_memory, d_model)
        self.v_proj = nn.Linear(d_memory, d_model)
        self.o_proj = nn.Linear(d_model, d_model)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        return x.view(b, l, self.n_heads, self.d_head).transpose(1, 2)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor | None = None,
        attn_mask: torch.Tensor | None = None,
        key_padding_mask: torch.Tensor | None = None,
        cache: KVCache | None = None,
        layer: int = 0,
    ) -> torch.Tensor:
        mem = x if memory is None else memory
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(mem))
        v = self._split(self.v_proj(mem))
        if cache is not None:
            k, v = cache.append(layer, k, v)

        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_head)
        if attn_mask is not None:
            scores = scores.masked_fill(attn_mask, float("-inf"))
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = torch.matmul(weights, v)
        b, _, lq, _ = out.shape
        out = out.transpose(1, 2).reshape(b, lq, self.n_heads * self.d_head)
        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


def init_transformer_(module: nn.Module, std: float = 0.02) -> None:
    """Truncated-normal weights (sigma=std), zero biases, identity layer norms."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=std)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def sinusoidal_positions(length: int, d_model: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sin/cos position encodings, (length, d_model)."""
    pos = torch.arange(length, dtype=dtype)[:, None]
    idx = torch.arange(0, d_model, 2, dtype=dtype)[None, :]
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), idx / d_model)
    enc = torch.zeros(length, d_model, dtype=dtype)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return enc
