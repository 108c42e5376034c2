"""Speech adapter: Q-Former compression to a fixed query budget + MLP projection.

A trainable bank of n_q query vectors cross-attends to the encoder states, so
the output always has exactly n_q rows no matter how long the audio is; an MLP
(two linears with one ReLU) then maps the query width to the LM embedding
width. Encoder width is adapted by a learned linear before cross-attention.
No positional information is added to the encoder states here (they are
assumed position-aware already).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .audio import EncoderStates
from .blocks import FeedForward, MultiHeadAttention, init_transformer_
from .errors import ConfigMismatch, InvalidConfig


@dataclass(frozen=True)
class AdapterConfig:
    n_q: int = 80
    d_q: int = 768
    n_layers: int = 2
    n_heads: int = 8
    d_encoder: int = 64
    d_llm: int = 64
    mlp_hidden: int = 3072

    def __post_init__(self):
        dims = (self.n_q, self.d_q, self.n_layers, self.n_heads, self.d_encoder, self.d_llm, self.mlp_hidden)
        if any(d < 1 for d in dims):
            raise InvalidConfig(f"all adapter dims must be >= 1, got {self}")
        if self.d_q % self.n_heads != 0:
            raise InvalidConfig(f"d_q {self.d_q} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass
class SpeechEmbedding:
    embedding: torch.Tensor  # (n_q, d_llm)

    @property
    def n_q(self) -> int:
        return self.embedding.shape[0]


class QFormerBlock(nn.Module):
    """Pre-LN block: query self-attention -> cross-attention to states -> FFN."""

    def __init__(self, d_q: int, n_heads: int):
        super().__init__()
        self.ln_self = nn.LayerNorm(d_q)
        self.self_attn = MultiHeadAttention(d_q, n_heads)
        self.ln_cross = nn.LayerNorm(d_q)
        self.cross_attn = MultiHeadAttention(d_q, n_heads)
        self.ln_ffn = nn.LayerNorm(d_q)
        self.ffn = FeedForward(d_q, 4 * d_q)

    def forward(self, q, mem, mem_pad_mask=None):
        q = q + self.self_attn(self.ln_self(q))
        q = q + self.cross_attn(self.ln_cross(q), memory=mem, key_padding_mask=mem_pad_mask)
        return q + self.ffn(self.ln_ffn(q))


class QFormer(nn.Module):
    def __init__(self, cfg: AdapterConfig):
        super().__init__()
        self.cfg = cfg
        self.query_bank = nn.Parameter(torch.empty(cfg.n_q, cfg.d_q))
        self.in_proj = nn.Linear(cfg.d_encoder, cfg.d_q)
        self.blocks = nn.ModuleList(QFormerBlock(cfg.d_q, cfg.n_heads) for _ in range(cfg.n_layers))
        self.ln_out = nn.LayerNorm(cfg.d_q)
        init_transformer_(self)
        nn.init.trunc_normal_(self.query_bank, std=0.02)

    def forward(self, states: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """(B, T, d_encoder) -> (B, n_q, d_q). pad_mask: (B, T), True = padding."""
        if states.dim() != 3 or states.shape[-1] != self.cfg.d_encoder:
            raise ConfigMismatch(
                f"expected states (B, T, {self.cfg.d_encoder}), got {tuple(states.shape)}"
            )
        mem = self.in_proj(states)
        q = self.query_bank[None].expand(states.shape[0], -1, -1).to(states.dtype)
        for block in self.blocks:
            q = block(q, mem, pad_mask)
        return self.ln_out(q)


class MlpProjector(nn.Module):
    """E = ReLU(Q' W1 + b1) W2 + b2, mapping d_q -> d_llm."""

    def __init__(self, cfg: AdapterConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.d_q, cfg.mlp_hidden)
        self.fc2 = nn.Linear(cfg.mlp_hidden, cfg.d_llm)
        init_transformer_(self)

    def forward(self, q_prime: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(q_prime)))


class SpeechAdapter(nn.Module):
    def __init__(self, cfg: AdapterConfig):
        super().__init__()
        self.cfg = cfg
        self.qformer = QFormer(cfg)
        self.projector = MlpProjector(cfg)

    def forward(self, states: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Batched: (B, T, d_encoder) -> (B, n_q, d_llm)."""
        return self.projector(self.qformer(states, pad_mask))

    def adapt(self, h: EncoderStates) -> SpeechEmbedding:
        """Single utterance: (T, D) encoder states -> (n_q, d_llm)."""
        return SpeechEmbedding(self.forward(h.states[None])[0])
