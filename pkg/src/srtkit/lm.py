"""Decoder-only toy LM: char-level vocab with atomic tag tokens, fused
speech+text input, masked next-token loss, and LoRA injection for stage 3.

The LM consumes a prefix of speech embeddings followed by instruction token
embeddings; loss is computed on target positions only (never on the prefix),
with teacher forcing and an EOS appended to every target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .adapter import SpeechEmbedding
from .blocks import FeedForward, KVCache, MultiHeadAttention, init_transformer_
from .errors import AlreadyWrapped, ConfigMismatch, InvalidConfig, InvalidInput, InvalidToken
from .tags import LanguageTag

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
_TAG_LEN = 7  # every surface is "<|xyz|>"


class Vocabulary:
    """Character-level vocabulary plus specials and one atomic token per tag."""

    def __init__(self, base_chars: str, tag_codes: list[str]):
        surfaces = [LanguageTag(c).surface for c in dict.fromkeys(tag_codes)]
        chars = sorted(set(base_chars))
        self.tokens: list[str] = [PAD, BOS, EOS] + surfaces + chars
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidConfig("vocabulary entries must be distinct")
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        self._surfaces = set(surfaces)
        self.base_chars = "".join(chars)
        self.tag_codes = list(dict.fromkeys(tag_codes))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    def tag_id(self, code: str) -> int:
        return self._ids[LanguageTag(code).surface]

    def encode(self, text: str) -> list[int]:
        """Greedy scan; tag surfaces tokenize as single ids."""
        ids = []
        i = 0
        while i < len(text):
            chunk = text[i: i + _TAG_LEN]
            if chunk in self._surfaces:
                ids.append(self._ids[chunk])
                i += _TAG_LEN
                continue
            ch = text[i]
            if ch not in self._ids or len(ch) != 1:
                raise InvalidToken(f"character {ch!r} at position {i} is not in the vocabulary")
            ids.append(self._ids[ch])
            i += 1
        return ids

    def decode(self, ids: list[int], skip_special: bool = True) -> str:
        parts = []
        special = {self.pad_id, self.bos_id, self.eos_id}
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise InvalidToken(f"token id {i} out of range")
            if skip_special and i in special:
                continue
            parts.append(self.tokens[i])
        return "".join(parts)


@dataclass
class TextEmbedding:
    embedding: torch.Tensor  # (n_t, d_llm)

    @property
    def n_t(self) -> int:
        return self.embedding.shape[0]


@dataclass
class FusedInput:
    """Speech rows followed by text rows; the LM prefix."""

    embedding: torch.Tensor  # (n_q + n_t, d_llm)
    n_speech: int
    n_text: int
    loss_mask: torch.Tensor | None = None  # set by forward_scores over target positions

    @property
    def length(self) -> int:
        return self.embedding.shape[0]


def fuse(ex: SpeechEmbedding, et: TextEmbedding) -> FusedInput:
    if ex.embedding.shape[1] != et.embedding.shape[1]:
        raise ConfigMismatch(
            f"speech width {ex.embedding.shape[1]} != text width {et.embedding.shape[1]}"
        )
    return FusedInput(torch.cat([ex.embedding, et.embedding], dim=0), ex.n_q, et.n_t)


@dataclass(frozen=True)
class LMConfig:
    d_llm: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_len: int = 512

    def __post_init__(self):
        if self.d_llm % self.n_heads != 0:
            raise InvalidConfig(f"d_llm {self.d_llm} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


class _DecoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, ffn_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult * d)

    def forward(self, x, attn_mask=None, key_padding_mask=None, cache=None, layer=0):
        x = x + self.attn(
            self.ln1(x), attn_mask=attn_mask, key_padding_mask=key_padding_mask,
            cache=cache, layer=layer,
        )
        return x + self.ffn(self.ln2(x))


class ToyLM(nn.Module):
    def __init__(self, cfg: LMConfig, vocab: Vocabulary):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.tok_emb = nn.Embedding(len(vocab), cfg.d_llm)
        self.pos_emb = nn.Embedding(cfg.max_len, cfg.d_llm)
        self.layers = nn.ModuleList(
            _DecoderBlock(cfg.d_llm, cfg.n_heads, cfg.ffn_mult) for _ in range(cfg.n_layers)
        )
        self.ln_f = nn.LayerNorm(cfg.d_llm)
        self.lm_head = nn.Linear(cfg.d_llm, len(vocab))
        init_transformer_(self)
        self.lora_spec: LoraSpec | None = None

    # ---------------- embedding / fusion ----------------

    def embed_text(self, token_ids: list[int] | torch.Tensor) -> TextEmbedding:
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        if ids.numel() == 0:
            raise InvalidToken("empty token sequence (instructions always carry at least one tag)")
        if ids.min() < 0 or ids.max() >= len(self.vocab):
            raise InvalidToken(f"token id out of range for vocab of {len(self.vocab)}")
        return TextEmbedding(self.tok_emb(ids))

    # ---------------- core forward ----------------

    def forward_embeds(
        self,
        embeds: torch.Tensor,  # (B, L, d)
        positions: torch.Tensor,  # (B, L) long
        attn_mask: torch.Tensor | None = None,
        key_padding_mask: torch.Tensor | None = None,
        cache: KVCache | None = None,
    ) -> torch.Tensor:
        if positions.max() >= self.cfg.max_len:
            raise InvalidInput(f"sequence exceeds max_len {self.cfg.max_len}")
        x = embeds + self.pos_emb(positions)
        for i, layer in enumerate(self.layers):
            x = layer(x, attn_mask=attn_mask, key_padding_mask=key_padding_mask,
                      cache=cache, layer=i)
        return self.lm_head(self.ln_f(x))

    @staticmethod
    def causal_mask(length: int, device=None) -> torch.Tensor:
        return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)

    # ---------------- training loss ----------------

    def forward_scores(self, z: FusedInput, target: list[int] | torch.Tensor):
        """Returns (loss, logits, labels, loss_mask) for one fused example.

        Teacher forcing: the sequence is prefix + embeddings of the target
        tokens; logits at the last prefix position and at each target position
        predict the next target token, with EOS appended.
        """
        tgt = torch.as_tensor(target, dtype=torch.long)
        if tgt.numel() == 0:
            raise InvalidInput("empty target")
        dtype = z.embedding.dtype
        tgt_embeds = self.tok_emb(tgt).to(dtype)
        seq = torch.cat([z.embedding, tgt_embeds], dim=0)[None]  # (1, L, d)
        length = seq.shape[1]
        positions = torch.arange(length)[None]
        logits = self.forward_embeds(seq, positions, attn_mask=self.causal_mask(length))

        labels = torch.full((length,), -1, dtype=torch.long)
        p0 = z.length - 1  # last prefix position predicts the first target token
        labels[p0: p0 + tgt.numel()] = tgt
        labels[p0 + tgt.numel()] = self.vocab.eos_id
        mask = labels >= 0
        z.loss_mask = mask
        flat = logits[0][mask]
        loss = nn.functional.cross_entropy(flat, labels[mask])
        return loss, logits[0], labels, mask

    def forward_loss(self, z: FusedInput, target: list[int] | torch.Tensor) -> torch.Tensor:
        """Mean cross-entropy over target positions only."""
        return self.forward_scores(z, target)[0]

    # ---------------- LoRA ----------------

    def apply_lora(self, spec: "LoraSpec") -> "LoraHandle":
        return apply_lora(self, spec)


@dataclass(frozen=True)
class LoraSpec:
    rank: int = 8
    alpha: float = 32.0
    dropout: float = 0.05
    targets: tuple[str, ...] = ("q_proj", "v_proj")

    def __post_init__(self):
        if self.rank < 1:
            raise InvalidConfig(f"LoRA rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise InvalidConfig(f"LoRA alpha must be > 0, got {self.alpha}")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig(f"LoRA dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d["targets"] = list(d["targets"])
        return d

    @staticmethod
    def from_dict(d: dict) -> "LoraSpec":
        return LoraSpec(d["rank"], d["alpha"], d["dropout"], tuple(d["targets"]))


class LoraLinear(nn.Module):
    """base(x) + (alpha/r) * B (A dropout(x)); B starts at zero so injection
    is a no-op until the first optimizer step. The base weight is frozen."""

    def __init__(self, base: nn.Linear, spec: LoraSpec):
        super().__init__()
        self.base = base
        self.scale = spec.alpha / spec.rank
        self.dropout = nn.Dropout(spec.dropout)
        self.lora_A = nn.Parameter(torch.empty(spec.rank, base.in_features, dtype=base.weight.dtype))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, spec.rank, dtype=base.weight.dtype))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        base.weight.requires_grad_(False)
        if base.bias is not None:
            base.bias.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = nn.functional.linear(nn.functional.linear(self.dropout(x), self.lora_A), self.lora_B)
        return self.base(x) + self.scale * delta


@dataclass
class LoraHandle:
    spec: LoraSpec
    params: dict[str, nn.Parameter]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.params.values())


def apply_lora(lm: ToyLM, spec: LoraSpec) -> LoraHandle:
    """Wrap the targeted attention projections of every LM block."""
    if lm.lora_spec is not None:
        raise AlreadyWrapped("LoRA adapters are already injected")
    params: dict[str, nn.Parameter] = {}
    for name, module in lm.named_modules():
        if not isinstance(module, MultiHeadAttention):
            continue
        for attr in spec.targets:
            base = getattr(module, attr, None)
            if base is None:
                raise InvalidConfig(f"attention has no projection named {attr!r}")
            if isinstance(base, LoraLinear):
                raise AlreadyWrapped(f"{name}.{attr} is already wrapped")
            wrapped = LoraLinear(base, spec)
            setattr(module, attr, wrapped)
            params[f"{name}.{attr}.lora_A"] = wrapped.lora_A
            params[f"{name}.{attr}.lora_B"] = wrapped.lora_B
    lm.lora_spec = spec
    return LoraHandle(spec, params)
