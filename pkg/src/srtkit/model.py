"""Composite model: frozen encoder + trainable adapter + LM (base frozen).

Parameters are addressed by namespace for checkpointing and trainability
selection: ``encoder/*``, ``adapter/*``, ``llm/*`` (base), ``llm_lora/*``
(low-rank deltas). Names are canonical: wrapping a projection with LoRA does
not change the base weight's exported name.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .adapter import AdapterConfig, SpeechAdapter, SpeechEmbedding
from .audio import EncoderConfig, EncoderStates, MelFeatures, build_encoder
from .errors import ConfigMismatch, InvalidConfig
from .lm import FusedInput, LMConfig, LoraSpec, ToyLM, Vocabulary, fuse

NAMESPACES = ("encoder", "adapter", "llm", "llm_lora")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    languages: tuple[str, ...] = ()
    base_chars: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.adapter.d_encoder != self.encoder.d_model:
            raise InvalidConfig(
                f"adapter.d_encoder {self.adapter.d_encoder} != encoder.d_model {self.encoder.d_model}"
            )
        if self.adapter.d_llm != self.lm.d_llm:
            raise InvalidConfig(f"adapter.d_llm {self.adapter.d_llm} != lm.d_llm {self.lm.d_llm}")
        if not self.languages:
            raise InvalidConfig("at least one language tag is required")

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "adapter": self.adapter.to_dict(),
            "lm": self.lm.to_dict(),
            "languages": list(self.languages),
            "base_chars": self.base_chars,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            encoder=EncoderConfig(**d["encoder"]),
            adapter=AdapterConfig(**d["adapter"]),
            lm=LMConfig(**d["lm"]),
            languages=tuple(d["languages"]),
            base_chars=d["base_chars"],
            seed=d["seed"],
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class SrtModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.vocab = Vocabulary(cfg.base_chars, list(cfg.languages))
        self.encoder = build_encoder(cfg.encoder)  # seeds itself, then stays frozen
        torch.manual_seed(cfg.seed)
        self.adapter = SpeechAdapter(cfg.adapter)
        self.lm = ToyLM(cfg.lm, self.vocab)
        self.freeze_base()

    # ---------------- freezing / namespaces ----------------

    def freeze_base(self) -> None:
        """Encoder and base LM never train; adapter (and LoRA, if present) do."""
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        for name, p in self.lm.named_parameters():
            p.requires_grad_("lora_A" in name or "lora_B" in name)
        for p in self.adapter.parameters():
            p.requires_grad_(True)

    @staticmethod
    def _canonical(name: str) -> str:
        # LoRA wrapping moves q_proj -> q_proj.base; exported names hide that.
        return name.replace(".base.", ".")

    def namespace_of(self, component: str, param_name: str) -> str:
        if component == "lm":
            return "llm_lora" if ("lora_A" in param_name or "lora_B" in param_name) else "llm"
        return {"encoder": "encoder", "adapter": "adapter"}[component]

    def named_namespace_params(self) -> dict[str, dict[str, nn.Parameter]]:
        """{namespace: {canonical name: parameter}}; namespaces are disjoint."""
        out: dict[str, dict[str, nn.Parameter]] = {ns: {} for ns in NAMESPACES}
        for component in ("encoder", "adapter", "lm"):
            module = getattr(self, component)
            for name, p in module.named_parameters():
                out[self.namespace_of(component, name)][self._canonical(name)] = p
        return out

    def export_blobs(self) -> dict[str, dict[str, np.ndarray]]:
        blobs: dict[str, dict[str, np.ndarray]] = {}
        for ns, params in self.named_namespace_params().items():
            if params:
                blobs[ns] = {
                    name: p.detach().cpu().to(torch.float32).numpy().copy()
                    for name, p in params.items()
                }
        return blobs

    def load_blobs(self, blobs: dict[str, dict[str, np.ndarray]]) -> None:
        own = self.named_namespace_params()
        for ns, arrays in blobs.items():
            if ns not in own:
                raise ConfigMismatch(f"unknown namespace {ns!r}")
            params = own[ns]
            if set(arrays) != set(params):
                missing = set(params) - set(arrays)
                extra = set(arrays) - set(params)
                raise ConfigMismatch(f"{ns}: parameter names differ (missing {missing}, extra {extra})")
            with torch.no_grad():
                for name, arr in arrays.items():
                    p = params[name]
                    if tuple(p.shape) != arr.shape:
                        raise ConfigMismatch(f"{ns}/{name}: shape {arr.shape} != {tuple(p.shape)}")
                    p.copy_(torch.from_numpy(np.ascontiguousarray(arr)))

    def inject_lora(self, spec: LoraSpec):
        handle = self.lm.apply_lora(spec)
        return handle

    # ---------------- single-utterance pipeline ----------------

    def encode_features(self, feats: MelFeatures) -> EncoderStates:
        return self.encoder.encode(feats)

    def embed_speech(self, h: EncoderStates) -> SpeechEmbedding:
        return self.adapter.adapt(h)

    def embed_speech_batch(self, states: list[EncoderStates]) -> torch.Tensor:
        """Pad variable-length states and adapt: -> (B, n_q, d_llm)."""
        t_max = max(h.T for h in states)
        batch = torch.zeros(len(states), t_max, self.cfg.encoder.d_model)
        pad = torch.ones(len(states), t_max, dtype=torch.bool)
        for i, h in enumerate(states):
            batch[i, : h.T] = h.states
            pad[i, : h.T] = False
        return self.adapter(batch, pad)

    def fuse_instruction(self, speech: SpeechEmbedding, instruction: str) -> FusedInput:
        ids = self.vocab.encode(instruction)
        return fuse(speech, self.lm.embed_text(ids))


def build_model(cfg: ModelConfig, lora: LoraSpec | None = None) -> SrtModel:
    model = SrtModel(cfg)
    if lora is not None:
        model.inject_lora(lora)
        model.freeze_base()
    return model
