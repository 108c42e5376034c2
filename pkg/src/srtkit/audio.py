"""Audio frontend: waveform -> log-mel features -> frozen encoder states.

The pretrained encoder the full-scale system relies on is replaced here by a
small 2-layer transformer whose weights are fixed at construction from a seed
(frozen random stands in for frozen pretrained); the curriculum contracts only
need "audio -> (T x D) states, never updated". An ``external`` backend slot
exists for plugging in a real pretrained encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .blocks import FeedForward, MultiHeadAttention, init_transformer_, sinusoidal_positions
from .errors import ConfigMismatch, InvalidInput

SAMPLE_RATE = 16_000
N_FFT = 400  # 25 ms window
HOP = 160  # 10 ms hop
N_MELS = 80
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray  # 1-D float, range [-1, 1]
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInput(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass
class MelFeatures:
    frames: np.ndarray  # (n_frames, n_mels)
    n_mels: int = N_MELS
    hop: float = HOP / SAMPLE_RATE  # seconds per frame

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class EncoderStates:
    states: torch.Tensor  # (T, D)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def D(self) -> int:
        return self.states.shape[1]


def load_wav(path: str | Path) -> Waveform:
    """Read a mono WAV file (PCM16 or float32)."""
    from scipy.io import wavfile

    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise InvalidInput(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidInput(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, rate)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-scale mel filters, (n_mels, n_fft//2 + 1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - lo) / (mid - lo)
        down = (hi - fft_freqs) / (hi - mid)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


_BANK_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def extract_features(w: Waveform) -> MelFeatures:
    """Log-mel spectrogram with the conventional 80-mel / 25 ms / 10 ms recipe.

    Deterministic; n_frames = ceil(len(samples) / hop). Frames past the signal
    end are zero-padded, so total silence maps every bin to log10(LOG_FLOOR).
    """
    if w.samples.size == 0:
        raise InvalidInput("empty waveform")
    if w.sample_rate != SAMPLE_RATE:
        raise InvalidInput(f"expected {SAMPLE_RATE} Hz input, got {w.sample_rate} (resampling is the caller's job)")

    n_frames = -(-w.samples.size // HOP)  # ceil
    padded = np.zeros(( n_frames - 1) * HOP + N_FFT)
    padded[: w.samples.size] = w.samples
    idx = np.arange(N_FFT)[None, :] + HOP * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(N_FFT)[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2

    key = (N_MELS, N_FFT, SAMPLE_RATE)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = mel_filterbank(*key)
    mel = power @ _BANK_CACHE[key].T
    logmel = np.log10(np.maximum(mel, LOG_FLOOR))
    return MelFeatures(logmel.astype(np.float32), N_MELS, HOP / SAMPLE_RATE)


@dataclass(frozen=True)
class EncoderConfig:
    backend: str = "toy"  # "toy" | "external"
    n_mels: int = N_MELS
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    stride: int = 2
    seed: int = 1234

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


class _EncoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, ffn_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, ffn_mult * d)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ffn(self.ln2(x))


class ToyEncoder(nn.Module):
    """Frozen 2-layer transformer over log-mel frames.

    Output length is a pure function of n_frames: T = ceil(n_frames / stride)
    (mean-pooled stride groups), never of content. All parameters are fixed at
    construction from cfg.seed and require no gradients.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if cfg.backend != "toy":
            raise ConfigMismatch(f"ToyEncoder cannot serve backend {cfg.backend!r}")
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.in_proj = nn.Linear(cfg.n_mels, cfg.d_model)
        self.layers = nn.ModuleList(
            _EncoderBlock(cfg.d_model, cfg.n_heads, cfg.ffn_mult) for _ in range(cfg.n_layers)
        )
        self.ln_out = nn.LayerNorm(cfg.d_model)
        init_transformer_(self)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def d_model(self) -> int:
        return self.cfg.d_model

    def output_length(self, n_frames: int) -> int:
        return -(-n_frames // self.cfg.stride)

    def encode(self, f: MelFeatures) -> EncoderStates:
        if f.n_mels != self.cfg.n_mels:
            raise ConfigMismatch(f"encoder expects {self.cfg.n_mels} mels, features have {f.n_mels}")
        if f.n_frames < 1:
            raise InvalidInput("features must have at least one frame")
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(f.frames), dtype=torch.float32)[None]  # (1, T0, mels)
            x = self.in_proj(x)
            s = self.cfg.stride
            if s > 1:
                t0 = x.shape[1]
                pad = (-t0) % s
                if pad:
                    x = torch.cat([x, x[:, -1:].expand(-1, pad, -1)], dim=1)
                x = x.view(1, -1, s, self.cfg.d_model).mean(dim=2)
            x = x + sinusoidal_positions(x.shape[1], self.cfg.d_model)[None]
            for layer in self.layers:
                x = layer(x)
            x = self.ln_out(x)
        return EncoderStates(x[0])


def build_encoder(cfg: EncoderConfig) -> ToyEncoder:
    if cfg.backend == "toy":
        return ToyEncoder(cfg)
    if cfg.backend == "external":
        raise NotImplementedError(
            "external encoder backend is a plug-in point: an implementation must "
            "produce (T x D) states for 16 kHz mono audio, stay frozen, and "
            "document its own fixed-length padding convention (none is applied here)"
        )
    raise ConfigMismatch(f"unknown encoder backend {cfg.backend!r}")


@dataclass
class FeatureSource:
    """Resolves a manifest audio ref to MelFeatures.

    Refs of the form ``feat:<id>`` are looked up in preloaded feature tables;
    anything else is treated as a WAV path.
    """

    feature_tables: list[dict[str, np.ndarray]] = field(default_factory=list)

    def add_table(self, table: dict[str, np.ndarray]) -> None:
        self.feature_tables.append(table)

    def load(self, ref: str) -> MelFeatures:
        if ref.startswith("feat:"):
            key = ref[len("feat:"):]
            for table in self.feature_tables:
                if key in table:
                    arr = table[key]
                    return MelFeatures(arr, arr.shape[1], HOP / SAMPLE_RATE)
            raise InvalidInput(f"feature id {key!r} not found in any loaded feature table")
        return extract_features(load_wav(ref))
