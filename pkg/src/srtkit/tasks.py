"""Task schema: instruction/target construction and output parsing.

The three tasks share one minimal instruction convention:

    ASR   instruction = <|src|>                  target = transcription
    SMT   instruction = transcription<|src|><|tgt|>   target = translation
    SRT   instruction = <|src|><|tgt|>           target = transcription<|src|><|tgt|>translation

The SRT target repeats the tag pair, which is what lets the output be split
back into (transcription, translation).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import InvalidSample, ParseMiss
from .tags import LanguageTag


class TaskKind(enum.Enum):
    ASR = "asr"
    SMT = "smt"
    SRT = "srt"


@dataclass
class SrtSample:
    """One supervised example. ``tgt`` and ``translation`` are absent for ASR."""

    audio_ref: str
    src: LanguageTag
    transcription: str
    tgt: LanguageTag | None = None
    translation: str | None = None

    def __post_init__(self):
        if self.tgt is not None and self.tgt == self.src:
            raise InvalidSample(f"src and tgt are both {self.src.code!r}")
        if self.src.surface in self.transcription:
            raise InvalidSample("transcription contains a tag surface form")


def _require_pair(kind: TaskKind, s: SrtSample) -> tuple[LanguageTag, LanguageTag]:
    if s.tgt is None or s.translation is None:
        raise InvalidSample(f"{kind.value} sample needs tgt and translation")
    return s.src, s.tgt


def build_instruction(kind: TaskKind, s: SrtSample) -> str:
    if kind is TaskKind.ASR:
        return s.src.surface
    src, tgt = _require_pair(kind, s)
    if kind is TaskKind.SMT:
        return f"{s.transcription}{src.surface}{tgt.surface}"
    return f"{src.surface}{tgt.surface}"


def build_target(kind: TaskKind, s: SrtSample) -> str:
    if kind is TaskKind.ASR:
        return s.transcription
    src, tgt = _require_pair(kind, s)
    if kind is TaskKind.SMT:
        return s.translation  # type: ignore[return-value]
    return f"{s.transcription}{src.surface}{tgt.surface}{s.translation}"


def parse_srt_output(text: str, src: LanguageTag, tgt: LanguageTag) -> tuple[str, str]:
    """Split an SRT-task output at the first ``<|src|><|tgt|>`` occurrence.

    First occurrence wins: the model may hallucinate extra tag pairs later in
    the string, and well-formed transcriptions never contain tag surfaces.
    Raises ParseMiss (carrying the raw text) when the delimiter is absent, so
    callers can fall back to scoring the whole output as translation.
    """
    delim = src.surface + tgt.surface
    idx = text.find(delim)
    if idx < 0:
        raise ParseMiss(text)
    return text[:idx], text[idx + len(delim):]


def parse_srt_or_fallback(text: str, src: LanguageTag, tgt: LanguageTag) -> tuple[str, str]:
    """parse_srt_output, but a missing delimiter yields ("", whole output)."""
    try:
        return parse_srt_output(text, src, tgt)
    except ParseMiss as miss:
        return "", miss.raw
