"""WER and corpus BLEU, plus direction-matrix aggregation.

BLEU follows the sacre-style signature ``case:mixed|eff:no|tok:13a|smooth:exp``
with ``tok:char`` for jpn/kor/tha/yue/zho targets: clipped n-gram precisions of
orders 1..4, exponential smoothing for zero-match orders (precision halves per
consecutive zero order), brevity penalty, no effective-order shortening, and no
case folding. WER normalizes text first: NFC, lowercase, punctuation/symbol
stripping, whitespace collapse (the documented subset of the Whisper-style
normalizer; number/abbreviation expansion is out of scope).
"""

from __future__ import annotations

import math
import re
import sys
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .errors import InvalidInput

MAX_ORDER = 4
CHAR_TOKENIZED_LANGS = frozenset({"jpn", "kor", "tha", "yue", "zho"})

_LOG_FLOOR = -9999999999.0


# --------------------------------------------------------------------------
# text normalization (WER side)
# --------------------------------------------------------------------------

def _strip_punct_symbols(text: str) -> str:
    out = []
    for ch in text:
        if unicodedata.category(ch)[0] in ("P", "S"):
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def normalize(text: str) -> str:
    """Lowercase, strip punctuation/symbol characters, collapse whitespace.

    NFC is re-applied after each mutating step: removing a punctuation char
    between a base char and a combining mark can enable a new composition, and
    lowercasing can decompose (e.g. U+0130); renormalizing keeps the function
    idempotent.
    """
    text = unicodedata.normalize("NFC", text)
    text = unicodedata.normalize("NFC", text.lower())
    text = unicodedata.normalize("NFC", _strip_punct_symbols(text))
    return " ".join(text.split())


# --------------------------------------------------------------------------
# WER
# --------------------------------------------------------------------------

def _edit_distance(ref: list[str], hyp: list[str]) -> int:
    # two-row Levenshtein over word lists
    prev = list(range(len(hyp) + 1))
    for i in range(1, len(ref) + 1):
        cur = [i] + [0] * len(hyp)
        for j in range(1, len(hyp) + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[len(hyp)]


def wer(refs: list[str], hyps: list[str]) -> float:
    """Corpus word error rate: total edits / total reference words.

    Both sides are normalized first. Can exceed 1.0 with many insertions.
    """
    if len(refs) != len(hyps):
        raise InvalidInput(f"{len(refs)} references vs {len(hyps)} hypotheses")
    if not refs:
        raise InvalidInput("empty corpus")
    edits = 0
    n_ref = 0
    for ref, hyp in zip(refs, hyps):
        ref_words = normalize(ref).split()
        hyp_words = normalize(hyp).split()
        edits += _edit_distance(ref_words, hyp_words)
        n_ref += len(ref_words)
    if n_ref == 0:
        raise InvalidInput("references normalize to zero words")
    return edits / n_ref


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BleuSignature:
    tokenizer: str = "13a"  # "13a" or "char"
    smoothing: str = "exp"
    max_order: int = MAX_ORDER
    case: str = "mixed"

    def __post_init__(self):
        if self.tokenizer not in ("13a", "char"):
            raise InvalidInput(f"unknown tokenizer {self.tokenizer!r}")
        if self.smoothing != "exp" or self.max_order != MAX_ORDER or self.case != "mixed":
            raise InvalidInput("only case:mixed|eff:no|smooth:exp|order 4 is supported")

    @staticmethod
    def for_target(code: str) -> "BleuSignature":
        tok = "char" if code in CHAR_TOKENIZED_LANGS else "13a"
        return BleuSignature(tokenizer=tok)


class _Punct:
    """Unicode punctuation/symbol char classes, built once."""

    def _chars(prefix):
        return "".join(
            chr(x) for x in range(sys.maxunicode) if unicodedata.category(chr(x)).startswith(prefix)
        )

    punctuation = _chars("P")


def tokenize_13a(line: str) -> list[str]:
    """mteval-v13a tokenization: split out punctuation, keep hyphenated words,
    keep digit-internal periods/commas together, collapse unicode spaces."""
    norm = line
    norm = norm.replace("<skipped>", "")
    norm = norm.replace("-\n", "")
    norm = norm.replace("\n", " ")
    norm = norm.replace("&quot;", '"')
    norm = norm.replace("&amp;", "&")
    norm = norm.replace("&lt;", "<")
    norm = norm.replace("&gt;", ">")

    norm = f" {norm} "
    norm = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", norm)
    norm = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", norm)
    norm = re.sub(r"([\.,])([^0-9])", r" \1 \2", norm)
    norm = re.sub(r"([0-9])(-)", r"\1 \2 ", norm)
    return norm.split()


def tokenize_char(line: str) -> list[str]:
    """One token per character; whitespace characters produce no tokens."""
    return [ch for ch in line if not ch.isspace()]


_TOKENIZERS = {"13a": tokenize_13a, "char": tokenize_char}


def _ngram_counts(tokens: list[str], max_order: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i: i + n])] += 1
    return counts


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else _LOG_FLOOR


def bleu(refs: list[str], hyps: list[str], sig: BleuSignature | None = None) -> float:
    """Corpus BLEU in [0, 100]."""
    sig = sig or BleuSignature()
    if len(refs) != len(hyps):
        raise InvalidInput(f"{len(refs)} references vs {len(hyps)} hypotheses")
    if not refs:
        raise InvalidInput("empty corpus")
    tok = _TOKENIZERS[sig.tokenizer]

    correct = [0] * MAX_ORDER
    total = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for ref, hyp in zip(refs, hyps):
        ref_toks = tok(ref.rstrip())
        hyp_toks = tok(hyp.rstrip())
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        ref_counts = _ngram_counts(ref_toks, MAX_ORDER)
        hyp_counts = _ngram_counts(hyp_toks, MAX_ORDER)
        for ngram, cnt in hyp_counts.items():
            n = len(ngram)
            total[n - 1] += cnt
            correct[n - 1] += min(cnt, ref_counts.get(ngram, 0))

    precisions = [0.0] * MAX_ORDER
    smooth = 1.0
    for n in range(MAX_ORDER):
        if total[n] == 0:
            break
        if correct[n] == 0:
            smooth *= 2.0
            precisions[n] = 100.0 / (smooth * total[n])
        else:
            precisions[n] = 100.0 * correct[n] / total[n]

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    return bp * math.exp(sum(_safe_log(p) for p in precisions) / MAX_ORDER)


# --------------------------------------------------------------------------
# direction-matrix aggregation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionScore:
    src: str
    tgt: str
    bleu: float
    wer: float | None = None


@dataclass
class EvalReport:
    """Per-direction scores with per-source and global averages."""

    directions: list[DirectionScore]
    row_averages: dict[str, float] = field(default_factory=dict)
    global_average: float = 0.0

    def to_dict(self) -> dict:
        return {
            "directions": [
                {"src": d.src, "tgt": d.tgt, "bleu": d.bleu, "wer": d.wer}
                for d in self.directions
            ],
            "row_averages": dict(sorted(self.row_averages.items())),
            "global_average": self.global_average,
        }

    def render_table(self) -> str:
        lines = [f"{'src':<6}{'tgt':<6}{'BLEU':>8}  {'WER':>8}"]
        for d in self.directions:
            wers = f"{d.wer:8.4f}" if d.wer is not None else f"{'-':>8}"
            lines.append(f"{d.src:<6}{d.tgt:<6}{d.bleu:8.2f}  {wers}")
        lines.append("-" * 30)
        for src, avg in sorted(self.row_averages.items()):
            lines.append(f"{src:<12}{avg:8.2f}  (row avg)")
        lines.append(f"{'all':<12}{self.global_average:8.2f}  (global avg)")
        return "\n".join(lines)


def aggregate(scores: list[DirectionScore]) -> EvalReport:
    """Row (per-source) averages plus the arithmetic mean over all directions."""
    if not scores:
        raise InvalidInput("no direction scores")
    seen = set()
    for s in scores:
        key = (s.src, s.tgt)
        if key in seen:
            raise InvalidInput(f"duplicate direction {s.src}->{s.tgt}")
        seen.add(key)
    rows: dict[str, list[float]] = {}
    for s in scores:
        rows.setdefault(s.src, []).append(s.bleu)
    row_averages = {src: sum(v) / len(v) for src, v in rows.items()}
    global_average = sum(s.bleu for s in scores) / len(scores)
    return EvalReport(list(scores), row_averages, global_average)
