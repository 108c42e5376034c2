"""Language tags: atomic `<|iso639-3|>` markers and their registry.

The built-in registry (15 languages) ships as a text table under
``srtkit/data/language_tags.tsv`` and can be extended at runtime via
``TagRegistry.register``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .errors import UnknownTag

_CODE_RE = re.compile(r"^[a-z]{3}$")


@dataclass(frozen=True)
class LanguageTag:
    """One language marker. ``surface`` is the single-token form."""

    code: str

    def __post_init__(self):
        if not _CODE_RE.match(self.code):
            raise UnknownTag(f"not an ISO 639-3 style code: {self.code!r}")

    @property
    def surface(self) -> str:
        return f"<|{self.code}|>"

    @staticmethod
    def from_surface(surface: str) -> "LanguageTag":
        m = re.fullmatch(r"<\|([a-z]{3})\|>", surface)
        if m is None:
            raise UnknownTag(f"not a tag surface form: {surface!r}")
        return LanguageTag(m.group(1))


class TagRegistry:
    """Ordered set of known language tags."""

    def __init__(self, codes: list[str] | None = None):
        self._codes: list[str] = []
        for code in codes if codes is not None else _builtin_codes():
            self.register(code)

    def register(self, code: str) -> LanguageTag:
        tag = LanguageTag(code)
        if code not in self._codes:
            self._codes.append(code)
        return tag

    def get(self, code: str) -> LanguageTag:
        if code not in self._codes:
            raise UnknownTag(
                f"unknown language tag {code!r}; known: {', '.join(self._codes)}"
            )
        return LanguageTag(code)

    def __contains__(self, code: str) -> bool:
        return code in self._codes

    @property
    def codes(self) -> list[str]:
        return list(self._codes)

    @property
    def tags(self) -> list[LanguageTag]:
        return [LanguageTag(c) for c in self._codes]

    def __len__(self) -> int:
        return len(self._codes)


def _builtin_codes() -> list[str]:
    text = resources.files("srtkit.data").joinpath("language_tags.tsv").read_text("utf-8")
    codes = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        code, surface = line.split("\t")
        tag = LanguageTag(code)
        if tag.surface != surface:
            raise UnknownTag(f"registry row {code!r} has surface {surface!r}")
        codes.append(code)
    return codes


def default_registry() -> TagRegistry:
    return TagRegistry()
