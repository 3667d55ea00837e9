"""Language code registry and language control tokens.

The default registry covers the 21 Europarl languages.  Language tokens
("<lang:xx>") are prepended to the encoder input to select the decoder
output language in a one-to-many model.
"""

from __future__ import annotations

import re

EUROPARL_LANGUAGES = frozenset(
    "bg cs da de el en es et fi fr hu it lt lv nl pl pt ro sk sl sv".split()
)

DEFAULT_LANGUAGES = EUROPARL_LANGUAGES

_LANG_TOKEN_RE = re.compile(r"^<lang:([a-z]{2,3})>$")


class UnknownLanguage(ValueError):
    """A language code outside the active registry."""


def lang_token(code: str) -> str:
    """Return the control token for a language code, e.g. "de" -> "<lang:de>"."""
    return f"<lang:{code}>"


def parse_lang_token(token: str) -> str | None:
    """Return the language code if ``token`` is a language token, else None."""
    m = _LANG_TOKEN_RE.match(token)
    return m.group(1) if m else None


def is_lang_token(token: str) -> bool:
    return _LANG_TOKEN_RE.match(token) is not None


def check_language(code: str, languages=DEFAULT_LANGUAGES) -> str:
    if code not in languages:
        raise UnknownLanguage(f"unknown language code {code!r}; registered: {sorted(languages)}")
    return code
