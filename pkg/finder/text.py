"""Tokenization and string normalization shared by every stage.

The engine tokenizer splits on anything that isn't a Unicode letter or
digit and casefolds what remains. There is no stemming and no stopword
removal. The same tokens feed chunking, tagging, the sparse index, the
hashing embedder, filter inference and fuzzy title matching.
"""

from __future__ import annotations

import re
from typing import Iterator, NamedTuple


# Letters and digits only. ``\w`` would also match "_", which we treat as a
# separator.
_TOKEN_RE = re.compile(r'[^\W_]+')


class TokenSpan(NamedTuple):
    """A token and the character range it came from."""

    #: The casefolded token.
    token: str

    #: Offset of the first character in the source string.
    start: int

    #: Offset one past the last character in the source string.
    end: int


def iter_token_spans(text: str) -> Iterator[TokenSpan]:
    """Yield each token in a string along with its character offsets.

    Args:
        text (str):
            The text to tokenize.

    Yields:
        TokenSpan:
        Each token, in order.
    """
    for match in _TOKEN_RE.finditer(text):
        yield TokenSpan(match.group(0).casefold(), match.start(), match.end())


def tokenize(text: str) -> list[str]:
    """Return the tokens of a string.

    Args:
        text (str):
            The text to tokenize.

    Returns:
        list of str:
        The casefolded tokens, in order.
    """
    return [
        match.group(0).casefold()
        for match in _TOKEN_RE.finditer(text)
    ]


def normalize_phrase(text: str) -> str:
    """Return the canonical token-joined form of a phrase.

    Two phrases that tokenize identically normalize to the same string.

    Args:
        text (str):
            The phrase.

    Returns:
        str:
        The tokens joined by single spaces.
    """
    return ' '.join(tokenize(text))


def normalize_identifier(text: str) -> str:
    """Normalize a string for exact identifier comparison.

    This casefolds, trims, and collapses internal whitespace, but keeps
    punctuation, so ``"D-0417-B"`` still differs from ``"D 0417 B"``.

    Args:
        text (str):
            The string to normalize.

    Returns:
        str:
        The normalized string.
    """
    return ' '.join(text.casefold().split())
