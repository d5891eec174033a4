"""Query understanding.

A raw query such as ``IBD dosage slides product:Xolair`` is parsed into a
:py:class:`StructuredQuery`:

* Inline ``field:value`` and ``field:"quoted value"`` expressions for
  metadata schema fields become filters.
* Phrases from the filter vocabularies (countries, languages, products and
  so on) are recognized, turned into inferred filters, and removed from the
  query text.
* Glossary abbreviations are expanded into reformulations of the query.

Filters supplied by the caller always win over anything found in the query
text.

Parsing is done by an :py:class:`IntentParser`. The built-in ``rules``
parser is deterministic. Other parsers, such as ones backed by a language
model, can be registered under the ``finder.intent_parsers`` entry point
group, and must produce the same structure.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from finder.dense import Embedder
from finder.errors import ConfigurationError, EmptyQueryError, ParseError
from finder.models import METADATA_FIELDS
from finder.registry import ComponentRegistry
from finder.text import iter_token_spans, normalize_phrase


logger = logging.getLogger(__name__)


#: Fields whose values are guessed from the query, in priority order.
FILTER_FIELD_ORDER: Sequence[str] = (
    'country',
    'language',
    'product',
    'scientific_area',
    'content_type',
)

#: The longest vocabulary phrase, in tokens, that inference looks for.
MAX_VOCABULARY_NGRAM = 4

_INLINE_FILTER_RE = re.compile(
    r'(?<!\S)(?P<key>[A-Za-z_]+):'
    r'(?:"(?P<quoted>[^"]*)"|(?P<value>[^\s"]+))'
    r'(?!\S)')


@dataclass(frozen=True)
class StructuredQuery:
    """A parsed query."""

    #: The query as given.
    raw: str

    #: The free text left after removing filter expressions.
    main_query: str

    #: The effective filters: user filters over inferred ones.
    filters: Mapping[str, str]

    #: The query text and its glossary-expanded variants. The first entry
    #: is always :py:attr:`main_query`.
    reformulations: Sequence[str]

    #: Filters supplied by the caller.
    user_filters: Mapping[str, str] = field(default_factory=dict)

    #: Filters found in the query text, inline or from vocabularies.
    inferred_filters: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Return the query as a serializable dictionary.

        Returns:
            dict:
            The parsed query.
        """
        return {
            'main_query': self.main_query,
            'filters': dict(self.filters),
            'reformulations': list(self.reformulations),
            'user_filters': dict(self.user_filters),
            'inferred_filters': dict(self.inferred_filters),
        }


class Glossary:
    """Abbreviations and their expansions, with pre-computed embeddings."""

    ######################
    # Instance variables #
    ######################

    #: Casefolded abbreviation to its expansions.
    entries: Mapping[str, Sequence[str]]

    #: Casefolded abbreviation to a matrix of expansion embeddings.
    vectors: Mapping[str, np.ndarray]

    def __init__(
        self,
        entries: Mapping[str, Iterable[str]],
        embedder: Embedder,
    ) -> None:
        """Initialize the glossary.

        Args:
            entries (dict):
                A mapping of abbreviation to its expansions.

            embedder (finder.dense.Embedder):
                The embedder used to pre-compute expansion embeddings.

        Raises:
            finder.errors.ConfigurationError:
                An abbreviation was not a single token, or an expansion was
                empty.
        """
        normalized: dict[str, tuple[str, ...]] = {}

        for abbreviation, expansions in entries.items():
            key = normalize_phrase(abbreviation)
            expansions = tuple(expansions)

            if not key or ' ' in key:
                raise ConfigurationError(
                    reason=f'glossary abbreviation {abbreviation!r} must be '
                           f'a single token')

            if not expansions or not all(normalize_phrase(expansion)
                                         for expansion in expansions):
                raise ConfigurationError(
                    reason=f'glossary abbreviation {abbreviation!r} has an '
                           f'empty expansion')

            normalized[key] = normalized.get(key, ()) + expansions

        self.entries = dict(sorted(normalized.items()))
        self.embedder_dim = embedder.dim
        self.vectors = {
            key: embedder.embed_many(expansions)
            for key, expansions in self.entries.items()
        }

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict[str, list[str]]:
        return {
            key: list(expansions)
            for key, expansions in self.entries.items()
        }


class VocabularyMatch(NamedTuple):
    """The outcome of filter inference."""

    #: The inferred filters.
    filters: dict[str, str]

    #: The query text with matched phrases removed.
    main_query: str


def field_priority(field_names: Iterable[str]) -> list[str]:
    """Order filter fields for inference.

    The fields in :py:data:`FILTER_FIELD_ORDER` come first, then ``region``,
    then the rest alphabetically.

    Args:
        field_names (iterable of str):
            The fields to order.

    Returns:
        list of str:
        The ordered fields.
    """
    head = [*FILTER_FIELD_ORDER, 'region']
    names = set(field_names)

    return ([name for name in head if name in names] +
            sorted(names.difference(head)))


def normalize_vocabularies(
    vocabularies: Mapping[str, Iterable[str]],
) -> dict[str, dict[str, str]]:
    """Normalize filter vocabularies for matching.

    Args:
        vocabularies (dict):
            A mapping of field to its known values.

    Returns:
        dict:
        A mapping of field to a mapping of normalized phrase to the
        casefolded value, with fields in inference priority order.
    """
    result: dict[str, dict[str, str]] = {}

    for name in field_priority(vocabularies):
        phrases: dict[str, str] = {}

        for value in sorted(vocabularies[name]):
            phrase = normalize_phrase(value)

            if phrase and len(phrase.split(' ')) <= MAX_VOCABULARY_NGRAM:
                phrases.setdefault(phrase, ' '.join(value.casefold().split()))

        result[name] = phrases

    return result


def merge_filters(
    user: Mapping[str, str],
    inferred: Mapping[str, str],
) -> dict[str, str]:
    """Combine filters, with user filters taking precedence.

    Args:
        user (dict):
            Filters supplied by the user.

        inferred (dict):
            Filters found by the system.

    Returns:
        dict:
        The union of both, using the user's value for any shared field.
    """
    return {**inferred, **user}


def infer_filters(
    main_query: str,
    vocabularies: Mapping[str, Iterable[str]],
) -> VocabularyMatch:
    """Guess filters from vocabulary phrases in the query.

    The query is scanned left to right. At each position, the longest
    phrase (up to :py:data:`MAX_VOCABULARY_NGRAM` tokens) found in any
    vocabulary is taken, checking fields in priority order. Each field
    gets at most one value, and matched tokens are removed from the query.

    If every token would be removed, the filters are still returned, but
    the query text is left as it was.

    Args:
        main_query (str):
            The query text.

        vocabularies (dict):
            A mapping of field to its known values.

    Returns:
        VocabularyMatch:
        The inferred filters and the remaining query text.
    """
    normalized = normalize_vocabularies(vocabularies)
    spans = list(iter_token_spans(main_query))
    tokens = [span.token for span in spans]
    inferred: dict[str, str] = {}
    consumed: list[tuple[int, int]] = []
    i = 0

    while i < len(tokens):
        match: Optional[tuple[str, str, int]] = None

        for length in range(min(MAX_VOCABULARY_NGRAM, len(tokens) - i),
                            0, -1):
            phrase = ' '.join(tokens[i:i + length])

            for name, phrases in normalized.items():
                if name not in inferred and phrase in phrases:
                    match = (name, phrases[phrase], length)
                    break

            if match is not None:
                break

        if match is None:
            i += 1
            continue

        name, value, length = match
        inferred[name] = value
        consumed.append((spans[i].start, spans[i + length - 1].end))
        i += length

    consumed_tokens = sum(
        1
        for span in spans
        for start, end in consumed
        if start <= span.start and span.end <= end
    )

    if not consumed or consumed_tokens == len(tokens):
        return VocabularyMatch(filters=inferred, main_query=main_query)

    pieces: list[str] = []
    pos = 0

    for start, end in consumed:
        pieces.append(main_query[pos:start])
        pos = end

    pieces.append(main_query[pos:])

    return VocabularyMatch(filters=inferred,
                           main_query=' '.join(''.join(pieces).split()))


def expand_glossary(
    main_query: str,
    glossary: Optional[Glossary],
    embedder: Optional[Embedder],
    threshold: float = 0.15,
) -> list[str]:
    """Return the query and its glossary-expanded reformulations.

    Each occurrence of a glossary abbreviation yields one reformulation,
    with that occurrence replaced by an expansion. When an abbreviation has
    several expansions, the one whose embedding is most similar to the rest
    of the query is used, provided the cosine reaches ``threshold``.
    Otherwise, that occurrence is left alone.

    Args:
        main_query (str):
            The query text.

        glossary (Glossary):
            The glossary. If ``None``, no expansion happens.

        embedder (finder.dense.Embedder):
            The embedder for the query context. It must match the one the
            glossary was built with.

        threshold (float, optional):
            The minimum cosine for choosing between several expansions.

    Returns:
        list of str:
        The reformulations, starting with ``main_query`` itself, without
        duplicates.
    """
    reformulations = [main_query]

    if not glossary or not main_query:
        return reformulations

    for span in iter_token_spans(main_query):
        expansions = glossary.entries.get(span.token)

        if not expansions:
            continue

        if len(expansions) == 1:
            choice = expansions[0]
        else:
            if embedder is None:
                continue

            context = ' '.join(
                (main_query[:span.start] + ' ' +
                 main_query[span.end:]).split())
            context_vec = embedder.embed(context).astype(np.float64)
            sims = glossary.vectors[span.token].astype(np.float64) @ \
                context_vec
            best = int(np.argmax(sims))

            if sims[best] < threshold:
                continue

            choice = expansions[best]

        reformulation = (main_query[:span.start] + choice +
                         main_query[span.end:])

        if reformulation not in reformulations:
            reformulations.append(reformulation)

    return reformulations


def extract_inline_filters(raw: str) -> VocabularyMatch:
    """Pull ``field:value`` expressions for schema fields out of a query.

    Expressions naming anything other than a metadata schema field are left
    in the text.

    Args:
        raw (str):
            The query.

    Returns:
        VocabularyMatch:
        The extracted filters and the remaining text. A field given twice
        keeps its last value.
    """
    filters: dict[str, str] = {}

    def _replace(match: re.Match[str]) -> str:
        key = match.group('key').lower()

        if key not in METADATA_FIELDS:
            return match.group(0)

        value = match.group('quoted')

        if value is None:
            value = match.group('value')

        value = ' '.join(value.split())

        if not value:
            return match.group(0)

        filters[key] = value

        return ' '

    remaining = _INLINE_FILTER_RE.sub(_replace, raw)

    return VocabularyMatch(filters=filters,
                           main_query=' '.join(remaining.split()))


@dataclass(frozen=True)
class QueryContext:
    """The resources a parser may use."""

    glossary: Optional[Glossary] = None
    embedder: Optional[Embedder] = None

    #: A mapping of filter field to its known values.
    vocabularies: Mapping[str, Iterable[str]] = field(default_factory=dict)

    #: The minimum cosine for choosing between glossary expansions.
    glossary_threshold: float = 0.15


class IntentParser:
    """Base class for query parsers."""

    #: The registered name of the parser.
    name: str

    def parse(
        self,
        raw: str,
        user_filters: Mapping[str, str],
        context: QueryContext,
    ) -> StructuredQuery:
        """Parse a query.

        Args:
            raw (str):
                The query text.

            user_filters (dict):
                Filters supplied by the user.

            context (QueryContext):
                The glossary, vocabularies and embedder to use.

        Returns:
            StructuredQuery:
            The parsed query.

        Raises:
            finder.errors.EmptyQueryError:
                The query was blank.
        """
        raise NotImplementedError


class RuleBasedIntentParser(IntentParser):
    """The deterministic built-in parser."""

    name = 'rules'

    def parse(
        self,
        raw: str,
        user_filters: Mapping[str, str],
        context: QueryContext,
    ) -> StructuredQuery:
        if not raw.strip():
            raise EmptyQueryError()

        inline = extract_inline_filters(raw)
        main_query = inline.main_query
        vocabulary_filters: dict[str, str] = {}

        if main_query and context.vocabularies:
            vocabulary_filters, main_query = infer_filters(
                main_query, context.vocabularies)

        # Explicit inline filters beat vocabulary guesses.
        inferred = merge_filters(inline.filters, vocabulary_filters)
        user_filters = dict(user_filters)

        return StructuredQuery(
            raw=raw,
            main_query=main_query,
            filters=merge_filters(user_filters, inferred),
            reformulations=expand_glossary(main_query,
                                           context.glossary,
                                           context.embedder,
                                           context.glossary_threshold),
            user_filters=user_filters,
            inferred_filters=inferred)


class IntentParserRegistry(ComponentRegistry[IntentParser]):
    """The registry of query parsers."""

    component_kind = 'intent parser'
    entry_point_group = 'finder.intent_parsers'

    def get_defaults(self) -> Iterable[IntentParser]:
        return [RuleBasedIntentParser()]


intent_parsers = IntentParserRegistry()


def parse_query(
    raw: str,
    user_filters: Optional[Mapping[str, str]] = None,
    context: Optional[QueryContext] = None,
    *,
    parser: str = 'rules',
) -> StructuredQuery:
    """Parse a raw query into its structured form.

    Args:
        raw (str):
            The query text.

        user_filters (dict, optional):
            Filters supplied by the user. These take precedence over any
            found in the query.

        context (QueryContext, optional):
            The glossary, vocabularies and embedder to use.

        parser (str, optional):
            The name of the registered intent parser.

    Returns:
        StructuredQuery:
        The parsed query.

    Raises:
        finder.errors.EmptyQueryError:
            The query was blank.
    """
    return intent_parsers.get(parser).parse(raw,
                                            user_filters or {},
                                            context or QueryContext())


def _load_json_lists(
    path: Path,
    what: str,
) -> dict[str, list[str]]:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except ValueError as e:
        raise ParseError(source=str(path), line_number=1, reason=str(e))

    if (not isinstance(data, dict) or
        not all(isinstance(values, list) and
                all(isinstance(value, str) for value in values)
                for values in data.values())):
        raise ParseError(source=str(path),
                         line_number=1,
                         reason=f'a {what} must map names to lists of '
                                f'strings')

    return data


def load_glossary(path: Path) -> dict[str, list[str]]:
    """Load a glossary file.

    The file holds a JSON object mapping each abbreviation to a list of
    expansions.

    Args:
        path (pathlib.Path):
            The file to load.

    Returns:
        dict:
        The raw glossary entries.

    Raises:
        finder.errors.ParseError:
            The file was not a valid glossary.
    """
    return _load_json_lists(path, 'glossary')


def load_vocabularies(path: Path) -> dict[str, list[str]]:
    """Load a filter vocabulary file.

    The file holds a JSON object mapping each filter field to a list of
    values.

    Args:
        path (pathlib.Path):
            The file to load.

    Returns:
        dict:
        The vocabularies, with values casefolded.

    Raises:
        finder.errors.ParseError:
            The file was not a valid vocabulary file.
    """
    return {
        name: sorted({' '.join(value.casefold().split())
                      for value in values
                      if value.strip()})
        for name, values in _load_json_lists(path, 'vocabulary').items()
    }
