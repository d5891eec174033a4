"""Conversion of corpus records into chunked, tagged documents.

A corpus is a UTF-8 JSON-lines file with one record per line:

.. code-block:: json

    {"metadata": {"dataset_document_number": "D-001", ...},
     "modality": "text",
     "body": "...",
     "tags": [{"field": "product", "value": "...",
               "provenance": "manual", "confidence": 1.0}]}

Each record is validated, chunked into fixed-size token windows, tagged
from the gazetteer, and then passed through the configured chain of
:py:class:`Enricher` components. Extraction of binary formats, speech
recognition, captioning and translation happen upstream; their output
arrives here as the record body.
"""

from __future__ import annotations

import json
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from finder.config import IngestConfig
from finder.errors import (DataError,
                           DuplicateDocumentError,
                           EmptyBodyError,
                           EnricherError,
                           ParseError)
from finder.models import (Chunk,
                           Document,
                           Modality,
                           Provenance,
                           Tag,
                           dumps_canonical,
                           validate_metadata)
from finder.registry import ComponentRegistry
from finder.text import iter_token_spans, normalize_phrase, tokenize


logger = logging.getLogger(__name__)


#: Occurrences at which an extractive tag reaches full confidence.
TAG_SATURATION_COUNT = 3

#: The language code returned when detection is inconclusive.
UNDETERMINED_LANGUAGE = 'und'


#
# Language detection
#

class LanguageDetector:
    """Base class for language detectors."""

    #: The registered name of the detector.
    name: str

    def detect(
        self,
        text: str,
    ) -> str:
        """Return the language code of a text.

        Args:
            text (str):
                The text to inspect.

        Returns:
            str:
            A language code, or ``und`` if undetermined.
        """
        raise NotImplementedError


class StopwordLanguageDetector(LanguageDetector):
    """Detects language by voting over small stopword profiles.

    Each token votes for every profile containing it. The profile with the
    most votes wins if it covers at least :py:attr:`min_share` of the
    tokens. Ties go to the profile listed first.
    """

    name = 'stopwords'

    #: The share of tokens the winning profile must cover.
    min_share = 0.2

    profiles: Mapping[str, frozenset[str]] = {
        'en': frozenset((
            'the', 'of', 'and', 'to', 'in', 'that', 'it', 'is', 'was',
            'for', 'on', 'are', 'with', 'as', 'be', 'this', 'by', 'at',
            'from', 'or', 'have', 'an', 'which', 'not', 'were', 'has',
        )),
        'fr': frozenset((
            'le', 'la', 'les', 'de', 'des', 'du', 'et', 'un', 'une', 'est',
            'dans', 'que', 'qui', 'pour', 'pas', 'sur', 'au', 'aux', 'avec',
            'ce', 'cette', 'sont', 'par', 'ou', 'il', 'elle', 'nous',
        )),
        'de': frozenset((
            'der', 'die', 'das', 'und', 'ist', 'nicht', 'ein', 'eine',
            'zu', 'den', 'dem', 'mit', 'von', 'sich', 'auf', 'für', 'im',
            'auch', 'als', 'werden', 'wird', 'oder', 'bei', 'sind', 'es',
        )),
        'es': frozenset((
            'el', 'la', 'los', 'las', 'de', 'del', 'y', 'en', 'que', 'un',
            'una', 'es', 'por', 'con', 'para', 'se', 'no', 'su', 'al',
            'lo', 'como', 'más', 'pero', 'sus', 'son', 'está',
        )),
    }

    def detect(
        self,
        text: str,
    ) -> str:
        """Return the language code of a text.

        Args:
            text (str):
                The text to inspect.

        Returns:
            str:
            A language code, or ``und`` if undetermined.
        """
        tokens = tokenize(text)

        if not tokens:
            return UNDETERMINED_LANGUAGE

        best_code = UNDETERMINED_LANGUAGE
        best_votes = 0

        for code, stopwords in self.profiles.items():
            votes = sum(1 for token in tokens if token in stopwords)

            if votes > best_votes:
                best_code = code
                best_votes = votes

        if best_votes == 0 or best_votes < self.min_share * len(tokens):
            return UNDETERMINED_LANGUAGE

        return best_code


class LanguageDetectorRegistry(ComponentRegistry[LanguageDetector]):
    """The registry of language detectors."""

    component_kind = 'language detector'
    entry_point_group = 'finder.language_detectors'

    def get_defaults(self) -> Iterable[LanguageDetector]:
        return [StopwordLanguageDetector()]


language_detectors = LanguageDetectorRegistry()


def detect_language(
    body: str,
    detector: str = 'stopwords',
) -> str:
    """Return the language code of a document body.

    Args:
        body (str):
            The text to inspect.

        detector (str, optional):
            The name of the registered detector to use.

    Returns:
        str:
        A language code, or ``und`` if undetermined.
    """
    return language_detectors.get(detector).detect(body)


#
# Enrichment
#

class Enricher:
    """Base class for document enrichers.

    An enricher receives a document and returns a new one, possibly with
    added tags, translated text or captions. It must not change the
    document's ``doc_id`` or its external document number.
    """

    #: The registered name of the enricher.
    name: str

    def apply(
        self,
        document: Document,
    ) -> Document:
        """Return an enriched copy of a document.

        Args:
            document (finder.models.Document):
                The document to enrich.

        Returns:
            finder.models.Document:
            The enriched document. This may be the same object if nothing
            changed.
        """
        raise NotImplementedError


class LanguageEnricher(Enricher):
    """Fills in the metadata language when the record didn't supply one.

    An undetermined result leaves the language unset.
    """

    name = 'detect-language'

    def __init__(
        self,
        detector: str = 'stopwords',
    ) -> None:
        """Initialize the enricher.

        Args:
            detector (str, optional):
                The name of the registered language detector.
        """
        self.detector = detector

    def apply(
        self,
        document: Document,
    ) -> Document:
        if document.metadata.language is not None:
            return document

        language = detect_language(document.body, self.detector)

        if language == UNDETERMINED_LANGUAGE:
            return document

        return replace(document,
                       metadata=replace(document.metadata,
                                        language=language))


class NoOpTranslator(Enricher):
    """The default translator, which leaves documents untouched.

    Deployments with a translation service register their own enricher
    under this name.
    """

    name = 'translate'

    def apply(
        self,
        document: Document,
    ) -> Document:
        return document


class NoOpAbstractiveTagger(Enricher):
    """A stand-in for model-generated tags. It adds nothing."""

    name = 'abstractive-tags'

    def apply(
        self,
        document: Document,
    ) -> Document:
        return document


class EnricherRegistry(ComponentRegistry[Enricher]):
    """The registry of document enrichers."""

    component_kind = 'enricher'
    entry_point_group = 'finder.enrichers'

    def get_defaults(self) -> Iterable[Enricher]:
        return [
            LanguageEnricher(),
            NoOpTranslator(),
            NoOpAbstractiveTagger(),
        ]


enrichers = EnricherRegistry()


def apply_enrichers(
    document: Document,
    names: Sequence[str],
) -> Document:
    """Run a chain of enrichers over a document.

    Args:
        document (finder.models.Document):
            The document to enrich.

        names (list of str):
            The registered enricher names, in the order to run them.

    Returns:
        finder.models.Document:
        The enriched document.

    Raises:
        finder.errors.ComponentNotFoundError:
            An enricher name was not registered.

        finder.errors.EnricherError:
            An enricher changed the document's identity.
    """
    for name in names:
        enricher = enrichers.get(name)
        enriched = enricher.apply(document)

        if enriched.doc_id != document.doc_id:
            raise EnricherError(enricher_name=name,
                                reason='doc_id was changed')

        if enriched.document_number != document.document_number:
            raise EnricherError(enricher_name=name,
                                reason='dataset_document_number was changed')

        document = enriched

    return document


#
# Chunking and tagging
#

def chunk_text(
    body: str,
    max_chunk_tokens: int,
    overlap: int,
    *,
    doc_id: int = 0,
) -> list[Chunk]:
    """Split a body into overlapping fixed-size token windows.

    Windows start every ``max_chunk_tokens - overlap`` tokens; the last one
    may be short. Chunk offsets tile the body: the first chunk starts at 0,
    the last one ends at ``len(body)``, and every other chunk ends where the
    token after its window begins. Dropping the first ``prev.end - start``
    characters of each chunk after the first and concatenating therefore
    reproduces the body.

    Args:
        body (str):
            The text to split.

        max_chunk_tokens (int):
            The number of tokens per window.

        overlap (int):
            The number of tokens shared by consecutive windows. This must
            be less than ``max_chunk_tokens``.

        doc_id (int, optional):
            The document ID to stamp on each chunk.

    Returns:
        list of finder.models.Chunk:
        The chunks, in order.

    Raises:
        finder.errors.EmptyBodyError:
            The body has no tokens.

        ValueError:
            The window parameters were invalid.
    """
    if max_chunk_tokens < 1 or not 0 <= overlap < max_chunk_tokens:
        raise ValueError(
            f'Invalid chunk window: max_chunk_tokens={max_chunk_tokens}, '
            f'overlap={overlap}')

    starts = [span.start for span in iter_token_spans(body)]
    n_tokens = len(starts)

    if not body.strip() or n_tokens == 0:
        raise EmptyBodyError()

    step = max_chunk_tokens - overlap
    chunks: list[Chunk] = []
    window_start = 0

    while True:
        window_end = min(window_start + max_chunk_tokens, n_tokens)
        is_last = (window_end == n_tokens)

        char_start = 0 if window_start == 0 else starts[window_start]
        char_end = len(body) if is_last else starts[window_end]

        chunks.append(Chunk(doc_id=doc_id,
                            ordinal=len(chunks),
                            text=body[char_start:char_end],
                            start=char_start,
                            end=char_end,
                            token_count=window_end - window_start))

        if is_last:
            return chunks

        window_start += step


def extract_tags(
    body: str,
    gazetteer: Mapping[str, Iterable[str]],
) -> list[Tag]:
    """Tag a body with every gazetteer phrase it contains.

    Matching is case-insensitive over whole token sequences, so ``bowel``
    does not match ``bowels``. Confidence grows with the number of
    occurrences and saturates at :py:data:`TAG_SATURATION_COUNT`.

    Args:
        body (str):
            The text to tag.

        gazetteer (dict):
            A mapping of tag field to vocabulary phrases.

    Returns:
        list of finder.models.Tag:
        One extractive tag per matching ``(field, phrase)``, sorted by
        field and value.
    """
    tokens = tokenize(body)
    positions: dict[str, list[int]] = {}

    for i, token in enumerate(tokens):
        positions.setdefault(token, []).append(i)

    tags: list[Tag] = []

    for field_name, phrases in gazetteer.items():
        for phrase in {normalize_phrase(phrase) for phrase in phrases}:
            phrase_tokens = phrase.split(' ')

            if not phrase:
                continue

            n = len(phrase_tokens)
            count = sum(
                1
                for i in positions.get(phrase_tokens[0], [])
                if tokens[i:i + n] == phrase_tokens
            )

            if count:
                tags.append(Tag(
                    field=field_name,
                    value=phrase,
                    provenance=Provenance.EXTRACTIVE,
                    confidence=min(1.0, count / TAG_SATURATION_COUNT)))

    tags.sort(key=lambda tag: (tag.field, tag.value))

    return tags


#
# Records
#

def ingest_record(
    raw_line: str,
    config: IngestConfig,
    next_id: int,
    *,
    source: str = '<record>',
    line_number: int = 1,
) -> Document:
    """Convert one corpus line into a document.

    Args:
        raw_line (str):
            The JSON record.

        config (finder.config.IngestConfig):
            The ingestion settings.

        next_id (int):
            The ``doc_id`` to assign.

        source (str, optional):
            A description of the input, for error messages.

        line_number (int, optional):
            The line number of the record, for error messages.

    Returns:
        finder.models.Document:
        The chunked, tagged and enriched document.

    Raises:
        finder.errors.EmptyBodyError:
            The body had no text.

        finder.errors.InvalidLanguageError:
            The metadata language was invalid.

        finder.errors.MissingFieldError:
            A required metadata field was missing.

        finder.errors.ParseError:
            The line was not a valid record.
    """
    def _fail(reason: str) -> ParseError:
        return ParseError(source=source,
                          line_number=line_number,
                          reason=reason)

    try:
        record = json.loads(raw_line)
    except ValueError as e:
        raise _fail(f'invalid JSON: {e}')

    if not isinstance(record, dict):
        raise _fail('record must be a JSON object')

    raw_metadata = record.get('metadata')
    body = record.get('body')

    if not isinstance(raw_metadata, dict):
        raise _fail('"metadata" must be an object')

    if not isinstance(body, str):
        raise _fail('"body" must be a string')

    try:
        modality = Modality(record.get('modality', Modality.TEXT.value))
        record_tags = [Tag.from_dict(tag) for tag in record.get('tags', [])]
    except (KeyError, TypeError, ValueError) as e:
        raise _fail(f'invalid modality or tags: {e}')

    metadata = validate_metadata(raw_metadata)
    chunks = chunk_text(body,
                        config.max_chunk_tokens,
                        config.chunk_overlap_tokens,
                        doc_id=next_id)

    seen = {(tag.field, tag.value, tag.provenance) for tag in record_tags}
    tags = record_tags + [
        tag
        for tag in extract_tags(body, config.gazetteer)
        if (tag.field, tag.value, tag.provenance) not in seen
    ]

    document = Document(doc_id=next_id,
                        metadata=metadata,
                        modality=modality,
                        body=body,
                        tags=tuple(tags),
                        chunks=tuple(chunks))

    return apply_enrichers(document, config.enrichers)


def renumber_document(
    document: Document,
    doc_id: int,
) -> Document:
    """Return a copy of a document with a new ``doc_id``.

    Args:
        document (finder.models.Document):
            The document.

        doc_id (int):
            The new ID.

    Returns:
        finder.models.Document:
        The renumbered document.
    """
    if document.doc_id == doc_id:
        return document

    return replace(document,
                   doc_id=doc_id,
                   chunks=tuple(
                       replace(chunk, doc_id=doc_id)
                       for chunk in document.chunks
                   ))


@dataclass
class IngestResult:
    """The outcome of ingesting a batch of records."""

    #: Accepted documents, with dense IDs in input order.
    documents: list[Document] = field(default_factory=list)

    #: Rejected records, as ``(line_number, error)`` pairs.
    errors: list[tuple[int, DataError]] = field(default_factory=list)

    @property
    def accepted(self) -> int:
        return len(self.documents)

    @property
    def rejected(self) -> int:
        return len(self.errors)


def ingest_corpus(
    lines: Iterable[str],
    config: IngestConfig,
    *,
    start_id: int = 0,
    workers: int = 32,
    source: str = '<corpus>',
    strict: bool = True,
    existing_numbers: Iterable[str] = (),
) -> IngestResult:
    """Convert corpus lines into documents in parallel.

    Blank lines and lines starting with ``#`` are skipped. Records are
    converted concurrently, but IDs are assigned afterward in input order,
    so the result does not depend on scheduling.

    Args:
        lines (iterable of str):
            The corpus lines.

        config (finder.config.IngestConfig):
            The ingestion settings.

        start_id (int, optional):
            The ID for the first accepted document.

        workers (int, optional):
            The number of worker threads.

        source (str, optional):
            A description of the input, for error messages.

        strict (bool, optional):
            Whether to raise on the first rejected record. If ``False``,
            rejected records are collected in :py:attr:`IngestResult.errors`.

        existing_numbers (iterable of str, optional):
            Document numbers already present in the target corpus.

    Returns:
        IngestResult:
        The accepted documents and any rejected records.

    Raises:
        finder.errors.DataError:
            A record was rejected and ``strict`` is set.
    """
    records = [
        (line_number, line)
        for line_number, line in enumerate(lines, start=1)
        if line.strip() and not line.lstrip().startswith('#')
    ]

    def _convert(
        item: tuple[int, tuple[int, str]],
    ) -> Document | DataError:
        index, (line_number, line) = item

        try:
            return ingest_record(line, config, start_id + index,
                                 source=source,
                                 line_number=line_number)
        except DataError as e:
            return e

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        outcomes = list(executor.map(_convert, enumerate(records)))

    result = IngestResult()
    seen_numbers = set(existing_numbers)

    for (line_number, line), outcome in zip(records, outcomes):
        if isinstance(outcome, Document):
            number = outcome.document_number

            if number in seen_numbers:
                outcome = DuplicateDocumentError(document_number=number)
            else:
                seen_numbers.add(number)
                result.documents.append(renumber_document(
                    outcome, start_id + len(result.documents)))
                continue

        if strict:
            raise outcome

        logger.warning('Rejected record at %s line %d: %s',
                       source, line_number, outcome,
                       extra={
                           'event': 'ingest.rejected',
                           'line_number': line_number,
                           'failure_class': outcome.code,
                       })
        result.errors.append((line_number, outcome))

    logger.info('Ingested %d records from %s (%d rejected)',
                result.accepted, source, result.rejected,
                extra={
                    'event': 'ingest.completed',
                    'accepted': result.accepted,
                    'rejected': result.rejected,
                })

    return result


def load_gazetteer(path: Path) -> dict[str, list[str]]:
    """Load a gazetteer file.

    The file holds a JSON object mapping each tag field to a list of
    phrases.

    Args:
        path (pathlib.Path):
            The file to load.

    Returns:
        dict:
        The gazetteer.

    Raises:
        finder.errors.ParseError:
            The file was not a valid gazetteer.
    """
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except ValueError as e:
        raise ParseError(source=str(path), line_number=1, reason=str(e))

    if (not isinstance(data, dict) or
        not all(isinstance(phrases, list) and
                all(isinstance(phrase, str) and phrase.strip()
                    for phrase in phrases)
                for phrases in data.values())):
        raise ParseError(source=str(path),
                         line_number=1,
                         reason='expected an object of non-empty phrase '
                                'lists')

    return data


#
# Workspace layout
#

def stage_raw(
    path: Path,
    root: Path,
) -> Path:
    """Copy an input file into ``<root>/raw/``.

    Args:
        path (pathlib.Path):
            The input file.

        root (pathlib.Path):
            The workspace root.

    Returns:
        pathlib.Path:
        The staged copy.
    """
    raw_dir = Path(root) / 'raw'
    raw_dir.mkdir(parents=True, exist_ok=True)
    dest = raw_dir / Path(path).name

    if Path(path).resolve() != dest.resolve():
        shutil.copyfile(path, dest)

    return dest


def write_processed(
    documents: Iterable[Document],
    root: Path,
) -> list[Path]:
    """Write each document to ``<root>/processed/<doc_id>.json``.

    Args:
        documents (iterable of finder.models.Document):
            The documents to write.

        root (pathlib.Path):
            The workspace root.

    Returns:
        list of pathlib.Path:
        The written files.
    """
    processed_dir = Path(root) / 'processed'
    processed_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []

    for document in documents:
        path = processed_dir / f'{document.doc_id}.json'
        path.write_text(dumps_canonical(document.to_dict()) + '\n',
                        encoding='utf-8')
        paths.append(path)

    return paths


def read_lines(path: Path) -> list[str]:
    """Return the lines of a UTF-8 text file without line endings.

    Only ``\\n`` and ``\\r\\n`` end a line, so line numbers match what
    editors show for JSON Lines files.

    Args:
        path (pathlib.Path):
            The file to read.

    Returns:
        list of str:
        The lines.

    Raises:
        OSError:
            The file could not be read.

        finder.errors.ParseError:
            The file was not valid UTF-8. The error names the line holding
            the first invalid byte.
    """
    data = Path(path).read_bytes()

    try:
        text = data.decode('utf-8')
    except UnicodeDecodeError as e:
        raise ParseError(source=str(path),
                         line_number=data.count(b'\n', 0, e.start) + 1,
                         reason=f'invalid UTF-8 at byte {e.start}: '
                                f'{e.reason}')

    lines = text.split('\n')

    if lines[-1] == '':
        lines.pop()

    return [line.removesuffix('\r') for line in lines]


__all__ = [
    'Enricher',
    'IngestResult',
    'LanguageDetector',
    'apply_enrichers',
    'chunk_text',
    'detect_language',
    'enrichers',
    'extract_tags',
    'ingest_corpus',
    'ingest_record',
    'language_detectors',
    'load_gazetteer',
    'read_lines',
    'renumber_document',
    'stage_raw',
    'write_processed',
]
