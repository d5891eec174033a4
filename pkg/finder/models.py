"""The corpus data model.

These types are shared by every other module. All of them are immutable
once constructed, so they can be handed between threads freely.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, TYPE_CHECKING

from finder.errors import (EmptyCorpusError,
                           InvalidLanguageError,
                           MissingFieldError)
from finder.text import tokenize

try:
    from enum import StrEnum
except ImportError:
    assert not TYPE_CHECKING

    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore
        pass


#: Metadata fields every record must supply.
REQUIRED_FIELDS: Sequence[str] = (
    'dataset_document_number',
    'dataset_name',
    'dataset_file_title',
)

#: Optional metadata fields with a fixed meaning.
OPTIONAL_FIELDS: Sequence[str] = (
    'document_type',
    'product',
    'scientific_area',
    'language',
    'region',
    'country',
    'content_purpose',
    'content_type',
    'created_at',
)

#: Every metadata field in the schema, in canonical order.
METADATA_FIELDS: Sequence[str] = (*REQUIRED_FIELDS, *OPTIONAL_FIELDS)

_LANGUAGE_RE = re.compile(r'[a-z]{2,3}(-[a-z0-9]{2,8})*')


class Modality(StrEnum):
    """The kind of source a document was normalized from."""

    TEXT = 'text'
    SLIDES = 'slides'
    IMAGE = 'image'
    AUDIO = 'audio'
    VIDEO = 'video'
    EMAIL = 'email'
    SPREADSHEET = 'spreadsheet'
    OTHER = 'other'


class Provenance(StrEnum):
    """Where a tag came from."""

    #: Matched from the domain gazetteer.
    EXTRACTIVE = 'extractive'

    #: Generated by a model.
    ABSTRACTIVE = 'abstractive'

    #: Supplied by a person.
    MANUAL = 'manual'


@dataclass(frozen=True)
class Metadata:
    """Validated document metadata.

    Build instances through :py:func:`validate_metadata` so that values are
    normalized consistently.
    """

    #: The unique external identifier of the document.
    dataset_document_number: str

    #: The dataset the document belongs to.
    dataset_name: str

    #: The document's title.
    dataset_file_title: str

    document_type: Optional[str] = None
    product: Optional[str] = None
    scientific_area: Optional[str] = None

    #: A lowercase BCP-47-style language code, such as ``en`` or ``pt-br``.
    language: Optional[str] = None

    region: Optional[str] = None
    country: Optional[str] = None
    content_purpose: Optional[str] = None
    content_type: Optional[str] = None

    #: An ISO-8601 date string.
    created_at: Optional[str] = None

    #: Metadata keys outside the schema, preserved as given.
    extras: Mapping[str, Any] = field(default_factory=dict)

    def get(
        self,
        field_name: str,
    ) -> Optional[str]:
        """Return the value of a schema field.

        Args:
            field_name (str):
                The name of a field in :py:data:`METADATA_FIELDS`.

        Returns:
            str:
            The value, or ``None`` if unset.
        """
        return getattr(self, field_name)

    def to_dict(self) -> dict[str, Any]:
        """Return the metadata as a flat dictionary.

        Unset fields are omitted. Extras are merged in alongside the schema
        fields, matching the corpus input format.

        Returns:
            dict:
            The serializable metadata.
        """
        result: dict[str, Any] = dict(self.extras)

        for name in METADATA_FIELDS:
            value = getattr(self, name)

            if value is not None:
                result[name] = value

        return result


@dataclass(frozen=True)
class Tag:
    """A metadata label attached to a document."""

    #: The tag category, such as ``product`` or ``indication``.
    field: str

    value: str
    provenance: Provenance

    #: How confident the producer is in the tag, in ``[0, 1]``.
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(
                f'Tag confidence {self.confidence!r} is outside [0, 1]')

    def to_dict(self) -> dict[str, Any]:
        """Return the tag as a serializable dictionary.

        Returns:
            dict:
            The tag.
        """
        return {
            'field': self.field,
            'value': self.value,
            'provenance': self.provenance.value,
            'confidence': self.confidence,
        }

    @classmethod
    def from_dict(
        cls,
        data: Mapping[str, Any],
    ) -> Tag:
        """Return a tag from its serialized form.

        Args:
            data (dict):
                The serialized tag.

        Returns:
            Tag:
            The tag.

        Raises:
            KeyError:
                A key was missing.

            ValueError:
                The provenance or confidence was invalid.
        """
        return cls(field=str(data['field']),
                   value=str(data['value']),
                   provenance=Provenance(data['provenance']),
                   confidence=float(data['confidence']))


@dataclass(frozen=True)
class Chunk:
    """A window of a document body used as the unit of scoring."""

    #: The ID of the document this chunk belongs to.
    doc_id: int

    #: The position of the chunk within its document, starting at 0.
    ordinal: int

    text: str

    #: Offset of the chunk's first character in the document body.
    start: int

    #: Offset one past the chunk's last character in the document body.
    end: int

    #: The number of engine tokens in :py:attr:`text`.
    token_count: int

    @property
    def chunk_id(self) -> tuple[int, int]:
        """The chunk's identity as ``(doc_id, ordinal)``."""
        return (self.doc_id, self.ordinal)

    @property
    def char_span(self) -> tuple[int, int]:
        """The ``[start, end)`` range of the chunk in the document body."""
        return (self.start, self.end)

    def to_dict(self) -> dict[str, Any]:
        return {
            'ordinal': self.ordinal,
            'text': self.text,
            'char_span': [self.start, self.end],
            'token_count': self.token_count,
        }


@dataclass(frozen=True)
class Document:
    """A source file normalized to text, with its metadata and chunks."""

    #: The dense internal ID, assigned in ingest order.
    doc_id: int

    metadata: Metadata
    modality: Modality

    #: The full normalized text.
    body: str

    tags: tuple[Tag, ...] = ()
    chunks: tuple[Chunk, ...] = ()

    def __post_init__(self) -> None:
        for ordinal, chunk in enumerate(self.chunks):
            if chunk.doc_id != self.doc_id or chunk.ordinal != ordinal:
                raise ValueError(
                    f'Chunk {chunk.chunk_id} does not belong at position '
                    f'{ordinal} of document {self.doc_id}')

    @property
    def document_number(self) -> str:
        """The external document number."""
        return self.metadata.dataset_document_number

    @property
    def title(self) -> str:
        """The document title."""
        return self.metadata.dataset_file_title

    def to_dict(self) -> dict[str, Any]:
        """Return the document as a serializable dictionary.

        Returns:
            dict:
            The document, including tags and chunks.
        """
        return {
            'doc_id': self.doc_id,
            'metadata': self.metadata.to_dict(),
            'modality': self.modality.value,
            'body': self.body,
            'tags': [tag.to_dict() for tag in self.tags],
            'chunks': [chunk.to_dict() for chunk in self.chunks],
        }

    @classmethod
    def from_dict(
        cls,
        data: Mapping[str, Any],
    ) -> Document:
        """Return a document from the output of :py:meth:`to_dict`.

        Args:
            data (dict):
                The serialized document.

        Returns:
            Document:
            The document.

        Raises:
            finder.errors.MissingFieldError:
                The metadata lacked a required field.

            KeyError:
                A key was missing.

            ValueError:
                A value was invalid.
        """
        doc_id = int(data['doc_id'])

        return cls(
            doc_id=doc_id,
            metadata=validate_metadata(data['metadata']),
            modality=Modality(data['modality']),
            body=data['body'],
            tags=tuple(Tag.from_dict(tag) for tag in data.get('tags', [])),
            chunks=tuple(
                Chunk(doc_id=doc_id,
                      ordinal=int(chunk['ordinal']),
                      text=chunk['text'],
                      start=int(chunk['char_span'][0]),
                      end=int(chunk['char_span'][1]),
                      token_count=int(chunk['token_count']))
                for chunk in data.get('chunks', [])
            ))


@dataclass(frozen=True)
class CorpusStats:
    """Chunk-level statistics used by the sparse scorers."""

    #: The number of documents.
    n_docs: int

    #: The number of chunks.
    n_chunks: int

    #: For each term, the number of chunks containing it.
    doc_freq: Mapping[str, int]

    #: The mean chunk length in tokens.
    avg_chunk_len: float


def dumps_canonical(data: Any) -> str:
    """Return the canonical JSON encoding of a value.

    Keys are sorted and non-ASCII text is kept as-is, so equal values always
    encode to the same bytes.

    Args:
        data (object):
            The value to encode.

    Returns:
        str:
        The JSON string.
    """
    return json.dumps(data,
                      sort_keys=True,
                      ensure_ascii=False,
                      separators=(',', ':'))


def validate_metadata(raw: Mapping[str, Any]) -> Metadata:
    """Validate and normalize a raw metadata mapping.

    String values of schema fields are trimmed, and the language is
    lowercased. Blank optional values are treated as unset. Keys outside the
    schema are preserved in :py:attr:`Metadata.extras`.

    Args:
        raw (dict):
            The raw metadata.

    Returns:
        Metadata:
        The validated metadata.

    Raises:
        finder.errors.InvalidLanguageError:
            The language did not look like a language code.

        finder.errors.MissingFieldError:
            A required field was absent or blank.
    """
    values: dict[str, Optional[str]] = {}

    for name in METADATA_FIELDS:
        value = raw.get(name)

        if value is not None:
            value = str(value).strip() or None

        values[name] = value

    for name in REQUIRED_FIELDS:
        if not values[name]:
            raise MissingFieldError(field_name=name)

    language = values['language']

    if language is not None:
        language = language.lower()

        if not _LANGUAGE_RE.fullmatch(language):
            raise InvalidLanguageError(language=language)

        values['language'] = language

    return Metadata(
        extras={
            key: value
            for key, value in raw.items()
            if key not in values
        },
        **values)  # type: ignore[arg-type]


def compute_corpus_stats(docs: Sequence[Document]) -> CorpusStats:
    """Compute chunk-level corpus statistics.

    A term is counted once per chunk that contains it, regardless of how
    often it occurs there.

    Args:
        docs (list of Document):
            The chunked documents.

    Returns:
        CorpusStats:
        The statistics.

    Raises:
        finder.errors.EmptyCorpusError:
            No documents were given.
    """
    if not docs:
        raise EmptyCorpusError()

    doc_freq: Counter[str] = Counter()
    n_chunks = 0
    total_len = 0

    for doc in docs:
        for chunk in doc.chunks:
            n_chunks += 1
            total_len += chunk.token_count
            doc_freq.update(set(tokenize(chunk.text)))

    return CorpusStats(
        n_docs=len(docs),
        n_chunks=n_chunks,
        doc_freq=dict(sorted(doc_freq.items())),
        avg_chunk_len=(total_len / n_chunks if n_chunks else 0.0))
