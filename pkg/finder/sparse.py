"""The inverted index and the lexical scorers.

Chunks are the unit of lexical scoring. Each term maps to a posting list of
the chunks containing it, ordered by chunk, carrying the term frequency and
a precomputed importance weight. A document scores as the best of its
chunks.

Three scorers are registered by default:

``tfidf``
    Cosine similarity of TF-IDF vectors.

``bm25``
    Okapi BM25 with length normalization.

``bm42``
    The sum of IDF times the term's importance weight in the chunk, with no
    length normalization. Weights come from a :py:class:`TermWeighter`.

The index also keeps per-field metadata statistics, used for metadata
keyword search and for metadata filters.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections import Counter
from typing import (Collection,
                    Iterable,
                    Mapping,
                    NamedTuple,
                    Optional,
                    Sequence)

import numpy as np

from finder.binary import SegmentReader, SegmentWriter
from finder.errors import (CorruptSnapshotError,
                           EmptyCorpusError,
                           UnknownFieldError)
from finder.models import CorpusStats, Document, METADATA_FIELDS
from finder.registry import ComponentRegistry
from finder.text import normalize_identifier, tokenize


logger = logging.getLogger(__name__)


SPARSE_MAGIC = b'FNDR1S'
SPARSE_FORMAT_VERSION = 1

#: Metadata fields searched by metadata keyword search, in concatenation
#: order.
METADATA_KEYWORD_FIELDS: Sequence[str] = (
    'dataset_name',
    'dataset_file_title',
    'document_type',
    'product',
    'scientific_area',
    'content_purpose',
    'content_type',
)

_POSTING_DTYPE = np.dtype([
    ('delta', '<u4'),
    ('tf', '<u4'),
    ('weight', '<f4'),
])


class Posting(NamedTuple):
    """An occurrence of a term in a chunk."""

    #: The chunk's row in :py:attr:`SparseIndex.chunk_ids`.
    #:
    #: Rows are assigned in ``(doc_id, ordinal)`` order, so ordering by row
    #: is ordering by chunk ID.
    row: int

    term_frequency: int

    #: The term's importance in the chunk, in ``(0, 1]``.
    term_weight: float


def idf(
    term: str,
    stats: CorpusStats,
) -> float:
    """Return the inverse document frequency of a term.

    This is ``ln(1 + (N - n + 0.5) / (n + 0.5))`` over chunks, which is
    always positive.

    Args:
        term (str):
            The term.

        stats (finder.models.CorpusStats):
            The corpus statistics.

    Returns:
        float:
        The IDF.
    """
    return _idf(stats.n_chunks, stats.doc_freq.get(term, 0))


def _idf(
    n: int,
    n_t: int,
) -> float:
    return math.log(1.0 + (n - n_t + 0.5) / (n_t + 0.5))


def _distinct(terms: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(terms))


#
# Term weighting
#

class TermWeighter:
    """Base class for BM42 term weighters."""

    #: The registered name of the weighter.
    name: str

    def weigh(
        self,
        term_counts: Mapping[str, int],
    ) -> dict[str, float]:
        """Return the importance of each term in a chunk.

        Args:
            term_counts (dict):
                A mapping of each distinct term in the chunk to its
                frequency.

        Returns:
            dict:
            A mapping of each term to a weight in ``(0, 1]``.
        """
        raise NotImplementedError


class SaturationTermWeighter(TermWeighter):
    """Weighs terms by saturated frequency, ``tf / (tf + 1)``.

    Weights are normalized to sum to 1 within the chunk.
    """

    name = 'saturation'

    def weigh(
        self,
        term_counts: Mapping[str, int],
    ) -> dict[str, float]:
        saturated = {
            term: tf / (tf + 1.0)
            for term, tf in term_counts.items()
        }
        total = math.fsum(saturated.values())

        return {
            term: value / total
            for term, value in saturated.items()
        }


class TermWeighterRegistry(ComponentRegistry[TermWeighter]):
    """The registry of BM42 term weighters."""

    component_kind = 'term weighter'
    entry_point_group = 'finder.term_weighters'

    def get_defaults(self) -> Iterable[TermWeighter]:
        return [SaturationTermWeighter()]


term_weighters = TermWeighterRegistry()


#
# Scorers
#

class SparseScorer:
    """Base class for lexical scorers.

    Subclasses define the contribution of one query term to one chunk, and
    optionally a final adjustment of each chunk's total.
    """

    #: The registered name of the scorer.
    name: str

    def query_counts(
        self,
        query_terms: Sequence[str],
    ) -> dict[str, int]:
        """Return the query terms to score, with their query weights.

        By default, each distinct term counts once.

        Args:
            query_terms (list of str):
                The query tokens.

        Returns:
            dict:
            A mapping of term to query count, in first-occurrence order.
        """
        return dict.fromkeys(query_terms, 1)

    def term_score(
        self,
        index: SparseIndex,
        term_idf: float,
        posting: Posting,
        query_count: int,
    ) -> float:
        raise NotImplementedError

    def prepare(
        self,
        index: SparseIndex,
        query_counts: Mapping[str, int],
    ) -> float:
        """Return a per-query value passed to each call of :py:meth:`finish`.

        Args:
            index (SparseIndex):
                The index being searched.

            query_counts (dict):
                The output of :py:meth:`query_counts`.

        Returns:
            float:
            The value. By default, 1.
        """
        return 1.0

    def finish(
        self,
        index: SparseIndex,
        row: int,
        total: float,
        prepared: float,
    ) -> float:
        return total

    def score_rows(
        self,
        index: SparseIndex,
        query_terms: Sequence[str],
        candidate_filter: Optional[Collection[int]] = None,
    ) -> dict[int, float]:
        """Score every chunk matching at least one query term.

        Args:
            index (SparseIndex):
                The index to search.

            query_terms (list of str):
                The query tokens.

            candidate_filter (set of int, optional):
                If provided, only chunks of these documents are scored.

        Returns:
            dict:
            A mapping of chunk row to score.
        """
        counts = self.query_counts(query_terms)
        chunk_doc = index.chunk_doc_ids
        totals: dict[int, float] = {}

        for term, query_count in counts.items():
            postings = index.postings.get(term)

            if not postings:
                continue

            term_idf = index.idf(term)

            for posting in postings:
                row = posting.row

                if (candidate_filter is not None and
                    chunk_doc[row] not in candidate_filter):
                    continue

                totals[row] = (
                    totals.get(row, 0.0) +
                    self.term_score(index, term_idf, posting, query_count))

        prepared = self.prepare(index, counts)

        return {
            row: self.finish(index, row, total, prepared)
            for row, total in totals.items()
        }

    def score_row(
        self,
        index: SparseIndex,
        query_terms: Sequence[str],
        row: int,
    ) -> float:
        """Score a single chunk.

        Args:
            index (SparseIndex):
                The index.

            query_terms (list of str):
                The query tokens.

            row (int):
                The chunk's row.

        Returns:
            float:
            The score, or 0 if no query term occurs in the chunk.
        """
        counts = self.query_counts(query_terms)
        total = 0.0
        matched = False

        for term, query_count in counts.items():
            posting = index.find_posting(term, row)

            if posting is not None:
                matched = True
                total += self.term_score(index, index.idf(term), posting,
                                         query_count)

        if not matched:
            return 0.0

        return self.finish(index, row, total,
                           self.prepare(index, counts))


class TFIDFScorer(SparseScorer):
    """Cosine similarity between query and chunk TF-IDF vectors."""

    name = 'tfidf'

    def query_counts(
        self,
        query_terms: Sequence[str],
    ) -> dict[str, int]:
        return dict(Counter(query_terms))

    def term_score(
        self,
        index: SparseIndex,
        term_idf: float,
        posting: Posting,
        query_count: int,
    ) -> float:
        return (query_count * term_idf) * (posting.term_frequency * term_idf)

    def prepare(
        self,
        index: SparseIndex,
        query_counts: Mapping[str, int],
    ) -> float:
        return math.sqrt(math.fsum(
            (count * index.idf(term)) ** 2
            for term, count in query_counts.items()
        ))

    def finish(
        self,
        index: SparseIndex,
        row: int,
        total: float,
        prepared: float,
    ) -> float:
        return min(1.0, total / (prepared * index.tfidf_norms[row]))


class BM25Scorer(SparseScorer):
    """Okapi BM25, using the index's ``k1`` and ``b``."""

    name = 'bm25'

    def term_score(
        self,
        index: SparseIndex,
        term_idf: float,
        posting: Posting,
        query_count: int,
    ) -> float:
        k1 = index.k1
        b = index.b
        tf = posting.term_frequency
        length_ratio = index.chunk_lengths[posting.row] / index.avg_chunk_len

        return (term_idf * (tf * (k1 + 1.0)) /
                (tf + k1 * (1.0 - b + b * length_ratio)))


class BM42Scorer(SparseScorer):
    """IDF-weighted sum of the chunk's term importance weights."""

    name = 'bm42'

    def term_score(
        self,
        index: SparseIndex,
        term_idf: float,
        posting: Posting,
        query_count: int,
    ) -> float:
        return term_idf * posting.term_weight


class SparseScorerRegistry(ComponentRegistry[SparseScorer]):
    """The registry of lexical scorers."""

    component_kind = 'sparse scorer'
    entry_point_group = 'finder.sparse_scorers'

    def get_defaults(self) -> Iterable[SparseScorer]:
        return [
            TFIDFScorer(),
            BM25Scorer(),
            BM42Scorer(),
        ]


sparse_scorers = SparseScorerRegistry()


#
# The index
#

class SparseIndex:
    """An immutable inverted index over document chunks and metadata.

    Build one with :py:meth:`build`, or load a serialized segment with
    :py:meth:`from_bytes`.

    Version Added:
        0.9
    """

    ######################
    # Instance variables #
    ######################

    #: The BM25 term frequency saturation parameter.
    k1: float

    #: The BM25 length normalization parameter.
    b: float

    #: The name of the term weighter that produced the posting weights.
    weighter_name: str

    #: The ``(doc_id, ordinal)`` of each chunk, by row.
    chunk_ids: Sequence[tuple[int, int]]

    #: The token count of each chunk, by row.
    chunk_lengths: Sequence[int]

    #: The posting lists, keyed by term in sorted order.
    postings: Mapping[str, Sequence[Posting]]

    #: Chunk-level corpus statistics.
    stats: CorpusStats

    #: Normalized metadata value to document IDs, per schema field.
    field_index: Mapping[str, Mapping[str, frozenset[int]]]

    @classmethod
    def build(
        cls,
        documents: Sequence[Document],
        *,
        k1: float = 1.2,
        b: float = 0.75,
        weighter: str = 'saturation',
    ) -> SparseIndex:
        """Build an index over chunked documents.

        Args:
            documents (list of finder.models.Document):
                The documents to index.

            k1 (float, optional):
                The BM25 ``k1`` parameter.

            b (float, optional):
                The BM25 ``b`` parameter.

            weighter (str, optional):
                The name of the registered term weighter.

        Returns:
            SparseIndex:
            The new index.

        Raises:
            finder.errors.EmptyCorpusError:
                No documents were given.
        """
        documents = sorted(documents, key=lambda doc: doc.doc_id)
        term_weighter = term_weighters.get(weighter)
        chunk_ids: list[tuple[int, int]] = []
        chunk_lengths: list[int] = []
        postings: dict[str, list[Posting]] = {}

        for document in documents:
            for chunk in document.chunks:
                row = len(chunk_ids)
                chunk_ids.append(chunk.chunk_id)
                chunk_lengths.append(chunk.token_count)

                counts = Counter(tokenize(chunk.text))
                weights = term_weighter.weigh(counts)

                for term, tf in counts.items():
                    # Stored as float32, so a loaded segment scores the same.
                    postings.setdefault(term, []).append(Posting(
                        row=row,
                        term_frequency=tf,
                        term_weight=float(np.float32(weights[term]))))

        index = cls(documents,
                    chunk_ids=chunk_ids,
                    chunk_lengths=chunk_lengths,
                    postings={
                        term: postings[term]
                        for term in sorted(postings)
                    },
                    k1=k1,
                    b=b,
                    weighter_name=weighter)

        logger.debug('Built sparse index: %d documents, %d chunks, %d terms',
                     index.stats.n_docs, index.stats.n_chunks,
                     len(index.postings))

        return index

    def __init__(
        self,
        documents: Sequence[Document],
        *,
        chunk_ids: Sequence[tuple[int, int]],
        chunk_lengths: Sequence[int],
        postings: Mapping[str, Sequence[Posting]],
        k1: float,
        b: float,
        weighter_name: str,
    ) -> None:
        """Initialize the index from prepared postings.

        Callers should use :py:meth:`build` or :py:meth:`from_bytes`.

        Args:
            documents (list of finder.models.Document):
                The indexed documents, in ``doc_id`` order.

            chunk_ids (list of tuple):
                The chunk ID of each row.

            chunk_lengths (list of int):
                The token count of each row.

            postings (dict):
                The posting lists, keyed by term in sorted order.

            k1 (float):
                The BM25 ``k1`` parameter.

            b (float):
                The BM25 ``b`` parameter.

            weighter_name (str):
                The name of the term weighter used for the postings.

        Raises:
            finder.errors.EmptyCorpusError:
                No documents were given.
        """
        if not documents:
            raise EmptyCorpusError()

        self.k1 = k1
        self.b = b
        self.weighter_name = weighter_name
        self.chunk_ids = tuple(chunk_ids)
        self.chunk_lengths = tuple(chunk_lengths)
        self.chunk_doc_ids = tuple(doc_id for doc_id, _ in self.chunk_ids)
        self.postings = postings
        self.doc_ids = tuple(doc.doc_id for doc in documents)
        self.all_doc_ids = frozenset(self.doc_ids)

        n_chunks = len(self.chunk_ids)
        self.stats = CorpusStats(
            n_docs=len(documents),
            n_chunks=n_chunks,
            doc_freq={
                term: len(term_postings)
                for term, term_postings in postings.items()
            },
            avg_chunk_len=(sum(self.chunk_lengths) / n_chunks
                           if n_chunks else 0.0))
        self.avg_chunk_len = self.stats.avg_chunk_len

        self._idf = {
            term: _idf(n_chunks, n_t)
            for term, n_t in self.stats.doc_freq.items()
        }
        self._posting_rows = {
            term: [posting.row for posting in term_postings]
            for term, term_postings in postings.items()
        }

        norms_sq = np.zeros(n_chunks, dtype=np.float64)

        for term, term_postings in postings.items():
            term_idf = self._idf[term]

            for posting in term_postings:
                norms_sq[posting.row] += (posting.term_frequency *
                                          term_idf) ** 2

        self.tfidf_norms = np.sqrt(norms_sq).tolist()

        self._build_metadata(documents)

    def _build_metadata(
        self,
        documents: Sequence[Document],
    ) -> None:
        field_index: dict[str, dict[str, set[int]]] = {
            name: {}
            for name in METADATA_FIELDS
        }
        field_terms: dict[str, dict[int, Counter[str]]] = {
            name: {}
            for name in METADATA_KEYWORD_FIELDS
        }
        field_postings: dict[str, dict[str, set[int]]] = {
            name: {}
            for name in METADATA_KEYWORD_FIELDS
        }

        for document in documents:
            metadata = document.metadata

            for name in METADATA_FIELDS:
                value = metadata.get(name)

                if value is not None:
                    (field_index[name]
                     .setdefault(normalize_identifier(value), set())
                     .add(document.doc_id))

            for name in METADATA_KEYWORD_FIELDS:
                value = metadata.get(name)

                if value:
                    counts = Counter(tokenize(value))
                    field_terms[name][document.doc_id] = counts

                    for term in counts:
                        (field_postings[name]
                         .setdefault(term, set())
                         .add(document.doc_id))

        self.field_index = {
            name: {
                value: frozenset(doc_ids)
                for value, doc_ids in values.items()
            }
            for name, values in field_index.items()
        }
        self._field_terms = field_terms
        self._field_postings = field_postings

    def idf(
        self,
        term: str,
    ) -> float:
        """Return the chunk-level IDF of a term.

        Args:
            term (str):
                The term.

        Returns:
            float:
            The IDF. Terms absent from the index get the maximum.
        """
        try:
            return self._idf[term]
        except KeyError:
            return _idf(self.stats.n_chunks, 0)

    def row_for_chunk(
        self,
        chunk_id: tuple[int, int],
    ) -> int:
        """Return the row of a chunk.

        Args:
            chunk_id (tuple):
                The ``(doc_id, ordinal)`` of the chunk.

        Returns:
            int:
            The row.

        Raises:
            KeyError:
                The chunk is not indexed.
        """
        row = bisect.bisect_left(self.chunk_ids, tuple(chunk_id))

        if row == len(self.chunk_ids) or self.chunk_ids[row] != chunk_id:
            raise KeyError(chunk_id)

        return row

    def find_posting(
        self,
        term: str,
        row: int,
    ) -> Optional[Posting]:
        """Return a term's posting for a chunk, if the chunk contains it.

        Args:
            term (str):
                The term.

            row (int):
                The chunk's row.

        Returns:
            Posting:
            The posting, or ``None``.
        """
        rows = self._posting_rows.get(term)

        if not rows:
            return None

        i = bisect.bisect_left(rows, row)

        if i < len(rows) and rows[i] == row:
            return self.postings[term][i]

        return None

    def score_documents(
        self,
        query_terms: Sequence[str],
        *,
        scorer: str = 'bm42',
        candidate_filter: Optional[Collection[int]] = None,
    ) -> dict[int, float]:
        """Return the raw score of every document matching the query.

        A document's score is the best score among its chunks.

        Args:
            query_terms (list of str):
                The query tokens.

            scorer (str, optional):
                The name of the registered scorer.

            candidate_filter (set of int, optional):
                If provided, only these documents are scored.

        Returns:
            dict:
            A mapping of ``doc_id`` to raw score, for documents sharing at
            least one term with the query.
        """
        row_scores = sparse_scorers.get(scorer).score_rows(
            self, query_terms, candidate_filter)
        chunk_doc = self.chunk_doc_ids
        scores: dict[int, float] = {}

        for row, score in row_scores.items():
            doc_id = chunk_doc[row]

            if score > scores.get(doc_id, -math.inf):
                scores[doc_id] = score

        return scores

    def score_metadata(
        self,
        query_terms: Sequence[str],
        fields: Optional[Sequence[str]] = None,
        *,
        candidate_filter: Optional[Collection[int]] = None,
    ) -> dict[int, float]:
        """Return BM42 scores over the concatenated metadata fields.

        Each document's selected field values form a single pseudo-chunk.
        IDF is computed over documents.

        Args:
            query_terms (list of str):
                The query tokens.

            fields (list of str, optional):
                The fields to search. Defaults to all of
                :py:data:`METADATA_KEYWORD_FIELDS`.

            candidate_filter (set of int, optional):
                If provided, only these documents are scored.

        Returns:
            dict:
            A mapping of ``doc_id`` to raw score, for documents sharing at
            least one term with the query.

        Raises:
            finder.errors.UnknownFieldError:
                A field is not searchable.
        """
        if fields is None:
            fields = METADATA_KEYWORD_FIELDS
        else:
            for name in fields:
                if name not in METADATA_KEYWORD_FIELDS:
                    raise UnknownFieldError(field_name=name)

            fields = [
                name
                for name in METADATA_KEYWORD_FIELDS
                if name in fields
            ]

        weighter = term_weighters.get(self.weighter_name)
        n_docs = self.stats.n_docs
        query_idf: dict[str, float] = {}
        candidates: set[int] = set()

        for term in _distinct(query_terms):
            docs: set[int] = set()

            for name in fields:
                docs.update(self._field_postings[name].get(term, ()))

            if docs:
                # Document frequency counts every document, filtered or not.
                query_idf[term] = _idf(n_docs, len(docs))
                candidates.update(docs)

        if candidate_filter is not None:
            candidates.intersection_update(candidate_filter)

        scores: dict[int, float] = {}

        for doc_id in sorted(candidates):
            counts: Counter[str] = Counter()

            for name in fields:
                counts.update(self._field_terms[name].get(doc_id, {}))

            weights = weighter.weigh(counts)
            scores[doc_id] = math.fsum(
                term_idf * weights[term]
                for term, term_idf in query_idf.items()
                if term in counts
            )

        return scores

    def docs_with_value(
        self,
        field_name: str,
        value: str,
    ) -> frozenset[int]:
        """Return the documents whose metadata field equals a value.

        Comparison is case-insensitive and ignores surrounding and repeated
        whitespace.

        Args:
            field_name (str):
                A schema field name.

            value (str):
                The value to match.

        Returns:
            frozenset of int:
            The matching document IDs.

        Raises:
            finder.errors.UnknownFieldError:
                The field is not in the metadata schema.
        """
        try:
            values = self.field_index[field_name]
        except KeyError:
            raise UnknownFieldError(field_name=field_name)

        return values.get(normalize_identifier(value), frozenset())

    def to_bytes(self) -> bytes:
        """Serialize the index as a ``sparse.idx`` segment.

        The segment holds the BM25 parameters, the weighter name, the chunk
        table and the posting lists. Rows in each posting list are
        delta-encoded. Metadata statistics are rebuilt from the documents on
        load.

        Returns:
            bytes:
            The segment.
        """
        writer = SegmentWriter(SPARSE_MAGIC, SPARSE_FORMAT_VERSION)
        writer.f64(self.k1)
        writer.f64(self.b)
        writer.text(self.weighter_name)
        writer.u64(len(self.chunk_ids))
        writer.array([
            (doc_id, ordinal, length)
            for (doc_id, ordinal), length in zip(self.chunk_ids,
                                                 self.chunk_lengths)
        ], '<u4')
        writer.u32(len(self.postings))

        for term, term_postings in self.postings.items():
            rows = np.fromiter((posting.row for posting in term_postings),
                               dtype=np.int64,
                               count=len(term_postings))
            packed = np.empty(len(term_postings), dtype=_POSTING_DTYPE)
            packed['delta'] = np.diff(rows, prepend=0)
            packed['tf'] = [posting.term_frequency
                            for posting in term_postings]
            packed['weight'] = [posting.term_weight
                                for posting in term_postings]

            writer.text(term)
            writer.u32(len(term_postings))
            writer.array(packed, _POSTING_DTYPE)

        return writer.getvalue()

    @classmethod
    def from_bytes(
        cls,
        data: bytes,
        documents: Sequence[Document],
        *,
        filename: str = 'sparse.idx',
    ) -> SparseIndex:
        """Load an index from a ``sparse.idx`` segment.

        Args:
            data (bytes):
                The segment contents.

            documents (list of finder.models.Document):
                The documents the segment was built from.

            filename (str, optional):
                The segment's file name, for error messages.

        Returns:
            SparseIndex:
            The loaded index.

        Raises:
            finder.errors.CorruptSnapshotError:
                The segment is malformed or doesn't match the documents.

            finder.errors.VersionMismatchError:
                The segment uses another format version.
        """
        reader = SegmentReader(data,
                               filename=filename,
                               magic=SPARSE_MAGIC,
                               version=SPARSE_FORMAT_VERSION)
        k1 = reader.f64()
        b = reader.f64()
        weighter_name = reader.text()
        n_chunks = reader.u64()
        table = reader.array(n_chunks * 3, '<u4').reshape(n_chunks, 3)
        chunk_ids = [(int(doc_id), int(ordinal))
                     for doc_id, ordinal, _ in table]
        chunk_lengths = [int(length) for length in table[:, 2]]

        documents = sorted(documents, key=lambda doc: doc.doc_id)
        expected = [
            chunk.chunk_id
            for document in documents
            for chunk in document.chunks
        ]

        if chunk_ids != expected:
            raise CorruptSnapshotError(
                filename=filename,
                reason='chunk table does not match the documents')

        postings: dict[str, list[Posting]] = {}

        for _ in range(reader.u32()):
            term = reader.text()
            packed = reader.array(reader.u32(), _POSTING_DTYPE)
            rows = np.cumsum(packed['delta'], dtype=np.int64)

            if len(rows) and rows[-1] >= n_chunks:
                raise CorruptSnapshotError(
                    filename=filename,
                    reason=f'posting for "{term}" is out of range')

            postings[term] = [
                Posting(row=int(row),
                        term_frequency=int(tf),
                        term_weight=float(weight))
                for row, tf, weight in zip(rows.tolist(),
                                           packed['tf'].tolist(),
                                           packed['weight'].tolist())
            ]

        reader.expect_end()

        return cls(documents,
                   chunk_ids=chunk_ids,
                   chunk_lengths=chunk_lengths,
                   postings=postings,
                   k1=k1,
                   b=b,
                   weighter_name=weighter_name)


#
# Convenience functions
#

def _score_chunk(
    scorer: str,
    query_terms: Sequence[str],
    chunk_id: tuple[int, int],
    index: SparseIndex,
) -> float:
    return sparse_scorers.get(scorer).score_row(
        index, query_terms, index.row_for_chunk(chunk_id))


def score_bm25(
    query_terms: Sequence[str],
    chunk_id: tuple[int, int],
    index: SparseIndex,
) -> float:
    """Return the BM25 score of a chunk.

    Args:
        query_terms (list of str):
            The query tokens.

        chunk_id (tuple):
            The ``(doc_id, ordinal)`` of an indexed chunk.

        index (SparseIndex):
            The index.

    Returns:
        float:
        The score.
    """
    return _score_chunk('bm25', query_terms, chunk_id, index)


def score_bm42(
    query_terms: Sequence[str],
    chunk_id: tuple[int, int],
    index: SparseIndex,
) -> float:
    """Return the BM42 score of a chunk.

    Args:
        query_terms (list of str):
            The query tokens.

        chunk_id (tuple):
            The ``(doc_id, ordinal)`` of an indexed chunk.

        index (SparseIndex):
            The index.

    Returns:
        float:
        The score.
    """
    return _score_chunk('bm42', query_terms, chunk_id, index)


def score_tfidf(
    query_terms: Sequence[str],
    chunk_id: tuple[int, int],
    index: SparseIndex,
) -> float:
    """Return the TF-IDF cosine similarity of a chunk.

    Args:
        query_terms (list of str):
            The query tokens.

        chunk_id (tuple):
            The ``(doc_id, ordinal)`` of an indexed chunk.

        index (SparseIndex):
            The index.

    Returns:
        float:
        The score, in ``[0, 1]``.
    """
    return _score_chunk('tfidf', query_terms, chunk_id, index)


def rank_scores(
    scores: Mapping[int, float],
    top_k: Optional[int] = None,
) -> list[tuple[int, float]]:
    """Order document scores by descending score, then ascending ``doc_id``.

    Args:
        scores (dict):
            A mapping of ``doc_id`` to score.

        top_k (int, optional):
            The maximum number of results.

    Returns:
        list of tuple:
        The ``(doc_id, score)`` pairs.
    """
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))

    if top_k is not None:
        del ranked[top_k:]

    return ranked


def search_sparse(
    query_terms: Sequence[str],
    index: SparseIndex,
    scorer: str = 'bm42',
    candidate_filter: Optional[Collection[int]] = None,
    top_k: int = 10,
) -> list[tuple[int, float]]:
    """Return the top documents for a query under a lexical scorer.

    Args:
        query_terms (list of str):
            The query tokens.

        index (SparseIndex):
            The index to search.

        scorer (str, optional):
            The name of the registered scorer.

        candidate_filter (set of int, optional):
            If provided, only these documents can be returned.

        top_k (int, optional):
            The maximum number of results.

    Returns:
        list of tuple:
        ``(doc_id, raw_score)`` pairs, best first, ties by ascending
        ``doc_id``.
    """
    if top_k < 1:
        raise ValueError('top_k must be positive')

    return rank_scores(index.score_documents(query_terms,
                                             scorer=scorer,
                                             candidate_filter=candidate_filter),
                       top_k)


def search_metadata_keywords(
    query_terms: Sequence[str],
    index: SparseIndex,
    fields: Optional[Sequence[str]] = None,
    top_k: int = 10,
    *,
    candidate_filter: Optional[Collection[int]] = None,
) -> list[tuple[int, float]]:
    """Return the top documents for a query over metadata fields.

    Args:
        query_terms (list of str):
            The query tokens.

        index (SparseIndex):
            The index to search.

        fields (list of str, optional):
            The metadata fields to search. Defaults to all searchable
            fields.

        top_k (int, optional):
            The maximum number of results.

        candidate_filter (set of int, optional):
            If provided, only these documents can be returned.

    Returns:
        list of tuple:
        ``(doc_id, raw_score)`` pairs, best first, ties by ascending
        ``doc_id``.

    Raises:
        finder.errors.UnknownFieldError:
            A field is not searchable.
    """
    if top_k < 1:
        raise ValueError('top_k must be positive')

    return rank_scores(index.score_metadata(query_terms, fields,
                                            candidate_filter=candidate_filter),
                       top_k)
