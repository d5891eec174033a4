"""The retrieval pipeline and its scoring functions.

A search runs through these stages:

1. The query is parsed into text, filters and reformulations.
2. If the raw query equals a document number, dataset name or title, those
   documents are returned with a perfect score and nothing else runs.
3. Filters select the candidate documents.
4. For each reformulation, the lexical channels (chunk text and metadata
   keywords) and the dense channel retrieve ranked lists.
5. Reciprocal rank fusion of the channel lists selects a candidate pool.
6. Raw lexical scores are normalized over the pool by dividing by the pool
   maximum.
7. The query text is fuzzy-matched against each title.
8. The final score is 30% fuzzy match and 70% normalized lexical score.
"""

from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import (Any,
                    Collection,
                    Iterable,
                    Iterator,
                    Mapping,
                    Optional,
                    Sequence,
                    TYPE_CHECKING)

from rapidfuzz import fuzz

from finder.dense import is_zero_vector
from finder.errors import ScoreRangeError, UnknownFieldError
from finder.models import Document, METADATA_FIELDS, StrEnum
from finder.query import QueryContext, StructuredQuery, parse_query
from finder.sparse import SparseIndex, rank_scores
from finder.text import normalize_identifier, tokenize

if TYPE_CHECKING:
    from finder.storage import IndexBundle


logger = logging.getLogger(__name__)


#: The share of the final score given to the fuzzy title match.
FUZZY_WEIGHT = 0.3

#: The share of the final score given to the normalized lexical score.
SPARSE_WEIGHT = 0.7

#: Names of the timed stages reported with each search.
TIMED_STAGES: Sequence[str] = ('parse', 'exact', 'sparse', 'dense', 'fuse')


class MatchedVia(StrEnum):
    """How a hit was found."""

    #: The query equals one of the document's identifying fields.
    EXACT_MATCH = 'exact_match'

    #: Hybrid or lexical retrieval over the document text.
    HYBRID = 'hybrid'

    #: Only the metadata keyword channel found the document.
    METADATA_KEYWORD = 'metadata_keyword'

    #: Dense-only retrieval.
    DENSE = 'dense'


class SearchMode(StrEnum):
    """Which retrieval channels a search uses."""

    HYBRID = 'hybrid'
    SPARSE = 'sparse'
    DENSE = 'dense'

    #: Hybrid when the query has a usable embedding, otherwise sparse.
    AUTO = 'auto'


@dataclass(frozen=True)
class ScoreComponents:
    """The per-stage scores of a hit."""

    #: The best raw lexical score over the document's chunks.
    sparse_raw: float = 0.0

    #: :py:attr:`sparse_raw` divided by the pool maximum.
    sparse_norm: float = 0.0

    #: The best cosine between the query and the document's chunks.
    dense_cos: float = 0.0

    #: The reciprocal rank fusion score.
    rrf: float = 0.0

    #: The fuzzy title match, scaled to ``[0, 1]``.
    fuzzy: float = 0.0

    final: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            'sparse_raw': self.sparse_raw,
            'sparse_norm': self.sparse_norm,
            'dense_cos': self.dense_cos,
            'rrf': self.rrf,
            'fuzzy': self.fuzzy,
        }


@dataclass(frozen=True)
class ScoredHit:
    """A search result."""

    doc_id: int
    document_number: str
    title: str
    components: ScoreComponents
    matched_via: MatchedVia

    #: The 1-based position in the results.
    rank: int

    @property
    def score(self) -> float:
        return self.components.final

    def to_dict(self) -> dict[str, Any]:
        """Return the hit as a serializable dictionary.

        Returns:
            dict:
            The hit.
        """
        return {
            'doc_id': self.doc_id,
            'document_number': self.document_number,
            'title': self.title,
            'score': self.score,
            'components': self.components.to_dict(),
            'matched_via': self.matched_via.value,
            'rank': self.rank,
        }


@dataclass
class SearchResult:
    """The outcome of a search."""

    hits: list[ScoredHit] = field(default_factory=list)

    #: Wall-clock time per stage, in milliseconds.
    timings_ms: dict[str, float] = field(
        default_factory=lambda: dict.fromkeys(TIMED_STAGES, 0.0))

    #: The filters that restricted the candidates.
    applied_filters: dict[str, str] = field(default_factory=dict)

    #: How many times each stage ran. Skipped stages are 0.
    stages: dict[str, int] = field(default_factory=lambda: {
        'parse': 0,
        'exact': 0,
        'filter': 0,
        'sparse': 0,
        'metadata_keyword': 0,
        'dense': 0,
        'fuse': 0,
        'fuzzy': 0,
    })

    #: The parsed query.
    query: Optional[StructuredQuery] = None

    #: The mode the search actually ran in.
    mode: Optional[SearchMode] = None

    def to_dict(self) -> dict[str, Any]:
        """Return the result as a serializable dictionary.

        Returns:
            dict:
            The hits, timings, applied filters and stage counters.
        """
        return {
            'hits': [hit.to_dict() for hit in self.hits],
            'timings_ms': dict(self.timings_ms),
            'applied_filters': dict(self.applied_filters),
            'stages': dict(self.stages),
            'mode': self.mode.value if self.mode else None,
            'query': self.query.to_dict() if self.query else None,
        }


#
# Scoring functions
#

def build_exact_match_table(
    documents: Iterable[Document],
) -> dict[str, list[int]]:
    """Map each normalized identifying field value to its documents.

    Args:
        documents (iterable of finder.models.Document):
            The corpus.

    Returns:
        dict:
        A mapping of normalized document number, dataset name or title to
        the sorted IDs of documents with that value.
    """
    table: dict[str, set[int]] = {}

    for document in documents:
        metadata = document.metadata

        for value in (metadata.dataset_document_number,
                      metadata.dataset_name,
                      metadata.dataset_file_title):
            table.setdefault(normalize_identifier(value), set()) \
                .add(document.doc_id)

    return {
        key: sorted(doc_ids)
        for key, doc_ids in table.items()
    }


def exact_match_lookup(
    raw_query: str,
    corpus: Iterable[Document] | Mapping[str, Sequence[int]],
) -> list[int]:
    """Return documents identified exactly by the query.

    The query matches when, after casefolding, trimming and collapsing
    whitespace, it equals a document's number, dataset name or title.

    Args:
        raw_query (str):
            The query as typed.

        corpus (list of finder.models.Document or dict):
            The documents, or a table from :py:func:`build_exact_match_table`.

    Returns:
        list of int:
        The matching document IDs, in ascending order.
    """
    if not isinstance(corpus, Mapping):
        corpus = build_exact_match_table(corpus)

    key = normalize_identifier(raw_query)

    if not key:
        return []

    return list(corpus.get(key, []))


def normalize_scores(raw: Sequence[float]) -> list[float]:
    """Divide each score by the maximum.

    Negative scores become 0. If the maximum isn't positive, every score
    becomes 0.

    Args:
        raw (list of float):
            The raw scores.

    Returns:
        list of float:
        The normalized scores, in ``[0, 1]``. The maximum maps to exactly 1.
    """
    if not raw:
        return []

    top = max(raw)

    if not top > 0.0:
        return [0.0] * len(raw)

    return [max(0.0, score) / top for score in raw]


def token_set_ratio(
    a: str,
    b: str,
) -> float:
    """Return the fuzzy token-set similarity of two strings.

    Both strings are tokenized with the engine tokenizer first, so case and
    punctuation are ignored.

    Args:
        a (str):
            The first string.

        b (str):
            The second string.

    Returns:
        float:
        The similarity, in ``[0, 100]``. If either string has no tokens,
        the intersection and one side's combined string are both empty,
        so the result is 100.
    """
    tokens_a = sorted(set(tokenize(a)))
    tokens_b = sorted(set(tokenize(b)))

    # RapidFuzz returns 0 when only one side is empty.
    if not tokens_a or not tokens_b:
        return 100.0

    return float(fuzz.token_set_ratio(' '.join(tokens_a),
                                      ' '.join(tokens_b)))


def rrf_fuse(
    lists: Iterable[Sequence[int]],
    k: int = 60,
) -> list[tuple[int, float]]:
    """Fuse ranked lists by reciprocal rank.

    Each document scores ``1 / (k + rank)`` for every list it appears in,
    with 1-based ranks. Only a document's first appearance in a list
    counts.

    Args:
        lists (iterable of list of int):
            The ranked document ID lists.

        k (int, optional):
            The rank offset.

    Returns:
        list of tuple:
        ``(doc_id, score)`` pairs, best first, ties by ascending ``doc_id``.
    """
    if k < 1:
        raise ValueError('k must be positive')

    scores: dict[int, float] = {}

    for ranked in lists:
        seen: set[int] = set()

        for rank, doc_id in enumerate(ranked, start=1):
            if doc_id not in seen:
                seen.add(doc_id)
                scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (k + rank)

    return rank_scores(scores)


def fuse_weighted(
    fuzzy: float,
    sparse_norm: float,
) -> float:
    """Combine a fuzzy title score and a normalized lexical score.

    Args:
        fuzzy (float):
            The fuzzy match, in ``[0, 100]``.

        sparse_norm (float):
            The normalized lexical score, in ``[0, 1]``.

    Returns:
        float:
        ``0.3 * fuzzy / 100 + 0.7 * sparse_norm``.

    Raises:
        finder.errors.ScoreRangeError:
            An input was out of range.
    """
    if not 0.0 <= fuzzy <= 100.0:
        raise ScoreRangeError(name='fuzzy', value=fuzzy, low=0, high=100)

    if not 0.0 <= sparse_norm <= 1.0:
        raise ScoreRangeError(name='sparse_norm', value=sparse_norm,
                              low=0, high=1)

    return FUZZY_WEIGHT * (fuzzy / 100.0) + SPARSE_WEIGHT * sparse_norm


def apply_filters(
    filters: Mapping[str, str],
    index: SparseIndex,
) -> frozenset[int]:
    """Return the documents matching every filter.

    Args:
        filters (dict):
            A mapping of metadata field to required value. Values compare
            case-insensitively.

        index (finder.sparse.SparseIndex):
            The index holding the metadata.

    Returns:
        frozenset of int:
        The matching document IDs. No filters match every document.

    Raises:
        finder.errors.UnknownFieldError:
            A field is not in the metadata schema.
    """
    for field_name in filters:
        if field_name not in METADATA_FIELDS:
            raise UnknownFieldError(field_name=field_name)

    result = index.all_doc_ids

    for field_name, value in filters.items():
        result = result & index.docs_with_value(field_name, value)

    return result


#
# The pipeline
#

class SearchEngine:
    """Runs searches against an :py:class:`~finder.storage.IndexBundle`.

    The engine holds only immutable state, so one instance can serve any
    number of concurrent searches.

    Version Added:
        0.9
    """

    def __init__(
        self,
        bundle: IndexBundle,
    ) -> None:
        """Initialize the engine.

        Args:
            bundle (finder.storage.IndexBundle):
                The indexes and corpus to search.
        """
        self.bundle = bundle
        self.documents = {
            document.doc_id: document
            for document in bundle.documents
        }
        self.exact_table = build_exact_match_table(bundle.documents)
        self.rank_config = bundle.config.rank
        self.query_context = QueryContext(
            glossary=bundle.glossary,
            embedder=bundle.embedder,
            vocabularies=bundle.vocabularies,
            glossary_threshold=bundle.config.rank.glossary_threshold)

    def search(
        self,
        raw_query: str,
        user_filters: Optional[Mapping[str, str]] = None,
        mode: SearchMode | str = SearchMode.HYBRID,
        top_k: int = 10,
    ) -> SearchResult:
        """Search the corpus.

        Args:
            raw_query (str):
                The query as typed.

            user_filters (dict, optional):
                Filters that take precedence over any in the query.

            mode (SearchMode, optional):
                The retrieval channels to use.

            top_k (int, optional):
                The maximum number of hits.

        Returns:
            SearchResult:
            The hits, best first, with timings and stage counters.

        Raises:
            finder.errors.EmptyQueryError:
                The query was blank.

            finder.errors.UnknownFieldError:
                A filter named a field outside the metadata schema.
        """
        if top_k < 1:
            raise ValueError('top_k must be positive')

        mode = SearchMode(mode)
        result = SearchResult()
        timings = result.timings_ms
        stages = result.stages

        with _timed(timings, 'parse'):
            parsed = parse_query(raw_query, user_filters,
                                 self.query_context,
                                 parser=self.rank_config.intent_parser)

        stages['parse'] += 1
        result.query = parsed

        with _timed(timings, 'exact'):
            exact_ids = exact_match_lookup(raw_query, self.exact_table)

        stages['exact'] += 1

        if exact_ids:
            result.hits = [
                self._make_hit(doc_id,
                               ScoreComponents(final=1.0),
                               MatchedVia.EXACT_MATCH,
                               rank)
                for rank, doc_id in enumerate(exact_ids[:top_k], start=1)
            ]
            self._log_search(result)

            return result

        result.applied_filters = dict(parsed.filters)

        if not parsed.main_query:
            self._log_search(result)

            return result

        with _timed(timings, 'sparse'):
            candidates = apply_filters(parsed.filters, self.bundle.sparse)

        stages['filter'] += 1

        if candidates:
            self._retrieve(result, parsed,
                           candidates if parsed.filters else None,
                           mode, top_k)

        self._log_search(result)

        return result

    def _resolve_mode(
        self,
        mode: SearchMode,
        query_vectors: Sequence[Any],
    ) -> SearchMode:
        if mode != SearchMode.AUTO:
            return mode

        if len(self.bundle.dense) and any(
                not is_zero_vector(vector) for vector in query_vectors):
            return SearchMode.HYBRID

        return SearchMode.SPARSE

    def _retrieve(
        self,
        result: SearchResult,
        parsed: StructuredQuery,
        candidates: Optional[Collection[int]],
        mode: SearchMode,
        top_k: int,
    ) -> None:
        bundle = self.bundle
        timings = result.timings_ms
        stages = result.stages
        pool_size = self.rank_config.pool_factor * top_k
        reformulations = parsed.reformulations
        query_vectors = [
            bundle.embedder.embed(text)
            for text in reformulations
        ]
        mode = self._resolve_mode(mode, query_vectors)
        result.mode = mode
        use_sparse = mode in (SearchMode.HYBRID, SearchMode.SPARSE)
        use_dense = mode in (SearchMode.HYBRID, SearchMode.DENSE)

        sparse_raw: dict[int, float] = {}
        sparse_ranks: dict[int, int] = {}
        metadata_ranks: dict[int, int] = {}
        dense_ranks: dict[int, int] = {}
        dense_cos: dict[int, float] = {}

        if use_sparse:
            with _timed(timings, 'sparse'):
                for text in reformulations:
                    terms = tokenize(text)
                    scores = bundle.sparse.score_documents(
                        terms,
                        scorer=self.rank_config.scorer,
                        candidate_filter=candidates)
                    stages['sparse'] += 1

                    for doc_id, score in scores.items():
                        if score > sparse_raw.get(doc_id, -math.inf):
                            sparse_raw[doc_id] = score

                    _merge_ranks(sparse_ranks, rank_scores(scores, pool_size))

                    _merge_ranks(metadata_ranks, rank_scores(
                        bundle.sparse.score_metadata(
                            terms, candidate_filter=candidates),
                        pool_size))
                    stages['metadata_keyword'] += 1

        if use_dense and len(bundle.dense):
            with _timed(timings, 'dense'):
                chunk_fetch = pool_size * self.rank_config.pool_factor
                dense_vectors = [
                    vector
                    for vector in query_vectors
                    if not is_zero_vector(vector)
                ]

                for vector in dense_vectors:
                    ranked_docs: list[tuple[int, float]] = []
                    seen: set[int] = set()

                    for (doc_id, _), cosine in bundle.dense.search(
                            vector, chunk_fetch, candidates,
                            overfetch=self.rank_config.pool_factor):
                        if doc_id not in seen:
                            seen.add(doc_id)
                            ranked_docs.append((doc_id, cosine))

                    _merge_ranks(dense_ranks, ranked_docs[:pool_size])
                    stages['dense'] += 1

                # The fused pool only draws from ranked documents.
                ranked_doc_ids = (sparse_ranks.keys() |
                                  metadata_ranks.keys() |
                                  dense_ranks.keys())

                for vector in dense_vectors:
                    for doc_id, cosine in bundle.dense.doc_cosines(
                            vector, ranked_doc_ids).items():
                        if cosine > dense_cos.get(doc_id, -math.inf):
                            dense_cos[doc_id] = cosine

        with _timed(timings, 'fuse'):
            channels = [
                ranks
                for ranks in (sparse_ranks, metadata_ranks, dense_ranks)
                if ranks
            ]
            pool = rrf_fuse(
                (_ordered_by_rank(ranks) for ranks in channels),
                k=self.rank_config.rrf_k)[:pool_size]
            stages['fuse'] += 1

            pool_raw = [sparse_raw.get(doc_id, 0.0) for doc_id, _ in pool]
            pool_norm = normalize_scores(pool_raw)
            scored: list[tuple[tuple, ScoreComponents, MatchedVia, int]] = []

            for (doc_id, rrf), raw, norm in zip(pool, pool_raw, pool_norm):
                title = self.documents[doc_id].title
                ratio = token_set_ratio(parsed.main_query, title)
                cosine = dense_cos.get(doc_id, 0.0) if use_dense else 0.0

                if mode == SearchMode.DENSE:
                    final = min(1.0, max(0.0, cosine))
                    matched_via = MatchedVia.DENSE
                else:
                    final = fuse_weighted(ratio, norm)

                    if (doc_id in metadata_ranks and
                        doc_id not in sparse_ranks and
                        doc_id not in dense_ranks):
                        matched_via = MatchedVia.METADATA_KEYWORD
                    else:
                        matched_via = MatchedVia.HYBRID

                components = ScoreComponents(sparse_raw=raw,
                                             sparse_norm=norm,
                                             dense_cos=cosine,
                                             rrf=rrf,
                                             fuzzy=ratio / 100.0,
                                             final=final)
                scored.append(((-final, -rrf, -cosine, doc_id),
                               components, matched_via, doc_id))

            stages['fuzzy'] += len(scored)
            scored.sort(key=lambda item: item[0])

        result.hits = [
            self._make_hit(doc_id, components, matched_via, rank)
            for rank, (_, components, matched_via, doc_id)
            in enumerate(scored[:top_k], start=1)
        ]

    def _make_hit(
        self,
        doc_id: int,
        components: ScoreComponents,
        matched_via: MatchedVia,
        rank: int,
    ) -> ScoredHit:
        document = self.documents[doc_id]

        return ScoredHit(doc_id=doc_id,
                         document_number=document.document_number,
                         title=document.title,
                         components=components,
                         matched_via=matched_via,
                         rank=rank)

    def _log_search(
        self,
        result: SearchResult,
    ) -> None:
        extra: dict[str, Any] = {
            'event': 'search.completed',
            'hits': len(result.hits),
            'timings_ms': result.timings_ms,
            'stages': result.stages,
        }

        if not result.hits:
            extra['failure_class'] = 'empty_results'

        logger.info('Search returned %d hits', len(result.hits), extra=extra)


def search(
    engine: SearchEngine,
    raw_query: str,
    user_filters: Optional[Mapping[str, str]] = None,
    mode: SearchMode | str = SearchMode.HYBRID,
    top_k: int = 10,
) -> list[ScoredHit]:
    """Search the corpus and return only the hits.

    See :py:meth:`SearchEngine.search` for details.

    Args:
        engine (SearchEngine):
            The engine to search with.

        raw_query (str):
            The query as typed.

        user_filters (dict, optional):
            Filters that take precedence over any in the query.

        mode (SearchMode, optional):
            The retrieval channels to use.

        top_k (int, optional):
            The maximum number of hits.

    Returns:
        list of ScoredHit:
        The hits, best first.
    """
    return engine.search(raw_query, user_filters, mode, top_k).hits


@contextmanager
def _timed(
    timings: dict[str, float],
    stage: str,
) -> Iterator[None]:
    start = time.perf_counter()

    try:
        yield
    finally:
        timings[stage] += (time.perf_counter() - start) * 1000.0


def _merge_ranks(
    best_ranks: dict[int, int],
    ranked: Sequence[tuple[int, float]],
) -> None:
    for rank, (doc_id, _) in enumerate(ranked, start=1):
        if rank < best_ranks.get(doc_id, rank + 1):
            best_ranks[doc_id] = rank


def _ordered_by_rank(best_ranks: Mapping[int, int]) -> list[int]:
    return sorted(best_ranks, key=lambda doc_id: (best_ranks[doc_id], doc_id))
