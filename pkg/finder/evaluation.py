"""Offline benchmarking: relevance metrics, semantic certainty and latency.

Runs and relevance judgments use TREC-style text files. Queries are JSONL.
Relevance is graded for nDCG and binary (relevance > 0) for every other
metric. Documents without a judgment are not relevant.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import (Any,
                    Iterable,
                    Mapping,
                    Optional,
                    Sequence,
                    TextIO,
                    TYPE_CHECKING)

import numpy as np

from finder.dense import DenseIndex, Embedder, is_zero_vector
from finder.errors import (DataError,
                           EmptyCutoffsError,
                           EmptyIndexError,
                           FinderError,
                           MissingQrelsError,
                           ParseError)
from finder.ingest import read_lines
from finder.models import StrEnum
from finder.query import Glossary, expand_glossary
from finder.rank import TIMED_STAGES, SearchEngine, SearchMode

if TYPE_CHECKING:
    from finder.storage import IndexBundle


logger = logging.getLogger(__name__)


#: The depth used for coverage and rank-range buckets.
COVERAGE_DEPTH = 100

#: Inclusive rank ranges reported in the rank-range distribution.
RANK_RANGES: Sequence[tuple[str, int, int]] = (
    ('top_10', 1, 10),
    ('top_11_20', 11, 20),
    ('top_21_50', 21, 50),
    ('top_51_100', 51, 100),
)


class FailureClass(StrEnum):
    """Why a benchmark query produced no usable results."""

    EMPTY_RESULTS = 'empty_results'
    PARSE_ERROR = 'parse_error'
    SEARCH_ERROR = 'search_error'


class CertaintyClass(StrEnum):
    """How well-defined a query is."""

    FACTUAL = 'factual'
    CONCEPTUAL = 'conceptual'
    AMBIGUOUS = 'ambiguous'


#
# Input files
#

@dataclass
class QrelSet:
    """Graded relevance judgments."""

    #: Query ID to document number to relevance.
    judgments: dict[str, dict[str, int]] = field(default_factory=dict)

    def __contains__(self, query_id: object) -> bool:
        return query_id in self.judgments

    def __len__(self) -> int:
        return len(self.judgments)

    def relevant(self, query_id: str) -> set[str]:
        """Return the documents judged relevant for a query.

        Args:
            query_id (str):
                The query ID.

        Returns:
            set of str:
            Document numbers with relevance above 0.
        """
        return {
            doc
            for doc, rel in self.judgments.get(query_id, {}).items()
            if rel > 0
        }


@dataclass(frozen=True)
class BenchmarkQuery:
    """A query to benchmark."""

    query_id: str
    text: str
    filters: Mapping[str, str] = field(default_factory=dict)


def _iter_lines(
    source: Path | Iterable[str],
) -> tuple[str, Iterable[str]]:
    if isinstance(source, (str, Path)):
        path = Path(source)

        try:
            lines = read_lines(path)
        except OSError as e:
            raise ParseError(source=str(path),
                             line_number=0,
                             reason=e.strerror or str(e))

        return str(path), lines

    return '<input>', source


def parse_qrels(source: Path | Iterable[str]) -> QrelSet:
    """Parse TREC-style relevance judgments.

    Each line is ``query_id 0 doc_external_id relevance``. Blank lines are
    skipped.

    Args:
        source (pathlib.Path or iterable of str):
            The qrels file, or its lines.

    Returns:
        QrelSet:
        The judgments.

    Raises:
        finder.errors.ParseError:
            A line was malformed.
    """
    name, lines = _iter_lines(source)
    qrels = QrelSet()

    for line_number, line in enumerate(lines, start=1):
        parts = line.split()

        if not parts:
            continue

        if len(parts) != 4:
            raise ParseError(source=name,
                             line_number=line_number,
                             reason=f'expected 4 fields, found {len(parts)}')

        query_id, _, doc_id, relevance = parts

        try:
            rel = int(relevance)
        except ValueError:
            rel = -1

        if rel < 0:
            raise ParseError(
                source=name,
                line_number=line_number,
                reason=f'relevance {relevance!r} is not an integer >= 0')

        qrels.judgments.setdefault(query_id, {})[doc_id] = rel

    return qrels


def parse_queries(source: Path | Iterable[str]) -> list[BenchmarkQuery]:
    """Parse a JSONL queries file.

    Each line is an object with ``query_id``, ``text`` and optional
    ``filters``. Blank lines are skipped.

    Args:
        source (pathlib.Path or iterable of str):
            The queries file, or its lines.

    Returns:
        list of BenchmarkQuery:
        The queries, in file order.

    Raises:
        finder.errors.ParseError:
            A line was malformed.
    """
    name, lines = _iter_lines(source)
    queries: list[BenchmarkQuery] = []

    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue

        try:
            data = json.loads(line)
        except ValueError as e:
            raise ParseError(source=name, line_number=line_number,
                             reason=str(e))

        filters = {}

        if isinstance(data, dict):
            filters = data.get('filters') or {}

        if (not isinstance(data, dict) or
            not isinstance(data.get('query_id'), str) or
            not isinstance(data.get('text'), str) or
            not isinstance(filters, dict) or
            not all(isinstance(value, str) for value in filters.values())):
            raise ParseError(
                source=name,
                line_number=line_number,
                reason='expected {"query_id": str, "text": str, '
                       '"filters": {str: str}}')

        queries.append(BenchmarkQuery(query_id=data['query_id'],
                                      text=data['text'],
                                      filters=filters))

    return queries


def write_run(
    run: Mapping[str, Sequence[tuple[str, float]]],
    fp: TextIO,
    run_tag: str = 'finder',
) -> None:
    """Write a run in TREC format.

    Each line is ``query_id doc_external_id rank score run_tag``.

    Args:
        run (dict):
            Query ID to ``(doc_external_id, score)`` pairs, best first.

        fp (io.TextIOBase):
            The stream to write to.

        run_tag (str, optional):
            The run tag.
    """
    for query_id, hits in run.items():
        for rank, (doc_id, score) in enumerate(hits, start=1):
            fp.write('%s %s %d %.6f %s\n'
                     % (query_id, doc_id, rank, score, run_tag))


#
# Relevance metrics
#

@dataclass(frozen=True)
class QueryMetrics:
    """Metrics for one query."""

    precision: Mapping[int, float]
    recall: Mapping[int, float]
    ndcg: Mapping[int, float]
    reciprocal_rank: float
    average_precision: float

    #: The 1-based ranks of relevant documents in the run.
    relevant_ranks: Sequence[int]

    def to_dict(self) -> dict[str, Any]:
        return {
            'precision': {str(k): v for k, v in self.precision.items()},
            'recall': {str(k): v for k, v in self.recall.items()},
            'ndcg': {str(k): v for k, v in self.ndcg.items()},
            'reciprocal_rank': self.reciprocal_rank,
            'average_precision': self.average_precision,
        }


@dataclass(frozen=True)
class MetricsReport:
    """Per-query and mean relevance metrics."""

    cutoffs: Sequence[int]
    per_query: Mapping[str, QueryMetrics]
    precision: Mapping[int, float]
    recall: Mapping[int, float]
    ndcg: Mapping[int, float]
    mrr: float
    map: float

    #: The share of queries with a relevant document in the top 100.
    coverage: float

    #: The share of all relevant documents found in each rank range.
    rank_ranges: Mapping[str, float]

    def to_dict(self) -> dict[str, Any]:
        """Return the report as a serializable dictionary.

        Returns:
            dict:
            The report.
        """
        return {
            'cutoffs': list(self.cutoffs),
            'precision': {str(k): v for k, v in self.precision.items()},
            'recall': {str(k): v for k, v in self.recall.items()},
            'ndcg': {str(k): v for k, v in self.ndcg.items()},
            'mrr': self.mrr,
            'map': self.map,
            'coverage': self.coverage,
            'rank_ranges': dict(self.rank_ranges),
            'per_query': {
                query_id: metrics.to_dict()
                for query_id, metrics in self.per_query.items()
            },
        }


def _dcg(gains: Iterable[int]) -> float:
    return math.fsum(
        (2 ** rel - 1) / math.log2(i + 1)
        for i, rel in enumerate(gains, start=1)
    )


def _query_metrics(
    ranked: Sequence[str],
    judgments: Mapping[str, int],
    cutoffs: Sequence[int],
) -> QueryMetrics:
    relevant = {doc for doc, rel in judgments.items() if rel > 0}
    hits = [doc in relevant for doc in ranked]
    relevant_ranks = [rank for rank, hit in enumerate(hits, start=1) if hit]
    ideal = sorted(judgments.values(), reverse=True)
    precision: dict[int, float] = {}
    recall: dict[int, float] = {}
    ndcg: dict[int, float] = {}

    for k in cutoffs:
        found = sum(hits[:k])
        precision[k] = found / k
        recall[k] = found / len(relevant) if relevant else 0.0
        idcg = _dcg(ideal[:k])
        ndcg[k] = (_dcg(judgments.get(doc, 0) for doc in ranked[:k]) / idcg
                   if idcg > 0 else 0.0)

    if relevant:
        average_precision = math.fsum(
            i / rank
            for i, rank in enumerate(relevant_ranks, start=1)
        ) / len(relevant)
    else:
        average_precision = 0.0

    return QueryMetrics(
        precision=precision,
        recall=recall,
        ndcg=ndcg,
        reciprocal_rank=1.0 / relevant_ranks[0] if relevant_ranks else 0.0,
        average_precision=average_precision,
        relevant_ranks=relevant_ranks)


def _mean(values: Iterable[float]) -> float:
    values = list(values)

    return math.fsum(values) / len(values) if values else 0.0


def compute_metrics(
    run: Mapping[str, Sequence[str]],
    qrels: QrelSet,
    cutoffs: Sequence[int],
) -> MetricsReport:
    """Compute relevance metrics for a run.

    nDCG uses ``2^rel - 1`` gains and a ``1 / log2(i + 1)`` discount, with
    the ideal ordering taken over the judged documents. A document listed
    more than once counts at its first rank only.

    Args:
        run (dict):
            Query ID to ranked document numbers.

        qrels (QrelSet):
            The relevance judgments.

        cutoffs (list of int):
            Rank cutoffs for Precision, Recall and nDCG.

    Returns:
        MetricsReport:
        The metrics.

    Raises:
        finder.errors.EmptyCutoffsError:
            No cutoffs were given.

        finder.errors.MissingQrelsError:
            A query in the run had no judgments.
    """
    if not cutoffs:
        raise EmptyCutoffsError()

    if any(k < 1 for k in cutoffs):
        raise ValueError('cutoffs must be positive')

    cutoffs = sorted(set(cutoffs))
    per_query: dict[str, QueryMetrics] = {}

    for query_id, ranked in run.items():
        if not qrels.judgments.get(query_id):
            raise MissingQrelsError(query_id=query_id)

        per_query[query_id] = _query_metrics(list(dict.fromkeys(ranked)),
                                             qrels.judgments[query_id],
                                             cutoffs)

    queries = list(per_query.values())
    total_relevant = sum(len(qrels.relevant(query_id))
                         for query_id in per_query)
    rank_ranges: dict[str, float] = {}

    for name, low, high in RANK_RANGES:
        in_range = sum(
            1
            for metrics in queries
            for rank in metrics.relevant_ranks
            if low <= rank <= high
        )
        rank_ranges[name] = (in_range / total_relevant
                             if total_relevant else 0.0)

    rank_ranges['found'] = (
        sum(1
            for metrics in queries
            for rank in metrics.relevant_ranks
            if rank <= COVERAGE_DEPTH) / total_relevant
        if total_relevant else 0.0)

    return MetricsReport(
        cutoffs=cutoffs,
        per_query=per_query,
        precision={k: _mean(m.precision[k] for m in queries) for k in cutoffs},
        recall={k: _mean(m.recall[k] for m in queries) for k in cutoffs},
        ndcg={k: _mean(m.ndcg[k] for m in queries) for k in cutoffs},
        mrr=_mean(m.reciprocal_rank for m in queries),
        map=_mean(m.average_precision for m in queries),
        coverage=_mean(
            1.0 if m.relevant_ranks and m.relevant_ranks[0] <= COVERAGE_DEPTH
            else 0.0
            for m in queries),
        rank_ranges=rank_ranges)


#
# Semantic certainty
#

def certainty_score(
    query_text: str,
    embedder: Embedder,
    dense_index: DenseIndex,
    k: int,
    *,
    glossary: Optional[Glossary] = None,
    glossary_threshold: float = 0.15,
) -> float:
    """Score how well-defined a query is.

    The score blends two parts equally:

    * Density: the mean cosine between the query and its ``k`` nearest chunk
      vectors (or every vector, when there are fewer), clamped to ``[0, 1]``.

    * Stability: 1 minus the dispersion of the query's glossary
      reformulations, where dispersion is the mean cosine distance of each
      reformulation's embedding from their normalized centroid. A query with
      a single reformulation is fully stable.

    Args:
        query_text (str):
            The query.

        embedder (finder.dense.Embedder):
            The embedder the index was built with.

        dense_index (finder.dense.DenseIndex):
            The chunk vectors.

        k (int):
            The number of neighbors for density.

        glossary (finder.query.Glossary, optional):
            The glossary used to reformulate the query.

        glossary_threshold (float, optional):
            The minimum cosine for choosing between glossary expansions.

    Returns:
        float:
        The certainty, in ``[0, 1]``.

    Raises:
        finder.errors.EmptyIndexError:
            The index has no vectors.
    """
    if k < 1:
        raise ValueError('k must be positive')

    if len(dense_index) == 0:
        raise EmptyIndexError()

    neighbors = dense_index.knn_exact(embedder.embed(query_text), k)
    density = (math.fsum(cosine for _, cosine in neighbors) / len(neighbors)
               if neighbors else 0.0)
    density = min(1.0, max(0.0, density))

    reformulations = expand_glossary(query_text, glossary, embedder,
                                     glossary_threshold)
    stability = 1.0

    if len(reformulations) > 1:
        vectors = embedder.embed_many(reformulations).astype(np.float64)
        centroid = vectors.mean(axis=0)

        if is_zero_vector(centroid):
            stability = 0.0
        else:
            cosines = vectors @ (centroid / np.linalg.norm(centroid))
            dispersion = float(np.mean(1.0 - cosines))
            stability = min(1.0, max(0.0, 1.0 - dispersion))

    return 0.5 * density + 0.5 * stability


def classify_certainty(
    score: float,
    conceptual_threshold: float = 0.60,
    factual_threshold: float = 0.765,
) -> CertaintyClass:
    """Classify a certainty score.

    ``[0, conceptual)`` is ambiguous, ``[conceptual, factual)`` is
    conceptual and ``[factual, 1]`` is factual.

    Args:
        score (float):
            The certainty.

        conceptual_threshold (float, optional):
            The lowest conceptual score.

        factual_threshold (float, optional):
            The lowest factual score.

    Returns:
        CertaintyClass:
        The class.
    """
    if score >= factual_threshold:
        return CertaintyClass.FACTUAL
    elif score >= conceptual_threshold:
        return CertaintyClass.CONCEPTUAL
    else:
        return CertaintyClass.AMBIGUOUS


@dataclass(frozen=True)
class CertaintyReport:
    """Certainty scores and classes for a set of queries."""

    scores: Mapping[str, float]
    classes: Mapping[str, CertaintyClass]
    conceptual_threshold: float
    factual_threshold: float

    @property
    def mean(self) -> float:
        return _mean(self.scores.values())

    def to_dict(self) -> dict[str, Any]:
        counts = dict.fromkeys((cls.value for cls in CertaintyClass), 0)

        for certainty_class in self.classes.values():
            counts[certainty_class.value] += 1

        return {
            'scores': dict(self.scores),
            'classes': {
                query_id: certainty_class.value
                for query_id, certainty_class in self.classes.items()
            },
            'class_counts': counts,
            'mean': self.mean,
            'thresholds': {
                'conceptual': self.conceptual_threshold,
                'factual': self.factual_threshold,
            },
        }


#
# Benchmark runs
#

@dataclass(frozen=True)
class LatencyReport:
    """Per-stage latency and outcome counts."""

    #: Stage to ``{mean, p50, p95, max}`` in milliseconds.
    stages: Mapping[str, Mapping[str, float]]
    query_count: int
    success_rate: float
    failures: Mapping[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            'stages': {
                stage: dict(summary)
                for stage, summary in self.stages.items()
            },
            'query_count': self.query_count,
            'success_rate': self.success_rate,
            'failures': dict(self.failures),
        }


@dataclass(frozen=True)
class BenchmarkReport:
    """Everything a benchmark run produces."""

    metrics: MetricsReport
    certainty: CertaintyReport
    latency: LatencyReport

    #: Query ID to ``(document number, score)`` pairs, best first.
    run: Mapping[str, Sequence[tuple[str, float]]]

    def to_dict(self) -> dict[str, Any]:
        """Return the three reports as a serializable dictionary.

        Returns:
            dict:
            The metrics, certainty and latency reports.
        """
        return {
            'metrics': self.metrics.to_dict(),
            'certainty': self.certainty.to_dict(),
            'latency': self.latency.to_dict(),
        }


@dataclass(frozen=True)
class _QueryOutcome:
    hits: Sequence[tuple[str, float]]
    timings_ms: Mapping[str, float]
    failure: Optional[FailureClass]


def _summarize(values: Sequence[float]) -> dict[str, float]:
    if not values:
        return dict.fromkeys(('mean', 'p50', 'p95', 'max'), 0.0)

    array = np.asarray(values, dtype=np.float64)

    return {
        'mean': float(array.mean()),
        'p50': float(np.percentile(array, 50)),
        'p95': float(np.percentile(array, 95)),
        'max': float(array.max()),
    }


def _run_query(
    engine: SearchEngine,
    query: BenchmarkQuery,
    mode: SearchMode,
    top_k: int,
) -> _QueryOutcome:
    failure: Optional[FailureClass] = None
    hits: list[tuple[str, float]] = []
    timings: dict[str, float] = dict.fromkeys(TIMED_STAGES, 0.0)

    try:
        result = engine.search(query.text, query.filters, mode, top_k)
    except DataError:
        failure = FailureClass.PARSE_ERROR
    except FinderError:
        logger.exception('Search failed for query %s', query.query_id)
        failure = FailureClass.SEARCH_ERROR
    else:
        timings = dict(result.timings_ms)
        hits = [(hit.document_number, hit.score) for hit in result.hits]

        if not hits:
            failure = FailureClass.EMPTY_RESULTS

    if failure is not None:
        logger.warning('Benchmark query %s failed: %s',
                       query.query_id, failure.value,
                       extra={
                           'event': 'benchmark.failure',
                           'query_id': query.query_id,
                           'failure_class': failure.value,
                       })

    timings['total'] = math.fsum(timings.values())

    return _QueryOutcome(hits=hits, timings_ms=timings, failure=failure)


def benchmark(
    bundle: IndexBundle,
    queries: Sequence[BenchmarkQuery],
    qrels: QrelSet,
    cutoffs: Optional[Sequence[int]] = None,
    mode: SearchMode | str = SearchMode.HYBRID,
    *,
    top_k: Optional[int] = None,
    parallel: bool = False,
    workers: int = 8,
) -> BenchmarkReport:
    """Run and evaluate a set of queries.

    Args:
        bundle (finder.storage.IndexBundle):
            The indexes to search.

        queries (list of BenchmarkQuery):
            The queries.

        qrels (QrelSet):
            The relevance judgments. Every query must have some.

        cutoffs (list of int, optional):
            Rank cutoffs. Defaults to the bundle's evaluation settings.

        mode (finder.rank.SearchMode, optional):
            The search mode.

        top_k (int, optional):
            Hits retrieved per query. Defaults to the bundle's evaluation
            settings.

        parallel (bool, optional):
            Whether to run queries on a thread pool. The metrics are the
            same either way.

        workers (int, optional):
            The number of threads for parallel runs.

    Returns:
        BenchmarkReport:
        The run and its reports.

    Raises:
        finder.errors.EmptyCutoffsError:
            No cutoffs were given.

        finder.errors.MissingQrelsError:
            A query had no judgments.
    """
    eval_config = bundle.config.eval
    mode = SearchMode(mode)

    if cutoffs is None:
        cutoffs = eval_config.cutoffs

    if top_k is None:
        top_k = eval_config.top_k

    if not cutoffs:
        raise EmptyCutoffsError()

    for query in queries:
        if not qrels.judgments.get(query.query_id):
            raise MissingQrelsError(query_id=query.query_id)

    engine = SearchEngine(bundle)

    if parallel:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(
                lambda query: _run_query(engine, query, mode, top_k),
                queries))
    else:
        outcomes = [
            _run_query(engine, query, mode, top_k)
            for query in queries
        ]

    run = {
        query.query_id: list(outcome.hits)
        for query, outcome in zip(queries, outcomes)
    }
    metrics = compute_metrics(
        {
            query_id: [doc for doc, _ in hits]
            for query_id, hits in run.items()
        },
        qrels,
        cutoffs)

    scores: dict[str, float] = {}

    if len(bundle.dense):
        for query in queries:
            scores[query.query_id] = certainty_score(
                query.text,
                bundle.embedder,
                bundle.dense,
                eval_config.certainty_k,
                glossary=bundle.glossary,
                glossary_threshold=bundle.config.rank.glossary_threshold)

    certainty = CertaintyReport(
        scores=scores,
        classes={
            query_id: classify_certainty(score,
                                         eval_config.conceptual_threshold,
                                         eval_config.factual_threshold)
            for query_id, score in scores.items()
        },
        conceptual_threshold=eval_config.conceptual_threshold,
        factual_threshold=eval_config.factual_threshold)

    failures = dict.fromkeys((cls.value for cls in FailureClass), 0)

    for outcome in outcomes:
        if outcome.failure is not None:
            failures[outcome.failure.value] += 1

    stage_names = (*TIMED_STAGES, 'total')
    latency = LatencyReport(
        stages={
            stage: _summarize([outcome.timings_ms.get(stage, 0.0)
                               for outcome in outcomes])
            for stage in stage_names
        },
        query_count=len(outcomes),
        success_rate=(
            sum(outcome.failure is None for outcome in outcomes) /
            len(outcomes)
            if outcomes else 0.0),
        failures=failures)

    logger.info('Benchmarked %d queries', len(outcomes),
                extra={
                    'event': 'benchmark.completed',
                    'queries': len(outcomes),
                    'failures': failures,
                })

    return BenchmarkReport(metrics=metrics,
                           certainty=certainty,
                           latency=latency,
                           run=run)


def run_benchmark(
    bundle: IndexBundle,
    queries_file: Path,
    qrels_file: Path,
    cutoffs: Optional[Sequence[int]] = None,
    mode: SearchMode | str = SearchMode.HYBRID,
    **kwargs,
) -> BenchmarkReport:
    """Benchmark a bundle against query and qrels files.

    See :py:func:`benchmark` for the keyword arguments.

    Args:
        bundle (finder.storage.IndexBundle):
            The indexes to search.

        queries_file (pathlib.Path):
            The JSONL queries file.

        qrels_file (pathlib.Path):
            The TREC-style qrels file.

        cutoffs (list of int, optional):
            Rank cutoffs.

        mode (finder.rank.SearchMode, optional):
            The search mode.

        **kwargs (dict):
            Additional arguments for :py:func:`benchmark`.

    Returns:
        BenchmarkReport:
        The run and its reports.

    Raises:
        finder.errors.ParseError:
            A file could not be read or parsed.
    """
    return benchmark(bundle,
                     parse_queries(Path(queries_file)),
                     parse_qrels(Path(qrels_file)),
                     cutoffs,
                     mode,
                     **kwargs)
