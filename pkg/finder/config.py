"""Configuration for indexing, ranking, evaluation and serving.

Configuration is held in frozen dataclasses that validate themselves on
construction. :py:class:`EngineConfig` bundles everything that affects the
contents of an index, and is stored in each snapshot's manifest so that a
loaded snapshot embeds queries exactly as it embedded documents.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from finder.errors import ConfigurationError


def _check(
    condition: bool,
    reason: str,
) -> None:
    if not condition:
        raise ConfigurationError(reason=reason)


def _from_mapping(
    cls: type,
    data: Mapping[str, Any],
) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)

    if unknown:
        raise ConfigurationError(
            reason=f'unknown {cls.__name__} keys: {", ".join(unknown)}')

    return cls(**data)


@dataclass(frozen=True)
class IngestConfig:
    """Settings for turning corpus records into documents."""

    #: The maximum number of tokens in a chunk.
    max_chunk_tokens: int = 256

    #: The number of tokens shared by consecutive chunks.
    chunk_overlap_tokens: int = 32

    #: Vocabulary phrases per tag field, used for extractive tagging.
    gazetteer: Mapping[str, Sequence[str]] = field(default_factory=dict)

    #: Names of enrichers to run, in order.
    enrichers: Sequence[str] = ('detect-language', 'translate')

    def __post_init__(self) -> None:
        _check(self.max_chunk_tokens >= 1,
               'max_chunk_tokens must be positive')
        _check(0 <= self.chunk_overlap_tokens < self.max_chunk_tokens,
               'chunk_overlap_tokens must be in [0, max_chunk_tokens)')

        for field_name, phrases in self.gazetteer.items():
            _check(all(phrase.strip() for phrase in phrases),
                   f'gazetteer field "{field_name}" has an empty phrase')


@dataclass(frozen=True)
class DenseConfig:
    """Settings for the embedder and the HNSW graph."""

    #: The name of the registered embedder.
    embedder: str = 'hashing'

    #: The embedding dimension.
    dim: int = 256

    #: The hash seed for the hashing embedder.
    seed: int = 0x46494E44

    #: Surface-token to canonical-token substitutions for the embedder.
    synonyms: Mapping[str, str] = field(default_factory=dict)

    #: The maximum number of graph neighbors per node above layer 0.
    #:
    #: Layer 0 allows twice this many.
    m: int = 16

    #: The candidate list size when building the graph.
    ef_construction: int = 200

    #: The beam width when searching the graph.
    ef_search: int = 64

    #: Whether to build the HNSW graph at all.
    build_graph: bool = True

    #: The seed for HNSW level assignment.
    graph_seed: int = 0x46494E44

    def __post_init__(self) -> None:
        _check(self.dim >= 8, 'dim must be at least 8')
        _check(self.m >= 2, 'm must be at least 2')
        _check(self.ef_construction >= self.m,
               'ef_construction must be at least m')
        _check(self.ef_search >= 1, 'ef_search must be positive')


@dataclass(frozen=True)
class RankConfig:
    """Settings for the search pipeline."""

    #: The sparse scorer used for the text and metadata channels.
    scorer: str = 'bm42'

    #: BM25 term frequency saturation.
    k1: float = 1.2

    #: BM25 length normalization.
    b: float = 0.75

    #: The RRF rank offset.
    rrf_k: int = 60

    #: How many times ``top_k`` candidates to pool before final ranking.
    pool_factor: int = 4

    #: The minimum cosine for choosing between glossary expansions.
    glossary_threshold: float = 0.15

    #: The intent parser to use.
    intent_parser: str = 'rules'

    def __post_init__(self) -> None:
        _check(self.k1 >= 0.0, 'k1 must be non-negative')
        _check(0.0 <= self.b <= 1.0, 'b must be in [0, 1]')
        _check(self.rrf_k >= 1, 'rrf_k must be positive')
        _check(self.pool_factor >= 1, 'pool_factor must be positive')
        _check(0.0 <= self.glossary_threshold <= 1.0,
               'glossary_threshold must be in [0, 1]')


@dataclass(frozen=True)
class EvalConfig:
    """Settings for benchmarking."""

    #: Rank cutoffs for Precision, Recall and nDCG.
    cutoffs: Sequence[int] = (5, 10, 20, 30)

    #: How many hits to retrieve per query.
    top_k: int = 100

    #: Neighbors used for the density half of semantic certainty.
    certainty_k: int = 5

    #: Certainty at or above which a query is ``conceptual``.
    conceptual_threshold: float = 0.60

    #: Certainty at or above which a query is ``factual``.
    factual_threshold: float = 0.765

    def __post_init__(self) -> None:
        _check(all(k >= 1 for k in self.cutoffs),
               'cutoffs must be positive')
        _check(self.top_k >= 1, 'top_k must be positive')
        _check(self.certainty_k >= 1, 'certainty_k must be positive')
        _check(0.0 <= self.conceptual_threshold
               <= self.factual_threshold <= 1.0,
               'certainty thresholds must satisfy '
               '0 <= conceptual <= factual <= 1')


@dataclass(frozen=True)
class EngineConfig:
    """All settings that determine how an index is built and searched."""

    ingest: IngestConfig = field(default_factory=IngestConfig)
    dense: DenseConfig = field(default_factory=DenseConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        """Return the configuration as plain JSON-compatible data.

        Returns:
            dict:
            The configuration.
        """
        data = asdict(self)

        # Normalize containers so that equal configs serialize identically.
        data['ingest']['gazetteer'] = {
            key: sorted(set(phrases))
            for key, phrases in sorted(self.ingest.gazetteer.items())
        }
        data['ingest']['enrichers'] = list(self.ingest.enrichers)
        data['dense']['synonyms'] = dict(sorted(self.dense.synonyms.items()))
        data['eval']['cutoffs'] = list(self.eval.cutoffs)

        return data

    @classmethod
    def from_dict(
        cls,
        data: Mapping[str, Any],
    ) -> EngineConfig:
        """Return a configuration from the output of :py:meth:`to_dict`.

        Missing sections and keys take their defaults.

        Args:
            data (dict):
                The configuration data.

        Returns:
            EngineConfig:
            The configuration.

        Raises:
            finder.errors.ConfigurationError:
                A key was unknown or a value was invalid.
        """
        sections = {
            'ingest': IngestConfig,
            'dense': DenseConfig,
            'rank': RankConfig,
            'eval': EvalConfig,
        }
        unknown = sorted(set(data) - set(sections))

        if unknown:
            raise ConfigurationError(
                reason=f'unknown config sections: {", ".join(unknown)}')

        kwargs: dict[str, Any] = {}

        for name, section_cls in sections.items():
            section = dict(data.get(name, {}))

            for key, value in section.items():
                if isinstance(value, list):
                    section[key] = tuple(value)

            kwargs[name] = _from_mapping(section_cls, section)

        return cls(**kwargs)


def load_config(path: Optional[Path]) -> EngineConfig:
    """Load an engine configuration from a JSON file.

    Args:
        path (pathlib.Path):
            The file to load. If ``None``, the defaults are returned.

    Returns:
        EngineConfig:
        The configuration.

    Raises:
        finder.errors.ConfigurationError:
            The file could not be read or was invalid.
    """
    if path is None:
        return EngineConfig()

    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise ConfigurationError(reason=f'could not read {path}: {e}')

    if not isinstance(data, dict):
        raise ConfigurationError(reason=f'{path} must hold a JSON object')

    return EngineConfig.from_dict(data)


@dataclass(frozen=True)
class ServiceConfig:
    """Settings for the HTTP service."""

    host: str = '127.0.0.1'
    port: int = 8080

    #: The snapshot directory to serve and to save rebuilds into.
    index_dir: Optional[Path] = None

    #: Searches allowed in flight before new ones are rejected with 503.
    max_concurrent_queries: int = 256

    #: How long a search may run before the request fails with 504.
    request_timeout_ms: int = 10000

    #: Worker threads for parsing ingested records.
    ingest_workers: int = 32

    log_level: str = 'INFO'

    def __post_init__(self) -> None:
        _check(0 <= self.port <= 65535, 'port must be in [0, 65535]')
        _check(self.max_concurrent_queries >= 1,
               'max_concurrent_queries must be positive')
        _check(self.request_timeout_ms >= 1,
               'request_timeout_ms must be positive')
        _check(self.ingest_workers >= 1, 'ingest_workers must be positive')

    @classmethod
    def from_env(
        cls,
        environ: Optional[Mapping[str, str]] = None,
        **overrides: Any,
    ) -> ServiceConfig:
        """Return a configuration from ``FINDER_*`` environment variables.

        Explicit overrides that are not ``None`` win over the environment.

        Args:
            environ (dict, optional):
                The environment to read. Defaults to :py:data:`os.environ`.

            **overrides (dict):
                Explicit values, such as from command line options.

        Returns:
            ServiceConfig:
            The configuration.

        Raises:
            finder.errors.ConfigurationError:
                A variable held an invalid value.
        """
        if environ is None:
            environ = os.environ

        kwargs: dict[str, Any] = {}
        env_map = {
            'index_dir': ('FINDER_INDEX_DIR', Path),
            'port': ('FINDER_PORT', int),
            'log_level': ('FINDER_LOG_LEVEL', str),
            'max_concurrent_queries': ('FINDER_MAX_CONCURRENT_QUERIES', int),
            'request_timeout_ms': ('FINDER_REQUEST_TIMEOUT_MS', int),
        }

        for key, (env_name, convert) in env_map.items():
            if env_name in environ:
                try:
                    kwargs[key] = convert(environ[env_name])
                except ValueError:
                    raise ConfigurationError(
                        reason=f'{env_name}={environ[env_name]!r} is invalid')

        kwargs.update(
            (key, value)
            for key, value in overrides.items()
            if value is not None
        )

        return cls(**kwargs)
