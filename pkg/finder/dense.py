"""Embeddings, exact cosine search, and the HNSW graph.

Chunks are embedded into unit vectors by an :py:class:`Embedder` and stored
row-wise in a :py:class:`DenseIndex`. Rows are in chunk ID order, so ties
broken by row are ties broken by chunk ID.

Reported similarities are always the exact cosine of the stored vector and
the query, computed the same way by every search path. The HNSW graph only
decides which rows are considered.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import threading
from dataclasses import dataclass
from typing import Collection, Iterable, Mapping, Optional, Sequence

import numpy as np

from finder.binary import SegmentReader, SegmentWriter
from finder.config import DenseConfig
from finder.errors import (CorruptSnapshotError,
                           DimMismatchError,
                           GraphNotBuiltError)
from finder.models import Document
from finder.registry import ComponentRegistry
from finder.text import tokenize


logger = logging.getLogger(__name__)


DENSE_MAGIC = b'FNDR1D'
DENSE_FORMAT_VERSION = 1

# Rows per block when computing all-pairs similarities during graph builds.
_BUILD_BLOCK_ROWS = 512


#
# Embedders
#

class Embedder:
    """Base class for text embedders.

    Embedders turn text into unit vectors of a fixed dimension. Text with no
    tokens embeds to the zero vector.
    """

    #: The registered name of the embedder.
    name: str

    #: The dimension of the output vectors.
    dim: int

    def embed(
        self,
        text: str,
    ) -> np.ndarray:
        """Embed a text.

        Args:
            text (str):
                The text to embed.

        Returns:
            numpy.ndarray:
            A ``float32`` vector of length :py:attr:`dim`, either unit-norm
            or all zeros.
        """
        raise NotImplementedError

    def embed_many(
        self,
        texts: Iterable[str],
    ) -> np.ndarray:
        """Embed several texts.

        Args:
            texts (iterable of str):
                The texts to embed.

        Returns:
            numpy.ndarray:
            A ``float32`` matrix with one row per text.
        """
        rows = [self.embed(text) for text in texts]

        if not rows:
            return np.zeros((0, self.dim), dtype=np.float32)

        return np.vstack(rows)


class HashingEmbedder(Embedder):
    """A deterministic feature-hashing embedder.

    Each token is hashed with a seeded BLAKE2b to a bucket and a sign. The
    signed counts are accumulated and L2-normalized, so the embedding is a
    bag of tokens: word order doesn't matter.

    An optional synonym map rewrites tokens before hashing. Tokens that map
    to the same canonical token land in the same bucket with the same sign.
    """

    name = 'hashing'

    def __init__(
        self,
        dim: int = 256,
        seed: int = 0x46494E44,
        synonyms: Optional[Mapping[str, str]] = None,
    ) -> None:
        """Initialize the embedder.

        Args:
            dim (int, optional):
                The vector dimension. This must be at least 8.

            seed (int, optional):
                The hash seed, as an unsigned 64-bit integer.

            synonyms (dict, optional):
                A mapping of surface token to canonical token.

        Raises:
            ValueError:
                The dimension was too small.
        """
        if dim < 8:
            raise ValueError(f'Embedding dimension must be at least 8, '
                             f'not {dim}')

        self.dim = dim
        self.seed = seed
        self.synonyms = {
            key.casefold(): value.casefold()
            for key, value in (synonyms or {}).items()
        }
        self._key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, 'little')
        self._features: dict[str, tuple[int, float]] = {}
        self._lock = threading.Lock()

    def feature(
        self,
        token: str,
    ) -> tuple[int, float]:
        """Return the bucket and sign for a token.

        Args:
            token (str):
                A casefolded token.

        Returns:
            tuple:
            A ``(bucket, sign)`` pair.
        """
        try:
            return self._features[token]
        except KeyError:
            pass

        canonical = self.synonyms.get(token, token)
        digest = hashlib.blake2b(canonical.encode('utf-8'),
                                 digest_size=8,
                                 key=self._key).digest()
        value = int.from_bytes(digest, 'little')
        feature = (value % self.dim, -1.0 if value >> 63 else 1.0)

        with self._lock:
            self._features[token] = feature

        return feature

    def embed(
        self,
        text: str,
    ) -> np.ndarray:
        tokens = tokenize(text)
        vector = np.zeros(self.dim, dtype=np.float64)

        for token in tokens:
            bucket, sign = self.feature(token)
            vector[bucket] += sign

        norm = np.linalg.norm(vector)

        if norm > 0.0:
            vector /= norm

        return vector.astype(np.float32)


class EmbedderRegistry(ComponentRegistry[type[Embedder]]):
    """The registry of embedder classes.

    Embedders are registered as classes, since they are configured per
    index. Use :py:func:`create_embedder` to make one.
    """

    component_kind = 'embedder'
    entry_point_group = 'finder.embedders'

    def get_defaults(self) -> Iterable[type[Embedder]]:
        return [HashingEmbedder]


embedders = EmbedderRegistry()


def create_embedder(config: DenseConfig) -> Embedder:
    """Create the embedder described by a configuration.

    Args:
        config (finder.config.DenseConfig):
            The dense index configuration.

    Returns:
        Embedder:
        The embedder.

    Raises:
        finder.errors.ComponentNotFoundError:
            The embedder name was not registered.
    """
    embedder_cls = embedders.get(config.embedder)

    return embedder_cls(dim=config.dim,  # type: ignore[call-arg]
                        seed=config.seed,
                        synonyms=config.synonyms)


def embed_default(
    text: str,
    dim: int = 256,
    seed: int = 0x46494E44,
) -> np.ndarray:
    """Embed a text with the hashing embedder.

    Args:
        text (str):
            The text to embed.

        dim (int, optional):
            The vector dimension.

        seed (int, optional):
            The hash seed.

    Returns:
        numpy.ndarray:
        A unit vector, or the zero vector for text with no tokens.
    """
    return HashingEmbedder(dim=dim, seed=seed).embed(text)


def is_zero_vector(vector: np.ndarray) -> bool:
    """Return whether a vector is all zeros.

    Args:
        vector (numpy.ndarray):
            The vector.

    Returns:
        bool:
        ``True`` if every component is zero.
    """
    return not np.any(vector)


#
# HNSW graph
#

@dataclass(frozen=True)
class HNSWGraph:
    """A layered proximity graph over the rows of a :py:class:`DenseIndex`.

    Layer 0 holds every row. Each higher layer holds the rows whose level is
    at least that layer.
    """

    #: The top layer of each row.
    levels: np.ndarray

    #: The row that searches start from. It has the highest level.
    entry_point: int

    #: Per layer, a mapping of row to its neighbor rows.
    layers: Sequence[Mapping[int, np.ndarray]]

    @property
    def max_level(self) -> int:
        return len(self.layers) - 1


def _select_neighbors(
    vectors: np.ndarray,
    candidates: np.ndarray,
    similarities: np.ndarray,
    m: int,
) -> np.ndarray:
    """Select up to ``m`` diverse neighbors from sorted candidates.

    A candidate is kept when it is closer to the base node than to every
    neighbor kept so far. Discarded candidates fill any remaining slots.

    Args:
        vectors (numpy.ndarray):
            All stored vectors.

        candidates (numpy.ndarray):
            Candidate rows, most similar first.

        similarities (numpy.ndarray):
            The cosine of each candidate to the base node.

        m (int):
            The maximum number of neighbors.

    Returns:
        numpy.ndarray:
        The selected rows, most similar first.
    """
    if len(candidates) <= m:
        return candidates

    candidate_vectors = vectors[candidates]
    pairwise = candidate_vectors @ candidate_vectors.T
    selected: list[int] = []
    pruned: list[int] = []

    for i in range(len(candidates)):
        if selected and bool(np.any(pairwise[i, selected] > similarities[i])):
            pruned.append(i)
        else:
            selected.append(i)

            if len(selected) == m:
                break

    if len(selected) < m:
        selected += pruned[:m - len(selected)]

    return candidates[np.sort(np.asarray(selected, dtype=np.int64))]


def _sorted_by_similarity(
    rows: np.ndarray,
    similarities: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((rows, -similarities))

    return rows[order], similarities[order]


def build_graph(
    vectors: np.ndarray,
    *,
    m: int = 16,
    ef_construction: int = 200,
    seed: int = 0x46494E44,
) -> Optional[HNSWGraph]:
    """Build an HNSW graph over unit vectors.

    Levels follow the usual geometric distribution with ``mL = 1 / ln(m)``.
    The graph is built layer by layer in batch: each node's candidates are
    its exact ``ef_construction`` nearest neighbors within the layer,
    reduced to ``m`` by the diversity heuristic. Links are then made
    bidirectional, and any node left with more than its cap (``2 * m`` on
    layer 0, ``m`` above) is pruned back with the same heuristic.

    Args:
        vectors (numpy.ndarray):
            The ``float32`` vectors, one per row.

        m (int, optional):
            The number of neighbors selected per node.

        ef_construction (int, optional):
            The candidate list size.

        seed (int, optional):
            The seed for level assignment.

    Returns:
        HNSWGraph:
        The graph, or ``None`` if there are no vectors.
    """
    n = len(vectors)

    if n == 0:
        return None

    rng = np.random.default_rng(seed)
    level_mult = 1.0 / math.log(m)
    levels = np.floor(-np.log(1.0 - rng.random(n)) * level_mult) \
        .astype(np.int64)
    max_level = int(levels.max())
    entry_point = int(np.flatnonzero(levels == max_level)[0])
    layers: list[dict[int, np.ndarray]] = []

    for layer in range(max_level + 1):
        nodes = np.flatnonzero(levels >= layer)
        cap = 2 * m if layer == 0 else m
        layers.append(_build_layer(vectors, nodes,
                                   m=m,
                                   cap=cap,
                                   ef_construction=ef_construction))

    logger.debug('Built HNSW graph: %d nodes, %d layers', n, max_level + 1)

    return HNSWGraph(levels=levels,
                     entry_point=entry_point,
                     layers=layers)


def _build_layer(
    vectors: np.ndarray,
    nodes: np.ndarray,
    *,
    m: int,
    cap: int,
    ef_construction: int,
) -> dict[int, np.ndarray]:
    n_nodes = len(nodes)
    empty = np.zeros(0, dtype=np.int64)

    if n_nodes == 1:
        return {int(nodes[0]): empty}

    layer_vectors = vectors[nodes]
    k = min(ef_construction, n_nodes - 1)
    links: dict[int, list[int]] = {}

    for start in range(0, n_nodes, _BUILD_BLOCK_ROWS):
        stop = min(start + _BUILD_BLOCK_ROWS, n_nodes)
        sims = layer_vectors[start:stop] @ layer_vectors.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf

        part = np.argpartition(-sims, k - 1, axis=1)[:, :k]

        part_sims = np.take_along_axis(sims, part, axis=1)
        order = np.lexsort((part, -part_sims), axis=-1)
        part = np.take_along_axis(part, order, axis=1)
        part_sims = np.take_along_axis(part_sims, order, axis=1)

        for i in range(stop - start):
            node = int(nodes[start + i])
            selected = _select_neighbors(vectors, nodes[part[i]],
                                         part_sims[i], m)
            links[node] = selected.tolist()

    # Make links bidirectional.
    reverse: dict[int, list[int]] = {node: [] for node in links}

    for node, neighbors in links.items():
        for neighbor in neighbors:
            if node not in links[neighbor]:
                reverse[neighbor].append(node)

    adjacency: dict[int, np.ndarray] = {}

    for node in nodes.tolist():
        neighbors = np.asarray(links[node] + reverse[node], dtype=np.int64)

        if len(neighbors) > cap:
            sims = vectors[neighbors] @ vectors[node]
            neighbors, sims = _sorted_by_similarity(neighbors, sims)
            neighbors = _select_neighbors(vectors, neighbors, sims, cap)

        adjacency[node] = np.sort(neighbors)

    return adjacency


#
# The index
#

class DenseIndex:
    """An immutable store of chunk vectors with exact and HNSW search.

    Version Added:
        0.9
    """

    ######################
    # Instance variables #
    ######################

    #: The ``float32`` vectors, one row per chunk.
    vectors: np.ndarray

    #: The ``(doc_id, ordinal)`` of each row, in ascending order.
    chunk_ids: Sequence[tuple[int, int]]

    #: The ``doc_id`` of each row.
    chunk_doc_ids: np.ndarray

    #: The number of neighbors selected per node.
    m: int

    #: The candidate list size used when building the graph.
    ef_construction: int

    #: The default beam width for graph search.
    ef_search: int

    #: The graph, if one was built.
    graph: Optional[HNSWGraph]

    @classmethod
    def build(
        cls,
        documents: Sequence[Document],
        embedder: Embedder,
        config: Optional[DenseConfig] = None,
    ) -> DenseIndex:
        """Embed and index every chunk of a set of documents.

        Args:
            documents (list of finder.models.Document):
                The chunked documents.

            embedder (Embedder):
                The embedder for chunk text.

            config (finder.config.DenseConfig, optional):
                The graph settings. Defaults are used if not provided.

        Returns:
            DenseIndex:
            The new index.
        """
        chunks = [
            chunk
            for document in sorted(documents, key=lambda doc: doc.doc_id)
            for chunk in document.chunks
        ]
        vectors = embedder.embed_many(chunk.text for chunk in chunks)

        return cls.from_vectors(vectors,
                                [chunk.chunk_id for chunk in chunks],
                                config)

    @classmethod
    def from_vectors(
        cls,
        vectors: np.ndarray,
        chunk_ids: Sequence[tuple[int, int]],
        config: Optional[DenseConfig] = None,
    ) -> DenseIndex:
        """Index precomputed vectors.

        Args:
            vectors (numpy.ndarray):
                The vectors, one row per chunk. Each must be unit-norm or
                zero.

            chunk_ids (list of tuple):
                The chunk ID of each row, in ascending order.

            config (finder.config.DenseConfig, optional):
                The graph settings. Defaults are used if not provided.

        Returns:
            DenseIndex:
            The new index.
        """
        if config is None:
            config = DenseConfig()

        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        graph = None

        if config.build_graph:
            graph = build_graph(vectors,
                                m=config.m,
                                ef_construction=config.ef_construction,
                                seed=config.graph_seed)

        return cls(vectors,
                   chunk_ids,
                   m=config.m,
                   ef_construction=config.ef_construction,
                   ef_search=config.ef_search,
                   graph=graph)

    def __init__(
        self,
        vectors: np.ndarray,
        chunk_ids: Sequence[tuple[int, int]],
        *,
        m: int,
        ef_construction: int,
        ef_search: int,
        graph: Optional[HNSWGraph] = None,
    ) -> None:
        """Initialize the index.

        Args:
            vectors (numpy.ndarray):
                The vectors, one row per chunk.

            chunk_ids (list of tuple):
                The chunk ID of each row.

            m (int):
                The number of neighbors selected per node.

            ef_construction (int):
                The candidate list size used when building the graph.

            ef_search (int):
                The default beam width for graph search.

            graph (HNSWGraph, optional):
                The graph over the vectors.

        Raises:
            ValueError:
                The arguments were inconsistent.
        """
        if vectors.ndim != 2 or len(vectors) != len(chunk_ids):
            raise ValueError('Expected one vector row per chunk ID')

        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.chunk_ids = tuple(tuple(chunk_id) for chunk_id in chunk_ids)
        self.chunk_doc_ids = np.fromiter(
            (doc_id for doc_id, _ in self.chunk_ids),
            dtype=np.int64,
            count=len(self.chunk_ids))
        self.m = m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.graph = graph

        # The first row of each document, for max-pooling by document.
        if len(self.chunk_doc_ids):
            self._doc_starts = np.flatnonzero(np.r_[
                True, self.chunk_doc_ids[1:] != self.chunk_doc_ids[:-1]])
        else:
            self._doc_starts = np.zeros(0, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)

    def _check_query(
        self,
        query_vec: np.ndarray,
    ) -> np.ndarray:
        query_vec = np.asarray(query_vec, dtype=np.float32).ravel()

        if len(query_vec) != self.dim:
            raise DimMismatchError(expected=self.dim, actual=len(query_vec))

        return query_vec

    def cosines(
        self,
        query_vec: np.ndarray,
        rows: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Return the exact cosine of the query with stored rows.

        Products are accumulated in double precision and rounded to
        ``float32``, so a row's cosine doesn't depend on which other rows
        are computed with it.

        Args:
            query_vec (numpy.ndarray):
                A unit query vector.

            rows (numpy.ndarray, optional):
                The rows to compare. Defaults to all rows.

        Returns:
            numpy.ndarray:
            The ``float32`` cosines.
        """
        query64 = np.asarray(query_vec, dtype=np.float64)
        vectors = self.vectors if rows is None else self.vectors[rows]

        return (vectors.astype(np.float64) @ query64).astype(np.float32)

    def _row_mask(
        self,
        candidate_filter: Optional[Collection[int]],
    ) -> Optional[np.ndarray]:
        if candidate_filter is None:
            return None

        return np.isin(self.chunk_doc_ids,
                       np.fromiter(candidate_filter, dtype=np.int64))

    def _to_results(
        self,
        rows: np.ndarray,
        sims: np.ndarray,
        top_k: int,
    ) -> list[tuple[tuple[int, int], float]]:
        rows, sims = _sorted_by_similarity(rows, sims)

        return [
            (self.chunk_ids[row], float(sim))
            for row, sim in zip(rows[:top_k].tolist(), sims[:top_k])
        ]

    def knn_exact(
        self,
        query_vec: np.ndarray,
        top_k: int,
        candidate_filter: Optional[Collection[int]] = None,
    ) -> list[tuple[tuple[int, int], float]]:
        """Return the exact nearest chunks by cosine.

        Args:
            query_vec (numpy.ndarray):
                A unit query vector.

            top_k (int):
                The maximum number of results.

            candidate_filter (set of int, optional):
                If provided, only chunks of these documents are returned.

        Returns:
            list of tuple:
            ``(chunk_id, cosine)`` pairs, most similar first, ties by
            ascending chunk ID. A zero query returns nothing.

        Raises:
            finder.errors.DimMismatchError:
                The query has the wrong dimension.
        """
        query_vec = self._check_query(query_vec)

        if is_zero_vector(query_vec) or len(self) == 0:
            return []

        rows = np.arange(len(self), dtype=np.int64)
        mask = self._row_mask(candidate_filter)

        if mask is not None:
            rows = rows[mask]

        return self._to_results(rows, self.cosines(query_vec, rows), top_k)

    def ann_search(
        self,
        query_vec: np.ndarray,
        top_k: int,
        *,
        ef_search: Optional[int] = None,
    ) -> list[tuple[tuple[int, int], float]]:
        """Return approximate nearest chunks using the HNSW graph.

        Args:
            query_vec (numpy.ndarray):
                A unit query vector.

            top_k (int):
                The maximum number of results.

            ef_search (int, optional):
                The beam width. Defaults to the index's setting. The beam is
                never narrower than ``top_k``.

        Returns:
            list of tuple:
            ``(chunk_id, cosine)`` pairs, most similar first, ties by
            ascending chunk ID. A zero query returns nothing.

        Raises:
            finder.errors.DimMismatchError:
                The query has the wrong dimension.

            finder.errors.GraphNotBuiltError:
                The index has no graph.
        """
        graph = self.graph

        if graph is None:
            raise GraphNotBuiltError()

        query_vec = self._check_query(query_vec)

        if is_zero_vector(query_vec):
            return []

        ef = max(ef_search or self.ef_search, top_k)
        vectors = self.vectors
        current = graph.entry_point
        current_sim = float(vectors[current] @ query_vec)

        for layer in range(graph.max_level, 0, -1):
            adjacency = graph.layers[layer]
            improved = True

            while improved:
                improved = False
                neighbors = adjacency[current]

                if len(neighbors):
                    sims = vectors[neighbors] @ query_vec
                    best = int(np.argmax(sims))

                    if sims[best] > current_sim:
                        current = int(neighbors[best])
                        current_sim = float(sims[best])
                        improved = True

        visited = np.zeros(len(vectors), dtype=bool)
        visited[current] = True
        candidates = [(-current_sim, current)]
        results = [(current_sim, current)]
        base = graph.layers[0]

        while candidates:
            neg_sim, node = heapq.heappop(candidates)

            if len(results) >= ef and -neg_sim < results[0][0]:
                break

            neighbors = base[node]
            neighbors = neighbors[~visited[neighbors]]

            if not len(neighbors):
                continue

            visited[neighbors] = True
            sims = vectors[neighbors] @ query_vec

            for neighbor, sim in zip(neighbors.tolist(), sims.tolist()):
                if len(results) < ef or sim > results[0][0]:
                    heapq.heappush(candidates, (-sim, neighbor))
                    heapq.heappush(results, (sim, neighbor))

                    if len(results) > ef:
                        heapq.heappop(results)

        rows = np.fromiter((row for _, row in results), dtype=np.int64,
                           count=len(results))

        return self._to_results(rows, self.cosines(query_vec, rows), top_k)

    def search(
        self,
        query_vec: np.ndarray,
        top_k: int,
        candidate_filter: Optional[Collection[int]] = None,
        *,
        overfetch: int = 4,
    ) -> list[tuple[tuple[int, int], float]]:
        """Return nearest chunks, using the graph when there is one.

        With a candidate filter, graph search over-fetches
        ``overfetch * top_k`` chunks and filters them afterward, so fewer
        than ``top_k`` results may be returned.

        Args:
            query_vec (numpy.ndarray):
                A unit query vector.

            top_k (int):
                The maximum number of results.

            candidate_filter (set of int, optional):
                If provided, only chunks of these documents are returned.

            overfetch (int, optional):
                The over-fetch factor for filtered graph search.

        Returns:
            list of tuple:
            ``(chunk_id, cosine)`` pairs, most similar first.
        """
        if self.graph is None:
            return self.knn_exact(query_vec, top_k, candidate_filter)

        if candidate_filter is None:
            return self.ann_search(query_vec, top_k)

        return [
            result
            for result in self.ann_search(query_vec, overfetch * top_k)
            if result[0][0] in candidate_filter
        ][:top_k]

    def doc_cosines(
        self,
        query_vec: np.ndarray,
        doc_ids: Optional[Collection[int]] = None,
    ) -> dict[int, float]:
        """Return each document's best chunk cosine with the query.

        Args:
            query_vec (numpy.ndarray):
                A unit query vector.

            doc_ids (collection of int, optional):
                The documents to compute. Only their chunk rows are
                compared. IDs with no vectors are left out of the result.
                Defaults to every document.

        Returns:
            dict:
            A mapping of ``doc_id`` to its maximum chunk cosine. A zero
            query maps every document to 0.

        Raises:
            finder.errors.DimMismatchError:
                The query has the wrong dimension.
        """
        query_vec = self._check_query(query_vec)

        if len(self) == 0:
            return {}

        if doc_ids is None:
            starts = self._doc_starts
            best = np.maximum.reduceat(self.cosines(query_vec), starts)
        else:
            starts, rows, offsets = self._doc_rows(doc_ids)

            if len(starts) == 0:
                return {}

            best = np.maximum.reduceat(self.cosines(query_vec, rows),
                                       offsets)

        return dict(zip(self.chunk_doc_ids[starts].tolist(), best.tolist()))

    def _doc_rows(
        self,
        doc_ids: Collection[int],
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the chunk rows of some documents.

        Returns:
            tuple:
            The first row of each stored document, all of their rows, and
            where each document's rows begin within those rows.
        """
        start_doc_ids = self.chunk_doc_ids[self._doc_starts]
        wanted = np.unique(np.fromiter(doc_ids, dtype=np.int64))
        positions = np.searchsorted(start_doc_ids, wanted)
        found = positions < len(start_doc_ids)
        found[found] = start_doc_ids[positions[found]] == wanted[found]
        positions = positions[found]

        starts = self._doc_starts[positions]
        ends = np.append(self._doc_starts, len(self))[positions + 1]
        lengths = ends - starts
        offsets = np.cumsum(lengths) - lengths
        rows = (np.arange(int(lengths.sum()), dtype=np.int64) +
                np.repeat(starts - offsets, lengths))

        return starts, rows, offsets

    def to_bytes(self) -> bytes:
        """Serialize the index as a ``dense.idx`` segment.

        Returns:
            bytes:
            The segment.
        """
        writer = SegmentWriter(DENSE_MAGIC, DENSE_FORMAT_VERSION)
        writer.u32(self.dim)
        writer.u64(len(self))
        writer.array(self.vectors, '<f4')
        writer.array(list(self.chunk_ids) or np.zeros((0, 2)), '<u4')
        writer.u32(self.m)
        writer.u32(self.ef_construction)
        writer.u32(self.ef_search)

        graph = self.graph
        writer.u32(0 if graph is None else 1)

        if graph is not None:
            writer.u32(graph.entry_point)
            writer.u32(graph.max_level)
            writer.array(graph.levels, '<u4')

            for adjacency in graph.layers:
                for node in sorted(adjacency):
                    writer.u32(len(adjacency[node]))
                    writer.array(adjacency[node], '<u4')

        return writer.getvalue()

    @classmethod
    def from_bytes(
        cls,
        data: bytes,
        *,
        filename: str = 'dense.idx',
    ) -> DenseIndex:
        """Load an index from a ``dense.idx`` segment.

        Args:
            data (bytes):
                The segment contents.

            filename (str, optional):
                The segment's file name, for error messages.

        Returns:
            DenseIndex:
            The loaded index.

        Raises:
            finder.errors.CorruptSnapshotError:
                The segment is malformed.

            finder.errors.VersionMismatchError:
                The segment uses another format version.
        """
        reader = SegmentReader(data,
                               filename=filename,
                               magic=DENSE_MAGIC,
                               version=DENSE_FORMAT_VERSION)
        dim = reader.u32()
        count = reader.u64()
        vectors = reader.array(count * dim, '<f4').reshape(count, dim)
        chunk_table = reader.array(count * 2, '<u4').reshape(count, 2)
        m = reader.u32()
        ef_construction = reader.u32()
        ef_search = reader.u32()
        graph = None

        if reader.u32():
            entry_point = reader.u32()
            max_level = reader.u32()
            levels = reader.array(count, '<u4').astype(np.int64)
            layers: list[dict[int, np.ndarray]] = []

            for layer in range(max_level + 1):
                adjacency: dict[int, np.ndarray] = {}

                for node in np.flatnonzero(levels >= layer).tolist():
                    neighbors = reader.array(reader.u32(), '<u4') \
                        .astype(np.int64)

                    if len(neighbors) and neighbors.max() >= count:
                        raise CorruptSnapshotError(
                            filename=filename,
                            reason=f'graph link out of range at node {node}')

                    adjacency[node] = neighbors

                layers.append(adjacency)

            if entry_point >= count or levels[entry_point] != max_level:
                raise CorruptSnapshotError(filename=filename,
                                           reason='invalid graph entry point')

            graph = HNSWGraph(levels=levels,
                              entry_point=entry_point,
                              layers=layers)

        reader.expect_end()

        return cls(vectors,
                   [(int(doc_id), int(ordinal))
                    for doc_id, ordinal in chunk_table.tolist()],
                   m=m,
                   ef_construction=ef_construction,
                   ef_search=ef_search,
                   graph=graph)


def knn_exact(
    query_vec: np.ndarray,
    index: DenseIndex,
    candidate_filter: Optional[Collection[int]] = None,
    top_k: int = 10,
) -> list[tuple[tuple[int, int], float]]:
    """Return the exact nearest chunks by cosine.

    See :py:meth:`DenseIndex.knn_exact`.
    """
    return index.knn_exact(query_vec, top_k, candidate_filter)


def ann_search(
    query_vec: np.ndarray,
    index: DenseIndex,
    top_k: int = 10,
) -> list[tuple[tuple[int, int], float]]:
    """Return approximate nearest chunks using the HNSW graph.

    See :py:meth:`DenseIndex.ann_search`.
    """
    return index.ann_search(query_vec, top_k)
