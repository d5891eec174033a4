"""Unit tests for finder.rank."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from unittest import TestCase

from kgb import SpyAgency

from finder.errors import (EmptyQueryError,
                           ScoreRangeError,
                           UnknownFieldError)
from finder.evaluation import benchmark
from finder.rank import (MatchedVia,
                         SearchEngine,
                         SearchMode,
                         apply_filters,
                         build_exact_match_table,
                         exact_match_lookup,
                         fuse_weighted,
                         normalize_scores,
                         rrf_fuse,
                         search,
                         token_set_ratio)
from finder.sparse import SparseIndex, sparse_scorers
from finder.storage import build_bundle
from finder.tests.synthetic import generate_corpus, make_document


def make_corpus() -> list:
    return [
        make_document(0, ['kiwi orchard harvest', 'pruning kiwi vines'],
                      country='fr', dataset_file_title='Orchard Notes'),
        make_document(1, ['apple orchard harvest'],
                      country='us', dataset_file_title='Apple Yearbook'),
        make_document(2, ['kiwi export volumes'],
                      country='us', dataset_file_title='Trade Figures'),
        make_document(3, ['river flood defenses'],
                      country='de', dataset_file_title='Gamma Survey'),
    ]


def indel_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 100.0

    lcs = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]

    for i, char_a in enumerate(a):
        for j, char_b in enumerate(b):
            if char_a == char_b:
                lcs[i + 1][j + 1] = lcs[i][j] + 1
            else:
                lcs[i + 1][j + 1] = max(lcs[i][j + 1], lcs[i + 1][j])

    return 100.0 * 2 * lcs[len(a)][len(b)] / (len(a) + len(b))


class RRFFuseTests(TestCase):
    """Tests for finder.rank.rrf_fuse."""

    def test_scores(self) -> None:
        """Testing rrf_fuse scores"""
        fused = dict(rrf_fuse([[7, 8, 9], [7]]))

        self.assertAlmostEqual(fused[7], 2 / 61)
        self.assertAlmostEqual(fused[8], 1 / 62)
        self.assertAlmostEqual(fused[9], 1 / 63)

    def test_order(self) -> None:
        """Testing rrf_fuse orders by score, then document ID"""
        self.assertEqual([doc_id for doc_id, _ in
                          rrf_fuse([[5, 2], [2, 5], [9]])],
                         [2, 5, 9])

    def test_first_appearance(self) -> None:
        """Testing rrf_fuse counts a document once per list"""
        self.assertEqual(rrf_fuse([[1, 1, 2]]),
                         [(1, 1 / 61), (2, 1 / 63)])

    def test_custom_k(self) -> None:
        """Testing rrf_fuse with a custom k"""
        self.assertEqual(rrf_fuse([[3]], k=1), [(3, 0.5)])

        with self.assertRaises(ValueError):
            rrf_fuse([[3]], k=0)

    def test_empty(self) -> None:
        """Testing rrf_fuse with no lists"""
        self.assertEqual(rrf_fuse([]), [])
        self.assertEqual(rrf_fuse([[], []]), [])


class ScoringTests(TestCase):
    """Tests for the final scoring functions."""

    def test_fuse_weighted(self) -> None:
        """Testing fuse_weighted"""
        self.assertAlmostEqual(fuse_weighted(100, 1.0), 1.0)
        self.assertAlmostEqual(fuse_weighted(0, 1.0), 0.7)
        self.assertAlmostEqual(fuse_weighted(50, 0.5), 0.5)
        self.assertEqual(fuse_weighted(0, 0.0), 0.0)

    def test_fuse_weighted_range(self) -> None:
        """Testing fuse_weighted rejects out-of-range inputs"""
        for fuzzy, sparse_norm in ((101, 0.5), (-1, 0.5),
                                   (50, 1.01), (50, -0.1)):
            with self.assertRaises(ScoreRangeError) as cm:
                fuse_weighted(fuzzy, sparse_norm)

            self.assertEqual(cm.exception.code, 'score_range')

    def test_normalize_scores(self) -> None:
        """Testing normalize_scores"""
        self.assertEqual(normalize_scores([4.0, 2.0, 1.0]), [1.0, 0.5, 0.25])
        self.assertEqual(normalize_scores([0.0, 0.0]), [0.0, 0.0])
        self.assertEqual(normalize_scores([-1.0, 2.0]), [0.0, 1.0])
        self.assertEqual(normalize_scores([]), [])

    def test_token_set_ratio(self) -> None:
        """Testing token_set_ratio"""
        self.assertEqual(token_set_ratio('fuzzy was a bear',
                                         'fuzzy fuzzy was a bear'),
                         100.0)
        self.assertEqual(token_set_ratio('Hello, World', 'world hello'),
                         100.0)
        self.assertEqual(token_set_ratio('abc', 'xyz'), 0.0)

    def test_token_set_ratio_empty(self) -> None:
        """Testing token_set_ratio with strings without tokens"""
        self.assertEqual(token_set_ratio('', '!!'), 100.0)

        # With one side empty, the intersection and that side's combined
        # string are both empty, and they compare as identical.
        self.assertEqual(indel_similarity('', ''), 100.0)

        for a, b in (('abc', ''),
                     ('', 'kiwi orchard'),
                     ('Trade Figures', ' -- ')):
            self.assertEqual(token_set_ratio(a, b), 100.0)
            self.assertEqual(token_set_ratio(b, a), 100.0)

    def test_token_set_ratio_indel(self) -> None:
        """Testing token_set_ratio against an indel similarity oracle"""
        for a, b in (('kitten', 'sitting'),
                     ('orchard', 'orchid'),
                     ('harvest', 'vest')):
            self.assertAlmostEqual(token_set_ratio(a, b),
                                   indel_similarity(a, b), places=4)

    def test_token_set_ratio_symmetric(self) -> None:
        """Testing token_set_ratio is symmetric and bounded"""
        pairs = (('kiwi orchard', 'orchard notes'),
                 ('apple yearbook 2020', 'yearbook'),
                 ('trade figures', 'figures of trade'))

        for a, b in pairs:
            score = token_set_ratio(a, b)

            self.assertEqual(score, token_set_ratio(b, a))
            self.assertTrue(0.0 <= score <= 100.0)


class ExactMatchTests(TestCase):
    """Tests for finder.rank.exact_match_lookup."""

    def setUp(self) -> None:
        super().setUp()

        self.documents = make_corpus()

    def test_document_number(self) -> None:
        """Testing exact_match_lookup with a document number"""
        self.assertEqual(exact_match_lookup('  d-2 ', self.documents), [2])

    def test_title(self) -> None:
        """Testing exact_match_lookup with a title"""
        self.assertEqual(exact_match_lookup('orchard   NOTES',
                                            self.documents),
                         [0])

    def test_dataset_name(self) -> None:
        """Testing exact_match_lookup with a shared dataset name"""
        self.assertEqual(exact_match_lookup('Reports', self.documents),
                         [0, 1, 2, 3])

    def test_no_match(self) -> None:
        """Testing exact_match_lookup without a match"""
        self.assertEqual(exact_match_lookup('D 2', self.documents), [])
        self.assertEqual(exact_match_lookup('orchard', self.documents), [])
        self.assertEqual(exact_match_lookup('   ', self.documents), [])

    def test_table(self) -> None:
        """Testing exact_match_lookup with a prebuilt table"""
        table = build_exact_match_table(self.documents)

        self.assertEqual(table['reports'], [0, 1, 2, 3])
        self.assertEqual(exact_match_lookup('D-1', table), [1])


class ApplyFiltersTests(TestCase):
    """Tests for finder.rank.apply_filters."""

    def setUp(self) -> None:
        super().setUp()

        self.index = SparseIndex.build(make_corpus())

    def test_no_filters(self) -> None:
        """Testing apply_filters with no filters"""
        self.assertEqual(apply_filters({}, self.index),
                         frozenset({0, 1, 2, 3}))

    def test_conjunction(self) -> None:
        """Testing apply_filters intersects every filter"""
        self.assertEqual(apply_filters({'country': 'US'}, self.index),
                         frozenset({1, 2}))
        self.assertEqual(apply_filters({'country': 'us',
                                        'dataset_name': 'reports'},
                                       self.index),
                         frozenset({1, 2}))
        self.assertEqual(apply_filters({'country': 'us',
                                        'language': 'en'},
                                       self.index),
                         frozenset())

    def test_unknown_field(self) -> None:
        """Testing apply_filters with a field outside the schema"""
        with self.assertRaises(UnknownFieldError) as cm:
            apply_filters({'colour': 'red'}, self.index)

        self.assertEqual(cm.exception.field_name, 'colour')


class SearchEngineTests(SpyAgency, TestCase):
    """Tests for finder.rank.SearchEngine."""

    def setUp(self) -> None:
        super().setUp()

        self.bundle = build_bundle(make_corpus(),
                                   created_at='2024-01-01T00:00:00+00:00')
        self.engine = SearchEngine(self.bundle)

    def test_exact_short_circuit(self) -> None:
        """Testing SearchEngine.search returns exact matches alone"""
        self.spy_on(SparseIndex.score_documents, owner=SparseIndex)

        result = self.engine.search('d-3')

        self.assertEqual([hit.doc_id for hit in result.hits], [3])
        self.assertEqual(result.hits[0].score, 1.0)
        self.assertEqual(result.hits[0].matched_via,
                         MatchedVia.EXACT_MATCH)
        self.assertEqual(result.stages['parse'], 1)
        self.assertEqual(result.stages['exact'], 1)

        for stage in ('filter', 'sparse', 'metadata_keyword', 'dense',
                      'fuse', 'fuzzy'):
            self.assertEqual(result.stages[stage], 0)

        self.assertSpyNotCalled(SparseIndex.score_documents)

    def test_hybrid(self) -> None:
        """Testing SearchEngine.search ranks lexical matches first"""
        result = self.engine.search('kiwi harvest')
        hits = result.hits

        self.assertEqual(result.mode, SearchMode.HYBRID)
        self.assertEqual(hits[0].doc_id, 0)
        self.assertEqual([hit.rank for hit in hits],
                         list(range(1, len(hits) + 1)))
        self.assertEqual(hits[0].components.sparse_norm, 1.0)
        self.assertEqual(result.stages['sparse'], 1)
        self.assertEqual(result.stages['dense'], 1)
        self.assertEqual(result.stages['fuse'], 1)
        self.assertEqual(result.stages['fuzzy'], len(hits))

        scores = [hit.score for hit in hits]

        self.assertEqual(scores, sorted(scores, reverse=True))
        self.assertTrue(all(0.0 <= score <= 1.0 for score in scores))

        for hit in hits:
            components = hit.components

            self.assertAlmostEqual(
                hit.score,
                0.3 * components.fuzzy + 0.7 * components.sparse_norm)

    def test_user_filter_precedence(self) -> None:
        """Testing SearchEngine.search applies user filters over inline
        ones
        """
        result = self.engine.search('kiwi country:fr', {'country': 'us'})

        self.assertEqual(result.applied_filters, {'country': 'us'})
        self.assertLessEqual({hit.doc_id for hit in result.hits}, {1, 2})
        self.assertEqual(result.hits[0].doc_id, 2)

    def test_inline_filter(self) -> None:
        """Testing SearchEngine.search with an inline filter"""
        result = self.engine.search('kiwi country:fr')

        self.assertEqual([hit.doc_id for hit in result.hits], [0])

    def test_no_candidates(self) -> None:
        """Testing SearchEngine.search when filters match nothing"""
        result = self.engine.search('kiwi', {'country': 'jp'})

        self.assertEqual(result.hits, [])
        self.assertEqual(result.stages['filter'], 1)
        self.assertEqual(result.stages['sparse'], 0)

    def test_filters_only(self) -> None:
        """Testing SearchEngine.search with only filter expressions"""
        result = self.engine.search('country:us')

        self.assertEqual(result.hits, [])
        self.assertEqual(result.applied_filters, {'country': 'us'})

    def test_unknown_filter(self) -> None:
        """Testing SearchEngine.search with an unknown filter field"""
        with self.assertRaises(UnknownFieldError):
            self.engine.search('kiwi', {'colour': 'green'})

    def test_empty_query(self) -> None:
        """Testing SearchEngine.search with a blank query"""
        with self.assertRaises(EmptyQueryError):
            self.engine.search('  ')

    def test_invalid_top_k(self) -> None:
        """Testing SearchEngine.search with top_k below 1"""
        with self.assertRaises(ValueError):
            self.engine.search('kiwi', top_k=0)

    def test_top_k(self) -> None:
        """Testing SearchEngine.search limits the hits"""
        self.assertEqual(len(search(self.engine, 'kiwi', top_k=1)), 1)

    def test_sparse_mode(self) -> None:
        """Testing SearchEngine.search in sparse mode"""
        result = self.engine.search('kiwi', mode='sparse')

        self.assertEqual(result.mode, SearchMode.SPARSE)
        self.assertEqual(result.stages['dense'], 0)
        self.assertEqual({hit.doc_id for hit in result.hits}, {0, 2})
        self.assertTrue(all(hit.components.dense_cos == 0.0
                            for hit in result.hits))

    def test_metadata_keyword(self) -> None:
        """Testing SearchEngine.search reports metadata-only matches"""
        result = self.engine.search('gamma', mode=SearchMode.SPARSE)

        self.assertEqual([hit.doc_id for hit in result.hits], [3])
        self.assertEqual(result.hits[0].matched_via,
                         MatchedVia.METADATA_KEYWORD)

    def test_dense_mode(self) -> None:
        """Testing SearchEngine.search in dense mode"""
        result = self.engine.search('kiwi export', mode='dense')

        self.assertEqual(result.mode, SearchMode.DENSE)
        self.assertEqual(result.stages['sparse'], 0)
        self.assertEqual(result.hits[0].doc_id, 2)

        for hit in result.hits:
            self.assertEqual(hit.matched_via, MatchedVia.DENSE)
            self.assertEqual(hit.score,
                             min(1.0, max(0.0, hit.components.dense_cos)))

    def test_dense_cosines_ranked_only(self) -> None:
        """Testing SearchEngine.search computes dense cosines only for
        ranked documents
        """
        bundle = build_bundle([
            make_document(i, [f'kiwi report {i}', f'orchard filler {i}'])
            for i in range(30)
        ])
        engine = SearchEngine(bundle)
        self.spy_on(bundle.dense.doc_cosines)

        result = engine.search('kiwi report', top_k=1)

        call = bundle.dense.doc_cosines.last_call
        doc_ids = set(call.args[-1])
        everything = bundle.dense.doc_cosines(call.args[-2])

        # At most one pool of sparse, metadata and dense ranks each.
        self.assertLessEqual(len(doc_ids), 12)
        self.assertIn(result.hits[0].doc_id, doc_ids)
        self.assertAlmostEqual(result.hits[0].components.dense_cos,
                               everything[result.hits[0].doc_id],
                               places=6)

    def test_auto_mode(self) -> None:
        """Testing SearchEngine.search in auto mode"""
        self.assertEqual(self.engine.search('kiwi', mode='auto').mode,
                         SearchMode.HYBRID)

    def test_scorer(self) -> None:
        """Testing SearchEngine.search uses the configured scorer"""
        scorer = sparse_scorers.get('bm42')
        self.spy_on(scorer.score_rows)

        self.engine.search('kiwi')

        self.assertSpyCalled(scorer.score_rows)

    def test_logging(self) -> None:
        """Testing SearchEngine.search logs each search"""
        with self.assertLogs('finder.rank', level='INFO') as cm:
            self.engine.search('kiwi', {'country': 'jp'})

        record = cm.records[-1]

        self.assertEqual(record.event, 'search.completed')
        self.assertEqual(record.hits, 0)
        self.assertEqual(record.failure_class, 'empty_results')

    def test_concurrent(self) -> None:
        """Testing SearchEngine.search from many threads"""
        expected = self.engine.search('kiwi orchard').to_dict()['hits']

        with ThreadPoolExecutor(max_workers=8) as executor:
            results = list(executor.map(
                lambda _: self.engine.search('kiwi orchard')
                .to_dict()['hits'],
                range(32)))

        for hits in results:
            self.assertEqual(hits, expected)


class HybridQualityTests(TestCase):
    """Tests for ranking quality on the synthetic corpus."""

    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()

        cls.corpus = generate_corpus()
        cls.bundle = cls.corpus.bundle()

    def _ndcg(self, mode: SearchMode) -> float:
        report = benchmark(self.bundle, self.corpus.queries,
                           self.corpus.qrels, cutoffs=(10,), mode=mode)

        return report.metrics.ndcg[10]

    def test_hybrid_beats_single_channels(self) -> None:
        """Testing hybrid nDCG@10 is at least that of either channel"""
        hybrid = self._ndcg(SearchMode.HYBRID)
        sparse = self._ndcg(SearchMode.SPARSE)
        dense = self._ndcg(SearchMode.DENSE)

        self.assertGreaterEqual(hybrid, sparse - 1e-9)
        self.assertGreaterEqual(hybrid, dense - 1e-9)
        self.assertGreater(hybrid, sparse)

    def test_lexical_first(self) -> None:
        """Testing hybrid search ranks lexical matches above synonym
        matches
        """
        engine = SearchEngine(self.bundle)

        for query in self.corpus.queries[:10]:
            hits = engine.search(query.text).hits
            numbers = [hit.document_number for hit in hits]
            lexical = self.corpus.lexical[query.query_id]

            self.assertEqual(set(numbers[:len(lexical)]), set(lexical))
