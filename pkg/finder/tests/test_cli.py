"""Unit tests for finder.cli."""

from __future__ import annotations

import io
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from unittest import TestCase

import kgb
from kgb import SpyAgency

from finder.cli import (EXIT_DATA_ERROR,
                        EXIT_INTERNAL_ERROR,
                        EXIT_OK,
                        EXIT_USAGE,
                        main)
from finder.rank import SearchEngine


CORPUS_LINES = [
    {
        'metadata': {
            'dataset_document_number': 'R-1',
            'dataset_name': 'reports',
            'dataset_file_title': 'Orchard Notes',
            'country': 'fr',
        },
        'body': 'Kiwi orchard harvest figures for the season.',
    },
    {
        'metadata': {
            'dataset_document_number': 'R-2',
            'dataset_name': 'reports',
            'dataset_file_title': 'Apple Yearbook',
            'country': 'us',
        },
        'body': 'Apple orchard harvest and storage.',
    },
    {
        'metadata': {
            'dataset_document_number': 'R-3',
            'dataset_name': 'reports',
            'dataset_file_title': 'Trade Figures',
            'country': 'us',
        },
        'body': 'Kiwi export volumes by port.',
    },
]


class CLITests(SpyAgency, TestCase):
    """Tests for finder.cli.main."""

    def setUp(self) -> None:
        super().setUp()

        self.tempdir = Path(tempfile.mkdtemp(prefix='finder-tests.'))
        self.addCleanup(shutil.rmtree, self.tempdir, ignore_errors=True)
        self.addCleanup(self._reset_logging)

        old_index_dir = os.environ.pop('FINDER_INDEX_DIR', None)

        if old_index_dir is not None:
            self.addCleanup(os.environ.__setitem__, 'FINDER_INDEX_DIR',
                            old_index_dir)

        self.corpus = self.tempdir / 'corpus.jsonl'
        self.corpus.write_text(
            '\n'.join([json.dumps(record) for record in CORPUS_LINES] +
                      ['{"metadata": {}, "body": "no metadata"}']),
            encoding='utf-8')
        self.index = self.tempdir / 'index'

    def _reset_logging(self) -> None:
        root = logging.getLogger('finder')

        for handler in list(root.handlers):
            if handler.get_name() == 'finder':
                root.removeHandler(handler)

        root.setLevel(logging.NOTSET)
        root.propagate = True

    def run_main(self, *argv: str) -> tuple[int, str, str]:
        out = io.StringIO()
        err = io.StringIO()
        code = main([str(arg) for arg in argv], out=out, err=err)

        return code, out.getvalue(), err.getvalue()

    def ingest(self) -> None:
        code, _, err = self.run_main('ingest', '--corpus', self.corpus,
                                     '--out', self.index)
        self.assertEqual(code, EXIT_OK, err)

    def test_ingest(self) -> None:
        """Testing finder ingest"""
        code, out, _ = self.run_main('ingest',
                                     '--corpus', self.corpus,
                                     '--out', self.index,
                                     '--max-chunk-tokens', '4',
                                     '--overlap', '1')

        self.assertEqual(code, EXIT_OK)

        summary = json.loads(out)

        self.assertEqual(summary['accepted'], 3)
        self.assertEqual(summary['rejected'], 1)
        self.assertEqual(summary['errors'][0]['line'], 4)
        self.assertEqual(summary['errors'][0]['code'], 'missing_field')
        self.assertEqual(summary['counts']['documents'], 3)
        self.assertGreater(summary['counts']['chunks'], 3)
        self.assertTrue((self.index / 'manifest.json').exists())

    def test_ingest_workspace(self) -> None:
        """Testing finder ingest with a workspace"""
        workspace = self.tempdir / 'workspace'

        code, _, _ = self.run_main('ingest',
                                   '--corpus', self.corpus,
                                   '--out', self.index,
                                   '--workspace', workspace)

        self.assertEqual(code, EXIT_OK)
        self.assertTrue((workspace / 'raw' / 'corpus.jsonl').exists())
        self.assertEqual(
            sorted(path.name
                   for path in (workspace / 'processed').iterdir()),
            ['0.json', '1.json', '2.json'])

    def test_ingest_no_valid_records(self) -> None:
        """Testing finder ingest when every record is rejected"""
        self.corpus.write_text('{"body": "x"}\n', encoding='utf-8')

        code, _, err = self.run_main('ingest', '--corpus', self.corpus,
                                     '--out', self.index)

        self.assertEqual(code, EXIT_DATA_ERROR)
        self.assertIn('error: ', err)
        self.assertFalse(self.index.exists())

    def test_ingest_missing_file(self) -> None:
        """Testing finder ingest with a missing corpus"""
        code, _, _ = self.run_main('ingest',
                                   '--corpus', self.tempdir / 'missing',
                                   '--out', self.index)

        self.assertEqual(code, EXIT_DATA_ERROR)

    def test_ingest_invalid_utf8(self) -> None:
        """Testing finder ingest with a corpus that is not valid UTF-8"""
        self.corpus.write_bytes(
            json.dumps(CORPUS_LINES[0]).encode('utf-8') +
            b'\n{"metadata": {}, "body": "caf\xe9"}\n')

        code, _, err = self.run_main('ingest', '--corpus', self.corpus,
                                     '--out', self.index)

        self.assertEqual(code, EXIT_DATA_ERROR)
        self.assertIn(f'{self.corpus}, line 2: invalid UTF-8', err)
        self.assertFalse(self.index.exists())

    def test_usage_errors(self) -> None:
        """Testing finder with invalid arguments"""
        for argv in ([],
                     ['ingest', '--corpus', 'x'],
                     ['search', '--query', 'x', '--filter', 'country'],
                     ['eval', '--queries', 'q', '--qrels', 'r',
                      '--cutoffs', '5,0'],
                     ['search', '--index', 'x', '--query', 'y',
                      '--mode', 'psychic']):
            code, _, err = self.run_main(*argv)

            self.assertEqual(code, EXIT_USAGE, argv)
            self.assertTrue(err.startswith('finder'), err)

    def test_search_requires_index(self) -> None:
        """Testing finder search without an index"""
        code, _, err = self.run_main('search', '--query', 'kiwi')

        self.assertEqual(code, EXIT_USAGE)
        self.assertIn('--index is required', err)

    def test_search(self) -> None:
        """Testing finder search"""
        self.ingest()

        code, out, _ = self.run_main('search', '--index', self.index,
                                     '--query', 'kiwi export')

        self.assertEqual(code, EXIT_OK)
        self.assertTrue(out.startswith(' 1. '))
        self.assertIn('R-3', out.splitlines()[0])

    def test_search_json(self) -> None:
        """Testing finder search --json with filters"""
        self.ingest()

        code, out, _ = self.run_main('search', '--index', self.index,
                                     '--query', 'kiwi',
                                     '--filter', 'country=us',
                                     '--top-k', '1',
                                     '--json')

        self.assertEqual(code, EXIT_OK)

        result = json.loads(out)

        self.assertEqual(result['applied_filters'], {'country': 'us'})
        self.assertEqual([hit['document_number'] for hit in result['hits']],
                         ['R-3'])

    def test_search_env_index(self) -> None:
        """Testing finder search with FINDER_INDEX_DIR"""
        self.ingest()

        os.environ['FINDER_INDEX_DIR'] = str(self.index)
        self.addCleanup(os.environ.pop, 'FINDER_INDEX_DIR', None)

        code, out, _ = self.run_main('search', '--query', 'R-2')

        self.assertEqual(code, EXIT_OK)
        self.assertIn('exact_match', out)

    def test_search_no_results(self) -> None:
        """Testing finder search with filters that match nothing"""
        self.ingest()

        code, out, _ = self.run_main('search', '--index', self.index,
                                     '--query', 'kiwi',
                                     '--filter', 'country=jp')

        self.assertEqual(code, EXIT_OK)
        self.assertEqual(out, 'No results.\n')

    def test_search_data_errors(self) -> None:
        """Testing finder search with invalid queries"""
        self.ingest()

        for argv in (['--query', '   '],
                     ['--query', 'kiwi', '--filter', 'colour=red']):
            code, _, err = self.run_main('search', '--index', self.index,
                                         *argv)

            self.assertEqual(code, EXIT_DATA_ERROR)
            self.assertIn('error: ', err)

    def test_search_invalid_top_k(self) -> None:
        """Testing finder search with --top-k 0"""
        self.ingest()

        code, _, _ = self.run_main('search', '--index', self.index,
                                   '--query', 'kiwi', '--top-k', '0')

        self.assertEqual(code, EXIT_USAGE)

    def test_search_corrupt_snapshot(self) -> None:
        """Testing finder search with a corrupt snapshot"""
        self.ingest()
        (self.index / 'dense.idx').write_bytes(b'garbage')

        code, _, err = self.run_main('search', '--index', self.index,
                                     '--query', 'kiwi')

        self.assertEqual(code, EXIT_DATA_ERROR)
        self.assertIn('dense.idx', err)

    def test_internal_error(self) -> None:
        """Testing finder search with an unexpected failure"""
        self.ingest()
        self.spy_on(SearchEngine.search, owner=SearchEngine,
                    op=kgb.SpyOpRaise(RuntimeError('boom')))

        code, _, err = self.run_main('search', '--index', self.index,
                                     '--query', 'kiwi')

        self.assertEqual(code, EXIT_INTERNAL_ERROR)
        self.assertIn('internal error: boom', err)

    def test_eval(self) -> None:
        """Testing finder eval"""
        self.ingest()

        queries = self.tempdir / 'queries.jsonl'
        queries.write_text(
            '{"query_id": "q1", "text": "kiwi"}\n'
            '{"query_id": "q2", "text": "apple storage"}\n',
            encoding='utf-8')
        qrels = self.tempdir / 'qrels.txt'
        qrels.write_text('q1 0 R-1 1\nq1 0 R-3 1\nq2 0 R-2 1\n',
                         encoding='utf-8')
        run_out = self.tempdir / 'run.txt'
        report_out = self.tempdir / 'report.json'

        code, out, _ = self.run_main('eval',
                                     '--index', self.index,
                                     '--queries', queries,
                                     '--qrels', qrels,
                                     '--cutoffs', '1,3',
                                     '--run-out', run_out,
                                     '--report-out', report_out)

        self.assertEqual(code, EXIT_OK)

        reports = json.loads(out)

        self.assertEqual(reports, json.loads(report_out.read_text()))
        self.assertEqual(reports['metrics']['cutoffs'], [1, 3])
        self.assertEqual(reports['metrics']['recall']['3'], 1.0)
        self.assertEqual(reports['latency']['query_count'], 2)

        lines = run_out.read_text().splitlines()

        self.assertEqual(lines[0].split()[0], 'q1')
        self.assertEqual(lines[0].split()[2], '1')
        self.assertEqual(lines[0].split()[4], 'finder')

    def test_eval_malformed_qrels(self) -> None:
        """Testing finder eval with a malformed qrels file"""
        self.ingest()

        queries = self.tempdir / 'queries.jsonl'
        queries.write_text('{"query_id": "q1", "text": "kiwi"}\n',
                           encoding='utf-8')
        qrels = self.tempdir / 'qrels.txt'
        qrels.write_text('q1 0 R-1 1\nq1 R-3\n', encoding='utf-8')

        code, _, err = self.run_main('eval', '--index', self.index,
                                     '--queries', queries,
                                     '--qrels', qrels)

        self.assertEqual(code, EXIT_DATA_ERROR)
        self.assertIn('line 2', err)
