"""Unit tests for finder.config and finder.logs."""

from __future__ import annotations

import io
import json
import logging
import tempfile
from pathlib import Path
from unittest import TestCase

from finder.config import (DenseConfig,
                           EngineConfig,
                           EvalConfig,
                           IngestConfig,
                           RankConfig,
                           ServiceConfig,
                           load_config)
from finder.errors import ConfigurationError
from finder.logs import configure_logging


class EngineConfigTests(TestCase):
    """Tests for finder.config.EngineConfig."""

    def test_defaults(self) -> None:
        """Testing EngineConfig defaults"""
        config = EngineConfig()

        self.assertEqual(config.rank.scorer, 'bm42')
        self.assertEqual(config.rank.rrf_k, 60)
        self.assertEqual(config.dense.dim, 256)
        self.assertEqual(tuple(config.eval.cutoffs), (5, 10, 20, 30))
        self.assertEqual(config.eval.factual_threshold, 0.765)
        self.assertEqual(config.eval.conceptual_threshold, 0.60)

    def test_round_trip(self) -> None:
        """Testing EngineConfig.from_dict restores EngineConfig.to_dict"""
        config = EngineConfig(
            ingest=IngestConfig(gazetteer={'product': ['b', 'a', 'a']}),
            dense=DenseConfig(dim=32, synonyms={'car': 'auto'}),
            rank=RankConfig(scorer='bm25'),
            eval=EvalConfig(cutoffs=(3, 7)))

        data = json.loads(json.dumps(config.to_dict()))

        self.assertEqual(data['ingest']['gazetteer'], {'product': ['a', 'b']})
        self.assertEqual(EngineConfig.from_dict(data).to_dict(),
                         config.to_dict())

    def test_unknown_key(self) -> None:
        """Testing EngineConfig.from_dict with an unknown key"""
        with self.assertRaisesRegex(ConfigurationError, 'unknown'):
            EngineConfig.from_dict({'rank': {'colour': 'blue'}})

        with self.assertRaisesRegex(ConfigurationError, 'unknown'):
            EngineConfig.from_dict({'ranking': {}})

    def test_validation(self) -> None:
        """Testing configuration classes validate their values"""
        with self.assertRaises(ConfigurationError):
            RankConfig(b=1.5)

        with self.assertRaises(ConfigurationError):
            RankConfig(rrf_k=0)

        with self.assertRaises(ConfigurationError):
            DenseConfig(dim=4)

        with self.assertRaises(ConfigurationError):
            EvalConfig(conceptual_threshold=0.9, factual_threshold=0.8)

    def test_load_config(self) -> None:
        """Testing load_config"""
        self.assertEqual(load_config(None), EngineConfig())

        with tempfile.TemporaryDirectory() as tempdir:
            path = Path(tempdir) / 'config.json'
            path.write_text('{"rank": {"pool_factor": 2}}', encoding='utf-8')

            self.assertEqual(load_config(path).rank.pool_factor, 2)

            path.write_text('[1]', encoding='utf-8')

            with self.assertRaises(ConfigurationError):
                load_config(path)

            with self.assertRaises(ConfigurationError):
                load_config(Path(tempdir) / 'missing.json')


class ServiceConfigTests(TestCase):
    """Tests for finder.config.ServiceConfig."""

    def test_from_env(self) -> None:
        """Testing ServiceConfig.from_env"""
        config = ServiceConfig.from_env({
            'FINDER_INDEX_DIR': '/srv/index',
            'FINDER_PORT': '9000',
            'FINDER_LOG_LEVEL': 'DEBUG',
            'FINDER_MAX_CONCURRENT_QUERIES': '8',
            'FINDER_REQUEST_TIMEOUT_MS': '250',
        })

        self.assertEqual(config.index_dir, Path('/srv/index'))
        self.assertEqual(config.port, 9000)
        self.assertEqual(config.log_level, 'DEBUG')
        self.assertEqual(config.max_concurrent_queries, 8)
        self.assertEqual(config.request_timeout_ms, 250)

    def test_from_env_overrides(self) -> None:
        """Testing ServiceConfig.from_env prefers explicit overrides"""
        config = ServiceConfig.from_env({'FINDER_PORT': '9000'},
                                        port=7000,
                                        host=None)

        self.assertEqual(config.port, 7000)
        self.assertEqual(config.host, '127.0.0.1')
        self.assertEqual(config.max_concurrent_queries, 256)
        self.assertEqual(config.request_timeout_ms, 10000)

    def test_from_env_invalid(self) -> None:
        """Testing ServiceConfig.from_env with an invalid value"""
        with self.assertRaisesRegex(ConfigurationError, 'FINDER_PORT'):
            ServiceConfig.from_env({'FINDER_PORT': 'eighty'})

        with self.assertRaises(ConfigurationError):
            ServiceConfig.from_env({'FINDER_MAX_CONCURRENT_QUERIES': '0'})


class ConfigureLoggingTests(TestCase):
    """Tests for finder.logs.configure_logging."""

    def tearDown(self) -> None:
        root = logging.getLogger('finder')

        for handler in list(root.handlers):
            if handler.get_name() == 'finder':
                root.removeHandler(handler)

        root.setLevel(logging.NOTSET)
        root.propagate = True

        super().tearDown()

    def test_json_lines(self) -> None:
        """Testing configure_logging emits JSON lines with extra fields"""
        stream = io.StringIO()
        configure_logging('INFO', stream=stream)

        logging.getLogger('finder.tests').info(
            'searched %s', 'x',
            extra={'event': 'search.completed', 'hits': 3})
        logging.getLogger('finder.tests').debug('hidden')

        lines = stream.getvalue().splitlines()

        self.assertEqual(len(lines), 1)

        payload = json.loads(lines[0])

        self.assertEqual(payload['message'], 'searched x')
        self.assertEqual(payload['level'], 'INFO')
        self.assertEqual(payload['logger'], 'finder.tests')
        self.assertEqual(payload['event'], 'search.completed')
        self.assertEqual(payload['hits'], 3)
        self.assertIn('ts', payload)

    def test_replaces_handler(self) -> None:
        """Testing configure_logging replaces its previous handler"""
        first = io.StringIO()
        second = io.StringIO()

        configure_logging('INFO', stream=first)
        configure_logging('INFO', stream=second, json_output=False)

        logging.getLogger('finder.tests').warning('hello')

        self.assertEqual(first.getvalue(), '')
        self.assertIn('WARNING finder.tests: hello', second.getvalue())
