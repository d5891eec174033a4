"""Unit tests for finder.service."""

from __future__ import annotations

import json
import shutil
import tempfile
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from http import HTTPStatus
from pathlib import Path
from typing import Any, Optional
from unittest import TestCase

from kgb import SpyAgency

from finder.config import ServiceConfig
from finder.rank import SearchEngine, SearchMode, SearchResult
from finder.service import (FinderHTTPServer,
                            RequestError,
                            SearchService,
                            create_server)
from finder.storage import build_bundle, load_snapshot
from finder.tests.synthetic import generate_corpus, make_document


def make_record(number: str, body: str, **metadata: Any) -> str:
    values = {
        'dataset_document_number': number,
        'dataset_name': 'reports',
        'dataset_file_title': f'Report {number}',
    }
    values.update(metadata)

    return json.dumps({'metadata': values, 'body': body})


def make_bundle():
    return build_bundle(
        [
            make_document(0, ['kiwi orchard harvest'], country='fr'),
            make_document(1, ['apple orchard harvest'], country='us'),
            make_document(2, ['kiwi export volumes'], country='us'),
        ],
        created_at='2024-01-01T00:00:00+00:00')


class SearchServiceTests(SpyAgency, TestCase):
    """Tests for finder.service.SearchService."""

    def make_service(
        self,
        bundle=None,
        **kwargs: Any,
    ) -> SearchService:
        service = SearchService(ServiceConfig(**kwargs), bundle)
        self.addCleanup(service.close)

        return service

    def block_searches(self) -> tuple[threading.Semaphore, threading.Event]:
        entered = threading.Semaphore(0)
        release = threading.Event()
        self.addCleanup(release.set)

        def _search(
            _self: SearchEngine,
            raw_query: str,
            user_filters: Optional[dict[str, str]] = None,
            mode: SearchMode | str = SearchMode.HYBRID,
            top_k: int = 10,
        ) -> SearchResult:
            entered.release()
            release.wait(10)

            return SearchResult()

        self.spy_on(SearchEngine.search, owner=SearchEngine,
                    call_fake=_search)

        return entered, release

    def test_health(self) -> None:
        """Testing SearchService.health"""
        self.assertEqual(self.make_service(make_bundle()).health(), {
            'status': 'ok',
            'docs': 3,
            'snapshot_version': 1,
            'rebuilding': False,
        })
        self.assertEqual(self.make_service().health()['status'], 'empty')

    def test_search(self) -> None:
        """Testing SearchService.search"""
        service = self.make_service(make_bundle())

        result = service.search({'query': 'kiwi', 'top_k': 2,
                                 'filters': {'country': 'us'}})

        self.assertEqual(result['hits'][0]['doc_id'], 2)
        self.assertLessEqual({hit['doc_id'] for hit in result['hits']},
                             {1, 2})
        self.assertEqual(result['applied_filters'], {'country': 'us'})
        self.assertIn('timings_ms', result)

    def test_search_empty_query(self) -> None:
        """Testing SearchService.search with a blank query"""
        service = self.make_service(make_bundle())

        with self.assertRaises(RequestError) as cm:
            service.search({'query': '  '})

        self.assertEqual(cm.exception.status, HTTPStatus.BAD_REQUEST)
        self.assertEqual(cm.exception.code, 'empty_query')

    def test_search_invalid_body(self) -> None:
        """Testing SearchService.search with malformed bodies"""
        service = self.make_service(make_bundle())

        for body in ([], {}, {'query': 1},
                     {'query': 'x', 'filters': {'country': 1}},
                     {'query': 'x', 'top_k': 0},
                     {'query': 'x', 'top_k': True},
                     {'query': 'x', 'mode': 'psychic'}):
            with self.assertRaises(RequestError) as cm:
                service.search(body)

            self.assertEqual(cm.exception.status, HTTPStatus.BAD_REQUEST)
            self.assertEqual(cm.exception.code, 'invalid_request')

    def test_search_unknown_filter(self) -> None:
        """Testing SearchService.search with an unknown filter field"""
        service = self.make_service(make_bundle())

        with self.assertRaises(RequestError) as cm:
            service.search({'query': 'kiwi', 'filters': {'colour': 'red'}})

        self.assertEqual(cm.exception.code, 'unknown_field')

    def test_search_no_index(self) -> None:
        """Testing SearchService.search before any index is loaded"""
        with self.assertRaises(RequestError) as cm:
            self.make_service().search({'query': 'kiwi'})

        self.assertEqual(cm.exception.status,
                         HTTPStatus.SERVICE_UNAVAILABLE)
        self.assertEqual(cm.exception.code, 'index_unavailable')

    def test_search_overloaded(self) -> None:
        """Testing SearchService.search rejects requests over the limit"""
        service = self.make_service(make_bundle(), max_concurrent_queries=2)
        entered, release = self.block_searches()

        with ThreadPoolExecutor(max_workers=2) as executor:
            futures = [
                executor.submit(service.search, {'query': 'kiwi'})
                for _ in range(2)
            ]

            for _ in range(2):
                self.assertTrue(entered.acquire(timeout=10))

            with self.assertRaises(RequestError) as cm:
                service.search({'query': 'kiwi'})

            self.assertEqual(cm.exception.status,
                             HTTPStatus.SERVICE_UNAVAILABLE)
            self.assertEqual(cm.exception.code, 'overloaded')

            release.set()

            for future in futures:
                self.assertEqual(future.result(timeout=10)['hits'], [])

        # Slots are released once searches finish.
        service.search({'query': 'kiwi'})

    def test_search_timeout(self) -> None:
        """Testing SearchService.search with a search that runs too long"""
        service = self.make_service(make_bundle(), request_timeout_ms=50)
        self.block_searches()

        with self.assertRaises(RequestError) as cm:
            service.search({'query': 'kiwi'})

        self.assertEqual(cm.exception.status, HTTPStatus.GATEWAY_TIMEOUT)
        self.assertEqual(cm.exception.code, 'timeout')

    def test_ingest(self) -> None:
        """Testing SearchService.ingest publishes a rebuilt index"""
        service = self.make_service()

        response = service.ingest('\n'.join([
            make_record('R-1', 'kiwi orchard harvest'),
            make_record('R-2', 'apple orchard harvest'),
            make_record('R-3', 'kiwi export volumes'),
        ]))

        self.assertEqual(response.to_dict(),
                         {'accepted': 3, 'rejected': 0, 'errors': []})

        service.wait_for_rebuilds()

        self.assertEqual(service.health(), {
            'status': 'ok',
            'docs': 3,
            'snapshot_version': 1,
            'rebuilding': False,
        })

        hits = service.search({'query': 'kiwi'})['hits']

        self.assertEqual({hit['document_number'] for hit in hits[:2]},
                         {'R-1', 'R-3'})

    def test_ingest_partial(self) -> None:
        """Testing SearchService.ingest with some invalid records"""
        service = self.make_service(make_bundle())

        response = service.ingest('\n'.join([
            make_record('R-1', 'kiwi orchard harvest'),
            '{"metadata": {"dataset_document_number": "R-2"}, "body": "x"}',
            make_record('R-3', 'kiwi export volumes'),
        ]))

        self.assertEqual(response.accepted, 2)
        self.assertEqual(response.rejected, 1)
        self.assertEqual(response.errors[0]['line'], 2)
        self.assertEqual(response.errors[0]['code'], 'missing_field')

        service.wait_for_rebuilds()

        self.assertEqual(service.health()['docs'], 5)
        self.assertEqual(service.health()['snapshot_version'], 2)

    def test_ingest_duplicate(self) -> None:
        """Testing SearchService.ingest rejects known document numbers"""
        service = self.make_service(make_bundle())

        with self.assertRaises(RequestError) as cm:
            service.ingest(make_record('D-1', 'kiwi'))

        self.assertEqual(cm.exception.code, 'no_valid_records')
        self.assertEqual(cm.exception.details['errors'][0]['code'],
                         'duplicate_document')

    def test_ingest_empty(self) -> None:
        """Testing SearchService.ingest with an empty body"""
        service = self.make_service(make_bundle())

        with self.assertRaises(RequestError) as cm:
            service.ingest('\n  \n')

        self.assertEqual(cm.exception.status, HTTPStatus.BAD_REQUEST)
        self.assertEqual(cm.exception.code, 'empty_body')

    def test_ingest_saves_snapshot(self) -> None:
        """Testing SearchService.ingest saves rebuilt snapshots"""
        tempdir = Path(tempfile.mkdtemp(prefix='finder-tests.'))
        self.addCleanup(shutil.rmtree, tempdir, ignore_errors=True)
        index_dir = tempdir / 'index'

        service = self.make_service(make_bundle(), index_dir=index_dir)
        service.ingest(make_record('R-1', 'kiwi orchard harvest'))
        service.wait_for_rebuilds()

        self.assertEqual(len(load_snapshot(index_dir).documents), 4)

    def test_in_flight_search_keeps_index(self) -> None:
        """Testing SearchService keeps serving the old index during a
        rebuild
        """
        service = self.make_service(make_bundle())
        state = service.handle.state

        service.ingest(make_record('R-1', 'kiwi orchard harvest'))
        service.wait_for_rebuilds()

        self.assertIsNot(service.handle.state, state)
        self.assertEqual(state.docs, 3)
        self.assertEqual({hit.doc_id
                          for hit in state.engine.search('kiwi').hits[:2]},
                         {0, 2})


class HTTPTests(TestCase):
    """Tests for the HTTP surface of finder.service."""

    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()

        corpus = generate_corpus(n_queries=10, n_noise=200)
        cls.queries = [query.text for query in corpus.queries]
        cls.server = create_server(ServiceConfig(port=0),
                                   corpus.bundle())
        cls.thread = threading.Thread(target=cls.server.serve_forever,
                                      daemon=True)
        cls.thread.start()

        host, port = cls.server.server_address[:2]
        cls.base_url = f'http://{host}:{port}'

    @classmethod
    def tearDownClass(cls) -> None:
        cls.server.shutdown()
        cls.server.server_close()
        cls.server.service.close()
        cls.thread.join()

        super().tearDownClass()

    def request(
        self,
        method: str,
        path: str,
        body: Optional[bytes] = None,
    ) -> tuple[int, Any]:
        request = urllib.request.Request(f'{self.base_url}{path}',
                                         data=body,
                                         method=method)

        try:
            with urllib.request.urlopen(request, timeout=30) as response:
                return response.status, json.loads(response.read())
        except urllib.error.HTTPError as e:
            with e:
                return e.code, json.loads(e.read())

    def search(self, payload: Any) -> tuple[int, Any]:
        return self.request('POST', '/v1/search',
                            json.dumps(payload).encode('utf-8'))

    def test_server(self) -> None:
        """Testing create_server returns a bound server"""
        self.assertIsInstance(self.server, FinderHTTPServer)
        self.assertNotEqual(self.server.server_address[1], 0)

    def test_health(self) -> None:
        """Testing GET /v1/health"""
        status, payload = self.request('GET', '/v1/health')

        self.assertEqual(status, 200)
        self.assertEqual(payload['docs'], 240)
        self.assertEqual(payload['snapshot_version'], 1)

    def test_search(self) -> None:
        """Testing POST /v1/search"""
        status, payload = self.search({'query': self.queries[0]})

        self.assertEqual(status, 200)
        self.assertEqual(len(payload['hits']), 10)
        self.assertEqual(payload['stages']['parse'], 1)

    def test_search_errors(self) -> None:
        """Testing POST /v1/search error responses"""
        status, payload = self.search({'query': ''})

        self.assertEqual(status, 400)
        self.assertEqual(payload['error']['code'], 'empty_query')

        status, payload = self.request('POST', '/v1/search', b'{nope')

        self.assertEqual(status, 400)
        self.assertEqual(payload['error']['code'], 'invalid_json')

    def test_routes(self) -> None:
        """Testing unknown routes and methods"""
        status, payload = self.request('GET', '/v1/nothing')

        self.assertEqual(status, 404)
        self.assertEqual(payload['error']['code'], 'not_found')

        status, payload = self.request('GET', '/v1/search')

        self.assertEqual(status, 405)
        self.assertEqual(payload['error']['code'], 'method_not_allowed')

    def test_ingest_empty(self) -> None:
        """Testing POST /v1/documents with an empty body"""
        status, payload = self.request('POST', '/v1/documents', b'')

        self.assertEqual(status, 400)
        self.assertEqual(payload['error']['code'], 'empty_body')

    def test_concurrent_searches(self) -> None:
        """Testing 200 concurrent searches match the serial result"""
        payload = {'query': self.queries[1], 'top_k': 10}
        status, expected = self.search(payload)

        self.assertEqual(status, 200)

        with ThreadPoolExecutor(max_workers=200) as executor:
            responses = list(executor.map(lambda _: self.search(payload),
                                          range(200)))

        for status, body in responses:
            self.assertEqual(status, 200)
            self.assertEqual(body['hits'], expected['hits'])
