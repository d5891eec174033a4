"""The HTTP JSON service.

Endpoints:

``POST /v1/search``
    Body ``{"query": str, "filters": {str: str}, "top_k": int, "mode": str}``.
    Responds with the search result JSON.

``POST /v1/documents``
    A JSONL body of corpus records. Accepted records are indexed by a
    background rebuild, and the new index replaces the old one once it is
    ready. Responds ``202`` with the accepted and rejected counts.

``GET /v1/health``
    Responds with the document count and snapshot version. This never waits
    for a rebuild.

Searches share one immutable index. A bounded number may run at once.
Requests beyond that are rejected with ``503`` instead of queueing.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import (ThreadPoolExecutor,
                                TimeoutError as FutureTimeoutError)
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping, Optional

from finder.config import EngineConfig, ServiceConfig
from finder.errors import DataError, FinderError
from finder.ingest import ingest_corpus
from finder.models import Document
from finder.rank import SearchEngine, SearchMode
from finder.storage import IndexBundle, build_bundle, save_snapshot


logger = logging.getLogger(__name__)


#: The largest request body accepted, in bytes.
MAX_BODY_BYTES = 32 * 1024 * 1024

#: The largest ``top_k`` a search request may ask for.
MAX_TOP_K = 1000


class RequestError(Exception):
    """A request could not be served.

    This carries the HTTP status, the error body fields, and any extra
    fields for the response body.
    """

    def __init__(
        self,
        status: HTTPStatus,
        code: str,
        message: str,
        details: Optional[Mapping[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.details = dict(details or {})


@dataclass(frozen=True)
class IndexState:
    """A published index and its version."""

    engine: Optional[SearchEngine] = None
    snapshot_version: int = 0

    @property
    def docs(self) -> int:
        if self.engine is None:
            return 0

        return len(self.engine.bundle.documents)


class IndexHandle:
    """The shared, atomically replaceable index.

    Readers take the current :py:class:`IndexState` and keep using it for
    the whole request, so in-flight searches finish on the index they
    started with.
    """

    def __init__(
        self,
        bundle: Optional[IndexBundle] = None,
    ) -> None:
        """Initialize the handle.

        Args:
            bundle (finder.storage.IndexBundle, optional):
                The initial index.
        """
        self._lock = threading.Lock()
        self._state = IndexState(
            engine=SearchEngine(bundle) if bundle is not None else None,
            snapshot_version=1 if bundle is not None else 0)

    @property
    def state(self) -> IndexState:
        return self._state

    def publish(
        self,
        bundle: IndexBundle,
    ) -> IndexState:
        """Make a new bundle the current index.

        Args:
            bundle (finder.storage.IndexBundle):
                The new index.

        Returns:
            IndexState:
            The new state.
        """
        engine = SearchEngine(bundle)

        with self._lock:
            self._state = IndexState(
                engine=engine,
                snapshot_version=self._state.snapshot_version + 1)

            return self._state


@dataclass
class IngestResponse:
    """The outcome of an ingest request."""

    accepted: int
    rejected: int
    errors: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            'accepted': self.accepted,
            'rejected': self.rejected,
            'errors': self.errors,
        }


class SearchService:
    """Search admission, ingestion and background rebuilds.

    Version Added:
        0.9
    """

    ######################
    # Instance variables #
    ######################

    #: The service settings.
    config: ServiceConfig

    #: The shared index.
    handle: IndexHandle

    def __init__(
        self,
        config: ServiceConfig,
        bundle: Optional[IndexBundle] = None,
        *,
        engine_config: Optional[EngineConfig] = None,
    ) -> None:
        """Initialize the service.

        Args:
            config (finder.config.ServiceConfig):
                The service settings.

            bundle (finder.storage.IndexBundle, optional):
                The index to serve at first.

            engine_config (finder.config.EngineConfig, optional):
                Settings for indexes built from ingested documents when no
                initial bundle is given.
        """
        self.config = config
        self.handle = IndexHandle(bundle)
        self._engine_config = (
            bundle.config if bundle is not None
            else engine_config or EngineConfig())
        self._glossary = (
            bundle.glossary.to_dict()
            if bundle is not None and bundle.glossary else {})
        self._vocabularies = dict(bundle.vocabularies) if bundle else {}
        self._slots = threading.BoundedSemaphore(
            config.max_concurrent_queries)
        self._search_pool = ThreadPoolExecutor(
            max_workers=config.max_concurrent_queries,
            thread_name_prefix='finder-search')
        self._rebuild_pool = ThreadPoolExecutor(
            max_workers=1,
            thread_name_prefix='finder-rebuild')

        # The latest corpus, including documents not yet published.
        self._corpus_lock = threading.Lock()
        self._documents: list[Document] = (
            list(bundle.documents) if bundle is not None else [])
        self._pending_rebuilds = 0

    @property
    def rebuilding(self) -> bool:
        return self._pending_rebuilds > 0

    def health(self) -> dict[str, Any]:
        """Return the service health.

        Returns:
            dict:
            The status, document count and snapshot version.
        """
        state = self.handle.state

        return {
            'status': 'ok' if state.engine is not None else 'empty',
            'docs': state.docs,
            'snapshot_version': state.snapshot_version,
            'rebuilding': self.rebuilding,
        }

    def search(
        self,
        body: Any,
    ) -> dict[str, Any]:
        """Run a search request.

        Args:
            body (object):
                The decoded request body.

        Returns:
            dict:
            The search result.

        Raises:
            RequestError:
                The request was invalid, or could not be served in time or
                at all.
        """
        query, filters, top_k, mode = _parse_search_body(body)
        state = self.handle.state

        if state.engine is None:
            raise RequestError(HTTPStatus.SERVICE_UNAVAILABLE,
                               'index_unavailable',
                               'No index has been loaded yet.')

        if not self._slots.acquire(blocking=False):
            logger.warning('Rejected search: concurrency limit reached',
                           extra={
                               'event': 'search.rejected',
                               'failure_class': 'overloaded',
                           })
            raise RequestError(HTTPStatus.SERVICE_UNAVAILABLE,
                               'overloaded',
                               'Too many concurrent searches.')

        try:
            future = self._search_pool.submit(state.engine.search,
                                              query, filters, mode, top_k)
        except BaseException:
            self._slots.release()
            raise

        # The slot stays taken until the search finishes, even after a
        # timeout response.
        future.add_done_callback(lambda _: self._slots.release())

        try:
            result = future.result(
                timeout=self.config.request_timeout_ms / 1000.0)
        except FutureTimeoutError:
            logger.warning('Search timed out',
                           extra={
                               'event': 'search.timeout',
                               'failure_class': 'timeout',
                           })
            raise RequestError(HTTPStatus.GATEWAY_TIMEOUT,
                               'timeout',
                               'The search did not finish in time.')
        except DataError as e:
            raise RequestError(HTTPStatus.BAD_REQUEST, e.code, str(e))

        return result.to_dict()

    def ingest(
        self,
        body: str,
    ) -> IngestResponse:
        """Accept corpus records and schedule a rebuild.

        Args:
            body (str):
                The JSONL records.

        Returns:
            IngestResponse:
            The accepted and rejected counts, with an entry per rejected
            line.

        Raises:
            RequestError:
                The body was empty or every record was rejected.
        """
        lines = body.splitlines()

        if not any(line.strip() for line in lines):
            raise RequestError(HTTPStatus.BAD_REQUEST,
                               'empty_body',
                               'The request contained no records.')

        with self._corpus_lock:
            result = ingest_corpus(
                lines,
                self._engine_config.ingest,
                start_id=(self._documents[-1].doc_id + 1
                          if self._documents else 0),
                workers=self.config.ingest_workers,
                source='request',
                strict=False,
                existing_numbers=[
                    document.document_number
                    for document in self._documents
                ])

            if result.accepted:
                self._documents.extend(result.documents)
                self._pending_rebuilds += 1

        response = IngestResponse(
            accepted=result.accepted,
            rejected=result.rejected,
            errors=[
                {
                    'line': line_number,
                    'code': error.code,
                    'message': str(error),
                }
                for line_number, error in result.errors
            ])

        if not result.accepted:
            raise RequestError(HTTPStatus.BAD_REQUEST,
                               'no_valid_records',
                               'Every record was rejected.',
                               details=response.to_dict())

        self._rebuild_pool.submit(self._rebuild)

        return response

    def _rebuild(self) -> Optional[IndexState]:
        with self._corpus_lock:
            documents = list(self._documents)

        try:
            bundle = build_bundle(documents,
                                  self._engine_config,
                                  glossary=self._glossary,
                                  vocabularies=self._vocabularies)

            if self.config.index_dir is not None:
                save_snapshot(bundle, self.config.index_dir)

            state = self.handle.publish(bundle)
        except Exception:
            logger.exception('Index rebuild failed',
                             extra={'event': 'rebuild.failed'})
            return None
        finally:
            with self._corpus_lock:
                self._pending_rebuilds -= 1

        logger.info('Published snapshot version %d with %d documents',
                    state.snapshot_version, state.docs,
                    extra={
                        'event': 'rebuild.published',
                        'snapshot_version': state.snapshot_version,
                        'docs': state.docs,
                    })

        return state

    def wait_for_rebuilds(self) -> None:
        """Block until every scheduled rebuild has finished."""
        self._rebuild_pool.submit(lambda: None).result()

    def close(self) -> None:
        """Stop the worker pools."""
        self._rebuild_pool.shutdown(wait=True)
        self._search_pool.shutdown(wait=False)


def _parse_search_body(
    body: Any,
) -> tuple[str, Mapping[str, str], int, SearchMode]:
    def _invalid(message: str) -> RequestError:
        return RequestError(HTTPStatus.BAD_REQUEST, 'invalid_request',
                            message)

    if not isinstance(body, dict):
        raise _invalid('The body must be a JSON object.')

    query = body.get('query')
    filters = body.get('filters') or {}
    top_k = body.get('top_k', 10)
    mode = body.get('mode', SearchMode.HYBRID.value)

    if not isinstance(query, str):
        raise _invalid('"query" must be a string.')

    if (not isinstance(filters, dict) or
        not all(isinstance(key, str) and isinstance(value, str)
                for key, value in filters.items())):
        raise _invalid('"filters" must map strings to strings.')

    if (isinstance(top_k, bool) or not isinstance(top_k, int) or
        not 1 <= top_k <= MAX_TOP_K):
        raise _invalid(f'"top_k" must be an integer in [1, {MAX_TOP_K}].')

    try:
        mode = SearchMode(mode)
    except ValueError:
        raise _invalid('"mode" must be one of: %s.'
                       % ', '.join(m.value for m in SearchMode))

    return query, filters, top_k, mode


#
# HTTP
#

class FinderRequestHandler(BaseHTTPRequestHandler):
    """Routes requests to a :py:class:`SearchService`."""

    server: FinderHTTPServer
    protocol_version = 'HTTP/1.1'

    def do_GET(self) -> None:
        self._dispatch('GET')

    def do_POST(self) -> None:
        self._dispatch('POST')

    def _dispatch(
        self,
        method: str,
    ) -> None:
        service = self.server.service
        routes = {
            '/v1/search': ('POST', self._handle_search),
            '/v1/documents': ('POST', self._handle_ingest),
            '/v1/health': ('GET', lambda: (HTTPStatus.OK, service.health())),
        }
        path = self.path.split('?', 1)[0]

        try:
            if path not in routes:
                raise RequestError(HTTPStatus.NOT_FOUND, 'not_found',
                                   f'No route for {path}.')

            allowed, handler = routes[path]

            if method != allowed:
                raise RequestError(HTTPStatus.METHOD_NOT_ALLOWED,
                                   'method_not_allowed',
                                   f'{path} only accepts {allowed}.')

            status, payload = handler()
        except RequestError as e:
            status = e.status
            payload = {
                'error': {
                    'code': e.code,
                    'message': e.message,
                },
                **e.details,
            }
        except FinderError as e:
            logger.exception('Request to %s failed', path)
            status = HTTPStatus.INTERNAL_SERVER_ERROR
            payload = {'error': e.to_dict()}
        except Exception:
            logger.exception('Request to %s failed', path)
            status = HTTPStatus.INTERNAL_SERVER_ERROR
            payload = {
                'error': {
                    'code': 'internal_error',
                    'message': 'An internal error occurred.',
                },
            }

        self._send_json(status, payload)

    def _read_body(self) -> bytes:
        try:
            length = int(self.headers.get('Content-Length') or 0)
        except ValueError:
            raise RequestError(HTTPStatus.BAD_REQUEST, 'invalid_request',
                               'Invalid Content-Length.')

        if length > MAX_BODY_BYTES:
            # The body is left unread, so the connection can't be reused.
            self.close_connection = True
            raise RequestError(HTTPStatus.REQUEST_ENTITY_TOO_LARGE,
                               'body_too_large',
                               f'Bodies are limited to {MAX_BODY_BYTES} '
                               f'bytes.')

        return self.rfile.read(length) if length > 0 else b''

    def _handle_search(self) -> tuple[HTTPStatus, Any]:
        try:
            body = json.loads(self._read_body().decode('utf-8'))
        except ValueError as e:
            raise RequestError(HTTPStatus.BAD_REQUEST, 'invalid_json', str(e))

        return HTTPStatus.OK, self.server.service.search(body)

    def _handle_ingest(self) -> tuple[HTTPStatus, Any]:
        try:
            body = self._read_body().decode('utf-8')
        except UnicodeDecodeError as e:
            raise RequestError(HTTPStatus.BAD_REQUEST, 'invalid_body',
                               str(e))

        return (HTTPStatus.ACCEPTED,
                self.server.service.ingest(body).to_dict())

    def _send_json(
        self,
        status: HTTPStatus,
        payload: Any,
    ) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode('utf-8')
        self.send_response(status.value)
        self.send_header('Content-Type', 'application/json; charset=utf-8')
        self.send_header('Content-Length', str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(
        self,
        format: str,
        *args: Any,
    ) -> None:
        logger.debug('%s - %s', self.client_address[0], format % args,
                     extra={'event': 'http.request'})


class FinderHTTPServer(ThreadingHTTPServer):
    """A threading HTTP server bound to a :py:class:`SearchService`."""

    daemon_threads = True

    # Leave room for bursts of concurrent clients.
    request_queue_size = 1024

    def __init__(
        self,
        address: tuple[str, int],
        service: SearchService,
    ) -> None:
        """Initialize the server.

        Args:
            address (tuple):
                The ``(host, port)`` to listen on. Port 0 picks a free port.

            service (SearchService):
                The service to route requests to.
        """
        super().__init__(address, FinderRequestHandler)
        self.service = service


def create_server(
    config: ServiceConfig,
    bundle: Optional[IndexBundle] = None,
    *,
    engine_config: Optional[EngineConfig] = None,
) -> FinderHTTPServer:
    """Create a server for a configuration.

    Args:
        config (finder.config.ServiceConfig):
            The service settings.

        bundle (finder.storage.IndexBundle, optional):
            The index to serve at first.

        engine_config (finder.config.EngineConfig, optional):
            Settings for indexes built from ingested documents when no
            initial bundle is given.

    Returns:
        FinderHTTPServer:
        The server, bound but not yet serving.
    """
    service = SearchService(config, bundle, engine_config=engine_config)

    return FinderHTTPServer((config.host, config.port), service)


def serve(
    server: FinderHTTPServer,
) -> None:
    """Serve requests until interrupted.

    Args:
        server (FinderHTTPServer):
            The server to run.
    """
    host, port = server.server_address[:2]
    logger.info('Serving on http://%s:%d', host, port,
                extra={
                    'event': 'service.started',
                    'docs': server.service.health()['docs'],
                })

    try:
        server.serve_forever()
    except KeyboardInterrupt:
        logger.info('Shutdown signal received')
    finally:
        server.server_close()
        server.service.close()
        logger.info('Server stopped', extra={'event': 'service.stopped'})
