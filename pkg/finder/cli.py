"""The ``finder`` command line tool.

Subcommands:

``ingest``
    Convert a JSONL corpus into a snapshot.

``search``
    Run one query against a snapshot.

``eval``
    Benchmark a snapshot against queries and relevance judgments.

``serve``
    Run the HTTP service.

Exit codes are 0 on success, 1 for usage errors, 2 for data errors (bad
input files, invalid queries, corrupt snapshots) and 3 for internal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import IO, Any, NoReturn, Optional, Sequence

from finder._version import get_version_string
from finder.config import ServiceConfig, load_config
from finder.errors import DataError, EmptyCorpusError
from finder.evaluation import run_benchmark, write_run
from finder.ingest import (ingest_corpus,
                           load_gazetteer,
                           read_lines,
                           stage_raw,
                           write_processed)
from finder.logs import configure_logging
from finder.models import dumps_canonical
from finder.query import load_glossary, load_vocabularies
from finder.rank import SearchEngine, SearchMode
from finder.storage import (MANIFEST_FILENAME,
                            build_bundle,
                            load_snapshot,
                            save_snapshot)


logger = logging.getLogger(__name__)


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA_ERROR = 2
EXIT_INTERNAL_ERROR = 3


class UsageError(Exception):
    """The command line was invalid."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f'{self.prog}: {message}')


def _parse_filter(value: str) -> tuple[str, str]:
    key, sep, filter_value = value.partition('=')

    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(
            f'expected FIELD=VALUE, got {value!r}')

    return key.strip(), filter_value.strip()


def _parse_cutoffs(value: str) -> list[int]:
    try:
        cutoffs = [int(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f'expected comma-separated integers, got {value!r}')

    if any(k < 1 for k in cutoffs):
        raise argparse.ArgumentTypeError('cutoffs must be positive')

    return cutoffs


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser for the ``finder`` command.

    Returns:
        argparse.ArgumentParser:
        The parser.
    """
    parser = _ArgumentParser(
        prog='finder',
        description='Hybrid lexical and semantic document search.')
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {get_version_string()}')
    parser.add_argument('--log-level', default=None,
                        help='Minimum log level (default: WARNING, or '
                             'FINDER_LOG_LEVEL for serve).')
    sub = parser.add_subparsers(dest='command', required=True,
                                parser_class=_ArgumentParser)
    index_default = os.environ.get('FINDER_INDEX_DIR')

    ingest = sub.add_parser('ingest', help='Build a snapshot from a corpus.')
    ingest.add_argument('--corpus', type=Path, required=True,
                        help='The JSONL corpus file.')
    ingest.add_argument('--out', type=Path, required=True,
                        help='The snapshot directory to write.')
    ingest.add_argument('--gazetteer', type=Path,
                        help='A JSON gazetteer for extractive tagging.')
    ingest.add_argument('--glossary', type=Path,
                        help='A JSON abbreviation glossary.')
    ingest.add_argument('--vocabularies', type=Path,
                        help='A JSON file of filter vocabularies.')
    ingest.add_argument('--workspace', type=Path,
                        help='A root for the raw/ and processed/ layout.')
    ingest.add_argument('--max-chunk-tokens', type=int)
    ingest.add_argument('--overlap', type=int)
    ingest.add_argument('--workers', type=int, default=32)
    ingest.add_argument('--config', type=Path,
                        help='A JSON engine configuration file.')

    search = sub.add_parser('search', help='Search a snapshot.')
    search.add_argument('--index', type=Path, default=index_default)
    search.add_argument('--query', required=True)
    search.add_argument('--filter', dest='filters', action='append',
                        type=_parse_filter, default=[],
                        metavar='FIELD=VALUE')
    search.add_argument('--top-k', type=int, default=10)
    search.add_argument('--mode', default=SearchMode.HYBRID.value,
                        choices=[mode.value for mode in SearchMode])
    search.add_argument('--json', action='store_true',
                        help='Print the full result as JSON.')

    evaluate = sub.add_parser('eval', help='Benchmark a snapshot.')
    evaluate.add_argument('--index', type=Path, default=index_default)
    evaluate.add_argument('--queries', type=Path, required=True)
    evaluate.add_argument('--qrels', type=Path, required=True)
    evaluate.add_argument('--cutoffs', type=_parse_cutoffs, default=None)
    evaluate.add_argument('--mode', default=SearchMode.HYBRID.value,
                          choices=[mode.value for mode in SearchMode])
    evaluate.add_argument('--top-k', type=int, default=None)
    evaluate.add_argument('--run-out', type=Path,
                          help='Where to write the TREC run file.')
    evaluate.add_argument('--report-out', type=Path,
                          help='Where to write the JSON reports.')
    evaluate.add_argument('--parallel', action='store_true')

    serve = sub.add_parser('serve', help='Run the HTTP service.')
    serve.add_argument('--index', type=Path, default=index_default)
    serve.add_argument('--host', default=None)
    serve.add_argument('--port', type=int, default=None)
    serve.add_argument('--max-concurrent-queries', type=int, default=None)
    serve.add_argument('--request-timeout-ms', type=int, default=None)

    return parser


def _require_index(index: Optional[Path]) -> Path:
    if index is None:
        raise UsageError('--index is required (or set FINDER_INDEX_DIR)')

    return index


def _write_json(
    data: Any,
    out: IO[str],
) -> None:
    out.write(json.dumps(data, indent=2, ensure_ascii=False))
    out.write('\n')


def cmd_ingest(
    args: argparse.Namespace,
    out: IO[str],
) -> int:
    """Build a snapshot from a corpus file.

    Args:
        args (argparse.Namespace):
            The parsed arguments.

        out (io.TextIOBase):
            Where to print the summary.

    Returns:
        int:
        The exit code.
    """
    config = load_config(args.config)
    ingest_config = config.ingest
    overrides: dict[str, Any] = {}

    if args.max_chunk_tokens is not None:
        overrides['max_chunk_tokens'] = args.max_chunk_tokens

    if args.overlap is not None:
        overrides['chunk_overlap_tokens'] = args.overlap

    if args.gazetteer is not None:
        overrides['gazetteer'] = load_gazetteer(args.gazetteer)

    if overrides:
        ingest_config = replace(ingest_config, **overrides)
        config = replace(config, ingest=ingest_config)

    corpus_path = args.corpus

    if args.workspace is not None:
        corpus_path = stage_raw(corpus_path, args.workspace)

    result = ingest_corpus(read_lines(corpus_path),
                           ingest_config,
                           workers=args.workers,
                           source=str(args.corpus),
                           strict=False)

    if not result.documents:
        raise EmptyCorpusError()

    bundle = build_bundle(
        result.documents,
        config,
        glossary=load_glossary(args.glossary) if args.glossary else None,
        vocabularies=(load_vocabularies(args.vocabularies)
                      if args.vocabularies else None))
    manifest = save_snapshot(bundle, args.out)

    if args.workspace is not None:
        write_processed(bundle.documents, args.workspace)

    _write_json(
        {
            'accepted': result.accepted,
            'rejected': result.rejected,
            'errors': [
                {
                    'line': line_number,
                    'code': error.code,
                    'message': str(error),
                }
                for line_number, error in result.errors
            ],
            'snapshot': str(args.out),
            'counts': manifest['counts'],
        },
        out)

    return EXIT_OK


def cmd_search(
    args: argparse.Namespace,
    out: IO[str],
) -> int:
    """Run one search against a snapshot.

    Args:
        args (argparse.Namespace):
            The parsed arguments.

        out (io.TextIOBase):
            Where to print the results.

    Returns:
        int:
        The exit code.
    """
    if args.top_k < 1:
        raise UsageError('--top-k must be positive')

    engine = SearchEngine(load_snapshot(_require_index(args.index)))
    result = engine.search(args.query, dict(args.filters), args.mode,
                           args.top_k)

    if args.json:
        out.write(dumps_canonical(result.to_dict()))
        out.write('\n')
    elif not result.hits:
        out.write('No results.\n')
    else:
        for hit in result.hits:
            out.write('%2d. %.4f  %s  %s  [%s]\n'
                      % (hit.rank, hit.score, hit.document_number,
                         hit.title, hit.matched_via.value))

    return EXIT_OK


def cmd_eval(
    args: argparse.Namespace,
    out: IO[str],
) -> int:
    """Benchmark a snapshot.

    Args:
        args (argparse.Namespace):
            The parsed arguments.

        out (io.TextIOBase):
            Where to print the reports.

    Returns:
        int:
        The exit code.
    """
    if args.top_k is not None and args.top_k < 1:
        raise UsageError('--top-k must be positive')

    bundle = load_snapshot(_require_index(args.index))
    report = run_benchmark(bundle,
                           args.queries,
                           args.qrels,
                           args.cutoffs,
                           args.mode,
                           top_k=args.top_k,
                           parallel=args.parallel)

    if args.run_out is not None:
        with open(args.run_out, 'w', encoding='utf-8') as fp:
            write_run(report.run, fp)

    reports = report.to_dict()

    if args.report_out is not None:
        with open(args.report_out, 'w', encoding='utf-8') as fp:
            _write_json(reports, fp)

    _write_json(reports, out)

    return EXIT_OK


def cmd_serve(
    args: argparse.Namespace,
    out: IO[str],
) -> int:
    """Run the HTTP service until interrupted.

    Args:
        args (argparse.Namespace):
            The parsed arguments.

        out (io.TextIOBase):
            Unused.

    Returns:
        int:
        The exit code.
    """
    from finder.service import create_server, serve

    config = ServiceConfig.from_env(
        index_dir=args.index,
        host=args.host,
        port=args.port,
        max_concurrent_queries=args.max_concurrent_queries,
        request_timeout_ms=args.request_timeout_ms,
        log_level=args.log_level)
    configure_logging(config.log_level)

    bundle = None

    if config.index_dir is not None and \
       (config.index_dir / MANIFEST_FILENAME).exists():
        bundle = load_snapshot(config.index_dir)

    serve(create_server(config, bundle))

    return EXIT_OK


_COMMANDS = {
    'ingest': cmd_ingest,
    'search': cmd_search,
    'eval': cmd_eval,
    'serve': cmd_serve,
}


def main(
    argv: Optional[Sequence[str]] = None,
    *,
    out: Optional[IO[str]] = None,
    err: Optional[IO[str]] = None,
) -> int:
    """Run the ``finder`` command.

    Args:
        argv (list of str, optional):
            The arguments, without the program name. Defaults to
            :py:data:`sys.argv`.

        out (io.TextIOBase, optional):
            Where to write output. Defaults to standard output.

        err (io.TextIOBase, optional):
            Where to write errors. Defaults to standard error.

    Returns:
        int:
        The exit code.
    """
    out = out or sys.stdout
    err = err or sys.stderr

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        err.write(f'{e}\n')
        return EXIT_USAGE
    except SystemExit as e:
        # --help and --version.
        return e.code if isinstance(e.code, int) else EXIT_OK

    if args.command != 'serve':
        configure_logging(args.log_level or 'WARNING', stream=err)

    try:
        return _COMMANDS[args.command](args, out)
    except UsageError as e:
        err.write(f'finder {args.command}: {e}\n')
        return EXIT_USAGE
    except DataError as e:
        err.write(f'error: {e}\n')
        return EXIT_DATA_ERROR
    except OSError as e:
        err.write(f'error: {e}\n')
        return EXIT_DATA_ERROR
    except Exception as e:
        logger.exception('finder %s failed', args.command)
        err.write(f'internal error: {e}\n')
        return EXIT_INTERNAL_ERROR
