"""Structured logging.

Finder logs through standard :py:mod:`logging` loggers. When running as a
service or from the command line, :py:func:`configure_logging` renders each
record as a single JSON object per line, including any fields passed
through ``extra=``:

.. code-block:: python

    logger.info('search completed',
                extra={'event': 'search.completed',
                       'timings_ms': {'sparse': 1.2, 'dense': 0.8}})
"""

from __future__ import annotations

import json
import logging
import sys
from datetime import datetime, timezone
from typing import IO, Optional


# Attributes present on every LogRecord. Anything else came from ``extra=``.
_RECORD_ATTRS = frozenset(
    logging.LogRecord('', 0, '', 0, '', (), None).__dict__
) | {'message', 'asctime', 'taskName'}


class JSONLogFormatter(logging.Formatter):
    """Formats log records as one-line JSON objects."""

    def format(
        self,
        record: logging.LogRecord,
    ) -> str:
        """Return the JSON encoding of a record.

        Args:
            record (logging.LogRecord):
                The record to format.

        Returns:
            str:
            The JSON line.
        """
        payload = {
            'ts': datetime.fromtimestamp(record.created, tz=timezone.utc)
                  .isoformat(timespec='milliseconds'),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
        }

        for key, value in record.__dict__.items():
            if key not in _RECORD_ATTRS and not key.startswith('_'):
                payload[key] = value

        if record.exc_info:
            payload['exc_info'] = self.formatException(record.exc_info)

        return json.dumps(payload, default=str, ensure_ascii=False)


def configure_logging(
    level: str = 'INFO',
    *,
    json_output: bool = True,
    stream: Optional[IO[str]] = None,
) -> logging.Handler:
    """Install a log handler on the ``finder`` logger.

    Any handler previously installed by this function is replaced.

    Args:
        level (str, optional):
            The minimum level to emit.

        json_output (bool, optional):
            Whether to emit JSON lines. If ``False``, a plain text format is
            used.

        stream (io.TextIOBase, optional):
            Where to write. Defaults to standard error.

    Returns:
        logging.Handler:
        The installed handler.
    """
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.set_name('finder')

    if json_output:
        handler.setFormatter(JSONLogFormatter())
    else:
        handler.setFormatter(logging.Formatter(
            '%(asctime)s %(levelname)s %(name)s: %(message)s'))

    root = logging.getLogger('finder')

    for existing in list(root.handlers):
        if existing.get_name() == 'finder':
            root.removeHandler(existing)

    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False

    return handler
