"""Error classes for Finder.

All errors raised by Finder derive from :py:class:`FinderError`. Each class
carries a ``%``-based :py:attr:`~FinderError.message_template` and a stable
:py:attr:`~FinderError.code`, which the HTTP service and command line use to
report failures.
"""

from __future__ import annotations

from typing import Any, ClassVar, Optional, TYPE_CHECKING

from typing_extensions import Protocol

if TYPE_CHECKING:
    class _FormatStr(Protocol):
        def __mod__(
            self,
            x: Any,
            /
        ) -> str:
            ...


class FinderError(Exception):
    """Base class for a Finder exception."""

    #: The template for an error message.
    #:
    #: This is in the form of a ``%``-based format string, filled in from the
    #: keyword arguments passed to the constructor.
    message_template: ClassVar[_FormatStr] = (
        'Unspecified search engine error.'
    )

    #: A stable, machine-readable code for the error.
    code: ClassVar[str] = 'internal_error'

    #: Whether the error is caused by bad input data rather than a bug.
    #:
    #: The command line exits with status 2 for data errors, and the HTTP
    #: service reports them as client errors.
    is_data_error: ClassVar[bool] = False

    def __init__(
        self,
        message: Optional[str] = None,
        **kwargs,
    ) -> None:
        """Initialize the error.

        Args:
            message (str, optional):
                An explicit error message as a ``%``-based format string.

                If not provided, :py:attr:`message_template` will be used.

            **kwargs (dict):
                Values for the format string. Each is also stored as an
                attribute on the error.
        """
        for key, value in kwargs.items():
            setattr(self, key, value)

        super().__init__((message or self.message_template) % kwargs)

    def to_dict(self) -> dict[str, str]:
        """Return the error as a serializable payload.

        Returns:
            dict:
            A dictionary with ``code`` and ``message`` keys.
        """
        return {
            'code': self.code,
            'message': str(self),
        }


class DataError(FinderError):
    """Base class for errors caused by invalid input data."""

    code = 'data_error'
    is_data_error = True


#
# Corpus and ingestion
#

class MissingFieldError(DataError):
    """A required metadata field was absent."""

    message_template = 'Required metadata field "%(field_name)s" is missing.'
    code = 'missing_field'

    #: The name of the missing field.
    field_name: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        field_name: str,
    ) -> None:
        """Initialize the error.

        Args:
            field_name (str):
                The name of the missing field.

            message (str, optional):
                An explicit error message. This supports a
                ``%(field_name)s`` format argument.
        """
        super().__init__(message, field_name=field_name)


class InvalidLanguageError(DataError):
    """A language code did not match the expected pattern."""

    message_template = '"%(language)s" is not a valid language code.'
    code = 'invalid_language'

    #: The rejected language value.
    language: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        language: str,
    ) -> None:
        """Initialize the error.

        Args:
            language (str):
                The rejected language value.

            message (str, optional):
                An explicit error message. This supports a
                ``%(language)s`` format argument.
        """
        super().__init__(message, language=language)


class DuplicateDocumentError(DataError):
    """Two documents share the same external document number."""

    message_template = (
        'Document number "%(document_number)s" is already present in the '
        'corpus.'
    )
    code = 'duplicate_document'

    document_number: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        document_number: str,
    ) -> None:
        super().__init__(message, document_number=document_number)


class EmptyCorpusError(DataError):
    """An operation needed at least one document but got none."""

    message_template = 'The corpus contains no documents.'
    code = 'empty_corpus'


class EmptyBodyError(DataError):
    """A document body had no text to chunk."""

    message_template = 'The document body is empty.'
    code = 'empty_body'


class ParseError(DataError):
    """A line of an input file could not be parsed.

    This is used for corpus records, queries and relevance judgments.
    """

    message_template = '%(source)s, line %(line_number)s: %(reason)s'
    code = 'parse_error'

    ######################
    # Instance variables #
    ######################

    #: A description of the input, such as a filename.
    source: str

    #: The 1-based line number that failed.
    line_number: int

    #: Why the line was rejected.
    reason: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        source: str,
        line_number: int,
        reason: str,
    ) -> None:
        """Initialize the error.

        Args:
            source (str):
                A description of the input, such as a filename.

            line_number (int):
                The 1-based line number that failed.

            reason (str):
                Why the line was rejected.

            message (str, optional):
                An explicit error message. This supports ``%(source)s``,
                ``%(line_number)s`` and ``%(reason)s`` format arguments.
        """
        super().__init__(message,
                         source=source,
                         line_number=line_number,
                         reason=reason)


class EnricherError(FinderError):
    """An enricher broke the identity of the document it processed."""

    message_template = 'Enricher "%(enricher_name)s" failed: %(reason)s'
    code = 'enricher_error'

    enricher_name: str
    reason: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        enricher_name: str,
        reason: str,
    ) -> None:
        super().__init__(message,
                         enricher_name=enricher_name,
                         reason=reason)


#
# Indexes and search
#

class UnknownFieldError(DataError):
    """A metadata field name is not part of the schema."""

    message_template = '"%(field_name)s" is not a known metadata field.'
    code = 'unknown_field'

    field_name: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        field_name: str,
    ) -> None:
        super().__init__(message, field_name=field_name)


class DimMismatchError(DataError):
    """A vector's dimension does not match the index."""

    message_template = (
        'Expected a vector of dimension %(expected)s, got %(actual)s.'
    )
    code = 'dim_mismatch'

    expected: int
    actual: int

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        expected: int,
        actual: int,
    ) -> None:
        super().__init__(message, expected=expected, actual=actual)


class GraphNotBuiltError(FinderError):
    """Approximate search was requested before the graph was built."""

    message_template = 'The HNSW graph has not been built for this index.'
    code = 'graph_not_built'


class EmptyIndexError(DataError):
    """An operation needed a non-empty vector index."""

    message_template = 'The dense index contains no vectors.'
    code = 'empty_index'


class EmptyQueryError(DataError):
    """A query contained no text."""

    message_template = 'The query is empty.'
    code = 'empty_query'


class ScoreRangeError(DataError):
    """A score passed to a fusion function was out of range."""

    message_template = (
        '%(name)s=%(value)r is outside the range [%(low)s, %(high)s].'
    )
    code = 'score_range'

    name: str
    value: float
    low: float
    high: float

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        name: str,
        value: float,
        low: float,
        high: float,
    ) -> None:
        super().__init__(message,
                         name=name,
                         value=value,
                         low=low,
                         high=high)


#
# Evaluation
#

class MissingQrelsError(DataError):
    """A run contained a query with no relevance judgments."""

    message_template = 'No relevance judgments for query "%(query_id)s".'
    code = 'missing_qrels'

    query_id: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        query_id: str,
    ) -> None:
        super().__init__(message, query_id=query_id)


class EmptyCutoffsError(DataError):
    """No rank cutoffs were given for metric computation."""

    message_template = 'At least one rank cutoff is required.'
    code = 'empty_cutoffs'


#
# Snapshots
#

class SnapshotError(DataError):
    """Base class for snapshot loading and saving errors."""

    code = 'snapshot_error'


class VersionMismatchError(SnapshotError):
    """A snapshot or segment was written in an unsupported format version."""

    message_template = (
        '%(source)s has format version %(found)s; this build reads '
        'version %(expected)s.'
    )
    code = 'version_mismatch'

    source: str
    found: int
    expected: int

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        source: str,
        found: int,
        expected: int,
    ) -> None:
        super().__init__(message,
                         source=source,
                         found=found,
                         expected=expected)


class ChecksumMismatchError(SnapshotError):
    """A snapshot file's contents do not match the manifest."""

    message_template = 'Checksum mismatch for "%(filename)s".'
    code = 'checksum_mismatch'

    filename: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        filename: str,
    ) -> None:
        super().__init__(message, filename=filename)


class CorruptSnapshotError(SnapshotError):
    """A snapshot file is structurally invalid."""

    message_template = '"%(filename)s" is corrupt: %(reason)s'
    code = 'corrupt_snapshot'

    filename: str
    reason: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        filename: str,
        reason: str,
    ) -> None:
        super().__init__(message, filename=filename, reason=reason)


class SnapshotWriteError(FinderError):
    """A snapshot could not be written."""

    message_template = 'Could not write snapshot to %(path)s: %(reason)s'
    code = 'snapshot_write_error'

    path: str
    reason: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        path: str,
        reason: str,
    ) -> None:
        super().__init__(message, path=path, reason=reason)


class ConfigurationError(DataError):
    """A configuration value was invalid."""

    message_template = 'Invalid configuration: %(reason)s'
    code = 'invalid_configuration'

    reason: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        reason: str,
    ) -> None:
        super().__init__(message, reason=reason)


#
# Component registries
#

class ComponentNotFoundError(FinderError):
    """No component is registered under the requested name."""

    message_template = 'No %(kind)s is registered with name "%(name)s".'
    code = 'component_not_found'

    ######################
    # Instance variables #
    ######################

    #: The kind of component that was looked up, such as ``enricher``.
    kind: str

    #: The name that was looked up.
    name: str

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        kind: str,
        name: str,
    ) -> None:
        """Initialize the error.

        Args:
            kind (str):
                The kind of component that was looked up.

            name (str):
                The name that was looked up.

            message (str, optional):
                An explicit error message. This supports ``%(kind)s`` and
                ``%(name)s`` format arguments.
        """
        super().__init__(message, kind=kind, name=name)


class BaseRegistrationError(FinderError):
    """Base class for component registration errors."""

    code = 'registration_error'

    #: The component that failed to be registered.
    item: object

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        item: object,
        **kwargs,
    ) -> None:
        super().__init__(message, item=item, **kwargs)


class AlreadyRegisteredError(BaseRegistrationError):
    """The component is already registered."""

    message_template = (
        'Could not register %(item)s: it is already registered.'
    )


class RegistrationConflictError(BaseRegistrationError):
    """Another component is already registered under the same name."""

    message_template = (
        'Could not register %(item)s: another %(kind)s (%(other_item)s) is '
        'already registered with name "%(name)s".'
    )

    kind: str
    name: str
    other_item: object

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        item: object,
        kind: str,
        name: str,
        other_item: object,
    ) -> None:
        super().__init__(message,
                         item=item,
                         kind=kind,
                         name=name,
                         other_item=other_item)


class InvalidComponentError(BaseRegistrationError):
    """The component has no ``name`` attribute."""

    message_template = (
        'Could not register %(item)s: it does not have a "name" attribute.'
    )


class ComponentNotRegisteredError(FinderError):
    """A component could not be unregistered because it was not registered."""

    message_template = 'Could not unregister %(item)s: it is not registered.'
    code = 'component_not_registered'

    item: object

    def __init__(
        self,
        message: Optional[str] = None,
        *,
        item: object,
    ) -> None:
        super().__init__(message, item=item)
