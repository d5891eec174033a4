"""Reading and writing little-endian index segments.

Both index segments start with a 6-byte magic string and a ``u32`` format
version, followed by fixed-width little-endian fields and arrays.
"""

from __future__ import annotations

import io
import struct

import numpy as np
import numpy.typing as npt

from finder.errors import CorruptSnapshotError, VersionMismatchError


class SegmentWriter:
    """Builds a segment in memory."""

    def __init__(
        self,
        magic: bytes,
        version: int,
    ) -> None:
        """Initialize the writer and emit the header.

        Args:
            magic (bytes):
                The segment's magic string.

            version (int):
                The segment format version.
        """
        self._buf = io.BytesIO()
        self._buf.write(magic)
        self.u32(version)

    def u32(self, value: int) -> None:
        self._buf.write(struct.pack('<I', value))

    def u64(self, value: int) -> None:
        self._buf.write(struct.pack('<Q', value))

    def f64(self, value: float) -> None:
        self._buf.write(struct.pack('<d', value))

    def text(self, value: str) -> None:
        """Write a ``u32`` length-prefixed UTF-8 string.

        Args:
            value (str):
                The string to write.
        """
        data = value.encode('utf-8')
        self.u32(len(data))
        self._buf.write(data)

    def array(
        self,
        values: npt.ArrayLike,
        dtype: str,
    ) -> None:
        """Write an array's raw bytes, without a length prefix.

        Args:
            values (numpy.ndarray or list):
                The values to write.

            dtype (str):
                The little-endian numpy dtype to store them as.
        """
        self._buf.write(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return self._buf.getvalue()


class SegmentReader:
    """Reads a segment produced by :py:class:`SegmentWriter`.

    Any truncation or structural problem raises
    :py:class:`~finder.errors.CorruptSnapshotError` naming the segment.
    """

    def __init__(
        self,
        data: bytes,
        *,
        filename: str,
        magic: bytes,
        version: int,
    ) -> None:
        """Initialize the reader and verify the header.

        Args:
            data (bytes):
                The segment contents.

            filename (str):
                The segment's file name, for error messages.

            magic (bytes):
                The expected magic string.

            version (int):
                The supported format version.

        Raises:
            finder.errors.CorruptSnapshotError:
                The magic string did not match.

            finder.errors.VersionMismatchError:
                The segment uses another format version.
        """
        self.filename = filename
        self._data = memoryview(data)
        self._pos = 0

        if bytes(self._take(len(magic))) != magic:
            raise CorruptSnapshotError(filename=filename,
                                       reason='bad magic header')

        found = self.u32()

        if found != version:
            raise VersionMismatchError(source=filename,
                                       found=found,
                                       expected=version)

    def _take(self, n: int) -> memoryview:
        if n < 0 or self._pos + n > len(self._data):
            raise CorruptSnapshotError(filename=self.filename,
                                       reason='unexpected end of data')

        chunk = self._data[self._pos:self._pos + n]
        self._pos += n

        return chunk

    def u32(self) -> int:
        return struct.unpack('<I', self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack('<Q', self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack('<d', self._take(8))[0]

    def text(self) -> str:
        try:
            return str(self._take(self.u32()), 'utf-8')
        except UnicodeDecodeError as e:
            raise CorruptSnapshotError(filename=self.filename, reason=str(e))

    def array(
        self,
        count: int,
        dtype: str | np.dtype,
    ) -> np.ndarray:
        """Read ``count`` items of the given dtype.

        Args:
            count (int):
                The number of items.

            dtype (str or numpy.dtype):
                The little-endian dtype of each item.

        Returns:
            numpy.ndarray:
            A writable copy of the items.
        """
        dtype = np.dtype(dtype)

        return np.frombuffer(self._take(count * dtype.itemsize),
                             dtype=dtype).copy()

    @property
    def at_end(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        """Raise if unread bytes remain.

        Raises:
            finder.errors.CorruptSnapshotError:
                There was trailing data.
        """
        if not self.at_end:
            raise CorruptSnapshotError(filename=self.filename,
                                       reason='trailing data')
