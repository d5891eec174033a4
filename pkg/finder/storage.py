"""Index bundles and their on-disk snapshots.

A snapshot is a directory holding exactly these files:

``documents.jsonl``
    One canonical JSON document per line, in ``doc_id`` order.

``sparse.idx`` / ``dense.idx``
    The index segments.

``vocabularies.json`` / ``glossary.json``
    The query resources.

``manifest.json``
    The format version, creation time, counts, the engine configuration and
    its hash, and an FNV-1a 64-bit checksum of every other file. It is
    written last.

Each save writes a new version directory beside the snapshot path
(``.<name>.v-000001``, ``.<name>.v-000002``, ...), and the snapshot path is a
symbolic link that is atomically repointed at the newest version. Version
directories are never modified after the link points at them, so a reader
that resolves the link once sees a single consistent snapshot. The previous
version is kept until the next save, and a reader whose version is removed
under it retries with the current one.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt

from finder._version import SNAPSHOT_FORMAT_VERSION
from finder.config import EngineConfig
from finder.dense import DenseIndex, Embedder, create_embedder
from finder.errors import (ChecksumMismatchError,
                           ConfigurationError,
                           CorruptSnapshotError,
                           FinderError,
                           SnapshotError,
                           SnapshotWriteError,
                           VersionMismatchError)
from finder.models import Document, dumps_canonical
from finder.query import Glossary
from finder.sparse import SparseIndex

try:
    import fcntl
except ImportError:  # pragma: no cover
    fcntl = None  # type: ignore[assignment]


logger = logging.getLogger(__name__)


MANIFEST_FILENAME = 'manifest.json'
DOCUMENTS_FILENAME = 'documents.jsonl'
SPARSE_FILENAME = 'sparse.idx'
DENSE_FILENAME = 'dense.idx'
VOCABULARIES_FILENAME = 'vocabularies.json'
GLOSSARY_FILENAME = 'glossary.json'

#: The checksummed files, in the order they are written.
DATA_FILENAMES = (
    DOCUMENTS_FILENAME,
    SPARSE_FILENAME,
    DENSE_FILENAME,
    VOCABULARIES_FILENAME,
    GLOSSARY_FILENAME,
)

#: How many times a load is retried when the snapshot moves under it.
_LOAD_ATTEMPTS = 5

_FNV_OFFSET_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF
_FNV_PRIME_LOW_BYTE = _FNV_PRIME & 0xFF
_FNV_BLOCK_SIZE = 1 << 20


def fnv1a_64(data: bytes) -> int:
    """Return the 64-bit FNV-1a hash of some data.

    The hash is computed over blocks of the data with numpy, and matches
    the byte-at-a-time definition exactly.

    Args:
        data (bytes):
            The data to hash.

    Returns:
        int:
        The hash.
    """
    h = _FNV_OFFSET_BASIS
    array = np.frombuffer(data, dtype=np.uint8)

    for start in range(0, len(array), _FNV_BLOCK_SIZE):
        h = _fnv1a_block(h, array[start:start + _FNV_BLOCK_SIZE])

    return h


def _fnv1a_block(
    h: int,
    block: npt.NDArray[np.uint8],
) -> int:
    """Continue an FNV-1a hash over a block of bytes.

    XORing a byte into the hash changes only its low byte, so each step
    adds a small difference ``d`` before multiplying by the prime:

        h_n = h_0 * p**n + sum(d_i * p**(n - i + 1))

    The differences depend only on the running low byte, which follows
    ``l_i = ((l_{i-1} ^ b_i) * 0xB3) & 0xFF``. The prime's low byte is odd,
    so bit ``k`` of that product is bit ``k`` of ``l_{i-1} ^ b_i`` flipped
    by a value of the lower bits alone. Each bit of the low byte is then a
    prefix XOR, filled in from the lowest bit up.
    """
    n = len(block)
    low = np.zeros(n + 1, dtype=np.uint8)
    low[0] = h & 0xFF

    for k in range(8):
        lower_mask = np.uint8((1 << k) - 1)
        lower = ((low[:-1] ^ block) & lower_mask).astype(np.uint16)
        flips = ((lower * _FNV_PRIME_LOW_BYTE) >> k) & 1
        steps = ((block >> k) & 1) ^ flips.astype(np.uint8)
        plane = np.bitwise_xor.accumulate(steps) ^ ((low[0] >> k) & 1)
        low[1:] |= (plane << k).astype(np.uint8)

    previous = low[:-1].astype(np.int64)
    diffs = ((low[:-1] ^ block).astype(np.int64) - previous).view(np.uint64)

    # Integer overflow in uint64 arrays wraps, which is arithmetic mod 2**64.
    powers = np.cumprod(np.full(n, _FNV_PRIME, dtype=np.uint64))
    total = np.sum(diffs * powers[::-1], dtype=np.uint64)

    return (h * int(powers[-1]) + int(total)) & _U64_MASK


def checksum(data: bytes) -> str:
    """Return the manifest checksum of some data.

    Args:
        data (bytes):
            The data to checksum.

    Returns:
        str:
        The FNV-1a 64-bit hash, as 16 lowercase hex digits.
    """
    return '%016x' % fnv1a_64(data)


@dataclass(frozen=True)
class IndexBundle:
    """Everything needed to search a corpus.

    Bundles are never modified. Updates build a new bundle.

    Version Added:
        0.9
    """

    #: The documents, in ``doc_id`` order.
    documents: Sequence[Document]

    sparse: SparseIndex
    dense: DenseIndex
    embedder: Embedder

    #: The abbreviation glossary, if any.
    glossary: Optional[Glossary] = None

    #: Filter field to its known values.
    vocabularies: Mapping[str, Sequence[str]] = field(default_factory=dict)

    config: EngineConfig = field(default_factory=EngineConfig)

    #: When the bundle was built, as an ISO 8601 UTC timestamp.
    created_at: str = ''

    @property
    def n_chunks(self) -> int:
        return self.sparse.stats.n_chunks


def build_bundle(
    documents: Sequence[Document],
    config: Optional[EngineConfig] = None,
    *,
    glossary: Optional[Mapping[str, Sequence[str]]] = None,
    vocabularies: Optional[Mapping[str, Sequence[str]]] = None,
    created_at: Optional[str] = None,
) -> IndexBundle:
    """Build the indexes for a corpus.

    Args:
        documents (list of finder.models.Document):
            The ingested documents.

        config (finder.config.EngineConfig, optional):
            The engine configuration. Defaults are used if not provided.

        glossary (dict, optional):
            Abbreviations mapped to their expansions.

        vocabularies (dict, optional):
            Filter fields mapped to their known values.

        created_at (str, optional):
            The creation timestamp. Defaults to the current UTC time.

    Returns:
        IndexBundle:
        The new bundle.

    Raises:
        finder.errors.EmptyCorpusError:
            No documents were given.

        finder.errors.ConfigurationError:
            The glossary was invalid.
    """
    if config is None:
        config = EngineConfig()

    if created_at is None:
        created_at = (
            datetime.now(timezone.utc)
            .replace(microsecond=0)
            .isoformat()
        )

    documents = tuple(sorted(documents, key=lambda doc: doc.doc_id))
    embedder = create_embedder(config.dense)
    sparse = SparseIndex.build(documents,
                               k1=config.rank.k1,
                               b=config.rank.b)
    dense = DenseIndex.build(documents, embedder, config.dense)

    logger.info('Built index bundle: %d documents, %d chunks',
                len(documents), sparse.stats.n_chunks,
                extra={
                    'event': 'bundle.built',
                    'documents': len(documents),
                    'chunks': sparse.stats.n_chunks,
                })

    return IndexBundle(
        documents=documents,
        sparse=sparse,
        dense=dense,
        embedder=embedder,
        glossary=Glossary(glossary, embedder) if glossary else None,
        vocabularies={
            name: sorted(values)
            for name, values in sorted((vocabularies or {}).items())
        },
        config=config,
        created_at=created_at)


def config_hash(config: EngineConfig) -> str:
    """Return the manifest hash of an engine configuration.

    Args:
        config (finder.config.EngineConfig):
            The configuration.

    Returns:
        str:
        The checksum of its canonical JSON encoding.
    """
    return checksum(dumps_canonical(config.to_dict()).encode('utf-8'))


#
# Saving
#

def _encode_files(bundle: IndexBundle) -> dict[str, bytes]:
    glossary = bundle.glossary.to_dict() if bundle.glossary else {}

    return {
        DOCUMENTS_FILENAME: ''.join(
            '%s\n' % dumps_canonical(document.to_dict())
            for document in bundle.documents
        ).encode('utf-8'),
        SPARSE_FILENAME: bundle.sparse.to_bytes(),
        DENSE_FILENAME: bundle.dense.to_bytes(),
        VOCABULARIES_FILENAME: dumps_canonical(
            {
                name: list(values)
                for name, values in bundle.vocabularies.items()
            }).encode('utf-8'),
        GLOSSARY_FILENAME: dumps_canonical(glossary).encode('utf-8'),
    }


def _write_synced(
    path: Path,
    data: bytes,
) -> None:
    with open(path, 'wb') as fp:
        fp.write(data)
        fp.flush()
        os.fsync(fp.fileno())


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        # Some platforms can't open directories.
        return

    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


@contextmanager
def writer_lock(directory: Path) -> Iterator[None]:
    """Hold the advisory writer lock for a snapshot directory.

    The lock file is ``.<name>.lock`` beside the directory. Only one writer
    holds it at a time. Readers never take it.

    Args:
        directory (pathlib.Path):
            The snapshot directory.

    Context:
        The lock is held for the duration of the context.
    """
    directory = Path(directory)
    lock_path = directory.parent / f'.{directory.name}.lock'

    with open(lock_path, 'a') as fp:
        if fcntl is not None:
            fcntl.flock(fp.fileno(), fcntl.LOCK_EX)

        try:
            yield
        finally:
            if fcntl is not None:
                fcntl.flock(fp.fileno(), fcntl.LOCK_UN)


def save_snapshot(
    bundle: IndexBundle,
    directory: Path,
) -> dict[str, Any]:
    """Save a bundle as a snapshot.

    The files are written and synced in a new version directory, and
    ``directory`` is then atomically repointed at it. Readers of the
    previous version are unaffected. Saving the same bundle twice writes
    byte-identical files.

    Args:
        bundle (IndexBundle):
            The bundle to save.

        directory (pathlib.Path):
            The snapshot directory. Any existing snapshot there is replaced.

    Returns:
        dict:
        The manifest.

    Raises:
        finder.errors.SnapshotWriteError:
            The snapshot could not be written. Nothing is left at
            ``directory`` that wasn't there before.
    """
    directory = Path(directory)
    files = _encode_files(bundle)
    manifest = {
        'format_version': SNAPSHOT_FORMAT_VERSION,
        'created_at': bundle.created_at,
        'counts': {
            'documents': len(bundle.documents),
            'chunks': bundle.sparse.stats.n_chunks,
            'terms': len(bundle.sparse.postings),
            'vectors': len(bundle.dense),
            'glossary_entries': len(bundle.glossary or ()),
        },
        'config': bundle.config.to_dict(),
        'config_hash': config_hash(bundle.config),
        'checksums': {
            filename: checksum(data)
            for filename, data in files.items()
        },
    }

    try:
        directory.parent.mkdir(parents=True, exist_ok=True)

        with writer_lock(directory):
            previous = _adopt_directory(directory)
            tmp_dir = Path(tempfile.mkdtemp(prefix=f'.{directory.name}.tmp-',
                                            dir=directory.parent))
            version_dir = directory.parent / _version_dir_name(
                directory, _next_version(directory))

            try:
                for filename in DATA_FILENAMES:
                    _write_synced(tmp_dir / filename, files[filename])

                _write_synced(
                    tmp_dir / MANIFEST_FILENAME,
                    json.dumps(manifest, indent=2, sort_keys=True,
                               ensure_ascii=False).encode('utf-8') + b'\n')
                _fsync_dir(tmp_dir)
                os.rename(tmp_dir, version_dir)
                _point_link(directory, version_dir)
            except BaseException:
                shutil.rmtree(tmp_dir, ignore_errors=True)

                if not _link_target_is(directory, version_dir):
                    shutil.rmtree(version_dir, ignore_errors=True)

                raise

            _fsync_dir(directory.parent)
            _remove_old_versions(directory,
                                 keep={version_dir.name, previous})
    except OSError as e:
        raise SnapshotWriteError(path=str(directory), reason=str(e))

    logger.debug('Saved snapshot to %s: %s',
                 directory, manifest['checksums'],
                 extra={
                     'event': 'snapshot.saved',
                     'files': len(files) + 1,
                 })

    return manifest


def _version_dir_name(
    directory: Path,
    version: int,
) -> str:
    return f'.{directory.name}.v-{version:06d}'


def _version_dirs(directory: Path) -> dict[str, int]:
    prefix = f'.{directory.name}.v-'
    versions: dict[str, int] = {}

    for path in directory.parent.iterdir():
        suffix = path.name[len(prefix):]

        if path.name.startswith(prefix) and suffix.isdigit():
            versions[path.name] = int(suffix)

    return versions


def _next_version(directory: Path) -> int:
    return max(_version_dirs(directory).values(), default=0) + 1


def _link_target_is(
    directory: Path,
    version_dir: Path,
) -> bool:
    return (directory.is_symlink() and
            os.readlink(directory) == version_dir.name)


def _adopt_directory(directory: Path) -> Optional[str]:
    """Return the version the snapshot link points at.

    A plain directory at the snapshot path becomes the first version, so
    that the link can replace it.
    """
    if directory.is_symlink():
        return os.readlink(directory)

    if not directory.exists():
        return None

    version_name = _version_dir_name(directory, _next_version(directory))
    os.rename(directory, directory.parent / version_name)
    _point_link(directory, directory.parent / version_name)

    return version_name


def _point_link(
    directory: Path,
    version_dir: Path,
) -> None:
    tmp_link = directory.parent / f'.{directory.name}.link-{os.getpid()}'

    try:
        tmp_link.unlink()
    except FileNotFoundError:
        pass

    # The target is relative, so the snapshot can be moved with its parent.
    os.symlink(version_dir.name, tmp_link)

    try:
        os.replace(tmp_link, directory)
    except OSError:
        tmp_link.unlink()
        raise


def _remove_old_versions(
    directory: Path,
    keep: set[Optional[str]],
) -> None:
    for name in _version_dirs(directory):
        if name not in keep:
            shutil.rmtree(directory.parent / name, ignore_errors=True)


#
# Loading
#

def read_manifest(directory: Path) -> dict[str, Any]:
    """Read and check a snapshot manifest.

    Args:
        directory (pathlib.Path):
            The snapshot directory.

    Returns:
        dict:
        The manifest.

    Raises:
        finder.errors.CorruptSnapshotError:
            The manifest was missing or invalid.

        finder.errors.VersionMismatchError:
            The snapshot uses another format version.
    """
    path = Path(directory) / MANIFEST_FILENAME

    try:
        manifest = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise CorruptSnapshotError(filename=MANIFEST_FILENAME,
                                   reason=e.strerror or str(e))
    except ValueError as e:
        raise CorruptSnapshotError(filename=MANIFEST_FILENAME,
                                   reason=str(e))

    if (not isinstance(manifest, dict) or
        not isinstance(manifest.get('checksums'), dict) or
        not isinstance(manifest.get('config'), dict)):
        raise CorruptSnapshotError(filename=MANIFEST_FILENAME,
                                   reason='missing required keys')

    found = manifest.get('format_version')

    if found != SNAPSHOT_FORMAT_VERSION:
        raise VersionMismatchError(source=MANIFEST_FILENAME,
                                   found=found,
                                   expected=SNAPSHOT_FORMAT_VERSION)

    return manifest


def _read_verified(
    directory: Path,
    manifest: Mapping[str, Any],
) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    checksums = manifest['checksums']

    for filename in DATA_FILENAMES:
        try:
            data = (directory / filename).read_bytes()
        except OSError as e:
            raise CorruptSnapshotError(filename=filename,
                                       reason=e.strerror or str(e))

        if checksums.get(filename) != checksum(data):
            raise ChecksumMismatchError(filename=filename)

        files[filename] = data

    return files


def _load_json(
    data: bytes,
    filename: str,
) -> Any:
    try:
        return json.loads(data.decode('utf-8'))
    except ValueError as e:
        raise CorruptSnapshotError(filename=filename, reason=str(e))


def load_snapshot(directory: Path) -> IndexBundle:
    """Load a bundle from a snapshot.

    Every file is checked against the manifest before anything is parsed.
    Searches on the loaded bundle score exactly like searches on the bundle
    that was saved.

    Args:
        directory (pathlib.Path):
            The snapshot directory.

    Returns:
        IndexBundle:
        The loaded bundle.

    Raises:
        finder.errors.ChecksumMismatchError:
            A file did not match its checksum.

        finder.errors.CorruptSnapshotError:
            A file was missing or invalid.

        finder.errors.VersionMismatchError:
            The snapshot or a segment uses another format version.
    """
    directory = Path(directory)

    attempts = 0

    while True:
        attempts += 1
        resolved = directory.resolve()

        try:
            return _load_version(resolved, directory)
        except SnapshotError:
            # A save may have replaced and removed this version while it
            # was read. Only a moved link is worth another attempt.
            if attempts >= _LOAD_ATTEMPTS or directory.resolve() == resolved:
                raise

            logger.debug('Snapshot %s changed while loading; retrying',
                         directory)


def _load_version(
    resolved: Path,
    directory: Path,
) -> IndexBundle:
    manifest = read_manifest(resolved)

    try:
        config = EngineConfig.from_dict(manifest['config'])
    except ConfigurationError as e:
        raise CorruptSnapshotError(filename=MANIFEST_FILENAME, reason=str(e))

    if manifest.get('config_hash') != config_hash(config):
        raise ChecksumMismatchError(filename=MANIFEST_FILENAME)

    files = _read_verified(resolved, manifest)
    documents: list[Document] = []

    for line_number, line in enumerate(
            files[DOCUMENTS_FILENAME].decode('utf-8').splitlines(),
            start=1):
        try:
            documents.append(Document.from_dict(json.loads(line)))
        except (FinderError, KeyError, TypeError, ValueError) as e:
            raise CorruptSnapshotError(
                filename=DOCUMENTS_FILENAME,
                reason=f'line {line_number}: {e}')

    embedder = create_embedder(config.dense)
    sparse = SparseIndex.from_bytes(files[SPARSE_FILENAME], documents,
                                    filename=SPARSE_FILENAME)
    dense = DenseIndex.from_bytes(files[DENSE_FILENAME],
                                  filename=DENSE_FILENAME)

    if dense.dim != embedder.dim:
        raise CorruptSnapshotError(
            filename=DENSE_FILENAME,
            reason=f'vectors have dimension {dense.dim}, but the embedder '
                   f'produces {embedder.dim}')

    if dense.chunk_ids != sparse.chunk_ids:
        raise CorruptSnapshotError(
            filename=DENSE_FILENAME,
            reason='chunk table does not match sparse.idx')

    glossary_entries = _load_json(files[GLOSSARY_FILENAME], GLOSSARY_FILENAME)
    vocabularies = _load_json(files[VOCABULARIES_FILENAME],
                              VOCABULARIES_FILENAME)

    if not isinstance(glossary_entries, dict):
        raise CorruptSnapshotError(filename=GLOSSARY_FILENAME,
                                   reason='expected a JSON object')

    if not isinstance(vocabularies, dict):
        raise CorruptSnapshotError(filename=VOCABULARIES_FILENAME,
                                   reason='expected a JSON object')

    try:
        glossary = (Glossary(glossary_entries, embedder)
                    if glossary_entries else None)
    except ConfigurationError as e:
        raise CorruptSnapshotError(filename=GLOSSARY_FILENAME, reason=str(e))

    logger.debug('Loaded snapshot from %s: %s',
                 directory, manifest['checksums'],
                 extra={
                     'event': 'snapshot.loaded',
                     'documents': len(documents),
                 })

    return IndexBundle(documents=tuple(documents),
                       sparse=sparse,
                       dense=dense,
                       embedder=embedder,
                       glossary=glossary,
                       vocabularies=vocabularies,
                       config=config,
                       created_at=str(manifest.get('created_at', '')))
