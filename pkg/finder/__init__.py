"""Hybrid lexical and semantic search over metadata-rich document corpora.

Finder ingests JSONL corpus records into chunked, tagged documents, indexes
them for sparse (BM42, BM25, TF-IDF) and dense (HNSW) retrieval, and serves
searches that combine both with reciprocal rank fusion and a weighted blend
of fuzzy title matching and normalized lexical scores.

The following forwarding imports are available directly through this module:

.. autosummary::
   :nosignatures:

   ~finder.rank.SearchEngine
   ~finder.rank.SearchMode
   ~finder.storage.IndexBundle
   ~finder.storage.build_bundle
   ~finder.storage.load_snapshot
   ~finder.storage.save_snapshot

Version Added:
    0.9
"""

from finder._version import (VERSION,
                             __version__,
                             __version_info__,
                             get_package_version,
                             get_version_string,
                             is_release)
from finder.rank import SearchEngine, SearchMode
from finder.storage import (IndexBundle,
                            build_bundle,
                            load_snapshot,
                            save_snapshot)


__all__ = [
    'IndexBundle',
    'SearchEngine',
    'SearchMode',
    'VERSION',
    '__version__',
    '__version_info__',
    'build_bundle',
    'get_package_version',
    'get_version_string',
    'is_release',
    'load_snapshot',
    'save_snapshot',
]


__autodoc_excludes__ = __all__
