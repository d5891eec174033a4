"""Run the ``finder`` command line tool with ``python -m finder``."""

import sys

from finder.cli import main


sys.exit(main())
