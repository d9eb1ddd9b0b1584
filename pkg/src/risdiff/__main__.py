"""Allow ``python -m risdiff`` as an alias for the console script."""

import sys

from risdiff.cli import main

if __name__ == "__main__":
    sys.exit(main())
