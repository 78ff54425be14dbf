"""Entry point: python -m scport COMMAND CONFIG [options]"""

import sys

from scport.cli import main

if __name__ == "__main__":
    sys.exit(main())
