import sys

from citemerge.cli import main

sys.exit(main())
