import sys

from seqmon.cli import main

sys.exit(main())
