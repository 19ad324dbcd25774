import sys

from rcdiff.cli import main

sys.exit(main())
