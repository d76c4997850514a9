import sys

from sirf.cli import main

sys.exit(main())
