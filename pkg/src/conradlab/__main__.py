import sys

from conradlab.cli import main

sys.exit(main())
