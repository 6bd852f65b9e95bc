import sys

from crits.cli import main

sys.exit(main())
