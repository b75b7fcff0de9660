import sys

from cqnls.cli import main

sys.exit(main())
