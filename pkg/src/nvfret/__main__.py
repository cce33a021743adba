import sys

from nvfret.cli import main

sys.exit(main())
