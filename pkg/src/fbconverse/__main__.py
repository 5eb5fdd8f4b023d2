import sys

from fbconverse.cli import main

sys.exit(main())
