import sys

from doublebasis.cli import main

sys.exit(main())
