import sys

from olar.cli import main

sys.exit(main())
