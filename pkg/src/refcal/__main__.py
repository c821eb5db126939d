import sys

from refcal.cli import main

sys.exit(main())
