import sys

from adsub.cli import main

sys.exit(main())
