import sys

from fracmono.cli import main

sys.exit(main())
