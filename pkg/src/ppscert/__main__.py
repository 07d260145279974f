import sys

from ppscert.cli import main

sys.exit(main())
