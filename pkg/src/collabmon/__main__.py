import sys

from collabmon.cli import main

sys.exit(main())
