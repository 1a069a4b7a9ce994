import sys

from eithne.cli import main

sys.exit(main())
