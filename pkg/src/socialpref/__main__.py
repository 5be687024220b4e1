import sys

from socialpref.cli import main

sys.exit(main())
