import sys

from rtnic.cli import main

sys.exit(main())
