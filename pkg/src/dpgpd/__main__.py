import sys

from dpgpd.cli import main

sys.exit(main())
