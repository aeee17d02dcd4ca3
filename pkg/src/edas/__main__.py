import sys

from .expcli.main import main

sys.exit(main())
