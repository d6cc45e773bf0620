from oamlink.oamlink_cli import main

import sys

sys.exit(main())
