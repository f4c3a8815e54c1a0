import sys

from slpca.main import main

sys.exit(main())
