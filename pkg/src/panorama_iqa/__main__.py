import sys

from panorama_iqa.management import main

sys.exit(main())
