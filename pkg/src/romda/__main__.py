import sys

from romda.pipeline.cli import main

sys.exit(main())
