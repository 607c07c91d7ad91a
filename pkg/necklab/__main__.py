"""Run the command line with ``python -m necklab``."""

from .cli import main

raise SystemExit(main())
