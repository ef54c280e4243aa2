"""Entry point for the gora-desk command line."""

import sys

from .cli.main import main


def run():
    """Run the gora-desk CLI."""
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        sys.exit(130)


if __name__ == "__main__":
    run()
