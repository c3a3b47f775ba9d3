"""Command-line entry point: `python main.py <subcommand> --config scenarios/unit_ball.toml`."""

from __future__ import annotations

import sys

from finslercap.cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
