"""
SCI Toolkit Command Line
Run `python sci_cli.py --help` for the list of subcommands
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
