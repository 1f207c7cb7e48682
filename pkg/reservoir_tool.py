"""
ESP Lab command-line entry point

Usage: python reservoir_tool.py <command> [options]
"""

import sys

from esplab.cli import main

if __name__ == "__main__":
    sys.exit(main())
