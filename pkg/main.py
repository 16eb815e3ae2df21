"""
Main entry point for brwlab.

This module forwards to the command line interface so experiments can be run
from a source checkout without installing the console script.

Usage:
    python main.py presets
    python main.py ends --preset t3xz-critical-ends --out results/
"""
import sys

from brwlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
