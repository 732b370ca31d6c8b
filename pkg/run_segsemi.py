#!/usr/bin/env python3
"""
Launcher for the segsemi command line
"""

import sys

from segsemi.cli import main

if __name__ == "__main__":
    sys.exit(main())
