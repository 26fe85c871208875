#!/usr/bin/env python3
"""
Launcher for the attnlab command line
Run this from the project root directory
"""

import os
import sys

# Add the project root to Python path
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

if __name__ == "__main__":
    from attnlab.main import run

    sys.exit(run(sys.argv[1:]))
