#!/usr/bin/env python3
"""
potgame Development Launcher

Runs the CLI from a source checkout without installing the package.

    python run.py certify four_agent_swap
    python run.py solve scenarios/four_agent_swap.json --output out --trace
"""

import sys

from potgame.main import main

if __name__ == "__main__":
    sys.exit(main())
