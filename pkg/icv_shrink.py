#!/usr/bin/env python3
"""
ICV Shrink - integrated covariance estimation from high-frequency data
Command-line entry point.
"""

import sys


def main():
    """Main application entry point."""
    # Lazy imports for faster startup
    from cli import main as run

    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
