#!/usr/bin/env python3
"""
Entry point for running the package as a module:
    python -m src run --config configs/sample.json
"""

from .cli import main

if __name__ == "__main__":
    main()
