#!/usr/bin/env python3
"""Main entry point for the pds-sampler package when run as python -m pds_sampler."""

from .cli import app

if __name__ == "__main__":
    app()
