#!/usr/bin/env python3
"""Blocking-method comparison (flex / interleave / peevish) across three
covariate-outcome relationships. Writes study_flexible_blocking.csv.

Usage: python scripts/run_flexible_blocking.py [--seed N] [--reps N] [...]
"""
import sys

from blockcalc.cli import main

if __name__ == "__main__":
    sys.exit(main(["study", "flexible-blocking", *sys.argv[1:]]))
