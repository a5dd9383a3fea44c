#!/usr/bin/env python3
"""Variance-ratio sweep: how the blocked/complete-randomization variance
ratio moves with block separation, under equal and unequal treated
proportions. Writes study_ratio_sweep.csv plus a run manifest.

Usage: python scripts/run_ratio_sweep.py [--seed N] [--out DIR] [...]
"""
import sys

from blockcalc.cli import main

if __name__ == "__main__":
    sys.exit(main(["study", "ratio-sweep", *sys.argv[1:]]))
