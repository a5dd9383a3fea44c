#!/usr/bin/env python3
"""Variance-estimator behavior when a blocked experiment is analyzed as if
completely randomized, and the variability of both estimators under their
own designs. Writes study_misconceptions.csv.

Usage: python scripts/run_misconceptions.py [--seed N] [--reps N] [...]
"""
import sys

from blockcalc.cli import main

if __name__ == "__main__":
    sys.exit(main(["study", "misconceptions", *sys.argv[1:]]))
