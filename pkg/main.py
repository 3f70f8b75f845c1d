#!/usr/bin/env python3
"""
Bias Audit Engine - Entry Point

Audits historical hiring outcomes for disparate impact across sex,
race/ethnicity and their intersections, benchmarks the applicant pool
against census populations, and writes reproducible reports.

Usage:
    python main.py validate -c data/audit.yaml
    python main.py audit -c data/audit.yaml
    python main.py benchmark show
    python main.py sample -c data/audit.yaml --fraction 0.05 --seed 42
    python main.py render audit_output/report.json --to html
"""

import sys

from bias_audit.cli import main

if __name__ == "__main__":
    sys.exit(main())
