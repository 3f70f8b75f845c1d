"""
Bias Audit Engine
=================

Independent bias audits of automated hiring tools over historical
outcome data: selection and scoring rates, impact ratios, four-fifths
flags, census representativity, stage funnels, proxy screening and
reproducible verification samples.

Modules:
    domain           - Categories, applicant records, datasets, vocabulary
    ingestion        - CSV/JSON parsing, data-window and jurisdiction checks
    metrics          - Rate tables, impact ratios, small-group policy, funnels
    benchmark        - Census benchmarks and representativity
    proxy            - Cramér's V proxy-feature screening
    sampling         - Seeded verification-sample manifests
    audit            - Runs every configured computation
    report_generator - Report assembly and JSON/Markdown/HTML rendering
    config           - YAML run configuration
    cli              - Command-line interface
"""

__version__ = "1.0.0"

from bias_audit.audit import run_audit
from bias_audit.benchmark import load_benchmark, load_bundled_benchmark, representativity
from bias_audit.config import RunConfig
from bias_audit.domain import AuditDataset, DemographicCategory, GroupingMode
from bias_audit.ingestion import parse_dataset
from bias_audit.metrics import stage_funnel
from bias_audit.proxy import proxy_screen
from bias_audit.report_generator import assemble_report, render_report
from bias_audit.sampling import verification_sample

__all__ = [
    "AuditDataset",
    "DemographicCategory",
    "GroupingMode",
    "RunConfig",
    "assemble_report",
    "load_benchmark",
    "load_bundled_benchmark",
    "parse_dataset",
    "proxy_screen",
    "render_report",
    "representativity",
    "run_audit",
    "stage_funnel",
    "verification_sample",
]
