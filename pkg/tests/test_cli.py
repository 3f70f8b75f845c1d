"""Tests for the bias-audit command line."""

import json
from pathlib import Path

import requests

from bias_audit import benchmark as benchmark_module
from bias_audit.cli import EXIT_ERROR, EXIT_FINDINGS, EXIT_OK, main

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
CONFIG = str(DATA_DIR / "audit.yaml")

BINDING = """\
columns:
  id: id
  event_date: date
  sex: sex
  race_ethnicity: race
  jurisdiction: city
stages: [screen, interview]
"""


def _write_dataset(tmp_path, rows):
    data = tmp_path / "apps.csv"
    data.write_text("id,date,sex,race,city,screen,interview\n" + "\n".join(rows) + "\n")
    binding = tmp_path / "binding.yaml"
    binding.write_text(BINDING)
    return ["-i", str(data), "-b", str(binding), "--as-of", "2024-06-30"]


CLEAN_ROWS = [
    "A1,2024-01-02,female,white,NYC,yes,no",
    "A2,2024-02-03,male,asian,nyc,yes,yes",
    "A3,2024-03-04,female,asian,NYC,no,",
]


# ── validate ─────────────────────────────────────────────────────────


def test_validate_fixture():
    assert main(["validate", "-c", CONFIG]) == EXIT_OK


def test_validate_clean_csv(tmp_path):
    assert main(["validate", "--strict", *_write_dataset(tmp_path, CLEAN_ROWS)]) == EXIT_OK


def test_validate_strict_findings(tmp_path):
    args = _write_dataset(tmp_path, CLEAN_ROWS + ["A4,2024-03-04,male,white,BOS,yes,no"])
    assert main(["validate", *args]) == EXIT_OK
    assert main(["validate", "--strict", *args]) == EXIT_FINDINGS


def test_validate_reports_bad_rows(tmp_path):
    args = _write_dataset(tmp_path, CLEAN_ROWS + ["A5,2024-03-04,female,Klingon,NYC,yes,no"])
    assert main(["validate", *args]) == EXIT_ERROR


def test_missing_config_file(tmp_path):
    assert main(["validate", "-c", str(tmp_path / "none.yaml")]) == EXIT_ERROR


def test_no_command():
    assert main([]) == EXIT_OK


# ── audit ────────────────────────────────────────────────────────────


def test_audit_writes_reports(tmp_path, capsys):
    out = tmp_path / "run1"
    assert main(["audit", "-c", CONFIG, "-o", str(out)]) == EXIT_OK
    for name in ("report.json", "report.md", "report.html", "findings.json", "sample_manifest.json"):
        assert (out / name).is_file()
    assert "Stage Funnel" in capsys.readouterr().out

    manifest = json.loads((out / "sample_manifest.json").read_text())
    assert manifest["population"] == 322
    assert manifest["sample_size"] == 16
    findings = json.loads((out / "findings.json").read_text())
    assert findings["four_fifths_failures"]


def test_audit_is_deterministic(tmp_path):
    out = tmp_path / "run"
    names = ("report.json", "findings.json", "sample_manifest.json")
    assert main(["audit", "-c", CONFIG, "-o", str(out)]) == EXIT_OK
    first = {name: (out / name).read_bytes() for name in names}
    assert main(["audit", "-c", CONFIG, "-o", str(out)]) == EXIT_OK
    assert first == {name: (out / name).read_bytes() for name in names}


def test_audit_overrides(tmp_path):
    out = tmp_path / "run"
    code = main(
        [
            "audit", "-c", CONFIG, "-o", str(out),
            "--formats", "json",
            "--grouping", "by_sex",
            "--no-benchmark",
            "--small-group-mode", "exclude",
        ]
    )
    assert code == EXIT_OK
    assert not (out / "report.md").exists()
    report = json.loads((out / "report.json").read_text())
    assert list(report["tables"]) == ["by_sex"]
    assert report["representativity"]["benchmark"] is None
    assert report["metadata"]["policy"]["small_group"]["mode"] == "exclude"


def test_four_fifths_failures_do_not_fail_strict(tmp_path):
    assert main(["audit", "-c", CONFIG, "-o", str(tmp_path), "--strict", "--formats", "json"]) == EXIT_OK


def test_audit_strict_jurisdiction(tmp_path):
    args = _write_dataset(tmp_path, CLEAN_ROWS + ["A4,2024-03-04,male,white,BOS,yes,no"])
    out = ["-o", str(tmp_path / "out"), "--no-benchmark", "--formats", "json"]
    assert main(["audit", *args, *out]) == EXIT_OK
    assert main(["audit", "--strict", *args, *out]) == EXIT_FINDINGS
    assert main(["audit", "--strict", "--filter-jurisdiction", *args, *out]) == EXIT_FINDINGS


def test_invalid_threshold_is_an_error(tmp_path):
    args = ["audit", "-c", CONFIG, "-o", str(tmp_path), "--four-fifths-threshold", "1.5"]
    assert main(args) == EXIT_ERROR


# ── benchmark ────────────────────────────────────────────────────────


def test_benchmark_show(capsys):
    assert main(["benchmark", "show"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "7,358,211" in out
    assert "share_cross_check" in out


def test_benchmark_fetch_needs_query():
    assert main(["benchmark", "fetch"]) == EXIT_ERROR


def test_benchmark_fetch_without_network(monkeypatch):
    def unreachable(url, params=None, timeout=None):
        raise requests.ConnectionError("no route to host")

    monkeypatch.setattr(benchmark_module.requests, "get", unreachable)
    code = main(["benchmark", "fetch", "--census-query", str(DATA_DIR / "census_query.yaml")])
    assert code == EXIT_ERROR


# ── sample / render ──────────────────────────────────────────────────


def test_sample_command(tmp_path):
    target = tmp_path / "manifest.json"
    args = ["sample", "-c", CONFIG, "--fraction", "0.05", "--seed", "42", "--output", str(target)]
    assert main(args) == EXIT_OK
    manifest = json.loads(target.read_text())
    assert manifest["population"] == 322
    assert manifest["sample_size"] == 16
    assert main(args) == EXIT_OK
    assert json.loads(target.read_text()) == manifest


def test_sample_matches_audit_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["audit", "-c", CONFIG, "-o", str(out), "--formats", "json"]) == EXIT_OK
    target = tmp_path / "manifest.json"
    assert main(["sample", "-c", CONFIG, "--output", str(target)]) == EXIT_OK
    assert target.read_bytes() == (out / "sample_manifest.json").read_bytes()

    report = json.loads((out / "report.json").read_text())
    manifest = json.loads(target.read_text())
    assert report["metadata"]["dataset_fingerprint"] == manifest["dataset_fingerprint"]
    assert report["metadata"]["dataset_record_count"] == manifest["population"]


def test_sample_honours_filters(tmp_path):
    args = _write_dataset(tmp_path, CLEAN_ROWS + ["A4,2024-03-04,male,white,BOS,yes,no"])
    target = tmp_path / "m.json"
    sample = ["sample", *args, "--fraction", "0.5", "--seed", "1", "--output", str(target)]
    assert main(sample) == EXIT_OK
    assert json.loads(target.read_text())["population"] == 4
    assert main([*sample, "--filter-jurisdiction"]) == EXIT_OK
    manifest = json.loads(target.read_text())
    assert manifest["population"] == 3
    assert "A4" not in manifest["selected_ids"]


def test_sample_rejects_bad_fraction(tmp_path):
    args = ["sample", "-c", CONFIG, "--fraction", "1.5", "--output", str(tmp_path / "m.json")]
    assert main(args) == EXIT_ERROR


def test_render_matches_audit_output(tmp_path):
    out = tmp_path / "run"
    assert main(["audit", "-c", CONFIG, "-o", str(out)]) == EXIT_OK
    target = tmp_path / "again.md"
    assert main(["render", str(out / "report.json"), "--to", "markdown", "--output", str(target)]) == EXIT_OK
    assert target.read_bytes() == (out / "report.md").read_bytes()


def test_render_missing_report(tmp_path):
    assert main(["render", str(tmp_path / "report.json")]) == EXIT_ERROR
