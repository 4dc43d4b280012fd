"""Benchmark harness sanity (full sweeps run through the CLI, not here)."""

import pytest

from crossplan import _kernels
from crossplan.bench import (bench_kernels, bench_refine, bench_scheduler,
                             format_report, run_bench)


@pytest.fixture(scope="module")
def report():
    return run_bench(kernel_repeats=1, sizes=(6,), refine_repeats=1)


def test_report_structure(report):
    assert report["active_implementation"] == _kernels.implementation_name()
    assert isinstance(report["compiled_available"], bool)
    sections = {row["section"] for row in report["rows"]}
    assert sections == {"kernels", "scheduler", "refine"}
    for row in report["rows"]:
        assert row["name"]
        for key, val in row.items():
            if key.endswith("_ms"):
                assert val >= 0.0


def test_kernel_rows_cover_both_implementations(report):
    rows = [r for r in report["rows"] if r["section"] == "kernels"]
    impls = {r["impl"] for r in rows}
    assert "pure" in impls
    if report["compiled_available"]:
        assert impls == {"pure", "compiled"}
        for r in rows:
            if r["impl"] == "compiled":
                assert r["speedup_vs_pure"] > 0.0


def test_scheduler_rows(report):
    rows = [r for r in report["rows"] if r["section"] == "scheduler"]
    assert [r["vehicles"] for r in rows] == [6]
    row = rows[0]
    assert row["scheduled"] == 6
    assert row["makespan_s"] > 0.0
    assert row["round_ms_max"] >= row["round_ms_mean"] > 0.0


def test_refine_rows(report):
    rows = [r for r in report["rows"] if r["section"] == "refine"]
    assert {r["name"] for r in rows} == {"straight_dodge", "left_dodge"}
    for r in rows:
        assert r["success"] is True
        assert r["control_points"] <= 100
        assert r["pairs"] > 0


def test_format_report_mentions_key_facts(report):
    text = format_report(report)
    assert "active implementation" in text
    assert "straight_dodge" in text
    assert "kernels" in text


def test_piecewise_benches_run_standalone():
    assert bench_kernels(repeats=1)
    assert bench_scheduler(sizes=(5,), seed=2)[0]["scheduled"] == 5
    rows = bench_refine(repeats=1)
    assert len(rows) == 2
