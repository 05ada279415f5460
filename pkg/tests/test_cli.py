"""Tests for cli.py — simulate, verify-trace and gen-scenario from the command line."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from cli import main
from services.scenario import parse_scenario
from services.simulator import EXIT_AUDIT_FAILED, EXIT_OK, EXIT_STRUCTURAL

FIXTURES = Path(__file__).parent / "fixtures"


class TestSimulate:
    """``simulate`` writes a trace and exits 0 on a clean audit."""

    def test_happy_fixture_passes(self, tmp_path, capsys):
        out = tmp_path / "traces" / "happy.jsonl"
        code = main(["simulate", "--scenario", str(FIXTURES / "happy.json"), "--out", str(out)])
        assert code == EXIT_OK
        assert capsys.readouterr().out.startswith("PASS")
        lines = out.read_text(encoding="utf-8").splitlines()
        assert json.loads(lines[0])["type"] == "header"
        assert json.loads(lines[-1])["exit_code"] == 0

    def test_report_written(self, tmp_path):
        report = tmp_path / "report.json"
        code = main([
            "simulate", "--scenario", str(FIXTURES / "removal.json"),
            "--out", str(tmp_path / "t.jsonl"), "--report", str(report),
        ])
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["losses"] == 30
        assert {o["class"] for o in data["outcomes"]} == {"COMPLETED", "LOST"}

    def test_slot_override(self, tmp_path):
        out = tmp_path / "t.jsonl"
        main(["simulate", "--scenario", str(FIXTURES / "happy.json"), "--out", str(out), "--slots", "3"])
        slots = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
        assert sum(1 for r in slots if r["type"] == "slot") == 3

    def test_short_run_reports_in_flight(self, tmp_path, capsys):
        code = main([
            "simulate", "--scenario", str(FIXTURES / "expiry.json"),
            "--out", str(tmp_path / "t.jsonl"), "--slots", "4",
        ])
        assert code == EXIT_OK
        assert "IN-FLIGHT" in capsys.readouterr().out

    def test_imbalanced_genesis_is_structural(self, tmp_path, capsys):
        code = main(["simulate", "--scenario", str(FIXTURES / "imbalanced.json"), "--out", str(tmp_path / "t.jsonl")])
        assert code == EXIT_STRUCTURAL
        assert "genesis-imbalance" in capsys.readouterr().err

    def test_missing_scenario_is_structural(self, tmp_path):
        code = main(["simulate", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "t.jsonl")])
        assert code == EXIT_STRUCTURAL

    def test_random_credit_failures_from_flags(self, tmp_path):
        report = tmp_path / "report.json"
        code = main([
            "simulate", "--scenario", str(FIXTURES / "happy.json"), "--out", str(tmp_path / "t.jsonl"),
            "--seed", "3", "--random-credit-fail-rate", "1", "--report", str(report),
        ])
        assert code == EXIT_OK
        data = json.loads(report.read_text(encoding="utf-8"))
        assert data["outcome_counts"] == {"REVERTED": 3}

    def test_out_of_range_rate_is_structural(self, tmp_path, capsys):
        code = main([
            "simulate", "--scenario", str(FIXTURES / "happy.json"), "--out", str(tmp_path / "t.jsonl"),
            "--random-debit-fail-rate", "2",
        ])
        assert code == EXIT_STRUCTURAL
        assert "random_debit_fail_rate" in capsys.readouterr().err

    def test_same_scenario_same_trace(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            main(["simulate", "--scenario", str(FIXTURES / "credit_failure.json"), "--out", str(out)])
        assert a.read_bytes() == b.read_bytes()


class TestVerifyTrace:
    """``verify-trace`` exits 0 when every accepted block re-validates."""

    def _trace(self, tmp_path: Path) -> Path:
        out = tmp_path / "run.jsonl"
        main(["simulate", "--scenario", str(FIXTURES / "credit_failure.json"), "--out", str(out)])
        return out

    def test_honest_trace_passes(self, tmp_path, capsys):
        trace = self._trace(tmp_path)
        capsys.readouterr()
        assert main(["verify-trace", "--trace", str(trace)]) == EXIT_OK
        assert "16 accepted blocks" in capsys.readouterr().out

    def test_tampered_trace_fails(self, tmp_path, capsys):
        trace = self._trace(tmp_path)
        records = [json.loads(line) for line in trace.read_text(encoding="utf-8").splitlines()]
        for record in records:
            if record["type"] == "block" and record["block"]["slot"] == 2 and record["block"]["shard"] == 1:
                for receipt in record["block"]["receipts"]:
                    receipt.update(status="success", reason="")
        trace.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        capsys.readouterr()
        assert main(["verify-trace", "--trace", str(trace)]) == EXIT_AUDIT_FAILED
        assert "FAIL" in capsys.readouterr().out

    def test_garbage_trace_is_structural(self, tmp_path):
        trace = tmp_path / "bad.jsonl"
        trace.write_text("nonsense\n", encoding="utf-8")
        assert main(["verify-trace", "--trace", str(trace)]) == EXIT_STRUCTURAL


class TestGenScenario:
    """``gen-scenario`` prints a valid, seed-deterministic scenario."""

    ARGS = ["gen-scenario", "--seed", "7", "--shards", "3", "--ees", "2", "--transfers", "40", "--users", "12"]

    def test_prints_valid_scenario(self, capsys):
        assert main(self.ARGS) == EXIT_OK
        config = parse_scenario(capsys.readouterr().out)
        assert (config.shards, config.ees, len(config.transfers)) == (3, 2, 40)

    def test_writes_file_deterministically(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(self.ARGS + ["--out", str(a)])
        main(self.ARGS + ["--out", str(b)])
        assert a.read_text(encoding="utf-8") == b.read_text(encoding="utf-8")

    def test_bad_rate_is_structural(self, capsys):
        assert main(self.ARGS + ["--credit-fail-rate", "2"]) == EXIT_STRUCTURAL

    def test_missing_required_flag_exits(self):
        with pytest.raises(SystemExit):
            main(["gen-scenario", "--seed", "1"])
