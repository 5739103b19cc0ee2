import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from dposforensics.cli import main


def write_config(path: Path, **overrides) -> Path:
    config = {
        "seed": 5,
        "n_accounts": 140,
        "n_candidates": 22,
        "n_proxies": 3,
        "duration_days": 40,
        "participation_rate": 0.5,
        "proxy_weight_target": 0.1,
        "rounds_per_day": 1,
        "plants": [
            {"kind": "similar_cluster", "size": 4},
            {"kind": "linear_gang", "size": 4},
            {"kind": "near_clique", "size": 5},
        ],
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def ledger_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("ledger")
    config = write_config(base / "config.json")
    result = CliRunner().invoke(main, ["generate", "-c", str(config),
                                       "-o", str(base)])
    assert result.exit_code == 0, result.output
    return base


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGenerate:
    def test_outputs_exist(self, ledger_dir):
        for name in ("trace.jsonl", "headers.jsonl", "truth.json"):
            assert (ledger_dir / name).exists()

    def test_truth_embeds_manifest_digests(self, ledger_dir):
        truth = json.loads((ledger_dir / "truth.json").read_text())
        assert truth["manifest"]["digests"]["trace"] == \
            digest(ledger_dir / "trace.jsonl")

    def test_regeneration_is_byte_identical(self, ledger_dir, tmp_path):
        config = write_config(tmp_path / "config.json")
        result = CliRunner().invoke(main, ["generate", "-c", str(config),
                                           "-o", str(tmp_path)])
        assert result.exit_code == 0
        assert digest(tmp_path / "trace.jsonl") == digest(ledger_dir / "trace.jsonl")
        assert digest(tmp_path / "headers.jsonl") == \
            digest(ledger_dir / "headers.jsonl")

    def test_bad_config_exits_2(self, tmp_path):
        config = write_config(tmp_path / "config.json", n_candidates=5)
        result = CliRunner().invoke(main, ["generate", "-c", str(config),
                                           "-o", str(tmp_path)])
        assert result.exit_code == 2

    def test_missing_config_exits_2(self, tmp_path):
        result = CliRunner().invoke(main, ["generate", "-c",
                                           str(tmp_path / "nope.json")])
        assert result.exit_code == 2


class TestReplayCommand:
    def test_state_written(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, ["replay",
                                           str(ledger_dir / "trace.jsonl"),
                                           "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "state.json").read_text())
        assert payload["rejected"] == []
        assert len(payload["state_digest"]) == 64

    def test_malformed_trace_exits_3(self, tmp_path):
        bad = tmp_path / "trace.jsonl"
        bad.write_text('{"kind": "voteproducer"}\n')
        result = CliRunner().invoke(main, ["replay", str(bad),
                                           "-o", str(tmp_path)])
        assert result.exit_code == 3
        assert "unreadable trace" in result.output

    def test_env_var_output_dir(self, ledger_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("DPOSF_OUT", str(tmp_path / "envout"))
        result = CliRunner().invoke(main, ["replay",
                                           str(ledger_dir / "trace.jsonl")])
        assert result.exit_code == 0
        assert (tmp_path / "envout" / "state.json").exists()


class TestAnalysisCommands:
    def test_metrics_outputs(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "metrics", str(ledger_dir / "trace.jsonl"),
            str(ledger_dir / "headers.jsonl"), "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        for name in ("entropy.csv", "turnover.csv", "active_days.csv",
                     "proxy_share.csv", "stake_distribution.csv", "metrics.json"):
            assert (tmp_path / name).exists()
        header = (tmp_path / "entropy.csv").read_text().splitlines()[0]
        assert header == "month,blocks,entropy_n_10,entropy_n_20,entropy_n_all"

    def test_cluster_outputs(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "cluster", str(ledger_dir / "trace.jsonl"), "-o", str(tmp_path),
            "--top-stake-pct", "0.5"])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "clusters.json").read_text())
        assert payload["n_voters"] > 0
        for c in payload["clusters"]:
            assert len(c["members"]) >= 2

    def test_cluster_theta_out_of_range(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "cluster", str(ledger_dir / "trace.jsonl"), "-o", str(tmp_path),
            "--theta", "1.01"])
        assert result.exit_code == 2
        assert "theta out of range" in result.output

    def test_motifs_outputs(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "motifs", str(ledger_dir / "trace.jsonl"), "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        summary = json.loads((tmp_path / "motifs.json").read_text())
        # the planted linear gang and near clique guarantee linear instances
        assert summary["counts"]["linear"] > 0
        lines = (tmp_path / "motifs.jsonl").read_text().splitlines()
        assert len(lines) == sum(summary["counts"].values())

    def test_gangs_outputs(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "gangs", str(ledger_dir / "trace.jsonl"), "-o", str(tmp_path)])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "gangs.json").read_text())
        assert "alpha" in payload["fit"]
        assert (tmp_path / "gang_scores.csv").exists()

    def test_gangs_pct_out_of_range(self, ledger_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "gangs", str(ledger_dir / "trace.jsonl"), "-o", str(tmp_path),
            "--outlier-pct", "0"])
        assert result.exit_code == 2


@pytest.fixture(scope="module")
def report_dir(ledger_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    result = CliRunner().invoke(main, [
        "all", str(ledger_dir / "trace.jsonl"),
        str(ledger_dir / "headers.jsonl"), "-o", str(out),
        "--top-stake-pct", "0.5"])
    assert result.exit_code == 0, result.output
    return out


class TestAllAndScore:
    def test_summary_written(self, report_dir):
        summary = json.loads((report_dir / "summary.json").read_text())
        assert set(summary["overlap"]) == {"cluster_motif", "cluster_gang",
                                           "motif_gang", "all_three"}

    def test_all_is_reproducible(self, ledger_dir, report_dir, tmp_path):
        result = CliRunner().invoke(main, [
            "all", str(ledger_dir / "trace.jsonl"),
            str(ledger_dir / "headers.jsonl"), "-o", str(tmp_path),
            "--top-stake-pct", "0.5"])
        assert result.exit_code == 0, result.output
        for path in sorted(report_dir.iterdir()):
            assert digest(tmp_path / path.name) == digest(path), path.name

    def test_score_reports(self, ledger_dir, report_dir):
        result = CliRunner().invoke(main, [
            "score", str(report_dir), str(ledger_dir / "truth.json")])
        assert result.exit_code == 0, result.output
        scores = json.loads((report_dir / "score.json").read_text())["scores"]
        assert {"similar_cluster", "linear_gang", "near_clique"} <= set(scores)
        assert scores["linear_gang"]["recall"] == 1.0
        for s in scores.values():
            assert 0.0 <= s["f1"] <= 1.0

    def test_score_rejects_mismatched_trace(self, ledger_dir, report_dir,
                                            tmp_path):
        config = write_config(tmp_path / "config.json", seed=99)
        result = CliRunner().invoke(main, ["generate", "-c", str(config),
                                           "-o", str(tmp_path)])
        assert result.exit_code == 0
        result = CliRunner().invoke(main, [
            "score", str(report_dir), str(tmp_path / "truth.json")])
        assert result.exit_code == 2
        assert "different trace" in result.output
