import json
import subprocess
import sys

import pytest

from driverl.cli import main


def run_cli(args):
    return subprocess.run([sys.executable, "-m", "driverl.cli", *args],
                          capture_output=True, text=True, timeout=300)


class TestCli:
    def test_unknown_subcommand_exits_2(self):
        out = run_cli(["frobnicate"])
        assert out.returncode == 2
        assert "usage" in (out.stderr + out.stdout).lower()

    def test_lap_happy_path(self, tmp_path):
        trace_path = tmp_path / "trace.ldjson"
        rc = main(["lap", "--map", "circle", "--params", "default",
                   "--out", str(trace_path)])
        assert rc == 0
        lines = trace_path.read_text().splitlines()
        assert json.loads(lines[-1])["terminated_by"] == "lap_complete"

    def test_lap_invalid_params_exits_2(self):
        assert main(["lap", "--map", "circle",
                     "--params", '{"v_min": 3, "v_max": 2}']) == 2

    def test_lap_unknown_map_exits_2(self):
        assert main(["lap", "--map", "mars"]) == 2

    def test_raceline_subcommand(self, tmp_path, capsys):
        out_path = tmp_path / "raceline.csv"
        rc = main(["raceline", "--map", "circle", "--out", str(out_path)])
        assert rc == 0
        text = out_path.read_text()
        assert text.splitlines()[0] == "x_m,y_m,v_ref_mps"
        assert len(text.splitlines()) > 100

    def test_gen_dataset_determinism(self, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            path = tmp_path / name
            rc = main(["gen-dataset", "--map", "circle", "--seed", "7",
                       "--per-style", "1", "--max-time", "8", "--out", str(path)])
            assert rc == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_eval_control_mock_default(self, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        rc = main(["eval-control", "--map", "circle", "--policy", "mock-default",
                   "--runs", "1", "--out", str(report_path)])
        assert rc == 0
        doc = json.loads(report_path.read_text())
        assert doc["improvement_overall_pct"] == pytest.approx(0.0, abs=1e-9)

    def test_eval_control_unknown_policy_exits_2(self):
        assert main(["eval-control", "--policy", "wizard"]) == 2

    def test_eval_control_unreachable_policy_exits_3(self):
        assert main(["eval-control", "--map", "circle", "--runs", "1",
                     "--policy", "http://127.0.0.1:9/complete"]) == 3

    def test_eval_decision_rule_oracle(self, tmp_path, small_corpus):
        from driverl.dataset import corpus_to_jsonl
        corpus_path = tmp_path / "corpus.jsonl"
        corpus_path.write_text(corpus_to_jsonl(small_corpus))
        out_path = tmp_path / "decision.json"
        rc = main(["eval-decision", "--policy", "rule-oracle",
                   "--corpus", str(corpus_path), "--out", str(out_path)])
        assert rc == 0
        assert json.loads(out_path.read_text())["accuracy_pct"] == 100.0

    def test_serve_binds_port_from_env(self, tmp_path):
        import os, signal, time, urllib.request
        env = dict(os.environ, DRIVERL_PORT="0")
        proc = subprocess.Popen(
            [sys.executable, "-m", "driverl.cli", "serve", "--map", "circle"],
            env=env, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
        try:
            info = json.loads(proc.stdout.readline())
            assert info["event"] == "serving"
            req = urllib.request.Request(
                f"http://127.0.0.1:{info['port']}/task",
                data=json.dumps({"family": "mpc", "seed": 0}).encode(),
                headers={"Content-Type": "application/json"})
            deadline = time.time() + 20
            while True:
                try:
                    with urllib.request.urlopen(req, timeout=5) as resp:
                        task = json.loads(resp.read())
                    break
                except OSError:
                    assert time.time() < deadline
                    time.sleep(0.2)
            assert task["family"] == "mpc"
        finally:
            proc.send_signal(signal.SIGINT)
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()

    def test_serve_help_mentions_port_and_socket(self):
        out = run_cli(["serve", "--help"])
        assert out.returncode == 0
        assert "--socket" in out.stdout
        assert "DRIVERL_PORT" in out.stdout
