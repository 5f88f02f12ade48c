"""End-to-end command-line behavior and exit codes."""

import json

import pytest

from smart_tcp.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_TRANSPORT,
    EXIT_USAGE,
    load_config_file,
    main,
)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSimulate:
    def test_oracle_run_writes_transcripts_and_report(self, tmp_path, capsys):
        out = tmp_path / "runs"
        code, stdout, _ = run(
            capsys,
            "simulate", "--core", "oracle", "--sessions", "5", "--seed", "7",
            "--out", str(out),
        )
        assert code == EXIT_OK
        assert "trial=100.00%" in stdout
        assert len(list(out.glob("session-*.jsonl"))) == 5
        report = json.loads((out / "trial_report.json").read_text())
        assert report["handshake"] == "100.00%"
        assert report["sessions"] == 5

    def test_sessions_zero_is_usage_error(self, capsys):
        code, _, stderr = run(capsys, "simulate", "--sessions", "0")
        assert code == EXIT_USAGE
        assert "sessions" in stderr

    def test_remote_without_endpoint_is_transport_error(self, capsys, monkeypatch):
        monkeypatch.delenv("SMART_TCP_MODEL_ENDPOINT", raising=False)
        code, _, stderr = run(capsys, "simulate", "--core", "remote", "--sessions", "1")
        assert code == EXIT_TRANSPORT
        assert "endpoint" in stderr

    def test_scenario_file(self, tmp_path, capsys):
        sc = tmp_path / "scenario.json"
        sc.write_text(
            json.dumps(
                {
                    "data_script": [{"side": "SERVER", "payload_len": 64}],
                    "closer": "SERVER",
                }
            )
        )
        code, stdout, _ = run(
            capsys, "simulate", "--sessions", "2", "--scenario", str(sc)
        )
        assert code == EXIT_OK and "trial=100.00%" in stdout

    def test_unknown_subcommand_is_usage(self, capsys):
        assert run(capsys, "frobnicate")[0] == EXIT_USAGE


def make_trace(tmp_path, capsys, sessions=3):
    """Simulate, then stitch the transcripts into one ingestible trace."""
    from smart_tcp.agent_runtime import SessionTranscript
    from smart_tcp.dataset_pipeline import transcript_to_trace_records, write_trace

    out = tmp_path / "sim"
    code, _, _ = run(capsys, "simulate", "--sessions", str(sessions), "--out", str(out))
    assert code == EXIT_OK
    records = []
    for i, path in enumerate(sorted(out.glob("session-*.jsonl"))):
        t = SessionTranscript.read(path)
        records.extend(transcript_to_trace_records(t, t0=float(i)))
    trace = tmp_path / "trace.jsonl"
    write_trace(records, trace)
    return trace


class TestTrace2Sft:
    def test_basic_conversion(self, tmp_path, capsys):
        trace = make_trace(tmp_path, capsys)
        out = tmp_path / "sft.jsonl"
        code, stdout, _ = run(capsys, "trace2sft", "--in", str(trace), "--out", str(out))
        assert code == EXIT_OK
        assert "3 flows, 33 packets" in stdout
        assert "33 samples" in stdout
        assert len(out.read_text().splitlines()) == 33

    def test_with_error_samples(self, tmp_path, capsys):
        trace = make_trace(tmp_path, capsys)
        out = tmp_path / "sft.jsonl"
        code, stdout, _ = run(
            capsys,
            "trace2sft", "--in", str(trace), "--out", str(out),
            "--errors", "20", "--error-ratio", "0.5", "--seed", "3",
        )
        assert code == EXIT_OK
        assert "53 samples" in stdout

    def test_deterministic_output(self, tmp_path, capsys):
        trace = make_trace(tmp_path, capsys)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            code, _, _ = run(
                capsys,
                "trace2sft", "--in", str(trace), "--out", str(out),
                "--errors", "10", "--seed", "1",
            )
            assert code == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

    def test_instruct_format(self, tmp_path, capsys):
        trace = make_trace(tmp_path, capsys, sessions=1)
        out = tmp_path / "sft.jsonl"
        code, _, _ = run(
            capsys,
            "trace2sft", "--in", str(trace), "--out", str(out), "--format", "instruct",
        )
        assert code == EXIT_OK
        first = json.loads(out.read_text().splitlines()[0])
        assert set(first) == {"instruction", "input", "output"}

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code, _, stderr = run(
            capsys,
            "trace2sft", "--in", str(tmp_path / "nope.jsonl"),
            "--out", str(tmp_path / "x.jsonl"),
        )
        assert code == EXIT_IO and "error" in stderr


class TestEvaluate:
    def write_predictions(self, tmp_path, n_correct=35, n_wrong=1):
        from smart_tcp.cognitive_core import CognitiveDecision, Verdict
        from smart_tcp.tcp_core import TcpState, flags_parse

        good = CognitiveDecision(
            TcpState.ESTABLISHED, flags_parse("ACK"), 0, None, Verdict.NORMAL
        ).to_wire()
        bad = CognitiveDecision(
            TcpState.CLOSE_WAIT, flags_parse("ACK"), 0, None, Verdict.NORMAL
        ).to_wire()
        path = tmp_path / "pred.jsonl"
        with open(path, "w") as fh:
            for _ in range(n_correct):
                fh.write(json.dumps({"truth": {"decision": good}, "predicted": {"decision": good}}) + "\n")
            for _ in range(n_wrong):
                fh.write(json.dumps({"truth": {"decision": good}, "predicted": {"decision": bad}}) + "\n")
        return path

    def test_fixture_atomic_97_22(self, tmp_path, capsys):
        pred = self.write_predictions(tmp_path)
        out = tmp_path / "report.json"
        code, stdout, _ = run(capsys, "evaluate", "--pred", str(pred), "--out", str(out))
        assert code == EXIT_OK
        assert "atomic=97.22%" in stdout
        report = json.loads(out.read_text())
        assert report["atomic_accuracy"] == "97.22%"

    def test_text_table_format(self, tmp_path, capsys):
        pred = self.write_predictions(tmp_path)
        out = tmp_path / "report.txt"
        code, _, _ = run(
            capsys,
            "evaluate", "--pred", str(pred), "--out", str(out), "--format", "text_table",
        )
        assert code == EXIT_OK
        assert "Field-Level Accuracy" in out.read_text()

    def test_empty_file_is_io_error(self, tmp_path, capsys):
        pred = tmp_path / "empty.jsonl"
        pred.write_text("")
        code, _, stderr = run(
            capsys, "evaluate", "--pred", str(pred), "--out", str(tmp_path / "r.json")
        )
        assert code == EXIT_IO and "empty" in stderr

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        code, _, _ = run(
            capsys,
            "evaluate", "--pred", str(tmp_path / "nope"), "--out", str(tmp_path / "r"),
        )
        assert code == EXIT_IO


class TestInject:
    def session_path(self, tmp_path, capsys):
        out = tmp_path / "sim"
        code, _, _ = run(capsys, "simulate", "--sessions", "1", "--out", str(out))
        assert code == EXIT_OK
        return out / "session-000.jsonl"

    def test_none_reports_no_anomalies(self, tmp_path, capsys):
        path = self.session_path(tmp_path, capsys)
        code, stdout, _ = run(capsys, "inject", "--in", str(path), "--fault", "none")
        assert code == EXIT_OK
        assert "anomalies: none" in stdout

    def test_reorder_swap_flags_order_error(self, tmp_path, capsys):
        path = self.session_path(tmp_path, capsys)
        out = tmp_path / "replay.jsonl"
        code, stdout, _ = run(
            capsys,
            "inject", "--in", str(path), "--fault", "reorder_swap", "--index", "3",
            "--out", str(out),
        )
        assert code == EXIT_OK
        assert "ORDER_ERROR" in stdout
        verdicts = [json.loads(l)["replay_verdict"] for l in out.read_text().splitlines()]
        assert "ORDER_ERROR" in verdicts

    def test_flag_mutate_flags_flag_error(self, tmp_path, capsys):
        path = self.session_path(tmp_path, capsys)
        code, stdout, _ = run(
            capsys,
            "inject", "--in", str(path), "--fault", "flag_mutate", "--index", "2",
            "--mutation", "SYN|FIN",
        )
        assert code == EXIT_OK
        assert "FLAG_ERROR" in stdout

    def test_flag_mutate_without_mutation_is_usage(self, tmp_path, capsys):
        path = self.session_path(tmp_path, capsys)
        code, _, stderr = run(
            capsys, "inject", "--in", str(path), "--fault", "flag_mutate", "--index", "2"
        )
        assert code == EXIT_USAGE and "error" in stderr

    def test_index_out_of_range_is_usage(self, tmp_path, capsys):
        path = self.session_path(tmp_path, capsys)
        code, _, _ = run(
            capsys, "inject", "--in", str(path), "--fault", "reorder_swap", "--index", "999"
        )
        assert code == EXIT_USAGE

    def test_missing_transcript_is_io_error(self, tmp_path, capsys):
        code, _, _ = run(
            capsys, "inject", "--in", str(tmp_path / "nope"), "--fault", "none"
        )
        assert code == EXIT_IO


class TestConfig:
    def test_load_config_file(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("model_endpoint = http://localhost:9\n# comment\n\nmodel_key=k\n")
        assert load_config_file(path) == {
            "model_endpoint": "http://localhost:9",
            "model_key": "k",
        }

    def test_bad_config_line(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("no equals sign here\n")
        with pytest.raises(ValueError):
            load_config_file(path)
