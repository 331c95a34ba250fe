"""Command-line behavior: files written, exit codes, stdout formats."""

import csv
import json

from coesim import workload
from coesim.cli import main
from coesim.profiler import PerfProfile, WindowSearchResult
from coesim.types import ModelRegistry

from helpers import make_registry, make_stream

MB = 1_000_000


def write_workload(tmp_path, num_components=2, n_requests=6, expert_bytes=200 * MB):
    registry = make_registry(num_components=num_components, expert_bytes=expert_bytes)
    comps = [f"c{i % num_components}" for i in range(n_requests)]
    stream = make_stream(comps, interarrival_s=0.001)
    reg_path = tmp_path / "registry.json"
    strm_path = tmp_path / "stream.json"
    reg_path.write_text(json.dumps(registry.to_doc()))
    strm_path.write_text(json.dumps(workload.stream_to_doc(stream)))
    return str(reg_path), str(strm_path)


class TestGenWorkload:
    def test_writes_registry_and_stream(self, tmp_path, capsys):
        rc = main(
            ["gen-workload", "--board", "board-a", "--components", "8",
             "--requests", "20", "--out-dir", str(tmp_path)]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "registry.json" in out and "stream.json" in out
        registry = ModelRegistry.from_doc(json.loads((tmp_path / "registry.json").read_text()))
        assert len(registry.rules) == 8
        stream = workload.stream_from_doc(json.loads((tmp_path / "stream.json").read_text()))
        assert len(stream) == 20
        assert stream[-1].arrival_time_s == 19 * workload.DEFAULT_INTERARRIVAL_S

    def test_requires_task_or_board(self, capsys):
        rc = main(["gen-workload"])
        assert rc == 2
        assert "provide --task or --board" in capsys.readouterr().err


class TestProfile:
    def test_writes_then_reports_unchanged(self, tmp_path, capsys):
        reg_path, _ = write_workload(tmp_path)
        argv = [
            "profile", "--device", "numa-3080ti", "--registry", reg_path,
            "--out-dir", str(tmp_path),
        ]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert "wrote" in first and "perf_profile.json" in first
        doc = json.loads((tmp_path / "perf_profile.json").read_text())
        profile = PerfProfile.from_doc(doc)
        assert set(profile.entries) == {("cls-r101", "gpu"), ("cls-r101", "cpu")}
        assert main(argv) == 0
        assert "unchanged" in capsys.readouterr().out

    def test_unknown_device_exits_2(self, tmp_path, capsys):
        reg_path, _ = write_workload(tmp_path)
        rc = main(["profile", "--device", "quantum-42", "--registry", reg_path])
        assert rc == 2
        err = capsys.readouterr().err
        assert "unknown device preset" in err
        assert "numa-3080ti" in err  # the message lists what exists


class TestSimulate:
    def base_argv(self, reg_path, strm_path):
        return [
            "simulate", "--policy", "coserve", "--device", "numa-3080ti",
            "--registry", reg_path, "--stream", strm_path,
            "--gpu-executors", "1", "--cpu-executors", "0", "--no-search",
        ]

    def test_stdout_metrics_json(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        rc = main(self.base_argv(reg_path, strm_path))
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["policy"] == "coserve"
        assert doc["completed_requests"] == 6

    def test_out_and_trace_files(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        out = tmp_path / "metrics.json"
        trace = tmp_path / "trace.jsonl"
        argv = self.base_argv(reg_path, strm_path) + ["--out", str(out), "--trace", str(trace)]
        assert main(argv) == 0
        printed = capsys.readouterr().out
        assert "coserve: 6 requests" in printed
        doc = json.loads(out.read_text())
        assert doc["completed_requests"] == 6
        lines = trace.read_text().splitlines()
        assert f"({len(lines)} events)" in printed
        for line in lines:
            record = json.loads(line)
            assert set(record) == {"event", "executor", "expert_id", "request_id", "time_s"}

    def test_repeat_invocations_are_byte_identical(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        outputs = []
        for name in ("one", "two"):
            out = tmp_path / f"{name}.json"
            trace = tmp_path / f"{name}.jsonl"
            argv = self.base_argv(reg_path, strm_path) + ["--out", str(out), "--trace", str(trace)]
            assert main(argv) == 0
            outputs.append((out.read_bytes(), trace.read_bytes()))
        capsys.readouterr()
        assert outputs[0] == outputs[1]

    def test_missing_perf_profile_exits_2(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        argv = self.base_argv(reg_path, strm_path) + ["--config-dir", str(tmp_path / "cfg")]
        assert main(argv) == 2
        assert "run 'coesim profile' first" in capsys.readouterr().err

    def test_config_dir_profile_is_used(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        cfg = tmp_path / "cfg"
        assert main(["profile", "--device", "numa-3080ti", "--registry", reg_path,
                     "--gpu-executors", "1", "--cpu-executors", "0",
                     "--out-dir", str(cfg)]) == 0
        argv = self.base_argv(reg_path, strm_path) + ["--config-dir", str(cfg)]
        assert main(argv) == 0
        capsys.readouterr()

    def test_registry_without_stream_exits_2(self, tmp_path, capsys):
        reg_path, _ = write_workload(tmp_path)
        rc = main(["simulate", "--policy", "coserve", "--registry", reg_path, "--no-search"])
        assert rc == 2
        assert "provide --stream" in capsys.readouterr().err

    def test_bad_alloc_spec_exits_2(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        argv = self.base_argv(reg_path, strm_path) + ["--alloc", "tpu=3"]
        assert main(argv) == 2
        assert "bad --alloc processor" in capsys.readouterr().err

    def test_starvation_exits_3(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path, num_components=1, n_requests=1,
                                             expert_bytes=5_000_000_000)
        argv = [
            "simulate", "--policy", "coserve", "--device", "numa-3080ti",
            "--registry", reg_path, "--stream", strm_path,
            "--gpu-executors", "3", "--cpu-executors", "0", "--no-search",
        ]
        assert main(argv) == 3
        assert "simulation failed" in capsys.readouterr().err


class TestSearchMemory:
    def test_writes_window_search_result(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path, num_components=30, n_requests=40)
        out = tmp_path / "window_search.json"
        rc = main([
            "search-memory", "--device", "numa-3080ti",
            "--registry", reg_path, "--stream", strm_path,
            "--proc", "gpu", "--gpu-executors", "1", "--cpu-executors", "0",
            "--choose", "midpoint", "--out", str(out),
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.startswith("window [")
        result = WindowSearchResult.from_doc(json.loads(out.read_text()))
        assert result.lower <= result.chosen <= result.upper
        assert result.throughput_samples


class TestCompare:
    def test_table_and_exports(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path, num_components=4, n_requests=12)
        out_json = tmp_path / "compare.json"
        out_csv = tmp_path / "compare.csv"
        rc = main([
            "compare", "--device", "numa-3080ti",
            "--registry", reg_path, "--stream", strm_path,
            "--seeds", "2", "--policies", "coserve,samba_lru",
            "--gpu-executors", "1", "--cpu-executors", "0",
            "--out-json", str(out_json), "--out-csv", str(out_csv),
        ])
        assert rc == 0
        table = capsys.readouterr().out
        assert "xLRU" in table and "ovh" in table
        assert "coserve" in table and "samba_lru" in table

        doc = json.loads(out_json.read_text())
        rows = {row["policy"]: row for row in doc["rows"]}
        assert rows["samba_lru"]["throughput_x_vs_samba_lru"] is None
        assert rows["coserve"]["throughput_x_vs_samba_lru"] is not None
        assert len(rows["coserve"]["runs"]) == 2

        with open(out_csv) as fh:
            csv_rows = list(csv.DictReader(fh))
        assert [r["policy"] for r in csv_rows] == ["coserve", "samba_lru"]
        assert "sched_overhead_mean" in csv_rows[0]

    def test_unknown_policy_exits_2(self, tmp_path, capsys):
        reg_path, strm_path = write_workload(tmp_path)
        rc = main([
            "compare", "--registry", reg_path, "--stream", strm_path,
            "--seeds", "1", "--policies", "coserve,teleport",
        ])
        assert rc == 2
        assert "unknown policies" in capsys.readouterr().err
