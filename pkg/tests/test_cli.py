"""End-to-end CLI pipelines, exit codes, and artifact round-trips."""
import csv
import json
import os
from pathlib import Path

import pytest

from hetsched.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main

STUB = Path(__file__).parent / "external_solver.py"


def _gen(tmp_path, *extra):
    out = tmp_path / "inst"
    rc = main(["gen", "--model", "er", "--n", "2", "--modules", "2",
               "--channels", "1", "--mode", "sdep", "--seed", "3",
               "--profile", "uniform2", "--out-dir", str(out), *extra])
    assert rc == EXIT_OK
    return out


def _instance_flags(inst):
    return ["--graph", str(inst / "graph.json"),
            "--hardware", str(inst / "hardware.json"),
            "--latency", str(inst / "latency.json")]


def test_gen_writes_artifacts(tmp_path):
    inst = _gen(tmp_path)
    for name in ("graph.json", "hardware.json", "latency.json",
                 "modules.json"):
        assert (inst / name).exists()
    doc = json.loads((inst / "modules.json").read_text())
    assert len(doc["modules"]) == 2


def test_gen_deterministic(tmp_path):
    a = _gen(tmp_path / "a")
    b = _gen(tmp_path / "b")
    for name in ("graph.json", "hardware.json", "latency.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("algo", ["milp", "split", "best-device", "met",
                                  "greedy", "heft", "sa", "ea"])
def test_schedule_validate_round_trip(tmp_path, algo):
    inst = _gen(tmp_path)
    sched = tmp_path / "sched.json"
    rc = main(["schedule", *_instance_flags(inst), "--algo", algo,
               "--budget", "50", "--timeout", "20",
               "--out", str(sched)])
    assert rc == EXIT_OK
    assert main(["validate", *_instance_flags(inst),
                 "--schedule", str(sched)]) == EXIT_OK


def test_batched_algos_round_trip(tmp_path):
    inst = _gen(tmp_path)
    for algo in ("bmet", "bgreedy", "bheft"):
        sched = tmp_path / f"{algo}.json"
        rc = main(["schedule", *_instance_flags(inst), "--algo", algo,
                   "--inputs", "2", "--out", str(sched)])
        assert rc == EXIT_OK
        assert main(["validate", *_instance_flags(inst),
                     "--schedule", str(sched)]) == EXIT_OK


def test_oracle_matches_milp(tmp_path, capsys):
    inst = _gen(tmp_path)
    a, b = tmp_path / "oracle.json", tmp_path / "milp.json"
    assert main(["oracle", *_instance_flags(inst), "--out", str(a)]) \
        == EXIT_OK
    assert main(["schedule", *_instance_flags(inst), "--algo", "milp",
                 "--out", str(b)]) == EXIT_OK
    obj_a = json.loads(a.read_text())["objective_ms"]
    obj_b = json.loads(b.read_text())["objective_ms"]
    assert obj_a == pytest.approx(obj_b, abs=1e-6)


def test_throughput_report(tmp_path, capsys):
    inst = _gen(tmp_path)
    sched = tmp_path / "s.json"
    rc = main(["schedule", *_instance_flags(inst), "--algo", "milp",
               "--objective", "throughput", "--inputs", "2",
               "--out", str(sched)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "throughput" in out


def test_lowerbound(tmp_path):
    inst = _gen(tmp_path)
    out = tmp_path / "lb.json"
    rc = main(["lowerbound", *_instance_flags(inst), "--timeout", "10",
               "--out", str(out)])
    assert rc == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["lower_bound_ms"] > 0
    # the generator's decomposition artifact is accepted back
    out2 = tmp_path / "lb2.json"
    rc = main(["lowerbound", *_instance_flags(inst), "--timeout", "10",
               "--modules", str(inst / "modules.json"), "--out", str(out2)])
    assert rc == EXIT_OK
    assert json.loads(out2.read_text())["lower_bound_ms"] > 0


def test_export_lp(tmp_path):
    inst = _gen(tmp_path)
    out = tmp_path / "model.lp"
    rc = main(["export-lp", *_instance_flags(inst), "--out", str(out)])
    assert rc == EXIT_OK
    text = out.read_text()
    assert text.startswith("Minimize")
    assert "Subject To" in text and text.rstrip().endswith("End")


def test_gantt_deterministic(tmp_path):
    inst = _gen(tmp_path)
    sched = tmp_path / "s.json"
    main(["schedule", *_instance_flags(inst), "--algo", "greedy",
          "--out", str(sched)])
    s1, s2 = tmp_path / "a.svg", tmp_path / "b.svg"
    for target in (s1, s2):
        rc = main(["gantt", *_instance_flags(inst),
                   "--schedule", str(sched), "--out", str(target)])
        assert rc == EXIT_OK
    assert s1.read_bytes() == s2.read_bytes()
    assert b"<svg" in s1.read_bytes()


def test_bench_csv_and_figures(tmp_path):
    out = tmp_path / "bench"
    rc = main(["bench", "--model", "er", "--n", "2", "--modules", "2",
               "--seeds", "2", "--algos", "met,greedy", "--timeout", "10",
               "--out-dir", str(out)])
    assert rc == EXIT_OK
    with open(out / "bench.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["instance", "algo", "objective", "ms", "wall_s",
                       "lbound", "gap"]
    assert len(rows) == 1 + 2 * 2
    assert (out / "bench_objective.svg").exists()
    assert (out / "bench_walltime.svg").exists()
    for row in rows[1:]:
        assert float(row[2]) >= float(row[5]) - 1e-6  # objective >= lbound


def test_bench_reproducible_objectives(tmp_path):
    def run(d):
        main(["bench", "--model", "er", "--n", "2", "--modules", "2",
              "--seeds", "2", "--algos", "met,sa", "--budget", "30",
              "--out-dir", str(d)])
        with open(d / "bench.csv") as f:
            return [(r["instance"], r["algo"], r["objective"])
                    for r in csv.DictReader(f)]

    assert run(tmp_path / "x") == run(tmp_path / "y")


def test_exit_codes(tmp_path):
    # missing input file -> usage error
    rc = main(["schedule", "--graph", "nope.json", "--hardware", "n.json",
               "--latency", "n.json", "--algo", "met",
               "--out", str(tmp_path / "s.json")])
    assert rc == EXIT_USAGE
    # unknown flag value -> argparse usage error
    inst = _gen(tmp_path)
    rc = main(["schedule", *_instance_flags(inst), "--algo", "wat",
               "--out", str(tmp_path / "s.json")])
    assert rc == EXIT_USAGE


def test_validate_rejects_tampered_schedule(tmp_path, capsys):
    inst = _gen(tmp_path)
    sched = tmp_path / "s.json"
    main(["schedule", *_instance_flags(inst), "--algo", "met",
          "--out", str(sched)])
    doc = json.loads(sched.read_text())
    doc["batches"][-1]["start_ms"] = 0.0  # shift a start over its inputs
    doc["objective_ms"] = 0.0
    sched.write_text(json.dumps(doc))
    rc = main(["validate", *_instance_flags(inst), "--schedule", str(sched)])
    assert rc == EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert json.loads(err.strip().splitlines()[-1])["error"] == "ScheduleError"


def test_infeasible_milp_exit_code(tmp_path):
    # L=3 cannot be decomposed when every device supports only batches of 2
    inst = tmp_path / "inst"
    inst.mkdir()
    (inst / "graph.json").write_text(json.dumps(
        {"tasks": [{"id": "a", "wm": 0, "im": 0, "om": 0}], "edges": []}))
    (inst / "hardware.json").write_text(json.dumps(
        {"devices": [{"id": "d0", "memory": 1e9, "batch_sizes": [2]},
                     {"id": "d1", "memory": 1e9, "batch_sizes": [2]}],
         "bandwidth": {"d0": {"d1": 1e6}, "d1": {"d0": 1e6}}}))
    (inst / "latency.json").write_text(json.dumps(
        {"a": {"d0": {"2": 1.0}, "d1": {"2": 1.0}}}))
    rc = main(["schedule", *_instance_flags(inst), "--algo", "milp",
               "--inputs", "3", "--out", str(tmp_path / "s.json")])
    assert rc == EXIT_INFEASIBLE


def test_config_file_defaults_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "profile": "uniform2",
                               "model": "er", "n": 2, "modules": 2}))
    a = tmp_path / "a"
    rc = main(["--config", str(cfg), "gen", "--out-dir", str(a)])
    assert rc == EXIT_OK
    b = _gen(tmp_path / "b")
    assert (a / "graph.json").read_bytes() == (b / "graph.json").read_bytes()
    # explicit flag wins over the config value
    c = tmp_path / "c"
    rc = main(["--config", str(cfg), "gen", "--seed", "4",
               "--out-dir", str(c)])
    assert rc == EXIT_OK
    assert (c / "graph.json").read_bytes() != (b / "graph.json").read_bytes()


def test_external_backend_env(tmp_path, monkeypatch):
    inst = _gen(tmp_path)
    ref = tmp_path / "ref.json"
    assert main(["schedule", *_instance_flags(inst), "--algo", "milp",
                 "--timeout", "20", "--out", str(ref)]) == EXIT_OK
    monkeypatch.setenv("HETSCHED_SOLVER", str(STUB))
    ext = tmp_path / "ext.json"
    assert main(["schedule", *_instance_flags(inst), "--algo", "milp",
                 "--timeout", "20", "--out", str(ext)]) == EXIT_OK
    assert json.loads(ext.read_text())["objective_ms"] == pytest.approx(
        json.loads(ref.read_text())["objective_ms"], abs=1e-6)
