"""Exact MILP: model shape, LP export, solving, extraction, symmetry."""
import sys
from pathlib import Path

import pytest

from conftest import mk_graph, mk_hw, mk_table, random_instance
from hetsched.core import GraphError, ScheduleError, validate_schedule
from hetsched.milp import (ExternalBackend, add_symmetry_constraints,
                           build_milp, export_lp, extract_schedule, horizon,
                           solve)
from hetsched.oracle import brute_force

GOLDEN = Path(__file__).parent / "golden"
STUB = Path(__file__).parent / "external_solver.py"


def _two_chain():
    g = mk_graph({"a": (0.0, 0.0, 4.0), "b": (0.0, 0.0, 0.0)}, [("a", "b")])
    hw = mk_hw({"d1": (100.0, (1,)), "d2": (100.0, (1,))}, mesh_bw=2.0)
    t = mk_table(g, hw, lambda i, u, b: {("a", "d1"): 2.0, ("a", "d2"): 1.0,
                                         ("b", "d1"): 1.0,
                                         ("b", "d2"): 3.0}[(i, u)])
    return g, hw, t


class TestBuild:
    def test_variable_counts_two_chain(self):
        g, hw, t = _two_chain()
        m = build_milp(g, hw, t, 1)
        kinds = {}
        for v in m.variables:
            kinds.setdefault(v.name[0], []).append(v.name)
        assert len(kinds["x"]) == 4
        assert len(kinds["b"]) == 4
        assert len(kinds["s"]) == 4
        assert kinds["C"] == ["C"]
        # the only task pair is path-related, so no ordering binaries
        assert "d" not in kinds

    def test_single_task_optimum(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (1,))})
        t = mk_table(g, hw, 5.0)
        res = solve(build_milp(g, hw, t, 1))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(5.0, abs=1e-6)

    def test_independent_pair_one_disjunction(self):
        g = mk_graph(["a", "b"])
        hw = mk_hw({"d0": (10.0, (1,))})
        t = mk_table(g, hw, 1.0)
        m = build_milp(g, hw, t, 1)
        d_vars = [v.name for v in m.variables if v.name.startswith("d(")]
        assert len(d_vars) == 1

    def test_unknown_objective_rejected(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (1,))})
        with pytest.raises(GraphError):
            build_milp(g, hw, mk_table(g, hw, 1.0), 1, objective="speed")

    def test_throughput_same_model(self):
        g, hw, t = _two_chain()
        lat = export_lp(build_milp(g, hw, t, 1, objective="latency"))
        tput = export_lp(build_milp(g, hw, t, 1, objective="throughput"))
        assert lat == tput


class TestHorizon:
    def test_single_task(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (1,))})
        assert horizon(g, hw, mk_table(g, hw, 5.0), 1) == pytest.approx(5.0)

    def test_two_chain_with_comm(self):
        g, hw, t = _two_chain()
        # max t(a)=2, max t(b)=3, worst transfer 4/2=2
        assert horizon(g, hw, t, 1) == pytest.approx(7.0)

    def test_dominates_optimum(self):
        for seed in range(8):
            g, hw, t = random_instance(seed, max_tasks=5, L=1)
            try:
                opt = brute_force(g, hw, t, L=1).objective
            except ScheduleError:
                continue
            assert horizon(g, hw, t, 1) >= opt - 1e-9


class TestExport:
    def test_golden_one_task(self):
        g = mk_graph({"a": (8.0, 2.0, 0.0)})
        hw = mk_hw({"d0": (10.0, (1,))})
        t = mk_table(g, hw, 5.0)
        text = export_lp(build_milp(g, hw, t, 1))
        assert text == (GOLDEN / "one_task.lp").read_text()

    def test_deterministic(self):
        g, hw, t = random_instance(5, max_tasks=5, L=2)
        a = export_lp(build_milp(g, hw, t, 2))
        b = export_lp(build_milp(g, hw, t, 2))
        assert a == b

    def test_external_backend_matches_embedded(self):
        backend = ExternalBackend(str(STUB))
        checked = 0
        for seed in (0, 3, 7):
            g, hw, t = random_instance(seed, max_tasks=4, L=1,
                                       allow_missing_links=False,
                                       allow_tight_memory=False)
            m = build_milp(g, hw, t, 1)
            res_in = solve(m, timeout=30)
            res_ex = backend.solve(m, timeout=30)
            assert res_ex.status == res_in.status == "optimal"
            assert res_ex.objective == pytest.approx(res_in.objective,
                                                     abs=1e-6)
            checked += 1
        assert checked == 3


class TestSolve:
    def test_infeasible_batching(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (2,)), "d1": (10.0, (2,))}, mesh_bw=1.0)
        t = mk_table(g, hw, 1.0)
        res = solve(build_milp(g, hw, t, 3))
        assert res.status == "infeasible"

    def test_timeout_rejected(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (1,))})
        m = build_milp(g, hw, mk_table(g, hw, 1.0), 1)
        with pytest.raises(GraphError):
            solve(m, timeout=0)

    def test_matches_oracle_small(self):
        compared = 0
        for seed in range(12):
            g, hw, t = random_instance(seed, max_tasks=5, L=1)
            m = build_milp(g, hw, t, 1)
            res = solve(m, timeout=60)
            try:
                opt = brute_force(g, hw, t, L=1).objective
            except ScheduleError:
                assert res.status == "infeasible"
                continue
            assert res.status == "optimal"
            assert res.objective == pytest.approx(opt, abs=1e-6)
            compared += 1
        assert compared >= 8

    def test_device_monotonicity(self):
        for seed in range(6):
            g, hw, t = random_instance(seed, max_tasks=4, L=1,
                                       allow_missing_links=False,
                                       allow_tight_memory=False)
            res1 = solve(build_milp(g, hw, t, 1), timeout=30)
            extra = dict({u: (d.memory, d.batch_sizes)
                          for u, d in hw.devices.items()},
                         dX=(1e9, (1, 2)))
            hw2 = mk_hw(extra, bandwidth=dict(hw.bandwidth), mesh_bw=5.0)
            t2 = mk_table(g, hw2, lambda i, u, b: t.get(i, u, b)
                          if u != "dX" else 30.0 * b)
            res2 = solve(build_milp(g, hw2, t2, 1), timeout=30)
            assert res2.objective <= res1.objective + 1e-6


class TestExtract:
    def test_single_task(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (1,))})
        t = mk_table(g, hw, 5.0)
        m = build_milp(g, hw, t, 1)
        s = extract_schedule(m, solve(m))
        assert len(s.batches) == 1
        assert s.batches[0].start == pytest.approx(0.0, abs=1e-9)

    def test_forced_full_batch(self):
        g = mk_graph(["a"])
        hw = mk_hw({"d0": (10.0, (2,))})
        t = mk_table(g, hw, 3.0)
        m = build_milp(g, hw, t, 2)
        s = extract_schedule(m, solve(m))
        assert len(s.batches) == 1
        assert s.batches[0].size == 2
        assert sorted(s.batches[0].inputs) == [1, 2]

    def test_round_trip_validates(self):
        for seed in range(10):
            g, hw, t = random_instance(seed, max_tasks=5, L=1)
            m = build_milp(g, hw, t, 1)
            res = solve(m, timeout=60)
            if res.status != "optimal":
                continue
            s = extract_schedule(m, res)
            ms = validate_schedule(g, hw, t, s)
            assert ms == pytest.approx(res.objective, abs=1e-6)

    def test_memory_forces_split(self):
        g = mk_graph({"a": (8.0, 1.0, 1.0), "b": (8.0, 1.0, 1.0)})
        hw = mk_hw({"d0": (12.0, (1,)), "d1": (12.0, (1,))}, mesh_bw=1.0)
        t = mk_table(g, hw, 5.0)
        m = build_milp(g, hw, t, 1)
        s = extract_schedule(m, solve(m))
        assert {b.device for b in s.batches} == {"d0", "d1"}
        validate_schedule(g, hw, t, s)


class TestPruning:
    def test_pruned_matches_unpruned(self):
        for seed in range(6):
            g, hw, t = random_instance(seed, max_tasks=5, L=1)
            r1 = solve(build_milp(g, hw, t, 1, prune=True), timeout=60)
            r2 = solve(build_milp(g, hw, t, 1, prune=False), timeout=60)
            assert r1.status == r2.status
            if r1.status == "optimal":
                assert r1.objective == pytest.approx(r2.objective, abs=1e-6)

    def test_pruning_drops_chain_pair(self):
        g, hw, t = _two_chain()
        pruned = build_milp(g, hw, t, 1, prune=True)
        full = build_milp(g, hw, t, 1, prune=False)
        n_d = lambda m: sum(v.name.startswith("d(") for v in m.variables)
        assert n_d(pruned) == 0
        # one ordering binary per device for the single unordered pair
        assert n_d(full) == 2


def _symmetric_instance(n_tasks=4, n_dev=3, edges=()):
    ids = [f"t{k}" for k in range(n_tasks)]
    g = mk_graph(ids, edges)
    hw = mk_hw({f"d{k}": (1e9, (1, 2)) for k in range(n_dev)}, mesh_bw=5.0)
    t = mk_table(g, hw, lambda i, u, b: (3.0 + 2.0 * int(i[1:])) * b)
    return g, hw, t


class TestSymmetry:
    def test_group_of_one_is_noop(self):
        g, hw, t = _symmetric_instance()
        m = build_milp(g, hw, t, 1)
        before = len(m.constraints)
        add_symmetry_constraints(m, [["d0"]], "task")
        assert len(m.constraints) == before

    @pytest.mark.parametrize("criterion", ["batch", "task", "time"])
    def test_optimum_unchanged(self, criterion):
        g, hw, t = _symmetric_instance()
        base = solve(build_milp(g, hw, t, 1), timeout=30)
        m = build_milp(g, hw, t, 1)
        add_symmetry_constraints(m, [["d0", "d1", "d2"]], criterion)
        res = solve(m, timeout=30)
        assert res.status == "optimal"
        assert res.objective == pytest.approx(base.objective, abs=1e-6)

    def test_non_interchangeable_rejected(self):
        g, hw, t = _symmetric_instance()
        skew = mk_table(g, hw, lambda i, u, b: 2.0 * b if u == "d0" else 3.0 * b)
        m = build_milp(g, hw, skew, 1)
        with pytest.raises(GraphError, match="differ"):
            add_symmetry_constraints(m, [["d0", "d1"]], "task")
