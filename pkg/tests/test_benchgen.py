"""Benchmark generator: random modules, stacking, synthetic profiles."""
import math

import pytest

from hetsched import benchgen
from hetsched.bounds import dep_subgraph, pre_subgraph
from hetsched.core import GraphError, bfs_topological_order, save_graph
from hetsched.splitting import k_edge_components


class TestGenModule:
    def test_er_node_count_and_virtuals(self):
        g = benchgen.gen_module("er", 10, seed=1, p=0.2)
        assert len(g.tasks) == 12
        assert any(i.endswith("vin") for i in g.tasks)
        assert any(i.endswith("vout") for i in g.tasks)
        order = bfs_topological_order(g)  # construction already proves a DAG
        assert len(order) == 12

    def test_single_input_single_output(self):
        for model, kw in (("er", {"p": 0.2}), ("ws", {"k": 4, "p": 0.75}),
                          ("ba", {"m": 5})):
            g = benchgen.gen_module(model, 10, seed=5, **kw)
            sources = [i for i in g.tasks if not g.pred[i]]
            sinks = [i for i in g.tasks if not g.succ[i]]
            assert len(sources) == 1 and sources[0].endswith("vin")
            assert len(sinks) == 1 and sinks[0].endswith("vout")

    def test_ws_internal_degree(self):
        for seed in range(100):
            g = benchgen.gen_module("ws", 32, seed=seed, k=4, p=0.75)
            deg = {i: 0 for i in g.tasks}
            for (a, b) in g.edges:
                deg[a] += 1
                deg[b] += 1
            internal = [i for i in g.tasks
                        if not (i.endswith("vin") or i.endswith("vout"))]
            assert len(internal) == 32
            assert all(deg[i] >= 1 for i in internal)

    def test_determinism(self):
        a = benchgen.gen_module("ba", 12, seed=9, m=5)
        b = benchgen.gen_module("ba", 12, seed=9, m=5)
        assert save_graph(a) == save_graph(b)
        c = benchgen.gen_module("ba", 12, seed=10, m=5)
        assert save_graph(a) != save_graph(c)

    def test_degenerate_parameters(self):
        with pytest.raises(GraphError):
            benchgen.gen_module("ba", 4, seed=0, m=5)
        with pytest.raises(GraphError):
            benchgen.gen_module("er", 1, seed=0, p=0.2)


class TestStackModules:
    def test_single_channel_concatenation(self):
        mods = [benchgen.gen_module("er", 6, seed=s, p=0.3) for s in (1, 2)]
        g, gt = benchgen.stack_modules(mods, channels=1, mode="sdep", seed=0)
        assert len(gt.modules) == 2
        assert len(g.tasks) == sum(len(m.tasks) for m in mods)
        bridge_edges = gt.cut_edges[(0, 1)]
        assert len(bridge_edges) == 1
        (src, tgt) = bridge_edges[0]
        assert src.endswith("vout") and tgt.endswith("vin")

    @pytest.mark.parametrize("mode", ["sdep", "wdep"])
    def test_channel_count_and_siso(self, mode):
        mods = [benchgen.gen_module("er", 5, seed=s + 10, p=0.6)
                for s in range(3)]
        g, gt = benchgen.stack_modules(mods, channels=2, mode=mode, seed=1)
        for edges in gt.cut_edges.values():
            assert len(edges) == 2
        sources = [i for i in g.tasks if not g.pred[i]]
        sinks = [i for i in g.tasks if not g.succ[i]]
        assert len(sources) == 1 and len(sinks) == 1

    def test_sdep_coverage(self):
        mods = [benchgen.gen_module("er", 5, seed=s + 30, p=0.6)
                for s in range(3)]
        g, gt = benchgen.stack_modules(mods, channels=2, mode="sdep", seed=3)
        for t in range(len(gt.modules)):
            block = gt.modules[t]
            outs = {src for (a, b), edges in gt.cut_edges.items() if a == t
                    for (src, tgt) in edges}
            ins = {tgt for (a, b), edges in gt.cut_edges.items() if b == t
                   for (src, tgt) in edges}
            if outs:
                covered = set()
                for o in outs:
                    covered |= pre_subgraph(g, o, block) | {o}
                assert covered == set(block)
            if ins:
                covered = set()
                for i in ins:
                    covered |= dep_subgraph(g, i, block) | {i}
                assert covered == set(block)

    def test_ground_truth_matches_detection(self):
        g, gt, hw, table = benchgen.gen_stacked_instance(
            "er", 5, n_modules=10, channels=2, mode="sdep", seed=4, p=0.6)
        d = k_edge_components(g, 2)
        # detected modules never straddle a generator block boundary
        for comp in d.modules:
            owners = {next(k for k, blk in enumerate(gt.modules) if t in blk)
                      for t in comp}
            assert len(owners) == 1

    def test_determinism(self):
        mods = [benchgen.gen_module("er", 6, seed=s + 50, p=0.4)
                for s in range(2)]
        g1, _ = benchgen.stack_modules(mods, channels=3, mode="wdep", seed=7)
        g2, _ = benchgen.stack_modules(mods, channels=3, mode="wdep", seed=7)
        assert save_graph(g1) == save_graph(g2)


class TestSynthProfile:
    def test_table_ratios_zero_noise(self):
        g = benchgen.gen_module("er", 8, seed=2, p=0.3)
        table, hw = benchgen.synth_profile(g, seed=0, noise_sigma=0.0)
        real = [i for i in g.tasks
                if not (i.endswith("vin") or i.endswith("vout"))]
        for i in real:
            base = table.get(i, "gpuB", 1)
            assert table.get(i, "cpu", 1) == pytest.approx(7.10 * base)
            assert table.get(i, "gpuA", 1) == pytest.approx(1.26 * base)

    def test_batch_law_identity_at_one(self):
        g = benchgen.gen_module("er", 6, seed=3, p=0.3)
        table, hw = benchgen.synth_profile(g, seed=1)
        for i in g.tasks:
            t1 = table.get(i, "gpuB", 1)
            assert table.get(i, "gpuB", 2) == pytest.approx(t1 * 2 ** 0.8)

    def test_completeness(self):
        g = benchgen.gen_module("ws", 10, seed=4, k=4, p=0.75)
        table, hw = benchgen.synth_profile(g, seed=2)
        table.check_complete(g, hw)

    def test_virtual_tasks_are_free(self):
        g = benchgen.gen_module("er", 6, seed=5, p=0.3)
        table, hw = benchgen.synth_profile(g, seed=3)
        vin = next(i for i in g.tasks if i.endswith("vin"))
        assert table.get(vin, "cpu", 4) == 0.0


class TestTransformerStack:
    def test_single_layer_single_node(self):
        g, hw = benchgen.gen_transformer_stack(1, 1, 1)
        assert len(k_edge_components(g, 1).modules) == 1
        assert len(hw.symmetry_groups["inter"]) == 1

    def test_multi_node_groups_and_modules(self):
        g, hw = benchgen.gen_transformer_stack(6, 6, 4)
        d = k_edge_components(g, 1)
        assert len(d.modules) == 6
        intra = hw.symmetry_groups["intra"]
        assert len(intra) == 6 and all(len(grp) == 4 for grp in intra)
        assert len(hw.symmetry_groups["inter"]) == 6
        assert benchgen.symmetry_compression(6, 4) \
            == pytest.approx(4 ** 6 * math.factorial(6))

    def test_link_speeds(self):
        g, hw = benchgen.gen_transformer_stack(1, 2, 2)
        assert hw.bandwidth[("n00_acc0", "n00_acc1")] \
            > hw.bandwidth[("n00_acc0", "n01_acc0")]


def test_gen_stacked_instance_complete():
    g, gt, hw, table = benchgen.gen_stacked_instance(
        "er", 4, n_modules=3, channels=1, mode="sdep", seed=8, p=0.4)
    table.check_complete(g, hw)
    assert len(gt.modules) == 3
