import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dendrisim.chip import (MAX_ANALOG_PARAMS, PARAM_NAMES, SOMA_SEGMENT_PERIOD, Block, ChipConfig,
                            CompartmentId, Mode, default_params, derive_network, merge_pairs,
                            n_segment_switches, validate_config)
from dendrisim.morph import compile_morphology, preset_pyramidal

from conftest import brute_components, random_chip


def test_empty_chip_is_valid():
    assert validate_config(ChipConfig.empty(4, 8)) == []


def test_parameter_budget():
    assert len(PARAM_NAMES) <= MAX_ANALOG_PARAMS


def test_compartment_id_text():
    cid = CompartmentId.parse("L3")
    assert cid == CompartmentId(Block.LOWER, 3)
    assert str(cid) == "L3"
    assert Block.parse("upper") is Block.UPPER


def test_weight_out_of_range():
    cfg = ChipConfig.empty(4, 2)
    cfg.rows[0].cells[1].weight = 64
    assert any("weight exceeds 6 bits" in v for v in validate_config(cfg))


def test_address_out_of_range():
    cfg = ChipConfig.empty(4, 2)
    cfg.rows[1].cells[0].address = 70
    assert any("address exceeds 6 bits" in v for v in validate_config(cfg))


def test_bypass_requires_connect():
    cfg = ChipConfig.empty(4, 2)
    cfg.compartments[CompartmentId(Block.UPPER, 2)].soma_bypass = True
    problems = validate_config(cfg)
    assert len(problems) == 1 and "soma_bypass" in problems[0] and "U2" in problems[0]


def test_single_current_input():
    cfg = ChipConfig.empty(4, 2)
    cfg.compartments[CompartmentId(Block.UPPER, 0)].current_input_enabled = True
    assert validate_config(cfg) == []
    cfg.compartments[CompartmentId(Block.LOWER, 3)].current_input_enabled = True
    assert any("current_input_enabled" in v for v in validate_config(cfg))


def test_negative_conductance_and_exp_slope():
    cfg = ChipConfig.empty(2, 0)
    comp = cfg.compartments[CompartmentId(Block.UPPER, 0)]
    comp.params = comp.params.replace(g_leak=-1e-9)
    comp.exp_term_enabled = True
    comp.params = comp.params.replace(Delta_T=0.0)
    problems = validate_config(cfg)
    assert any("g_leak" in v for v in problems)
    assert any("Delta_T" in v for v in problems)


def test_vertical_flags_must_agree():
    cfg = ChipConfig.empty(2, 0)
    cfg.compartments[CompartmentId(Block.UPPER, 1)].switch_merge_vertical = True
    assert any("switch_merge_vertical" in v for v in validate_config(cfg))


def test_segment_switch_count():
    assert [n_segment_switches(n) for n in (1, 4, 5, 8, 9, 12)] == [0, 0, 1, 1, 2, 2]
    cfg = ChipConfig.empty(8, 0)
    cfg.soma_segment_switches[Block.UPPER] = []
    assert any("soma_segment_switches[upper]" in v for v in validate_config(cfg))


def test_all_open_four_columns():
    g = derive_network(ChipConfig.empty(4, 0))
    assert len(g.membrane_nodes) == 8
    assert all(len(n.members) == 1 for n in g.membrane_nodes)
    # one somatic-line segment per block: four columns fit in one period
    assert [(s.block, s.columns) for s in g.soma_segments] == [
        (Block.UPPER, (0, 1, 2, 3)), (Block.LOWER, (0, 1, 2, 3))]


def test_segments_split_at_open_switch():
    cfg = ChipConfig.empty(10, 0)
    cfg.soma_segment_switches[Block.LOWER] = [True, False]
    g = derive_network(cfg)
    spans = [(s.block, s.columns[0], s.columns[-1]) for s in g.soma_segments]
    assert spans == [(Block.UPPER, 0, 3), (Block.UPPER, 4, 7), (Block.UPPER, 8, 9),
                     (Block.LOWER, 0, 7), (Block.LOWER, 8, 9)]
    assert SOMA_SEGMENT_PERIOD == 4


def test_pyramidal_ca_pair_is_one_node():
    cfg = compile_morphology(preset_pyramidal(2, 2)).config
    g = derive_network(cfg)
    big = [n for n in g.membrane_nodes if len(n.members) == 2]
    assert len(big) == 1
    a, b = big[0].members
    assert a.column == b.column and a.block != b.block
    assert all(cfg.compartments[c].mode is Mode.CA for c in big[0].members)
    assert big[0].capacitance == pytest.approx(2 * default_params(Mode.CA).C_mem)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_chain_capacitance(k):
    cfg = ChipConfig.empty(8, 0)
    for c in range(k - 1):
        cfg.compartments[CompartmentId(Block.UPPER, c)].switch_merge_right = True
    g = derive_network(cfg)
    node = g.membrane_nodes[g.node_of[CompartmentId(Block.UPPER, 0)]]
    assert len(node.members) == k
    assert node.capacitance == pytest.approx(k * 2e-12)


def test_derive_matches_flood_fill(rng):
    for _ in range(500):
        cfg = random_chip(rng)
        g = derive_network(cfg)
        got = {frozenset(n.members) for n in g.membrane_nodes}
        assert got == brute_components(cfg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_network_invariants(seed):
    rng = np.random.default_rng(seed)
    cfg = random_chip(rng)
    g = derive_network(cfg)
    # every compartment in exactly one node; capacitance conserved
    members = [c for n in g.membrane_nodes for c in n.members]
    assert sorted(members) == sorted(cfg.compartment_ids())
    total = sum(c.params.C_mem for c in cfg.compartments.values())
    assert sum(n.capacitance for n in g.membrane_nodes) == pytest.approx(total, rel=1e-12)
    # idempotent
    assert derive_network(cfg) == g
    # opening any closed merge switch never lowers the node count
    for a, b in merge_pairs(cfg):
        if a.block == b.block:
            cfg.compartments[a].switch_merge_right = False
            assert len(derive_network(cfg).membrane_nodes) >= len(g.membrane_nodes)
            cfg.compartments[a].switch_merge_right = True
        else:
            cfg.compartments[a].switch_merge_vertical = False
            cfg.compartments[b].switch_merge_vertical = False
            assert len(derive_network(cfg).membrane_nodes) >= len(g.membrane_nodes)
            cfg.compartments[a].switch_merge_vertical = True
            cfg.compartments[b].switch_merge_vertical = True


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_partition_independent_of_insertion_order(seed, shuffler):
    rng = np.random.default_rng(seed)
    cfg = random_chip(rng)
    items = list(cfg.compartments.items())
    shuffler.shuffle(items)
    shuffled = ChipConfig(cfg.n_columns, dict(items), cfg.rows, cfg.soma_segment_switches)
    assert derive_network(shuffled) == derive_network(cfg)


def test_random_configs_are_valid(rng):
    for _ in range(100):
        assert validate_config(random_chip(rng)) == []
