import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dendrisim.chip import Block, CompartmentId, Mode, SOMA_SEGMENT_PERIOD, default_params, derive_network
from dendrisim.configio import ConfigParseError
from dendrisim.morph import (ChipDims, EdgeKind, Infeasible, MorphEdge, MorphNode, MorphologyGraph,
                             compile_morphology, dumps_morphology, equivalent, loads_morphology,
                             morphology_multigraph, preset_point_neuron, preset_pyramidal)

MODES = [Mode.NA, Mode.CA, Mode.NMDA, Mode.PASSIVE]


def random_morphology(rng, max_nodes=5, max_lines=2):
    """Random valid morphology (regenerates until it validates)."""
    while True:
        n = int(rng.integers(1, max_nodes + 1))
        nodes = [MorphNode(f"n{i}", MODES[rng.integers(4)], fan_in=int(rng.integers(0, 4)))
                 for i in range(n)]
        if rng.random() < 0.3:
            nodes[0].params = default_params(nodes[0].spike_type).replace(
                C_mem=float(rng.uniform(1e-12, 3e-12)))
        lines = [f"L{i}" for i in range(int(rng.integers(0, max_lines + 1)))]
        edges = []
        for node in nodes:
            if lines and rng.random() < 0.6:
                line = lines[rng.integers(len(lines))]
                has_bypass = any(e.b == line and e.g is None for e in edges)
                g = None if (not has_bypass and rng.random() < 0.3) else float(rng.choice([1e-7, 2e-7, 5e-7]))
                edges.append(MorphEdge(node.label, line, EdgeKind.SOMA_LINE, g))
        for a, b in itertools.combinations(range(n), 2):
            if rng.random() < 0.3:
                edges.append(MorphEdge(f"n{a}", f"n{b}", EdgeKind.DIRECT_MERGE))
        m = MorphologyGraph(nodes, edges, lines)
        if not m.validate():
            return m


def legal(m, assign):
    seg = lambda c: c.column // SOMA_SEGMENT_PERIOD
    for e in m.merges():
        a, b = assign[e.a], assign[e.b]
        horizontal = a.block == b.block and abs(a.column - b.column) == 1 and seg(a) == seg(b)
        vertical = a.column == b.column and a.block != b.block
        if not (horizontal or vertical):
            return False
    spans = []
    for line in m.lines:
        cids = [assign[e.a] for e in m.attachments(line)]
        if len({c.block for c in cids}) != 1:
            return False
        spans.append((cids[0].block, min(map(seg, cids)), max(map(seg, cids))))
    for (b1, lo1, hi1), (b2, lo2, hi2) in itertools.combinations(spans, 2):
        if b1 == b2 and not (hi1 < lo2 or hi2 < lo1):
            return False
    return True


def brute_feasible(m, dims):
    slots = [CompartmentId(b, c) for c in range(dims.n_columns) for b in Block]
    if any(n.fan_in > dims.n_rows for n in m.nodes):
        return False
    labels = [n.label for n in m.nodes]
    return any(legal(m, dict(zip(labels, perm))) for perm in itertools.permutations(slots, len(labels)))


def structure_matches(m, cfg):
    """Independent of graph isomorphism: node count, bypass count, conductance multiset."""
    g = derive_network(cfg)
    used = [c for c, comp in cfg.compartments.items() if comp.mode is not Mode.DISABLED]
    groups = len({g.node_of[c] for c in used})
    parent = {n.label: n.label for n in m.nodes}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x
    for e in m.merges():
        parent[find(e.a)] = find(e.b)
    want_groups = len({find(n.label) for n in m.nodes})
    att = [a for s in g.soma_segments for a in s.attachments]
    want_g = Counter(e.g for e in m.edges if e.kind is EdgeKind.SOMA_LINE and e.g is not None)
    got_g = Counter(a.g_ic for a in att if not a.bypass)
    want_bypass = sum(e.g is None for e in m.edges if e.kind is EdgeKind.SOMA_LINE)
    return (groups == want_groups and got_g == want_g
            and sum(a.bypass for a in att) == want_bypass)


# -- presets ------------------------------------------------------------------------

def test_pyramidal_preset_topology():
    big = preset_pyramidal(2, 2)
    assert len(big.nodes) == 7
    # the Ca pair shares one membrane node; the two lines are vertices too
    assert len(morphology_multigraph(big).nodes) == 6 + 2
    m = preset_pyramidal(1, 1)
    assert len(m.nodes) == 5 and m.lines == ["apical", "soma_line"]
    with pytest.raises(ValueError):
        preset_pyramidal(1, 1, apical_branches=2)
    assert m.node("ca_basal").spike_type is Mode.CA
    assert preset_pyramidal(1, 1, ca_mechanisms=1).node("ca_basal").spike_type is Mode.PASSIVE


def test_pyramidal_placement():
    m = preset_pyramidal(2, 2)
    place = compile_morphology(m, ChipDims(4, 8))
    a = place.assignment
    assert a["ca_apical"].column == a["ca_basal"].column and a["ca_apical"].block != a["ca_basal"].block
    soma = place.config.compartments[a["soma"]]
    assert soma.soma_bypass and soma.current_input_enabled and soma.exp_term_enabled
    assert equivalent(m, place.config) and structure_matches(m, place.config)


def test_point_neuron_uses_no_line():
    place = compile_morphology(preset_point_neuron(), ChipDims(1, 2))
    comps = place.config.compartments.values()
    assert not any(c.soma_connect or c.switch_merge_right or c.switch_merge_vertical for c in comps)
    assert sum(c.mode is Mode.NA for c in comps) == 1


def test_line_with_too_many_attachments():
    nodes = [MorphNode(f"d{i}", Mode.NMDA) for i in range(5)]
    edges = [MorphEdge(f"d{i}", "L", EdgeKind.SOMA_LINE, 1e-7) for i in range(5)]
    m = MorphologyGraph(nodes, edges, ["L"])
    with pytest.raises(Infeasible):
        compile_morphology(m, ChipDims(4, 8))
    assert not brute_feasible(m, ChipDims(4, 8))


def test_fan_in_too_large():
    m = preset_point_neuron()
    m.nodes[0].fan_in = 9
    with pytest.raises(Infeasible):
        compile_morphology(m, ChipDims(2, 8))


def test_invalid_morphology_rejected():
    m = MorphologyGraph([MorphNode("a", Mode.NA), MorphNode("b", Mode.NA)], [], [])
    assert "morphology graph is not connected" in m.validate()
    with pytest.raises(ValueError):
        compile_morphology(m)


# -- compiler against exhaustive placement ----------------------------------------------------

@pytest.mark.parametrize("dims,max_nodes", [(ChipDims(4, 4), 5), (ChipDims(6, 4), 4)])
def test_feasibility_matches_brute_force(dims, max_nodes):
    rng = np.random.default_rng(5)
    for _ in range(60):
        m = random_morphology(rng, max_nodes=max_nodes)
        want = brute_feasible(m, dims)
        try:
            place = compile_morphology(m, dims)
        except Infeasible:
            assert not want, dumps_morphology(m)
            continue
        assert want
        assert legal(m, place.assignment)
        assert equivalent(m, place.config) and structure_matches(m, place.config)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_compile_round_trip(seed):
    rng = np.random.default_rng(seed)
    m = random_morphology(rng)
    try:
        place = compile_morphology(m, ChipDims(8, 4))
    except Infeasible:
        return
    assert equivalent(m, place.config)
    assert structure_matches(m, place.config)
    again = compile_morphology(m, ChipDims(8, 4))
    assert again.assignment == place.assignment and again.config == place.config


def test_equivalent_detects_changes():
    m = preset_pyramidal(1, 1)
    cfg = compile_morphology(m).config
    a = compile_morphology(m).assignment
    cfg.compartments[a["basal0"]].params = cfg.compartments[a["basal0"]].params.replace(g_ic=3e-7)
    assert not equivalent(m, cfg)
    cfg = compile_morphology(m).config
    for cid in (a["ca_apical"], a["ca_basal"]):
        cfg.compartments[cid].switch_merge_vertical = False
    assert not equivalent(m, cfg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_text_round_trip(seed):
    m = random_morphology(np.random.default_rng(seed))
    assert loads_morphology(dumps_morphology(m)) == m


def test_text_parse_error_line():
    text = "line L\nnode a Na\nnode b Bogus\n"
    with pytest.raises(ConfigParseError) as err:
        loads_morphology(text)
    assert err.value.line == 3
