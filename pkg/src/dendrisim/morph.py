"""Compile abstract multi-compartment morphologies onto the compartment grid.

A morphology is a set of compartment nodes (each with one spike mechanism),
a set of named somatic lines, and two kinds of edges:

* ``soma_line`` edges attach a node to a line through a conductance ``g``
  (or through a bypass short when ``g`` is ``None``),
* ``direct_merge`` edges short two node membranes together (a closed
  neighbour or vertical switch on the chip).

:func:`compile_morphology` searches placements leftmost-first with
backtracking, so :class:`Infeasible` is only raised after the search space is
exhausted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
from networkx.algorithms import isomorphism as iso

from .chip import (PARAM_NAMES, SOMA_SEGMENT_PERIOD, AnalogParams, Block, ChipConfig,
                   CircuitGraph, CompartmentId, Mode, default_params, derive_network)
from .configio import ConfigParseError


class Infeasible(Exception):
    """No legal placement exists for the morphology on the given chip."""


class EdgeKind(str, enum.Enum):
    SOMA_LINE = "soma_line"
    DIRECT_MERGE = "direct_merge"


@dataclass
class MorphNode:
    label: str
    spike_type: Mode
    fan_in: int = 0
    params: AnalogParams | None = None
    output: bool = False
    exp_term: bool = False

    def resolved_params(self) -> AnalogParams:
        return self.params if self.params is not None else default_params(self.spike_type)


@dataclass
class MorphEdge:
    a: str
    b: str
    kind: EdgeKind
    g: float | None = None  # None on a soma_line edge means bypass


@dataclass
class MorphologyGraph:
    nodes: list[MorphNode] = field(default_factory=list)
    edges: list[MorphEdge] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)

    def node(self, label: str) -> MorphNode:
        for n in self.nodes:
            if n.label == label:
                return n
        raise KeyError(label)

    def attachments(self, line: str) -> list[MorphEdge]:
        return [e for e in self.edges if e.kind is EdgeKind.SOMA_LINE and e.b == line]

    def merges(self) -> list[MorphEdge]:
        return [e for e in self.edges if e.kind is EdgeKind.DIRECT_MERGE]

    def validate(self) -> list[str]:
        out = []
        labels = [n.label for n in self.nodes]
        names = set(labels)
        if len(names) != len(labels):
            out.append("duplicate node labels")
        if len(set(self.lines)) != len(self.lines):
            out.append("duplicate line names")
        if names & set(self.lines):
            out.append(f"names used for both nodes and lines: {sorted(names & set(self.lines))}")
        if not self.nodes:
            out.append("morphology has no nodes")
        for n in self.nodes:
            if n.spike_type is Mode.DISABLED:
                out.append(f"node {n.label}: spike type must be Na, Ca, NMDA or Passive")
            if n.fan_in < 0:
                out.append(f"node {n.label}: negative fan-in demand")
        if sum(n.output for n in self.nodes) > 1:
            out.append("more than one output node")
        per_node = {label: 0 for label in labels}
        for e in self.edges:
            if e.kind is EdgeKind.SOMA_LINE:
                if e.a not in names or e.b not in self.lines:
                    out.append(f"soma_line edge {e.a}-{e.b}: must join a node to a declared line")
                    continue
                per_node[e.a] += 1
                if e.g is not None and e.g < 0:
                    out.append(f"soma_line edge {e.a}-{e.b}: negative conductance")
            else:
                if e.a not in names or e.b not in names or e.a == e.b:
                    out.append(f"direct_merge edge {e.a}-{e.b}: must join two distinct nodes")
        for label, count in per_node.items():
            if count > 1:
                out.append(f"node {label}: attached to {count} somatic lines (at most one)")
        for line in self.lines:
            att = self.attachments(line)
            if not att:
                out.append(f"line {line}: no attachments")
            if sum(e.g is None for e in att) > 1:
                out.append(f"line {line}: more than one bypass")
        if self.nodes and not out:
            g = nx.MultiGraph()
            g.add_nodes_from(labels)
            g.add_nodes_from(self.lines)
            g.add_edges_from((e.a, e.b) for e in self.edges)
            if not nx.is_connected(g):
                out.append("morphology graph is not connected")
        return out


@dataclass(frozen=True)
class ChipDims:
    n_columns: int = 4
    n_rows: int = 8
    reserved: frozenset = frozenset()
    reserved_segments: frozenset = frozenset()


@dataclass
class Placement:
    assignment: dict[str, CompartmentId]
    line_spans: dict[str, tuple[Block, int, int]]
    config: ChipConfig


def _segment(col: int) -> int:
    return col // SOMA_SEGMENT_PERIOD


class _Search:
    def __init__(self, m: MorphologyGraph, dims: ChipDims):
        self.m = m
        self.dims = dims
        self.slots = [CompartmentId(b, c) for c in range(dims.n_columns) for b in Block
                      if CompartmentId(b, c) not in dims.reserved]
        self.line_of = {e.a: e.b for e in m.edges if e.kind is EdgeKind.SOMA_LINE}
        self.merge_nbrs: dict[str, list[str]] = {n.label: [] for n in m.nodes}
        for e in m.merges():
            self.merge_nbrs[e.a].append(e.b)
            self.merge_nbrs[e.b].append(e.a)
        self.order = self._order()
        self.assign: dict[str, CompartmentId] = {}
        self.used: set[CompartmentId] = set()

    def _order(self) -> list[str]:
        g = nx.Graph()
        g.add_nodes_from(n.label for n in self.m.nodes)
        g.add_nodes_from(self.m.lines)
        g.add_edges_from((e.a, e.b) for e in self.m.edges)
        node_set = {n.label for n in self.m.nodes}
        order = []
        for comp in nx.connected_components(g):
            start = next(n.label for n in self.m.nodes if n.label in comp)
            order += [v for v in nx.bfs_tree(g, start, sort_neighbors=sorted) if v in node_set]
        return order

    def _line_span(self, line: str, extra: tuple[str, CompartmentId] | None = None):
        cols, blocks = [], set()
        for e in self.m.attachments(line):
            cid = self.assign.get(e.a)
            if extra and e.a == extra[0]:
                cid = extra[1]
            if cid is not None:
                cols.append(cid.column)
                blocks.add(cid.block)
        if not cols:
            return None
        if len(blocks) > 1:
            return False
        return (blocks.pop(), _segment(min(cols)), _segment(max(cols)))

    def _ok(self, label: str, cid: CompartmentId) -> bool:
        for other in self.merge_nbrs[label]:
            oc = self.assign.get(other)
            if oc is None:
                continue
            horizontal = (oc.block == cid.block and abs(oc.column - cid.column) == 1
                          and _segment(oc.column) == _segment(cid.column))
            vertical = oc.column == cid.column and oc.block != cid.block
            if not (horizontal or vertical):
                return False
        line = self.line_of.get(label)
        if line is None:
            return True
        span = self._line_span(line, (label, cid))
        if span is False:
            return False
        block, lo, hi = span
        if any((block, s) in self.dims.reserved_segments for s in range(lo, hi + 1)):
            return False
        for other_line in self.m.lines:
            if other_line == line:
                continue
            o = self._line_span(other_line)
            if o and o[0] == block and not (o[2] < lo or hi < o[1]):
                return False
        return True

    def run(self) -> dict[str, CompartmentId] | None:
        return self._place(0)

    def _place(self, i: int):
        if i == len(self.order):
            return dict(self.assign)
        label = self.order[i]
        for cid in self.slots:
            if cid in self.used or not self._ok(label, cid):
                continue
            self.assign[label] = cid
            self.used.add(cid)
            found = self._place(i + 1)
            if found is not None:
                return found
            del self.assign[label]
            self.used.discard(cid)
        return None


def compile_morphology(m: MorphologyGraph, dims: ChipDims | None = None,
                       current_input: str | None = None) -> Placement:
    """Place ``m`` on the chip; raises :class:`Infeasible` when no placement exists.

    ``current_input`` names the node wired to the external current line
    (default: the output node, if any).
    """
    dims = dims or ChipDims()
    problems = m.validate()
    if problems:
        raise ValueError("invalid morphology: " + "; ".join(problems))
    free = 2 * dims.n_columns - len(dims.reserved)
    if len(m.nodes) > free:
        raise Infeasible(f"not enough columns: {len(m.nodes)} nodes, {free} free compartments")
    for n in m.nodes:
        if n.fan_in > dims.n_rows:
            raise Infeasible(f"node {n.label}: fan-in demand {n.fan_in} exceeds the "
                             f"{dims.n_rows} synapse rows of a column")
    for line in m.lines:
        k = len(m.attachments(line))
        if k > dims.n_columns:
            raise Infeasible(f"line {line}: {k} attachments exceed the {dims.n_columns} "
                             "columns of a block")

    search = _Search(m, dims)
    assign = search.run()
    if assign is None:
        raise Infeasible("no legal placement: somatic-line spans or merge adjacency cannot "
                         "be satisfied on this chip")
    spans = {line: _final_span(m, line, assign) for line in m.lines}
    cfg = _emit_config(m, dims, assign, spans, current_input)
    return Placement(assign, spans, cfg)


def _final_span(m: MorphologyGraph, line: str, assign: dict[str, CompartmentId]):
    cids = [assign[e.a] for e in m.attachments(line)]
    cols = [c.column for c in cids]
    return (cids[0].block, _segment(min(cols)), _segment(max(cols)))


def _emit_config(m: MorphologyGraph, dims: ChipDims, assign: dict[str, CompartmentId],
                 spans: dict[str, tuple[Block, int, int]], current_input: str | None) -> ChipConfig:
    cfg = ChipConfig.empty(dims.n_columns, dims.n_rows)
    if current_input is None:
        current_input = next((n.label for n in m.nodes if n.output), None)
    for n in m.nodes:
        comp = cfg.compartments[assign[n.label]]
        comp.mode = n.spike_type
        comp.params = n.resolved_params()
        comp.exp_term_enabled = n.exp_term
        comp.current_input_enabled = n.label == current_input
    for e in m.edges:
        if e.kind is EdgeKind.SOMA_LINE:
            comp = cfg.compartments[assign[e.a]]
            comp.soma_connect = True
            if e.g is None:
                comp.soma_bypass = True
            else:
                comp.params = comp.params.replace(g_ic=e.g)
        else:
            a, b = sorted((assign[e.a], assign[e.b]), key=lambda c: (c.column, c.block))
            if a.block == b.block:
                cfg.compartments[a].switch_merge_right = True
            else:
                cfg.compartments[CompartmentId(Block.UPPER, a.column)].switch_merge_vertical = True
                cfg.compartments[CompartmentId(Block.LOWER, a.column)].switch_merge_vertical = True
    for block, lo, hi in spans.values():
        for k in range(lo, hi):
            cfg.soma_segment_switches[block][k] = True
    return cfg


def morphology_multigraph(m: MorphologyGraph) -> nx.MultiGraph:
    """Membrane-node level view of ``m``: merged groups, lines, conductance edges."""
    uf = nx.utils.UnionFind(n.label for n in m.nodes)
    for e in m.merges():
        uf.union(e.a, e.b)
    g = nx.MultiGraph()
    groups: dict[str, list[str]] = {}
    for n in m.nodes:
        groups.setdefault(uf[n.label], []).append(n.label)
    for root, members in groups.items():
        modes = tuple(sorted(m.node(x).spike_type.value for x in members))
        g.add_node(("node", root), label=modes)
    for line in m.lines:
        g.add_node(("line", line), label="line")
    for e in m.edges:
        if e.kind is EdgeKind.SOMA_LINE:
            g.add_edge(("node", uf[e.a]), ("line", e.b), g=e.g)
    return g


def network_multigraph(graph: CircuitGraph, cfg: ChipConfig) -> nx.MultiGraph:
    """Same view as :func:`morphology_multigraph`, derived from a chip network."""
    g = nx.MultiGraph()
    for i, node in enumerate(graph.membrane_nodes):
        modes = [cfg.compartments[c].mode for c in node.members]
        if all(md is Mode.DISABLED for md in modes):
            continue
        g.add_node(("node", i), label=tuple(sorted(md.value for md in modes)))
    for s, seg in enumerate(graph.soma_segments):
        if not seg.attachments:
            continue
        g.add_node(("line", s), label="line")
        for a in seg.attachments:
            g.add_edge(("node", a.node), ("line", s), g=None if a.bypass else a.g_ic)
    return g


def equivalent(m: MorphologyGraph, cfg: ChipConfig) -> bool:
    """True when the chip's derived network is isomorphic to ``m``."""
    return nx.is_isomorphic(morphology_multigraph(m), network_multigraph(derive_network(cfg), cfg),
                            node_match=iso.categorical_node_match("label", None),
                            edge_match=iso.categorical_multiedge_match("g", None))


# -- presets ------------------------------------------------------------------

PYRAMIDAL_G = {"tuft": 0.15e-6, "ca_apical": 0.15e-6, "ca_soma": 0.2e-6, "basal": 0.15e-6}


def preset_pyramidal(n_tuft: int, n_basal: int, apical_branches: int = 1,
                     ca_mechanisms: int = 2, conductances: dict[str, float] | None = None,
                     params: dict[str, AnalogParams] | None = None) -> MorphologyGraph:
    """Layer-5-like pyramidal neuron: NMDA tuft, Ca junction pair, Na soma, NMDA basal.

    The tuft converges on an ``apical`` line that reaches the upper Ca
    compartment; the lower Ca compartment and the basal dendrites hang off the
    ``soma_line``, which the Na compartment bypasses.  ``ca_mechanisms=1``
    leaves the lower Ca compartment passive.
    """
    if n_tuft < 1 or n_basal < 1:
        raise ValueError("need at least one tuft and one basal dendrite")
    if apical_branches != 1:
        raise ValueError("branched apical dendrites are not covered by this preset; "
                         "build the MorphologyGraph by hand")
    if ca_mechanisms not in (1, 2):
        raise ValueError("ca_mechanisms must be 1 or 2")
    g = dict(PYRAMIDAL_G, **(conductances or {}))
    params = params or {}
    line = EdgeKind.SOMA_LINE
    ca_basal_mode = Mode.CA if ca_mechanisms == 2 else Mode.PASSIVE

    nodes = [MorphNode(f"tuft{i}", Mode.NMDA, params=params.get("tuft")) for i in range(n_tuft)]
    nodes.append(MorphNode("ca_apical", Mode.CA, params=params.get("ca_apical")))
    nodes.append(MorphNode("ca_basal", ca_basal_mode, params=params.get("ca_basal")))
    nodes.append(MorphNode("soma", Mode.NA, params=params.get("soma"), output=True, exp_term=True))
    nodes += [MorphNode(f"basal{i}", Mode.NMDA, params=params.get("basal")) for i in range(n_basal)]
    edges = [MorphEdge(f"tuft{i}", "apical", line, g["tuft"]) for i in range(n_tuft)]
    edges.append(MorphEdge("ca_apical", "apical", line, g["ca_apical"]))
    edges.append(MorphEdge("ca_apical", "ca_basal", EdgeKind.DIRECT_MERGE))
    edges.append(MorphEdge("ca_basal", "soma_line", line, g["ca_soma"]))
    edges.append(MorphEdge("soma", "soma_line", line, None))
    edges += [MorphEdge(f"basal{i}", "soma_line", line, g["basal"]) for i in range(n_basal)]
    return MorphologyGraph(nodes, edges, ["apical", "soma_line"])


def preset_point_neuron(spike_type: Mode = Mode.NA) -> MorphologyGraph:
    return MorphologyGraph([MorphNode("soma", Mode(spike_type), output=True)], [], [])


# -- text format ----------------------------------------------------------------

def dumps_morphology(m: MorphologyGraph) -> str:
    out = ["# dendrisim morphology"]
    out += [f"line {name}" for name in m.lines]
    for n in m.nodes:
        toks = [f"node {n.label} {n.spike_type.value}"]
        if n.fan_in:
            toks.append(f"fan_in={n.fan_in}")
        if n.output:
            toks.append("output")
        if n.exp_term:
            toks.append("exp_term")
        if n.params is not None:
            toks += [f"{k}={getattr(n.params, k)!r}" for k in PARAM_NAMES]
        out.append(" ".join(toks))
    for e in m.edges:
        if e.kind is EdgeKind.SOMA_LINE:
            out.append(f"edge {e.a} {e.b} soma_line " + ("bypass" if e.g is None else f"g={e.g!r}"))
        else:
            out.append(f"edge {e.a} {e.b} direct_merge")
    return "\n".join(out) + "\n"


def loads_morphology(text: str, source: str | None = None) -> MorphologyGraph:
    m = MorphologyGraph()
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        try:
            kind = toks[0]
            if kind == "line" and len(toks) == 2:
                m.lines.append(toks[1])
            elif kind == "node" and len(toks) >= 3:
                node = MorphNode(toks[1], Mode(toks[2]))
                overrides = {}
                for tok in toks[3:]:
                    if tok == "output":
                        node.output = True
                    elif tok == "exp_term":
                        node.exp_term = True
                    elif tok.startswith("fan_in="):
                        node.fan_in = int(tok.split("=", 1)[1])
                    elif "=" in tok:
                        key, value = tok.split("=", 1)
                        if key not in PARAM_NAMES:
                            raise ValueError(f"unknown parameter {key!r}")
                        overrides[key] = float(value)
                    else:
                        raise ValueError(f"unexpected token {tok!r}")
                if overrides:
                    node.params = default_params(node.spike_type).replace(**overrides)
                m.nodes.append(node)
            elif kind == "edge" and len(toks) in (4, 5):
                ekind = EdgeKind(toks[3])
                g = None
                if ekind is EdgeKind.SOMA_LINE:
                    if len(toks) != 5:
                        raise ValueError("soma_line edge needs g=<siemens> or bypass")
                    if toks[4] != "bypass":
                        if not toks[4].startswith("g="):
                            raise ValueError("soma_line edge needs g=<siemens> or bypass")
                        g = float(toks[4][2:])
                m.edges.append(MorphEdge(toks[1], toks[2], ekind, g))
            else:
                raise ValueError(f"cannot parse {raw.strip()!r}")
        except (ValueError, KeyError) as exc:
            raise ConfigParseError(str(exc), lineno, source) from None
    return m


def load_morphology(path: str | Path) -> MorphologyGraph:
    path = Path(path)
    return loads_morphology(path.read_text(), source=str(path))
