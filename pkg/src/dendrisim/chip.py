"""Static chip configuration and the electrical network implied by its switches.

A chip has two synapse blocks (upper and lower), each with ``n_columns``
neuron compartments.  Every compartment owns one column of synapses in its
block, an ion-channel circuit and a set of switches:

* ``switch_merge_right`` shorts its membrane to the right-hand neighbour,
* ``switch_merge_vertical`` shorts it to the compartment in the same column of
  the other block (the flag must agree on both ends),
* ``soma_connect`` / ``soma_bypass`` attach it to the capacitance-free somatic
  line of its block through ``g_ic`` or through a zero-resistance bypass.

The somatic line of each block is split by segment switches placed every
``SOMA_SEGMENT_PERIOD`` columns.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields
from typing import Iterator, NamedTuple

SOMA_SEGMENT_PERIOD = 4
ADDRESS_BITS = 6
WEIGHT_BITS = 6
MAX_ADDRESS = (1 << ADDRESS_BITS) - 1
MAX_WEIGHT = (1 << WEIGHT_BITS) - 1
MAX_ANALOG_PARAMS = 24


class Block(enum.IntEnum):
    UPPER = 0
    LOWER = 1

    @property
    def label(self) -> str:
        return "U" if self is Block.UPPER else "L"

    @classmethod
    def parse(cls, text: str | int | Block) -> Block:
        if isinstance(text, Block):
            return text
        if isinstance(text, int):
            return cls(text)
        key = text.strip().lower()
        if key in ("u", "upper", "0"):
            return cls.UPPER
        if key in ("l", "lower", "1"):
            return cls.LOWER
        raise ValueError(f"unknown block {text!r}")


class Mode(str, enum.Enum):
    PASSIVE = "Passive"
    NA = "Na"
    CA = "Ca"
    NMDA = "NMDA"
    DISABLED = "Disabled"

    @property
    def spiking(self) -> bool:
        return self in (Mode.NA, Mode.CA, Mode.NMDA)


class Line(str, enum.Enum):
    A = "A"
    B = "B"


class CompartmentId(NamedTuple):
    block: Block
    column: int

    def __str__(self) -> str:
        return f"{Block(self.block).label}{self.column}"

    @classmethod
    def parse(cls, text: str) -> CompartmentId:
        text = text.strip()
        return cls(Block.parse(text[0]), int(text[1:]))


@dataclass
class AnalogParams:
    """Per-compartment analog parameters in hardware units (SI)."""

    V_leak: float = 0.6
    g_leak: float = 0.2e-6
    V_alt: float = 0.6
    g_alt: float = 0.0
    V_th: float = 1.2
    T_pulse: float = 2e-6
    C_mem: float = 2e-12
    E_rev_A: float = 1.2
    E_rev_B: float = 0.3
    tau_syn_A: float = 2e-6
    tau_syn_B: float = 2e-6
    g_syn_scale_A: float = 1e-6
    g_syn_scale_B: float = 1e-6
    I_unit: float = 0.1e-6
    V_exp_th: float = 0.8
    Delta_T: float = 0.02
    g_ic: float = 0.0

    def replace(self, **changes: float) -> AnalogParams:
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        unknown = set(changes) - set(data)
        if unknown:
            raise KeyError(f"unknown analog parameter(s): {sorted(unknown)}")
        data.update({k: float(v) for k, v in changes.items()})
        return AnalogParams(**data)


PARAM_NAMES = tuple(f.name for f in fields(AnalogParams))
_NONNEGATIVE = ("g_leak", "g_alt", "T_pulse", "C_mem", "tau_syn_A", "tau_syn_B",
                "g_syn_scale_A", "g_syn_scale_B", "I_unit", "g_ic")


def default_params(mode: Mode | str) -> AnalogParams:
    """Reasonable hardware-time parameters for each spike mechanism."""
    mode = Mode(mode)
    base = AnalogParams()
    if mode is Mode.NA:
        return base.replace(V_th=0.85, V_alt=0.5, g_alt=20e-6, T_pulse=2e-6)
    if mode is Mode.NMDA:
        return base.replace(V_th=0.75, V_alt=1.0, g_alt=2e-6, T_pulse=30e-6)
    if mode is Mode.CA:
        return base.replace(V_th=0.8, V_alt=1.05, g_alt=2e-6, T_pulse=10e-6)
    return base


@dataclass
class CompartmentConfig:
    mode: Mode = Mode.DISABLED
    params: AnalogParams = field(default_factory=AnalogParams)
    exp_term_enabled: bool = False
    switch_merge_right: bool = False
    switch_merge_vertical: bool = False
    soma_connect: bool = False
    soma_bypass: bool = False
    current_input_enabled: bool = False


@dataclass
class CorrelationState:
    """Per-synapse correlation sensor (nearest-neighbour, exponentially weighted)."""

    c_causal: float = 0.0
    c_acausal: float = 0.0
    last_pre: float | None = None
    last_post: float | None = None
    A_plus: float = 1.0
    A_minus: float = 1.0
    tau_plus: float = 2e-6
    tau_minus: float = 2e-6


@dataclass
class SynapseCell:
    address: int = 0
    weight: int = 0
    corr: CorrelationState = field(default_factory=CorrelationState, compare=False, repr=False)


@dataclass
class SynapseRow:
    block: Block
    row_index: int
    target_line: Line = Line.A
    cells: list[SynapseCell] = field(default_factory=list)

    @property
    def row_group(self) -> int:
        return self.row_index // 2


@dataclass
class ChipConfig:
    n_columns: int = 4
    compartments: dict[CompartmentId, CompartmentConfig] = field(default_factory=dict)
    rows: list[SynapseRow] = field(default_factory=list)
    soma_segment_switches: dict[Block, list[bool]] = field(default_factory=dict)

    @classmethod
    def empty(cls, n_columns: int = 4, n_rows: int = 8) -> ChipConfig:
        """All compartments disabled, all switches open, zero-weight synapses."""
        comps = {CompartmentId(b, c): CompartmentConfig()
                 for b in Block for c in range(n_columns)}
        rows = [SynapseRow(b, r, Line.A, [SynapseCell() for _ in range(n_columns)])
                for b in Block for r in range(n_rows)]
        switches = {b: [False] * n_segment_switches(n_columns) for b in Block}
        return cls(n_columns, comps, rows, switches)

    def compartment(self, cid: CompartmentId | str) -> CompartmentConfig:
        if isinstance(cid, str):
            cid = CompartmentId.parse(cid)
        return self.compartments[CompartmentId(Block(cid[0]), cid[1])]

    def compartment_ids(self) -> list[CompartmentId]:
        return [CompartmentId(b, c) for b in Block for c in range(self.n_columns)]

    def block_rows(self, block: Block) -> list[SynapseRow]:
        return [r for r in self.rows if r.block == block]

    def row(self, block: Block, row_index: int) -> SynapseRow:
        for r in self.rows:
            if r.block == block and r.row_index == row_index:
                return r
        raise KeyError(f"no row {row_index} in block {Block(block).name}")

    def iter_cells(self) -> Iterator[tuple[SynapseRow, int, SynapseCell]]:
        for r in self.rows:
            for col, cell in enumerate(r.cells):
                yield r, col, cell


def n_segment_switches(n_columns: int) -> int:
    return max(0, (n_columns - 1) // SOMA_SEGMENT_PERIOD)


def validate_config(cfg: ChipConfig) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out: list[str] = []
    n = cfg.n_columns
    if n < 1:
        out.append(f"n_columns: must be >= 1 (got {n})")
    expected = set(cfg.compartment_ids())
    present = set(cfg.compartments)
    for cid in sorted(expected - present):
        out.append(f"compartments[{cid}]: missing")
    for cid in sorted(present - expected):
        out.append(f"compartments[{cid}]: outside the {n}-column grid")

    n_current = 0
    for cid in sorted(present & expected):
        comp = cfg.compartments[cid]
        where = f"compartments[{cid}]"
        p = comp.params
        for name in _NONNEGATIVE:
            if getattr(p, name) < 0:
                out.append(f"{where}.params.{name}: must be >= 0")
        if not p.C_mem > 0:
            out.append(f"{where}.params.C_mem: must be > 0")
        if comp.exp_term_enabled and not p.Delta_T > 0:
            out.append(f"{where}.params.Delta_T: must be > 0 when exponential term enabled")
        if len(PARAM_NAMES) > MAX_ANALOG_PARAMS:
            out.append(f"{where}.params: more than {MAX_ANALOG_PARAMS} analog parameters")
        if comp.soma_bypass and not comp.soma_connect:
            out.append(f"{where}.soma_bypass: requires soma_connect")
        if comp.switch_merge_right and cid.column == n - 1:
            out.append(f"{where}.switch_merge_right: no right neighbour")
        other = CompartmentId(Block(1 - cid.block), cid.column)
        if other in cfg.compartments and cid.block == Block.UPPER:
            if comp.switch_merge_vertical != cfg.compartments[other].switch_merge_vertical:
                out.append(f"{where}.switch_merge_vertical: disagrees with {other}")
        if comp.current_input_enabled:
            n_current += 1
    if n_current > 1:
        out.append(f"current_input_enabled: set on {n_current} compartments, at most one allowed")

    for b in Block:
        sw = cfg.soma_segment_switches.get(b)
        if sw is None or len(sw) != n_segment_switches(n):
            out.append(f"soma_segment_switches[{b.name.lower()}]: expected "
                       f"{n_segment_switches(n)} flags (one every {SOMA_SEGMENT_PERIOD} columns)")

    seen: set[tuple[int, int]] = set()
    for row in cfg.rows:
        where = f"rows[{Block(row.block).name.lower()}:{row.row_index}]"
        key = (int(row.block), row.row_index)
        if key in seen:
            out.append(f"{where}: duplicate row")
        seen.add(key)
        if row.row_index < 0:
            out.append(f"{where}.row_index: must be >= 0")
        if len(row.cells) != n:
            out.append(f"{where}.cells: expected {n} cells, got {len(row.cells)}")
        for col, cell in enumerate(row.cells):
            if not 0 <= cell.address <= MAX_ADDRESS:
                out.append(f"{where}.cells[{col}].address: address exceeds 6 bits")
            if not 0 <= cell.weight <= MAX_WEIGHT:
                out.append(f"{where}.cells[{col}].weight: weight exceeds 6 bits")
    return out


@dataclass(frozen=True)
class MembraneNode:
    members: tuple[CompartmentId, ...]
    capacitance: float


@dataclass(frozen=True)
class Attachment:
    compartment: CompartmentId
    node: int
    g_ic: float
    bypass: bool


@dataclass(frozen=True)
class SomaSegment:
    block: Block
    columns: tuple[int, ...]
    attachments: tuple[Attachment, ...]

    @property
    def bypass_nodes(self) -> tuple[int, ...]:
        return tuple(sorted({a.node for a in self.attachments if a.bypass}))


@dataclass(frozen=True)
class CircuitGraph:
    membrane_nodes: tuple[MembraneNode, ...]
    soma_segments: tuple[SomaSegment, ...]
    node_of: dict[CompartmentId, int]

    @property
    def edges(self) -> list[tuple[int, int, float | None]]:
        """Conductance links as ``(node, segment, g_ic)``; ``None`` marks a bypass."""
        return [(a.node, s, None if a.bypass else a.g_ic)
                for s, seg in enumerate(self.soma_segments) for a in seg.attachments]

    def segment_of(self, cid: CompartmentId) -> int:
        for s, seg in enumerate(self.soma_segments):
            if cid.block == seg.block and cid.column in seg.columns:
                return s
        raise KeyError(cid)


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller id wins so the result does not depend on union order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def merge_pairs(cfg: ChipConfig) -> list[tuple[CompartmentId, CompartmentId]]:
    pairs = []
    for cid in cfg.compartment_ids():
        comp = cfg.compartments[cid]
        if comp.switch_merge_right and cid.column + 1 < cfg.n_columns:
            pairs.append((cid, CompartmentId(cid.block, cid.column + 1)))
        if cid.block == Block.UPPER and comp.switch_merge_vertical:
            pairs.append((cid, CompartmentId(Block.LOWER, cid.column)))
    return pairs


def derive_network(cfg: ChipConfig) -> CircuitGraph:
    """Build the merged membrane nodes and somatic-line segments of ``cfg``."""
    ids = cfg.compartment_ids()
    ds = _DisjointSet(ids)
    for a, b in merge_pairs(cfg):
        ds.union(a, b)

    groups: dict[CompartmentId, list[CompartmentId]] = {}
    for cid in ids:
        groups.setdefault(ds.find(cid), []).append(cid)
    ordered = sorted((tuple(sorted(m)) for m in groups.values()), key=lambda m: m[0])
    nodes = tuple(MembraneNode(m, sum(cfg.compartments[c].params.C_mem for c in m))
                  for m in ordered)
    node_of = {c: i for i, node in enumerate(nodes) for c in node.members}

    segments = []
    for b in Block:
        switches = cfg.soma_segment_switches.get(b, [])
        spans: list[list[int]] = [[]]
        for col in range(cfg.n_columns):
            if col > 0 and col % SOMA_SEGMENT_PERIOD == 0:
                k = col // SOMA_SEGMENT_PERIOD - 1
                if not (k < len(switches) and switches[k]):
                    spans.append([])
            spans[-1].append(col)
        for span in spans:
            atts = []
            for col in span:
                cid = CompartmentId(b, col)
                comp = cfg.compartments[cid]
                if comp.soma_connect:
                    atts.append(Attachment(cid, node_of[cid], comp.params.g_ic, comp.soma_bypass))
            segments.append(SomaSegment(b, tuple(span), tuple(atts)))
    return CircuitGraph(nodes, tuple(segments), node_of)
