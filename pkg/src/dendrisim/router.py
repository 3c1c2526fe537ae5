"""Pre-synaptic event delivery over the shared row buses, and spike routing."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

from .chip import MAX_ADDRESS, Block, ChipConfig, CompartmentId, Line, Mode
from .configio import ConfigParseError

DEFAULT_BUS_RATE = 125e6


class PresynEvent(NamedTuple):
    time: float
    block: Block
    row_group: int
    address: int

    def sort_key(self, dt: float | None = None):
        t = round(self.time / dt) if dt else self.time
        return (t, int(self.block), self.row_group, self.address)


class Injection(NamedTuple):
    block: Block
    column: int
    line: Line
    weight: int


class Target(NamedTuple):
    block: Block
    row_group: int
    address: int


class SpikeRecord(NamedTuple):
    time: float
    compartment: CompartmentId
    spike_type: Mode


@dataclass
class RoutingTable:
    routes: dict[tuple[CompartmentId, Mode], list[Target]] = field(default_factory=dict)

    def add(self, source: CompartmentId, spike_type: Mode | str, *targets: Target) -> None:
        key = (CompartmentId(Block(source[0]), source[1]), Mode(spike_type))
        self.routes.setdefault(key, []).extend(Target(Block(t[0]), t[1], t[2]) for t in targets)

    def targets(self, source: CompartmentId, spike_type: Mode) -> list[Target]:
        return self.routes.get((source, spike_type), [])

    def validate(self, chip: ChipConfig) -> list[str]:
        out = []
        groups = {(int(r.block), r.row_group) for r in chip.rows}
        for (src, kind), targets in self.routes.items():
            for t in targets:
                if (int(t.block), t.row_group) not in groups:
                    out.append(f"route {src}/{kind.value}: no row group {t.row_group} "
                               f"in block {Block(t.block).name.lower()}")
                if not 0 <= t.address <= MAX_ADDRESS:
                    out.append(f"route {src}/{kind.value}: address {t.address} exceeds 6 bits")
        return out


@dataclass
class BusModel:
    """Per-bus rate limit; excess events are dropped and counted."""

    max_rate: float = DEFAULT_BUS_RATE
    enforce: bool = False
    dropped: int = 0
    _last: dict[tuple[int, int], float] = field(default_factory=dict, repr=False)

    def admit(self, event: PresynEvent) -> bool:
        if not self.enforce:
            return True
        key = (int(event.block), event.row_group)
        last = self._last.get(key)
        # relative slack absorbs float noise on exact-rate streams
        if last is not None and event.time - last < (1.0 / self.max_rate) * (1 - 1e-9):
            self.dropped += 1
            return False
        self._last[key] = event.time
        return True


PreHook = Callable[[int, int, int, float], None]


class RowIndex:
    """Row lookup by ``(block, row_group)`` for a chip."""

    def __init__(self, chip: ChipConfig):
        self.groups: dict[tuple[int, int], list] = {}
        for row in sorted(chip.rows, key=lambda r: (int(r.block), r.row_index)):
            self.groups.setdefault((int(row.block), row.row_group), []).append(row)

    def rows(self, block: int, row_group: int) -> list:
        return self.groups.get((int(block), row_group), [])


def deliver(events: Iterable[PresynEvent], chip: ChipConfig, t: float | None = None,
            on_pre: PreHook | None = None, bus: BusModel | None = None,
            index: RowIndex | None = None) -> list[Injection]:
    """Match each event against the stored addresses of its row group.

    Every matching synapse contributes one injection with its weight (zero
    weights are skipped); ``on_pre(block, row_index, column, time)`` fires for
    every match regardless of weight.
    """
    index = index or RowIndex(chip)
    out = []
    for ev in events:
        if bus is not None and not bus.admit(ev):
            continue
        when = ev.time if t is None else t
        for row in index.rows(ev.block, ev.row_group):
            for col, cell in enumerate(row.cells):
                if cell.address != ev.address:
                    continue
                if on_pre is not None:
                    on_pre(int(row.block), row.row_index, col, when)
                if cell.weight > 0:
                    out.append(Injection(row.block, col, row.target_line, cell.weight))
    return out


def route_spike(spike: SpikeRecord, table: RoutingTable, delay: float) -> list[PresynEvent]:
    return [PresynEvent(spike.time + delay, t.block, t.row_group, t.address)
            for t in table.targets(spike.compartment, spike.spike_type)]


def read_stimulus(path: str | Path) -> list[PresynEvent]:
    """Read ``time_us block row_group address`` records (``#`` comments allowed)."""
    events = []
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.replace(",", " ").split()
        try:
            if len(parts) != 4:
                raise ValueError("expected 4 fields: time_us block row_group address")
            ev = PresynEvent(float(parts[0]) * 1e-6, Block.parse(parts[1]),
                             int(parts[2]), int(parts[3]))
            if not 0 <= ev.address <= MAX_ADDRESS:
                raise ValueError(f"address {ev.address} exceeds 6 bits")
        except ValueError as exc:
            raise ConfigParseError(str(exc), lineno, str(path)) from None
        events.append(ev)
    return sorted(events, key=lambda e: e.sort_key())


def write_stimulus(events: Iterable[PresynEvent], path: str | Path) -> None:
    lines = ["# time_us block row_group address"]
    for ev in sorted(events, key=lambda e: e.sort_key()):
        lines.append(f"{ev.time * 1e6!r} {Block(ev.block).name.lower()} {ev.row_group} {ev.address}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_routing(path: str | Path) -> RoutingTable:
    """Read ``compartment type block:row_group:address ...`` records."""
    table = RoutingTable()
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        try:
            if len(parts) < 2:
                raise ValueError("expected: compartment type targets...")
            src = CompartmentId.parse(parts[0])
            kind = Mode(parts[1])
            targets = []
            for tok in parts[2:]:
                b, g, a = tok.split(":")
                targets.append(Target(Block.parse(b), int(g), int(a)))
        except ValueError as exc:
            raise ConfigParseError(str(exc), lineno, str(path)) from None
        table.add(src, kind, *targets)
    return table


def write_routing(table: RoutingTable, path: str | Path) -> None:
    lines = ["# compartment type block:row_group:address ..."]
    for (src, kind), targets in table.routes.items():
        toks = " ".join(f"{Block(t.block).name.lower()}:{t.row_group}:{t.address}" for t in targets)
        lines.append(f"{src} {kind.value} {toks}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n")
