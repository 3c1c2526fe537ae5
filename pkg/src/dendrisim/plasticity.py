"""Correlation sensors and synchronous plasticity kernels.

The sensors live in every synapse and are updated by the engine; kernels run
between engine steps, read a :class:`KernelView` (with read-reset semantics for
the accumulators) and return a :class:`WriteBack` that is applied to the chip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .chip import (MAX_ADDRESS, MAX_WEIGHT, PARAM_NAMES, Block, ChipConfig, CompartmentId,
                   CorrelationState)


def on_pre(corr: CorrelationState, t: float) -> None:
    if corr.last_post is not None:
        corr.c_acausal += corr.A_minus * math.exp(-(t - corr.last_post) / corr.tau_minus)
        corr.last_post = None
    corr.last_pre = t


def on_post(corr: CorrelationState, t: float) -> None:
    if corr.last_pre is not None:
        corr.c_causal += corr.A_plus * math.exp(-(t - corr.last_pre) / corr.tau_plus)
        corr.last_pre = None
    corr.last_post = t


@dataclass
class SensorParams:
    A_plus: float = 1.0
    A_minus: float = 1.0
    tau_plus: float = 2e-6
    tau_minus: float = 2e-6


def configure_sensors(chip: ChipConfig, params: SensorParams) -> None:
    for _, _, cell in chip.iter_cells():
        cell.corr.A_plus = params.A_plus
        cell.corr.A_minus = params.A_minus
        cell.corr.tau_plus = params.tau_plus
        cell.corr.tau_minus = params.tau_minus


RowKey = tuple[Block, int]


@dataclass
class KernelView:
    """Snapshot of a set of synapse rows; arrays are indexed ``[row, column]``."""

    rows: list[RowKey]
    weights: np.ndarray
    addresses: np.ndarray
    c_causal: np.ndarray
    c_acausal: np.ndarray
    time: float = 0.0


class SynapseWrite(NamedTuple):
    block: Block
    row_index: int
    column: int
    weight: int
    address: int


class ParamWrite(NamedTuple):
    compartment: CompartmentId
    name: str
    value: float


@dataclass
class WriteBack:
    synapses: list[SynapseWrite] = field(default_factory=list)
    params: list[ParamWrite] = field(default_factory=list)

    def extend(self, other: WriteBack) -> WriteBack:
        self.synapses.extend(other.synapses)
        self.params.extend(other.params)
        return self


class RewireLog(NamedTuple):
    time: float
    block: Block
    row_index: int
    column: int
    old_address: int
    new_address: int
    old_weight: int
    new_weight: int


class PoolExhausted(RuntimeError):
    pass


def _row_keys(chip: ChipConfig, rows: Iterable[RowKey] | None) -> list[RowKey]:
    if rows is None:
        return sorted((Block(r.block), r.row_index) for r in chip.rows)
    return [(Block(b), int(i)) for b, i in rows]


def kernel_read_reset(chip: ChipConfig, rows: Iterable[RowKey] | None = None,
                      time: float = 0.0) -> KernelView:
    """Snapshot weights, addresses and correlations of ``rows``; zero the accumulators."""
    keys = _row_keys(chip, rows)
    shape = (len(keys), chip.n_columns)
    view = KernelView(keys, np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64),
                      np.zeros(shape), np.zeros(shape), time)
    for i, (b, r) in enumerate(keys):
        for c, cell in enumerate(chip.row(b, r).cells):
            view.weights[i, c] = cell.weight
            view.addresses[i, c] = cell.address
            view.c_causal[i, c] = cell.corr.c_causal
            view.c_acausal[i, c] = cell.corr.c_acausal
            cell.corr.c_causal = 0.0
            cell.corr.c_acausal = 0.0
    return view


def apply_writeback(chip: ChipConfig, wb: WriteBack, time: float = 0.0) -> list[RewireLog]:
    """Write new weights/addresses/parameters into ``chip``; returns the changed synapses."""
    log = []
    for w in wb.synapses:
        if not 0 <= w.weight <= MAX_WEIGHT:
            raise ValueError(f"weight {w.weight} exceeds 6 bits")
        if not 0 <= w.address <= MAX_ADDRESS:
            raise ValueError(f"address {w.address} exceeds 6 bits")
        cell = chip.row(w.block, w.row_index).cells[w.column]
        if (cell.address, cell.weight) != (w.address, w.weight):
            log.append(RewireLog(time, Block(w.block), w.row_index, w.column,
                                 cell.address, w.address, cell.weight, w.weight))
            cell.address, cell.weight = int(w.address), int(w.weight)
    for p in wb.params:
        if p.name not in PARAM_NAMES:
            raise KeyError(f"unknown analog parameter {p.name!r}")
        comp = chip.compartment(p.compartment)
        comp.params = comp.params.replace(**{p.name: p.value})
    return log


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def stdp_kernel(view: KernelView, eta: float, only_established: bool = False) -> WriteBack:
    """``w' = clamp(w + round(eta * (c_causal - c_acausal)), 0, 63)`` for every synapse."""
    wb = WriteBack()
    for i, (b, r) in enumerate(view.rows):
        for c in range(view.weights.shape[1]):
            w = int(view.weights[i, c])
            if only_established and w == 0:
                continue
            drive = eta * (view.c_causal[i, c] - view.c_acausal[i, c])
            new = min(MAX_WEIGHT, max(0, w + round_half_away(drive)))
            wb.synapses.append(SynapseWrite(b, r, c, new, int(view.addresses[i, c])))
    return wb


@dataclass
class StructuralParams:
    theta_corr: float = 1.0
    w_init: int = 32
    w_min: int = 8
    period: float = 100e-6
    pool: dict[RowKey, list[int]] = field(default_factory=dict)
    rng_seed: int = 0
    columns: tuple[int, ...] | None = None

    def validate(self) -> list[str]:
        out = []
        if not 1 <= self.w_init <= MAX_WEIGHT:
            out.append("w_init must be in 1..63")
        if not self.w_min < self.w_init:
            out.append("w_min must be < w_init")
        if self.period <= 0:
            out.append("period must be > 0")
        for key, addrs in self.pool.items():
            if any(not 0 <= a <= MAX_ADDRESS for a in addrs):
                out.append(f"pool {key}: addresses must fit in 6 bits")
        return out


def _draw(rng: np.random.Generator, pool: list[int], used: set[int], where: str) -> int:
    free = sorted(set(pool) - used)
    if not free:
        raise PoolExhausted(f"no unused candidate address left for {where}")
    return int(free[int(rng.integers(len(free)))])


def structural_step(view: KernelView, params: StructuralParams,
                    rng: np.random.Generator) -> WriteBack:
    """Keep correlated synapses, re-draw uncorrelated ones, replace decayed ones.

    Only rows listed in ``params.pool`` are touched.  A synapse is established
    when its weight is non-zero.  Re-drawn addresses exclude every address
    currently stored in the same row (including the synapse's own).
    """
    wb = WriteBack()
    for i, (b, r) in enumerate(view.rows):
        pool = params.pool.get((b, r))
        if pool is None:
            continue
        used = {int(a) for a in view.addresses[i]}
        cols = params.columns if params.columns is not None else range(view.weights.shape[1])
        for c in cols:
            w = int(view.weights[i, c])
            addr = int(view.addresses[i, c])
            if w > 0:
                if w >= params.w_min:
                    continue
                new_addr = _draw(rng, pool, used, f"row {b.name.lower()}:{r}")
                wb.synapses.append(SynapseWrite(b, r, c, 0, new_addr))
            elif view.c_causal[i, c] >= params.theta_corr:
                wb.synapses.append(SynapseWrite(b, r, c, params.w_init, addr))
                continue
            else:
                new_addr = _draw(rng, pool, used, f"row {b.name.lower()}:{r}")
                wb.synapses.append(SynapseWrite(b, r, c, 0, new_addr))
            used.discard(addr)
            used.add(new_addr)
    return wb


def randomize_addresses(chip: ChipConfig, params: StructuralParams,
                        rng: np.random.Generator) -> None:
    """Assign unique random pool addresses with weight 0 to every managed synapse."""
    for (b, r), pool in sorted(params.pool.items()):
        row = chip.row(b, r)
        cols = params.columns if params.columns is not None else range(chip.n_columns)
        used = {cell.address for c, cell in enumerate(row.cells) if c not in cols}
        for c in cols:
            row.cells[c].address = _draw(rng, pool, used, f"row {b.name.lower()}:{r}")
            row.cells[c].weight = 0
            used.add(row.cells[c].address)


def write_rewire_log(entries: Iterable[RewireLog], path: str | Path) -> None:
    lines = ["# time_us block row column old_addr new_addr old_w new_w"]
    for e in entries:
        lines.append(f"{e.time * 1e6!r} {Block(e.block).name.lower()} {e.row_index} {e.column} "
                     f"{e.old_address} {e.new_address} {e.old_weight} {e.new_weight}")
    Path(path).write_text("\n".join(lines) + "\n")
