"""Fixed-step integration of the coupled compartment and dendritic-line dynamics.

Each step from ``t_k = k*dt`` to ``t_{k+1}`` runs, in order:

1. deliver pre-synaptic events due at ``t_k`` (charge deltas on lines A/B),
2. exact exponential decay of the line deviations,
3. algebraic solve of the capacitance-free somatic line segments,
4. one exponential-Euler step of every membrane node (conductances linear,
   exponential term, stimulus and coupling targets frozen at ``t_k``),
5. comparator / mono-flop update, spike emission at ``t_{k+1}``,
6. probe recording at ``t_{k+1}``.

Time is hardware time; biological time is 1000x longer.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .chip import (Block, ChipConfig, CircuitGraph, CompartmentId, Line, Mode,
                   derive_network, validate_config)
from .plasticity import on_post, on_pre
from .router import (BusModel, PresynEvent, RoutingTable, RowIndex, SpikeRecord, deliver,
                     route_spike)

log = logging.getLogger(__name__)

PULSE_DURATION = 4e-9
LINE_CAPACITANCE = 1e-12
ACCELERATION = 1000.0
EXP_SLEW_LIMIT = 1e6  # V/s: default exponential-term clamp slews a node by 1 V per us


class NumericalOverflow(RuntimeError):
    def __init__(self, time: float, compartments: Sequence[CompartmentId], voltage: float):
        self.time = time
        self.compartments = tuple(compartments)
        self.voltage = voltage
        names = ",".join(str(c) for c in compartments)
        super().__init__(f"membrane voltage {voltage:.4g} V outside guard band at "
                         f"t={time * 1e6:.4f} us (node {names})")


class MultipleBypassConflict(ValueError):
    pass


def synaptic_delta(I_unit: float, weight: int) -> float:
    """Line deviation produced by one 4 ns pulse of a synapse with ``weight``."""
    return weight * I_unit * PULSE_DURATION / LINE_CAPACITANCE


def to_biological(t: float | np.ndarray):
    return t * ACCELERATION


@dataclass
class CompartmentState:
    V: float
    s_A: float
    s_B: float
    monoflop_remaining: float
    in_alt_mode: bool
    comparator_high: bool


@dataclass
class EngineConfig:
    dt: float = 1e-8
    t_end: float = 100e-6
    probes: list[str] = field(default_factory=list)
    I_exp_max: float | None = None
    loop_delay: float | None = None
    guard: float = 10.0

    def check(self, chip: ChipConfig | None = None) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append("dt must be > 0")
        if self.t_end < 0:
            out.append("t_end must be >= 0")
        if chip is not None and self.dt > 0:
            taus = [t for comp in chip.compartments.values() if comp.mode is not Mode.DISABLED
                    for t in (comp.params.tau_syn_A, comp.params.tau_syn_B)]
            if taus and self.dt > min(taus) / 10 * (1 + 1e-12):
                out.append(f"dt={self.dt!r} exceeds min(tau_syn)/10={min(taus) / 10!r}")
        return out


class CurrentPulse(NamedTuple):
    onset: float
    duration: float
    amplitude: float


def solve_soma_lines(graph: CircuitGraph, V_comp: dict[CompartmentId, float]) -> list[float | None]:
    """Voltage of every somatic-line segment; ``None`` marks a floating segment."""
    out: list[float | None] = []
    for seg in graph.soma_segments:
        bypass = seg.bypass_nodes
        if len(bypass) > 1:
            names = ",".join(str(a.compartment) for a in seg.attachments if a.bypass)
            raise MultipleBypassConflict(
                f"segment {Block(seg.block).label}{seg.columns[0]}: bypasses on distinct "
                f"membrane nodes ({names})")
        if bypass:
            cid = next(a.compartment for a in seg.attachments if a.bypass)
            out.append(V_comp[cid])
            continue
        g = sum(a.g_ic for a in seg.attachments)
        if g > 0:
            out.append(sum(a.g_ic * V_comp[a.compartment] for a in seg.attachments) / g)
        else:
            out.append(None)
    return out


def coupling_matrices(graph: CircuitGraph) -> tuple[np.ndarray, np.ndarray]:
    """Somatic-line coupling as ``I_node = K @ V_node - G * V_node``.

    With the segments solved algebraically the line drops out: a plain segment
    couples every pair of attached compartments through ``g_i*g_k/sum(g)``, and
    a bypassed segment connects each attached compartment directly to the
    bypassed node through its ``g_ic``.
    """
    n = len(graph.membrane_nodes)
    K = np.zeros((n, n))
    G = np.zeros(n)
    for seg in graph.soma_segments:
        bypass = seg.bypass_nodes
        if len(bypass) > 1:
            raise MultipleBypassConflict(
                f"segment {Block(seg.block).label}{seg.columns[0]}: bypasses on distinct membrane nodes")
        if bypass:
            b = bypass[0]
            for a in seg.attachments:
                if a.bypass:
                    continue
                K[a.node, b] += a.g_ic
                K[b, a.node] += a.g_ic
                G[a.node] += a.g_ic
                G[b] += a.g_ic
            continue
        total = sum(a.g_ic for a in seg.attachments)
        if total <= 0:
            continue
        for a in seg.attachments:
            G[a.node] += a.g_ic
            for other in seg.attachments:
                K[a.node, other.node] += a.g_ic * other.g_ic / total
    return K, G


_NONE = np.zeros(0, dtype=np.int64)


class IonChannels:
    """Comparator plus edge-triggered, non-retriggerable mono-flop per compartment."""

    def __init__(self, active: np.ndarray, V_th: np.ndarray, pulse_steps: np.ndarray):
        n = len(active)
        self.active = np.asarray(active, dtype=bool)
        self.V_th = np.asarray(V_th, dtype=float)
        self.pulse_steps = np.asarray(pulse_steps, dtype=np.int64)
        self.high = np.zeros(n, dtype=bool)
        self.alt = np.zeros(n, dtype=bool)
        self.remaining = np.zeros(n, dtype=np.int64)

    def update(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step given post-integration voltages.

        Returns ``(triggered, expired)`` index arrays.
        """
        expired = _NONE
        if self.alt.any():
            self.remaining -= self.alt
            mask = self.alt & (self.remaining <= 0)
            if mask.any():
                self.alt &= ~mask
                expired = mask.nonzero()[0]
        high = V >= self.V_th
        rising = high > self.high
        self.high = high
        if not rising.any():
            return _NONE, expired
        mask = rising & ~self.alt & self.active & (self.pulse_steps > 0)
        if not mask.any():
            return _NONE, expired
        self.alt |= mask
        self.remaining[mask] = self.pulse_steps[mask]
        return mask.nonzero()[0], expired


def ion_channel_update(channels: IonChannels, V: np.ndarray) -> np.ndarray:
    return channels.update(V)[0]


Kernel = Callable[["Simulation", float], object]


@dataclass
class SimResult:
    times: np.ndarray
    probes: list[str]
    traces: np.ndarray
    spikes: list[SpikeRecord]
    alt_intervals: dict[CompartmentId, list[tuple[float, float]]]
    dropped_events: int = 0
    kernel_log: list = field(default_factory=list)

    def trace(self, probe: str) -> np.ndarray:
        return self.traces[:, self.probes.index(probe)]

    def spikes_of(self, cid: CompartmentId | str) -> list[SpikeRecord]:
        if isinstance(cid, str):
            cid = CompartmentId.parse(cid)
        return [s for s in self.spikes if s.compartment == cid]


class Simulation:
    """One simulation instance; strictly sequential, no shared mutable state."""

    def __init__(self, chip: ChipConfig, config: EngineConfig | None = None,
                 routing: RoutingTable | None = None, bus: BusModel | None = None,
                 current: Iterable[CurrentPulse] = (), events: Iterable[PresynEvent] = ()):
        self.chip = chip
        self.config = config or EngineConfig()
        problems = validate_config(chip) + self.config.check(chip)
        if problems:
            raise ValueError("invalid simulation setup: " + "; ".join(problems))
        self.dt = self.config.dt
        self.routing = routing or RoutingTable()
        self.bus = bus or BusModel()
        self.loop_delay = self.dt if self.config.loop_delay is None else self.config.loop_delay
        self.ids = chip.compartment_ids()
        self.index = {cid: i for i, cid in enumerate(self.ids)}
        self.k = 0
        self.spikes: list[SpikeRecord] = []
        self.kernel_log: list = []
        self._kernels: list[tuple[int, Kernel]] = []
        self._events: list = []
        self._seq = 0
        self.add_events(events)
        self._pulses: list[tuple[int, int, float]] = []
        self.set_current(current)
        self._alt_open: dict[int, float] = {}
        self.alt_intervals: dict[CompartmentId, list[tuple[float, float]]] = {}

        n = len(self.ids)
        self.s_A = np.zeros(n)
        self.s_B = np.zeros(n)
        self.refresh(reset_state=True)

    # -- configuration -------------------------------------------------------

    def refresh(self, reset_state: bool = False) -> None:
        """Re-read parameters and switches from ``self.chip`` (e.g. after a kernel)."""
        chip, ids, dt = self.chip, self.ids, self.dt
        comps = [chip.compartments[c] for c in ids]
        self.graph = derive_network(chip)
        self.node_idx = np.array([self.graph.node_of[c] for c in ids])
        n_nodes = len(self.graph.membrane_nodes)
        self.K, self.G_line = coupling_matrices(self.graph)

        def arr(name):
            return np.array([getattr(c.params, name) for c in comps], dtype=float)

        self.modes = [c.mode for c in comps]
        self.g_leak, self.V_leak = arr("g_leak"), arr("V_leak")
        self.g_alt, self.V_alt = arr("g_alt"), arr("V_alt")
        self.E_A, self.E_B = arr("E_rev_A"), arr("E_rev_B")
        self.gs_A, self.gs_B = arr("g_syn_scale_A"), arr("g_syn_scale_B")
        self.decay_A = np.exp(-dt / arr("tau_syn_A"))
        self.decay_B = np.exp(-dt / arr("tau_syn_B"))
        self.delta_per_weight = synaptic_delta(arr("I_unit"), 1)
        C = arr("C_mem")
        self.C_node = np.bincount(self.node_idx, weights=C, minlength=n_nodes)
        self.exp_on = np.array([c.exp_term_enabled for c in comps], dtype=bool)
        self.any_exp = bool(self.exp_on.any())
        self.identity_nodes = bool(np.array_equal(self.node_idx, np.arange(len(ids))))
        self.coupled = bool(np.any(self.K))
        self.V_exp = arr("V_exp_th")
        self.dT = np.where(self.exp_on, arr("Delta_T"), 1.0)
        if self.config.I_exp_max is None:
            self.I_exp_max = C * EXP_SLEW_LIMIT
        else:
            self.I_exp_max = np.full(len(ids), float(self.config.I_exp_max))
        self.stim_mask = np.array([c.current_input_enabled for c in comps], dtype=float)
        pulse_steps = np.array([int(round(c.params.T_pulse / dt)) for c in comps])
        active = np.array([m.spiking for m in self.modes])
        self.row_index = RowIndex(chip)
        self.rows_by_key = {(int(r.block), r.row_index): r for r in chip.rows}
        self.post_cells = {}
        for i, cid in enumerate(ids):
            self.post_cells[i] = [row.cells[cid.column].corr for row in chip.block_rows(cid.block)
                                  if cid.column < len(row.cells)]

        if reset_state:
            g_sum = np.bincount(self.node_idx, weights=self.g_leak, minlength=n_nodes)
            gv_sum = np.bincount(self.node_idx, weights=self.g_leak * self.V_leak, minlength=n_nodes)
            v_mean = np.bincount(self.node_idx, weights=self.V_leak, minlength=n_nodes)
            v_mean /= np.bincount(self.node_idx, minlength=n_nodes)
            self.V = np.where(g_sum > 0, gv_sum / np.where(g_sum > 0, g_sum, 1.0), v_mean)
            self.channels = IonChannels(active, arr("V_th"), pulse_steps)
            self.channels.high = self.V[self.node_idx] >= self.channels.V_th
        else:
            if len(self.V) != n_nodes:
                raise ValueError("switch topology changed during a run; create a new Simulation")
            self.channels.active = active
            self.channels.V_th = arr("V_th")
            self.channels.pulse_steps = pulse_steps
        self._sync_active()

    def add_events(self, events: Iterable[PresynEvent]) -> None:
        for ev in events:
            ev = PresynEvent(float(ev.time), Block(ev.block), int(ev.row_group), int(ev.address))
            step = int(round(ev.time / self.dt))
            heapq.heappush(self._events, (step, int(ev.block), ev.row_group, ev.address,
                                          self._seq, ev))
            self._seq += 1

    def set_current(self, pulses: Iterable[CurrentPulse]) -> None:
        self._pulses = []
        for p in pulses:
            start = int(round(p.onset / self.dt))
            stop = start + int(round(p.duration / self.dt))
            self._pulses.append((start, stop, float(p.amplitude)))

    def schedule(self, period: float, kernel: Kernel) -> None:
        """Call ``kernel(sim, t)`` between steps whenever ``t`` is a multiple of ``period``."""
        steps = int(round(period / self.dt))
        if steps <= 0:
            raise ValueError("kernel period shorter than dt")
        self._kernels.append((steps, kernel))

    def set_voltage(self, cid: CompartmentId | str, V: float) -> None:
        if isinstance(cid, str):
            cid = CompartmentId.parse(cid)
        self.V[self.graph.node_of[cid]] = V

    # -- state access ----------------------------------------------------------

    @property
    def time(self) -> float:
        return self.k * self.dt

    def compartment_voltages(self) -> dict[CompartmentId, float]:
        Vc = self.V[self.node_idx]
        return {cid: float(Vc[i]) for i, cid in enumerate(self.ids)}

    def state(self, cid: CompartmentId | str) -> CompartmentState:
        if isinstance(cid, str):
            cid = CompartmentId.parse(cid)
        i = self.index[cid]
        ch = self.channels
        return CompartmentState(float(self.V[self.node_idx[i]]), float(self.s_A[i]),
                                float(self.s_B[i]), float(ch.remaining[i] * self.dt),
                                bool(ch.alt[i]), bool(ch.high[i]))

    def stimulus(self, k: int) -> float:
        if not self._pulses:
            return 0.0
        return sum(a for start, stop, a in self._pulses if start <= k < stop)

    def line_voltages(self) -> list[float | None]:
        return solve_soma_lines(self.graph, self.compartment_voltages())

    def _sync_active(self, idx: np.ndarray | None = None) -> None:
        """Refresh the cached active conductance/reversal after mode switches."""
        alt = self.channels.alt
        if idx is None:
            self.g_act = np.where(alt, self.g_alt, self.g_leak)
            self.gE_act = self.g_act * np.where(alt, self.V_alt, self.V_leak)
            return
        a = alt[idx]
        self.g_act[idx] = np.where(a, self.g_alt[idx], self.g_leak[idx])
        self.gE_act[idx] = self.g_act[idx] * np.where(a, self.V_alt[idx], self.V_leak[idx])

    def _compartment_terms(self, I_stim: float):
        """Per-compartment conductance ``G`` and source ``J`` so that ``I = J - G*V``."""
        gA = self.gs_A * self.s_A
        gB = self.gs_B * self.s_B
        G = self.g_act + gA + gB
        J = self.gE_act + gA * self.E_A + gB * self.E_B
        if self.any_exp:
            Vc = self.V[self.node_idx]
            arg = np.minimum((Vc - self.V_exp) / self.dT, 50.0)
            J += np.where(self.exp_on,
                          np.minimum(self.g_leak * self.dT * np.exp(arg), self.I_exp_max), 0.0)
        if I_stim:
            J += I_stim * self.stim_mask
        return G, J

    def _node_terms(self, G: np.ndarray, J: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.identity_nodes:
            Gn = G + self.G_line
            Jn = J + self.K @ self.V if self.coupled else J.copy()
        else:
            n = len(self.V)
            Gn = np.bincount(self.node_idx, weights=G, minlength=n) + self.G_line
            Jn = np.bincount(self.node_idx, weights=J, minlength=n)
            if self.coupled:
                Jn += self.K @ self.V
        return Gn, Jn

    def node_currents(self) -> np.ndarray:
        """Total current into every membrane node at the present state."""
        Gn, Jn = self._node_terms(*self._compartment_terms(self.stimulus(self.k)))
        return Jn - Gn * self.V

    # -- stepping ----------------------------------------------------------------

    def _pre_hook(self, block: int, row: int, col: int, t: float) -> None:
        on_pre(self.rows_by_key[(block, row)].cells[col].corr, t)

    def _deliver_due(self) -> None:
        k = self.k
        due = []
        while self._events and self._events[0][0] <= k:
            due.append(heapq.heappop(self._events)[-1])
        if not due:
            return
        t = k * self.dt
        for inj in deliver(due, self.chip, t, on_pre=self._pre_hook, bus=self.bus,
                           index=self.row_index):
            i = self.index[CompartmentId(Block(inj.block), inj.column)]
            delta = inj.weight * self.delta_per_weight[i]
            if inj.line == Line.A:
                self.s_A[i] += delta
            else:
                self.s_B[i] += delta

    def step(self) -> list[SpikeRecord]:
        """Advance by one ``dt``; returns the spikes emitted at the new time."""
        dt = self.dt
        self._deliver_due()
        self.s_A *= self.decay_A
        self.s_B *= self.decay_B

        Gn, Jn = self._node_terms(*self._compartment_terms(self.stimulus(self.k)))
        V = self.V
        # exact for the frozen linear system; the expm1 form stays finite as Gn -> 0
        Gs = np.maximum(Gn, 1e-300)
        V_new = V + (Jn - Gn * V) * (-np.expm1(-Gs * (dt / self.C_node)) / Gs)
        self.k += 1
        t = self.k * dt
        if not np.all(np.abs(V_new) <= self.config.guard):
            node = int(np.flatnonzero(~(np.abs(V_new) <= self.config.guard))[0])
            raise NumericalOverflow(t, self.graph.membrane_nodes[node].members, float(V_new[node]))
        self.V = V_new

        triggered, expired = self.channels.update(V_new[self.node_idx])
        if triggered.size or expired.size:
            self._sync_active(np.concatenate((triggered, expired)))
        for i in expired:
            start = self._alt_open.pop(int(i), None)
            if start is not None:
                self.alt_intervals.setdefault(self.ids[i], []).append((start, t))
        emitted = []
        for i in triggered:
            cid = self.ids[i]
            spike = SpikeRecord(t, cid, self.modes[i])
            emitted.append(spike)
            self._alt_open[int(i)] = t
            for corr in self.post_cells[int(i)]:
                on_post(corr, t)
            routed = route_spike(spike, self.routing, self.loop_delay)
            if routed:
                self.add_events(routed)
        self.spikes.extend(emitted)
        return emitted

    def _probe_getters(self, probes: Sequence[str]):
        getters = []
        for p in probes:
            kind, _, target = p.partition(".")
            cid = CompartmentId.parse(target)
            i = self.index[cid]
            if kind == "V":
                getters.append(lambda i=i: self.V[self.node_idx[i]])
            elif kind == "sA":
                getters.append(lambda i=i: self.s_A[i])
            elif kind == "sB":
                getters.append(lambda i=i: self.s_B[i])
            elif kind == "alt":
                getters.append(lambda i=i: float(self.channels.alt[i]))
            elif kind == "line":
                seg = self.graph.segment_of(cid)

                def line(seg=seg):
                    v = self.line_voltages()[seg]
                    return math.nan if v is None else v
                getters.append(line)
            else:
                raise ValueError(f"unknown probe {p!r} (use V/sA/sB/alt/line.<compartment>)")
        return getters

    def run(self, t_end: float | None = None) -> SimResult:
        """Run until ``t_end`` (hardware seconds) and return traces and spikes."""
        t_end = self.config.t_end if t_end is None else t_end
        k_end = int(round(t_end / self.dt))
        probes = list(self.config.probes)
        getters = self._probe_getters(probes)
        n_rows = max(k_end - self.k, 0) + 1
        traces = np.empty((n_rows, len(probes)))
        times = (self.k + np.arange(n_rows)) * self.dt
        first_spike = len(self.spikes)
        traces[0] = [g() for g in getters]
        row = 1
        while self.k < k_end:
            for steps, kernel in self._kernels:
                if self.k > 0 and self.k % steps == 0:
                    out = kernel(self, self.k * self.dt)
                    if out:
                        self.kernel_log.extend(out)
            self.step()
            traces[row] = [g() for g in getters]
            row += 1
        intervals = {cid: list(v) for cid, v in self.alt_intervals.items()}
        for i, start in self._alt_open.items():
            intervals.setdefault(self.ids[i], []).append((start, math.inf))
        return SimResult(times, probes, traces, self.spikes[first_spike:], intervals,
                         self.bus.dropped, list(self.kernel_log))


def membrane_currents(sim: Simulation, node: int) -> float:
    """Current into membrane ``node`` evaluated term by term from the current state."""
    V_comp = sim.compartment_voltages()
    lines = solve_soma_lines(sim.graph, V_comp)
    I_stim = sim.stimulus(sim.k)
    total = 0.0
    for cid in sim.graph.membrane_nodes[node].members:
        comp = sim.chip.compartments[cid]
        p = comp.params
        st = sim.state(cid)
        V = st.V
        g, E = (p.g_alt, p.V_alt) if st.in_alt_mode else (p.g_leak, p.V_leak)
        I = g * (E - V)
        I += p.g_syn_scale_A * st.s_A * (p.E_rev_A - V)
        I += p.g_syn_scale_B * st.s_B * (p.E_rev_B - V)
        if comp.exp_term_enabled:
            i_max = p.C_mem * EXP_SLEW_LIMIT if sim.config.I_exp_max is None else sim.config.I_exp_max
            I += min(p.g_leak * p.Delta_T * math.exp(min((V - p.V_exp_th) / p.Delta_T, 50.0)), i_max)
        if comp.soma_connect:
            seg = sim.graph.segment_of(cid)
            if comp.soma_bypass:
                # the shorted line returns the current every other attachment draws
                for a in sim.graph.soma_segments[seg].attachments:
                    if not a.bypass:
                        I += a.g_ic * (V_comp[a.compartment] - V)
            elif lines[seg] is not None:
                I += p.g_ic * (lines[seg] - V)
        if comp.current_input_enabled:
            I += I_stim
        total += I
    return total
