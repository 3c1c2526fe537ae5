"""Experiment specifications: files, procedural stimuli, plasticity schedules, runs."""

from __future__ import annotations

import copy
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chip import Block, ChipConfig, CompartmentId, Mode, validate_config
from .configio import (ConfigParseError, fmt_bool, load_chip, new_parser, option_line, parse_bool,
                       save_chip)
from .engine import CurrentPulse, EngineConfig, NumericalOverflow, SimResult, Simulation
from .plasticity import (SensorParams, StructuralParams, apply_writeback, configure_sensors,
                         kernel_read_reset, randomize_addresses, stdp_kernel, structural_step,
                         write_rewire_log)
from .router import (BusModel, PresynEvent, RoutingTable, read_routing, read_stimulus,
                     write_routing, write_stimulus)
from .traceio import emit_plot_data, write_spikes, write_traces


@dataclass
class TrainSpec:
    """Procedural pre-synaptic spike train.

    ``poisson``: independent Poisson trains at ``rate`` for every address.
    ``volley``: every address fires once per ``period``, at ``offset`` into the
    period plus uniform jitter in ``[-jitter, jitter]``.
    """

    name: str
    kind: str
    block: Block
    row_group: int
    addresses: list[int]
    t_start: float = 0.0
    t_stop: float = 0.0
    rate: float = 0.0
    period: float = 0.0
    offset: float = 0.0
    jitter: float = 0.0
    seed: int = 0

    def generate(self) -> list[PresynEvent]:
        rng = np.random.default_rng(self.seed)
        out = []
        if self.kind == "poisson":
            span = self.t_stop - self.t_start
            for addr in self.addresses:
                n = rng.poisson(self.rate * span)
                for t in np.sort(rng.uniform(self.t_start, self.t_stop, n)):
                    out.append(PresynEvent(float(t), self.block, self.row_group, addr))
        elif self.kind == "volley":
            t0 = self.t_start
            while t0 + self.offset < self.t_stop:
                for addr in self.addresses:
                    jit = rng.uniform(-self.jitter, self.jitter) if self.jitter else 0.0
                    out.append(PresynEvent(float(t0 + self.offset + jit), self.block,
                                           self.row_group, addr))
                t0 += self.period
        else:
            raise ValueError(f"unknown train kind {self.kind!r}")
        return sorted(out, key=lambda e: e.sort_key())


@dataclass
class PlasticitySpec:
    kernel: str = "structural"  # structural | stdp | structural+stdp
    period: float = 100e-6
    theta_corr: float = 1.0
    w_init: int = 32
    w_min: int = 8
    eta: float = 1.0
    pool_rows: list[tuple[Block, int]] = field(default_factory=list)
    pool: list[int] = field(default_factory=lambda: list(range(64)))
    columns: list[int] | None = None
    seed: int = 0
    sensors: SensorParams = field(default_factory=SensorParams)
    correlated: list[int] = field(default_factory=list)

    def structural_params(self) -> StructuralParams:
        return StructuralParams(self.theta_corr, self.w_init, self.w_min, self.period,
                                {(Block(b), r): list(self.pool) for b, r in self.pool_rows},
                                self.seed, tuple(self.columns) if self.columns is not None else None)


@dataclass
class ExperimentSpec:
    name: str
    chip: ChipConfig
    engine: EngineConfig = field(default_factory=EngineConfig)
    events: list[PresynEvent] = field(default_factory=list)
    trains: list[TrainSpec] = field(default_factory=list)
    current: list[CurrentPulse] = field(default_factory=list)
    routing: RoutingTable = field(default_factory=RoutingTable)
    plasticity: PlasticitySpec | None = None
    bus_enforce: bool = False
    description: str = ""

    def validate(self) -> list[str]:
        out = validate_config(self.chip) + self.engine.check(self.chip)
        out += self.routing.validate(self.chip)
        if self.current and not any(c.current_input_enabled for c in self.chip.compartments.values()):
            out.append("current stimulus given but no compartment has current_input_enabled")
        if self.plasticity is not None:
            out += self.plasticity.structural_params().validate()
        return out

    def all_events(self) -> list[PresynEvent]:
        evs = list(self.events)
        for tr in self.trains:
            evs += tr.generate()
        return sorted(evs, key=lambda e: e.sort_key())


def reseed(spec: ExperimentSpec, seed: int) -> ExperimentSpec:
    """Derive every procedural train seed and the plasticity seed from ``seed`` (in place)."""
    for i, tr in enumerate(spec.trains):
        tr.seed = seed * 1000 + i
    if spec.plasticity is not None:
        spec.plasticity.seed = seed
    return spec


# -- running ------------------------------------------------------------------------

@dataclass
class Artifacts:
    result: SimResult
    summary: dict
    files: dict[str, Path] = field(default_factory=dict)


def _plasticity_kernel(spec: PlasticitySpec):
    """Periodic kernel: one read-reset, optional stdp on established synapses, then rewiring."""
    params = spec.structural_params()
    rng = np.random.default_rng(spec.seed)
    rows = sorted(params.pool)

    def kernel(sim: Simulation, t: float):
        view = kernel_read_reset(sim.chip, rows, time=t)
        log = []
        if "stdp" in spec.kernel:
            wb = stdp_kernel(view, spec.eta, only_established=True)
            log += apply_writeback(sim.chip, wb, t)
            where = {key: i for i, key in enumerate(view.rows)}
            for w in wb.synapses:
                view.weights[where[(w.block, w.row_index)], w.column] = w.weight
        if "structural" in spec.kernel:
            log += apply_writeback(sim.chip, structural_step(view, params, rng), t)
        return log

    return kernel, params, rng


def established_summary(chip: ChipConfig, spec: PlasticitySpec) -> dict:
    correlated = set(spec.correlated)
    est = []
    for b, r in spec.pool_rows:
        row = chip.row(Block(b), r)
        cols = spec.columns if spec.columns is not None else range(chip.n_columns)
        est += [row.cells[c].address for c in cols if row.cells[c].weight > 0]
    hits = sum(a in correlated for a in est)
    return {"established": len(est), "established_correlated": hits,
            "fraction_correlated": hits / len(est) if est else 0.0}


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> Artifacts:
    """Run ``spec`` and (optionally) write its artifact set into ``out_dir``."""
    problems = spec.validate()
    if problems:
        raise ValueError("invalid experiment: " + "; ".join(problems))
    chip = copy.deepcopy(spec.chip)
    if spec.plasticity is not None:
        configure_sensors(chip, spec.plasticity.sensors)
    sim = Simulation(chip, spec.engine, routing=spec.routing,
                     bus=BusModel(enforce=spec.bus_enforce), current=spec.current,
                     events=spec.all_events())
    if spec.plasticity is not None:
        kernel, params, rng = _plasticity_kernel(spec.plasticity)
        randomize_addresses(chip, params, rng)
        sim.schedule(spec.plasticity.period, kernel)
    try:
        result = sim.run(spec.engine.t_end)
    except NumericalOverflow as exc:
        names = {str(c) for c in exc.compartments}
        exc.probes = [p for p in spec.engine.probes if p.partition(".")[2] in names]
        exc.last_voltages = {str(c): v for c, v in sim.compartment_voltages().items()}
        raise
    log_entries = result.kernel_log

    counts = {str(cid): 0 for cid in chip.compartment_ids() if chip.compartments[cid].mode.spiking}
    for s in result.spikes:
        counts[str(s.compartment)] = counts.get(str(s.compartment), 0) + 1
    plateaus = {str(cid): [round((b - a) * 1e6, 9) if np.isfinite(b) else None for a, b in iv]
                for cid, iv in sorted(result.alt_intervals.items())}
    summary = {
        "name": spec.name,
        "t_end_us": spec.engine.t_end * 1e6,
        "dt_s": spec.engine.dt,
        "spike_counts": counts,
        "alt_interval_lengths_us": plateaus,
        "dropped_events": result.dropped_events,
    }
    if spec.plasticity is not None:
        summary["rewiring_events"] = len(log_entries)
        summary["structural"] = established_summary(chip, spec.plasticity)

    files = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["traces"] = out / "traces.txt"
        write_traces(result, files["traces"])
        files["spikes"] = out / "spikes.txt"
        write_spikes(result.spikes, files["spikes"])
        files["plot"] = out / f"plot_{spec.name}.txt"
        emit_plot_data(result.times, result.probes, result.traces, files["plot"])
        if spec.plasticity is not None:
            files["rewiring"] = out / "rewiring.txt"
            write_rewire_log(log_entries, files["rewiring"])
        files["summary"] = out / "summary.json"
        files["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return Artifacts(result, summary, files)


# -- experiment files -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_experiment(spec: ExperimentSpec, chip_file: str, stimulus_file: str | None = None,
                     routing_file: str | None = None) -> str:
    parser = new_parser()
    e = spec.engine
    sec = {
        "name": spec.name,
        "chip": chip_file,
        "dt": _fmt(e.dt),
        "t_end": _fmt(e.t_end),
        "probes": " ".join(e.probes),
        "bus_enforce": fmt_bool(spec.bus_enforce),
    }
    if e.I_exp_max is not None:
        sec["I_exp_max"] = _fmt(e.I_exp_max)
    if e.loop_delay is not None:
        sec["loop_delay"] = _fmt(e.loop_delay)
    if stimulus_file:
        sec["stimulus"] = stimulus_file
    if routing_file:
        sec["routing"] = routing_file
    if spec.description:
        sec["description"] = spec.description
    parser["experiment"] = sec
    if spec.current:
        parser["current"] = {"pulses": " ".join(
            f"{_fmt(p.onset)}:{_fmt(p.duration)}:{_fmt(p.amplitude)}" for p in spec.current)}
    for tr in spec.trains:
        parser[f"train {tr.name}"] = {
            "kind": tr.kind, "block": Block(tr.block).name.lower(),
            "row_group": str(tr.row_group), "addresses": " ".join(map(str, tr.addresses)),
            "t_start": _fmt(tr.t_start), "t_stop": _fmt(tr.t_stop), "rate": _fmt(tr.rate),
            "period": _fmt(tr.period), "offset": _fmt(tr.offset), "jitter": _fmt(tr.jitter),
            "seed": str(tr.seed),
        }
    if spec.plasticity is not None:
        p = spec.plasticity
        s = p.sensors
        parser["plasticity"] = {
            "kernel": p.kernel, "period": _fmt(p.period), "theta_corr": _fmt(p.theta_corr),
            "w_init": str(p.w_init), "w_min": str(p.w_min), "eta": _fmt(p.eta),
            "pool_rows": " ".join(f"{Block(b).name.lower()}:{r}" for b, r in p.pool_rows),
            "pool": " ".join(map(str, p.pool)),
            "columns": "" if p.columns is None else " ".join(map(str, p.columns)),
            "seed": str(p.seed), "correlated": " ".join(map(str, p.correlated)),
            "A_plus": _fmt(s.A_plus), "A_minus": _fmt(s.A_minus),
            "tau_plus": _fmt(s.tau_plus), "tau_minus": _fmt(s.tau_minus),
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_experiment(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    text = path.read_text()
    parser = new_parser()
    src = str(path)
    try:
        parser.read_string(text, source=src)
    except Exception as exc:  # configparser errors carry their own line numbers
        raise ConfigParseError(str(exc).splitlines()[0], getattr(exc, "lineno", None), src)

    def fail(section, option, message):
        raise ConfigParseError(f"[{section}] {message}", option_line(text, section, option), src)

    def num(section, option, default=None, kind=float):
        sec = parser[section]
        if option not in sec:
            if default is None:
                fail(section, option, f"missing {option}")
            return default
        try:
            return kind(sec[option])
        except ValueError:
            fail(section, option, f"{option} must be a {kind.__name__}")

    if "experiment" not in parser:
        raise ConfigParseError("missing [experiment] section", None, src)
    ex = parser["experiment"]
    base = path.parent
    if "chip" not in ex:
        fail("experiment", "chip", "missing chip")
    chip_path = base / ex["chip"]
    if not chip_path.exists():
        fail("experiment", "chip", f"chip file not found: {chip_path}")
    chip = load_chip(chip_path)
    engine = EngineConfig(dt=num("experiment", "dt", 1e-8), t_end=num("experiment", "t_end"),
                          probes=ex.get("probes", "").split(),
                          I_exp_max=num("experiment", "I_exp_max", None) if "I_exp_max" in ex else None,
                          loop_delay=num("experiment", "loop_delay", None) if "loop_delay" in ex else None)
    events = []
    if "stimulus" in ex:
        stim = base / ex["stimulus"]
        if not stim.exists():
            fail("experiment", "stimulus", f"stimulus file not found: {stim}")
        events = read_stimulus(stim)
    routing = RoutingTable()
    if "routing" in ex:
        rpath = base / ex["routing"]
        if not rpath.exists():
            fail("experiment", "routing", f"routing file not found: {rpath}")
        routing = read_routing(rpath)
    current = []
    if "current" in parser:
        for tok in parser["current"].get("pulses", "").split():
            try:
                onset, dur, amp = (float(x) for x in tok.split(":"))
            except ValueError:
                fail("current", "pulses", f"bad pulse {tok!r} (onset:duration:amplitude)")
            current.append(CurrentPulse(onset, dur, amp))
    trains = []
    plasticity = None
    for name in parser.sections():
        if name.startswith("train "):
            sec = parser[name]
            try:
                trains.append(TrainSpec(
                    name=name[6:].strip(), kind=sec["kind"], block=Block.parse(sec["block"]),
                    row_group=int(sec["row_group"]),
                    addresses=[int(a) for a in sec.get("addresses", "").split()],
                    t_start=float(sec.get("t_start", "0")), t_stop=float(sec.get("t_stop", "0")),
                    rate=float(sec.get("rate", "0")), period=float(sec.get("period", "0")),
                    offset=float(sec.get("offset", "0")), jitter=float(sec.get("jitter", "0")),
                    seed=int(sec.get("seed", "0"))))
            except (KeyError, ValueError) as exc:
                fail(name, None, f"bad train definition: {exc}")
    if "plasticity" in parser:
        sec = parser["plasticity"]
        try:
            rows = []
            for tok in sec.get("pool_rows", "").split():
                b, r = tok.split(":")
                rows.append((Block.parse(b), int(r)))
            cols = sec.get("columns", "").split()
            plasticity = PlasticitySpec(
                kernel=sec.get("kernel", "structural"), period=float(sec["period"]),
                theta_corr=float(sec.get("theta_corr", "1.0")), w_init=int(sec.get("w_init", "32")),
                w_min=int(sec.get("w_min", "8")), eta=float(sec.get("eta", "1.0")),
                pool_rows=rows, pool=[int(a) for a in sec.get("pool", "").split()],
                columns=[int(c) for c in cols] if cols else None, seed=int(sec.get("seed", "0")),
                sensors=SensorParams(float(sec.get("A_plus", "1")), float(sec.get("A_minus", "1")),
                                     float(sec.get("tau_plus", "2e-6")),
                                     float(sec.get("tau_minus", "2e-6"))),
                correlated=[int(a) for a in sec.get("correlated", "").split()])
        except (KeyError, ValueError) as exc:
            fail("plasticity", None, f"bad plasticity definition: {exc}")
    return ExperimentSpec(ex.get("name", path.stem), chip, engine, events, trains, current,
                          routing, plasticity, parse_bool(ex.get("bus_enforce", "false")),
                          ex.get("description", ""))


def save_experiment(spec: ExperimentSpec, directory: str | Path, stem: str | None = None) -> Path:
    """Write ``<stem>.ini`` plus its chip (and stimulus/routing) files into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or spec.name
    chip_file = f"{stem}.chip.ini"
    save_chip(spec.chip, directory / chip_file)
    stim_file = None
    if spec.events:
        stim_file = f"{stem}.stim"
        write_stimulus(spec.events, directory / stim_file)
    routing_file = None
    if spec.routing.routes:
        routing_file = f"{stem}.routes"
        write_routing(spec.routing, directory / routing_file)
    path = directory / f"{stem}.ini"
    path.write_text(dumps_experiment(spec, chip_file, stim_file, routing_file))
    return path
