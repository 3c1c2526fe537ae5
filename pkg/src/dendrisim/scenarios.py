"""Pinned demonstration experiments.

Every builder returns a fresh :class:`ExperimentSpec`; the same experiments
ship as files under ``dendrisim/scenarios`` so they can be run from the
command line.  Times are hardware seconds, conductances siemens.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import Callable

from .chip import Block, ChipConfig, CompartmentId, Line, Mode, default_params
from .engine import CurrentPulse, EngineConfig
from .experiment import ExperimentSpec, PlasticitySpec, TrainSpec, save_experiment
from .morph import ChipDims, compile_morphology, preset_pyramidal
from .plasticity import SensorParams
from .router import PresynEvent, RoutingTable, Target

U0 = CompartmentId(Block.UPPER, 0)
U1 = CompartmentId(Block.UPPER, 1)


def set_synapse(chip: ChipConfig, block: Block, row: int, column: int, address: int,
                weight: int, line: Line = Line.A) -> None:
    r = chip.row(block, row)
    r.target_line = line
    r.cells[column].address = address
    r.cells[column].weight = weight


def volley(t: float, block: Block, row_group: int, addresses, spacing: float = 0.0):
    return [PresynEvent(t + i * spacing, block, row_group, a) for i, a in enumerate(addresses)]


# -- single-compartment NMDA plateau ---------------------------------------------------------

def nmda_plateau(t_end: float = 100e-6, onset: float = 10e-6, T_pulse: float = 30e-6,
                 dt: float = 1e-8) -> ExperimentSpec:
    """One NMDA compartment; a synaptic volley at ``onset`` starts a plateau."""
    chip = ChipConfig.empty(1, 8)
    comp = chip.compartments[U0]
    comp.mode = Mode.NMDA
    # short synaptic decay so the post-plateau relaxation is the bare membrane
    comp.params = default_params(Mode.NMDA).replace(T_pulse=T_pulse, tau_syn_A=0.5e-6,
                                                    g_syn_scale_A=4e-6)
    for row in range(8):
        set_synapse(chip, Block.UPPER, row, 0, 1, 63)
    events = []
    for g in range(4):
        events += volley(onset, Block.UPPER, g, [1, 1], spacing=0.05e-6)
    engine = EngineConfig(dt=dt, t_end=t_end, probes=["V.U0", "sA.U0", "alt.U0"])
    return ExperimentSpec("nmda_pp", chip, engine, events=events,
                          description="NMDA plateau after a synaptic volley")


# -- two compartments: exponential spike and passive follower --------------------------------

def fig7a(t_end: float = 60e-6, dt: float = 1e-8) -> ExperimentSpec:
    """Na compartment with exponential term coupled to a passive neighbour.

    A weak synaptic input stays sub-threshold; a stronger current pulse
    starts the exponential upswing and a reset, which the neighbour follows
    passively through the coupling conductance.
    """
    chip = ChipConfig.empty(2, 4)
    na, pas = chip.compartments[U0], chip.compartments[U1]
    na.mode = Mode.NA
    na.params = default_params(Mode.NA).replace(V_th=0.95, V_exp_th=0.8, Delta_T=0.02,
                                                g_syn_scale_A=4e-6)
    na.exp_term_enabled = True
    na.current_input_enabled = True
    na.soma_connect = na.soma_bypass = True
    pas.mode = Mode.PASSIVE
    pas.params = default_params(Mode.PASSIVE).replace(g_ic=0.5e-6)
    pas.soma_connect = True
    for row in range(2):
        set_synapse(chip, Block.UPPER, row, 0, 1, 63)
    events = volley(10e-6, Block.UPPER, 0, [1, 1, 1], spacing=0.1e-6)
    current = [CurrentPulse(30e-6, 3e-6, 0.4e-6)]
    engine = EngineConfig(dt=dt, t_end=t_end, probes=["V.U0", "V.U1", "alt.U0"])
    return ExperimentSpec("fig7a", chip, engine, events=events, current=current,
                          description="weak synaptic input then current pulse into a Na "
                                      "compartment with a passive neighbour")


# -- reset above threshold: pull-up of a neighbour -------------------------------------------

FIG7B_PULSES = (70e-6, 9e-6, 30e-6)
FIG7B_ONSET = 5e-6


def fig7b_pairs() -> list[tuple[CompartmentId, CompartmentId, float]]:
    """``(active, neighbour, T_pulse)`` for the three independent pairs of :func:`fig7b`."""
    return [(CompartmentId(Block.UPPER, 4 * i), CompartmentId(Block.UPPER, 4 * i + 1), T)
            for i, T in enumerate(FIG7B_PULSES)]


def fig7b(t_end: float = 100e-6, dt: float = 1e-8) -> ExperimentSpec:
    """Three up-states of different length, each pulling up a passive neighbour.

    Each pair sits on its own somatic-line segment.  The active compartment
    resets above its threshold (V_alt > V_th) with a reset conductance larger
    than its leak, and its leak is so strong that it falls back within a step
    once the pulse ends; the neighbour therefore rises exactly while the
    up-state lasts.
    """
    chip = ChipConfig.empty(12, 2)
    for i, (a, n, T) in enumerate(fig7b_pairs()):
        act, nb = chip.compartments[a], chip.compartments[n]
        act.mode = Mode.CA
        act.params = default_params(Mode.CA).replace(
            C_mem=0.5e-12, g_leak=100e-6, g_alt=200e-6, V_alt=1.0, V_th=0.8, T_pulse=T,
            tau_syn_A=0.1e-6, g_syn_scale_A=4e-3)
        act.soma_connect = act.soma_bypass = True
        nb.mode = Mode.PASSIVE
        nb.params = default_params(Mode.PASSIVE).replace(g_leak=0.1e-6, g_ic=0.1e-6)
        nb.soma_connect = True
        for row in (0, 1):
            set_synapse(chip, Block.UPPER, row, a.column, i + 1, 63)
    events = [PresynEvent(FIG7B_ONSET, Block.UPPER, 0, i + 1) for i in range(len(FIG7B_PULSES))]
    probes = [f"{k}.{c}" for a, n, _ in fig7b_pairs() for k, c in (("V", a), ("V", n), ("alt", a))]
    engine = EngineConfig(dt=dt, t_end=t_end, probes=probes)
    return ExperimentSpec("fig7b", chip, engine, events=events,
                          description="up-states of 70, 9 and 30 us pulling up their neighbours")


# -- NMDA plateau gating somatic output -------------------------------------------------------

FIG7C_DENDRITE_ONSETS = (100e-6, 300e-6)
FIG7C_SOMA_INPUTS = (50e-6, 120e-6, 140e-6, 200e-6, 250e-6, 320e-6, 340e-6, 420e-6)


def fig7c(t_end: float = 500e-6, dt: float = 1e-8) -> ExperimentSpec:
    """Na soma bypassed onto a line with an NMDA dendrite.

    Identical somatic inputs only cause spikes while the dendrite is in its
    plateau.
    """
    chip = ChipConfig.empty(2, 8)
    soma, dend = chip.compartments[U0], chip.compartments[U1]
    soma.mode = Mode.NA
    soma.params = default_params(Mode.NA).replace(g_syn_scale_A=16e-6)
    soma.soma_connect = soma.soma_bypass = True
    dend.mode = Mode.NMDA
    dend.params = default_params(Mode.NMDA).replace(T_pulse=60e-6, g_ic=0.25e-6,
                                                    g_syn_scale_A=4e-6)
    dend.soma_connect = True
    set_synapse(chip, Block.UPPER, 0, 0, 1, 63)        # somatic input, row group 0
    for row in range(2, 8):                            # dendritic input, row groups 1-3
        set_synapse(chip, Block.UPPER, row, 1, 2, 63)
    events = []
    for t in FIG7C_SOMA_INPUTS:
        events.append(PresynEvent(t, Block.UPPER, 0, 1))
    for t in FIG7C_DENDRITE_ONSETS:
        for g in (1, 2, 3):
            events += volley(t, Block.UPPER, g, [2, 2], spacing=0.05e-6)
    engine = EngineConfig(dt=dt, t_end=t_end, probes=["V.U0", "V.U1", "alt.U1"])
    return ExperimentSpec("fig7c", chip, engine, events=events,
                          description="NMDA plateau gates spikes from identical somatic inputs")


# -- pyramidal neuron: coincidence detection -------------------------------------------------

PYR_TUFT_ADDR = 5
PYR_BAP_ADDR = 9
PYR_STIM_T = 20e-6
PYR_KNOBS = {
    "g_tuft": 4e-6, "g_ca_apical": 4e-6, "g_ca_soma": 2e-6, "g_basal": 0.15e-6,
    "nmda_g_alt": 10e-6, "ca_g_alt": 4e-6, "ca_V_th": 0.8, "soma_V_th": 0.9,
    "tuft_events": 2, "bap_events": 2, "pulse": 0.7e-6,
}


def pyramidal_chip(**knobs) -> tuple[ChipConfig, dict[str, CompartmentId]]:
    """Compiled one-tuft, one-basal pyramidal neuron with its synapses and parameters."""
    k = dict(PYR_KNOBS, **knobs)
    nmda = default_params(Mode.NMDA).replace(g_syn_scale_A=4e-6, g_alt=k["nmda_g_alt"])
    ca = default_params(Mode.CA).replace(V_th=k["ca_V_th"], T_pulse=15e-6, g_alt=k["ca_g_alt"])
    soma = default_params(Mode.NA).replace(V_th=k["soma_V_th"], V_exp_th=k["soma_V_th"] - 0.1)
    conductances = {"tuft": k["g_tuft"], "ca_apical": k["g_ca_apical"],
                    "ca_soma": k["g_ca_soma"], "basal": k["g_basal"]}
    m = preset_pyramidal(1, 1, conductances=conductances,
                         params={"tuft": nmda, "basal": nmda, "ca_apical": ca, "ca_basal": ca,
                                 "soma": soma})
    place = compile_morphology(m, ChipDims(4, 8))
    chip, where = place.config, place.assignment
    tuft = where["tuft0"]
    for row in range(4):                      # distal input, row groups 0-1
        set_synapse(chip, tuft.block, row, tuft.column, PYR_TUFT_ADDR, 63)
    for row in range(4, 6):                   # back-propagated soma spike, row group 2
        set_synapse(chip, tuft.block, row, tuft.column, PYR_BAP_ADDR, 63)
    return chip, where


def pyramidal(case: str, t_end: float = 80e-6, dt: float = 1e-8, **knobs) -> ExperimentSpec:
    """``case`` is ``"dendrite"`` (distal input only), ``"soma"`` (current only) or ``"both"``.

    The soma's Na spike is routed back onto tuft synapses (a back-propagating
    action potential analogue); the routing is part of the circuit and is
    the same in all three cases.
    """
    if case not in ("dendrite", "soma", "both"):
        raise ValueError(f"unknown case {case!r}")
    k = dict(PYR_KNOBS, **knobs)
    chip, where = pyramidal_chip(**knobs)
    soma, tuft, ca_top = where["soma"], where["tuft0"], where["ca_apical"]
    routing = RoutingTable()
    routing.add(soma, Mode.NA, *[Target(tuft.block, 2, PYR_BAP_ADDR)] * k["bap_events"])
    events, current = [], []
    if case in ("soma", "both"):
        current.append(CurrentPulse(PYR_STIM_T, k["pulse"], 1.5e-6))
    if case in ("dendrite", "both"):
        t = PYR_STIM_T + (0.5e-6 if case == "both" else 0.0)
        for g in (0, 1):
            events += volley(t, tuft.block, g, [PYR_TUFT_ADDR] * k["tuft_events"], spacing=0.05e-6)
    probes = [f"V.{tuft}", f"V.{ca_top}", f"V.{soma}", f"alt.{tuft}", f"alt.{ca_top}"]
    engine = EngineConfig(dt=dt, t_end=t_end, probes=probes)
    name = {"dendrite": "pyramidal_e", "soma": "pyramidal_f", "both": "pyramidal_g"}[case]
    return ExperimentSpec(name, chip, engine, events=events, current=current, routing=routing,
                          description=f"compiled pyramidal neuron, {case} input")


# -- structural plasticity ----------------------------------------------------------------------

STRUCT_CORRELATED = (3, 11, 19, 27, 35, 43, 51, 59)
STRUCT_GROUPS = (1, 2, 3)


def structural_demo(periods: int = 30, seed: int = 7, dt: float = 5e-8) -> ExperimentSpec:
    """Candidate synapses discover the eight addresses that fire just before a teacher.

    Four independent NMDA compartments receive a teacher volley (row group 0)
    once per trial.  On row groups 1-3 the correlated addresses fire 1 us
    before the teacher, the remaining 56 addresses fire as Poisson noise.
    """
    trial = 20e-6
    period = 5 * trial
    t_end = periods * period
    chip = ChipConfig.empty(4, 8)
    for c in range(4):
        comp = chip.compartments[CompartmentId(Block.UPPER, c)]
        comp.mode = Mode.NMDA
        comp.params = default_params(Mode.NMDA).replace(T_pulse=5e-6, g_syn_scale_A=6e-6)
        for row in (0, 1):
            set_synapse(chip, Block.UPPER, row, c, 0, 63)
    noise = [a for a in range(64) if a not in STRUCT_CORRELATED]
    trains = [TrainSpec("teacher", "volley", Block.UPPER, 0, [0, 0, 0, 0], 0.0, t_end,
                        period=trial, offset=10e-6)]
    for g in STRUCT_GROUPS:
        trains.append(TrainSpec(f"corr{g}", "volley", Block.UPPER, g, list(STRUCT_CORRELATED),
                                0.0, t_end, period=trial, offset=9e-6, jitter=0.2e-6,
                                seed=seed * 100 + g))
        trains.append(TrainSpec(f"noise{g}", "poisson", Block.UPPER, g, noise, 0.0, t_end,
                                rate=10e3, seed=seed * 100 + 10 + g))
    plasticity = PlasticitySpec(
        kernel="structural+stdp", period=period, theta_corr=1.5, w_init=32, w_min=8, eta=2.0,
        pool_rows=[(Block.UPPER, r) for g in STRUCT_GROUPS for r in (2 * g, 2 * g + 1)],
        pool=list(range(1, 64)), seed=seed,
        sensors=SensorParams(1.0, 1.0, 2e-6, 2e-6), correlated=list(STRUCT_CORRELATED))
    probes = [f"V.U{c}" for c in range(4)]
    engine = EngineConfig(dt=dt, t_end=t_end, probes=probes)
    return ExperimentSpec("structural_demo", chip, engine, trains=trains, plasticity=plasticity,
                          description="structural plasticity finds correlated inputs")


# -- registry -------------------------------------------------------------------------------------

SCENARIOS: dict[str, Callable[[], ExperimentSpec]] = {
    "nmda_pp": nmda_plateau,
    "fig7a": fig7a,
    "fig7b": fig7b,
    "fig7c": fig7c,
    "pyramidal_e": lambda: pyramidal("dendrite"),
    "pyramidal_f": lambda: pyramidal("soma"),
    "pyramidal_g": lambda: pyramidal("both"),
    "structural_demo": structural_demo,
}


def scenario_dir() -> Path:
    return Path(str(resources.files("dendrisim") / "scenarios"))


def scenario_path(name: str) -> Path:
    return scenario_dir() / f"{name}.ini"


def write_scenarios(directory: str | Path | None = None) -> list[Path]:
    """(Re)generate the shipped scenario files from the builders."""
    directory = Path(directory) if directory is not None else scenario_dir()
    return [save_experiment(build(), directory, name) for name, build in SCENARIOS.items()]
