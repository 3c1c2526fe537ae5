import sys

import numpy as np
import pytest

from dendrisim.chip import (Block, ChipConfig, CompartmentConfig, CompartmentId, Line, Mode,
                            PARAM_NAMES, AnalogParams, SynapseCell, SynapseRow, n_segment_switches)


def random_params(rng: np.random.Generator) -> AnalogParams:
    values = {}
    for name in PARAM_NAMES:
        if name.startswith("V_") or name.startswith("E_rev"):
            values[name] = float(rng.uniform(0.0, 1.8))
        elif name == "C_mem":
            values[name] = float(rng.uniform(0.5e-12, 5e-12))
        elif name.startswith("tau_syn"):
            values[name] = float(rng.uniform(1e-7, 1e-5))
        elif name == "T_pulse":
            values[name] = float(rng.choice([0.0, rng.uniform(1e-6, 1e-4)]))
        elif name == "Delta_T":
            values[name] = float(rng.uniform(1e-3, 0.1))
        else:
            values[name] = float(rng.uniform(0.0, 1e-5)) * float(rng.integers(0, 2))
    return AnalogParams(**values)


def random_chip(rng: np.random.Generator, max_columns: int = 9) -> ChipConfig:
    """A random configuration that satisfies every invariant of ``validate_config``."""
    n = int(rng.integers(1, max_columns + 1))
    modes = list(Mode)
    comps = {}
    vertical = rng.random(n) < 0.3
    for b in Block:
        for c in range(n):
            connect = bool(rng.random() < 0.5)
            comps[CompartmentId(b, c)] = CompartmentConfig(
                mode=modes[int(rng.integers(len(modes)))],
                params=random_params(rng),
                exp_term_enabled=bool(rng.random() < 0.3),
                switch_merge_right=bool(c < n - 1 and rng.random() < 0.4),
                switch_merge_vertical=bool(vertical[c]),
                soma_connect=connect,
                soma_bypass=bool(connect and rng.random() < 0.2),
            )
    if rng.random() < 0.5:
        pick = list(comps)[int(rng.integers(len(comps)))]
        comps[pick].current_input_enabled = True
    rows = []
    for b in Block:
        for r in range(int(rng.integers(0, 7))):
            cells = [SynapseCell(int(rng.integers(64)), int(rng.integers(64))) for _ in range(n)]
            rows.append(SynapseRow(b, r, Line.A if rng.random() < 0.5 else Line.B, cells))
    switches = {b: [bool(x) for x in rng.random(n_segment_switches(n)) < 0.5] for b in Block}
    return ChipConfig(n, comps, rows, switches)


def brute_components(cfg: ChipConfig) -> set[frozenset]:
    """Connected components by repeated flood fill over explicit neighbour checks."""
    ids = cfg.compartment_ids()

    def linked(a, b):
        ca, cb = cfg.compartments[a], cfg.compartments[b]
        if a.block == b.block and abs(a.column - b.column) == 1:
            left = a if a.column < b.column else b
            return cfg.compartments[left].switch_merge_right
        if a.column == b.column and a.block != b.block:
            return ca.switch_merge_vertical and cb.switch_merge_vertical
        return False

    seen, comps = set(), set()
    for start in ids:
        if start in seen:
            continue
        group, frontier = {start}, [start]
        while frontier:
            x = frontier.pop()
            for y in ids:
                if y not in group and linked(x, y):
                    group.add(y)
                    frontier.append(y)
        seen |= group
        comps.add(frozenset(group))
    return comps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
