"""Columnar trace, spike and plot-data files."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chip import CompartmentId, Mode
from .engine import ACCELERATION, SimResult
from .router import SpikeRecord


def _fmt(x: float) -> str:
    return repr(float(x))


def write_columns(path: str | Path, header: Sequence[str], rows: np.ndarray) -> None:
    lines = ["# " + " ".join(header)]
    lines += [" ".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_columns(path: str | Path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    header = text[0].lstrip("#").split()
    data = [list(map(float, ln.split())) for ln in text[1:] if ln.strip()]
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def write_traces(result: SimResult, path: str | Path) -> None:
    rows = np.column_stack([result.times, result.traces]) if len(result.times) else \
        np.zeros((0, 1 + len(result.probes)))
    write_columns(path, ["time_s", *result.probes], rows)


def write_spikes(spikes: Iterable[SpikeRecord], path: str | Path) -> None:
    lines = ["# time_s compartment type"]
    lines += [f"{_fmt(s.time)} {s.compartment} {Mode(s.spike_type).value}" for s in spikes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_spikes(path: str | Path) -> list[SpikeRecord]:
    out = []
    for ln in Path(path).read_text().splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        t, cid, kind = ln.split()
        out.append(SpikeRecord(float(t), CompartmentId.parse(cid), Mode(kind)))
    return out


def emit_plot_data(times: np.ndarray, probes: Sequence[str], traces: np.ndarray,
                   path: str | Path) -> None:
    """Plot-ready columns: hardware time in us, biological time in ms, then the probes."""
    times = np.asarray(times, dtype=float)
    t_us = times * 1e6
    t_bio_ms = times * ACCELERATION * 1e3
    traces = np.asarray(traces, dtype=float).reshape(len(times), len(probes))
    rows = np.column_stack([t_us, t_bio_ms, traces]) if len(times) else np.zeros((0, 2 + len(probes)))
    write_columns(path, ["time_us", "time_bio_ms", *probes], rows)
