"""Plain-text (INI-style) chip configuration files.

Layout::

    [chip]
    n_columns = 4
    soma_segment_switches.upper =
    soma_segment_switches.lower =

    [compartment U0]
    mode = NMDA
    exp_term_enabled = false
    ...
    V_leak = 0.6
    ...

    [row U0]
    target_line = A
    addresses = 0 0 0 0
    weights = 0 0 0 0

Floats are written with ``repr`` so that load/save round-trips bit-exactly.
"""

from __future__ import annotations

import configparser
import io
from pathlib import Path

from .chip import (PARAM_NAMES, AnalogParams, Block, ChipConfig, CompartmentConfig,
                   CompartmentId, Line, Mode, SynapseCell, SynapseRow)

_FLAGS = ("exp_term_enabled", "switch_merge_right", "switch_merge_vertical",
          "soma_connect", "soma_bypass", "current_input_enabled")


class ConfigParseError(ValueError):
    """Malformed configuration text; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


def new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep V_leak etc. case-sensitive
    return parser


def section_lines(text: str) -> dict[str, int]:
    """Map section names to the 1-based line they start on."""
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            out.setdefault(s[1:-1].strip(), i)
    return out


def option_line(text: str, section: str, option: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip() == option:
            return i
    return None


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def fmt_bool(flag: bool) -> str:
    return "true" if flag else "false"


def fmt_float(x: float) -> str:
    return repr(float(x))


def dumps_chip(cfg: ChipConfig) -> str:
    parser = new_parser()
    parser["chip"] = {
        "n_columns": str(cfg.n_columns),
        **{f"soma_segment_switches.{b.name.lower()}":
           " ".join(fmt_bool(f) for f in cfg.soma_segment_switches.get(b, []))
           for b in Block},
    }
    for cid in cfg.compartment_ids():
        comp = cfg.compartments[cid]
        sec = {"mode": comp.mode.value}
        sec.update({flag: fmt_bool(getattr(comp, flag)) for flag in _FLAGS})
        sec.update({name: fmt_float(getattr(comp.params, name)) for name in PARAM_NAMES})
        parser[f"compartment {cid}"] = sec
    for row in cfg.rows:
        parser[f"row {Block(row.block).label}{row.row_index}"] = {
            "target_line": row.target_line.value,
            "addresses": " ".join(str(c.address) for c in row.cells),
            "weights": " ".join(str(c.weight) for c in row.cells),
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def loads_chip(text: str, source: str | None = None) -> ChipConfig:
    parser = new_parser()
    try:
        parser.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigParseError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source)

    def fail(section: str, option: str | None, message: str):
        line = option_line(text, section, option) if option else section_lines(text).get(section)
        raise ConfigParseError(f"[{section}] {message}", line, source)

    if "chip" not in parser:
        raise ConfigParseError("missing [chip] section", None, source)
    chip = parser["chip"]
    try:
        n_columns = int(chip["n_columns"])
    except (KeyError, ValueError):
        fail("chip", "n_columns", "n_columns must be an integer")
    switches = {}
    for b in Block:
        key = f"soma_segment_switches.{b.name.lower()}"
        try:
            switches[b] = [parse_bool(t) for t in chip.get(key, "").split()]
        except ValueError as exc:
            fail("chip", key, str(exc))

    compartments = {}
    rows = []
    for name in parser.sections():
        sec = parser[name]
        kind, _, ident = name.partition(" ")
        if kind == "chip":
            continue
        try:
            block, index = Block.parse(ident[:1]), int(ident[1:])
        except (ValueError, IndexError):
            fail(name, None, f"bad identifier {ident!r}")
        if kind == "compartment":
            cid = CompartmentId(block, index)
            try:
                mode = Mode(sec.get("mode", "Disabled"))
            except ValueError:
                fail(name, "mode", f"unknown mode {sec.get('mode')!r}")
            values = {}
            for pname in PARAM_NAMES:
                if pname in sec:
                    try:
                        values[pname] = float(sec[pname])
                    except ValueError:
                        fail(name, pname, f"{pname} must be a number")
            flags = {}
            for flag in _FLAGS:
                try:
                    flags[flag] = parse_bool(sec.get(flag, "false"))
                except ValueError as exc:
                    fail(name, flag, str(exc))
            for key in sec:
                if key not in PARAM_NAMES and key not in _FLAGS and key != "mode":
                    fail(name, key, f"unknown key {key!r}")
            compartments[cid] = CompartmentConfig(mode=mode, params=AnalogParams(**values), **flags)
        elif kind == "row":
            try:
                line = Line(sec.get("target_line", "A"))
            except ValueError:
                fail(name, "target_line", "target_line must be A or B")
            try:
                addrs = [int(t) for t in sec.get("addresses", "").split()]
            except ValueError:
                fail(name, "addresses", "addresses must be integers")
            try:
                weights = [int(t) for t in sec.get("weights", "").split()]
            except ValueError:
                fail(name, "weights", "weights must be integers")
            if len(addrs) != len(weights):
                fail(name, "weights", "addresses and weights differ in length")
            cells = [SynapseCell(a, w) for a, w in zip(addrs, weights)]
            rows.append(SynapseRow(block, index, line, cells))
        else:
            fail(name, None, f"unknown section kind {kind!r}")
    return ChipConfig(n_columns, compartments, rows, switches)


def load_chip(path: str | Path) -> ChipConfig:
    path = Path(path)
    return loads_chip(path.read_text(), source=str(path))


def save_chip(cfg: ChipConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_chip(cfg))
