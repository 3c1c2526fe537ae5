import json

import numpy as np
import pytest

from dendrisim.chip import Block, CompartmentId
from dendrisim.configio import ConfigParseError
from dendrisim.engine import CurrentPulse
from dendrisim.experiment import (ExperimentSpec, TrainSpec, dumps_experiment, load_experiment,
                                  reseed, run_experiment, save_experiment)
from dendrisim.scenarios import SCENARIOS, nmda_plateau, scenario_dir, scenario_path, write_scenarios
from dendrisim.traceio import emit_plot_data, read_columns, read_spikes

U0, U1 = CompartmentId(Block.UPPER, 0), CompartmentId(Block.UPPER, 1)


def test_shipped_scenarios_match_builders(tmp_path):
    write_scenarios(tmp_path)
    pick = lambda d: sorted(p.name for p in d.iterdir() if p.suffix in (".ini", ".stim", ".routes"))
    assert pick(tmp_path) == pick(scenario_dir())
    for p in tmp_path.iterdir():
        assert p.read_bytes() == (scenario_dir() / p.name).read_bytes(), p.name


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_scenario_files_load_and_validate(name):
    spec = load_experiment(scenario_path(name))
    assert spec.name == name and spec.validate() == []


def test_file_and_builder_runs_agree(tmp_path):
    a = run_experiment(nmda_plateau(), tmp_path / "a")
    b = run_experiment(load_experiment(scenario_path("nmda_pp")), tmp_path / "b")
    assert a.summary == b.summary
    for key in a.files:
        assert a.files[key].read_bytes() == b.files[key].read_bytes()


def test_artifacts_byte_identical_across_runs(tmp_path):
    spec = load_experiment(scenario_path("pyramidal_g"))
    a = run_experiment(spec, tmp_path / "a")
    b = run_experiment(load_experiment(scenario_path("pyramidal_g")), tmp_path / "b")
    assert set(a.files) == {"traces", "spikes", "plot", "summary"}
    for key in a.files:
        assert a.files[key].read_bytes() == b.files[key].read_bytes()
    assert read_spikes(a.files["spikes"]) == a.result.spikes


def test_summary_contents(tmp_path):
    art = run_experiment(nmda_plateau(), tmp_path)
    s = json.loads(art.files["summary"].read_text())
    assert s["name"] == "nmda_pp" and s["dropped_events"] == 0
    assert s["spike_counts"] == {"U0": 1}
    assert s["alt_interval_lengths_us"]["U0"] == [pytest.approx(30.0, abs=1e-6)]


def test_plot_data_empty_trace(tmp_path):
    p = tmp_path / "plot.txt"
    emit_plot_data(np.zeros(0), ["V.U0", "V.U1"], np.zeros((0, 2)), p)
    assert p.read_text() == "# time_us time_bio_ms V.U0 V.U1\n"
    header, data = read_columns(p)
    assert header == ["time_us", "time_bio_ms", "V.U0", "V.U1"] and data.shape == (0, 4)


def test_plot_data_time_axes_and_order(tmp_path):
    t = np.linspace(0, 10e-6, 1001)
    traces = np.column_stack([np.sin(t * 1e6), np.cos(t * 1e6), t])
    p = tmp_path / "plot.txt"
    emit_plot_data(t, ["z", "a", "m"], traces, p)
    header, data = read_columns(p)
    assert header[2:] == ["z", "a", "m"]
    assert data[-1, 0] == pytest.approx(10.0) and data[-1, 1] == pytest.approx(10.0)
    np.testing.assert_array_equal(data[:, 2:], traces)


def test_fig7c_spikes_only_inside_plateaus():
    art = run_experiment(SCENARIOS["fig7c"]())
    plateaus = art.result.alt_intervals[U1]
    soma = [s.time for s in art.result.spikes if s.compartment == U0]
    assert len(plateaus) == 2 and len(soma) == 4
    for t in soma:
        assert any(a <= t <= b for a, b in plateaus)
    # identical somatic inputs outside the plateaus produce no spike
    outside = [t for t in (50e-6, 200e-6, 250e-6, 420e-6)]
    assert not any(abs(s - t) < 5e-6 for s in soma for t in outside)


def test_experiment_round_trip(tmp_path):
    spec = SCENARIOS["structural_demo"]()
    path = save_experiment(spec, tmp_path, "demo")
    again = load_experiment(path)
    assert dumps_experiment(again, "demo.chip.ini", "demo.stim") == \
        dumps_experiment(spec, "demo.chip.ini", "demo.stim")
    assert again.all_events() == spec.all_events()
    assert again.plasticity == spec.plasticity


def test_experiment_parse_errors(tmp_path):
    (tmp_path / "c.chip.ini").write_text((scenario_dir() / "nmda_pp.chip.ini").read_text())
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nname = x\nchip = c.chip.ini\ndt = fast\n")
    with pytest.raises(ConfigParseError) as err:
        load_experiment(bad)
    assert err.value.line == 4
    bad.write_text("[experiment]\nname = x\nchip = missing.chip.ini\n")
    with pytest.raises(ConfigParseError) as err:
        load_experiment(bad)
    assert err.value.line == 3
    bad.write_text("[experiment\n")
    with pytest.raises(ConfigParseError):
        load_experiment(bad)


def test_validation_flags_current_without_input():
    spec = nmda_plateau()
    spec.current = [CurrentPulse(0.0, 1e-6, 1e-7)]
    assert any("current_input" in p for p in spec.validate())
    with pytest.raises(ValueError):
        run_experiment(spec)


def test_trains_deterministic_and_bounded():
    vol = TrainSpec("v", "volley", Block.UPPER, 1, [3, 5], t_start=0.0, t_stop=100e-6,
                    period=20e-6, offset=9e-6, jitter=0.2e-6, seed=4)
    evs = vol.generate()
    assert evs == vol.generate() and len(evs) == 10
    for e in evs:
        assert abs((e.time % 20e-6) - 9e-6) <= 0.2e-6 + 1e-15
    poi = TrainSpec("p", "poisson", Block.UPPER, 0, list(range(64)), t_stop=1e-3, rate=10e3, seed=1)
    n = len(poi.generate())
    assert abs(n - 640) < 5 * np.sqrt(640)
    with pytest.raises(ValueError):
        TrainSpec("x", "burst", Block.UPPER, 0, [1]).generate()


def test_reseed_changes_trains_deterministically():
    a, b = SCENARIOS["structural_demo"](), SCENARIOS["structural_demo"]()
    reseed(a, 3), reseed(b, 3)
    assert a.all_events() == b.all_events() and a.plasticity.seed == 3
    reseed(b, 4)
    assert a.all_events() != b.all_events()


def test_fig7a_reset_and_passive_neighbour():
    res = run_experiment(SCENARIOS["fig7a"]()).result
    (spike,) = res.spikes
    assert spike.compartment == U0 and spike.time > 30e-6    # the weak volley alone stays subthreshold
    t, V, nb = res.times, res.trace("V.U0"), res.trace("V.U1")
    after = (t > spike.time) & (t < spike.time + 2e-6)
    assert V[after].min() < 0.6
    # the neighbour rises with the stimulated compartment and drops after the reset
    k = int(round(spike.time / 1e-8))
    assert nb[k] > nb[k - 300] and nb[after].min() < nb[k]
    volley = (t > 10e-6) & (t < 25e-6)
    assert nb[volley].max() > 0.6 + 0.01 and nb[volley].max() < V[volley].max()


def test_pyramidal_dendrite_only_attenuates():
    spec = SCENARIOS["pyramidal_e"]()
    res = run_experiment(spec).result
    tuft, ca, soma = (res.trace(p) for p in spec.engine.probes[:3])
    assert res.spikes == []
    rest = 0.6
    assert tuft.max() > ca.max() > rest and ca.max() >= soma.max() > rest + 0.01
