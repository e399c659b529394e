import json
import math
import os

import numpy as np
import pytest
import yaml

from wmmzi import io
from wmmzi.cli import main
from wmmzi.config import FIGURES, ConfigError, bundled_config_path, load_config, parse_config
from wmmzi.mzi_sim import APD3, InstrumentConfig, run_scan, simulate_events
from wmmzi.source import EmitterConfig, generate_stream


def bundled(name):
    return yaml.safe_load(bundled_config_path(name).read_text())


def small(name, **changes):
    d = bundled(name)
    d["integration_s"] = 0.5
    d["calibration"] = {"duration_s": 1.0}
    d.update(changes)
    return d


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


# ------------------------------------------------------------ formats


def test_timetag_round_trip(tmp_path):
    s = generate_stream(EmitterConfig(rate=2e4, duration=0.5, seed=4))
    io.write_timetags(tmp_path / "t.txt", s)
    tt = io.read_timetags(tmp_path / "t.txt")
    assert tt.header["format"] == "wmmzi-timetags"
    assert tt.duration == 0.5
    assert np.allclose(tt.times, s.times, atol=5e-13, rtol=0)
    assert np.array_equal(tt.bright, s.bright)
    assert not tt.is_event_log


def test_event_log_round_trip(tmp_path):
    log = simulate_events(InstrumentConfig(slit_width=2e-3), EmitterConfig(rate=2e4, duration=0.5, seed=4))
    io.write_event_log(tmp_path / "e.txt", log, {"seed": 4})
    tt = io.read_timetags(tmp_path / "e.txt")
    assert tt.is_event_log and tt.header["seed"] == 4
    assert np.array_equal(tt.channel, log.channel)
    assert np.array_equal(tt.dark, log.dark)
    assert np.array_equal(tt.branch, log.branch)
    apd3 = (log.channel == APD3) & ~log.dark
    assert np.allclose(tt.position[apd3], log.position[apd3], rtol=1e-9)
    assert np.isnan(tt.position[~apd3]).all()


def test_timetag_rejects_unknown_state(tmp_path):
    (tmp_path / "bad.txt").write_text("0.1\tbright\n0.2\tglowing\n")
    with pytest.raises(ValueError, match="unknown state"):
        io.read_timetags(tmp_path / "bad.txt")


def test_scan_csv_and_json_round_trip(tmp_path):
    scan = run_scan(InstrumentConfig(), EmitterConfig(rate=2e4), "wedge_position", [0.0, 1e-5, 2e-5], 0.5, seed=3)
    io.write_scan_csv(scan, tmp_path / "scan.csv")
    io.write_scan_json(scan, tmp_path / "scan.json")
    table = io.read_scan_csv(tmp_path / "scan.csv")
    assert list(table) == list(io.SCAN_COLUMNS)
    assert (tmp_path / "scan.csv").read_text().splitlines()[0] == ",".join(io.SCAN_COLUMNS)
    assert np.array_equal(table["apd1_cps"], scan.column("apd1_cps"))
    back = io.read_scan_json(tmp_path / "scan.json")
    assert back.points == scan.points
    assert back.instrument.to_dict() == scan.instrument.to_dict()
    assert back.emitter == scan.emitter


def test_json_has_no_nan(tmp_path):
    io.dump_json({"a": float("nan"), "b": [np.float64(1.5), np.int64(2)], "c": np.bool_(True)}, tmp_path / "x.json")
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": None, "b": [1.5, 2], "c": True}


# ------------------------------------------------------------ config


@pytest.mark.parametrize("name", sorted(set(FIGURES.values()) | {"reproduce-calibration", "full-report"}))
def test_bundled_configs_validate(name):
    cfg = load_config(bundled_config_path(name))
    inst = cfg.instrument.build()
    assert inst.beams.wavelength == pytest.approx(650e-9)
    assert math.degrees(inst.beams.theta) == pytest.approx(1.75)
    assert inst.apd3.dark_rate == 32.0


def test_missing_slit_width_names_the_field():
    d = bundled("reproduce-longitudinal")
    del d["instrument"]["slit_width_um"]
    with pytest.raises(ConfigError, match=r"instrument\.slit_width_um"):
        parse_config(d)


def test_null_slit_width_removes_slit():
    d = bundled("reproduce-longitudinal")
    d["instrument"]["slit_width_um"] = None
    assert math.isinf(parse_config(d).instrument.build().slit_width)


@pytest.mark.parametrize("path,value,fragment", [
    (("instrument", "reflectance"), 1.5, "instrument.reflectance"),
    (("integration_s",), 0.0, "integration_s"),
    (("sweep", "step_mm"), -0.1, "sweep.step_mm"),
    (("instrument", "bogus_field"), 1, "instrument.bogus_field"),
    (("seed",), -3, "seed"),
])
def test_config_errors_carry_field_path(path, value, fragment):
    d = bundled("reproduce-longitudinal")
    node = d
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        parse_config(d)


def test_sweep_required_for_scans():
    d = bundled("reproduce-longitudinal")
    del d["sweep"]
    with pytest.raises(ConfigError, match="requires a sweep"):
        parse_config(d)


def test_sweep_values_inclusive():
    cfg = load_config(bundled_config_path("reproduce-longitudinal"))
    v = cfg.sweep.values()
    assert len(v) == 31 and v[0] == 0.0 and v[-1] == pytest.approx(0.45e-3)


def test_unreadable_and_invalid_yaml(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_config(tmp_path / "bad.yaml")


# ------------------------------------------------------------ cli


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", str(bundled_config_path("reproduce-longitudinal"))]) == 0
    d = bundled("reproduce-longitudinal")
    del d["instrument"]["slit_width_um"]
    assert main(["validate", str(write_cfg(tmp_path, d))]) == 2
    assert "instrument.slit_width_um" in capsys.readouterr().err


def test_cli_calibration_seed_override(tmp_path, capsys):
    cfg = write_cfg(tmp_path, small("reproduce-calibration"))
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o"), "--seed", "77"]) == 0
    assert capsys.readouterr().out.startswith("R=")
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["seed"] == 77


def test_cli_longitudinal_outputs_and_determinism(tmp_path, capsys):
    d = small("reproduce-longitudinal", sweep={"start_mm": 0.0, "stop_mm": 0.3, "step_mm": 0.03})
    d["emitter"]["bright_to_dark_per_s"] = 0.0
    cfg = write_cfg(tmp_path, d)
    outs = []
    for i, threads in enumerate((1, 3)):
        out = tmp_path / f"run{i}"
        assert main(["simulate", str(cfg), "--out", str(out), "--threads", str(threads), "--deterministic"]) == 0
        outs.append(out)
    line = capsys.readouterr().out.splitlines()[0]
    assert line.startswith("V=") and " D=" in line and " V2+D2=" in line
    names = sorted(p.name for p in outs[0].iterdir())
    assert {"scan.csv", "scan.json", "report.json", "fig4b_fringe.csv", "fig4b_fringe.svg",
            "fig4a_paths.svg"} <= set(names)
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n
    svg = (outs[0] / "fig4b_fringe.svg").read_text()
    assert "<!-- provenance:" in svg and "<dc:date>" not in svg
    report = json.loads((outs[0] / "report.json").read_text())
    for key in ("fit", "duality", "calibration", "neutrality", "warnings", "ground_truth"):
        assert key in report


def test_cli_svg_timestamp_without_deterministic(tmp_path):
    d = small("reproduce-longitudinal", sweep={"start_mm": 0.0, "stop_mm": 0.15, "step_mm": 0.03})
    cfg = write_cfg(tmp_path, d)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "<dc:date>" in (tmp_path / "o" / "fig4b_fringe.svg").read_text()


def test_cli_g2_and_analyze_tags(tmp_path, capsys):
    d = bundled("reproduce-g2")
    d["g2"] = {"duration_s": 3.0, "dark_trace_s": 5.0}
    cfg = write_cfg(tmp_path, d)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "g"), "--event-log", "--deterministic"]) == 0
    report = json.loads((tmp_path / "g" / "report.json").read_text())
    assert report["g2_zero"] < 0.5
    for n in ("fig3c_g2.csv", "fig3c_g2.svg", "fig3ab_traces.svg", "fig3d_dark.svg", "events.txt"):
        assert (tmp_path / "g" / n).exists()
    assert main(["analyze", str(tmp_path / "g" / "events.txt"), "--out", str(tmp_path / "a")]) == 0
    assert capsys.readouterr().out.splitlines()[-1].startswith("g2(0)=")
    assert json.loads((tmp_path / "a" / "analysis.json").read_text())["kind"] == "event-log"


def test_cli_analyze_scan(tmp_path, capsys):
    d = small("reproduce-longitudinal", sweep={"start_mm": 0.0, "stop_mm": 0.3, "step_mm": 0.02})
    d["integration_s"] = 2.0
    cfg = write_cfg(tmp_path, d)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s"), "--deterministic"]) == 0
    sim = json.loads((tmp_path / "s" / "report.json").read_text())
    assert main(["analyze", str(tmp_path / "s" / "scan.csv"), "--out", str(tmp_path / "a")]) == 0
    ana = json.loads((tmp_path / "a" / "analysis.json").read_text())
    assert ana["kind"] == "longitudinal"
    assert ana["fit"]["visibility"] == pytest.approx(sim["fit"]["visibility"], rel=1e-6)
    assert ana["duality"]["D"] == 0.83
    assert main(["analyze", str(tmp_path / "s" / "scan.csv"), "--out", str(tmp_path / "b"),
                 "--reflectance", "0.5"]) == 0
    assert json.loads((tmp_path / "b" / "analysis.json").read_text())["duality"]["D"] == 0.5


def test_cli_analyze_missing_input(tmp_path):
    assert main(["analyze", str(tmp_path / "none.csv")]) == 2


def test_cli_runtime_error_exit_1(tmp_path, capsys):
    d = small("reproduce-calibration")
    d["emitter"]["rate_cps"] = 2e7  # beyond 1/(4 tau_c)
    d["calibration"]["source_rate_cps"] = 2e7
    assert main(["simulate", str(write_cfg(tmp_path, d)), "--out", str(tmp_path / "o")]) == 1
    assert "too high" in capsys.readouterr().err


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_cli_unwritable_output(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    assert main(["simulate", str(write_cfg(tmp_path, small("reproduce-calibration"))), "--out", str(ro / "x")]) == 2


def test_cli_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", str(write_cfg(tmp_path, small("reproduce-calibration"))), "--out",
                 str(blocker / "x")]) == 2
    assert "not writable" in capsys.readouterr().err


def test_cli_full_report(tmp_path, capsys):
    d = small("full-report", sweep={"start_mm": 0.0, "stop_mm": 0.3, "step_mm": 0.03},
              lateral_sweep={"start_mm": -4.0, "stop_mm": 4.0, "step_mm": 0.4}, integration_s=1.0)
    d["g2"] = {"duration_s": 2.0, "dark_trace_s": 2.0}
    assert main(["simulate", str(write_cfg(tmp_path, d)), "--out", str(tmp_path / "f"), "--deterministic"]) == 0
    report = json.loads((tmp_path / "f" / "report.json").read_text())
    assert set(report) >= {"calibration", "longitudinal", "lateral", "g2", "seed"}
    for sub in ("calibration", "longitudinal", "lateral", "g2"):
        assert (tmp_path / "f" / sub / "report.json").exists()
    assert "longitudinal:" in capsys.readouterr().out


def test_cli_reproduce_rejects_unknown_figure():
    with pytest.raises(SystemExit) as info:
        main(["reproduce", "fig9z"])
    assert info.value.code == 2
