"""End-to-end runs: simulate, analyze, write tables, reports and figures."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io, plots
from .analysis import (AnalysisWarning, DualityMetrics, LateralPriors, SegmentationError, calibrate_reflectivity,
                       calibrate_reflectivity_error, compute_g2, duality_metrics, fit_fringe, fit_lateral,
                       lateral_model, rate_trace, segment_bright, sinusoid_amplitude, subtract_dark)
from .config import ConfigError, ScenarioConfig
from .mzi_sim import (APD1, APD2, APD3, InstrumentConfig, ScanResult, expected_visibility, run_calibration,
                      run_scan, simulate_events)
from .source import analytic_g2
from .wavemodel import fringe_period

G2_UNIT = (1 << 40) + 16
DARK_TRACE_UNIT = (1 << 40) + 17


@dataclass
class Outcome:
    report: dict
    summary: str
    files: list[str] = field(default_factory=list)


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ConfigError(f"output_dir: {out} is not writable ({err.strerror})") from None
    return out


class _Recorder:
    """Collects AnalysisWarning messages raised inside the block."""

    def __enter__(self):
        self._ctx = warnings.catch_warnings(record=True)
        self.records = self._ctx.__enter__()
        warnings.simplefilter("always", AnalysisWarning)
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)

    @property
    def messages(self) -> list[str]:
        return [str(w.message) for w in self.records if issubclass(w.category, AnalysisWarning)]


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _provenance(cfg: ScenarioConfig, **extra) -> dict:
    return {"scenario": cfg.scenario, "seed": cfg.seed, **extra}


# ------------------------------------------------------------ calibration


def calibration_step(cfg: ScenarioConfig, instrument: InstrumentConfig) -> dict:
    rate = cfg.calibration.source_rate_cps
    em = cfg.emitter.build(cfg.seed, cfg.calibration.duration_s, rate)
    mirror = run_calibration(instrument, em, "mirror", cfg.calibration.duration_s)
    prism = run_calibration(instrument, em, "prism", cfg.calibration.duration_s)
    r_m, t_f = instrument.mirror_reflectivity, instrument.screen.face_transmission
    R = calibrate_reflectivity(mirror.rate, prism.rate, r_m, t_f)
    R_err = calibrate_reflectivity_error(mirror.rate, prism.rate, mirror.rate_error, prism.rate_error, r_m, t_f)
    ratio = prism.rate / mirror.rate
    ratio_err = ratio * math.hypot(mirror.rate_error / mirror.rate,
                                   prism.rate_error / prism.rate if prism.rate > 0 else 0.0)
    return {
        "duration_s": cfg.calibration.duration_s,
        "mirror": {"rate_cps": mirror.rate, "rate_error_cps": mirror.rate_error, "counts": mirror.counts,
                   "bright_exposure_s": mirror.exposure, "reflectivity": r_m},
        "prism": {"rate_cps": prism.rate, "rate_error_cps": prism.rate_error, "counts": prism.counts,
                  "bright_exposure_s": prism.exposure},
        "face_transmission": t_f,
        "ratio": ratio,
        "ratio_error": ratio_err,
        "R": R,
        "R_error": R_err,
        "configured_reflectance": instrument.screen.reflectance,
    }


def run_calibration_scenario(cfg: ScenarioConfig, out: Path, deterministic: bool = True, **_) -> Outcome:
    instrument = cfg.instrument.build()
    with _Recorder() as rec:
        cal = calibration_step(cfg, instrument)
    report = {"scenario": "calibration", "seed": cfg.seed, "calibration": cal, "warnings": rec.messages}
    io.dump_json(report, out / "report.json")
    summary = (f"R={cal['R']:.4f}±{cal['R_error']:.4f} mirror={cal['mirror']['rate_cps'] / 1e3:.1f} kcps "
               f"prism={cal['prism']['rate_cps'] / 1e3:.1f} kcps")
    return Outcome(report, summary, ["report.json"])


# ------------------------------------------------------------ scans


def _write_scan(scan: ScanResult, out: Path) -> list[str]:
    io.write_scan_csv(scan, out / "scan.csv")
    io.write_scan_json(scan, out / "scan.json")
    return ["scan.csv", "scan.json"]


def _neutrality(x, scan: ScanResult, period: float) -> dict:
    res = {}
    for ch in ("apd1", "apd2"):
        t = sinusoid_amplitude(x, scan.column(f"{ch}_cps"), scan.errors(ch), period)
        res[ch] = {"amplitude_cps": t.amplitude, "amplitude_error_cps": t.error, "mean_cps": t.offset,
                   "consistent_with_zero_3sigma": t.consistent_with_zero(3.0)}
    return res


def _duality(fit, cal) -> DualityMetrics:
    return duality_metrics(fit.visibility, cal["R"], fit.visibility_error, cal["R_error"])


def run_longitudinal(cfg: ScenarioConfig, out: Path, threads: int = 1, deterministic: bool = True) -> Outcome:
    instrument = cfg.instrument.build()
    emitter = cfg.emitter.build(cfg.seed, cfg.integration_s)
    values = cfg.sweep.values()
    with _Recorder() as rec:
        scan = run_scan(instrument, emitter, "wedge_position", values, cfg.integration_s, cfg.seed, threads)
        files = _write_scan(scan, out)
        x = values * 1e3  # mm
        y = subtract_dark(scan.column("apd3_cps"), instrument.apd3.dark_rate)
        err = scan.errors("apd3")
        fit = fit_fringe(x, y, err)
        cal = calibration_step(cfg, instrument)
        metrics = _duality(fit, cal)
    per_mm = 1.0 / fit.period
    k = instrument.beams.k
    expected_per_mm = k * (instrument.wedge_index - 1) * math.tan(instrument.wedge_angle) / (2 * math.pi) * 1e-3

    xm = np.linspace(x.min(), x.max(), 400)
    model = fit.offset + fit.amplitude * np.cos(2 * np.pi * xm / fit.period + fit.phase)
    _write_rows(out / "fig4b_fringe.csv", ["wedge_position_mm", "apd3_corrected_cps", "error_cps", "fit_cps"],
                zip(x, y, err, fit.offset + fit.amplitude * np.cos(2 * np.pi * x / fit.period + fit.phase)))
    prov = _provenance(cfg, figure="fig4b")
    plots.fringe_plot(out / "fig4b_fringe.svg", x, y, err, xm, model, "wedge position (mm)",
                      f"Longitudinal fringe, V = {fit.visibility:.3f}", prov, deterministic)
    plots.rate_traces_plot(out / "fig4a_paths.svg", x,
                           {"APD1": (scan.column("apd1_cps"), scan.errors("apd1")),
                            "APD2": (scan.column("apd2_cps"), scan.errors("apd2"))},
                           "wedge position (mm)", "Path channels", _provenance(cfg, figure="fig4a"), deterministic)
    files += ["fig4b_fringe.csv", "fig4b_fringe.svg", "fig4a_paths.svg"]

    report = {
        "scenario": "longitudinal",
        "seed": cfg.seed,
        "fit": fit.to_dict(),
        "fringes_per_mm": per_mm,
        "fringes_per_mm_error": fit.errors["period"] / fit.period**2,
        "expected_fringes_per_mm": expected_per_mm,
        "neutrality": _neutrality(x, scan, fit.period),
        "calibration": cal,
        "duality": metrics.to_dict(),
        "ground_truth": {"expected_visibility": expected_visibility(instrument),
                         "coherence": instrument.coherence, "reflectance": instrument.screen.reflectance},
        "warnings": rec.messages,
    }
    io.dump_json(report, out / "report.json")
    files.append("report.json")
    return Outcome(report, metrics.summary(), files)


def lateral_priors(instrument: InstrumentConfig) -> LateralPriors:
    """Geometry seeds in image-plane millimetres."""
    m = instrument.magnification * 1e3
    slit = 0.0 if math.isinf(instrument.slit_width) else instrument.slit_width * 1e3
    return LateralPriors(center=instrument.beam_center * m, separation=instrument.separation * m,
                         waist=instrument.waist * m, period=fringe_period(instrument.beams, instrument.screen) * m,
                         slit_width=slit)


def run_lateral(cfg: ScenarioConfig, out: Path, threads: int = 1, deterministic: bool = True,
                sweep=None) -> Outcome:
    instrument = cfg.instrument.build()
    emitter = cfg.emitter.build(cfg.seed, cfg.integration_s)
    values = (sweep or cfg.sweep).values()
    with _Recorder() as rec:
        scan = run_scan(instrument, emitter, "slit_position", values, cfg.integration_s, cfg.seed, threads)
        files = _write_scan(scan, out)
        x = values * 1e3
        y = subtract_dark(scan.column("apd3_cps"), instrument.apd3.dark_rate)
        err = scan.errors("apd3")
        priors = lateral_priors(instrument)
        fit = fit_lateral(x, y, err, priors)
        cal = calibration_step(cfg, instrument)
        metrics = _duality(fit, cal)

    params = dict(scale=fit.offset / 2, center=fit.extra["center"], separation=fit.extra["separation"],
                  waist=fit.extra["waist"], period=fit.period, phase=fit.phase, visibility=fit.visibility,
                  background=fit.extra["background"], slit_width=priors.slit_width)
    xm = np.linspace(x.min(), x.max(), 800)
    _write_rows(out / "fig4d_lateral.csv", ["slit_position_mm", "apd3_corrected_cps", "error_cps", "fit_cps"],
                zip(x, y, err, lateral_model(x, **params)))
    plots.fringe_plot(out / "fig4d_lateral.svg", x, y, err, xm, lateral_model(xm, **params), "slit position (mm)",
                      f"Lateral fringe, plane-wave V = {fit.visibility:.3f}", _provenance(cfg, figure="fig4d"),
                      deterministic)
    plots.rate_traces_plot(out / "fig4c_paths.svg", x,
                           {"APD1": (scan.column("apd1_cps"), scan.errors("apd1")),
                            "APD2": (scan.column("apd2_cps"), scan.errors("apd2"))},
                           "slit position (mm)", "Path channels", _provenance(cfg, figure="fig4c"), deterministic)
    files += ["fig4d_lateral.csv", "fig4d_lateral.svg", "fig4c_paths.svg"]

    report = {
        "scenario": "lateral",
        "seed": cfg.seed,
        "fit": fit.to_dict(),
        "neutrality": _neutrality(x, scan, fit.period),
        "calibration": cal,
        "duality": metrics.to_dict(),
        "ground_truth": {"coherence": instrument.coherence, "reflectance": instrument.screen.reflectance},
        "warnings": rec.messages,
    }
    io.dump_json(report, out / "report.json")
    files.append("report.json")
    return Outcome(report, metrics.summary(), files)


# ------------------------------------------------------------ g2


def bright_selection(times, mask, edges):
    """Keep events falling in bins flagged by ``mask``."""
    idx = np.searchsorted(edges, times, side="right") - 1
    ok = (idx >= 0) & (idx < len(mask))
    keep = np.zeros(len(times), dtype=bool)
    keep[ok] = mask[idx[ok]]
    return times[keep]


def run_g2(cfg: ScenarioConfig, out: Path, deterministic: bool = True, event_log: bool = False, **_) -> Outcome:
    instrument = cfg.instrument.build()
    g = cfg.g2
    em = cfg.emitter.build(cfg.seed, g.duration_s)
    with _Recorder() as rec:
        log = simulate_events(instrument, em, unit=G2_UNIT)
        a, b = log.tags(APD1), log.tags(APD2)
        edges, trace_a = rate_trace(a, log.exposure, g.trace_bin_ms * 1e-3)
        _, trace_b = rate_trace(b, log.exposure, g.trace_bin_ms * 1e-3)
        total = trace_a + trace_b
        try:
            mask = segment_bright(total)
        except SegmentationError:
            warnings.warn("no bright/dark separation in the path-channel trace; using every bin",
                          AnalysisWarning)
            mask = np.ones(len(total), dtype=bool)
        a_sel, b_sel = bright_selection(a, mask, edges), bright_selection(b, mask, edges)
        bright_time = float(np.count_nonzero(mask)) * g.trace_bin_ms * 1e-3
        hist = compute_g2(a_sel, b_sel, g.bin_ns * 1e-9, g.window_ns * 1e-9, duration=bright_time)

        dark_em = replace(em, rate=0.0, duration=g.dark_trace_s)
        dark_log = simulate_events(instrument, dark_em, unit=DARK_TRACE_UNIT)
        d_edges, dark_trace = rate_trace(dark_log.tags(APD3), g.dark_trace_s, 1.0)

    truth_bright = log.bright_exposure
    zero = hist.zero_bin
    zero_err = float(hist.g2_error[len(hist.g2) // 2])
    tau_fine = np.linspace(-g.window_ns, g.window_ns, 1201) * 1e-9
    model = analytic_g2(tau_fine, em) if em.tau_c > 0 else None

    _write_rows(out / "fig3c_g2.csv", ["tau_s", "coincidences", "g2", "g2_error"], hist.to_rows())
    centers = 0.5 * (edges[1:] + edges[:-1])
    _write_rows(out / "fig3ab_traces.csv", ["time_s", "apd1_cps", "apd2_cps", "bright"],
                zip(centers, trace_a, trace_b, mask.astype(float)))
    _write_rows(out / "fig3d_dark.csv", ["time_s", "apd3_dark_cps"], zip(0.5 * (d_edges[1:] + d_edges[:-1]),
                                                                         dark_trace))
    plots.g2_plot(out / "fig3c_g2.svg", hist.tau, hist.g2, hist.g2_error, tau_fine, model,
                  f"g2(0) = {zero:.3f}", _provenance(cfg, figure="fig3c"), deterministic)
    plots.rate_traces_plot(out / "fig3ab_traces.svg", centers, {"APD1": (trace_a, None), "APD2": (trace_b, None)},
                           "time (s)", "Path-channel traces", _provenance(cfg, figure="fig3ab"), deterministic)
    plots.rate_traces_plot(out / "fig3d_dark.svg", 0.5 * (d_edges[1:] + d_edges[:-1]),
                           {"APD3 dark": (dark_trace, None)}, "time (s)", "APD3 dark counts",
                           _provenance(cfg, figure="fig3d"), deterministic)
    files = ["fig3c_g2.csv", "fig3ab_traces.csv", "fig3d_dark.csv", "fig3c_g2.svg", "fig3ab_traces.svg",
             "fig3d_dark.svg"]
    if event_log:
        io.write_event_log(out / "events.txt", log, {"seed": cfg.seed, "emitter": em.to_dict()})
        files.append("events.txt")

    report = {
        "scenario": "g2",
        "seed": cfg.seed,
        "bin_width_s": hist.bin_width,
        "window_s": hist.window,
        "g2_zero": zero,
        "g2_zero_error": zero_err,
        "analytic_g2_zero_bin": _analytic_bin_mean(em, hist.bin_width) if em.tau_c > 0 else None,
        "coincidences_zero_bin": int(hist.counts[len(hist.counts) // 2]),
        "apd1_events": int(len(a_sel)),
        "apd2_events": int(len(b_sel)),
        "bright_bins": int(np.count_nonzero(mask)),
        "bright_time_s": bright_time,
        "true_bright_time_s": truth_bright,
        "dark_rate_cps": float(np.mean(dark_trace)),
        "warnings": rec.messages,
    }
    io.dump_json(report, out / "report.json")
    files.append("report.json")
    summary = f"g2(0)={zero:.3f}±{zero_err:.3f} bin={g.bin_ns:g} ns dark={report['dark_rate_cps']:.1f} cps"
    return Outcome(report, summary, files)


def _analytic_bin_mean(em, bin_width: float) -> float:
    h = bin_width / 2
    # mean of 1 - exp(-|tau|/tau_c) over [-h, h]
    return 1.0 - em.tau_c / h * (1.0 - math.exp(-h / em.tau_c))


# ------------------------------------------------------------ dispatch


def run_full(cfg: ScenarioConfig, out: Path, threads: int = 1, deterministic: bool = True,
             event_log: bool = False) -> Outcome:
    parts = {
        "calibration": run_calibration_scenario(cfg, _outdir(out / "calibration"), deterministic),
        "longitudinal": run_longitudinal(cfg, _outdir(out / "longitudinal"), threads, deterministic),
        "lateral": run_lateral(cfg, _outdir(out / "lateral"), threads, deterministic, sweep=cfg.lateral_sweep),
        "g2": run_g2(cfg, _outdir(out / "g2"), deterministic, event_log),
    }
    report = {"scenario": "full-report", "seed": cfg.seed, **{k: v.report for k, v in parts.items()}}
    io.dump_json(report, out / "report.json")
    summary = " | ".join(f"{k}: {v.summary}" for k, v in parts.items())
    files = [f"{k}/{f}" for k, v in parts.items() for f in v.files] + ["report.json"]
    return Outcome(report, summary, files)


def run(cfg: ScenarioConfig, out=None, threads: int = 1, deterministic: bool = True,
        event_log: bool = False) -> Outcome:
    out = _outdir(out if out is not None else cfg.output_dir)
    if cfg.scenario == "longitudinal":
        return run_longitudinal(cfg, out, threads, deterministic)
    if cfg.scenario == "lateral":
        return run_lateral(cfg, out, threads, deterministic)
    if cfg.scenario == "calibration":
        return run_calibration_scenario(cfg, out, deterministic)
    if cfg.scenario == "g2":
        return run_g2(cfg, out, deterministic, event_log)
    return run_full(cfg, out, threads, deterministic, event_log)


# ------------------------------------------------------------ offline analysis


def analyze_scan(path, out: Path, reflectance: float | None = None, reflectance_error: float = 0.0,
                 dark_cps: float | None = None, lateral: bool | None = None,
                 deterministic: bool = True) -> Outcome:
    """Fit a scan table written by ``simulate``.

    The sibling scan.json, when present, supplies the sweep kind, the APD3
    dark rate, geometry priors and the configured reflectance.
    """
    path = Path(path)
    table = io.read_scan_csv(path)
    sidecar = path.with_suffix(".json")
    scan = io.read_scan_json(sidecar) if sidecar.exists() else None
    instrument = scan.instrument if scan is not None else None
    if lateral is None:
        lateral = scan is not None and scan.sweep == "slit_position"
    if dark_cps is None:
        dark_cps = instrument.apd3.dark_rate if instrument is not None else 0.0
    if reflectance is None and instrument is not None:
        reflectance = instrument.screen.reflectance

    integ = table["integration_s"]
    x = table["sweep_value"] * 1e3
    err = {ch: np.sqrt(np.maximum(np.rint(table[f"{ch}_cps"] * integ), 1)) / integ
           for ch in ("apd1", "apd2", "apd3")}
    with _Recorder() as rec:
        y = subtract_dark(table["apd3_cps"], dark_cps)
        if lateral:
            if instrument is None:
                raise ValueError(f"lateral analysis needs geometry priors from {sidecar.name}")
            fit = fit_lateral(x, y, err["apd3"], lateral_priors(instrument))
        else:
            fit = fit_fringe(x, y, err["apd3"])
        neutrality = {}
        for ch in ("apd1", "apd2"):
            t = sinusoid_amplitude(x, table[f"{ch}_cps"], err[ch], fit.period)
            neutrality[ch] = {"amplitude_cps": t.amplitude, "amplitude_error_cps": t.error, "mean_cps": t.offset,
                              "consistent_with_zero_3sigma": t.consistent_with_zero(3.0)}
        metrics = None
        if reflectance is not None:
            metrics = duality_metrics(fit.visibility, reflectance, fit.visibility_error, reflectance_error)
        else:
            warnings.warn("no reflectance available; D and V2+D2 not reported", AnalysisWarning)

    if lateral:
        params = dict(scale=fit.offset / 2, period=fit.period, phase=fit.phase, visibility=fit.visibility,
                      slit_width=lateral_priors(instrument).slit_width,
                      **{k: fit.extra[k] for k in ("center", "separation", "waist", "background")})
        model = lateral_model(x, **params)
    else:
        model = fit.offset + fit.amplitude * np.cos(2 * np.pi * x / fit.period + fit.phase)
    name = "lateral" if lateral else "fringe"
    _write_rows(out / f"analysis_{name}.csv", ["sweep_value_mm", "apd3_corrected_cps", "error_cps", "fit_cps"],
                zip(x, y, err["apd3"], model))
    report = {
        "source": str(path.name),
        "kind": "lateral" if lateral else "longitudinal",
        "dark_cps": dark_cps,
        "fit": fit.to_dict(),
        "neutrality": neutrality,
        "duality": metrics.to_dict() if metrics else None,
        "warnings": rec.messages,
    }
    io.dump_json(report, out / "analysis.json")
    summary = metrics.summary() if metrics else f"V={fit.visibility:.3f}±{fit.visibility_error:.3f}"
    return Outcome(report, summary, [f"analysis_{name}.csv", "analysis.json"])


def analyze_tags(path, out: Path, bin_ns: float = 3.0, window_ns: float = 300.0,
                 trace_bin_ms: float = 100.0) -> Outcome:
    """g2 and bright-state statistics from a time-tag file or event log.

    Event logs correlate APD1 against APD2. A plain emission stream has a
    single channel and is autocorrelated with self-pairs removed.
    """
    tt = io.read_timetags(path)
    if tt.is_event_log:
        a = tt.times[tt.channel == APD1]
        b = tt.times[tt.channel == APD2]
        detected = tt.times[(tt.channel == APD1) | (tt.channel == APD2)]
    else:
        a = b = detected = tt.times
    duration = tt.duration
    with _Recorder() as rec:
        edges, trace = rate_trace(detected, duration, trace_bin_ms * 1e-3)
        try:
            mask = segment_bright(trace)
        except SegmentationError:
            warnings.warn("no bright/dark separation in the trace; using every bin", AnalysisWarning)
            mask = np.ones(len(trace), dtype=bool)
        a_sel, b_sel = bright_selection(a, mask, edges), bright_selection(b, mask, edges)
        bright_time = float(np.count_nonzero(mask)) * trace_bin_ms * 1e-3
        hist = compute_g2(a_sel, b_sel, bin_ns * 1e-9, window_ns * 1e-9, duration=bright_time,
                          exclude_self=not tt.is_event_log)
    _write_rows(out / "analysis_g2.csv", ["tau_s", "coincidences", "g2", "g2_error"], hist.to_rows())
    zero_err = float(hist.g2_error[len(hist.g2) // 2])
    report = {
        "source": str(Path(path).name),
        "kind": "event-log" if tt.is_event_log else "time-tags",
        "events": int(len(tt.times)),
        "duration_s": duration,
        "bright_bins": int(np.count_nonzero(mask)),
        "bins": int(len(mask)),
        "bright_time_s": bright_time,
        "bright_fraction_of_records": float(np.mean(tt.bright)) if len(tt.bright) else None,
        "mean_rate_cps": float(len(detected) / duration) if duration > 0 else None,
        "g2_zero": hist.zero_bin,
        "g2_zero_error": zero_err,
        "bin_width_s": hist.bin_width,
        "window_s": hist.window,
        "warnings": rec.messages,
    }
    io.dump_json(report, out / "analysis.json")
    summary = f"g2(0)={hist.zero_bin:.3f}±{zero_err:.3f} events={len(tt.times)}"
    return Outcome(report, summary, ["analysis_g2.csv", "analysis.json"])
