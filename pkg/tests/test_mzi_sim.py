import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from wmmzi import rng
from wmmzi.mzi_sim import (APD1, APD2, APD3, LOST, REFLECTED, SCATTERED, InstrumentConfig, ScatterSampler,
                           channel_probabilities, expected_rates, expected_visibility, run_calibration, run_scan,
                           scatter_density, simulate_events, slit_probability, transport, transport_batch,
                           wedge_phase)
from wmmzi.source import EmitterConfig, PhotonRecord
from wmmzi.wavemodel import DetectionConfig, PrismScreen, fringe_period

WEDGE_PHASE_1MM = 42.178867292765  # rad, 50-digit mpmath
STEADY = dict(bright_to_dark=0.0, dark_to_bright=0.0)
IDEAL = dict(apd1=DetectionConfig(), apd2=DetectionConfig(), apd3=DetectionConfig())


def binomial_ok(k, n, p, nsigma=3.0):
    return abs(k - n * p) <= nsigma * math.sqrt(n * p * (1 - p)) + 1e-9


def test_wedge_phase_values():
    cfg = InstrumentConfig()
    assert wedge_phase(0.0, cfg) == 0.0
    assert wedge_phase(1e-3, cfg) == pytest.approx(WEDGE_PHASE_1MM, rel=1e-12)
    assert wedge_phase(1e-3, cfg) / (2 * math.pi) == pytest.approx(6.71, abs=0.005)
    assert wedge_phase(2e-3, cfg) == pytest.approx(2 * wedge_phase(1e-3, cfg), rel=1e-15)


def test_wedge_period_from_simulated_fine_scan():
    # APD3 slit probability versus wedge position; count maxima over 1 mm of travel
    cfg = InstrumentConfig()
    x = np.linspace(0, 1e-3, 241)
    p = np.array([slit_probability(replace(cfg, wedge_position=v)) for v in x])
    peaks = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])) + 1
    spacing = np.mean(np.diff(x[peaks]))
    assert 1e-3 / spacing == pytest.approx(6.713, rel=0.01)
    assert len(peaks) in (6, 7)


def test_per_photon_transport_equals_batch_rows():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.5), slit_width=2e-3)
    sampler = ScatterSampler(cfg)
    batch = transport_batch(500, cfg, seed=99, unit=4, sampler=sampler)
    names = {APD1: "APD1", APD2: "APD2", APD3: "APD3", LOST: "LOST"}
    for i in range(0, 500, 7):
        ev = transport(PhotonRecord(float(i), "bright"), cfg, rng.photon_stream(99, 4, i), sampler)
        assert ev.channel == names[int(batch.channel[i])]
        if ev.channel == "APD3":
            assert ev.position == batch.position[i]
        assert ev.branch == {0: None, REFLECTED: "reflected", SCATTERED: "scattered"}[int(batch.branch[i])]


def test_batching_does_not_change_outcomes():
    cfg = InstrumentConfig()
    full = transport_batch(3000, cfg, seed=5, unit=2)
    u = rng.stream(5, 2, rng.TRANSPORT).random((3000, rng.DRAWS_PER_PHOTON))
    assert u.shape == (3000, 8)
    head = transport_batch(1000, cfg, seed=5, unit=2)
    assert np.array_equal(full.channel[:1000], head.channel)


def test_perfect_reflection_splits_evenly():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=1.0, face_transmission=1.0), arm1_transmission=1.0,
                           **IDEAL)
    n = 200_000
    b = transport_batch(n, cfg, seed=1)
    c = b.counts()
    assert c[APD3] == 0 and c[LOST] == 0
    assert binomial_ok(c[APD1], n, 0.5)


def test_pure_scattering_screen_feeds_apd3():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.0, face_transmission=1.0), arm1_transmission=1.0,
                           slit_width=math.inf, **IDEAL)
    c = transport_batch(100_000, cfg, seed=2).counts()
    assert c[APD3] == 100_000


def test_branch_fractions_at_r_083():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.83), arm1_transmission=1.0, **IDEAL)
    n = 1_000_000
    b = transport_batch(n, cfg, seed=3)
    path = int(np.count_nonzero((b.channel == APD1) | (b.channel == APD2)))
    assert binomial_ok(path, n, 0.83 * 0.96**2)
    entered = int(np.count_nonzero(b.branch != 0))
    scattered = int(np.count_nonzero(b.branch == SCATTERED))
    assert binomial_ok(scattered, entered, 0.17)


def test_channel_fractions_match_branch_products():
    cfg = InstrumentConfig()
    n = 1_000_000
    c = transport_batch(n, cfg, seed=4).counts()
    p = channel_probabilities(cfg)
    assert c.sum() == n
    for code, name in ((APD1, "APD1"), (APD2, "APD2"), (APD3, "APD3"), (LOST, "LOST")):
        assert binomial_ok(c[code], n, p[name]), name
    assert p["APD1"] + p["APD2"] + p["APD3"] + p["LOST"] == pytest.approx(1.0, abs=1e-15)


@given(r=st.floats(0, 1), bs=st.floats(0, 1), t1=st.floats(0, 1), tf=st.floats(0.01, 1),
       e1=st.floats(0, 1), e3=st.floats(0, 1))
@settings(max_examples=25, deadline=None)
def test_every_photon_resolves_to_one_channel(r, bs, t1, tf, e1, e3):
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=r, face_transmission=tf), bs_reflectance=bs,
                           arm1_transmission=t1, apd1=DetectionConfig(e1), apd3=DetectionConfig(e3))
    b = transport_batch(2000, cfg, seed=8)
    assert set(np.unique(b.channel)) <= {APD1, APD2, APD3, LOST}
    assert b.counts().sum() == 2000
    lost = b.channel == LOST
    assert np.all(b.lost_stage[lost] > 0) and np.all(b.lost_stage[~lost] == 0)
    has_pos = ~np.isnan(b.position)
    assert np.all(b.channel[~has_pos] != APD3)


def test_scatter_positions_follow_density_ks():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.0, face_transmission=1.0), arm1_transmission=1.0,
                           slit_width=math.inf, magnification=1.0, **IDEAL)
    n = 1_000_000
    pos = transport_batch(n, cfg, seed=6).position
    assert np.isfinite(pos).all()
    lo, hi = cfg.beam_center - cfg.separation / 2 - 3 * cfg.waist, cfg.beam_center + cfg.separation / 2 + 3 * cfg.waist
    grid = np.linspace(lo, hi, 2_000_001)
    cdf = integrate.cumulative_simpson(scatter_density(grid, cfg), x=grid, initial=0.0)
    cdf /= cdf[-1]
    d, _ = stats.kstest(pos, lambda x: np.interp(x, grid, cdf))
    assert d < 1.628 / math.sqrt(n)


def test_sampler_grid_resolves_fringes():
    cfg = InstrumentConfig(waist=5e-3, separation=0.0)
    s = ScatterSampler(cfg)
    step = s.grid[1] - s.grid[0]
    assert step <= fringe_period(cfg.beams, cfg.screen) / 32 * (1 + 1e-9)


def test_event_log_positions_and_order():
    cfg = InstrumentConfig(slit_width=2e-3)
    log = simulate_events(cfg, EmitterConfig(rate=5e4, duration=1.0, seed=3))
    assert np.all(np.diff(log.times) >= 0)
    has_pos = ~np.isnan(log.position)
    assert np.array_equal(has_pos, (log.channel == APD3) & ~log.dark)
    entered = log.branch != 0
    assert np.array_equal(entered, (log.branch == REFLECTED) | (log.branch == SCATTERED))
    events = list(log)
    assert len(events) == len(log)
    assert all((e.position is not None) == (e.channel == "APD3" and e.provenance == "photon") for e in events)


def test_silent_source_reports_dark_counts_only():
    cfg = InstrumentConfig(apd1=DetectionConfig(1.0, 20.0), apd2=DetectionConfig(1.0, 10.0))
    log = simulate_events(cfg, EmitterConfig(rate=0.0, duration=50.0, seed=1, **STEADY))
    assert log.dark.all()
    c = log.counts()
    for code, rate in ((APD1, 20.0), (APD2, 10.0), (APD3, 32.0)):
        assert abs(c[code] - rate * 50) <= 3 * math.sqrt(rate * 50)
    assert c[LOST] == 0


def test_detected_rates_match_expectation():
    cfg = InstrumentConfig()
    em = EmitterConfig(rate=1e5, duration=5.0, seed=12, **STEADY)
    c = simulate_events(cfg, em).counts()
    exp = expected_rates(cfg, em.rate)
    for code, name in ((APD1, "APD1"), (APD2, "APD2"), (APD3, "APD3")):
        mu = exp[name] * em.duration
        assert abs(c[code] - mu) <= 3 * math.sqrt(mu), name


def test_scan_is_thread_independent_and_deterministic():
    cfg = InstrumentConfig()
    em = EmitterConfig(rate=5e4, seed=0)
    values = np.linspace(0, 0.1e-3, 5)
    a = run_scan(cfg, em, "wedge_position", values, 0.5, seed=21, threads=1)
    b = run_scan(cfg, em, "wedge_position", values, 0.5, seed=21, threads=3)
    assert a.points == b.points
    c = run_scan(cfg, em, "wedge_position", values, 0.5, seed=22)
    assert a.points != c.points


def test_scan_rates_are_counts_over_exposure():
    scan = run_scan(InstrumentConfig(), EmitterConfig(rate=5e4), "slit_position", [0.0, 1e-3], 0.5, seed=1)
    for p in scan.points:
        assert p.apd1_cps == p.apd1_counts / p.integration_s
        assert p.apd3_dark_corrected_cps == max(p.apd3_cps - 32.0, 0.0)
        assert 0 < p.integration_s <= 0.5


@pytest.mark.parametrize("values", [[0.0, 0.0], [0.0, 1.0, 0.5], []])
def test_scan_rejects_non_monotone_sweeps(values):
    with pytest.raises(ValueError):
        run_scan(InstrumentConfig(), EmitterConfig(), "wedge_position", values, 1.0)


def test_scan_rejects_unknown_sweep():
    with pytest.raises(ValueError, match="unknown sweep"):
        run_scan(InstrumentConfig(), EmitterConfig(), "prism_angle", [0.0], 1.0)


def test_wedge_scan_tracks_ideal_visibility_and_flat_paths():
    # fully coherent, point-like slit at the overlap center: contrast near 1
    cfg = InstrumentConfig(slit_width=1e-6 * 40, magnification=40.0)
    assert expected_visibility(cfg) == pytest.approx(1.0, abs=1e-3)
    period = 2 * math.pi / wedge_phase(1.0, cfg)
    values = np.linspace(0, period, 9)
    scan = run_scan(cfg, EmitterConfig(rate=1e5, **STEADY), "wedge_position", values, 2.0, seed=3)
    apd3 = scan.column("apd3_cps") - 32.0
    hi, lo = apd3.max(), apd3.min()
    err = scan.errors("apd3")
    assert (hi - lo) / (hi + lo) > 1 - 3 * (err.max() / hi + err.max() / max(hi, 1))
    for ch in ("apd1", "apd2"):
        r = scan.column(f"{ch}_cps")
        assert np.ptp(r) < 6 * scan.errors(ch).max()


def test_contrast_decays_away_from_overlap():
    cfg = InstrumentConfig(waist=100e-6, separation=100e-6)
    centre = expected_visibility(cfg)
    off = expected_visibility(replace(cfg, slit_center=4e-3))
    assert centre > off


def test_lossless_mirror_calibration():
    cfg = InstrumentConfig(mirror_reflectivity=1.0, **IDEAL)
    res = run_calibration(cfg, EmitterConfig(rate=5e4, seed=1, **STEADY), "mirror", 20.0)
    assert abs(res.rate - 5e4) <= 3 * math.sqrt(5e4 * 20) / 20


def test_prism_calibration_chain():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.83), **IDEAL)
    em = EmitterConfig(rate=102_000 / 0.955, seed=2, **STEADY)
    mirror = run_calibration(cfg, em, "mirror", 60.0)
    prism = run_calibration(cfg, em, "prism", 60.0)
    assert abs(mirror.rate - 102_000) <= 3 * mirror.rate_error
    chain = 102_000 * 0.96**2 * 0.83 / 0.955
    assert chain == pytest.approx(81_699, abs=1)
    assert abs(prism.rate - chain) <= 3 * prism.rate_error


def test_zero_reflectance_prism_reads_dark_rate():
    cfg = InstrumentConfig(screen=PrismScreen(reflectance=0.0), apd1=DetectionConfig(1.0, 40.0))
    res = run_calibration(cfg, EmitterConfig(rate=1e5, seed=3, **STEADY), "prism", 30.0)
    assert abs(res.counts - 40 * 30) <= 3 * math.sqrt(40 * 30)


def test_calibration_units_do_not_collide_with_scan_points():
    cfg = InstrumentConfig(**IDEAL)
    em = EmitterConfig(rate=1e4, seed=5, **STEADY)
    cal = run_calibration(cfg, em, "mirror", 1.0)
    again = run_calibration(cfg, em, "mirror", 1.0)
    assert cal == again
    assert run_calibration(cfg, em, "mirror", 1.0, unit=0) != cal


def test_instrument_dict_round_trip():
    for cfg in (InstrumentConfig(), InstrumentConfig(slit_width=math.inf, arm2_transmission=0.3)):
        assert InstrumentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("kwargs", [dict(bs_reflectance=1.5), dict(slit_width=0.0), dict(waist=0.0),
                                    dict(wedge_angle=0.0), dict(coherence=-0.1), dict(magnification=0.0)])
def test_instrument_validation(kwargs):
    with pytest.raises(ValueError):
        InstrumentConfig(**kwargs)
