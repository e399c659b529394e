"""Photon-by-photon Monte Carlo through the weak-measurement interferometer.

Each photon walks a fixed branch sequence: beam-splitter arm choice, arm
attenuation, prism entry face, reflect (R) or scatter (S), then either the
exit face and a path detector (APD1/APD2), or collection, a sampled position
on the screen and the slit in front of APD3. Anything else is LOST.

Screen positions are in the d = x - y coordinate of the field model, so the
fringe period along that axis is ``wavemodel.fringe_period``. The slit sits
in the image plane; an image point is ``magnification * d``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy import integrate

from . import rng
from .source import EmitterConfig, PhotonRecord, PhotonStream, generate_stream
from .wavemodel import BeamPairConfig, DetectionConfig, PrismScreen, fringe_period

APD1, APD2, APD3, LOST = 0, 1, 2, 3
CHANNELS = ("APD1", "APD2", "APD3", "LOST")

NO_BRANCH, REFLECTED, SCATTERED = 0, 1, 2

# loss stages, recorded for LOST photons
LOST_ARM, LOST_ENTRY, LOST_EXIT, LOST_DETECTOR, LOST_COLLECTION, LOST_SLIT = range(1, 7)

SAMPLER_POINTS = 4096
SAMPLER_MAX_POINTS = 1 << 22
CHUNK = 1 << 18

SWEEPS = ("wedge_position", "slit_position")

# work units outside any realistic sweep index range
CALIBRATION_UNITS = {"mirror": 1 << 40, "prism": (1 << 40) + 1}


@dataclass(frozen=True)
class InstrumentConfig:
    beams: BeamPairConfig = field(default_factory=BeamPairConfig)
    screen: PrismScreen = field(default_factory=PrismScreen)
    apd1: DetectionConfig = field(default_factory=DetectionConfig)
    apd2: DetectionConfig = field(default_factory=DetectionConfig)
    apd3: DetectionConfig = field(default_factory=lambda: DetectionConfig(efficiency=1.0, dark_rate=32.0))
    bs_reflectance: float = 0.5
    arm1_transmission: float = 10 ** -0.3
    arm2_transmission: float | None = None  # None: matched to arm 1
    wedge_angle: float = math.radians(0.5)
    wedge_index: float = 1.5
    wedge_position: float = 0.0
    slit_width: float = 150e-6  # image plane; math.inf removes the slit
    slit_center: float = 0.0  # image plane
    magnification: float = 40.0
    waist: float = 0.5e-3
    separation: float = 0.25e-3
    beam_center: float = 0.0
    coherence: float = 1.0  # fringe contrast of fully overlapping equal beams
    mirror_reflectivity: float = 0.955

    def __post_init__(self):
        probs = {
            "bs_reflectance": self.bs_reflectance,
            "arm1_transmission": self.arm1_transmission,
            "arm2_transmission": self.arm2_transmission if self.arm2_transmission is not None else 0.5,
            "coherence": self.coherence,
            "mirror_reflectivity": self.mirror_reflectivity,
        }
        for name, p in probs.items():
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not self.slit_width > 0:
            raise ValueError(f"slit_width must be > 0, got {self.slit_width}")
        if not self.waist > 0:
            raise ValueError(f"waist must be > 0, got {self.waist}")
        if self.separation < 0:
            raise ValueError(f"separation must be >= 0, got {self.separation}")
        if not 0 < self.wedge_angle < math.pi / 4:
            raise ValueError(f"wedge_angle must lie in (0, pi/4), got {self.wedge_angle}")
        if self.wedge_index < 1:
            raise ValueError(f"wedge_index must be >= 1, got {self.wedge_index}")
        if not self.magnification > 0:
            raise ValueError(f"magnification must be > 0, got {self.magnification}")

    @property
    def arm_transmissions(self) -> tuple[float, float]:
        t2 = self.arm1_transmission if self.arm2_transmission is None else self.arm2_transmission
        return self.arm1_transmission, t2

    def with_sweep(self, name: str, value: float) -> "InstrumentConfig":
        if name == "wedge_position":
            return replace(self, wedge_position=value)
        if name == "slit_position":
            return replace(self, slit_center=value)
        raise ValueError(f"unknown sweep variable {name!r}; expected one of {SWEEPS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["screen"].pop("S", None)
        d["arm2_transmission"] = self.arm_transmissions[1]
        if math.isinf(self.slit_width):
            d["slit_width"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstrumentConfig":
        d = dict(d)
        d["beams"] = BeamPairConfig(**d["beams"])
        d["screen"] = PrismScreen(**d["screen"])
        for ch in ("apd1", "apd2", "apd3"):
            d[ch] = DetectionConfig(**d[ch])
        if d.get("slit_width") is None:
            d["slit_width"] = math.inf
        return cls(**d)


def wedge_phase(position: float, cfg: InstrumentConfig) -> float:
    """Extra phase of the wedged arm: k (n_g - 1) x tan(alpha)."""
    return cfg.beams.k * (cfg.wedge_index - 1.0) * position * math.tan(cfg.wedge_angle)


def fringe_phase(cfg: InstrumentConfig) -> float:
    return cfg.beams.phi + wedge_phase(cfg.wedge_position, cfg)


def _arm_weights(cfg: InstrumentConfig) -> tuple[float, float]:
    t1, t2 = cfg.arm_transmissions
    return math.sqrt(cfg.bs_reflectance * t1), math.sqrt((1 - cfg.bs_reflectance) * t2)


def scatter_density(u, cfg: InstrumentConfig):
    """Unnormalized probability density of scatter positions d on the screen.

    Two equal-waist Gaussian beams, arm 1 centered at beam_center - separation/2
    and carrying the fringe phase, arm 2 at beam_center + separation/2. The
    cross term carries the fringe with contrast ``coherence``.
    """
    u = np.asarray(u, dtype=float)
    a, b = _arm_weights(cfg)
    u1 = cfg.beam_center - cfg.separation / 2
    u2 = cfg.beam_center + cfg.separation / 2
    w2 = cfg.waist**2
    g1 = np.exp(-((u - u1) ** 2) / w2)  # field envelopes; intensities are g^2
    g2 = np.exp(-((u - u2) ** 2) / w2)
    kd = 2 * math.pi / fringe_period(cfg.beams, cfg.screen)
    cross = 2 * cfg.coherence * a * b * g1 * g2 * np.cos(kd * u + fringe_phase(cfg))
    return a * a * g1 * g1 + b * b * g2 * g2 + cross


def _screen_span(cfg: InstrumentConfig) -> tuple[float, float]:
    half = cfg.separation / 2 + 3 * cfg.waist
    return cfg.beam_center - half, cfg.beam_center + half


class ScatterSampler:
    """Inverse-CDF sampler on a dense tabulation of ``scatter_density``."""

    def __init__(self, cfg: InstrumentConfig, points: int = SAMPLER_POINTS):
        lo, hi = _screen_span(cfg)
        period = fringe_period(cfg.beams, cfg.screen)
        # keep >= 32 nodes per fringe when the span is wide
        n = max(points, int(math.ceil(32 * (hi - lo) / period)) + 1)
        n = min(n, SAMPLER_MAX_POINTS)
        self.grid = np.linspace(lo, hi, n)
        pdf = np.clip(scatter_density(self.grid, cfg), 0.0, None)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(self.grid))])
        # a dark screen is fine as long as nothing needs a position
        self.cdf = cdf / cdf[-1] if cdf[-1] > 0 else None

    def sample(self, uniforms: np.ndarray) -> np.ndarray:
        if self.cdf is None:
            if len(uniforms):
                raise ValueError("scatter density vanishes on the screen")
            return np.empty(0)
        return np.interp(uniforms, self.cdf, self.grid)


@dataclass
class TransportBatch:
    """Per-photon outcome arrays of one transported batch."""

    channel: np.ndarray
    arm: np.ndarray  # 0 or 1
    branch: np.ndarray
    lost_stage: np.ndarray
    position: np.ndarray  # nan unless scattered and collected

    def counts(self) -> np.ndarray:
        return np.bincount(self.channel, minlength=4)

    @staticmethod
    def concat(batches: Sequence["TransportBatch"]) -> "TransportBatch":
        return TransportBatch(*(np.concatenate([getattr(b, f) for b in batches])
                                for f in ("channel", "arm", "branch", "lost_stage", "position")))


def _resolve(u: np.ndarray, cfg: InstrumentConfig, sampler: ScatterSampler) -> TransportBatch:
    n = len(u)
    t1, t2 = cfg.arm_transmissions
    scr = cfg.screen
    arm1 = u[:, 0] < cfg.bs_reflectance
    survive = u[:, 1] < np.where(arm1, t1, t2)
    entered = survive & (u[:, 2] < scr.face_transmission)
    reflected = entered & (u[:, 3] < scr.reflectance)
    scattered = entered & ~reflected
    exited = reflected & (u[:, 4] < scr.face_transmission)
    detected = exited & (u[:, 5] < np.where(arm1, cfg.apd1.efficiency, cfg.apd2.efficiency))
    collected = scattered & (u[:, 6] < cfg.apd3.efficiency)

    position = np.full(n, np.nan)
    position[collected] = sampler.sample(u[collected, 7])
    with np.errstate(invalid="ignore"):
        in_slit = collected & (np.abs(cfg.magnification * position - cfg.slit_center) <= cfg.slit_width / 2)

    position[~in_slit] = np.nan  # kept only for APD3 detections

    channel = np.full(n, LOST, dtype=np.int8)
    channel[detected & arm1] = APD1
    channel[detected & ~arm1] = APD2
    channel[in_slit] = APD3

    branch = np.zeros(n, dtype=np.int8)
    branch[reflected] = REFLECTED
    branch[scattered] = SCATTERED

    stage = np.zeros(n, dtype=np.int8)
    stage[~survive] = LOST_ARM
    stage[survive & ~entered] = LOST_ENTRY
    stage[reflected & ~exited] = LOST_EXIT
    stage[exited & ~detected] = LOST_DETECTOR
    stage[scattered & ~collected] = LOST_COLLECTION
    stage[collected & ~in_slit] = LOST_SLIT
    return TransportBatch(channel, (~arm1).astype(np.int8), branch, stage, position)


def transport_batch(n: int, cfg: InstrumentConfig, seed: int, unit: int = 0,
                    sampler: ScatterSampler | None = None) -> TransportBatch:
    """Transport photons 0..n-1 of work unit ``unit``."""
    sampler = sampler or ScatterSampler(cfg)
    gen = rng.stream(seed, unit, rng.TRANSPORT)
    out = []
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        out.append(_resolve(gen.random((m, rng.DRAWS_PER_PHOTON)), cfg, sampler))
    if not out:
        return _resolve(np.empty((0, rng.DRAWS_PER_PHOTON)), cfg, sampler)
    return TransportBatch.concat(out)


@dataclass(frozen=True)
class DetectionEvent:
    timestamp: float
    channel: str
    position: float | None = None
    provenance: str = "photon"
    branch: str | None = None  # "reflected" / "scattered" for photons that reached the screen


def transport(photon: PhotonRecord, cfg: InstrumentConfig, gen: np.random.Generator,
              sampler: ScatterSampler | None = None) -> DetectionEvent:
    """Transport one photon using the next block of draws from ``gen``.

    With ``gen = rng.photon_stream(seed, unit, i)`` the outcome equals row i of
    ``transport_batch(..., seed, unit)``.
    """
    sampler = sampler or ScatterSampler(cfg)
    b = _resolve(gen.random((1, rng.DRAWS_PER_PHOTON)), cfg, sampler)
    ch = int(b.channel[0])
    br = {NO_BRANCH: None, REFLECTED: "reflected", SCATTERED: "scattered"}[int(b.branch[0])]
    pos = float(b.position[0]) if ch == APD3 else None
    return DetectionEvent(photon.timestamp, CHANNELS[ch], pos, "photon", br)


@dataclass
class EventLog:
    """Time-ordered detection events of one run, LOST photons included."""

    times: np.ndarray
    channel: np.ndarray
    position: np.ndarray
    dark: np.ndarray  # True for dark counts
    bright: np.ndarray  # emitter state at emission (dark counts: state at arrival)
    branch: np.ndarray
    lost_stage: np.ndarray
    exposure: float  # seconds
    bright_exposure: float

    def __len__(self):
        return len(self.times)

    def __iter__(self) -> Iterator[DetectionEvent]:
        names = {NO_BRANCH: None, REFLECTED: "reflected", SCATTERED: "scattered"}
        for i in range(len(self.times)):
            ch = int(self.channel[i])
            pos = float(self.position[i]) if ch == APD3 and not self.dark[i] else None
            yield DetectionEvent(float(self.times[i]), CHANNELS[ch], pos,
                                 "dark" if self.dark[i] else "photon", names[int(self.branch[i])])

    def tags(self, channel: int, bright_only: bool = False) -> np.ndarray:
        sel = self.channel == channel
        if bright_only:
            sel &= self.bright
        return self.times[sel]

    def counts(self, bright_only: bool = False) -> np.ndarray:
        ch = self.channel[self.bright] if bright_only else self.channel
        return np.bincount(ch, minlength=4)


def _dark_events(cfg: InstrumentConfig, stream: PhotonStream, seed: int, unit: int):
    gen = rng.stream(seed, unit, rng.DARK)
    times, chans = [], []
    for code, det in ((APD1, cfg.apd1), (APD2, cfg.apd2), (APD3, cfg.apd3)):
        k = gen.poisson(det.dark_rate * stream.duration)
        times.append(np.sort(gen.uniform(0.0, stream.duration, k)))
        chans.append(np.full(k, code, dtype=np.int8))
    return np.concatenate(times), np.concatenate(chans)


def simulate_events(cfg: InstrumentConfig, emitter: EmitterConfig, unit: int = 0) -> EventLog:
    """Emit, transport and detect one stream; dark counts included."""
    stream = generate_stream(emitter, unit=unit)
    batch = transport_batch(len(stream), cfg, emitter.seed, unit)
    dt, dc = _dark_events(cfg, stream, emitter.seed, unit)
    n_dark = len(dt)
    times = np.concatenate([stream.times, dt])
    order = np.argsort(times, kind="stable")
    return EventLog(
        times=times[order],
        channel=np.concatenate([batch.channel, dc])[order],
        position=np.concatenate([batch.position, np.full(n_dark, np.nan)])[order],
        dark=np.concatenate([np.zeros(len(stream), bool), np.ones(n_dark, bool)])[order],
        bright=np.concatenate([stream.bright, stream.state_at(dt)])[order],
        branch=np.concatenate([batch.branch, np.zeros(n_dark, np.int8)])[order],
        lost_stage=np.concatenate([batch.lost_stage, np.zeros(n_dark, np.int8)])[order],
        exposure=stream.duration,
        bright_exposure=stream.bright_time(),
    )


# ---------------------------------------------------------------- scans


@dataclass(frozen=True)
class ScanPoint:
    sweep_value: float
    integration_s: float
    apd1_counts: int
    apd2_counts: int
    apd3_counts: int
    apd3_dark_cps: float

    @property
    def apd1_cps(self) -> float:
        return self.apd1_counts / self.integration_s

    @property
    def apd2_cps(self) -> float:
        return self.apd2_counts / self.integration_s

    @property
    def apd3_cps(self) -> float:
        return self.apd3_counts / self.integration_s

    @property
    def apd3_dark_corrected_cps(self) -> float:
        return max(self.apd3_cps - self.apd3_dark_cps, 0.0)

    def rate_error(self, channel: str) -> float:
        """Poisson error of a channel rate, counts floored at 1."""
        return math.sqrt(max(getattr(self, f"{channel}_counts"), 1)) / self.integration_s


@dataclass
class ScanResult:
    sweep: str
    points: list[ScanPoint]
    instrument: InstrumentConfig
    emitter: EmitterConfig
    seed: int

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points], dtype=float)

    def errors(self, channel: str) -> np.ndarray:
        return np.array([p.rate_error(channel) for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return self.column("sweep_value")


def _scan_point(cfg: InstrumentConfig, emitter: EmitterConfig, unit: int, value: float,
                bright_only: bool) -> ScanPoint:
    log = simulate_events(cfg, emitter, unit)
    use_bright = bright_only and emitter.blinking
    counts = log.counts(bright_only=use_bright)
    exposure = log.bright_exposure if use_bright else log.exposure
    if exposure <= 0:
        raise RuntimeError(f"scan point {unit}: emitter never bright during {log.exposure} s")
    return ScanPoint(float(value), float(exposure), int(counts[APD1]), int(counts[APD2]),
                     int(counts[APD3]), cfg.apd3.dark_rate)


def run_scan(cfg: InstrumentConfig, emitter: EmitterConfig, sweep: str, values: Sequence[float],
             integration: float, seed: int | None = None, threads: int = 1,
             bright_only: bool = True) -> ScanResult:
    """Simulate one detection run per sweep value.

    Point i draws every random number from streams keyed by (seed, i), so the
    result is independent of ``threads``. With a blinking emitter and
    ``bright_only`` the counts and integration time cover bright periods only.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep is empty")
    steps = np.diff(values)
    if len(values) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ValueError("sweep values must be strictly monotone")
    if not integration > 0:
        raise ValueError(f"integration must be > 0, got {integration}")
    if sweep not in SWEEPS:
        raise ValueError(f"unknown sweep variable {sweep!r}; expected one of {SWEEPS}")
    seed = emitter.seed if seed is None else seed
    em = replace(emitter, duration=integration, seed=seed)

    def work(i):
        return _scan_point(cfg.with_sweep(sweep, values[i]), em, i, values[i], bright_only)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(work, range(len(values))))
    else:
        points = [work(i) for i in range(len(values))]
    return ScanResult(sweep, points, cfg, em, seed)


# ---------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationResult:
    target: str
    counts: int
    exposure: float  # bright-state seconds

    @property
    def rate(self) -> float:
        return self.counts / self.exposure

    @property
    def rate_error(self) -> float:
        return math.sqrt(max(self.counts, 1)) / self.exposure

    def __float__(self):
        return self.rate


def run_calibration(cfg: InstrumentConfig, emitter: EmitterConfig, target: str, duration: float,
                    unit: int | None = None) -> CalibrationResult:
    """Bright-state rate on APD1 when the source is reflected by a mirror or the prism.

    The mirror is a single reflection with ``cfg.mirror_reflectivity``; the
    prism is entry face, reflection R, exit face. No beam splitter or arms.
    """
    if not duration > 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    if target not in ("mirror", "prism"):
        raise ValueError(f"target must be 'mirror' or 'prism', got {target!r}")
    unit = CALIBRATION_UNITS[target] if unit is None else unit
    em = replace(emitter, duration=duration)
    stream = generate_stream(em, unit=unit)
    u = rng.stream(em.seed, unit, rng.TRANSPORT).random((len(stream), 4))
    eta = cfg.apd1.efficiency
    if target == "mirror":
        hit = (u[:, 0] < cfg.mirror_reflectivity) & (u[:, 1] < eta)
    else:
        tf, r = cfg.screen.face_transmission, cfg.screen.reflectance
        hit = (u[:, 0] < tf) & (u[:, 1] < r) & (u[:, 2] < tf) & (u[:, 3] < eta)
    if em.blinking:
        hit &= stream.bright
        exposure = stream.bright_time()
    else:
        exposure = stream.duration
    dark = rng.stream(em.seed, unit, rng.DARK).poisson(cfg.apd1.dark_rate * exposure)
    if exposure <= 0:
        raise RuntimeError("emitter never bright during calibration")
    return CalibrationResult(target, int(np.count_nonzero(hit)) + int(dark), float(exposure))


# ------------------------------------------------------- analytic oracles


def slit_probability(cfg: InstrumentConfig) -> float:
    """Probability that a collected scatter position passes the slit (quadrature)."""
    lo, hi = _screen_span(cfg)
    half = cfg.slit_width / 2
    a = max((cfg.slit_center - half) / cfg.magnification, lo)
    b = min((cfg.slit_center + half) / cfg.magnification, hi)
    if b <= a:
        return 0.0
    pts = _quad_breakpoints(cfg, lo, hi)
    total = _quad(lambda x: scatter_density(x, cfg), lo, hi, pts)
    inner = _quad(lambda x: scatter_density(x, cfg), a, b, [p for p in pts if a < p < b])
    return inner / total


def _quad_breakpoints(cfg, lo, hi):
    period = fringe_period(cfg.beams, cfg.screen)
    n = int((hi - lo) / period)
    return list(np.linspace(lo, hi, min(n, 5000) + 2)[1:-1])


def _quad(f, a, b, points):
    edges = [a] + sorted(points) + [b]
    return sum(integrate.quad(f, lo, hi, limit=200)[0] for lo, hi in zip(edges[:-1], edges[1:]))


def channel_probabilities(cfg: InstrumentConfig) -> dict[str, float]:
    """Analytic per-photon branch products for each channel."""
    t1, t2 = cfg.arm_transmissions
    bs = cfg.bs_reflectance
    tf, r = cfg.screen.face_transmission, cfg.screen.reflectance
    p1 = bs * t1 * tf * r * tf * cfg.apd1.efficiency
    p2 = (1 - bs) * t2 * tf * r * tf * cfg.apd2.efficiency
    p_screen = (bs * t1 + (1 - bs) * t2) * tf
    p_scatter = p_screen * (1 - r)
    p3 = p_scatter * cfg.apd3.efficiency * slit_probability(cfg)
    return {"APD1": p1, "APD2": p2, "APD3": p3, "LOST": 1 - p1 - p2 - p3,
            "screen": p_screen, "reflected": p_screen * r, "scattered": p_scatter}


def expected_visibility(cfg: InstrumentConfig) -> float:
    """Contrast of the APD3 rate versus fringe phase at the configured slit.

    Rate(phi) = P + |C| cos(phi + arg C) with P the slit-integrated envelope and
    C the slit-integrated cross term, so V = |C| / P.
    """
    a, b = _arm_weights(cfg)
    half = cfg.slit_width / 2
    lo, hi = _screen_span(cfg)
    x0 = max((cfg.slit_center - half) / cfg.magnification, lo)
    x1 = min((cfg.slit_center + half) / cfg.magnification, hi)
    u1 = cfg.beam_center - cfg.separation / 2
    u2 = cfg.beam_center + cfg.separation / 2
    w2 = cfg.waist**2
    kd = 2 * math.pi / fringe_period(cfg.beams, cfg.screen)

    def env(x):
        return a * a * math.exp(-2 * (x - u1) ** 2 / w2) + b * b * math.exp(-2 * (x - u2) ** 2 / w2)

    def cross(x, trig):
        return 2 * cfg.coherence * a * b * math.exp(-((x - u1) ** 2 + (x - u2) ** 2) / w2) * trig(kd * x)

    pts = [p for p in _quad_breakpoints(cfg, lo, hi) if x0 < p < x1]
    p = _quad(env, x0, x1, pts)
    c_re = _quad(lambda x: cross(x, math.cos), x0, x1, pts)
    c_im = _quad(lambda x: cross(x, math.sin), x0, x1, pts)
    if p <= 0:
        warnings.warn("slit sees no light; visibility undefined", RuntimeWarning)
        return float("nan")
    return math.hypot(c_re, c_im) / p


def expected_rates(cfg: InstrumentConfig, source_rate: float) -> dict[str, float]:
    """Mean detected rates (cps) for a non-blinking source, dark counts included."""
    p = channel_probabilities(cfg)
    return {
        "APD1": source_rate * p["APD1"] + cfg.apd1.dark_rate,
        "APD2": source_rate * p["APD2"] + cfg.apd2.dark_rate,
        "APD3": source_rate * p["APD3"] + cfg.apd3.dark_rate,
    }
