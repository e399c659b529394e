"""Blinking, antibunched single-photon emitter.

Emission times form a renewal process whose inter-arrival time is the sum of
two independent exponentials, Exp(a) + Exp(b). For that process the
second-order correlation is exactly 1 - exp(-(a + b)|tau|), so choosing
a + b = 1/tau_c and a b / (a + b) = rate reproduces both the configured mean
rate and the single-exponential antibunching dip. The inter-arrival density is
proportional to (1 - exp(-(b - a) t)) exp(-a t): zero at t = 0, Poisson-like
after a few tau_c.

Blinking is a two-state Markov chain with exponential dwell times. Photons
emitted while dark are kept with probability ``dark_brightness``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import rng

MAX_RECORDS = 50_000_000

BRIGHT = "bright"
DARK = "dark"


class StreamTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class EmitterConfig:
    rate: float = 100_000.0  # bright-state emission rate, counts/s
    tau_c: float = 30e-9  # antibunching correlation time, s
    bright_to_dark: float = 1.0  # switching rate, 1/s
    dark_to_bright: float = 5.0  # switching rate, 1/s
    dark_brightness: float = 0.05  # dark-state rate relative to bright
    duration: float = 1.0  # s
    seed: int = 0

    def __post_init__(self):
        for name in ("rate", "tau_c", "bright_to_dark", "dark_to_bright"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 <= self.dark_brightness < 1:
            raise ValueError(f"dark_brightness must lie in [0, 1), got {self.dark_brightness}")
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.tau_c > 0 and 4 * self.rate * self.tau_c > 1:
            raise ValueError(
                f"rate {self.rate:g} cps too high for tau_c {self.tau_c:g} s "
                f"(antibunched renewal needs rate <= 1/(4 tau_c))"
            )

    @property
    def blinking(self) -> bool:
        return self.bright_to_dark > 0

    @property
    def bright_probability(self) -> float:
        """Stationary probability of the bright state."""
        if not self.blinking:
            return 1.0
        return self.dark_to_bright / (self.bright_to_dark + self.dark_to_bright)

    def to_dict(self) -> dict:
        return asdict(self)


class PhotonRecord(NamedTuple):
    timestamp: float
    state: str


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Emission times (s, ascending) and bright/dark labels of one stream."""

    times: np.ndarray
    bright: np.ndarray
    switch_times: np.ndarray  # state toggles, ascending, within (0, duration)
    initial_bright: bool
    duration: float
    config: EmitterConfig

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[PhotonRecord]:
        for t, b in zip(self.times.tolist(), self.bright.tolist()):
            yield PhotonRecord(t, BRIGHT if b else DARK)

    def state_at(self, t) -> np.ndarray:
        """True where the emitter is bright at time(s) t."""
        flips = np.searchsorted(self.switch_times, np.asarray(t, dtype=float), side="right")
        return (flips % 2 == 0) == self.initial_bright

    def bright_intervals(self) -> np.ndarray:
        """(k, 2) array of [start, stop) bright intervals."""
        edges = np.concatenate([[0.0], self.switch_times, [self.duration]])
        starts, stops = edges[:-1], edges[1:]
        first = 0 if self.initial_bright else 1
        return np.column_stack([starts[first::2], stops[first::2]])

    def bright_time(self) -> float:
        iv = self.bright_intervals()
        return float(np.sum(iv[:, 1] - iv[:, 0])) if len(iv) else 0.0


def renewal_rates(rate: float, tau_c: float) -> tuple[float, float]:
    """Rates (a, b) of the two exponential stages for a given mean rate and tau_c."""
    if tau_c == 0:
        return rate, math.inf
    x = 4.0 * rate * tau_c
    if x > 1:
        raise ValueError("rate too high for the requested antibunching time")
    # smaller root of s^2 - s/tau_c + rate/tau_c, in a form free of cancellation
    a = 2.0 * rate / (1.0 + math.sqrt(1.0 - x))
    return a, 1.0 / tau_c - a


def _switch_times(cfg: EmitterConfig, gen: np.random.Generator) -> tuple[np.ndarray, bool]:
    if not cfg.blinking:
        return np.empty(0), True
    initial_bright = bool(gen.random() < cfg.bright_probability)
    out = []
    t, bright = 0.0, initial_bright
    while True:
        k = cfg.bright_to_dark if bright else cfg.dark_to_bright
        if k == 0:
            break
        t += gen.exponential(1.0 / k)
        if t >= cfg.duration:
            break
        out.append(t)
        bright = not bright
    return np.asarray(out, dtype=float), initial_bright


def _renewal_times(rate: float, tau_c: float, duration: float, gen: np.random.Generator) -> np.ndarray:
    a, b = renewal_rates(rate, tau_c)
    expected = rate * duration
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    pieces = []
    t0 = 0.0
    while True:
        gaps = gen.exponential(1.0 / a, chunk)
        if math.isfinite(b):
            gaps += gen.exponential(1.0 / b, chunk)
        times = t0 + np.cumsum(gaps)
        if times[-1] >= duration:
            pieces.append(times[times < duration])
            break
        pieces.append(times)
        t0 = times[-1]
        chunk = max(chunk // 4, 1024)
    return np.concatenate(pieces)


def generate_stream(cfg: EmitterConfig, unit: int = 0, budget: int = MAX_RECORDS) -> PhotonStream:
    """Emission stream for ``cfg``; ``unit`` selects an independent substream of cfg.seed."""
    expected = cfg.rate * cfg.duration
    if expected > budget:
        raise StreamTooLargeError(
            f"stream too large: rate*duration = {expected:.3g} records exceeds the budget of {budget} records"
        )
    gen = rng.stream(cfg.seed, unit, rng.EMISSION)
    switches, initial_bright = _switch_times(cfg, gen)
    empty = PhotonStream(np.empty(0), np.empty(0, dtype=bool), switches, initial_bright, cfg.duration, cfg)
    if cfg.rate == 0:
        return empty

    times = _renewal_times(cfg.rate, cfg.tau_c, cfg.duration, gen)
    flips = np.searchsorted(switches, times, side="right")
    bright = (flips % 2 == 0) == initial_bright
    if cfg.blinking:
        keep = bright | (gen.random(len(times)) < cfg.dark_brightness)
        times, bright = times[keep], bright[keep]
    return PhotonStream(times, bright, switches, initial_bright, cfg.duration, cfg)


def analytic_g2(tau, cfg: EmitterConfig):
    """1 - exp(-|tau| / tau_c) for scalar or array tau."""
    if not cfg.tau_c > 0:
        raise ValueError("analytic_g2 requires tau_c > 0")
    return 1.0 - np.exp(-np.abs(np.asarray(tau, dtype=float)) / cfg.tau_c)
