"""From detection records to visibility, distinguishability and V^2 + D^2."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fitting import (AmplitudeTest, FitError, FringeFit, LateralPriors, dominant_period,  # noqa: F401
                      fit_fringe, fit_lateral, lateral_model, sinusoid_amplitude)

DEFAULT_TRACE_BIN = 0.1  # s


class AnalysisWarning(UserWarning):
    pass


class SegmentationError(ValueError):
    pass


def subtract_dark(measured, dark):
    """max(measured - dark, 0); warns when clamping. Scalars or arrays."""
    m = np.asarray(measured, dtype=float)
    d = np.asarray(dark, dtype=float)
    if np.any(m < 0) or np.any(d < 0):
        raise ValueError("rates must be >= 0")
    diff = m - d
    if np.any(diff < 0):
        warnings.warn(f"dark-corrected rate clamped at 0 for {int(np.count_nonzero(diff < 0))} value(s)",
                      AnalysisWarning, stacklevel=2)
    out = np.maximum(diff, 0.0)
    return float(out) if out.ndim == 0 else out


def rate_trace(times, duration: float, bin_width: float = DEFAULT_TRACE_BIN, start: float = 0.0):
    """Bin event times into a count-rate trace. Returns (bin_edges, rates_cps)."""
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    nbins = max(int(math.floor(duration / bin_width)), 1)
    edges = start + bin_width * np.arange(nbins + 1)
    counts, _ = np.histogram(np.asarray(times, dtype=float), bins=edges)
    return edges, counts / bin_width


def _histogram_modes(trace: np.ndarray):
    lo, hi = float(trace.min()), float(trace.max())
    if hi <= lo:
        return None
    nb = int(np.clip(math.sqrt(len(trace)), 10, 100))
    counts, edges = np.histogram(trace, bins=nb, range=(lo, hi))
    centers = 0.5 * (edges[1:] + edges[:-1])
    padded = np.concatenate([[-1], counts, [-1]])
    peaks = [i for i in range(nb) if counts[i] > 0 and padded[i + 1] >= padded[i] and padded[i + 1] > padded[i + 2]]
    if len(peaks) < 2:
        return None
    peaks.sort(key=lambda i: counts[i], reverse=True)
    first = peaks[0]
    for second in peaks[1:]:
        a, b = sorted((first, second))
        valley = counts[a:b + 1].min()
        if valley < 0.5 * min(counts[a], counts[b]):
            return centers[a], centers[b]
    return None


def segment_bright(trace, threshold: float | None = None) -> np.ndarray:
    """Mask of bins classified bright.

    Default policy: threshold halfway between the two modes of the rate
    histogram. Pass ``threshold`` to override.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.size == 0:
        raise ValueError("empty trace")
    if threshold is None:
        modes = _histogram_modes(trace)
        if modes is None:
            raise SegmentationError("no bright/dark separation found")
        threshold = 0.5 * (modes[0] + modes[1])
    return trace > threshold


def calibrate_reflectivity(i_mirror: float, i_prism: float, r_mirror: float, t_face: float) -> float:
    """Prism reflectivity from mirror and prism rates: (I_p / I_m) R_m / T_face^2."""
    if i_mirror == 0:
        raise ValueError("mirror rate is zero; reflectivity undefined")
    if i_mirror < 0 or i_prism < 0:
        raise ValueError("rates must be >= 0")
    if not (0 < r_mirror <= 1 and 0 < t_face <= 1):
        raise ValueError("r_mirror and t_face must lie in (0, 1]")
    r = (i_prism / i_mirror) * r_mirror / (t_face * t_face)
    if not 0 <= r <= 1:
        warnings.warn(f"calibrated reflectivity {r:.4f} outside [0, 1]; clamped", AnalysisWarning, stacklevel=2)
        r = min(max(r, 0.0), 1.0)
    return r


def calibrate_reflectivity_error(i_mirror, i_prism, err_mirror, err_prism, r_mirror, t_face) -> float:
    r = (i_prism / i_mirror) * r_mirror / t_face**2
    return r * math.hypot(err_mirror / i_mirror, err_prism / i_prism if i_prism > 0 else 0.0)


@dataclass(frozen=True)
class DualityMetrics:
    V: float
    D: float
    V_error: float = 0.0
    D_error: float = 0.0

    @property
    def duality(self) -> float:
        return self.V**2 + self.D**2

    @property
    def duality_error(self) -> float:
        return math.hypot(2 * self.V * self.V_error, 2 * self.D * self.D_error)

    def summary(self) -> str:
        return f"V={self.V:.3f}±{self.V_error:.3f} D={self.D:.3f} V2+D2={self.duality:.3f}"

    def to_dict(self) -> dict:
        return {"V": self.V, "V_error": self.V_error, "D": self.D, "D_error": self.D_error,
                "duality": self.duality, "duality_error": self.duality_error}


def duality_metrics(V: float, R: float, V_error: float = 0.0, R_error: float = 0.0) -> DualityMetrics:
    """D is identified with the prism reflectivity R."""
    for name, val in (("V", V), ("R", R)):
        if not 0 <= val <= 1:
            raise ValueError(f"{name} must lie in [0, 1], got {val}")
    return DualityMetrics(float(V), float(R), float(V_error), float(R_error))


# ----------------------------------------------------------------- g2


@dataclass
class CorrelationHistogram:
    bin_width: float
    window: float
    tau: np.ndarray  # bin centers, s
    counts: np.ndarray
    g2: np.ndarray
    g2_error: np.ndarray
    normalization: float

    @property
    def zero_bin(self) -> float:
        return float(self.g2[len(self.g2) // 2])

    def to_rows(self):
        return zip(self.tau.tolist(), self.counts.tolist(), self.g2.tolist(), self.g2_error.tolist())


def _pair_delays(a, b, reach, exclude_self, shard=1 << 20):
    out = []
    for s in range(0, len(a), shard):
        aa = a[s:s + shard]
        lo = np.searchsorted(b, aa - reach, side="left")
        hi = np.searchsorted(b, aa + reach, side="right")
        cnt = hi - lo
        total = int(cnt.sum())
        if total == 0:
            continue
        ia = np.repeat(np.arange(len(aa)), cnt)
        start = np.repeat(np.cumsum(cnt) - cnt, cnt)
        ib = np.repeat(lo, cnt) + (np.arange(total) - start)
        d = b[ib] - aa[ia]
        if exclude_self:
            d = d[ib != ia + s]
        out.append(d)
    return np.concatenate(out) if out else np.empty(0)


def compute_g2(tags_a, tags_b, bin_width: float, window: float, duration: float | None = None,
               exclude_self: bool = False) -> CorrelationHistogram:
    """Coincidence histogram of delays tau = t_b - t_a within +-window.

    Normalized by rate_a rate_b bin_width duration, so uncorrelated streams sit
    at 1. The zero-delay bin is centered on tau = 0. ``exclude_self`` drops
    pairs with equal index (use when both inputs are the same stream).
    """
    a = np.asarray(tags_a, dtype=float)
    b = np.asarray(tags_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty stream: g2 needs events on both inputs")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    if window < bin_width:
        raise ValueError("window must be >= bin_width")
    if duration is None:
        duration = max(a[-1], b[-1]) - min(a[0], b[0])
    if not duration > 0:
        raise ValueError("duration must be > 0")
    m = int(math.ceil(window / bin_width - 1e-9))
    edges = (np.arange(-m, m + 2) - 0.5) * bin_width
    delays = _pair_delays(a, b, edges[-1], exclude_self)
    counts, _ = np.histogram(delays, bins=edges)
    norm = a.size * b.size * bin_width / duration
    g2 = counts / norm
    err = np.sqrt(np.maximum(counts, 1)) / norm
    tau = np.arange(-m, m + 1) * bin_width
    return CorrelationHistogram(bin_width, window, tau, counts, g2, err, norm)
