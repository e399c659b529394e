"""Closed-form field model of the two-beam prism interferometer.

Two plane waves meet on the hypotenuse of a right-angle prism under total
internal reflection. A weakly scattering film on that surface turns a small
fraction S of the photons into a position-resolved sample of the evanescent
interference pattern; the rest (R = 1 - S) continue along their own paths.

All functions here are pure. Lengths are meters, angles radians, intensities
in whatever unit P0 carries (counts per second in the simulator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_WAVELENGTH = 650e-9
DEFAULT_INDEX = 1.5


@dataclass(frozen=True)
class BeamPairConfig:
    """Two incident beams: common amplitude, wavelength, crossing angle, phase."""

    amplitude: float = 1.0
    wavelength: float = DEFAULT_WAVELENGTH
    theta: float = math.radians(1.75)
    phi: float = 0.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ValueError(f"wavelength must be > 0, got {self.wavelength}")
        if self.theta == 0:
            raise ValueError("degenerate geometry: no spatial fringes (theta = 0)")
        if not 0 < self.theta < math.pi / 4:
            raise ValueError(f"theta must lie in (0, pi/4), got {self.theta}")

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def intensity(self) -> float:
        """P0 = |psi0|^2."""
        return self.amplitude**2


@dataclass(frozen=True)
class PrismScreen:
    """Milk-coated prism hypotenuse.

    Only R is configured; S is derived as 1 - R so R + S = 1 holds by
    construction. Amplitudes r, s are taken real and non-negative.
    """

    reflectance: float = 0.83
    n: float = DEFAULT_INDEX
    face_transmission: float = 0.96
    S: float = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"refractive index must be >= 1, got {self.n}")
        if not 0 <= self.reflectance <= 1:
            raise ValueError(f"reflectance must lie in [0, 1], got {self.reflectance}")
        if not 0 < self.face_transmission <= 1:
            raise ValueError(f"face_transmission must lie in (0, 1], got {self.face_transmission}")
        object.__setattr__(self, "S", 1.0 - self.reflectance)

    @property
    def R(self) -> float:
        return self.reflectance

    @property
    def r(self) -> float:
        return math.sqrt(self.reflectance)

    @property
    def s(self) -> float:
        return math.sqrt(self.S)

    @property
    def t(self) -> float:
        """Evanescent amplitude factor 1 + r (the model's prefactor assumes ~2)."""
        return 1.0 + self.r


@dataclass(frozen=True)
class DetectionConfig:
    """One detector channel.

    For the scattering channel `efficiency` is the combined collection and
    detection efficiency A; for the path channels it is the APD efficiency.
    """

    efficiency: float = 1.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dark_rate < 0:
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")


def refraction_angle(n: float, theta: float) -> float:
    """Angle inside the glass for an external angle theta (n sin t1 = sin theta)."""
    if n < 1:
        raise ValueError(f"refractive index must be >= 1, got {n}")
    if abs(theta) >= math.pi / 2:
        raise ValueError(f"|theta| must be < pi/2, got {theta}")
    return math.asin(math.sin(theta) / n)


def spatial_frequency(cfg: BeamPairConfig, screen: PrismScreen) -> float:
    """Coefficient K of d = x - y inside the fringe cosine: cos(K d / 2 + phi)."""
    theta1 = refraction_angle(screen.n, cfg.theta)
    kn = cfg.k * screen.n
    return kn * math.sin(theta1) + kn * math.cos(theta1) - kn


def fringe_period(cfg: BeamPairConfig, screen: PrismScreen) -> float:
    """Spacing of adjacent maxima in d = x - y: 2 lambda / [n (sin t1 + cos t1 - 1)]."""
    theta1 = refraction_angle(screen.n, cfg.theta)
    denom = screen.n * (math.sin(theta1) + math.cos(theta1) - 1.0)
    if denom == 0:
        raise ValueError("degenerate geometry: no spatial fringes")
    return 2 * cfg.wavelength / abs(denom)


def path_output_intensity(cfg: BeamPairConfig, screen: PrismScreen) -> tuple[float, float]:
    """Intensities leaving along path 1 and path 2; both are R * P0."""
    p = screen.R * cfg.intensity
    return p, p


def scattered_intensity(d, cfg: BeamPairConfig, screen: PrismScreen, det: DetectionConfig):
    """Interference intensity picked up through the scattering film.

    8 S A P0 {1 + cos[(k n sin t1 + k n cos t1 - k n) d / 2 + phi]}; accepts
    scalar or array ``d``.
    """
    K = spatial_frequency(cfg, screen)
    prefactor = 8 * screen.S * det.efficiency * cfg.intensity
    return prefactor * (1 + np.cos(K * np.asarray(d, dtype=float) / 2 + cfg.phi))


def ideal_visibility(cfg: BeamPairConfig, screen: PrismScreen, det: DetectionConfig | None = None) -> float:
    """(Imax - Imin) / (Imax + Imin) of the scattered pattern over one period."""
    if screen.S == 0:
        raise ValueError("no scattered signal: visibility undefined for S = 0")
    det = det or DetectionConfig()
    if det.efficiency == 0 or cfg.intensity == 0:
        raise ValueError("no scattered signal: visibility undefined without detected intensity")
    K = spatial_frequency(cfg, screen)
    # positions where the cosine argument is exactly 0 and pi
    d_max = -2 * cfg.phi / K
    d_min = 2 * (math.pi - cfg.phi) / K
    i_max = float(scattered_intensity(d_max, cfg, screen, det))
    i_min = float(scattered_intensity(d_min, cfg, screen, det))
    i_min = max(i_min, 0.0)
    return (i_max - i_min) / (i_max + i_min)


def two_beam_visibility(a: float, b: float) -> float:
    """Contrast of |a e^{i alpha} + b|^2 for real amplitudes a, b >= 0."""
    if a < 0 or b < 0:
        raise ValueError("amplitudes must be non-negative")
    if a == 0 and b == 0:
        raise ValueError("no signal: both amplitudes are zero")
    return 2 * a * b / (a * a + b * b)
