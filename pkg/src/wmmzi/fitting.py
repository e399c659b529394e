"""Weighted least-squares fringe fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares


class FitError(RuntimeError):
    def __init__(self, message: str, best_residual: float = float("nan")):
        super().__init__(f"{message} (best chi-square {best_residual:.6g})")
        self.best_residual = best_residual


@dataclass
class FringeFit:
    offset: float
    amplitude: float
    period: float
    phase: float
    visibility: float
    errors: dict = field(default_factory=dict)
    reduced_chi2: float = float("nan")
    clamped: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def visibility_error(self) -> float:
        return self.errors.get("visibility", float("nan"))

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "amplitude": self.amplitude,
            "period": self.period,
            "phase": self.phase,
            "visibility": self.visibility,
            "errors": dict(self.errors),
            "reduced_chi2": self.reduced_chi2,
            "clamped": self.clamped,
            **({"extra": dict(self.extra)} if self.extra else {}),
        }


def _prepare(x, y, err):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    err = np.ones_like(y) if err is None else np.asarray(err, dtype=float)
    if not (x.shape == y.shape == err.shape) or x.ndim != 1:
        raise ValueError("x, y and err must be 1-D arrays of equal length")
    if np.any(err <= 0):
        raise ValueError("rate errors must be > 0")
    return x, y, err


def _linear_sinusoid(xc, y, w, freqs):
    """Weighted LSQ of y ~ o + c cos(2 pi f x) + s sin(2 pi f x) for every f.

    Returns (chi2, coef) with coef shaped (len(freqs), 3).
    """
    arg = 2 * np.pi * np.outer(freqs, xc)
    basis = np.stack([np.ones_like(arg), np.cos(arg), np.sin(arg)], axis=-1)  # (F, n, 3)
    bw = basis * w[None, :, None]
    yw = y * w
    ata = np.einsum("fni,fnj->fij", bw, bw)
    atb = np.einsum("fni,n->fi", bw, yw)
    coef = np.linalg.solve(ata + 1e-300 * np.eye(3), atb[..., None])[..., 0]
    resid = yw[None, :] - np.einsum("fni,fi->fn", bw, coef)
    return np.sum(resid**2, axis=1), coef


def dominant_period(x, y, err=None, oversample: int = 10) -> float:
    """Period of the strongest sinusoid in the weighted least-squares periodogram."""
    x, y, err = _prepare(x, y, err)
    span = x.max() - x.min()
    if span <= 0:
        raise ValueError("sweep values span zero length")
    dx = np.min(np.diff(np.sort(x)))
    f_max = 0.5 / dx if dx > 0 else len(x) / span
    f_min = 0.5 / span
    freqs = np.arange(f_min, f_max, 1.0 / (oversample * span))
    chi2, _ = _linear_sinusoid(x - x.mean(), y, 1.0 / err, freqs)
    return 1.0 / freqs[int(np.argmin(chi2))]


def fit_fringe(x, y, err=None, period: float | None = None, max_nfev: int = 2000) -> FringeFit:
    """Fit offset + amplitude cos(2 pi x / period + phase); V = amplitude / offset.

    ``period`` seeds the fit; by default it comes from the periodogram peak.
    """
    x, y, err = _prepare(x, y, err)
    n = len(x)
    if n < 4:
        raise FitError(f"need at least 4 points for 4 parameters, got {n}")
    w = 1.0 / err
    x0 = x.mean()
    xc = x - x0
    p0 = dominant_period(x, y, err) if period is None else float(period)
    chi2_0, coef = _linear_sinusoid(xc, y, w, np.array([1.0 / p0]))
    o0, c0, s0 = coef[0]

    if math.hypot(c0, s0) <= 1e-12 * max(abs(o0), 1e-300):
        # flat signal: amplitude 0, period and phase meaningless
        return FringeFit(float(o0), 0.0, p0, 0.0, 0.0,
                         errors={"offset": float(1 / math.sqrt(np.sum(w**2))), "visibility": 0.0},
                         reduced_chi2=float(chi2_0[0] / (n - 3)) if n > 3 else float("nan"))

    def resid(p):
        o, c, s, f = p
        a = 2 * np.pi * f * xc
        return (o + c * np.cos(a) + s * np.sin(a) - y) * w

    start = np.array([o0, c0, s0, 1.0 / p0])
    res = least_squares(resid, start, method="lm", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    chi2 = float(np.sum(res.fun**2))
    if res.status <= 0:
        raise FitError(f"fringe fit did not converge after {res.nfev} evaluations", chi2)

    o, c, s, f = res.x
    cov = np.linalg.pinv(res.jac.T @ res.jac)
    if f < 0:
        # cos(-a) = cos(a), sin(-a) = -sin(a)
        flip = np.diag([1.0, 1.0, -1.0, -1.0])
        s, f, cov = -s, -f, flip @ cov @ flip
    amp = math.hypot(c, s)
    # amplitude cos(theta + ph) = c cos(theta) + s sin(theta)
    phase = _wrap(math.atan2(-s, c) - 2 * np.pi * f * x0)

    g_amp = np.array([0.0, c / amp, s / amp, 0.0])
    g_ph = np.array([0.0, s / amp**2, -c / amp**2, -2 * np.pi * x0])
    var_amp = float(g_amp @ cov @ g_amp)
    errors = {
        "offset": math.sqrt(cov[0, 0]),
        "amplitude": math.sqrt(max(var_amp, 0.0)),
        "period": math.sqrt(cov[3, 3]) / f**2,
        "phase": math.sqrt(max(float(g_ph @ cov @ g_ph), 0.0)),
    }
    vis, clamped, v_err = _visibility(o, amp, cov, g_amp)
    errors["visibility"] = v_err
    if clamped:
        amp = max(o, 0.0)
    return FringeFit(float(o), float(amp), float(1.0 / f), float(phase), vis, errors,
                     chi2 / (n - 4) if n > 4 else float("nan"), clamped)


def _visibility(offset, amp, cov, g_amp):
    if offset <= 0:
        return 0.0, True, float("nan")
    v = amp / offset
    g_off = np.zeros(len(g_amp))
    g_off[0] = 1.0
    g_v = g_amp / offset - amp / offset**2 * g_off
    v_err = math.sqrt(max(float(g_v @ cov @ g_v), 0.0))
    if v > 1:
        return 1.0, True, v_err
    return float(v), False, v_err


def _wrap(a: float) -> float:
    return float((a + np.pi) % (2 * np.pi) - np.pi)


@dataclass
class AmplitudeTest:
    amplitude: float
    error: float
    offset: float

    def consistent_with_zero(self, nsigma: float = 3.0) -> bool:
        return self.amplitude <= nsigma * self.error


def sinusoid_amplitude(x, y, err, period: float) -> AmplitudeTest:
    """Linear fit of offset + sinusoid at a fixed period; amplitude and its error."""
    x, y, err = _prepare(x, y, err)
    w = 1.0 / err
    xc = x - x.mean()
    a = 2 * np.pi * xc / period
    basis = np.column_stack([np.ones_like(a), np.cos(a), np.sin(a)]) * w[:, None]
    coef, *_ = np.linalg.lstsq(basis, y * w, rcond=None)
    cov = np.linalg.pinv(basis.T @ basis)
    o, c, s = coef
    amp = math.hypot(c, s)
    if amp == 0:
        err_amp = math.sqrt(0.5 * (cov[1, 1] + cov[2, 2]))
    else:
        g = np.array([0.0, c / amp, s / amp])
        err_amp = math.sqrt(float(g @ cov @ g))
    return AmplitudeTest(float(amp), err_amp, float(o))


# ------------------------------------------------------------ lateral fit


@dataclass
class LateralPriors:
    """Starting geometry for the lateral fit, in sweep units.

    ``fixed`` names parameters held at their prior: any of
    "center", "separation", "waist", "period", "background".
    """

    center: float
    separation: float
    waist: float
    period: float | None = None
    slit_width: float = 0.0
    fixed: tuple[str, ...] = ("background",)
    background: float = 0.0


_LATERAL = ("scale", "center", "separation", "waist", "period", "phase", "visibility", "background")
_SLIT_NODES, _SLIT_WEIGHTS = np.polynomial.legendre.leggauss(16)


def lateral_model(x, scale, center, separation, waist, period, phase, visibility,
                  background=0.0, slit_width=0.0):
    """Two equal-waist Gaussian beams with a cross-term fringe, averaged over the slit."""
    x = np.asarray(x, dtype=float)
    if slit_width > 0:
        xs = x[:, None] + 0.5 * slit_width * _SLIT_NODES[None, :]
    else:
        xs = x[:, None]
    u1 = center - separation / 2
    u2 = center + separation / 2
    w2 = waist * waist
    e1 = np.exp(-2 * (xs - u1) ** 2 / w2)
    e2 = np.exp(-2 * (xs - u2) ** 2 / w2)
    cross = 2 * visibility * np.exp(-((xs - u1) ** 2 + (xs - u2) ** 2) / w2)
    g = e1 + e2 + cross * np.cos(2 * np.pi * xs / period + phase)
    if slit_width > 0:
        g = 0.5 * g @ _SLIT_WEIGHTS
    else:
        g = g[:, 0]
    return background + scale * g


def fit_lateral(x, y, err, priors: LateralPriors, max_nfev: int = 5000) -> FringeFit:
    """Fit the Gaussian-overlap fringe model to a slit scan.

    The returned visibility is the cross-term contrast the fitted beams would
    show if they overlapped completely as plane waves; offset and amplitude
    are the corresponding full-overlap levels (2 scale, 2 scale V).
    """
    x, y, err = _prepare(x, y, err)
    n = len(x)
    fixed = set(priors.fixed)
    unknown = fixed - set(_LATERAL)
    if unknown:
        raise ValueError(f"cannot fix unknown parameters {sorted(unknown)}")
    free = [p for p in _LATERAL if p not in fixed]
    if n < len(free):
        raise FitError(f"need at least {len(free)} points for {len(free)} free parameters, got {n}")
    w = 1.0 / err

    period0 = priors.period if priors.period is not None else dominant_period(x, y, err)
    base = {"center": priors.center, "separation": priors.separation, "waist": priors.waist,
            "period": period0, "background": priors.background}

    lower = {"scale": 0.0, "center": -np.inf, "separation": 0.0, "waist": 1e-12 * max(priors.waist, 1e-300),
             "period": 0.0, "phase": -np.inf, "visibility": 0.0, "background": -np.inf}
    upper = {"scale": np.inf, "center": np.inf, "separation": np.inf, "waist": np.inf,
             "period": np.inf, "phase": np.inf, "visibility": 1.0, "background": np.inf}

    def full(p):
        vals = dict(base)
        vals.update(zip(free, p))
        return vals

    def resid(p):
        v = full(p)
        return (lateral_model(x, slit_width=priors.slit_width, **v) - y) * w

    # scale and phase from a coarse start; the envelope is near 2 at the overlap
    scale0 = max(float(np.max(y)) / 3.0, 1e-300)
    best = None
    for phase0 in np.linspace(-np.pi, np.pi, 8, endpoint=False):
        for vis0 in (0.3, 0.8):
            start = dict(base, scale=scale0, phase=phase0, visibility=vis0)
            p0 = np.array([start[k] for k in free])
            lo = np.array([lower[k] for k in free])
            hi = np.array([upper[k] for k in free])
            lo_in, hi_in = lo.copy(), hi.copy()
            fl, fh = np.isfinite(lo), np.isfinite(hi)
            lo_in[fl] += 1e-9 * (np.abs(lo[fl]) + 1e-12)
            hi_in[fh] -= 1e-9 * (np.abs(hi[fh]) + 1e-12)
            p0 = np.minimum(np.maximum(p0, lo_in), hi_in)
            res = least_squares(resid, p0, bounds=(lo, hi), method="trf", x_scale="jac",
                                xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev)
            if best is None or res.cost < best.cost:
                best = res
    chi2 = float(2 * best.cost)
    if best.status <= 0:
        raise FitError(f"lateral fit did not converge after {best.nfev} evaluations", chi2)

    vals = full(best.x)
    cov = np.linalg.pinv(best.jac.T @ best.jac)
    sig = {k: math.sqrt(max(cov[i, i], 0.0)) for i, k in enumerate(free)}
    scale, vis = vals["scale"], vals["visibility"]
    errors = {
        "offset": 2 * sig.get("scale", 0.0),
        "amplitude": 2 * math.hypot(vis * sig.get("scale", 0.0), scale * sig.get("visibility", 0.0)),
        "period": sig.get("period", 0.0),
        "phase": sig.get("phase", 0.0),
        "visibility": sig.get("visibility", 0.0),
    }
    extra = {k: float(vals[k]) for k in ("center", "separation", "waist", "background")}
    extra.update({f"{k}_error": sig[k] for k in ("center", "separation", "waist") if k in sig})
    dof = n - len(free)
    return FringeFit(float(2 * scale), float(2 * scale * vis), float(vals["period"]), _wrap(vals["phase"]),
                     float(vis), errors, chi2 / dof if dof > 0 else float("nan"), bool(vis >= 1.0), extra)
