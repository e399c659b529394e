"""Photon-level simulator and analysis pipeline for a weak-measurement Mach-Zehnder interferometer."""

from .analysis import (CorrelationHistogram, DualityMetrics, FringeFit, calibrate_reflectivity, compute_g2,
                       duality_metrics, fit_fringe, fit_lateral, segment_bright, subtract_dark)
from .mzi_sim import InstrumentConfig, ScanResult, run_calibration, run_scan, simulate_events, transport
from .source import EmitterConfig, PhotonStream, analytic_g2, generate_stream
from .wavemodel import BeamPairConfig, PrismScreen, fringe_period, ideal_visibility, scattered_intensity

__version__ = "0.1.0"

__all__ = [
    "BeamPairConfig", "CorrelationHistogram", "DualityMetrics", "EmitterConfig", "FringeFit", "InstrumentConfig",
    "PhotonStream", "PrismScreen", "ScanResult", "analytic_g2", "calibrate_reflectivity", "compute_g2",
    "duality_metrics", "fit_fringe", "fit_lateral", "fringe_period", "generate_stream", "ideal_visibility",
    "run_calibration", "run_scan", "scattered_intensity", "segment_bright", "simulate_events", "subtract_dark",
    "transport",
]
