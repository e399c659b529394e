"""Standalone SVG figures."""

from __future__ import annotations

import datetime as _dt
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "wmmzi"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path, provenance: dict, deterministic: bool) -> None:
    meta = {"Date": None} if deterministic else {"Date": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata=meta)
    plt.close(fig)
    svg = buf.getvalue()
    note = json.dumps(provenance, sort_keys=True, default=str).replace("--", "- -")
    head, sep, rest = svg.partition("?>\n")
    svg = f"{head}{sep}<!-- provenance: {note} -->\n{rest}" if sep else f"<!-- provenance: {note} -->\n{svg}"
    Path(path).write_text(svg)


def fringe_plot(path, x, y, err, model_x, model_y, xlabel: str, title: str, provenance: dict,
                deterministic: bool = True) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(x, y, yerr=err, fmt="o", ms=3, color="k", label="APD3 (dark corrected)")
    ax.plot(model_x, model_y, "-", color="tab:blue", label="fit")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count rate (cps)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path, provenance, deterministic)


def rate_traces_plot(path, x, traces: dict, xlabel: str, title: str, provenance: dict,
                     deterministic: bool = True) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (y, err) in traces.items():
        if err is None:
            ax.plot(x, y, "-", lw=0.8, label=label)
        else:
            ax.errorbar(x, y, yerr=err, fmt="o-", ms=3, lw=0.8, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count rate (cps)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path, provenance, deterministic)


def g2_plot(path, tau, g2, err, analytic_tau, analytic, title: str, provenance: dict,
            deterministic: bool = True) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(np.asarray(tau) * 1e9, g2, yerr=err, fmt="o", ms=2, color="k", label="coincidences")
    if analytic is not None:
        ax.plot(np.asarray(analytic_tau) * 1e9, analytic, "-", color="tab:red", label="1 - exp(-|tau|/tau_c)")
    ax.axhline(0.5, color="gray", ls=":", lw=0.8)
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("g2(tau)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path, provenance, deterministic)
