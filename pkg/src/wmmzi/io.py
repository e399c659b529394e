"""On-disk formats: time-tag files, event logs, scan tables, reports.

Layouts are documented in docs/formats.md.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mzi_sim import APD3, CHANNELS, REFLECTED, SCATTERED, EventLog, InstrumentConfig, ScanPoint, ScanResult
from .source import BRIGHT, DARK, EmitterConfig, PhotonStream

FORMAT_VERSION = 1
SCAN_COLUMNS = ("sweep_value", "integration_s", "apd1_cps", "apd2_cps", "apd3_cps", "apd3_dark_corrected_cps")


def _num(x) -> str:
    return repr(float(x))


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dump_json(obj, path: Path) -> None:
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


# ----------------------------------------------------------- time tags


def _header_lines(header: dict) -> list[str]:
    text = json.dumps(to_jsonable(header), indent=2, sort_keys=True)
    return ["# " + line for line in text.splitlines()]


def write_timetags(path, stream: PhotonStream) -> None:
    header = {"format": "wmmzi-timetags", "version": FORMAT_VERSION, "duration_s": stream.duration,
              "emitter": stream.config.to_dict()}
    lines = _header_lines(header)
    lines += [f"{t:.12f}\t{BRIGHT if b else DARK}" for t, b in zip(stream.times.tolist(), stream.bright.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def write_event_log(path, log: EventLog, header: dict | None = None) -> None:
    """Time-tag layout extended with channel, position and provenance columns."""
    head = {"format": "wmmzi-events", "version": FORMAT_VERSION, "duration_s": log.exposure,
            "columns": ["timestamp_s", "state", "channel", "position_m", "provenance", "branch"]}
    head.update(header or {})
    lines = _header_lines(head)
    names = {REFLECTED: "reflected", SCATTERED: "scattered"}
    for t, b, ch, pos, dk, br in zip(log.times.tolist(), log.bright.tolist(), log.channel.tolist(),
                                     log.position.tolist(), log.dark.tolist(), log.branch.tolist()):
        p = f"{pos:.9e}" if ch == APD3 and not dk else "-"
        lines.append(f"{t:.12f}\t{BRIGHT if b else DARK}\t{CHANNELS[ch]}\t{p}\t{'dark' if dk else 'photon'}"
                     f"\t{names.get(br, '-')}")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TimeTagFile:
    header: dict
    times: np.ndarray
    bright: np.ndarray
    channel: np.ndarray | None = None  # codes as in mzi_sim, event logs only
    position: np.ndarray | None = None
    dark: np.ndarray | None = None
    branch: np.ndarray | None = None  # REFLECTED / SCATTERED / NO_BRANCH codes

    @property
    def duration(self) -> float:
        d = self.header.get("duration_s")
        if d is not None:
            return float(d)
        return float(self.times[-1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def is_event_log(self) -> bool:
        return self.channel is not None


def read_timetags(path) -> TimeTagFile:
    head, rows = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                head.append(line[2:] if line.startswith("# ") else line[1:])
            elif line.strip():
                rows.append(line.rstrip("\n").split("\t"))
    header = json.loads("".join(head)) if head else {}
    if not rows:
        return TimeTagFile(header, np.empty(0), np.empty(0, bool))
    times = np.array([float(r[0]) for r in rows])
    for i, r in enumerate(rows):
        if r[1] not in (BRIGHT, DARK):
            raise ValueError(f"{path}: line {i + 1} has unknown state {r[1]!r}")
    bright = np.array([r[1] == BRIGHT for r in rows])
    if len(rows[0]) < 3:
        return TimeTagFile(header, times, bright)
    codes = {name: i for i, name in enumerate(CHANNELS)}
    channel = np.array([codes[r[2]] for r in rows], dtype=np.int8)
    position = np.array([float(r[3]) if r[3] != "-" else np.nan for r in rows])
    dark = np.array([r[4] == "dark" for r in rows])
    branch = None
    if len(rows[0]) > 5:
        branch = np.array([{"reflected": REFLECTED, "scattered": SCATTERED}.get(r[5], 0) for r in rows],
                          dtype=np.int8)
    return TimeTagFile(header, times, bright, channel, position, dark, branch)


# ----------------------------------------------------------- scans


def write_scan_csv(scan: ScanResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCAN_COLUMNS)
        for p in scan.points:
            w.writerow([_num(getattr(p, c)) for c in SCAN_COLUMNS])


def read_scan_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no scan rows")
    missing = set(SCAN_COLUMNS) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return {c: np.array([float(r[c]) for r in rows]) for c in SCAN_COLUMNS}


def scan_to_dict(scan: ScanResult) -> dict:
    return {
        "format": "wmmzi-scan",
        "version": FORMAT_VERSION,
        "sweep": scan.sweep,
        "seed": scan.seed,
        "instrument": scan.instrument.to_dict(),
        "emitter": scan.emitter.to_dict(),
        "points": [
            {"sweep_value": p.sweep_value, "integration_s": p.integration_s,
             "apd1_counts": p.apd1_counts, "apd2_counts": p.apd2_counts, "apd3_counts": p.apd3_counts,
             "apd3_dark_cps": p.apd3_dark_cps,
             "apd1_cps": p.apd1_cps, "apd2_cps": p.apd2_cps, "apd3_cps": p.apd3_cps,
             "apd3_dark_corrected_cps": p.apd3_dark_corrected_cps}
            for p in scan.points
        ],
    }


def write_scan_json(scan: ScanResult, path) -> None:
    dump_json(scan_to_dict(scan), path)


def read_scan_json(path) -> ScanResult:
    d = json.loads(Path(path).read_text())
    points = [ScanPoint(p["sweep_value"], p["integration_s"], p["apd1_counts"], p["apd2_counts"],
                        p["apd3_counts"], p["apd3_dark_cps"]) for p in d["points"]]
    return ScanResult(d["sweep"], points, InstrumentConfig.from_dict(d["instrument"]),
                      EmitterConfig(**d["emitter"]), d["seed"])
