"""NGSIM-style trajectory ingestion: parsing, run extraction, smoothing, and a seeded split.

Raw files are CSVs with one row per (vehicle, frame). Column names are
mapped through a schema dict, so other exports with the same content work
too. Extracted leader trajectories are stored one per file as
``t,x,v,a`` with a leading ``# dt=... source=...`` comment.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .sim import LeaderTrajectory, trajectory_from_speeds

LOG = logging.getLogger(__name__)

FEET_TO_METERS = 0.3048
UNITS = ("feet", "meters")

DEFAULT_SCHEMA = {
    "vehicle_id": "Vehicle_ID",
    "frame_id": "Frame_ID",
    "local_y": "Local_Y",
    "v": "v_Vel",
    "a": "v_Acc",
    "length": "v_Length",
    "preceding_id": "Preceding",
}
REQUIRED_FIELDS = ("vehicle_id", "frame_id", "local_y")
TRAJECTORY_HEADER = ("t", "x", "v", "a")
MANIFEST_HEADER = ("id", "split")


@dataclass(frozen=True)
class NgsimRecord:
    vehicle_id: int
    frame_id: int
    local_y: float
    v: float = float("nan")
    a: float = float("nan")
    length: float = float("nan")
    preceding_id: int = 0


@dataclass
class ParseReport:
    rows_total: int = 0
    rows_parsed: int = 0
    rows_skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def skip(self, reason: str) -> None:
        self.rows_skipped += 1
        self.reasons[reason] += 1


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    train_ids: tuple
    test_ids: tuple

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train and test sets overlap: {sorted(overlap)}")

    def ids(self, which: str) -> tuple:
        if which == "train":
            return self.train_ids
        if which == "test":
            return self.test_ids
        if which == "all":
            return self.train_ids + self.test_ids
        raise UsageError(f"unknown split {which!r}")


# -- parsing -------------------------------------------------------------------

def _resolve_schema(schema: Optional[Mapping[str, str]]) -> dict:
    merged = dict(DEFAULT_SCHEMA)
    if schema:
        unknown = set(schema) - set(DEFAULT_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown schema fields {sorted(unknown)}; expected {sorted(DEFAULT_SCHEMA)}")
        merged.update(schema)
    return merged


def _as_id(text: str) -> int:
    value = float(text)
    if not math.isfinite(value) or value != int(value) or value < 0:
        raise ValueError(f"bad id {text!r}")
    return int(value)


def _as_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def parse_csv(path, schema: Optional[Mapping[str, str]] = None,
              units: str = "feet") -> tuple[list[NgsimRecord], ParseReport]:
    """Read one raw file; returns records in file order and a skip report.

    Position, speed, acceleration and length are scaled to meters when
    ``units == "feet"``. Rows with a missing, non-numeric or non-finite
    field, a negative id, or a repeated (vehicle, frame) key are skipped.
    """
    if units not in UNITS:
        raise ConfigError(f"units must be one of {UNITS}, got {units!r}")
    cols = _resolve_schema(schema)
    scale = FEET_TO_METERS if units == "feet" else 1.0
    report = ParseReport()
    records: list[NgsimRecord] = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        index = {name: k for k, name in enumerate(header)}
        for fld in REQUIRED_FIELDS:
            if cols[fld] not in index:
                raise ConfigError(f"{path}: required column {cols[fld]!r} ({fld}) not found")
        present = {fld: index[col] for fld, col in cols.items() if col in index}
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            report.rows_total += 1
            try:
                vals = {fld: row[k].strip() for fld, k in present.items()}
            except IndexError:
                report.skip("short row")
                continue
            try:
                vid = _as_id(vals["vehicle_id"])
                frame = _as_id(vals["frame_id"])
                y = _as_float(vals["local_y"]) * scale
                v = _as_float(vals["v"]) * scale if "v" in vals else float("nan")
                a = _as_float(vals["a"]) * scale if "a" in vals else float("nan")
                length = _as_float(vals["length"]) * scale if "length" in vals else float("nan")
                pred = _as_id(vals["preceding_id"]) if "preceding_id" in vals else 0
            except ValueError:
                report.skip("malformed value")
                continue
            if (vid, frame) in seen:
                report.skip("duplicate frame")
                continue
            seen.add((vid, frame))
            records.append(NgsimRecord(vid, frame, y, v, a, length, pred))
            report.rows_parsed += 1
    if report.rows_total == 0:
        raise DataError(f"{path}: no data rows")
    if report.rows_skipped:
        LOG.warning("%s: skipped %d of %d rows (%s)", path, report.rows_skipped, report.rows_total,
                    dict(report.reasons))
    return records, report


# -- trajectory extraction ---------------------------------------------------------

def contiguous_runs(records: Iterable[NgsimRecord]) -> list[list[NgsimRecord]]:
    """Group by vehicle, sort by frame, and split wherever consecutive frames are not adjacent."""
    by_vehicle = defaultdict(list)
    for r in records:
        by_vehicle[r.vehicle_id].append(r)
    runs = []
    for vid in sorted(by_vehicle):
        rows = sorted(by_vehicle[vid], key=lambda r: r.frame_id)
        current = [rows[0]]
        for prev, cur in zip(rows, rows[1:]):
            if cur.frame_id == prev.frame_id + 1:
                current.append(cur)
            else:
                runs.append(current)
                current = [cur]
        runs.append(current)
    return runs


def moving_average(values: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered mean; near the ends the window shrinks symmetrically so it stays centered."""
    if window < 1 or window % 2 == 0:
        raise UsageError("window must be a positive odd integer")
    values = np.asarray(values, dtype=float)
    n = len(values)
    half = window // 2
    out = np.empty(n)
    for k in range(n):
        h = min(half, k, n - 1 - k)
        out[k] = values[k - h:k + h + 1].sum() / (2 * h + 1)
    return out


def _run_to_trajectory(run: Sequence[NgsimRecord], frame_dt: float, dt: float,
                       window: int) -> LeaderTrajectory:
    y = np.array([r.local_y for r in run])
    span = (len(run) - 1) * frame_dt
    n_out = int(math.floor(span / dt + 1e-9)) + 1
    t_src = np.arange(len(run)) * frame_dt
    t_out = np.arange(n_out) * dt
    pos = np.interp(t_out, t_src, y)
    smooth = moving_average(pos, window)
    v = np.empty(n_out)
    v[1:] = np.diff(smooth) / dt
    v[0] = v[1]
    v = np.maximum(v, 0.0)
    source = f"veh{run[0].vehicle_id}_f{run[0].frame_id}"
    return trajectory_from_speeds(v, dt, x0=float(smooth[0]), v_before=float(v[0]), source_id=source)


def extract_trajectories(records: Iterable[NgsimRecord], min_duration: float = 60.0, dt: float = 0.1,
                         frame_dt: float = 0.1, window: int = 5) -> list[LeaderTrajectory]:
    """Turn contiguous per-vehicle frame runs into leader trajectories.

    Positions are resampled to ``dt``, smoothed, and differentiated
    (backward difference, clamped at zero). Positions are then rebuilt from
    the speeds so that ``x[k+1] = x[k] + v[k+1]*dt`` holds. Runs shorter
    than ``min_duration`` seconds are dropped.
    """
    if not dt > 0 or not frame_dt > 0:
        raise UsageError("dt and frame_dt must be positive")
    out = []
    for run in contiguous_runs(records):
        if len(run) < 3 or len(run) * frame_dt < min_duration - 1e-9:
            continue
        out.append(_run_to_trajectory(run, frame_dt, dt, window))
    return out


# -- split -------------------------------------------------------------------------

def split(ids: Sequence[str], seed: int, train_fraction: float = 0.7) -> SplitManifest:
    """Seeded shuffle; the first ``floor(train_fraction * n)`` ids train, the rest test."""
    ids = list(ids)
    if len(ids) < 2:
        raise DataError(f"need at least 2 trajectories to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DataError("trajectory ids are not unique")
    if not 0.0 < train_fraction < 1.0:
        raise UsageError("train_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in order]
    n_train = int(math.floor(train_fraction * len(ids) + 1e-9))
    return SplitManifest(int(seed), tuple(shuffled[:n_train]), tuple(shuffled[n_train:]))


# -- internal formats ----------------------------------------------------------------

def write_trajectory(traj: LeaderTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# dt={traj.dt!r} source={traj.source_id}\n")
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for k, (x, v, a) in enumerate(traj.samples.tolist()):
            w.writerow([repr(k * traj.dt), repr(x), repr(v), repr(a)])


def read_trajectory(path) -> LeaderTrajectory:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise DataError(f"{path}: missing '# dt=... source=...' header line")
        meta = dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
        if "dt" not in meta:
            raise DataError(f"{path}: header line has no dt")
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != TRAJECTORY_HEADER:
            raise DataError(f"{path}: expected columns {','.join(TRAJECTORY_HEADER)}")
        try:
            rows = [[float(c) for c in row[1:]] for row in reader if row]
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no samples")
    return LeaderTrajectory(float(meta["dt"]), np.array(rows), meta.get("source", Path(path).stem))


def write_manifest(manifest: SplitManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={manifest.seed}\n")
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for i in manifest.train_ids:
            w.writerow([i, "train"])
        for i in manifest.test_ids:
            w.writerow([i, "test"])


def read_manifest(path) -> SplitManifest:
    with open(path, newline="") as fh:
        first = fh.readline()
        seed = 0
        if first.startswith("# seed="):
            seed = int(first.split("=", 1)[1])
        else:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    train = tuple(r["id"] for r in rows if r["split"] == "train")
    test = tuple(r["id"] for r in rows if r["split"] == "test")
    return SplitManifest(seed, train, test)


def convert_dataset(input_path, out_dir, schema: Optional[Mapping[str, str]] = None, units: str = "feet",
                    min_duration: float = 60.0, dt: float = 0.1, frame_dt: float = 0.1, window: int = 5,
                    seed: int = 0, train_fraction: float = 0.7) -> tuple[SplitManifest, ParseReport]:
    """Parse, extract and split; writes ``trajectories/<id>.csv`` and ``manifest.csv`` under ``out_dir``."""
    records, report = parse_csv(input_path, schema, units)
    trajs = extract_trajectories(records, min_duration, dt, frame_dt, window)
    if not trajs:
        raise DataError(f"{input_path}: no contiguous run lasts {min_duration} s")
    manifest = split([t.source_id for t in trajs], seed, train_fraction)
    tdir = Path(out_dir) / "trajectories"
    tdir.mkdir(parents=True, exist_ok=True)
    for stale in tdir.glob("*.csv"):
        stale.unlink()
    for t in trajs:
        write_trajectory(t, tdir / f"{t.source_id}.csv")
    write_manifest(manifest, Path(out_dir) / "manifest.csv")
    LOG.info("converted %s: %d trajectories (%d train / %d test)", input_path, len(trajs),
             len(manifest.train_ids), len(manifest.test_ids))
    return manifest, report


def load_split(data_dir, which: str = "test") -> list[LeaderTrajectory]:
    """Trajectories of one side of a converted dataset, in manifest order."""
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir / "manifest.csv")
    return [read_trajectory(data_dir / "trajectories" / f"{i}.csv") for i in manifest.ids(which)]


# -- synthetic fixture ------------------------------------------------------------------

def make_ngsim_fixture(path, n_vehicles: int = 10, duration: float = 90.0, seed: int = 0,
                       units: str = "feet", frame_dt: float = 0.1, noise: float = 0.0,
                       schema: Optional[Mapping[str, str]] = None) -> dict:
    """Write a synthetic raw file in the NGSIM column layout.

    Every vehicle drives a smooth speed profile (cruise plus two sinusoids)
    with optional uniform position noise of half-width ``noise`` meters.
    Returns the ground-truth speed arrays keyed by vehicle id, in m/s.
    """
    if units not in UNITS:
        raise ConfigError(f"units must be one of {UNITS}")
    cols = _resolve_schema(schema)
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration / frame_dt))
    scale = 1.0 / FEET_TO_METERS if units == "feet" else 1.0
    truth = {}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        order = ("vehicle_id", "frame_id", "local_y", "v", "a", "length", "preceding_id")
        w.writerow([cols[f] for f in order])
        for k in range(n_vehicles):
            vid = k + 1
            start = 100 + int(rng.integers(0, 50))
            v_c = rng.uniform(8.0, 18.0)
            amp1, amp2 = rng.uniform(0.5, 3.0), rng.uniform(0.0, 1.0)
            p1, p2 = rng.uniform(20.0, 60.0), rng.uniform(5.0, 15.0)
            t = np.arange(n_frames) * frame_dt
            v = v_c + amp1 * np.sin(2 * np.pi * t / p1) + amp2 * np.sin(2 * np.pi * t / p2)
            a = np.gradient(v, frame_dt)
            y = 50.0 * k + np.concatenate([[0.0], np.cumsum(v[1:] * frame_dt)])
            y_obs = y + rng.uniform(-noise, noise, n_frames) if noise > 0 else y
            truth[vid] = v
            length = rng.uniform(4.0, 5.5)
            for j in range(n_frames):
                w.writerow([vid, start + j, repr(float(y_obs[j] * scale)), repr(float(v[j] * scale)),
                            repr(float(a[j] * scale)), repr(float(length * scale)), 0 if k == 0 else vid - 1])
    return truth
