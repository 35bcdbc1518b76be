"""Evaluation measures over episode logs: headway, jerk, speed, TTC exposure, dampening ratio."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import UsageError
from .sim import EpisodeLog

LOG = logging.getLogger(__name__)

METRICS_COLUMNS = ("model", "headway", "jerk", "speed", "ttc_lt4", "ttc_lt1_5", "dampening_ratio")
METRICS_NOTE = ("# ttc_lt4/ttc_lt1_5: seconds with 0 < TTC < threshold, summed over followers; "
                "dampening_ratio: mean over followers of ||a_i||_2/||a_0||_2")


@dataclass
class MetricsReport:
    mean_headway: float
    mean_abs_jerk: float
    mean_speed: float
    ttc_lt4: float
    ttc_lt1_5: float
    dampening_ratio: Optional[float]
    per_vehicle_dampening: list = field(default_factory=list)

    def row(self, model: str) -> dict:
        return {
            "model": model,
            "headway": self.mean_headway,
            "jerk": self.mean_abs_jerk,
            "speed": self.mean_speed,
            "ttc_lt4": self.ttc_lt4,
            "ttc_lt1_5": self.ttc_lt1_5,
            "dampening_ratio": self.dampening_ratio,
        }


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")


def dampening_ratios(accels: np.ndarray) -> list[Optional[float]]:
    """``||a_i||_2 / ||a_0||_2`` for every follower column of a ``(T, N+1)`` array."""
    lead = math.sqrt(math.fsum(float(a) ** 2 for a in accels[:, 0]))
    if lead == 0.0:
        LOG.warning("leader acceleration is identically zero; dampening ratio undefined")
        return [None] * (accels.shape[1] - 1)
    return [math.sqrt(math.fsum(float(a) ** 2 for a in accels[:, i])) / lead
            for i in range(1, accels.shape[1])]


def compute_metrics(log: EpisodeLog, thresholds: Sequence[float] = (4.0, 1.5),
                    h_cap: float = 100.0) -> MetricsReport:
    """Aggregate one episode.

    Means run over every follower-tick (ticks with a non-positive gap are
    skipped for headway). TTC exposure is ``dt`` times the number of
    follower-ticks with a defined TTC strictly inside ``(0, threshold)``.
    """
    if len(log) == 0 or log.x.shape[1] < 2:
        raise UsageError("episode log needs at least one tick and one follower")
    hi, lo = thresholds
    gaps = log.gap.ravel()
    speeds = log.v[:, 1:].ravel()
    headways = [(g / v if v > 0 else h_cap) for g, v in zip(gaps.tolist(), speeds.tolist()) if g > 0]
    ttc = log.ttc.ravel()
    ttc = ttc[~np.isnan(ttc)]
    per = dampening_ratios(log.a)
    defined = [d for d in per if d is not None]
    return MetricsReport(
        mean_headway=_mean(headways),
        mean_abs_jerk=_mean(np.abs(log.jerk[:, 1:]).ravel().tolist()),
        mean_speed=_mean(speeds.tolist()),
        ttc_lt4=int(np.count_nonzero((ttc > 0) & (ttc < hi))) * log.dt,
        ttc_lt1_5=int(np.count_nonzero((ttc > 0) & (ttc < lo))) * log.dt,
        dampening_ratio=_mean(defined) if defined else None,
        per_vehicle_dampening=per,
    )


def aggregate(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Element-wise mean; undefined dampening ratios are left out of that mean."""
    if not reports:
        raise UsageError("cannot aggregate an empty list of reports")
    damp = [r.dampening_ratio for r in reports if r.dampening_ratio is not None]
    width = max(len(r.per_vehicle_dampening) for r in reports)
    per = []
    for i in range(width):
        vals = [r.per_vehicle_dampening[i] for r in reports
                if i < len(r.per_vehicle_dampening) and r.per_vehicle_dampening[i] is not None]
        per.append(_mean(vals) if vals else None)
    return MetricsReport(
        mean_headway=_mean(r.mean_headway for r in reports),
        mean_abs_jerk=_mean(r.mean_abs_jerk for r in reports),
        mean_speed=_mean(r.mean_speed for r in reports),
        ttc_lt4=_mean(r.ttc_lt4 for r in reports),
        ttc_lt1_5=_mean(r.ttc_lt1_5 for r in reports),
        dampening_ratio=_mean(damp) if damp else None,
        per_vehicle_dampening=per,
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, rows: Sequence[dict], extra_columns: Sequence[str] = ()) -> None:
    """Write one row per model; any extra columns go after the standard ones."""
    cols = list(METRICS_COLUMNS) + [c for c in extra_columns if c not in METRICS_COLUMNS]
    with open(path, "w", newline="") as fh:
        fh.write(METRICS_NOTE + "\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
