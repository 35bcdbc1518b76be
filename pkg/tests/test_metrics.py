import math

import numpy as np
import pytest

from cacc_rl.metrics import (
    MetricsReport,
    aggregate,
    compute_metrics,
    dampening_ratios,
    read_metrics_csv,
    write_metrics_csv,
)
from cacc_rl.sim import EpisodeLog


def make_log(x, v, a, jerk, ttc=None, dt=0.1, length=5.0):
    x, v, a, jerk = (np.asarray(z, float) for z in (x, v, a, jerk))
    gap = x[:, :-1] - length - x[:, 1:]
    if ttc is None:
        ttc = np.full(gap.shape, np.nan)
    return EpisodeLog(dt=dt, t=np.arange(len(x)) * dt, x=x, v=v, a=a, jerk=jerk,
                      reward=np.zeros(gap.shape), gap=gap, ttc=np.asarray(ttc, float),
                      length=np.full(x.shape[1], length))


def test_three_tick_hand_example():
    x = [[100, 80], [101, 81], [102, 81.5]]
    v = [[10, 8], [10, 10], [10, 5]]
    a = [[1, 0], [1, 2], [-1, -5]]
    jerk = [[0, 0], [0, 20], [-20, -70]]
    ttc = [[np.nan], [3.0], [1.0]]
    rep = compute_metrics(make_log(x, v, a, jerk, ttc))
    assert rep.mean_headway == pytest.approx((15 / 8 + 15 / 10 + 15.5 / 5) / 3)
    assert rep.mean_abs_jerk == pytest.approx(90 / 3)
    assert rep.mean_speed == pytest.approx(23 / 3)
    assert rep.ttc_lt4 == pytest.approx(0.2)
    assert rep.ttc_lt1_5 == pytest.approx(0.1)
    assert rep.dampening_ratio == pytest.approx(math.sqrt(29) / math.sqrt(3))


def test_copied_profile_gives_unit_ratio(rng):
    lead = rng.normal(size=300)
    acc = np.column_stack([lead, lead, lead])
    assert all(abs(r - 1.0) < 1e-12 for r in dampening_ratios(acc))


def test_dampening_scale_invariance(rng):
    acc = rng.normal(size=(200, 4))
    base = dampening_ratios(acc)
    for c in (0.01, 3.0, 1e4):
        assert np.allclose(dampening_ratios(c * acc), base, rtol=1e-12)


def test_zero_leader_energy(caplog):
    acc = np.zeros((10, 3))
    acc[:, 1] = 1.0
    assert dampening_ratios(acc) == [None, None]
    assert "undefined" in caplog.text


def test_constant_speeds_have_no_jerk_or_ttc():
    n = 20
    x = np.column_stack([100 + 1.5 * np.arange(n), 80 + 1.5 * np.arange(n)])
    v = np.full((n, 2), 15.0)
    rep = compute_metrics(make_log(x, v, np.zeros((n, 2)), np.zeros((n, 2))))
    assert rep.mean_abs_jerk == 0.0 and rep.ttc_lt4 == 0.0 and rep.ttc_lt1_5 == 0.0
    assert rep.dampening_ratio is None


def test_ttc_monotonicity():
    n = 10
    x = np.column_stack([100 + np.arange(n), 80 + np.arange(n)])
    ttc = np.full((n, 1), np.nan)
    args = (x, np.ones((n, 2)), np.ones((n, 2)), np.zeros((n, 2)))
    before = compute_metrics(make_log(*args, ttc=ttc))
    ttc[2:5, 0] = 2.5
    after = compute_metrics(make_log(*args, ttc=ttc))
    assert after.ttc_lt4 > before.ttc_lt4
    assert after.ttc_lt1_5 == before.ttc_lt1_5


def _report(k):
    return MetricsReport(1.0 + k, 2.0 * k, 10.0 + k, 0.1 * k, 0.0, 0.5 + k, [0.5 + k])


def test_aggregate():
    one = _report(1)
    assert aggregate([one]) == one
    assert aggregate([one, one]) == one
    mixed = aggregate([_report(1), _report(3)])
    assert mixed.mean_headway == pytest.approx(3.0)
    assert mixed.mean_abs_jerk == pytest.approx(4.0)
    assert mixed.dampening_ratio == pytest.approx(2.5)
    assert mixed.per_vehicle_dampening == [pytest.approx(2.5)]


def test_metrics_csv_round_trip(tmp_path):
    rows = [_report(1).row("idm"), _report(2).row("krauss")]
    path = tmp_path / "m.csv"
    write_metrics_csv(path, rows)
    back = read_metrics_csv(path)
    assert [r["model"] for r in back] == ["idm", "krauss"]
    assert float(back[1]["headway"]) == rows[1]["headway"]
    assert path.read_text().startswith("#")
