import numpy as np
import pytest

from cacc_rl.data import (
    DEFAULT_SCHEMA,
    NgsimRecord,
    SplitManifest,
    contiguous_runs,
    convert_dataset,
    extract_trajectories,
    load_split,
    make_ngsim_fixture,
    moving_average,
    parse_csv,
    read_manifest,
    read_trajectory,
    split,
    write_manifest,
    write_trajectory,
)
from cacc_rl.errors import ConfigError, DataError
from cacc_rl.sim import make_scenario

HEADER = "Vehicle_ID,Frame_ID,Local_Y,v_Vel,v_Acc,v_Length,Preceding\n"


def write(tmp_path, text, name="raw.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_feet_are_converted_to_meters(tmp_path):
    recs, _ = parse_csv(write(tmp_path, HEADER + "1,10,10,20,1,15,0\n"), units="feet")
    assert recs[0].local_y == pytest.approx(3.048, abs=1e-12)
    assert recs[0].v == pytest.approx(6.096, abs=1e-12)
    assert recs[0].length == pytest.approx(4.572, abs=1e-12)


def test_meters_pass_through(tmp_path):
    recs, _ = parse_csv(write(tmp_path, HEADER + "1,10,10,20,1,15,0\n"), units="meters")
    assert recs[0].local_y == 10.0


def test_three_row_fixture_parses_to_exact_records(tmp_path):
    text = HEADER + "7,100,10,20,0.5,15,3\n7,101,12,20,-0.5,15,3\n8,100,50,30,0,16,7\n"
    recs, report = parse_csv(write(tmp_path, text), units="meters")
    assert recs == [
        NgsimRecord(7, 100, 10.0, 20.0, 0.5, 15.0, 3),
        NgsimRecord(7, 101, 12.0, 20.0, -0.5, 15.0, 3),
        NgsimRecord(8, 100, 50.0, 30.0, 0.0, 16.0, 7),
    ]
    assert (report.rows_total, report.rows_parsed, report.rows_skipped) == (3, 3, 0)


def test_malformed_rows_are_skipped_and_counted(tmp_path):
    text = HEADER + "1,1,10,fast,0,15,0\n1,2,11,20,0,15,0\n1,2,11,20,0,15,0\n-1,3,1,1,1,1,0\n1,4,nan,1,1,1,0\n1,5\n"
    recs, report = parse_csv(write(tmp_path, text), units="meters")
    assert [r.frame_id for r in recs] == [2]
    assert report.rows_skipped == 5
    assert report.reasons["malformed value"] == 3
    assert report.reasons["duplicate frame"] == 1
    assert report.reasons["short row"] == 1


def test_missing_required_column_names_it(tmp_path):
    with pytest.raises(ConfigError, match="Local_Y"):
        parse_csv(write(tmp_path, "Vehicle_ID,Frame_ID,v_Vel\n1,1,1\n"))


def test_optional_columns_may_be_absent(tmp_path):
    recs, _ = parse_csv(write(tmp_path, "Vehicle_ID,Frame_ID,Local_Y\n1,1,5\n"), units="meters")
    assert recs[0].local_y == 5.0 and np.isnan(recs[0].v)


def test_custom_schema(tmp_path):
    recs, _ = parse_csv(write(tmp_path, "id,frame,y\n4,9,2.5\n"),
                        {"vehicle_id": "id", "frame_id": "frame", "local_y": "y"}, "meters")
    assert (recs[0].vehicle_id, recs[0].frame_id, recs[0].local_y) == (4, 9, 2.5)
    with pytest.raises(ConfigError):
        parse_csv(write(tmp_path, "id\n1\n"), {"speed": "v"})


def test_empty_inputs_are_data_errors(tmp_path):
    with pytest.raises(DataError):
        parse_csv(write(tmp_path, ""))
    with pytest.raises(DataError):
        parse_csv(write(tmp_path, HEADER))


def test_bad_units_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        parse_csv(write(tmp_path, HEADER + "1,1,1,1,1,1,0\n"), units="furlongs")


def test_frame_gap_splits_run():
    recs = [NgsimRecord(1, f, float(f)) for f in (1, 2, 3, 5, 6)] + [NgsimRecord(2, 1, 0.0)]
    runs = contiguous_runs(recs)
    assert [[r.frame_id for r in run] for run in runs] == [[1, 2, 3], [5, 6], [1]]


def test_constant_speed_survives_smoothing():
    recs = [NgsimRecord(3, f, 100.0 + 12.5 * 0.1 * f) for f in range(700)]
    (traj,) = extract_trajectories(recs, min_duration=60.0)
    np.testing.assert_allclose(traj.v, 12.5, atol=1e-9)
    np.testing.assert_allclose(traj.a, 0.0, atol=1e-7)


def test_short_runs_are_dropped():
    recs = [NgsimRecord(3, f, float(f)) for f in range(100)]
    assert extract_trajectories(recs, min_duration=60.0) == []


def test_moving_average_edges_and_fixed_point():
    np.testing.assert_allclose(moving_average(np.arange(7.0), 5), np.arange(7.0), atol=1e-12)
    np.testing.assert_allclose(moving_average(np.array([0, 0, 5.0, 0, 0]), 5), [0, 5 / 3, 1, 5 / 3, 0])


def test_noisy_positions_recover_speed_within_noise_bound(tmp_path):
    eta, dt = 0.05, 0.1
    truth = make_ngsim_fixture(tmp_path / "noisy.csv", n_vehicles=3, duration=70.0, seed=4,
                               units="meters", noise=eta)
    recs, _ = parse_csv(tmp_path / "noisy.csv", units="meters")
    trajs = extract_trajectories(recs, min_duration=60.0)
    assert len(trajs) == 3
    for traj, v_true in zip(trajs, truth.values()):
        # the same pipeline applied to noise-free positions
        y = np.concatenate([[0.0], np.cumsum(v_true[1:] * dt)])
        smooth = moving_average(y, 5)
        ref = np.empty_like(y)
        ref[1:] = np.diff(smooth) / dt
        ref[0] = ref[1]
        err = np.abs(traj.v - np.maximum(ref, 0.0))
        # interior: a difference of two 5-sample means; edges: shrinking windows
        assert np.max(err[3:-2]) <= 2 * eta / (5 * dt) + 1e-9
        assert np.max(err) <= 2 * eta / dt + 1e-9
        assert np.max(np.abs(traj.v[3:-2] - v_true[3:-2])) < 2 * eta / (5 * dt) + 0.3


def test_emitted_trajectories_are_self_consistent(tmp_path):
    make_ngsim_fixture(tmp_path / "raw.csv", n_vehicles=4, duration=65.0, seed=2, noise=0.1)
    recs, _ = parse_csv(tmp_path / "raw.csv")
    for traj in extract_trajectories(recs):
        assert traj.consistency_error() < 1e-6
        assert np.all(traj.v >= 0)


def test_split_sizes_and_determinism():
    ids = [f"t{k}" for k in range(10)]
    a, b = split(ids, 3), split(ids, 3)
    assert (len(a.train_ids), len(a.test_ids)) == (7, 3)
    assert a == b
    assert set(a.train_ids) | set(a.test_ids) == set(ids)
    assert not set(a.train_ids) & set(a.test_ids)
    c = split(ids, 4)
    assert (len(c.train_ids), len(c.test_ids)) == (7, 3)
    assert c.train_ids + c.test_ids != a.train_ids + a.test_ids


def test_split_needs_two_unique_ids():
    with pytest.raises(DataError):
        split(["only"], 0)
    with pytest.raises(DataError):
        split(["a", "a", "b"], 0)


def test_manifest_rejects_overlap():
    with pytest.raises(DataError):
        SplitManifest(0, ("a", "b"), ("b",))


def test_trajectory_round_trip_is_bit_equal(tmp_path):
    traj = make_scenario("sinusoid", duration=12.3, v_c=17.0, amplitude=2.2, period=7.0)
    write_trajectory(traj, tmp_path / "t.csv")
    back = read_trajectory(tmp_path / "t.csv")
    assert back.samples.tobytes() == traj.samples.tobytes()
    assert back.dt == traj.dt and back.source_id == traj.source_id


def test_manifest_round_trip(tmp_path):
    m = split([f"v{k}" for k in range(6)], 9)
    write_manifest(m, tmp_path / "manifest.csv")
    assert read_manifest(tmp_path / "manifest.csv") == m


def test_convert_dataset_end_to_end(tmp_path):
    make_ngsim_fixture(tmp_path / "raw.csv", n_vehicles=10, duration=70.0, seed=1)
    manifest, report = convert_dataset(tmp_path / "raw.csv", tmp_path / "out", seed=5)
    assert report.rows_skipped == 0
    assert (len(manifest.train_ids), len(manifest.test_ids)) == (7, 3)
    test = load_split(tmp_path / "out", "test")
    assert [t.source_id for t in test] == list(manifest.test_ids)
    again, _ = convert_dataset(tmp_path / "raw.csv", tmp_path / "out2", seed=5)
    for name in manifest.ids("all"):
        a = (tmp_path / "out" / "trajectories" / f"{name}.csv").read_bytes()
        assert a == (tmp_path / "out2" / "trajectories" / f"{name}.csv").read_bytes()


def test_convert_without_long_runs_is_data_error(tmp_path):
    make_ngsim_fixture(tmp_path / "raw.csv", n_vehicles=3, duration=10.0, seed=1)
    with pytest.raises(DataError):
        convert_dataset(tmp_path / "raw.csv", tmp_path / "out")


def test_default_schema_covers_required_fields():
    assert {"vehicle_id", "frame_id", "local_y"} <= set(DEFAULT_SCHEMA)
