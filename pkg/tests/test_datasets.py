import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import hypothesis.extra.numpy as npst

from moveint.datasets import (
    DatasetError,
    DatasetSplit,
    FeatureSpec,
    StreamSpec,
    SynthConfig,
    TrajectoryPair,
    compute_velocities,
    coupling_map,
    downsample,
    load_dataset,
    prepare_dataset,
    save_dataset,
    stream_features,
    synth_interaction_dataset,
    trajectory_windows,
    window_observations,
)


def _pair(T=10, rate=20.0, dh=9, dr=4):
    rng = np.random.default_rng(0)
    return TrajectoryPair(rng.normal(size=(T, dh)), rng.normal(size=(T, dr)), rate)


class TestTrajectoryPair:
    def test_mismatched_lengths(self):
        with pytest.raises(DatasetError):
            TrajectoryPair(np.zeros((5, 3)), np.zeros((4, 2)), 20.0)

    def test_nonfinite(self):
        h = np.zeros((5, 3))
        h[2, 1] = np.nan
        with pytest.raises(DatasetError):
            TrajectoryPair(h, np.zeros((5, 2)), 20.0)

    @pytest.mark.parametrize("rate", [0.0, -5.0])
    def test_bad_rate(self, rate):
        with pytest.raises(DatasetError):
            TrajectoryPair(np.zeros((5, 3)), np.zeros((5, 2)), rate)


class TestDownsample:
    def test_120_to_30_keeps_every_fourth(self):
        traj = _pair(T=120, rate=120.0)
        out = downsample(traj, 30.0)
        assert out.frame_rate == 30.0
        np.testing.assert_array_equal(out.human_frames, traj.human_frames[::4])
        np.testing.assert_array_equal(out.robot_frames, traj.robot_frames[::4])

    def test_identity(self):
        traj = _pair()
        out = downsample(traj, traj.frame_rate)
        np.testing.assert_array_equal(out.human_frames, traj.human_frames)

    def test_stride_indices(self):
        traj = _pair(T=10, rate=20.0)
        out = downsample(traj, 10.0)
        np.testing.assert_array_equal(out.human_frames, traj.human_frames[[0, 2, 4, 6, 8]])

    def test_upsampling_rejected(self):
        with pytest.raises(DatasetError):
            downsample(_pair(rate=20.0), 30.0)

    def test_idempotent(self):
        once = downsample(_pair(T=60, rate=60.0), 20.0)
        twice = downsample(once, 20.0)
        np.testing.assert_array_equal(once.human_frames, twice.human_frames)


class TestVelocities:
    def test_constant(self):
        np.testing.assert_array_equal(compute_velocities(np.ones((6, 3))), np.zeros((6, 3)))

    def test_hand_example(self):
        np.testing.assert_array_equal(compute_velocities([[0.0], [1.0], [3.0]]), [[0.0], [1.0], [2.0]])

    def test_single_frame(self):
        np.testing.assert_array_equal(compute_velocities([[4.0, 5.0]]), [[0.0, 0.0]])

    @given(npst.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 5)), elements=st.floats(-100, 100)))
    def test_cumsum_round_trip(self, deltas):
        deltas = deltas.copy()
        deltas[0] = 0.0
        np.testing.assert_allclose(compute_velocities(np.cumsum(deltas, axis=0)), deltas, atol=1e-9)


class TestWindows:
    def test_skeleton_window_length(self):
        spec = StreamSpec("positions", joints=3, velocities=True, shoulder_index=0)
        feats = stream_features(np.random.default_rng(1).normal(size=(100, 9)), spec)
        assert feats.shape == (100, 18)
        wins = window_observations(feats, 5)
        assert len(wins) == 100
        assert all(w.features.shape == (90,) for w in wins)

    def test_constant_windows_identical(self):
        wins = window_observations(np.full((7, 2), 3.0), 4)
        for w in wins:
            np.testing.assert_array_equal(w.features, wins[0].features)

    def test_hand_rolled_padding(self):
        wins = window_observations(np.array([[1.0], [2.0], [3.0]]), 2)
        assert [w.features.tolist() for w in wins] == [[1, 1], [1, 2], [2, 3]]
        assert [w.t_index for w in wins] == [0, 1, 2]

    def test_frame_major_order(self):
        feats = np.arange(12.0).reshape(4, 3)
        wins = window_observations(feats, 2)
        np.testing.assert_array_equal(wins[3].features, [6, 7, 8, 9, 10, 11])
        np.testing.assert_array_equal(wins[1].features, [0, 1, 2, 3, 4, 5])

    def test_empty(self):
        with pytest.raises(DatasetError):
            window_observations(np.zeros((0, 3)), 5)

    @given(st.integers(1, 40), st.integers(1, 4), st.integers(1, 8))
    def test_length_and_last_frame(self, T, D, W):
        feats = np.random.default_rng(T * 100 + D).normal(size=(T, D))
        wins = window_observations(feats, W)
        assert len(wins) == T
        np.testing.assert_array_equal(wins[-1].features[-D:], feats[-1])

    def test_shoulder_recentering(self):
        spec = StreamSpec("positions", joints=3, velocities=False, shoulder_index=0)
        frames = np.tile([1.0, 2.0, 3.0, 2.0, 2.0, 3.0, 4.0, 2.0, 3.0], (3, 1))
        out = stream_features(frames, spec)
        np.testing.assert_array_equal(out[0], [0, 0, 0, 1, 0, 0, 3, 0, 0])

    def test_joint_major_layout(self):
        spec = StreamSpec("positions", joints=2, velocities=True)
        frames = np.array([[0, 0, 0, 1, 1, 1], [1, 2, 3, 1, 1, 1]], dtype=float)
        out = stream_features(frames, spec)
        np.testing.assert_array_equal(out[1], [1, 2, 3, 1, 2, 3, 1, 1, 1, 0, 0, 0])


class TestSynth:
    def test_deterministic(self):
        a = synth_interaction_dataset(SynthConfig(n_train=6, n_test=2, length=20), seed=0)
        b = synth_interaction_dataset(SynthConfig(n_train=6, n_test=2, length=20), seed=0)
        for x, y in zip(a.train + a.test, b.train + b.test):
            assert x.human_frames.tobytes() == y.human_frames.tobytes()
            assert x.robot_frames.tobytes() == y.robot_frames.tobytes()
        assert json.dumps(a.manifest, sort_keys=True) == json.dumps(b.manifest, sort_keys=True)

    def test_noiseless_robot_is_coupling_map(self):
        split = synth_interaction_dataset(SynthConfig(n_train=4, n_test=0, length=15, noise=0.0), seed=3)
        for traj in split.train:
            np.testing.assert_array_equal(traj.robot_frames, coupling_map(traj.human_frames))

    def test_mode_proportions(self):
        cfg = SynthConfig(modes=("reach", "wave"), proportions=(0.75, 0.25), n_train=20, n_test=8, length=10)
        split = synth_interaction_dataset(cfg, seed=1)
        records = split.manifest["provenance"]["modes"]
        train_counts = {m: sum(r["mode"] == m and r["split"] == "train" for r in records) for m in cfg.modes}
        test_counts = {m: sum(r["mode"] == m and r["split"] == "test" for r in records) for m in cfg.modes}
        assert train_counts == {"reach": 15, "wave": 5}
        assert test_counts == {"reach": 6, "wave": 2}
        assert [t.action_label for t in split.train] == [r["mode"] for r in records if r["split"] == "train"]

    def test_no_modes(self):
        with pytest.raises(DatasetError):
            synth_interaction_dataset(SynthConfig(modes=()), seed=0)

    def test_default_windows_match_skeleton_layout(self):
        split = synth_interaction_dataset(SynthConfig(n_train=1, n_test=0, length=12), seed=0)
        xh, xr = trajectory_windows(split.train[0], FeatureSpec.from_dict(split.manifest["feature_spec"]))
        assert xh.shape == (12, 90)
        assert xr.shape == (12, 20)


def _digest(root):
    h = hashlib.sha256()
    for f in sorted(root.rglob("*")):
        if f.is_file():
            h.update(f.relative_to(root).as_posix().encode())
            h.update(f.read_bytes())
    return h.hexdigest()


class TestPersistence:
    def test_round_trip(self, tmp_path):
        split = synth_interaction_dataset(SynthConfig(n_train=3, n_test=2, length=8), seed=0)
        manifest = save_dataset(split, tmp_path)
        loaded = load_dataset(manifest)
        assert [t.name for t in loaded.train] == [t.name for t in split.train]
        assert [t.action_label for t in loaded.test] == [t.action_label for t in split.test]
        # containers are float32
        np.testing.assert_allclose(loaded.train[0].human_frames, split.train[0].human_frames, atol=1e-6)
        doc = json.loads(manifest.read_text())
        assert {"path", "frame_rate", "units", "split"} <= set(doc["trajectories"][0])
        assert "feature_spec" in doc

    def test_byte_identical_output(self, tmp_path):
        for sub in ("a", "b"):
            save_dataset(synth_interaction_dataset(SynthConfig(n_train=3, n_test=1, length=8), seed=5), tmp_path / sub)
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")

    def test_hash_split_when_missing(self, tmp_path):
        split = synth_interaction_dataset(SynthConfig(n_train=10, n_test=0, length=6), seed=0)
        manifest = save_dataset(split, tmp_path)
        doc = json.loads(manifest.read_text())
        for e in doc["trajectories"]:
            del e["split"]
        manifest.write_text(json.dumps(doc))
        a, b = load_dataset(manifest), load_dataset(manifest)
        assert len(a.test) == 2 and len(a.train) == 8
        assert [t.name for t in a.test] == [t.name for t in b.test]

    def test_prepare_downsamples(self, tmp_path):
        split = synth_interaction_dataset(SynthConfig(n_train=2, n_test=1, length=40, frame_rate=40.0), seed=0)
        raw = save_dataset(split, tmp_path / "raw")
        out = prepare_dataset(raw, tmp_path / "prepared", target_hz=20.0)
        prepared = load_dataset(out)
        assert all(t.frame_rate == 20.0 and len(t) == 20 for t in prepared.train + prepared.test)
        assert json.loads(out.read_text())["provenance"]["downsampled_to_hz"] == 20.0

    def test_disjoint_split(self):
        t = _pair()
        with pytest.raises(DatasetError):
            DatasetSplit([t], [t])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nope.json")
