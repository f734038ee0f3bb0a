"""Trajectory ingestion, feature construction and synthetic interaction data.

On-disk layout
--------------
A dataset directory holds a ``manifest.json`` and one ``.npz`` container per
trajectory.  Each container stores two float32 arrays, ``human`` (T x D_h) and
``robot`` (T x D_r), little-endian, row-major.  The manifest is::

    {
      "trajectories": [
        {"path": "trajectories/traj_000.npz", "frame_rate": 20.0,
         "units": "radians", "split": "train", "action_label": "reach"},
        ...
      ],
      "feature_spec": {...},        # see FeatureSpec
      "provenance": {...}           # free-form: seed, downsampling, generator
    }

``units`` refers to the robot stream, since that is what gets evaluated.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

UNITS = ("meters", "radians")


class DatasetError(ValueError):
    """Invalid trajectory data, manifest or ingestion argument."""


@dataclass
class TrajectoryPair:
    human_frames: np.ndarray
    robot_frames: np.ndarray
    frame_rate: float
    units: str = "radians"
    action_label: str | None = None
    name: str = ""

    def __post_init__(self):
        self.human_frames = np.atleast_2d(np.asarray(self.human_frames, dtype=np.float64))
        self.robot_frames = np.atleast_2d(np.asarray(self.robot_frames, dtype=np.float64))
        if self.human_frames.ndim != 2 or self.robot_frames.ndim != 2:
            raise DatasetError("trajectory frames must be T x D matrices")
        if len(self.human_frames) != len(self.robot_frames):
            raise DatasetError(
                f"human/robot frame counts differ ({len(self.human_frames)} vs {len(self.robot_frames)})"
            )
        if len(self.human_frames) == 0:
            raise DatasetError("empty trajectory")
        if not self.frame_rate > 0:
            raise DatasetError(f"frame_rate must be positive, got {self.frame_rate}")
        if self.units not in UNITS:
            raise DatasetError(f"units must be one of {UNITS}, got {self.units!r}")
        if not (np.isfinite(self.human_frames).all() and np.isfinite(self.robot_frames).all()):
            raise DatasetError(f"non-finite entries in trajectory {self.name!r}")

    def __len__(self):
        return len(self.human_frames)


@dataclass
class ObservationWindow:
    features: np.ndarray
    t_index: int


@dataclass
class DatasetSplit:
    train: list[TrajectoryPair]
    test: list[TrajectoryPair]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        train_ids = {id(t) for t in self.train}
        if any(id(t) in train_ids for t in self.test):
            raise DatasetError("train and test splits share a trajectory")
        names = [t.name for t in self.train if t.name]
        if set(names) & {t.name for t in self.test if t.name}:
            raise DatasetError("train and test splits share a trajectory name")


@dataclass
class StreamSpec:
    """How one agent's raw frames become per-frame network features."""

    kind: str = "angles"  # "positions" (joints x 3) or "angles"
    joints: int = 0  # number of 3-D joints, positions only
    velocities: bool = False
    shoulder_index: int | None = None

    def frame_dim(self, raw_dim: int) -> int:
        return raw_dim * 2 if self.velocities else raw_dim


@dataclass
class FeatureSpec:
    human: StreamSpec = field(default_factory=lambda: StreamSpec("positions", 3, True, 0))
    robot: StreamSpec = field(default_factory=StreamSpec)
    window: int = 5

    def to_dict(self) -> dict:
        return {
            "human": vars(self.human).copy(),
            "robot": vars(self.robot).copy(),
            "window": self.window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(StreamSpec(**d["human"]), StreamSpec(**d["robot"]), int(d.get("window", 5)))


def downsample(traj: TrajectoryPair, target_hz: float) -> TrajectoryPair:
    """Keep every k-th frame, k = round(source rate / target rate)."""
    if target_hz <= 0:
        raise DatasetError(f"target rate must be positive, got {target_hz}")
    if target_hz > traj.frame_rate * (1 + 1e-9):
        raise DatasetError(
            f"cannot downsample {traj.frame_rate} Hz to a higher rate {target_hz} Hz"
        )
    stride = max(1, int(round(traj.frame_rate / target_hz)))
    return TrajectoryPair(
        traj.human_frames[::stride].copy(),
        traj.robot_frames[::stride].copy(),
        float(target_hz),
        traj.units,
        traj.action_label,
        traj.name,
    )


def compute_velocities(positions) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or len(positions) < 1:
        raise DatasetError(f"expected a non-empty T x D matrix, got shape {positions.shape}")
    vel = np.zeros_like(positions)
    vel[1:] = positions[1:] - positions[:-1]
    return vel


def recenter(positions: np.ndarray, joints: int, origin_joint: int) -> np.ndarray:
    """Express every joint relative to ``origin_joint`` (e.g. the shoulder)."""
    p = np.asarray(positions, dtype=np.float64).reshape(len(positions), joints, 3)
    return (p - p[:, origin_joint : origin_joint + 1]).reshape(len(positions), joints * 3)


def stream_features(frames: np.ndarray, spec: StreamSpec) -> np.ndarray:
    """Per-frame features for one agent.

    Positions are laid out joint-major, ``[x, y, z, dx, dy, dz]`` per joint
    when velocities are on; angle streams are ``[q..., dq...]``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if spec.kind == "positions":
        if frames.shape[1] != spec.joints * 3:
            raise DatasetError(
                f"position stream expects {spec.joints * 3} columns, got {frames.shape[1]}"
            )
        if spec.shoulder_index is not None:
            frames = recenter(frames, spec.joints, spec.shoulder_index)
        if not spec.velocities:
            return frames
        vel = compute_velocities(frames)
        T = len(frames)
        both = np.concatenate(
            [frames.reshape(T, spec.joints, 3), vel.reshape(T, spec.joints, 3)], axis=2
        )
        return both.reshape(T, spec.joints * 6)
    if spec.kind == "angles":
        if not spec.velocities:
            return frames
        return np.concatenate([frames, compute_velocities(frames)], axis=1)
    raise DatasetError(f"unknown stream kind {spec.kind!r}")


def window_matrix(features, W: int) -> np.ndarray:
    """T x (W*D) matrix; row t flattens frames t-W+1..t, start-padded with frame 0."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) == 0:
        raise DatasetError("cannot window an empty trajectory")
    if W < 1:
        raise DatasetError(f"window length must be >= 1, got {W}")
    T = len(features)
    idx = np.arange(T)[:, None] + np.arange(-W + 1, 1)[None, :]
    idx = np.clip(idx, 0, None)
    return features[idx].reshape(T, -1)


def window_observations(traj_features, W: int) -> list[ObservationWindow]:
    mat = window_matrix(traj_features, W)
    return [ObservationWindow(row, t) for t, row in enumerate(mat)]


def last_frame(windows: np.ndarray, frame_dim: int) -> np.ndarray:
    """Newest frame of each flattened window (the executed action)."""
    return np.asarray(windows)[..., -frame_dim:]


def trajectory_windows(traj: TrajectoryPair, spec: FeatureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Windowed human and robot inputs for every timestep of ``traj``."""
    xh = window_matrix(stream_features(traj.human_frames, spec.human), spec.window)
    xr = window_matrix(stream_features(traj.robot_frames, spec.robot), spec.window)
    return xh, xr


# ---------------------------------------------------------------------------
# synthetic interactions
# ---------------------------------------------------------------------------

SHOULDER = np.array([0.0, -0.2, 1.4])
# fixed coupling: robot joint angles from the human wrist relative to the shoulder
_COUPLING_A = np.array(
    [
        [2.0, 0.0, 0.5],
        [0.0, -2.0, 0.0],
        [0.5, 0.0, 2.0],
        [1.0, 1.0, -1.0],
    ]
)
_COUPLING_B = np.array([-0.5, 0.0, 0.6, 0.0])
_REST = np.array([0.0, 0.0, -0.55])


def coupling_map(human_frames: np.ndarray) -> np.ndarray:
    """Noiseless robot joint angles (T x 4) for human frames (T x 9)."""
    h = np.asarray(human_frames, dtype=np.float64).reshape(len(human_frames), 3, 3)
    wrist = h[:, 2] - h[:, 0]
    return np.tanh(wrist @ _COUPLING_A.T + _COUPLING_B)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def _wrist_path(mode: str, T: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)
    onset = rng.uniform(2.0, 5.0)
    rise = rng.uniform(8.0, 12.0)
    s = _smoothstep((t - onset) / rise)[:, None]
    if mode == "reach":
        target = np.array([rng.uniform(0.40, 0.50), rng.uniform(-0.10, 0.10), rng.uniform(-0.15, -0.05)])
        return _REST + s * (target - _REST)
    if mode == "wave":
        raised = np.array([rng.uniform(0.05, 0.15), rng.uniform(-0.05, 0.05), rng.uniform(0.40, 0.50)])
        amp = rng.uniform(0.12, 0.2)
        period = rng.uniform(10.0, 14.0)
        phase = 2 * np.pi * (t - onset) / period
        sway = np.stack([np.zeros(T), amp * np.sin(phase), np.zeros(T)], axis=1)
        return _REST + s * (raised - _REST) + s * sway
    if mode == "circle":
        centre = np.array([0.3, 0.25, 0.1])
        radius = rng.uniform(0.1, 0.15)
        phase = 2 * np.pi * (t - onset) / rng.uniform(16.0, 20.0)
        loop = radius * np.stack([np.zeros(T), np.cos(phase), np.sin(phase)], axis=1)
        return _REST + s * (centre + loop - _REST)
    raise DatasetError(f"unknown interaction mode {mode!r}")


def _skeleton(wrist_rel: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    T = len(wrist_rel)
    sway = 0.01 * np.sin(np.arange(T) / 7.0 + rng.uniform(0, 2 * np.pi))[:, None] * np.array([1.0, 0.0, 0.0])
    shoulder = SHOULDER + sway
    elbow_rel = 0.5 * wrist_rel + np.array([0.0, -0.05, -0.05])
    frames = np.stack([shoulder, shoulder + elbow_rel, shoulder + wrist_rel], axis=1)
    return frames.reshape(T, 9)


@dataclass
class SynthConfig:
    modes: Sequence[str] = ("reach", "wave")
    proportions: Sequence[float] | None = None
    n_train: int = 40
    n_test: int = 10
    length: int = 50
    noise: float = 0.01
    frame_rate: float = 20.0

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def default_feature_spec() -> FeatureSpec:
    return FeatureSpec(
        human=StreamSpec("positions", joints=3, velocities=True, shoulder_index=0),
        robot=StreamSpec("angles", velocities=False),
        window=5,
    )


def _mode_counts(n: int, proportions: np.ndarray) -> list[int]:
    raw = proportions * n
    counts = np.floor(raw).astype(int)
    # largest remainder
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def synth_interaction_dataset(config: SynthConfig, seed: int = 0) -> DatasetSplit:
    """Coupled human/robot trajectories from a handful of interaction modes.

    The robot stream is ``coupling_map(human) + noise`` and each trajectory's
    generating mode is stored as its action label and in the manifest.
    """
    modes = list(config.modes)
    if len(modes) < 1:
        raise DatasetError("at least one interaction mode is required")
    if config.length < 1 or config.n_train < 0 or config.n_test < 0:
        raise DatasetError("length must be >= 1 and counts nonnegative")
    props = np.ones(len(modes)) if config.proportions is None else np.asarray(config.proportions, float)
    if len(props) != len(modes) or (props < 0).any() or props.sum() <= 0:
        raise DatasetError("proportions must be nonnegative, one per mode")
    props = props / props.sum()

    rng = np.random.default_rng(seed)
    splits: dict[str, list[TrajectoryPair]] = {}
    records = []
    for split, n in (("train", config.n_train), ("test", config.n_test)):
        labels = [m for m, c in zip(modes, _mode_counts(n, props)) for _ in range(c)]
        labels = [labels[i] for i in rng.permutation(len(labels))]
        out = []
        for k, mode in enumerate(labels):
            wrist = _wrist_path(mode, config.length, rng)
            human = _skeleton(wrist, rng)
            robot = coupling_map(human)
            if config.noise > 0:
                robot = robot + config.noise * rng.standard_normal(robot.shape)
            name = f"{split}_{k:03d}"
            out.append(TrajectoryPair(human, robot, config.frame_rate, "radians", mode, name))
            records.append({"name": name, "split": split, "mode": mode})
        splits[split] = out

    manifest = {
        "provenance": {
            "generator": "synth_interaction_dataset",
            "seed": int(seed),
            "config": {
                "modes": modes,
                "proportions": props.tolist(),
                "n_train": config.n_train,
                "n_test": config.n_test,
                "length": config.length,
                "noise": config.noise,
                "frame_rate": config.frame_rate,
            },
            "modes": records,
        },
        "feature_spec": default_feature_spec().to_dict(),
    }
    return DatasetSplit(splits["train"], splits["test"], manifest)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def write_trajectory(path: Path, traj: TrajectoryPair) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            human=traj.human_frames.astype("<f4"),
            robot=traj.robot_frames.astype("<f4"),
        )


def read_trajectory(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with np.load(path) as data:
            return data["human"].astype(np.float64), data["robot"].astype(np.float64)
    except (OSError, KeyError, ValueError) as err:
        raise DatasetError(f"cannot read trajectory container {path}: {err}") from err


def save_dataset(split: DatasetSplit, out_dir) -> Path:
    """Write containers plus manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    for name, trajs in (("train", split.train), ("test", split.test)):
        for k, traj in enumerate(trajs):
            stem = traj.name or f"{name}_{k:03d}"
            rel = Path("trajectories") / f"{stem}.npz"
            write_trajectory(out_dir / rel, traj)
            entry = {
                "path": rel.as_posix(),
                "frame_rate": traj.frame_rate,
                "units": traj.units,
                "split": name,
            }
            if traj.action_label is not None:
                entry["action_label"] = traj.action_label
            entries.append(entry)
    manifest = copy.deepcopy(split.manifest)
    manifest["trajectories"] = entries
    manifest.setdefault("feature_spec", default_feature_spec().to_dict())
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _hash_split(entries: list[dict]) -> list[str]:
    """Deterministic 80/20 assignment by hashing trajectory paths."""
    keyed = sorted(entries, key=lambda e: hashlib.sha256(e["path"].encode()).hexdigest())
    n_test = int(math.ceil(0.2 * len(entries))) if len(entries) > 1 else 0
    test = {e["path"] for e in keyed[:n_test]}
    return ["test" if e["path"] in test else "train" for e in entries]


def load_dataset(manifest_path) -> DatasetSplit:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise DatasetError(f"cannot read manifest {manifest_path}: {err}") from err
    entries = manifest.get("trajectories")
    if not entries:
        raise DatasetError(f"manifest {manifest_path} lists no trajectories")
    splits = [e.get("split") for e in entries]
    if any(s is None for s in splits):
        splits = _hash_split(entries)
    root = manifest_path.parent
    train, test = [], []
    for entry, split in zip(entries, splits):
        human, robot = read_trajectory(root / entry["path"])
        traj = TrajectoryPair(
            human,
            robot,
            float(entry["frame_rate"]),
            entry.get("units", "radians"),
            entry.get("action_label"),
            Path(entry["path"]).stem,
        )
        (test if split == "test" else train).append(traj)
    return DatasetSplit(train, test, manifest)


def manifest_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def feature_spec_of(split: DatasetSplit) -> FeatureSpec:
    d = split.manifest.get("feature_spec")
    return FeatureSpec.from_dict(d) if d else default_feature_spec()


def prepare_dataset(manifest_path, out_dir, target_hz: float | None = None) -> Path:
    """Ingest raw trajectories listed in a manifest, downsample and rewrite.

    Recentering and velocity construction happen at feature time (driven by
    ``feature_spec``) so the written containers keep raw frames.
    """
    split = load_dataset(manifest_path)
    if target_hz is not None:
        split = DatasetSplit(
            [downsample(t, target_hz) for t in split.train],
            [downsample(t, target_hz) for t in split.test],
            split.manifest,
        )
    manifest = copy.deepcopy(split.manifest)
    manifest.pop("trajectories", None)
    prov = manifest.setdefault("provenance", {})
    prov["source_manifest"] = str(Path(manifest_path))
    prov["sources"] = [e["path"] for e in split.manifest["trajectories"]]
    prov["downsampled_to_hz"] = target_hz
    return save_dataset(DatasetSplit(split.train, split.test, manifest), out_dir)
