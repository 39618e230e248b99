"""Shared generators for the test suite: synthetic motions, biosignals and
session fixtures. Everything is seeded and deterministic."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from exoload import io as eio
from exoload.anthropometry import AnthropometricProfile
from exoload.geometry import IDENTITY_QUAT
from exoload.posture import AnnotationSegment, TrialAnnotation
from exoload.retarget import CapturedTrajectory, SegmentTrack
from exoload.skeleton import JointConfiguration, KinematicState, SkeletonModel, build_model

# segments a capture file carries for the default task stack
CAPTURE_SEGMENTS = [
    "pelvis",
    "thorax",
    "head",
    "left_upper_arm",
    "right_upper_arm",
    "left_forearm",
    "right_forearm",
    "left_hand",
    "right_hand",
    "left_foot",
    "right_foot",
]

# DoFs observable from the default task stack: wrist rotations only spin the
# tracked hand origin and the neck split is pinned only through the head
# orientation sum, so both stay out of the recovery metric
UNTRACKED_DOFS = (
    "left_wrist_flexion",
    "left_wrist_deviation",
    "right_wrist_flexion",
    "right_wrist_deviation",
    "lower_neck_flexion",
    "lower_neck_lateral",
    "upper_neck_flexion",
    "upper_neck_lateral",
    "upper_neck_axial",
)


def default_model(height: float = 1.75, mass: float = 70.0) -> SkeletonModel:
    return build_model(AnthropometricProfile(height, mass))


def capture_from_configurations(
    model: SkeletonModel,
    configurations: list[JointConfiguration],
    sample_rate: float,
    include_com: bool = True,
    segments: list[str] | None = None,
) -> CapturedTrajectory:
    """FK-sample a joint trajectory into a captured-trajectory structure."""
    segments = segments if segments is not None else CAPTURE_SEGMENTS
    n = len(configurations)
    times = np.arange(n) / sample_rate
    positions = {s: np.zeros((n, 3)) for s in segments}
    quats = {s: np.zeros((n, 4)) for s in segments}
    com = np.zeros((n, 3))
    for k, q in enumerate(configurations):
        state = KinematicState(model, q)
        for s in segments:
            pose = state.segment_pose(s)
            positions[s][k] = pose.position
            quats[s][k] = pose.quaternion
        com[k] = state.com()
    tracks = {s: SegmentTrack(positions[s], quats[s]) for s in segments}
    if include_com:
        tracks["com"] = SegmentTrack(com, np.tile(IDENTITY_QUAT, (n, 1)))
    return CapturedTrajectory(sample_rate=sample_rate, times=times, segments=tracks)


def sinusoid_trajectory(
    model: SkeletonModel, duration_s: float, sample_rate: float = 240.0
) -> list[JointConfiguration]:
    """Smooth upper-body motion (trunk, neck, arms) over mostly fixed legs,
    starting from the upright configuration."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    base = model.upright_configuration()
    out = []
    amp = {
        "lumbar_flexion": 0.35,
        "lumbar_axial": 0.10,
        "thoracic_flexion": 0.25,
        "thoracic_lateral": 0.08,
        "left_shoulder_flexion": 0.6,
        "right_shoulder_flexion": 0.6,
        "left_shoulder_lateral": 0.25,
        "right_shoulder_lateral": -0.25,
        "left_elbow_flexion": 0.4,
        "right_elbow_flexion": 0.4,
    }
    freq = {
        "lumbar_flexion": 0.5,
        "lumbar_axial": 0.3,
        "thoracic_flexion": 0.5,
        "thoracic_lateral": 0.4,
        "left_shoulder_flexion": 0.4,
        "right_shoulder_flexion": 0.4,
        "left_shoulder_lateral": 0.3,
        "right_shoulder_lateral": 0.3,
        "left_elbow_flexion": 0.5,
        "right_elbow_flexion": 0.5,
    }
    for k in range(n):
        angles = np.zeros(model.n_joint_dofs)
        for name, a in amp.items():
            angles[model.dof_index[name]] = a * np.sin(2 * np.pi * freq[name] * t[k])
        out.append(JointConfiguration(base.base_position, base.base_orientation, angles))
    return out


def bent_configuration(model: SkeletonModel) -> JointConfiguration:
    """Static flat-back 40 degree forward bend with arms raised straight
    forward (horizontal) and the gaze dropped, as held over a bed edge."""
    angles = np.zeros(model.n_joint_dofs)
    angles[model.dof_index["lumbar_flexion"]] = np.radians(32.0)
    angles[model.dof_index["thoracic_flexion"]] = np.radians(8.0)
    angles[model.dof_index["lower_neck_flexion"]] = np.radians(15.0)
    for side in ("left", "right"):
        angles[model.dof_index[f"{side}_shoulder_flexion"]] = np.radians(130.0)
    base = model.upright_configuration()
    return JointConfiguration(base.base_position, base.base_orientation, angles)


def write_bend_session(
    tmp_path: Path,
    duration_s: float = 2.0,
    exoskeleton: str = "laevo",
    with_annotation: bool = True,
) -> Path:
    """Write the static-bend fixture session (motion, annotation, config) and
    return the config path."""
    model = default_model()
    target = bent_configuration(model)
    n = int(round(duration_s * 240.0))
    captured = capture_from_configurations(model, [target] * n, 240.0)
    eio.write_motion_file(tmp_path / "motion.csv", captured)
    config = {
        "profile": {"height_m": 1.75, "mass_kg": 70.0},
        "motion_file": "motion.csv",
        "exoskeleton": exoskeleton,
        "output_dir": "out",
        "seed": 0,
    }
    if with_annotation:
        # skip the settle-in transient where the solver converges onto the pose
        start = min(0.75, duration_s / 2.0)
        annotation = TrialAnnotation("bend", (AnnotationSegment("PS", start, duration_s),))
        eio.write_annotation_file(tmp_path / "annotation.json", annotation)
        config["annotation_file"] = "annotation.json"
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return config_path


def synthetic_ecg(
    fs: float, duration_s: float, bpm: float, snr_db: float | None = None, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian R-wave train plus optional white noise; returns (signal,
    true beat times)."""
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    beats = np.arange(0.5, duration_s - 0.5, 60.0 / bpm)
    signal = np.zeros(n)
    for b in beats:
        signal += np.exp(-0.5 * ((t - b) / 0.01) ** 2)
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        noise_power = np.mean(signal**2) / 10 ** (snr_db / 10)
        signal = signal + rng.normal(0.0, np.sqrt(noise_power), n)
    return signal, beats


def tracked_dof_indices(model: SkeletonModel) -> list[int]:
    return [i for i, name in enumerate(model.dof_names) if name not in UNTRACKED_DOFS]
