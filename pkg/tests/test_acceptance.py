"""Acceptance suite: every criterion runs at its pinned tolerance and prints
one [ACCEPTANCE] pass/fail line (visible with ``pytest -s``)."""

import csv
import time
from contextlib import contextmanager

import numpy as np
import pytest

from helpers import (
    capture_from_configurations,
    default_model,
    sinusoid_trajectory,
    synthetic_ecg,
    tracked_dof_indices,
    write_bend_session,
)

from exoload import cli
from exoload.biosignals import (
    detect_r_peaks,
    emg_change_pct,
    emg_envelope,
    instantaneous_heart_rate,
    settle_samples,
    signal_rms,
)
from exoload.dynamics import LaevoModel, inverse_dynamics
from exoload.geometry import IDENTITY_QUAT, matrix_to_rotvec, quat_normalize
from exoload.pipeline import load_config, run_pipeline
from exoload.posture import time_fraction_above
from exoload.retarget import Reference, default_task_stack, retarget_trajectory, solve_frame
from exoload.skeleton import JointConfiguration, KinematicState, integrate_configuration, task_jacobian
from exoload.surveys import apply_reverse, construct_scores, format_mean_stdev, load_schema
from exoload.surveys import ResponseSet
from test_dynamics import single_hinge_model


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    elapsed = time.perf_counter() - start
    if elapsed > budget_s:
        print(f"[ACCEPTANCE] {name}: FAIL (runtime {elapsed:.2f}s exceeds {budget_s}s)")
        raise AssertionError(f"{name}: runtime {elapsed:.2f}s exceeds the {budget_s}s budget")
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s)")


def test_acceptance_laevo_model_endpoints():
    with criterion("laevo-model-endpoints", budget_s=1.0):
        lv = LaevoModel()
        assert lv.torque(20.0, 1.0) == 0.0
        assert lv.torque(50.0, 1.0) == 40.0
        for theta in (25.0, 35.0, 45.0):
            gap = lv.spring_torque(theta, "ascending") - lv.spring_torque(theta, "descending")
            assert gap == 10.0


def test_acceptance_inverse_dynamics_oracle():
    with criterion("inverse-dynamics-oracle", budget_s=1.0):
        pendulum = single_hinge_model(mass=10.0, com_distance=0.3)
        q = JointConfiguration(np.zeros(3), IDENTITY_QUAT, [np.radians(30.0)])
        tau = inverse_dynamics(pendulum, q, np.zeros(7), np.zeros(7))
        assert tau[6] == pytest.approx(14.715, rel=1e-6)

        model = default_model()
        rng = np.random.default_rng(1)
        q_h = JointConfiguration(
            np.zeros(3), IDENTITY_QUAT, rng.uniform(-0.6, 0.6, model.n_joint_dofs)
        )
        tau = inverse_dynamics(model, q_h, np.zeros(49), np.zeros(49), gravity=0.0)
        assert np.max(np.abs(tau)) < 1e-10


def test_acceptance_jacobian_finite_difference_suite():
    with criterion("jacobian-finite-difference", budget_s=5.0):
        model = default_model()
        rng = np.random.default_rng(99)
        h = 1e-6
        frames = ("left_hand", "right_hand", "head", "thorax", "left_foot")
        worst = 0.0
        for trial in range(20):
            q = JointConfiguration(
                rng.normal(size=3),
                quat_normalize(rng.normal(size=4)),
                rng.uniform(-0.8, 0.8, model.n_joint_dofs),
            )
            frame = frames[trial % len(frames)]
            J = task_jacobian(model, q, frame, "both")
            Jfd = np.zeros_like(J)
            for i in range(model.n_velocity):
                u = np.zeros(model.n_velocity)
                u[i] = 1.0
                sp = KinematicState(model, integrate_configuration(model, q, u, h)).segment_pose(
                    model.resolve_frame(frame)
                )
                sm = KinematicState(model, integrate_configuration(model, q, u, -h)).segment_pose(
                    model.resolve_frame(frame)
                )
                Jfd[0:3, i] = (sp.position - sm.position) / (2 * h)
                Jfd[3:6, i] = matrix_to_rotvec(sp.rotation @ sm.rotation.T) / (2 * h)
            worst = max(worst, float(np.max(np.abs(J - Jfd))))
        assert worst <= 1e-5


def test_acceptance_strict_priority():
    with criterion("strict-priority", budget_s=5.0):
        model = default_model()
        tasks = default_task_stack()
        level1 = [t for t in tasks if t.priority == 1]
        rng = np.random.default_rng(5)
        base = model.upright_configuration()
        dt = 1.0 / 240.0
        for _ in range(10):
            q = JointConfiguration(
                base.base_position, base.base_orientation,
                rng.uniform(-0.3, 0.3, model.n_joint_dofs),
            )
            state = KinematicState(model, q)
            refs = {}
            for task in tasks:
                name = model.resolve_frame(task.frame)
                if name == "com":
                    refs[task.frame] = Reference(position=state.com(), rotation=np.eye(3))
                else:
                    pose = state.segment_pose(name)
                    refs[task.frame] = Reference(position=pose.position, rotation=pose.rotation)
            # conflicting level-2 demands against the held feet and balance
            refs["pelvis"] = Reference(
                position=refs["pelvis"].position + rng.uniform(-1.0, 1.0, 3),
                rotation=refs["pelvis"].rotation,
            )
            refs["right_wrist"] = Reference(
                position=refs["right_wrist"].position + rng.uniform(-2.0, 2.0, 3),
                rotation=np.eye(3),
            )
            full = solve_frame(model, q, tasks, refs, dt)
            only1 = solve_frame(model, q, level1, refs, dt)
            assert abs(full.level1_residual - only1.level1_residual) <= 1e-8


def test_acceptance_retarget_round_trip():
    with criterion("retarget-round-trip", budget_s=60.0):
        model = default_model()
        truth = sinusoid_trajectory(model, 10.0, 240.0)
        captured = capture_from_configurations(model, truth, 240.0)
        result = retarget_trajectory(model, captured)
        assert result.n_frames == len(truth)
        tracked = tracked_dof_indices(model)
        err = np.array(
            [
                result.configurations[k].joint_angles[tracked] - truth[k].joint_angles[tracked]
                for k in range(len(truth))
            ]
        )
        rms = float(np.degrees(np.sqrt(np.mean(err**2))))
        assert rms <= 2.0
        # determinism across reruns
        again = retarget_trajectory(model, captured)
        for a, b in zip(result.configurations, again.configurations):
            assert np.array_equal(a.joint_angles, b.joint_angles)


def test_acceptance_torque_reduction_consistency(tmp_path):
    with criterion("torque-reduction-consistency", budget_s=60.0):
        config_path = write_bend_session(tmp_path, duration_s=2.0, exoskeleton="laevo")
        bundle = run_pipeline(load_config(config_path))
        with open(bundle.files["torque_summaries"], newline="") as fh:
            rows = {(r["label"], r["channel"]): r for r in csv.DictReader(fh)}
        exo_median = float(rows[("PS", "tau_exo")]["median"])
        assert exo_median == pytest.approx(80.0 / 3.0, abs=0.01)
        with open(bundle.files["torque_reductions"], newline="") as fh:
            reduction = float(list(csv.DictReader(fh))[0]["median_reduction_pct"])
        assert 5.0 <= reduction <= 30.0


def test_acceptance_emg_pipeline():
    with criterion("emg-pipeline", budget_s=5.0):
        fs = 4370.0
        t = np.arange(int(10 * fs)) / fs
        x = 100.0 * np.sin(2 * np.pi * 1.0 * t)
        env = emg_envelope(x, fs)
        steady = env[settle_samples(fs):]
        assert signal_rms(steady) == pytest.approx(100.0 / np.sqrt(2.0), rel=0.02)
        # change-percentage gain invariance: bit-exact for power-of-two gains
        # (pure exponent scaling), float-precision for arbitrary gains
        rng = np.random.default_rng(0)
        a = np.abs(rng.normal(50.0, 5.0, 4000))
        b = np.abs(rng.normal(40.0, 5.0, 4000))
        assert emg_change_pct(2.0 * a, 2.0 * b) == emg_change_pct(a, b)
        assert emg_change_pct(3.7 * a, 3.7 * b) == pytest.approx(
            emg_change_pct(a, b), rel=1e-12
        )


def test_acceptance_ecg_heart_rate():
    with criterion("ecg-heart-rate", budget_s=5.0):
        fs = 1000.0
        noisy, _ = synthetic_ecg(fs, 60.0, 60.0, snr_db=20.0)
        beats = detect_r_peaks(noisy, fs)
        hr = instantaneous_heart_rate(beats)
        assert np.median(hr.bpm) == pytest.approx(60.0, abs=0.5)
        clean, truth = synthetic_ecg(fs, 60.0, 60.0)
        assert len(detect_r_peaks(clean, fs)) == len(truth)


def test_acceptance_survey_scoring():
    with criterion("survey-scoring", budget_s=1.0):
        schema = load_schema("B")
        pair = [ResponseSet("p1", "B", {"1": 4}), ResponseSet("p2", "B", {"1": 5})]
        scores = {s.construct: s for s in construct_scores(schema, pair, skip_empty=True)}
        s = scores["Easiness to install"]
        assert format_mean_stdev(s.mean, s.stdev) == "4.5±0.7"
        same = [ResponseSet("p1", "B", {"13": 2}), ResponseSet("p2", "B", {"13": 2})]
        scores = {s.construct: s for s in construct_scores(schema, same, skip_empty=True)}
        s = scores["Reduction of physical effort"]
        assert format_mean_stdev(s.mean, s.stdev) == "4.0±0.0"
        for value in (1, 2, 3, 4, 5):
            assert apply_reverse(apply_reverse(value)) == value


def test_acceptance_postural_metric():
    with criterion("postural-metric", budget_s=1.0):
        wave = np.concatenate([np.full(400, 30.0), np.full(600, 10.0)])
        assert time_fraction_above(wave, 20.0) == 0.4


def test_acceptance_pipeline_determinism(tmp_path):
    with criterion("pipeline-determinism", budget_s=120.0):
        config_path = write_bend_session(tmp_path, duration_s=1.0, exoskeleton="laevo")
        assert cli.main(["pipeline", "--config", str(config_path)]) == 0
        out_dir = tmp_path / "out"
        snapshot = {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}
        assert cli.main(["pipeline", "--config", str(config_path)]) == 0
        for p in sorted(out_dir.iterdir()):
            assert p.read_bytes() == snapshot[p.name], f"{p.name} differs between runs"
        assert set(snapshot) == {p.name for p in out_dir.iterdir()}
