"""Inverse dynamics of the retargeted motion, the passive back-support
exoskeleton torque model, and the decomposition of the net lumbar torque into
human and exoskeleton shares.

Sign conventions: the reported L5/S1 sagittal torque is flexion-positive, i.e.
positive when the back counters gravity on a forward-flexed trunk. The raw
generalized force returned by ``inverse_dynamics`` is the actuation torque in
the joint-angle direction; for a forward bend that actuation is extensor, so
the reported load series negates the lumbar flexion coordinate. The assistive
exoskeleton torque shares the flexion-positive convention, which makes
``tau_net = tau_human + tau_exo`` an elementwise identity.

Exoskeleton mass and external loads (patient handling) are deliberately
excluded: the toolkit quantifies postural effort only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

from .errors import ValidationError
from .geometry import quat_conjugate, quat_multiply, quat_normalize, quat_to_rotvec
from .skeleton import (
    JointConfiguration,
    KinematicState,
    SkeletonModel,
    lumbar_flexion_index,
)

GRAVITY_DEFAULT = 9.81  # m/s^2, downward

# Reported lumbar load is the gravity/dynamics-countering demand, positive in
# flexion; the raw actuation torque at the lumbar flexion DoF is its negative.
LUMBAR_LOAD_SIGN = -1.0


def inverse_dynamics(
    model: SkeletonModel,
    q: JointConfiguration,
    qd: np.ndarray,
    qdd: np.ndarray,
    gravity: float | np.ndarray = GRAVITY_DEFAULT,
) -> np.ndarray:
    """Generalized forces of the free-floating model via a recursive
    Newton-Euler sweep in world coordinates.

    ``qd``/``qdd`` follow the 49-coordinate velocity layout. The first six
    outputs are the base wrench (world force, world torque about the base
    origin); the remainder are joint actuation torques, one per DoF.
    """
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    nv = model.n_velocity
    if qd.shape != (nv,) or qdd.shape != (nv,):
        raise ValidationError(f"expected velocity/acceleration of shape ({nv},)")
    if np.isscalar(gravity):
        g_vec = np.array([0.0, 0.0, -float(gravity)])
    else:
        g_vec = np.asarray(gravity, dtype=float)

    state = KinematicState(model, q)
    n = model.n_joint_dofs
    parent = model._dof_parent

    # forward sweep: world kinematics of every link origin; the base linear
    # acceleration is offset by -g so gravity rides through the recursion
    w = np.zeros((n, 3))
    al = np.zeros((n, 3))
    acc = np.zeros((n, 3))
    w0, a0 = qd[3:6], qdd[3:6]
    acc0 = qdd[0:3] - g_vec

    axes = state.axis_world
    for i in range(n):
        p = parent[i]
        if p < 0:
            wp, alp, accp, xp = w0, a0, acc0, state.base_position
        else:
            wp, alp, accp, xp = w[p], al[p], acc[p], state.link_position[p]
        r = state.link_position[i] - xp
        s = axes[i]
        w[i] = wp + s * qd[6 + i]
        al[i] = alp + s * qdd[6 + i] + np.cross(wp, s * qd[6 + i])
        acc[i] = accp + np.cross(alp, r) + np.cross(wp, np.cross(wp, r))

    # per-link inertial wrench about the link origin
    f_acc = np.zeros((n, 3))
    n_acc = np.zeros((n, 3))
    f_base = np.zeros(3)
    n_base = np.zeros(3)

    def body_wrench(seg_index: int, link: int) -> None:
        seg = model.segments[seg_index]
        if seg.mass == 0.0:
            return
        if link < 0:
            R, x = state.base_rotation, state.base_position
            wi, ali, acci = w0, a0, acc0
        else:
            R, x = state.link_rotation[link], state.link_position[link]
            wi, ali, acci = w[link], al[link], acc[link]
        rc = R @ seg.com_offset
        a_com = acci + np.cross(ali, rc) + np.cross(wi, np.cross(wi, rc))
        F = seg.mass * a_com
        I_w = R @ seg.inertia @ R.T
        N = I_w @ ali + np.cross(wi, I_w @ wi)
        if link < 0:
            nonlocal f_base, n_base
            f_base = f_base + F
            n_base = n_base + N + np.cross(rc, F)
        else:
            f_acc[link] += F
            n_acc[link] += N + np.cross(rc, F)

    base_index = model.segment_index[model.base_segment]
    body_wrench(base_index, -1)
    for i in range(n):
        seg_index = model._dof_segment[i]
        if seg_index >= 0:
            body_wrench(seg_index, i)

    tau = np.zeros(nv)
    for i in range(n - 1, -1, -1):
        tau[6 + i] = float(axes[i] @ n_acc[i])
        p = parent[i]
        if p < 0:
            r = state.link_position[i] - state.base_position
            f_base = f_base + f_acc[i]
            n_base = n_base + n_acc[i] + np.cross(r, f_acc[i])
        else:
            r = state.link_position[i] - state.link_position[p]
            f_acc[p] += f_acc[i]
            n_acc[p] += n_acc[i] + np.cross(r, f_acc[i])
    tau[0:3] = f_base
    tau[3:6] = n_base
    return tau


def estimate_derivatives(
    configurations: list[JointConfiguration],
    dt: float,
    smooth_cutoff_hz: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized velocities and accelerations of a uniformly sampled joint
    trajectory.

    Central differences in the interior, second-order one-sided stencils at
    the boundaries (exact for quadratic profiles). Base angular velocity comes
    from quaternion differences. Optional zero-phase low-pass smoothing is
    applied to the position/angle channels before differencing.
    """
    n = len(configurations)
    if n < 3:
        raise ValidationError("derivative estimation needs at least 3 frames")
    if dt <= 0.0:
        raise ValidationError("dt must be positive")

    P = np.array([c.base_position for c in configurations])
    Q = np.array([c.base_orientation for c in configurations])
    A = np.array([c.joint_angles for c in configurations])

    if smooth_cutoff_hz is not None:
        fs = 1.0 / dt
        if smooth_cutoff_hz <= 0.0 or smooth_cutoff_hz >= fs / 2.0:
            raise ValidationError("smoothing cutoff must lie in (0, fs/2)")
        num, den = butter(2, smooth_cutoff_hz, fs=fs)
        pad = min(3 * max(len(num), len(den)), n - 1)
        P = filtfilt(num, den, P, axis=0, padlen=pad)
        A = filtfilt(num, den, A, axis=0, padlen=pad)

    def diff_series(X: np.ndarray) -> np.ndarray:
        D = np.empty_like(X)
        D[1:-1] = (X[2:] - X[:-2]) / (2.0 * dt)
        D[0] = (-3.0 * X[0] + 4.0 * X[1] - X[2]) / (2.0 * dt)
        D[-1] = (3.0 * X[-1] - 4.0 * X[-2] + X[-3]) / (2.0 * dt)
        return D

    nv = 6 + A.shape[1]
    U = np.zeros((n, nv))
    U[:, 0:3] = diff_series(P)
    U[:, 6:] = diff_series(A)

    omega = np.zeros((n, 3))
    for k in range(n):
        if 0 < k < n - 1:
            dq = quat_multiply(Q[k + 1], quat_conjugate(Q[k - 1]))
            omega[k] = quat_to_rotvec(quat_normalize(dq)) / (2.0 * dt)
        elif k == 0:
            dq = quat_multiply(Q[1], quat_conjugate(Q[0]))
            omega[k] = quat_to_rotvec(quat_normalize(dq)) / dt
        else:
            dq = quat_multiply(Q[-1], quat_conjugate(Q[-2]))
            omega[k] = quat_to_rotvec(quat_normalize(dq)) / dt
    U[:, 3:6] = omega

    dU = diff_series(U)
    return U, dU


# -- passive exoskeleton torque model ---------------------------------------


@dataclass
class LaevoModel:
    """Piecewise-linear spring with frictional hysteresis.

    The spring engages at ``theta_min`` (zero torque) and reaches ``tau_max``
    at ``theta_max`` while the trunk flexes; while extending, frictional
    losses lower the whole branch by ``k_loss``. Output torque is clamped to
    [0, tau_max] outside the engagement range. The branch state persists when
    the flexion rate is zero, so one model instance must be stepped
    sequentially through a trial.
    """

    k0: float = -80.0 / 3.0  # Nm
    k1: float = 4.0 / 3.0  # Nm/deg
    k_loss: float = 10.0  # Nm
    theta_min: float = 20.0  # deg
    theta_max: float = 50.0  # deg
    tau_max: float = 40.0  # Nm
    rate_tolerance: float = 1e-6  # deg/s; |rate| at or below holds the branch
    branch: str = "ascending"

    def __post_init__(self) -> None:
        tol = 1e-9
        if abs(self.k0 + self.k1 * self.theta_min) > tol:
            raise ValidationError("spring must produce zero torque at the engagement angle")
        if abs(self.k0 + self.k1 * self.theta_max - self.tau_max) > tol:
            raise ValidationError("spring must reach tau_max at the top of the range")
        if self.k_loss < 0.0:
            raise ValidationError("k_loss must be non-negative")
        if not self.theta_min < self.theta_max:
            raise ValidationError("engagement range must be non-empty")
        if self.branch not in ("ascending", "descending"):
            raise ValidationError(f"unknown branch {self.branch!r}")

    def spring_torque(self, theta_deg: float, branch: str | None = None) -> float:
        """Unclamped branch torque. Evaluated in the endpoint-anchored form
        ``tau_max * (theta - theta_min) / (theta_max - theta_min)`` so the
        range endpoints are float-exact."""
        if branch is None:
            branch = self.branch
        tau = self.tau_max * (theta_deg - self.theta_min) / (self.theta_max - self.theta_min)
        if branch == "descending":
            tau -= self.k_loss
        return tau

    def torque(self, theta_deg: float, theta_dot_deg_s: float) -> float:
        """Assistive torque for one sample; updates the hysteresis branch."""
        if not np.isfinite(theta_deg):
            raise ValidationError("flexion angle must be finite")
        if theta_dot_deg_s > self.rate_tolerance:
            self.branch = "ascending"
        elif theta_dot_deg_s < -self.rate_tolerance:
            self.branch = "descending"
        tau = self.spring_torque(theta_deg, self.branch)
        return float(min(max(tau, 0.0), self.tau_max))

    def reset(self, branch: str = "ascending") -> None:
        if branch not in ("ascending", "descending"):
            raise ValidationError(f"unknown branch {branch!r}")
        self.branch = branch


def laevo_torque(model_state: LaevoModel, theta_deg: float, theta_dot_deg_s: float) -> float:
    """Functional alias for :meth:`LaevoModel.torque`."""
    return model_state.torque(theta_deg, theta_dot_deg_s)


def laevo_torque_series(
    model_state: LaevoModel, theta_deg: np.ndarray, theta_dot_deg_s: np.ndarray
) -> np.ndarray:
    theta_deg = np.asarray(theta_deg, dtype=float)
    theta_dot_deg_s = np.asarray(theta_dot_deg_s, dtype=float)
    if theta_deg.shape != theta_dot_deg_s.shape:
        raise ValidationError("angle and rate series must have equal length")
    return np.array([model_state.torque(t, td) for t, td in zip(theta_deg, theta_dot_deg_s)])


def load_exoskeleton_params(path: str | Path) -> LaevoModel:
    from .io import load_json_file  # local import: io depends on this module

    payload = load_json_file(path)
    try:
        return LaevoModel(
            k0=float(payload["k0"]),
            k1=float(payload["k1"]),
            k_loss=float(payload["k_loss"]),
            theta_min=float(payload["theta_min"]),
            theta_max=float(payload["theta_max"]),
            tau_max=float(payload["tau_max"]),
        )
    except KeyError as exc:
        raise ValidationError(f"exoskeleton parameter file {path} missing field {exc}") from exc


# -- torque series and decomposition ----------------------------------------


@dataclass
class TorqueSeries:
    """Per-frame L5/S1 sagittal torques (flexion-positive) plus the back
    flexion angle driving the exoskeleton model."""

    times: np.ndarray  # s
    tau_net: np.ndarray  # Nm
    tau_exo: np.ndarray  # Nm
    tau_human: np.ndarray  # Nm
    theta_deg: np.ndarray
    theta_dot_deg_s: np.ndarray

    def __post_init__(self) -> None:
        arrays = [
            self.times,
            self.tau_net,
            self.tau_exo,
            self.tau_human,
            self.theta_deg,
            self.theta_dot_deg_s,
        ]
        n = len(self.times)
        if any(len(a) != n for a in arrays):
            raise ValidationError("torque series channels must have equal length")
        if not np.allclose(self.tau_human, self.tau_net - self.tau_exo, rtol=0.0, atol=0.0):
            raise ValidationError("tau_human must equal tau_net - tau_exo exactly")

    @property
    def n_frames(self) -> int:
        return len(self.times)


def decompose_torque(
    times: np.ndarray,
    tau_net: np.ndarray,
    tau_exo: np.ndarray,
    theta_deg: np.ndarray | None = None,
    theta_dot_deg_s: np.ndarray | None = None,
) -> TorqueSeries:
    """Split the net lumbar torque into shares: ``tau_human = tau_net -
    tau_exo`` elementwise."""
    times = np.asarray(times, dtype=float)
    tau_net = np.asarray(tau_net, dtype=float)
    tau_exo = np.asarray(tau_exo, dtype=float)
    if len(tau_net) != len(tau_exo) or len(times) != len(tau_net):
        raise ValidationError(
            f"series length mismatch: times={len(times)} net={len(tau_net)} exo={len(tau_exo)}"
        )
    n = len(times)
    theta = np.zeros(n) if theta_deg is None else np.asarray(theta_deg, dtype=float)
    theta_dot = (
        np.zeros(n) if theta_dot_deg_s is None else np.asarray(theta_dot_deg_s, dtype=float)
    )
    return TorqueSeries(
        times=times,
        tau_net=tau_net,
        tau_exo=tau_exo,
        tau_human=tau_net - tau_exo,
        theta_deg=theta,
        theta_dot_deg_s=theta_dot,
    )


def net_lumbar_series(
    model: SkeletonModel,
    configurations: list[JointConfiguration],
    dt: float,
    gravity: float | np.ndarray = GRAVITY_DEFAULT,
    smooth_cutoff_hz: float | None = 5.0,
) -> np.ndarray:
    """Flexion-positive net L5/S1 sagittal torque of a joint trajectory."""
    U, dU = estimate_derivatives(configurations, dt, smooth_cutoff_hz)
    idx = 6 + lumbar_flexion_index(model)
    out = np.empty(len(configurations))
    for k, q in enumerate(configurations):
        tau = inverse_dynamics(model, q, U[k], dU[k], gravity)
        out[k] = LUMBAR_LOAD_SIGN * tau[idx]
    return out


@dataclass(frozen=True)
class EffortRow:
    label: str
    channel: str  # tau_net | tau_human | tau_exo
    summary: "DistributionSummary"


@dataclass(frozen=True)
class LumbarEffortReport:
    rows: tuple[EffortRow, ...]
    median_reduction_pct: dict[str, float] = field(default_factory=dict)


def lumbar_effort_report(series: TorqueSeries, annotation) -> LumbarEffortReport:
    """Per-label distribution summaries of the net and human torques plus the
    median-reduction percentage ``100 * (median_net - median_human) /
    median_net``."""
    from .posture import segment_series, summarize

    rows: list[EffortRow] = []
    reductions: dict[str, float] = {}
    slices = segment_series(series.times, series.tau_net, annotation)
    slices_h = segment_series(series.times, series.tau_human, annotation)
    slices_e = segment_series(series.times, series.tau_exo, annotation)
    for (label, net_vals), (_, hum_vals), (_, exo_vals) in zip(slices, slices_h, slices_e):
        net_summary = summarize(net_vals)
        hum_summary = summarize(hum_vals)
        rows.append(EffortRow(label, "tau_net", net_summary))
        rows.append(EffortRow(label, "tau_human", hum_summary))
        rows.append(EffortRow(label, "tau_exo", summarize(exo_vals)))
        if net_summary.median != 0.0:
            reductions[label] = (
                100.0 * (net_summary.median - hum_summary.median) / net_summary.median
            )
    return LumbarEffortReport(rows=tuple(rows), median_reduction_pct=reductions)
