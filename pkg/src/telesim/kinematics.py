"""7-DOF serial arm model: forward kinematics and a damped least-squares IK solver.

The arm is a chain of revolute joints, each described by a rotation axis in
its parent frame, a fixed translation to the next joint, and a joint limit
interval. The default model ships a Panda-like kinematic table; exact link
values are a configuration concern, not a correctness one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IKConvergenceError, JointLimitError

# Orientation errors (rad) are weighted by this factor (m/rad) when combined
# with position errors (m) into one scalar residual.
ORIENTATION_WEIGHT = 0.5


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z convention)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w = q[0]
    u = q[1:]
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    uv = np.cross(u, v)
    return v + 2.0 * w * uv + 2.0 * np.cross(u, uv)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a unit quaternion, shortest arc."""
    if q[0] < 0.0:
        q = -q
    vec_norm = float(np.linalg.norm(q[1:]))
    if vec_norm < 1e-12:
        return 2.0 * q[1:]  # small-angle: sin(a/2) ~ a/2
    angle = 2.0 * math.atan2(vec_norm, float(q[0]))
    return q[1:] * (angle / vec_norm)


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def pose_unchecked(position: np.ndarray, orientation: np.ndarray) -> "Pose":
    """Build a Pose without re-validating the quaternion norm. Hot-path
    helper for callers reusing an orientation that was already validated."""
    p = object.__new__(Pose)
    object.__setattr__(p, "position", position)
    object.__setattr__(p, "orientation", orientation)
    return p


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Pose:
    """Position (m) plus unit quaternion orientation (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        norm = float(np.linalg.norm(self.orientation))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"orientation quaternion norm {norm!r} is not 1 within 1e-9")

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.position - other.position))

    def orientation_error_to(self, other: "Pose") -> float:
        """Angle (rad) of the rotation taking this orientation to ``other``'s."""
        q_err = quat_mul(other.orientation, quat_conjugate(self.orientation))
        return float(np.linalg.norm(quat_to_rotvec(q_err)))


@dataclass(frozen=True)
class LinkParam:
    """One revolute joint: rotation axis in the parent frame, the fixed
    translation to the next joint, and the joint's limit interval (rad)."""

    axis: np.ndarray
    offset: np.ndarray
    limits: tuple[float, float]

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", axis / np.linalg.norm(axis))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        lo, hi = self.limits
        if not lo < hi:
            raise ValueError(f"degenerate joint limit interval [{lo}, {hi}]")


@dataclass(frozen=True)
class JointState:
    """Seven joint angles (rad), gripper aperture (m), and a trial-relative
    timestamp (s)."""

    angles: np.ndarray
    gripper_aperture: float = 0.0
    timestamp: float = 0.0

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        if angles.shape != (7,):
            raise ValueError(f"expected 7 joint angles, got shape {angles.shape}")
        object.__setattr__(self, "angles", angles)


@dataclass(frozen=True)
class ArmModel:
    """Kinematic description of a 7-DOF revolute arm. ``ready_angles`` is
    the staging posture sessions start from (tool over the workspace);
    defaults to the mid-range configuration."""

    links: tuple[LinkParam, ...]
    base_pose: Pose = field(default_factory=lambda: Pose(np.zeros(3)))
    max_aperture: float = 0.08
    ready_angles: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(self.links) != 7:
            raise ValueError(f"expected exactly 7 links, got {len(self.links)}")
        # flat per-link scalars for the hot kinematic chain
        object.__setattr__(self, "_scalar_links", tuple(
            (float(l.axis[0]), float(l.axis[1]), float(l.axis[2]),
             float(l.offset[0]), float(l.offset[1]), float(l.offset[2]))
            for l in self.links))
        bp, bq = self.base_pose.position, self.base_pose.orientation
        object.__setattr__(self, "_base_scalars",
                           (float(bp[0]), float(bp[1]), float(bp[2]),
                            float(bq[0]), float(bq[1]), float(bq[2]),
                            float(bq[3])))
        object.__setattr__(self, "_lower", np.array([l.limits[0] for l in self.links]))
        object.__setattr__(self, "_upper", np.array([l.limits[1] for l in self.links]))

    @property
    def lower_limits(self) -> np.ndarray:
        return self._lower

    @property
    def upper_limits(self) -> np.ndarray:
        return self._upper

    @property
    def reach(self) -> float:
        """Upper bound on end-effector distance from the base."""
        return float(sum(np.linalg.norm(l.offset) for l in self.links))

    def home_position(self) -> np.ndarray:
        """End-effector position at the all-zeros configuration: the base plus
        the sum of link offsets rotated only by the base orientation."""
        total = np.zeros(3)
        for link in self.links:
            total = total + link.offset
        return self.base_pose.position + quat_rotate(self.base_pose.orientation, total)

    def clamp_angles(self, angles: np.ndarray) -> np.ndarray:
        return np.clip(angles, self.lower_limits, self.upper_limits)

    def validate_joints(self, joints: JointState) -> None:
        lo, hi = self.lower_limits, self.upper_limits
        if np.any(joints.angles < lo) or np.any(joints.angles > hi):
            bad = [i for i, a in enumerate(joints.angles)
                   if a < lo[i] or a > hi[i]]
            raise JointLimitError(f"joint angle(s) {bad} outside configured limits")
        if not 0.0 <= joints.gripper_aperture <= self.max_aperture + 1e-12:
            raise JointLimitError(
                f"gripper aperture {joints.gripper_aperture} outside [0, {self.max_aperture}]")

    def mid_angles(self) -> np.ndarray:
        return 0.5 * (self.lower_limits + self.upper_limits)

    def staging_angles(self) -> np.ndarray:
        if self.ready_angles is not None:
            return self.clamp_angles(np.asarray(self.ready_angles, dtype=float))
        return self.mid_angles()


def default_arm_model() -> ArmModel:
    """Panda-like 7-DOF table. Link offsets follow the published arm's layout;
    limits are symmetrized so the all-zero configuration is valid. The ready
    posture holds the tool pointing down over the middle of the workspace."""
    z = np.array([0.0, 0.0, 1.0])
    y = np.array([0.0, 1.0, 0.0])
    links = (
        LinkParam(z, np.array([0.0, 0.0, 0.333]), (-2.8973, 2.8973)),
        LinkParam(y, np.array([0.0, 0.0, 0.316]), (-1.7628, 1.7628)),
        LinkParam(z, np.array([0.0825, 0.0, 0.0]), (-2.8973, 2.8973)),
        LinkParam(-y, np.array([-0.0825, 0.0, 0.384]), (-3.0, 3.0)),
        LinkParam(z, np.array([0.0, 0.0, 0.0]), (-2.8973, 2.8973)),
        LinkParam(y, np.array([0.088, 0.0, 0.0]), (-3.0, 3.0)),
        LinkParam(z, np.array([0.0, 0.0, 0.107]), (-2.8973, 2.8973)),
    )
    return ArmModel(links=links,
                    ready_angles=(0.0, 0.118542, 0.0, -2.289681, 0.0,
                                  0.733164, 0.0))


# ---------------------------------------------------------------------------
# forward kinematics

def chain_frames(model: ArmModel, angles: np.ndarray):
    """Walk the chain, returning (joint origins, joint axes in world frame,
    end-effector Pose). Origins/axes feed the geometric Jacobian.

    Scalar quaternion arithmetic throughout: this sits on the hot path of
    both the IK inner loop and the simulation tick, where small-array numpy
    overhead dominates.
    """
    px, py, pz, qw, qx, qy, qz = model._base_scalars
    origins = np.empty((7, 3))
    axes = np.empty((7, 3))
    for i, (ax, ay, az, ox, oy, oz) in enumerate(model._scalar_links):
        origins[i, 0], origins[i, 1], origins[i, 2] = px, py, pz
        # rotate the joint axis into the world frame: v + 2w(u x v) + 2u x (u x v)
        tx = 2.0 * (qy * az - qz * ay)
        ty = 2.0 * (qz * ax - qx * az)
        tz = 2.0 * (qx * ay - qy * ax)
        axes[i, 0] = ax + qw * tx + (qy * tz - qz * ty)
        axes[i, 1] = ay + qw * ty + (qz * tx - qx * tz)
        axes[i, 2] = az + qw * tz + (qx * ty - qy * tx)
        # q = q * from_axis_angle(axis, angle)
        half = 0.5 * float(angles[i])
        s = math.sin(half)
        bw, bx, by, bz = math.cos(half), ax * s, ay * s, az * s
        qw, qx, qy, qz = (
            qw * bw - qx * bx - qy * by - qz * bz,
            qw * bx + qx * bw + qy * bz - qz * by,
            qw * by - qx * bz + qy * bw + qz * bx,
            qw * bz + qx * by - qy * bx + qz * bw,
        )
        # p += rotate(q, offset)
        if ox != 0.0 or oy != 0.0 or oz != 0.0:
            tx = 2.0 * (qy * oz - qz * oy)
            ty = 2.0 * (qz * ox - qx * oz)
            tz = 2.0 * (qx * oy - qy * ox)
            px += ox + qw * tx + (qy * tz - qz * ty)
            py += oy + qw * ty + (qz * tx - qx * tz)
            pz += oz + qw * tz + (qx * ty - qy * tx)
    norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    quat = np.array([qw / norm, qx / norm, qy / norm, qz / norm])
    return origins, axes, pose_unchecked(np.array([px, py, pz]), quat)


def chain_pose(model: ArmModel, angles) -> Pose:
    """End-effector pose only, skipping the per-joint origin/axis arrays the
    Jacobian needs. Same arithmetic as chain_frames."""
    px, py, pz, qw, qx, qy, qz = model._base_scalars
    for i, (ax, ay, az, ox, oy, oz) in enumerate(model._scalar_links):
        half = 0.5 * float(angles[i])
        s = math.sin(half)
        bw, bx, by, bz = math.cos(half), ax * s, ay * s, az * s
        qw, qx, qy, qz = (
            qw * bw - qx * bx - qy * by - qz * bz,
            qw * bx + qx * bw + qy * bz - qz * by,
            qw * by - qx * bz + qy * bw + qz * bx,
            qw * bz + qx * by - qy * bx + qz * bw,
        )
        if ox != 0.0 or oy != 0.0 or oz != 0.0:
            tx = 2.0 * (qy * oz - qz * oy)
            ty = 2.0 * (qz * ox - qx * oz)
            tz = 2.0 * (qx * oy - qy * ox)
            px += ox + qw * tx + (qy * tz - qz * ty)
            py += oy + qw * ty + (qz * tx - qx * tz)
            pz += oz + qw * tz + (qx * ty - qy * tx)
    norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    quat = np.array([qw / norm, qx / norm, qy / norm, qz / norm])
    return pose_unchecked(np.array([px, py, pz]), quat)


def forward_kinematics(model: ArmModel, joints: JointState) -> Pose:
    """End-effector pose for a joint state. Deterministic; rejects joint
    states outside the configured limits."""
    model.validate_joints(joints)
    return chain_pose(model, joints.angles)


# ---------------------------------------------------------------------------
# inverse kinematics

def _task_error(target: Pose, current: Pose) -> tuple[np.ndarray, np.ndarray]:
    pos_err = target.position - current.position
    q_err = quat_mul(target.orientation, quat_conjugate(current.orientation))
    return pos_err, quat_to_rotvec(q_err)


def _residual_norm(pos_err: np.ndarray, rot_err: np.ndarray) -> float:
    return math.sqrt(float(pos_err @ pos_err)
                     + ORIENTATION_WEIGHT ** 2 * float(rot_err @ rot_err))


# Restart seeds are drawn from this fixed stream when the caller's seed does
# not converge, keeping the solver deterministic call-to-call.
_RESTART_STREAM_SEED = 0x1C4D

# Task error is clipped to this magnitude per iteration (m / rad) so that far
# targets are approached through a sequence of well-conditioned steps.
_POS_ERR_CAP = 0.3
_ROT_ERR_CAP = 0.7

# The mid-range null-space pull fades out once the task residual drops below
# this value, so it cannot stall the final approach.
_NULL_FADE_RESIDUAL = 0.05


def _dls_attempt(model: ArmModel, target: Pose, q0: np.ndarray, *,
                 pos_tol, ori_tol, max_iterations, damping, null_gain,
                 residual_trace):
    """One damped least-squares descent from q0. Returns (q, residual,
    converged)."""
    mid = model.mid_angles()
    eye6 = np.eye(6)
    eye7 = np.eye(7)

    q = model.clamp_angles(q0)
    lam = damping
    pose = chain_pose(model, q)
    pos_err, rot_err = _task_error(target, pose)
    residual = _residual_norm(pos_err, rot_err)

    for _ in range(max_iterations):
        origins, axes, pose = chain_frames(model, q)
        pos_err, rot_err = _task_error(target, pose)
        if np.linalg.norm(pos_err) < pos_tol and np.linalg.norm(rot_err) < ori_tol:
            return q, residual, True

        jac = np.empty((6, 7))
        tip = pose.position
        tx, ty, tz = float(tip[0]), float(tip[1]), float(tip[2])
        for i in range(7):
            ax, ay, az = axes[i, 0], axes[i, 1], axes[i, 2]
            rx = tx - origins[i, 0]
            ry = ty - origins[i, 1]
            rz = tz - origins[i, 2]
            jac[0, i] = ay * rz - az * ry
            jac[1, i] = az * rx - ax * rz
            jac[2, i] = ax * ry - ay * rx
            jac[3, i] = ORIENTATION_WEIGHT * ax
            jac[4, i] = ORIENTATION_WEIGHT * ay
            jac[5, i] = ORIENTATION_WEIGHT * az

        pe = pos_err
        pn = float(np.linalg.norm(pe))
        if pn > _POS_ERR_CAP:
            pe = pe * (_POS_ERR_CAP / pn)
        re = rot_err
        rn = float(np.linalg.norm(re))
        if rn > _ROT_ERR_CAP:
            re = re * (_ROT_ERR_CAP / rn)
        err = np.concatenate([pe, ORIENTATION_WEIGHT * re])

        accepted = False
        first_try = True
        while not accepted and lam < 1e8:
            jjt = jac @ jac.T + (lam * lam) * eye6
            j_pinv = jac.T @ np.linalg.inv(jjt)
            dq = j_pinv @ err
            if first_try:
                # Null-space pull toward mid-range; only on the un-escalated
                # step so damping escalation can always shrink the candidate,
                # and faded near convergence so it cannot stall the descent.
                gain = null_gain * min(1.0, residual / _NULL_FADE_RESIDUAL)
                dq = dq + (eye7 - j_pinv @ jac) @ (gain * (mid - q))
                first_try = False
            q_new = model.clamp_angles(q + dq)
            pose_new = chain_pose(model, q_new)
            pe_new, re_new = _task_error(target, pose_new)
            res_new = _residual_norm(pe_new, re_new)
            if res_new < residual:
                q, residual = q_new, res_new
                lam = max(lam * 0.5, damping)
                accepted = True
                if residual_trace is not None:
                    residual_trace.append(residual)
            else:
                lam *= 2.0
        if not accepted:
            break

    pose = chain_pose(model, q)
    pos_err, rot_err = _task_error(target, pose)
    converged = (np.linalg.norm(pos_err) < pos_tol
                 and np.linalg.norm(rot_err) < ori_tol)
    return q, residual, converged


def solve_ik(model: ArmModel, target: Pose, seed: JointState, *,
             pos_tol: float = 1e-3, ori_tol: float = 1e-2,
             max_iterations: int = 100, damping: float = 0.05,
             null_gain: float = 0.05, max_restarts: int = 40,
             residual_trace: list | None = None) -> JointState:
    """Damped least-squares IK with adaptive damping and a null-space pull
    toward mid-range joint angles (keeps the redundant solution repeatable).

    Joint limits are enforced inside the iteration: every candidate step is
    clamped before its residual is evaluated, so the returned state both
    satisfies the limits and carries an honest residual. Accepted steps never
    increase the residual within one descent. If the descent from the caller's
    seed stalls, up to ``max_restarts`` further descents are run from the
    arm's mid-range posture and then from a fixed-seed random stream, so the
    solver stays deterministic call-to-call. ``residual_trace``, when given,
    collects one list of accepted-step residuals per descent attempt.

    Raises IKConvergenceError (with the best residual seen) for targets out
    of reach or when every attempt exhausts its iteration budget.
    """
    base = model.base_pose.position
    dist = float(np.linalg.norm(target.position - base))
    if dist > model.reach:
        raise IKConvergenceError(
            f"target {dist:.3f} m from base exceeds reach {model.reach:.3f} m",
            best_residual=dist - model.reach)

    q_seed = model.clamp_angles(np.asarray(seed.angles, dtype=float))
    pose = chain_pose(model, q_seed)
    pos_err, rot_err = _task_error(target, pose)
    if np.linalg.norm(pos_err) < pos_tol and np.linalg.norm(rot_err) < ori_tol:
        return replace(seed, angles=q_seed)

    lo, hi = model.lower_limits, model.upper_limits
    restart_rng = np.random.default_rng(_RESTART_STREAM_SEED)

    def starts():
        yield q_seed
        yield model.mid_angles()
        for _ in range(max(0, max_restarts - 1)):
            yield restart_rng.uniform(lo, hi)

    best_residual = math.inf
    attempts = 0
    for q0 in starts():
        attempts += 1
        attempt_trace = [] if residual_trace is not None else None
        q, residual, converged = _dls_attempt(
            model, target, q0, pos_tol=pos_tol, ori_tol=ori_tol,
            max_iterations=max_iterations, damping=damping,
            null_gain=null_gain, residual_trace=attempt_trace)
        if residual_trace is not None:
            residual_trace.append(attempt_trace)
        if converged:
            return replace(seed, angles=q)
        best_residual = min(best_residual, residual)

    raise IKConvergenceError(
        f"no convergence after {attempts} attempts x {max_iterations} "
        f"iterations (best residual {best_residual:.2e})",
        best_residual=best_residual)
