"""Scripted operator policies that stand in for human subjects.

Three strategies close the loop at desk scale:

* ``continuous_pursuit`` servos toward the current waypoint using the
  delayed visual state.
* ``wait_for_confirmation`` navigates open-loop on its own command
  integrator (an operator watching their own hand) but pauses after every
  grasp/release command until the configured feedback channel reports the
  expected contact/weight signature.
* ``move_and_wait`` alternates fixed-length open-loop moves with waits of
  one visual-delay period, the classic manual strategy under delay.

Policies are explicitly synthetic: they reproduce the orderings the feedback
timing forces (e.g. anchoring finishing before synchronous at equal visual
delay), not human time or accuracy distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .delays import ConditionSpec
from .haptics import ForceSample
from .world import World, WorldState

OPEN_APERTURE = 0.078
GRASP_FORCE_N = 4.0

# weight-signature thresholds for haptic confirmation (N)
WEIGHT_PRESENT_N = 1.0
WEIGHT_ABSENT_N = 0.5


class PolicyKind(str, Enum):
    CONTINUOUS_PURSUIT = "continuous_pursuit"
    WAIT_FOR_CONFIRMATION = "wait_for_confirmation"
    MOVE_AND_WAIT = "move_and_wait"


class ConfirmationChannel(str, Enum):
    VISUAL = "visual"
    HAPTIC = "haptic"
    EITHER = "either"


@dataclass(frozen=True)
class OperatorPolicy:
    """Static policy configuration. ``seed`` drives small waypoint and
    reaction-time jitters so seeded trials differ while staying
    reproducible."""

    variant: PolicyKind = PolicyKind.WAIT_FOR_CONFIRMATION
    reaction_time_ms: int = 200
    speed_limit: float = 0.5  # m/s
    confirmation_channel: ConfirmationChannel = ConfirmationChannel.HAPTIC
    seed: int = 0
    segment_length_m: float = 0.10  # move-and-wait stride

    def __post_init__(self):
        object.__setattr__(self, "variant", PolicyKind(self.variant))
        object.__setattr__(self, "confirmation_channel",
                           ConfirmationChannel(self.confirmation_channel))
        if self.reaction_time_ms < 0:
            raise ValueError("reaction_time_ms must be >= 0")
        if self.speed_limit <= 0:
            raise ValueError("speed_limit must be > 0")


@dataclass(frozen=True)
class OperatorInput:
    """One operator tick: commanded end-effector position delta, grip force,
    and gripper aperture."""

    pose_delta: np.ndarray
    grip_force: float
    gripper_aperture: float
    timestamp_ms: int

    def __post_init__(self):
        object.__setattr__(self, "pose_delta",
                           np.asarray(self.pose_delta, dtype=float))


@dataclass
class _Step:
    kind: str  # move | set_grip | confirm | pause
    waypoint: np.ndarray | None = None
    grip: float = 0.0
    aperture: float = OPEN_APERTURE
    confirm: str | None = None  # grasp | release
    cube_id: str | None = None
    pause_ms: int = 0


def _plan_trial(world: World, rng: np.random.Generator,
                jitter: bool = True) -> list[_Step]:
    """Waypoint/action plan for the whole scripted task. The carry height
    clears every obstacle; grasp and drop points get small seeded jitters."""
    statics = [o for o in world.objects if not o.is_cube]
    top = max((float(o.pose.position[2] + o.half_extents[2]) for o in statics),
              default=0.0)
    cube_h = 2 * 0.02
    carry_z = top + cube_h + 0.05

    plan: list[_Step] = []
    for cube_id in world.script.cube_order:
        cube = next(o for o in world.objects if o.id == cube_id)
        target = next(o for o in world.objects
                      if o.id == world.script.target_of(cube_id))
        he = float(cube.half_extents[2])
        cx, cy = float(cube.pose.position[0]), float(cube.pose.position[1])
        cube_top = float(cube.pose.position[2] + he)
        if jitter:
            jx, jy = rng.uniform(-0.003, 0.003, 2)
            jz = rng.uniform(0.0, 0.005)
        else:
            jx = jy = jz = 0.0
        grasp_clearance = 0.01 + jz
        tx, ty = float(target.pose.position[0]), float(target.pose.position[1])
        plate_top = float(target.pose.position[2] + target.half_extents[2])
        drop_ee_z = plate_top + 0.002 + 2 * he + grasp_clearance

        plan.extend([
            _Step("move", waypoint=np.array([cx, cy, carry_z])),
            _Step("move", waypoint=np.array([cx + jx, cy + jy,
                                             cube_top + grasp_clearance])),
            _Step("set_grip", grip=GRASP_FORCE_N, aperture=2 * he - 0.004,
                  cube_id=cube_id),
            _Step("confirm", confirm="grasp", cube_id=cube_id),
            _Step("move", waypoint=np.array([cx + jx, cy + jy, carry_z])),
            _Step("move", waypoint=np.array([tx + jx, ty + jy, carry_z])),
            _Step("move", waypoint=np.array([tx + jx, ty + jy, drop_ee_z])),
            _Step("set_grip", grip=0.0, aperture=OPEN_APERTURE, cube_id=cube_id),
            _Step("confirm", confirm="release", cube_id=cube_id),
        ])
    # the next cube's hover move performs the climb; no explicit retreat
    return plan


class ScriptedOperator:
    """Runs one policy over the scripted task, one call per operator tick.

    The operator's own commanded position is tracked internally (operators
    always know where they moved their hand); the delayed channels gate only
    what the policy is allowed to infer about the remote world.
    """

    def __init__(self, policy: OperatorPolicy, world: World,
                 condition: ConditionSpec, period_ms: float):
        self.policy = policy
        self.world = world
        self.condition = condition
        self.period_ms = float(period_ms)
        self._rng = np.random.default_rng(policy.seed)
        self.plan = _plan_trial(world, self._rng)
        self._reaction_jitter_ms = int(self._rng.integers(-20, 21))
        self._index = 0
        self._cmd_pos = world.initial_state().end_effector.position.copy()
        self._grip = 0.0
        self._aperture = OPEN_APERTURE
        self._confirm_seen_ms: int | None = None
        self._pause_until_ms: int | None = None
        self._segment_travel = 0.0
        self.done = False
        self.commanded_positions: list[np.ndarray] = []

    # -- feedback predicates ------------------------------------------------

    def _haptic_confirms(self, sample: ForceSample | None, what: str) -> bool:
        if sample is None:
            return False
        weight = sample.mode_magnitude("weight")
        return weight >= WEIGHT_PRESENT_N if what == "grasp" \
            else weight <= WEIGHT_ABSENT_N

    def _visual_confirms(self, snap: WorldState | None, what: str,
                         cube_id: str) -> bool:
        if snap is None:
            return False
        if what == "grasp":
            return snap.grasp_binding == cube_id
        return snap.grasp_binding is None and snap.pending_release is None

    def _confirmed(self, visual, haptic, what: str, cube_id: str) -> bool:
        ch = self.policy.confirmation_channel
        v = self._visual_confirms(visual, what, cube_id)
        h = self._haptic_confirms(haptic, what)
        if ch is ConfirmationChannel.VISUAL:
            return v
        if ch is ConfirmationChannel.HAPTIC:
            return h
        return v or h

    # -- stepping -------------------------------------------------------------

    def step(self, delayed_visual: WorldState | None,
             delayed_haptic: ForceSample | None, now_ms: int) -> OperatorInput:
        dt_s = self.period_ms / 1000.0
        max_step = self.policy.speed_limit * dt_s
        delta = np.zeros(3)

        while True:
            if self._index >= len(self.plan):
                self.done = True
                break
            step = self.plan[self._index]

            if self._pause_until_ms is not None:
                if now_ms < self._pause_until_ms:
                    break
                self._pause_until_ms = None

            if step.kind == "move":
                delta = self._move_delta(step, delayed_visual, max_step, now_ms)
                break
            if step.kind == "set_grip":
                self._grip = step.grip
                self._aperture = step.aperture
                self._index += 1
                continue
            if step.kind == "confirm":
                if self.policy.variant is PolicyKind.MOVE_AND_WAIT:
                    # no feedback inspection: wait one visual period out
                    self._pause_until_ms = (now_ms + self.condition.visual_delay_ms
                                            + self._reaction_ms())
                    self._index += 1
                    continue
                if self._confirm_seen_ms is None:
                    if self._confirmed(delayed_visual, delayed_haptic,
                                       step.confirm, step.cube_id):
                        self._confirm_seen_ms = now_ms
                    else:
                        break
                if now_ms - self._confirm_seen_ms >= self._reaction_ms():
                    self._confirm_seen_ms = None
                    self._index += 1
                    continue
                break
            raise AssertionError(f"unknown plan step {step.kind}")

        self._cmd_pos = self._cmd_pos + delta
        self.commanded_positions.append(self._cmd_pos.copy())
        return OperatorInput(pose_delta=delta, grip_force=self._grip,
                             gripper_aperture=self._aperture,
                             timestamp_ms=int(now_ms))

    def _reaction_ms(self) -> int:
        # jitter models human variability around the configured reaction;
        # an explicit zero reaction time stays exactly zero
        if self.policy.reaction_time_ms == 0:
            return 0
        return max(0, self.policy.reaction_time_ms + self._reaction_jitter_ms)

    def _move_delta(self, step: _Step, delayed_visual, max_step: float,
                    now_ms: int) -> np.ndarray:
        if self.policy.variant is PolicyKind.CONTINUOUS_PURSUIT:
            return self._pursuit_delta(step, delayed_visual, max_step)

        to_go = step.waypoint - self._cmd_pos
        dist = float(np.linalg.norm(to_go))
        if dist <= 1e-9:
            self._index += 1
            self._segment_travel = 0.0
            return np.zeros(3)
        stride = min(max_step, dist)
        if self.policy.variant is PolicyKind.MOVE_AND_WAIT:
            if self._segment_travel + stride >= self.policy.segment_length_m:
                stride = self.policy.segment_length_m - self._segment_travel
                self._segment_travel = 0.0
                self._pause_until_ms = now_ms + self.condition.visual_delay_ms
            else:
                self._segment_travel += stride
        return to_go * (stride / dist)

    def _pursuit_delta(self, step: _Step, delayed_visual, max_step: float):
        if delayed_visual is None:
            return np.zeros(3)
        seen = delayed_visual.end_effector.position
        to_go = step.waypoint - seen
        dist = float(np.linalg.norm(to_go))
        if dist <= 0.002:
            self._index += 1
            return np.zeros(3)
        stride = min(max_step, 0.5 * dist)
        return to_go * (stride / dist)
