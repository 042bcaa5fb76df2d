"""Force rendering for the haptic channel.

Seven interaction modes are computed from the world snapshot and the end
effector's motion: weight, inertia, momentum, impact, texture, and balance as
forces, plus rotation as a z-torque. The vector sum is clamped to the
actuator's 5 N limit; the per-mode breakdown always sums to the pre-clamp
force so downstream analysis can attribute what the operator felt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .delays import ConditionKind, ConditionSpec
from .errors import MisconfigurationError
from .world import GRAVITY, WorldState

FORCE_LIMIT_N = 5.0

FORCE_MODES = ("weight", "inertia", "momentum", "impact", "texture", "balance")

_ZERO3 = (0.0, 0.0, 0.0)

# shared zero vector for inactive modes; treated as immutable
_ZERO_VEC = np.zeros(3)
_ZERO_VEC.setflags(write=False)


@dataclass(frozen=True)
class ForceSample:
    """One haptic output tick: clamped 3-axis force, z-torque, and the
    unclamped per-mode contributions."""

    force: np.ndarray
    torque_z: float
    mode_breakdown: dict[str, np.ndarray]
    clamped: bool
    timestamp: float

    def __post_init__(self):
        object.__setattr__(self, "force", np.asarray(self.force, dtype=float))

    @property
    def magnitude(self) -> float:
        f = self.force
        return math.sqrt(float(f[0]) ** 2 + float(f[1]) ** 2 + float(f[2]) ** 2)

    def mode_magnitude(self, mode: str) -> float:
        v = self.mode_breakdown.get(mode)
        if v is None:
            return 0.0
        return math.sqrt(float(v[0]) ** 2 + float(v[1]) ** 2 + float(v[2]) ** 2)

    @staticmethod
    def zero(timestamp: float = 0.0) -> "ForceSample":
        return ForceSample(np.zeros(3), 0.0,
                           {m: np.zeros(3) for m in FORCE_MODES},
                           clamped=False, timestamp=timestamp)


@dataclass
class _Pulse:
    start_s: float
    force: np.ndarray  # constant over the pulse window
    mode: str  # impact | momentum


class HapticRenderer:
    """Stateful 1 kHz force renderer.

    Collision pulses and texture phase need memory across ticks, so one
    renderer instance is owned by the tick loop; the samples it emits are
    immutable. Impulse pulses hold m*|dv|/tau for tau seconds, making the
    rendered impulse integrate back to the momentum change.
    """

    def __init__(self, *, pulse_tau_s: float = 0.020,
                 texture_amplitude_n: float = 1.0,
                 texture_frequency: float = 200.0,
                 floor_roughness: float = 0.4,
                 balance_reference_m: float = 0.1,
                 rotation_damping: float = 0.05):
        self.pulse_tau_s = pulse_tau_s
        self.texture_amplitude_n = texture_amplitude_n
        self.texture_frequency = texture_frequency
        self.floor_roughness = floor_roughness
        self.balance_reference_m = balance_reference_m
        self.rotation_damping = rotation_damping
        self._pulses: list[_Pulse] = []
        self._known_contacts: set[tuple[str, str]] = set()
        self._slide_distance: dict[tuple[str, str], float] = {}
        self._last_time: float | None = None

    def reset(self) -> None:
        self._pulses.clear()
        self._known_contacts.clear()
        self._slide_distance.clear()
        self._last_time = None

    def render_contact_forces(self, world: WorldState,
                              effector_velocity: np.ndarray,
                              effector_acceleration: np.ndarray,
                              angular_velocity: float) -> ForceSample:
        """Compute the force sample for one consistent world snapshot."""
        now = world.time_s
        dt = 0.0 if self._last_time is None else max(0.0, now - self._last_time)
        self._last_time = now
        ee_vel = np.asarray(effector_velocity, dtype=float)
        ee_acc = np.asarray(effector_acceleration, dtype=float)

        modes = {m: _ZERO_VEC for m in FORCE_MODES}
        torque_z = 0.0

        held = None
        if world.grasp_binding is not None:
            held = world.object_by_id(world.grasp_binding)

        if held is not None:
            m = held.mass
            # weight: the held mass pulls straight down
            modes["weight"] = np.array([0.0, 0.0, -m * GRAVITY])
            # inertia: reaction to accelerating the held mass
            modes["inertia"] = -m * ee_acc
            # balance: lateral pull proportional to how far the held mass
            # hangs off the grip point
            off = world.grasp_offset
            gain = -(m * GRAVITY / self.balance_reference_m)
            modes["balance"] = np.array([gain * off[0], gain * off[1], 0.0])
            # rotation: viscous twist resistance from the held mass
            torque_z = -self.rotation_damping * float(angular_velocity)

        # momentum: the jolt of binding a mass moving relative to the hand
        for ev in world.events:
            if ev.kind == "grasp":
                rel = np.asarray(ev.details.get("rel_velocity", _ZERO3), dtype=float)
                speed = float(np.linalg.norm(rel))
                mass = float(ev.details.get("mass", 0.0))
                if speed > 1e-9 and mass > 0.0:
                    force = (mass * speed / self.pulse_tau_s) * (rel / speed)
                    self._pulses.append(_Pulse(now, force, "momentum"))

        # impact: new contacts of the held cube spawn a constant pulse of
        # m*|dv|/tau along the contact normal for tau seconds
        contact_keys = set()
        for c in world.contacts:
            key = (c.a_id, c.b_id)
            contact_keys.add(key)
            is_new = key not in self._known_contacts
            if (held is not None and c.a_id == held.id and is_new
                    and c.rel_normal_speed > 1e-9):
                force = (held.mass * c.rel_normal_speed / self.pulse_tau_s) \
                    * np.asarray(c.normal, dtype=float)
                self._pulses.append(_Pulse(now, force, "impact"))
        self._known_contacts = contact_keys

        # texture: high-frequency grain while the held cube slides on a
        # surface; silent whenever the tangential speed is zero
        if held is not None:
            for c in world.contacts:
                if c.a_id != held.id:
                    continue
                key = (c.a_id, c.b_id)
                normal = np.asarray(c.normal, dtype=float)
                tangential = ee_vel - (ee_vel @ normal) * normal
                speed = float(np.linalg.norm(tangential))
                if speed <= 1e-9:
                    continue
                s = self._slide_distance.get(key, 0.0) + speed * dt
                self._slide_distance[key] = s
                roughness = max(held.surface_roughness, self._roughness_of(world, c.b_id))
                amp = self.texture_amplitude_n * roughness \
                    * math.sin(2.0 * math.pi * self.texture_frequency * s)
                modes["texture"] = modes["texture"] + amp * (tangential / speed)
        # drop sliding memory for contacts that ended
        for key in list(self._slide_distance):
            if key not in contact_keys:
                del self._slide_distance[key]

        # active impulse pulses (constant force over [start, start + tau))
        if self._pulses:
            self._pulses = [p for p in self._pulses
                            if now - p.start_s < self.pulse_tau_s - 1e-12]
            for p in self._pulses:
                modes[p.mode] = modes[p.mode] + p.force

        tx = ty = tz = 0.0
        for v in modes.values():
            if v is not _ZERO_VEC:
                tx += float(v[0])
                ty += float(v[1])
                tz += float(v[2])
        magnitude = math.sqrt(tx * tx + ty * ty + tz * tz)
        clamped = magnitude > FORCE_LIMIT_N
        if clamped:
            s = FORCE_LIMIT_N / magnitude
            force = np.array([tx * s, ty * s, tz * s])
        else:
            force = np.array([tx, ty, tz])
        return ForceSample(force=force, torque_z=torque_z, mode_breakdown=modes,
                           clamped=clamped, timestamp=now)

    def _roughness_of(self, world: WorldState, obj_id: str) -> float:
        if obj_id == "floor":
            return self.floor_roughness
        try:
            return world.object_by_id(obj_id).surface_roughness
        except KeyError:
            return 0.0


# ---------------------------------------------------------------------------
# onset cue (anchoring condition)

class OnsetCueStyle(str, Enum):
    VIBRATION = "vibration"
    SIMULATED_FORCE = "simulated_force"


DEFAULT_VIBRATION_AMPLITUDE_N = 0.5
DEFAULT_VIBRATION_FREQUENCY_HZ = 150.0


@dataclass(frozen=True)
class OnsetCue:
    """Descriptor of the immediate haptic stream emitted at action onset.

    ``vibration`` is a constant low-amplitude buzz starting at the command
    timestamp; ``simulated_force`` passes the operator-side renderer's
    samples straight through.
    """

    style: OnsetCueStyle
    start_ms: int
    amplitude_n: float = DEFAULT_VIBRATION_AMPLITUDE_N
    frequency_hz: float = DEFAULT_VIBRATION_FREQUENCY_HZ
    active: bool = True

    def sample(self, now_ms: int,
               local_sample: ForceSample | None = None) -> ForceSample:
        if not self.active or now_ms < self.start_ms:
            return ForceSample.zero(timestamp=now_ms / 1000.0)
        if self.style is OnsetCueStyle.SIMULATED_FORCE:
            if local_sample is None:
                return ForceSample.zero(timestamp=now_ms / 1000.0)
            return local_sample
        t = (now_ms - self.start_ms) / 1000.0
        value = self.amplitude_n * math.sin(2.0 * math.pi * self.frequency_hz * t)
        modes = {m: np.zeros(3) for m in FORCE_MODES}
        return ForceSample(np.array([value, 0.0, 0.0]), 0.0, modes,
                           clamped=False, timestamp=now_ms / 1000.0)


def haptic_onset_cue(condition: ConditionSpec, style: OnsetCueStyle | str,
                     command_time_ms: int, action_active: bool = True) -> OnsetCue:
    """Build the action-onset cue stream. Only meaningful when haptics lead
    the visual channel from the local simulation, i.e. under anchoring."""
    style = OnsetCueStyle(style)
    if condition.kind is not ConditionKind.ANCHORING:
        raise MisconfigurationError(
            f"onset cue requested under {condition.kind.value}; it is an "
            "anchoring-condition mechanism")
    return OnsetCue(style=style, start_ms=int(command_time_ms), active=action_active)
