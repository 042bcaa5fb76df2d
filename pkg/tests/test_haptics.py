"""Haptics tests: mode formulas, the 5 N actuator clamp, impulse integration,
and the onset cue."""

import math

import numpy as np
import pytest

from telesim.delays import ConditionKind, make_condition
from telesim.errors import MisconfigurationError
from telesim.haptics import (
    FORCE_LIMIT_N,
    ForceSample,
    HapticRenderer,
    OnsetCueStyle,
    haptic_onset_cue,
)
from telesim.kinematics import JointState, Pose
from telesim.world import Contact, SceneObject, WorldEvent, WorldState

GRAVITY = 9.81


def make_state(time_s=0.0, grasped_mass=None, contacts=(), events=(),
               grasp_offset=(0.0, 0.0, 0.0), roughness=0.5):
    objs = [SceneObject("cube_x", "grey", Pose(np.array([0.4, 0.0, 0.1])),
                        (0.02, 0.02, 0.02), mass=grasped_mass or 0.3,
                        surface_roughness=roughness,
                        grasped=grasped_mass is not None),
            SceneObject("wall", "obstacle", Pose(np.array([0.5, 0.0, 0.1])),
                        (0.02, 0.1, 0.1), surface_roughness=roughness)]
    return WorldState(
        time_s=time_s, objects=tuple(objs),
        robot_joints=JointState(np.zeros(7)),
        end_effector=Pose(np.array([0.4, 0.0, 0.12])),
        grasp_binding="cube_x" if grasped_mass is not None else None,
        grasp_offset=grasp_offset, contacts=tuple(contacts),
        events=tuple(events))


class TestForceModes:
    def test_half_kilo_weight(self):
        r = HapticRenderer()
        s = r.render_contact_forces(make_state(grasped_mass=0.5),
                                    np.zeros(3), np.zeros(3), 0.0)
        assert s.magnitude == pytest.approx(0.5 * GRAVITY, abs=1e-12)
        assert s.mode_magnitude("weight") == pytest.approx(4.905, abs=1e-12)
        for mode in ("inertia", "momentum", "impact", "texture", "balance"):
            assert s.mode_magnitude(mode) == 0.0
        assert not s.clamped and s.torque_z == 0.0

    def test_null_case_exact_zero(self):
        r = HapticRenderer()
        s = r.render_contact_forces(make_state(), np.zeros(3), np.zeros(3), 0.0)
        assert np.array_equal(s.force, np.zeros(3))
        assert s.torque_z == 0.0
        assert not s.clamped

    def test_one_kilo_clamps_to_five_newtons(self):
        r = HapticRenderer()
        s = r.render_contact_forces(make_state(grasped_mass=1.0),
                                    np.zeros(3), np.zeros(3), 0.0)
        assert s.clamped
        assert s.magnitude == pytest.approx(5.0, abs=1e-12)
        pre = sum(s.mode_breakdown.values())
        assert np.linalg.norm(pre) == pytest.approx(9.81, abs=1e-12)

    def test_breakdown_sums_to_preclamp_force(self):
        r = HapticRenderer()
        state = make_state(grasped_mass=0.8, grasp_offset=(0.03, -0.01, 0.0))
        s = r.render_contact_forces(state, np.array([0.1, 0, 0]),
                                    np.array([0.0, 2.0, 0.0]), 0.3)
        pre = sum(s.mode_breakdown.values())
        mag = np.linalg.norm(pre)
        expected = s.force if not s.clamped else pre * (FORCE_LIMIT_N / mag)
        np.testing.assert_allclose(s.force, expected, atol=1e-12)

    def test_inertia_reaction(self):
        r = HapticRenderer()
        s = r.render_contact_forces(make_state(grasped_mass=0.4),
                                    np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.0)
        np.testing.assert_allclose(s.mode_breakdown["inertia"],
                                   [-0.4, 0.0, 0.0], atol=1e-12)

    def test_rotation_torque(self):
        r = HapticRenderer(rotation_damping=0.05)
        s = r.render_contact_forces(make_state(grasped_mass=0.4),
                                    np.zeros(3), np.zeros(3), 2.0)
        assert s.torque_z == pytest.approx(-0.1, abs=1e-12)

    def test_balance_lateral_pull(self):
        r = HapticRenderer(balance_reference_m=0.1)
        s = r.render_contact_forces(
            make_state(grasped_mass=0.5, grasp_offset=(0.02, 0.0, -0.03)),
            np.zeros(3), np.zeros(3), 0.0)
        expected = -(0.5 * GRAVITY / 0.1) * np.array([0.02, 0.0, 0.0])
        np.testing.assert_allclose(s.mode_breakdown["balance"], expected, atol=1e-12)


class TestTexture:
    def slide_state(self, t, roughness=0.5):
        contact = Contact("cube_x", "wall", (-1.0, 0.0, 0.0), 0.0, 0.0)
        return make_state(time_s=t, grasped_mass=0.3, contacts=(contact,),
                          roughness=roughness)

    def test_zero_when_not_sliding(self):
        r = HapticRenderer()
        s = r.render_contact_forces(self.slide_state(0.0), np.zeros(3),
                                    np.zeros(3), 0.0)
        assert s.mode_magnitude("texture") == 0.0

    def test_grain_follows_sliding_distance(self):
        r = HapticRenderer(texture_amplitude_n=1.0, texture_frequency=200.0)
        vel = np.array([0.0, 0.2, 0.0])  # tangential to the x-normal contact
        r.render_contact_forces(self.slide_state(0.0), vel, np.zeros(3), 0.0)
        s = r.render_contact_forces(self.slide_state(0.001), vel, np.zeros(3), 0.0)
        # slid 0.2 mm: amplitude = roughness * sin(2*pi*200*s)
        expected = 0.5 * math.sin(2 * math.pi * 200.0 * 0.2 * 0.001)
        assert s.mode_breakdown["texture"][1] == pytest.approx(expected, abs=1e-12)

    def test_silent_after_stop(self):
        r = HapticRenderer()
        vel = np.array([0.0, 0.2, 0.0])
        r.render_contact_forces(self.slide_state(0.0), vel, np.zeros(3), 0.0)
        r.render_contact_forces(self.slide_state(0.001), vel, np.zeros(3), 0.0)
        s = r.render_contact_forces(self.slide_state(0.002), np.zeros(3),
                                    np.zeros(3), 0.0)
        assert s.mode_magnitude("texture") == 0.0


class TestImpulse:
    def test_impact_integrates_to_momentum_change(self):
        r = HapticRenderer(pulse_tau_s=0.020)
        mass, dv = 0.5, 0.8
        impulse = 0.0
        dt = 0.001
        for k in range(40):
            t = k * dt
            if k == 0:
                contacts = (Contact("cube_x", "wall", (-1.0, 0.0, 0.0), 0.0005, dv),)
            else:
                contacts = (Contact("cube_x", "wall", (-1.0, 0.0, 0.0), 0.0, 0.0),)
            s = r.render_contact_forces(
                make_state(time_s=t, grasped_mass=mass, contacts=contacts),
                np.zeros(3), np.zeros(3), 0.0)
            impulse += s.mode_magnitude("impact") * dt
        assert impulse == pytest.approx(mass * dv, rel=0.01)

    def test_momentum_pulse_on_grasp(self):
        r = HapticRenderer(pulse_tau_s=0.020)
        ev = WorldEvent("grasp", 0.0, subject="cube_x",
                        details={"rel_velocity": (0.0, 0.3, 0.0),
                                 "rel_speed": 0.3, "mass": 0.5})
        impulse = 0.0
        for k in range(40):
            events = (ev,) if k == 0 else ()
            s = r.render_contact_forces(
                make_state(time_s=k * 0.001, grasped_mass=0.5, events=events),
                np.zeros(3), np.zeros(3), 0.0)
            impulse += s.mode_magnitude("momentum") * 0.001
        assert impulse == pytest.approx(0.5 * 0.3, rel=0.01)

    def test_persisting_contact_fires_once(self):
        r = HapticRenderer()
        c = Contact("cube_x", "wall", (-1.0, 0.0, 0.0), 0.0005, 0.5)
        r.render_contact_forces(make_state(0.0, grasped_mass=0.5, contacts=(c,)),
                                np.zeros(3), np.zeros(3), 0.0)
        # same pair still reporting approach speed is not a new impact
        s = r.render_contact_forces(
            make_state(0.050, grasped_mass=0.5,
                       contacts=(Contact("cube_x", "wall", (-1.0, 0.0, 0.0), 0.0005, 0.5),)),
            np.zeros(3), np.zeros(3), 0.0)
        assert s.mode_magnitude("impact") == 0.0


class TestClampFuzz:
    def test_post_clamp_never_exceeds_limit(self):
        rng = np.random.default_rng(99)
        r = HapticRenderer()
        t = 0.0
        for _ in range(500):
            t += 0.001
            mass = float(rng.uniform(0.05, 5.0))
            state = make_state(time_s=t, grasped_mass=mass,
                               grasp_offset=tuple(rng.uniform(-0.1, 0.1, 3)),
                               contacts=(Contact("cube_x", "wall",
                                                 (-1.0, 0.0, 0.0),
                                                 float(rng.uniform(0, 1e-3)),
                                                 float(rng.uniform(0, 3))),),
                               roughness=float(rng.uniform(0, 2)))
            s = r.render_contact_forces(state, rng.uniform(-2, 2, 3),
                                        rng.uniform(-30, 30, 3),
                                        float(rng.uniform(-5, 5)))
            assert s.magnitude <= FORCE_LIMIT_N + 1e-9


class TestOnsetCue:
    def test_vibration_defaults(self):
        cue = haptic_onset_cue(make_condition(ConditionKind.ANCHORING, 750),
                               OnsetCueStyle.VIBRATION, command_time_ms=120)
        assert cue.amplitude_n == 0.5
        assert cue.frequency_hz == 150.0
        assert cue.start_ms == 120
        for now in range(120, 160):
            s = cue.sample(now)
            expected = 0.5 * math.sin(2 * math.pi * 150.0 * (now - 120) / 1000.0)
            assert s.force[0] == pytest.approx(expected, abs=1e-12)
            assert abs(s.force[0]) <= 0.5
        assert cue.sample(119).magnitude == 0.0  # nothing before the command

    def test_simulated_force_passthrough(self):
        cue = haptic_onset_cue(make_condition(ConditionKind.ANCHORING, 500),
                               "simulated_force", command_time_ms=0)
        r = HapticRenderer()
        local = r.render_contact_forces(make_state(grasped_mass=0.3),
                                        np.zeros(3), np.zeros(3), 0.0)
        assert cue.sample(0, local) is local

    def test_rejected_outside_anchoring(self):
        for kind, v in ((ConditionKind.SYNCHRONOUS, 500),
                        (ConditionKind.ASYNCHRONOUS, 750),
                        (ConditionKind.CONTROL, 0)):
            with pytest.raises(MisconfigurationError):
                haptic_onset_cue(make_condition(kind, v),
                                 OnsetCueStyle.VIBRATION, 0)

    def test_inactive_cue_is_zero(self):
        cue = haptic_onset_cue(make_condition(ConditionKind.ANCHORING, 250),
                               OnsetCueStyle.VIBRATION, 0, action_active=False)
        s = cue.sample(10)
        assert np.array_equal(s.force, np.zeros(3))


class TestForceSample:
    def test_zero_factory(self):
        s = ForceSample.zero(1.25)
        assert s.magnitude == 0.0 and s.timestamp == 1.25 and not s.clamped
