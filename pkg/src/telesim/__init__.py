"""telesim: deterministic teleoperation-delay simulation and analysis.

A digital-twin 7-DOF arm runs a scripted pick-and-place task while the
command, visual, and haptic channels pass through exact integer-millisecond
delay buffers. Four feedback-timing conditions (control, anchoring,
synchronous, asynchronous), physics-based force rendering with a 5 N clamp,
scripted or live operators, and a full performance/perception/pupillometry
metrics chain.
"""

from .delays import (
    Channel,
    ConditionKind,
    ConditionSpec,
    DelayPipeline,
    SynchronizedBuffer,
    make_condition,
)
from .haptics import FORCE_LIMIT_N, ForceSample, HapticRenderer, haptic_onset_cue
from .kinematics import (
    ArmModel,
    JointState,
    Pose,
    default_arm_model,
    forward_kinematics,
    solve_ik,
)
from .operators import OperatorInput, OperatorPolicy, PolicyKind, ScriptedOperator
from .session import TrialConfig, TrialLog, read_log, replay, write_log
from .world import (
    World,
    WorldState,
    default_world,
    load_scene,
    placement_accuracy,
    placement_gate,
    step_world,
    time_on_task,
)

__version__ = "0.1.0"

__all__ = [
    "ArmModel", "Channel", "ConditionKind", "ConditionSpec", "DelayPipeline",
    "FORCE_LIMIT_N", "ForceSample", "HapticRenderer", "JointState",
    "OperatorInput", "OperatorPolicy", "PolicyKind", "Pose", "ScriptedOperator",
    "SynchronizedBuffer", "TrialConfig", "TrialLog", "World", "WorldState",
    "default_arm_model", "default_world", "forward_kinematics",
    "haptic_onset_cue", "load_scene", "make_condition", "placement_accuracy",
    "placement_gate", "read_log", "replay", "solve_ik", "step_world",
    "time_on_task", "write_log",
]
