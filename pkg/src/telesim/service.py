"""Session host: the authoritative tick loop and the wire protocol.

One loop drives every mode. Operator input (scripted policy, recorded
playback, or a live client) enters the command channel, IK turns the
integrated command pose into joint targets, the world steps, forces are
rendered, and the visual/haptic channels release their payloads after the
condition's delays. Headless runs free-run faster than real time; live runs
pace the simulated clock against the wall clock. Identical configs and seeds
produce identical logs either way.

The wire protocol is length-prefixed JSON frames: 4-byte big-endian length,
then a UTF-8 body ``{"kind": ..., "seq": ..., "t_ms": ..., "payload": ...}``
with sorted keys. The same payloads travel over raw TCP and (for browsers)
WebSocket.
"""

from __future__ import annotations

import json
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .delays import Channel, DelayPipeline
from .errors import ConditionConfigError, IKConvergenceError, ProtocolError
from .haptics import HapticRenderer
from .kinematics import Pose, default_arm_model, solve_ik
from .operators import ScriptedOperator
from .session import EventRow, PupilRow, TickRow, TrialConfig, TrialLog
from .world import step_world, world_from_dict

log = logging.getLogger(__name__)

# Commanded tool orientation: gripper pointing straight down (a half-turn
# pitch from the zero configuration, matching the arm's natural elbow pose).
TOOL_DOWN = np.array([0.0, 0.0, 1.0, 0.0])

MAX_FRAME_BYTES = 16 * 1024 * 1024

WIRE_KINDS = ("hello", "config", "input", "visual_frame", "haptic_frame",
              "event", "trial_control", "questionnaire")


# ---------------------------------------------------------------------------
# wire protocol

@dataclass(frozen=True)
class WireMessage:
    kind: str
    sequence: int
    sim_timestamp_ms: int
    payload: dict

    def __post_init__(self):
        if self.kind not in WIRE_KINDS:
            raise ValueError(f"unknown wire kind {self.kind!r}")


def encode_message(message: WireMessage) -> bytes:
    body = json.dumps(
        {"kind": message.kind, "payload": message.payload,
         "seq": message.sequence, "t_ms": message.sim_timestamp_ms},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return len(body).to_bytes(4, "big") + body


def decode_message(frame: bytes) -> WireMessage:
    decoder = FrameDecoder()
    messages = decoder.feed(frame)
    if len(messages) != 1 or decoder.buffered():
        raise ProtocolError("expected exactly one complete frame", offset=0)
    return messages[0]


class FrameDecoder:
    """Incremental frame decoder. Truncated input waits for more bytes;
    malformed input raises ProtocolError with the stream offset."""

    def __init__(self):
        self._buf = bytearray()
        self._offset = 0  # absolute offset of buffer start in the stream

    def buffered(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[WireMessage]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            length = int.from_bytes(self._buf[:4], "big")
            if length > MAX_FRAME_BYTES:
                raise ProtocolError(f"frame length {length} exceeds limit",
                                    offset=self._offset)
            if len(self._buf) < 4 + length:
                return out
            body = bytes(self._buf[4:4 + length])
            start = self._offset
            del self._buf[:4 + length]
            self._offset += 4 + length
            try:
                data_dict = json.loads(body.decode("utf-8"))
                msg = WireMessage(kind=data_dict["kind"],
                                  sequence=int(data_dict["seq"]),
                                  sim_timestamp_ms=int(data_dict["t_ms"]),
                                  payload=data_dict["payload"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"malformed frame: {exc}", offset=start) from exc
            out.append(msg)


# ---------------------------------------------------------------------------
# frame scheduling on the integer-ms clock

def frame_due(t_ms: int, dt_ms: int, rate_hz: int) -> bool:
    """True when a rate_hz frame boundary lies in (t-dt, t]. Exactly
    rate_hz frames fire per 1000 ms."""
    return (t_ms * rate_hz) // 1000 > ((t_ms - dt_ms) * rate_hz) // 1000


# ---------------------------------------------------------------------------
# synthetic human-assessment data for scripted trials

def synthesize_pupil_rows(config: TrialConfig, event_times_ms: list[int],
                          frame_times_ms: list[int]) -> list[PupilRow]:
    """Deterministic synthetic pupil trace at the visual frame rate.

    Display luminance flashes around task events; the pupil follows an
    exponential light response with a seeded subject latency, plus seeded
    load bumps after events, noise, and blink dropouts.
    """
    rng = np.random.default_rng(config.seed * 7919 + 101)
    t = np.asarray(frame_times_ms, dtype=float)
    n = t.size
    if n == 0:
        return []

    base_rgb = 102.0
    flash_rgb = 165.0
    rgb = np.full((n, 3), base_rgb)
    for te in event_times_ms:
        mask = (t >= te) & (t < te + 300.0)
        rgb[mask] = flash_rgb

    lum = np.sqrt(0.299 * rgb[:, 0] ** 2 + 0.587 * rgb[:, 1] ** 2
                  + 0.114 * rgb[:, 2] ** 2)
    latency_ms = float(rng.uniform(0.0, 150.0))
    lum_delayed = np.interp(t - latency_ms, t, lum, left=lum[0], right=lum[-1])

    diameter = 2.6 + 1.1 * np.exp(-0.012 * lum_delayed)
    for te in event_times_ms:
        dt = (t - te - 800.0) / 600.0
        diameter += 0.35 * np.exp(-0.5 * dt * dt) * (t > te)
    diameter += rng.normal(0.0, 0.01, n)

    # blink dropouts: none in the first 2 s so the baseline window stays valid
    blink_at = 2500.0 + rng.uniform(0.0, 1500.0)
    while blink_at < t[-1] - 700.0:
        width = float(rng.uniform(380.0, 640.0))
        mask = (t > blink_at) & (t < blink_at + width)
        diameter[mask] = np.nan
        blink_at += float(rng.uniform(5000.0, 9000.0))

    return [PupilRow(int(t[i]),
                     None if math.isnan(diameter[i]) else float(diameter[i]),
                     (float(rgb[i, 0]), float(rgb[i, 1]), float(rgb[i, 2])))
            for i in range(n)]


def synthesize_posttrial(config: TrialConfig) -> dict[str, float]:
    """Seeded stand-ins for the reported perceived delays and questionnaire
    scores. These model only coarse directional tendencies; they are not
    human data."""
    rng = np.random.default_rng(config.seed * 6007 + 13)
    cond = config.condition
    v, h = float(cond.visual_delay_ms), float(cond.haptic_delay_ms)
    gap = abs(v - h)
    kind = cond.kind
    visual_factor = {"control": 1.0, "anchoring": 0.65,
                     "synchronous": 1.0, "asynchronous": 0.9}[kind.value]
    perceived_v = max(0.0, visual_factor * v + float(rng.normal(30.0, 25.0)))
    perceived_h = max(0.0, 0.9 * h + float(rng.normal(25.0, 20.0)))
    perceived_gap = max(0.0, 0.7 * gap + float(rng.normal(20.0, 20.0)))
    load = {"control": 30.0, "anchoring": 38.0,
            "synchronous": 52.0, "asynchronous": 55.0}[kind.value]
    tlx_total = float(np.clip(load + v / 100.0 + rng.normal(0.0, 4.0), 0, 100))
    tlx_confidence = float(np.clip(9.0 - tlx_total / 15.0 + rng.normal(0, 0.5), 1, 10))
    tlx_frustration = float(np.clip(tlx_total / 12.0 + rng.normal(0, 0.6), 1, 10))
    return {
        "perceived_visual_ms": round(perceived_v, 1),
        "perceived_haptic_ms": round(perceived_h, 1),
        "perceived_gap_ms": round(perceived_gap, 1),
        "tlx_total": round(tlx_total, 1),
        "tlx_confidence": round(tlx_confidence, 1),
        "tlx_frustration": round(tlx_frustration, 1),
    }


# ---------------------------------------------------------------------------
# the tick loop

class LiveBridge:
    """Hooks a live transport into the tick loop. The headless default does
    nothing; the TCP server overrides these."""

    def poll_inputs(self) -> list[tuple]:
        """Pending (delta_xyz, grip, aperture) operator inputs."""
        return []

    def deliver_visual(self, snapshot, emit_ms: int, now_ms: int) -> None:
        pass

    def deliver_haptic(self, sample, emit_ms: int, now_ms: int) -> None:
        pass

    def emit_event(self, event: EventRow) -> None:
        pass

    def should_abort(self) -> bool:
        return False

    def abort_status(self) -> str:
        return "aborted"

    def pace(self, now_ms: int) -> None:
        pass

    def questionnaire(self) -> dict | None:
        return None


def run_session(config: TrialConfig, input_feed: list | None = None,
                bridge: LiveBridge | None = None,
                end_at_ms: int | None = None) -> TrialLog:
    """Execute one trial and return its complete log.

    ``input_feed`` replays recorded (time_ms, delta, grip, aperture) inputs;
    otherwise ``config.policy`` drives a scripted operator; a ``bridge``
    supplies live inputs and receives the delayed output streams.
    ``end_at_ms`` stops the loop after that exact tick (used by replay to
    reproduce a recorded trial's length).
    """
    if 1000 % config.sim_rate_hz != 0:
        raise ConditionConfigError(
            f"sim rate {config.sim_rate_hz} Hz must divide 1000 evenly")
    dt_ms = 1000 // config.sim_rate_hz
    dt_s = dt_ms / 1000.0
    cap_ticks = int(round(config.duration_cap_s * config.sim_rate_hz))

    arm = default_arm_model()
    world = world_from_dict(config.scene, arm=arm)
    pipeline = DelayPipeline(config.condition)
    renderer = HapticRenderer()
    bridge = bridge or LiveBridge()

    operator = None
    playback: dict[int, tuple] = {}
    if input_feed is not None:
        playback = {int(t): (delta, grip, aperture)
                    for t, delta, grip, aperture in input_feed}
    elif config.policy is not None:
        operator = ScriptedOperator(config.policy, world, config.condition,
                                    period_ms=1000.0 / config.frame_rate_hz)

    state = world.initial_state()
    joints = state.robot_joints
    cmd_pos = state.end_effector.position.copy()
    cmd_grip = 0.0
    cmd_aperture = joints.gripper_aperture
    prev_ee_pos = tuple(float(v) for v in state.end_effector.position)
    prev_ee_quat = tuple(float(v) for v in state.end_effector.orientation)
    prev_vel = (0.0, 0.0, 0.0)

    latest_visual = None
    latest_haptic = None

    log_obj = TrialLog(config=config)
    event_times: list[int] = []
    end_status = "duration_cap"
    idle_ticks_after_done = 0

    for tick in range(cap_ticks):
        now_ms = tick * dt_ms
        emitted: list[str] = []
        delivered: list[str] = []
        tick_input = None
        on_frame = frame_due(now_ms, dt_ms, config.frame_rate_hz)

        # 1. operator cadence
        if on_frame:
            if operator is not None:
                inp = operator.step(latest_visual, latest_haptic, now_ms)
                tick_input = (tuple(float(v) for v in inp.pose_delta),
                              inp.grip_force, inp.gripper_aperture)
            elif playback:
                rec = playback.get(now_ms)
                tick_input = rec if rec is not None else None
            for delta, grip, aperture in bridge.poll_inputs():
                tick_input = (tuple(delta), float(grip), float(aperture))
            if tick_input is not None:
                seq = pipeline.enqueue(tick_input, Channel.COMMAND, now_ms)
                emitted.append(f"{seq}:c")

        # 2. release due events (commands apply this tick when onset is 0)
        command_arrived = False
        for ev in pipeline.drain_due(now_ms):
            delivered.append(str(ev.sequence))
            if ev.channel is Channel.COMMAND:
                delta, grip, aperture = ev.payload
                if delta[0] != 0.0 or delta[1] != 0.0 or delta[2] != 0.0:
                    cmd_pos = cmd_pos + np.asarray(delta)
                    command_arrived = True
                cmd_grip = float(grip)
                cmd_aperture = float(aperture)
            elif ev.channel is Channel.VISUAL:
                latest_visual = ev.payload
                bridge.deliver_visual(ev.payload, ev.emit_time_ms, now_ms)
            else:
                latest_haptic = ev.payload
                bridge.deliver_haptic(ev.payload, ev.emit_time_ms, now_ms)

        # 3. command -> joints via IK (warm-started from the current joints)
        if command_arrived:
            target = Pose(cmd_pos, TOOL_DOWN)
            try:
                joints = solve_ik(arm, target, joints)
            except IKConvergenceError as exc:
                log_obj.event_rows.append(EventRow(
                    now_ms, "ik_failure", "", "",
                    json.dumps({"residual": exc.best_residual},
                               sort_keys=True, separators=(",", ":"))))
        if joints.gripper_aperture != cmd_aperture:
            joints = replace(joints, gripper_aperture=cmd_aperture)

        # 4. physics step
        state = step_world(world, state, joints, cmd_grip, dt_s)
        for wev in state.events:
            row = EventRow(now_ms, wev.kind, wev.subject or "", wev.target or "",
                           json.dumps(wev.details, sort_keys=True,
                                      separators=(",", ":")))
            log_obj.event_rows.append(row)
            bridge.emit_event(row)
            if wev.kind in ("grasp", "release", "placement"):
                event_times.append(now_ms)

        # 5. end-effector motion estimates for force rendering
        ee_pos = state.end_effector.position
        ee_quat = state.end_effector.orientation
        px, py, pz = float(ee_pos[0]), float(ee_pos[1]), float(ee_pos[2])
        vx = (px - prev_ee_pos[0]) / dt_s
        vy = (py - prev_ee_pos[1]) / dt_s
        vz = (pz - prev_ee_pos[2]) / dt_s
        acc = np.array([(vx - prev_vel[0]) / dt_s, (vy - prev_vel[1]) / dt_s,
                        (vz - prev_vel[2]) / dt_s])
        vel = np.array([vx, vy, vz])
        # z rotation rate from the orientation change (scalar quaternion math)
        w2, x2, y2, z2 = (float(ee_quat[0]), float(ee_quat[1]),
                          float(ee_quat[2]), float(ee_quat[3]))
        w1, x1, y1, z1 = prev_ee_quat
        ew = w2 * w1 + x2 * x1 + y2 * y1 + z2 * z1
        ez = -w2 * z1 + z2 * w1 - x2 * y1 + y2 * x1
        ex = -w2 * x1 + x2 * w1 - y2 * z1 + z2 * y1
        ey = -w2 * y1 + y2 * w1 - z2 * x1 + x2 * z1
        if ew < 0.0:
            ew, ex, ey, ez = -ew, -ex, -ey, -ez
        vn = math.sqrt(ex * ex + ey * ey + ez * ez)
        rz = 2.0 * ez if vn < 1e-12 else ez * (2.0 * math.atan2(vn, ew) / vn)
        ang_z = rz / dt_s
        prev_ee_pos = (px, py, pz)
        prev_ee_quat = (w2, x2, y2, z2)
        prev_vel = (vx, vy, vz)

        # 6. haptic render (every sim tick) and visual snapshot (frame rate)
        sample = renderer.render_contact_forces(state, vel, acc, ang_z)
        seq = pipeline.enqueue(sample, Channel.HAPTIC, now_ms)
        emitted.append(f"{seq}:h")
        if on_frame:
            seq = pipeline.enqueue(state, Channel.VISUAL, now_ms)
            emitted.append(f"{seq}:v")

        # 7. zero-delay deliveries land on their emission tick
        for ev in pipeline.drain_due(now_ms):
            delivered.append(str(ev.sequence))
            if ev.channel is Channel.VISUAL:
                latest_visual = ev.payload
                bridge.deliver_visual(ev.payload, ev.emit_time_ms, now_ms)
            elif ev.channel is Channel.HAPTIC:
                latest_haptic = ev.payload
                bridge.deliver_haptic(ev.payload, ev.emit_time_ms, now_ms)

        # 8. log the tick
        log_obj.tick_rows.append(TickRow(
            time_ms=now_ms,
            joints=tuple(joints.angles.tolist()),
            aperture=float(joints.gripper_aperture),
            ee_pos=(px, py, pz),
            ee_quat=(w2, x2, y2, z2),
            grasp_binding=state.grasp_binding or "",
            emitted=";".join(emitted),
            delivered=";".join(delivered),
            force=tuple(sample.force.tolist()),
            torque_z=float(sample.torque_z),
            force_clamped=sample.clamped,
            mode_magnitudes=(sample.mode_magnitude("weight"),
                             sample.mode_magnitude("inertia"),
                             sample.mode_magnitude("momentum"),
                             sample.mode_magnitude("impact"),
                             sample.mode_magnitude("texture"),
                             sample.mode_magnitude("balance")),
            input_delta=tick_input[0] if tick_input else None,
            input_grip=tick_input[1] if tick_input else None,
            input_aperture=tick_input[2] if tick_input else None,
        ))

        bridge.pace(now_ms)
        if bridge.should_abort():
            end_status = bridge.abort_status()
            break
        if end_at_ms is not None and now_ms >= end_at_ms:
            end_status = "playback_end"
            break

        # 9. finish once the task is done and the operator has retreated
        if operator is not None and operator.done and state.task_complete:
            idle_ticks_after_done += 1
            if idle_ticks_after_done >= int(0.2 / dt_s):
                end_status = "completed"
                break

    log_obj.high_water_mark = pipeline.high_water_mark
    log_obj.end_status = end_status

    frame_times = [r.time_ms for r in log_obj.tick_rows
                   if frame_due(r.time_ms, dt_ms, config.frame_rate_hz)]
    if config.policy is not None:
        log_obj.pupil_rows = synthesize_pupil_rows(config, event_times, frame_times)
        log_obj.posttrial = synthesize_posttrial(config)
    q = bridge.questionnaire()
    if q:
        log_obj.posttrial.update(q)
    return log_obj


# ---------------------------------------------------------------------------
# live server

def _visual_payload(snapshot) -> dict:
    return {
        "t_s": snapshot.time_s,
        "joints": [float(a) for a in snapshot.robot_joints.angles],
        "aperture": float(snapshot.robot_joints.gripper_aperture),
        "ee_pos": [float(v) for v in snapshot.end_effector.position],
        "ee_quat": [float(v) for v in snapshot.end_effector.orientation],
        "grasp_binding": snapshot.grasp_binding,
        "objects": [
            {"id": o.id, "color": o.color_tag,
             "pos": [float(v) for v in o.pose.position],
             "half_extents": [float(v) for v in o.half_extents]}
            for o in snapshot.objects
        ],
        "script_index": snapshot.script_index,
    }


def _haptic_payload(sample) -> dict:
    mag = sample.magnitude
    direction = [0.0, 0.0, 0.0]
    if mag > 1e-12:
        direction = [float(v / mag) for v in sample.force]
    return {"magnitude_n": mag, "direction": direction,
            "torque_z": float(sample.torque_z), "clamped": bool(sample.clamped)}


class _SocketBridge(LiveBridge):
    """Bridges one connected client into the tick loop. Visual and haptic
    messages go out when the delay pipeline releases them, carrying both the
    snapshot and delivery sim timestamps."""

    def __init__(self, conn: socket.socket, inputs: queue.Queue,
                 control: "queue.Queue[dict]", pace_real_time: bool):
        self.conn = conn
        self.inputs = inputs
        self.control = control
        self.pace_real_time = pace_real_time
        self.stop_requested = False
        self.disconnected = False
        self._seq = 0
        self._t0 = time.monotonic()
        self._questionnaire: dict | None = None

    def _send(self, kind: str, payload: dict, now_ms: int):
        msg = WireMessage(kind, self._seq, now_ms, payload)
        self._seq += 1
        try:
            self.conn.sendall(encode_message(msg))
        except OSError:
            self.disconnected = True

    def _apply_control(self, ctl: dict) -> None:
        if ctl.get("command") == "stop":
            self.stop_requested = True
        if ctl.get("disconnect"):
            self.disconnected = True
        if ctl.get("questionnaire"):
            self._questionnaire = ctl["questionnaire"]

    def poll_inputs(self) -> list[tuple]:
        out = []
        while True:
            try:
                item = self.inputs.get_nowait()
            except queue.Empty:
                break
            out.append(item)
        while True:
            try:
                ctl = self.control.get_nowait()
            except queue.Empty:
                break
            self._apply_control(ctl)
        return out

    def deliver_visual(self, snapshot, emit_ms, now_ms):
        payload = _visual_payload(snapshot)
        payload["snapshot_ms"] = emit_ms
        self._send("visual_frame", payload, now_ms)

    def deliver_haptic(self, sample, emit_ms, now_ms):
        payload = _haptic_payload(sample)
        payload["snapshot_ms"] = emit_ms
        self._send("haptic_frame", payload, now_ms)

    def emit_event(self, event: EventRow):
        self._send("event", {"kind": event.kind, "subject": event.subject,
                             "target": event.target,
                             "details": event.details}, event.time_ms)

    def should_abort(self) -> bool:
        return self.stop_requested or self.disconnected

    def abort_status(self) -> str:
        # an explicit stop is a normal end; vanishing mid-trial is not
        return "aborted" if self.disconnected else "completed"

    def questionnaire(self):
        # drain anything that arrived after the loop ended
        self.poll_inputs()
        return self._questionnaire

    def await_questionnaire(self, timeout_s: float) -> dict | None:
        """Block after the trial for a late questionnaire submission."""
        if self._questionnaire is not None or self.disconnected:
            return self._questionnaire
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            try:
                ctl = self.control.get(timeout=0.1)
            except queue.Empty:
                continue
            self._apply_control(ctl)
            if self._questionnaire is not None or self.disconnected:
                break
        return self._questionnaire

    def pace(self, now_ms: int) -> None:
        if not self.pace_real_time:
            return
        target = self._t0 + now_ms / 1000.0
        delay = target - time.monotonic()
        if delay > 0.0005:
            time.sleep(delay)


class TeleopServer:
    """One TCP listener; each connection negotiates hello -> config ->
    trial_control(start), then streams a live session."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 log_dir=None, pace_real_time: bool = True,
                 questionnaire_wait_s: float = 60.0):
        self.listener = socket.create_server((host, port))
        self.host, self.port = self.listener.getsockname()[:2]
        self.log_dir = log_dir
        self.pace_real_time = pace_real_time
        self.questionnaire_wait_s = questionnaire_wait_s
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self.completed_logs: list[TrialLog] = []

    def serve_forever(self):
        while not self._stop.is_set():
            try:
                self.listener.settimeout(0.25)
                conn, _ = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            t = threading.Thread(target=self._serve_client, args=(conn,),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self):
        self._stop.set()
        try:
            self.listener.close()
        except OSError:
            pass

    # -- per-connection ------------------------------------------------------

    def _serve_client(self, conn: socket.socket):
        seq = 0

        def send(kind, payload, t_ms=0):
            nonlocal seq
            conn.sendall(encode_message(WireMessage(kind, seq, t_ms, payload)))
            seq += 1

        decoder = FrameDecoder()
        inputs: queue.Queue = queue.Queue()
        control: queue.Queue = queue.Queue()
        config: TrialConfig | None = None
        started = False
        bridge: _SocketBridge | None = None

        def reader():
            while True:
                try:
                    data = conn.recv(65536)
                except OSError:
                    break
                if not data:
                    break
                try:
                    msgs = decoder.feed(data)
                except ProtocolError as exc:
                    control.put({"command": "stop", "error": str(exc)})
                    break
                for m in msgs:
                    if m.kind == "input":
                        inputs.put((m.payload["delta"], m.payload["grip"],
                                    m.payload["aperture"]))
                    elif m.kind == "trial_control":
                        control.put(m.payload)
                    elif m.kind == "questionnaire":
                        control.put({"questionnaire": m.payload})
            control.put({"command": "stop", "disconnect": True})

        try:
            conn.settimeout(30.0)
            # handshake: hello -> config -> start
            pending = []
            while config is None or not started:
                data = conn.recv(65536)
                if not data:
                    return
                pending.extend(decoder.feed(data))
                while pending:
                    m = pending.pop(0)
                    if m.kind == "hello":
                        send("hello", {"server": "telesim",
                                       "format_version": "1"})
                    elif m.kind == "config":
                        try:
                            payload = dict(m.payload)
                            if payload.get("scene") is None:
                                import yaml
                                from .world import SCENE_DIR
                                payload["scene"] = yaml.safe_load(
                                    (SCENE_DIR / "default.yaml").read_text())
                            config = TrialConfig.from_dict(payload)
                        except (ConditionConfigError, KeyError, ValueError) as exc:
                            send("trial_control",
                                 {"status": "rejected", "reason": str(exc)})
                            config = None
                            continue
                        send("trial_control", {"status": "accepted"})
                    elif m.kind == "trial_control" and m.payload.get("command") == "start":
                        if config is None:
                            send("trial_control",
                                 {"status": "rejected",
                                  "reason": "no accepted config"})
                        else:
                            started = True
                            break

            conn.settimeout(None)
            threading.Thread(target=reader, daemon=True).start()
            bridge = _SocketBridge(conn, inputs, control, self.pace_real_time)
            trial_log = run_session(replace(config, policy=None), input_feed=[],
                                    bridge=bridge)
            # a disconnect mid-trial still leaves the partial, marked log
            self.completed_logs.append(trial_log)
            end_ms = trial_log.tick_rows[-1].time_ms if trial_log.tick_rows else 0
            try:
                send("trial_control", {"status": "finished",
                                       "end_status": trial_log.end_status},
                     end_ms)
            except OSError:
                pass
            # the questionnaire is collected after the trial; wait for it
            # (unless it already arrived or the client is gone)
            q = bridge.await_questionnaire(self.questionnaire_wait_s)
            if q:
                trial_log.posttrial.update(q)
            if self.log_dir is not None:
                from .session import write_log
                write_log(trial_log,
                          Path(self.log_dir) / trial_log.config.trial_id)
            try:
                send("trial_control", {"status": "logged"}, end_ms)
            except OSError:
                pass
        except (OSError, ProtocolError) as exc:
            log.warning("client connection ended: %s", exc)
        finally:
            try:
                conn.close()
            except OSError:
                pass
