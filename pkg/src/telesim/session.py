"""Trial configuration, deterministic logging, CSV export, and replay.

A trial log is a directory: ``metadata.json`` (format version, full config
echo including the inline scene, column dictionary), ``ticks.csv`` (one row
per simulation tick), ``events.csv``, ``pupil.csv``, and ``posttrial.csv``
(perceived delays and questionnaire fields). Floats are serialized with
shortest round-trip precision so write -> read -> write is byte-identical,
which is what the replay regression leans on.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .delays import ConditionKind, ConditionSpec, make_condition
from .errors import LogFormatError
from .operators import ConfirmationChannel, OperatorPolicy, PolicyKind

FORMAT_VERSION = "1"

TICK_COLUMNS = (
    "time_ms", "j0", "j1", "j2", "j3", "j4", "j5", "j6", "aperture",
    "ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz",
    "grasp_binding", "emitted", "delivered",
    "force_x", "force_y", "force_z", "torque_z", "force_clamped",
    "fm_weight", "fm_inertia", "fm_momentum", "fm_impact", "fm_texture",
    "fm_balance",
    "in_dx", "in_dy", "in_dz", "in_grip", "in_aperture",
)

EVENT_COLUMNS = ("time_ms", "kind", "subject", "target", "details")
PUPIL_COLUMNS = ("time_ms", "diameter_mm", "frame_r", "frame_g", "frame_b")
POSTTRIAL_COLUMNS = ("field", "value")

POSTTRIAL_FIELDS = (
    "perceived_visual_ms", "perceived_haptic_ms", "perceived_gap_ms",
    "tlx_total", "tlx_confidence", "tlx_frustration",
)


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to run (or re-run) one trial. ``scene`` is the
    inline scene definition, so logs are self-contained."""

    condition: ConditionSpec
    scene: dict
    policy: OperatorPolicy | None  # None marks a live-operator trial
    seed: int = 0
    sim_rate_hz: int = 1000
    frame_rate_hz: int = 90
    duration_cap_s: float = 120.0
    trial_id: str = "trial"

    def to_dict(self) -> dict:
        cond = {
            "kind": self.condition.kind.value,
            "visual_delay_ms": self.condition.visual_delay_ms,
            "onset_delay_ms": self.condition.onset_delay_ms,
        }
        policy = None
        if self.policy is not None:
            policy = {
                "variant": self.policy.variant.value,
                "reaction_time_ms": self.policy.reaction_time_ms,
                "speed_limit": self.policy.speed_limit,
                "confirmation_channel": self.policy.confirmation_channel.value,
                "seed": self.policy.seed,
                "segment_length_m": self.policy.segment_length_m,
            }
        return {
            "condition": cond,
            "scene": self.scene,
            "policy": policy,
            "seed": self.seed,
            "sim_rate_hz": self.sim_rate_hz,
            "frame_rate_hz": self.frame_rate_hz,
            "duration_cap_s": self.duration_cap_s,
            "trial_id": self.trial_id,
        }

    @staticmethod
    def from_dict(data: dict) -> "TrialConfig":
        cond = data["condition"]
        condition = make_condition(ConditionKind(cond["kind"]),
                                   cond["visual_delay_ms"],
                                   cond.get("onset_delay_ms", 0))
        policy = None
        if data.get("policy") is not None:
            p = data["policy"]
            policy = OperatorPolicy(
                variant=PolicyKind(p["variant"]),
                reaction_time_ms=int(p["reaction_time_ms"]),
                speed_limit=float(p["speed_limit"]),
                confirmation_channel=ConfirmationChannel(p["confirmation_channel"]),
                seed=int(p["seed"]),
                segment_length_m=float(p.get("segment_length_m", 0.10)),
            )
        return TrialConfig(
            condition=condition, scene=data["scene"], policy=policy,
            seed=int(data["seed"]), sim_rate_hz=int(data["sim_rate_hz"]),
            frame_rate_hz=int(data["frame_rate_hz"]),
            duration_cap_s=float(data["duration_cap_s"]),
            trial_id=str(data["trial_id"]),
        )


@dataclass(slots=True)
class TickRow:
    time_ms: int
    joints: tuple
    aperture: float
    ee_pos: tuple
    ee_quat: tuple
    grasp_binding: str
    emitted: str     # "seq:channel-initial;..." events emitted this tick
    delivered: str   # "seq;seq;..." events delivered this tick
    force: tuple
    torque_z: float
    force_clamped: bool
    mode_magnitudes: tuple  # weight, inertia, momentum, impact, texture, balance
    input_delta: tuple | None
    input_grip: float | None
    input_aperture: float | None


@dataclass(slots=True)
class EventRow:
    time_ms: int
    kind: str
    subject: str
    target: str
    details: str  # compact JSON


@dataclass(slots=True)
class PupilRow:
    time_ms: int
    diameter_mm: float | None
    frame_rgb: tuple


@dataclass
class TrialLog:
    config: TrialConfig
    tick_rows: list[TickRow] = field(default_factory=list)
    event_rows: list[EventRow] = field(default_factory=list)
    pupil_rows: list[PupilRow] = field(default_factory=list)
    posttrial: dict[str, float | None] = field(default_factory=dict)
    end_status: str = "completed"  # completed | duration_cap | aborted
    high_water_mark: int = 0

    def events_of_kind(self, kind: str) -> list[EventRow]:
        return [e for e in self.event_rows if e.kind == kind]


# ---------------------------------------------------------------------------
# serialization

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(cell: str) -> float | None:
    return None if cell == "" else float(cell)


def _tick_to_cells(r: TickRow) -> list[str]:
    cells = [str(r.time_ms)]
    cells += [_fmt(v) for v in r.joints]
    cells.append(_fmt(r.aperture))
    cells += [_fmt(v) for v in r.ee_pos]
    cells += [_fmt(v) for v in r.ee_quat]
    cells.append(r.grasp_binding)
    cells.append(r.emitted)
    cells.append(r.delivered)
    cells += [_fmt(v) for v in r.force]
    cells.append(_fmt(r.torque_z))
    cells.append(_fmt(r.force_clamped))
    cells += [_fmt(v) for v in r.mode_magnitudes]
    if r.input_delta is None:
        cells += ["", "", "", "", ""]
    else:
        cells += [_fmt(v) for v in r.input_delta]
        cells.append(_fmt(r.input_grip))
        cells.append(_fmt(r.input_aperture))
    return cells


def _tick_from_cells(cells: list[str]) -> TickRow:
    if len(cells) != len(TICK_COLUMNS):
        raise ValueError(f"expected {len(TICK_COLUMNS)} cells, got {len(cells)}")
    it = iter(cells)
    time_ms = int(next(it))
    joints = tuple(float(next(it)) for _ in range(7))
    aperture = float(next(it))
    ee_pos = tuple(float(next(it)) for _ in range(3))
    ee_quat = tuple(float(next(it)) for _ in range(4))
    grasp_binding = next(it)
    emitted = next(it)
    delivered = next(it)
    force = tuple(float(next(it)) for _ in range(3))
    torque_z = float(next(it))
    force_clamped = next(it) == "1"
    modes = tuple(float(next(it)) for _ in range(6))
    dx, dy, dz, grip, ap = (next(it) for _ in range(5))
    if dx == "":
        delta, g, a = None, None, None
    else:
        delta = (float(dx), float(dy), float(dz))
        g, a = float(grip), float(ap)
    return TickRow(time_ms, joints, aperture, ee_pos, ee_quat, grasp_binding,
                   emitted, delivered, force, torque_z, force_clamped, modes,
                   delta, g, a)


def _write_csv(path: Path, header, rows_cells) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for cells in rows_cells:
        writer.writerow(cells)
    path.write_text(buf.getvalue())


def write_log(log: TrialLog, directory: str | Path) -> Path:
    """Write a trial log directory. Deterministic: identical logs yield
    byte-identical files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    try:
        meta = {
            "format_version": FORMAT_VERSION,
            "config": log.config.to_dict(),
            "end_status": log.end_status,
            "high_water_mark": log.high_water_mark,
            "counts": {
                "ticks": len(log.tick_rows),
                "events": len(log.event_rows),
                "pupil": len(log.pupil_rows),
            },
            "columns": {
                "ticks": list(TICK_COLUMNS),
                "events": list(EVENT_COLUMNS),
                "pupil": list(PUPIL_COLUMNS),
                "posttrial": list(POSTTRIAL_COLUMNS),
            },
        }
        (directory / "metadata.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")

        _write_csv(directory / "ticks.csv", TICK_COLUMNS,
                   (_tick_to_cells(r) for r in log.tick_rows))
        _write_csv(directory / "events.csv", EVENT_COLUMNS,
                   ((str(e.time_ms), e.kind, e.subject, e.target, e.details)
                    for e in log.event_rows))
        _write_csv(directory / "pupil.csv", PUPIL_COLUMNS,
                   ((str(p.time_ms), _fmt(p.diameter_mm),
                     _fmt(p.frame_rgb[0]), _fmt(p.frame_rgb[1]),
                     _fmt(p.frame_rgb[2])) for p in log.pupil_rows))
        _write_csv(directory / "posttrial.csv", POSTTRIAL_COLUMNS,
                   ((name, _fmt(log.posttrial.get(name)))
                    for name in POSTTRIAL_FIELDS))
    except OSError as exc:
        raise LogFormatError(f"failed writing trial log under {directory}: {exc}") \
            from exc
    return directory


def _read_csv_rows(path: Path, expected_header):
    try:
        text = path.read_text()
    except OSError as exc:
        raise LogFormatError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise LogFormatError(f"{path}:1: missing header") from None
    if tuple(header) != tuple(expected_header):
        raise LogFormatError(f"{path}:1: unexpected columns {header}")
    for lineno, cells in enumerate(reader, start=2):
        yield lineno, cells


def read_log(directory: str | Path) -> TrialLog:
    """Parse a trial log directory; refuses unknown format versions and
    reports corrupted rows with their file and line number."""
    directory = Path(directory)
    meta_path = directory / "metadata.json"
    try:
        meta = json.loads(meta_path.read_text())
    except OSError as exc:
        raise LogFormatError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"{meta_path}: invalid JSON: {exc}") from exc

    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise LogFormatError(
            f"unsupported log format version {version!r} (supported: {FORMAT_VERSION})")

    log = TrialLog(config=TrialConfig.from_dict(meta["config"]),
                   end_status=meta.get("end_status", "completed"),
                   high_water_mark=int(meta.get("high_water_mark", 0)))

    for lineno, cells in _read_csv_rows(directory / "ticks.csv", TICK_COLUMNS):
        try:
            log.tick_rows.append(_tick_from_cells(cells))
        except ValueError as exc:
            raise LogFormatError(f"{directory / 'ticks.csv'}:{lineno}: {exc}") from exc

    for lineno, cells in _read_csv_rows(directory / "events.csv", EVENT_COLUMNS):
        try:
            log.event_rows.append(EventRow(int(cells[0]), cells[1], cells[2],
                                           cells[3], cells[4]))
        except (ValueError, IndexError) as exc:
            raise LogFormatError(f"{directory / 'events.csv'}:{lineno}: {exc}") from exc

    for lineno, cells in _read_csv_rows(directory / "pupil.csv", PUPIL_COLUMNS):
        try:
            log.pupil_rows.append(PupilRow(
                int(cells[0]), _parse_float(cells[1]),
                (float(cells[2]), float(cells[3]), float(cells[4]))))
        except (ValueError, IndexError) as exc:
            raise LogFormatError(f"{directory / 'pupil.csv'}:{lineno}: {exc}") from exc

    for lineno, cells in _read_csv_rows(directory / "posttrial.csv", POSTTRIAL_COLUMNS):
        try:
            log.posttrial[cells[0]] = _parse_float(cells[1])
        except (ValueError, IndexError) as exc:
            raise LogFormatError(
                f"{directory / 'posttrial.csv'}:{lineno}: {exc}") from exc

    # referential integrity: every delivered id must have been emitted
    emitted_ids = set()
    for r in log.tick_rows:
        for entry in r.emitted.split(";"):
            if entry:
                emitted_ids.add(entry.split(":")[0])
    for r in log.tick_rows:
        for seq in r.delivered.split(";"):
            if seq and seq not in emitted_ids:
                raise LogFormatError(
                    f"delivered event {seq} at t={r.time_ms} was never emitted")
    return log


def replay(log: TrialLog) -> TrialLog:
    """Re-run the simulation that produced ``log``.

    Scripted trials re-run the policy from the logged config and seed; live
    trials play the recorded operator inputs back. Either way the recomputed
    per-tick rows must match the original bit for bit.
    """
    from .service import run_session  # session <-> service: import at call time

    if log.config.policy is not None:
        return run_session(log.config)
    inputs = [(r.time_ms, r.input_delta, r.input_grip, r.input_aperture)
              for r in log.tick_rows if r.input_delta is not None]
    end_at = log.tick_rows[-1].time_ms if log.tick_rows else 0
    replayed = run_session(log.config, input_feed=inputs, end_at_ms=end_at)
    # live-trial pupil/questionnaire data are imported, not simulated, and
    # the original's end marker is preserved
    replayed.pupil_rows = list(log.pupil_rows)
    replayed.posttrial = dict(log.posttrial)
    replayed.end_status = log.end_status
    return replayed


def logs_identical(a: TrialLog, b: TrialLog) -> bool:
    return (a.config.to_dict() == b.config.to_dict()
            and a.tick_rows == b.tick_rows
            and a.event_rows == b.event_rows
            and a.pupil_rows == b.pupil_rows
            and a.posttrial == b.posttrial
            and a.end_status == b.end_status)
