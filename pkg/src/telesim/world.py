"""Headless physics world for the scripted pick-and-place task.

Four colored cubes must be carried to four target plates in a fixed order,
past static obstacles. Rigid-body point-mass dynamics with axis-aligned box
contacts and impulse resolution are enough for the task metrics; cubes attach
rigidly to the end effector while grasped. Placement registers only when the
released cube lands inside an invisible acceptance box around its target,
which standardizes the precision required of every operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidIntervalError
from .kinematics import (
    ArmModel,
    JointState,
    Pose,
    chain_pose,
    default_arm_model,
    forward_kinematics,
    pose_unchecked,
)

GRAVITY = 9.81  # m/s^2, applied to free cubes

DEFAULT_CUBE_ORDER = ("cube_grey", "cube_green", "cube_blue", "cube_purple")

FLOOR_ID = "floor"


@dataclass(frozen=True)
class SceneObject:
    """An axis-aligned box in the world: cube, target plate, or obstacle."""

    id: str
    color_tag: str  # grey/green/blue/purple for cubes; obstacle; target
    pose: Pose
    half_extents: np.ndarray
    mass: float = 0.0  # kg; > 0 for cubes, 0 for statics
    surface_roughness: float = 0.0
    grasped: bool = False
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "half_extents",
                           np.asarray(self.half_extents, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.surface_roughness < 0:
            raise ValueError("surface_roughness must be >= 0")
        p, h = self.pose.position, self.half_extents
        object.__setattr__(self, "_geom", (float(p[0]), float(p[1]), float(p[2]),
                                           float(h[0]), float(h[1]), float(h[2])))

    @property
    def is_cube(self) -> bool:
        return self.color_tag in ("grey", "green", "blue", "purple")


@dataclass(frozen=True)
class TaskScript:
    """Scripted cube order with per-cube target and obstacle assignments."""

    cube_order: tuple[str, ...] = DEFAULT_CUBE_ORDER
    targets: dict[str, str] = field(default_factory=dict)
    obstacles: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def target_of(self, cube_id: str) -> str:
        return self.targets[cube_id]


@dataclass(frozen=True)
class Contact:
    a_id: str
    b_id: str
    normal: tuple[float, float, float]  # from b toward a
    penetration_m: float
    rel_normal_speed: float  # approach speed killed by the impulse


@dataclass(frozen=True)
class WorldEvent:
    kind: str  # grasp | release | placement | missed_placement | rejected_grasp | degenerate_input
    time_s: float
    subject: str | None = None
    target: str | None = None
    details: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of the world at one tick. ``events`` holds what the
    step that produced this state emitted."""

    time_s: float
    objects: tuple[SceneObject, ...]
    robot_joints: JointState
    end_effector: Pose
    grasp_binding: str | None = None
    grasp_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)  # EE frame
    contacts: tuple[Contact, ...] = ()
    events: tuple[WorldEvent, ...] = ()
    script_index: int = 0
    placed: tuple[str, ...] = ()
    pending_release: str | None = None  # released cube not yet settled

    def object_by_id(self, obj_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == obj_id:
                return o
        raise KeyError(obj_id)

    @property
    def task_complete(self) -> bool:
        return self.script_index >= len(DEFAULT_CUBE_ORDER)


@dataclass(frozen=True)
class World:
    """Static configuration: the arm, the scene, and contact parameters."""

    arm: ArmModel
    objects: tuple[SceneObject, ...]
    script: TaskScript
    grasp_threshold_n: float = 2.0
    grasp_radius_m: float = 0.03
    collider_margin_m: float = 0.02
    floor_friction: float = 0.5
    name: str = "unnamed"

    def __post_init__(self):
        cubes = [o for o in self.objects if o.is_cube]
        targets = [o for o in self.objects if o.color_tag == "target"]
        if len(cubes) != 4 or len(targets) != 4:
            raise ValueError(
                f"standard scene needs 4 cubes and 4 targets, got "
                f"{len(cubes)} cubes / {len(targets)} targets")
        for c in cubes:
            if c.mass <= 0:
                raise ValueError(f"cube {c.id} must have positive mass")
        # flat scalar geometry of the static objects for the contact loop
        object.__setattr__(self, "_static_boxes", tuple(
            (o.id, float(o.pose.position[0]), float(o.pose.position[1]),
             float(o.pose.position[2]), float(o.half_extents[0]),
             float(o.half_extents[1]), float(o.half_extents[2]))
            for o in self.objects if not o.is_cube))

    def initial_state(self, joints: JointState | None = None) -> WorldState:
        if joints is None:
            joints = JointState(self.arm.staging_angles(),
                                gripper_aperture=self.arm.max_aperture)
        ee = forward_kinematics(self.arm, joints)
        return WorldState(time_s=0.0, objects=self.objects,
                          robot_joints=joints, end_effector=ee)

    def current_cube_id(self, state: WorldState) -> str | None:
        if state.script_index < len(self.script.cube_order):
            return self.script.cube_order[state.script_index]
        return None


# ---------------------------------------------------------------------------
# metric formulas

def placement_accuracy(cube_final, target_center) -> float:
    """Planar distance between a placed cube and its target center (m):
    sqrt((xt-x0)^2 + (yt-y0)^2), evaluated in the horizontal plane."""
    dx = float(cube_final[0]) - float(target_center[0])
    dy = float(cube_final[1]) - float(target_center[1])
    return math.sqrt(dx * dx + dy * dy)


def time_on_task(t_grab: float, t_drop: float) -> float:
    """Seconds between grabbing a cube and dropping it."""
    if t_drop < t_grab:
        raise InvalidIntervalError(f"drop time {t_drop} precedes grab time {t_grab}")
    return t_drop - t_grab


def placement_gate(cube: SceneObject, target: SceneObject,
                   margin_m: float = 0.02) -> bool:
    """True iff the cube center lies inside the invisible acceptance box
    centered on the target (target half-extents plus margin, closed
    boundary). Drops register only when this holds."""
    d = np.abs(cube.pose.position - target.pose.position)
    limit = target.half_extents + margin_m
    return bool(np.all(d <= limit))


# ---------------------------------------------------------------------------
# stepping

def _aabb_distance(px, py, pz, cx, cy, cz, hx, hy, hz) -> float:
    gx = max(abs(px - cx) - hx, 0.0)
    gy = max(abs(py - cy) - hy, 0.0)
    gz = max(abs(pz - cz) - hz, 0.0)
    return math.sqrt(gx * gx + gy * gy + gz * gz)


def step_world(world: World, state: WorldState, joints: JointState,
               grip_force: float, dt: float) -> WorldState:
    """Advance the world by one tick. Degenerate inputs are clamped and
    logged as events, never raised; identical inputs produce bit-identical
    successor states. The contact loop runs in scalar arithmetic: it executes
    once per simulated millisecond."""
    events: list[WorldEvent] = []
    t_next = state.time_s + dt

    if not (dt > 0.0) or dt > 0.01 or not math.isfinite(dt):
        events.append(WorldEvent("degenerate_input", state.time_s,
                                 details={"field": "dt", "value": float(dt)}))
        dt = min(max(dt if math.isfinite(dt) and dt > 0 else 1e-3, 1e-6), 0.01)
        t_next = state.time_s + dt
    if not math.isfinite(grip_force) or grip_force < 0.0:
        events.append(WorldEvent("degenerate_input", state.time_s,
                                 details={"field": "grip_force", "value": float(grip_force)}))
        grip_force = 0.0

    if joints is state.robot_joints:
        # unchanged command: the previous state already sanitized these
        # joints and carries their pose
        aperture = joints.gripper_aperture
        ee = state.end_effector
    else:
        angles = world.arm.clamp_angles(joints.angles)
        clamped_any = False
        for i in range(7):
            if angles[i] != joints.angles[i]:
                clamped_any = True
                break
        if clamped_any:
            events.append(WorldEvent("degenerate_input", state.time_s,
                                     details={"field": "joint_limits"}))
        aperture = min(max(joints.gripper_aperture, 0.0), world.arm.max_aperture)
        if clamped_any or aperture != joints.gripper_aperture:
            joints = replace(joints, angles=angles, gripper_aperture=aperture)
        ee = chain_pose(world.arm, joints.angles)
    ee_x, ee_y, ee_z = (float(v) for v in ee.position)
    pe = state.end_effector.position
    vx = (ee_x - float(pe[0])) / dt
    vy = (ee_y - float(pe[1])) / dt
    vz = (ee_z - float(pe[2])) / dt
    ee_vel = np.array([vx, vy, vz])

    objects = {o.id: o for o in state.objects}
    # live scalar geometry (id -> px, py, pz, hx, hy, hz), updated as cubes move
    geom = {o.id: o._geom for o in state.objects}
    binding = state.grasp_binding
    grasp_offset = state.grasp_offset
    script_index = state.script_index
    placed = state.placed
    pending_release = state.pending_release
    contacts: list[Contact] = []

    # --- release ---------------------------------------------------------
    if binding is not None and grip_force < world.grasp_threshold_n:
        cube = objects[binding]
        objects[binding] = replace(cube, grasped=False, velocity=ee_vel.copy())
        events.append(WorldEvent("release", t_next, subject=binding,
                                 details={"speed": math.sqrt(vx * vx + vy * vy + vz * vz)}))
        pending_release = binding
        binding = None

    # --- grasp -----------------------------------------------------------
    if binding is None and grip_force >= world.grasp_threshold_n:
        current = (world.script.cube_order[script_index]
                   if script_index < len(world.script.cube_order) else None)
        for obj in state.objects:
            if not obj.is_cube or obj.id in placed:
                continue
            cx, cy, cz, hx, hy, hz = geom[obj.id]
            near = (_aabb_distance(ee_x, ee_y, ee_z, cx, cy, cz, hx, hy, hz)
                    <= world.grasp_radius_m)
            closed = aperture <= 2.0 * hx + 0.005
            if not (near and closed):
                continue
            if obj.id != current:
                events.append(WorldEvent("rejected_grasp", t_next, subject=obj.id,
                                         details={"expected": current}))
                continue
            rel_vel = obj.velocity - ee_vel
            binding = obj.id
            if pending_release == obj.id:
                pending_release = None  # picked back up before it settled
            grasp_offset = (cx - ee_x, cy - ee_y, cz - ee_z)
            objects[obj.id] = replace(obj, grasped=True, velocity=np.zeros(3))
            events.append(WorldEvent("grasp", t_next, subject=obj.id,
                                     details={"rel_speed": float(np.linalg.norm(rel_vel)),
                                              "rel_velocity": (float(rel_vel[0]),
                                                               float(rel_vel[1]),
                                                               float(rel_vel[2])),
                                              "mass": obj.mass}))
            break

    # --- grasped cube follows the end effector rigidly --------------------
    if binding is not None:
        cube = objects[binding]
        nx = ee_x + grasp_offset[0]
        ny = ee_y + grasp_offset[1]
        nz = ee_z + grasp_offset[2]
        objects[binding] = replace(
            cube, pose=pose_unchecked(np.array([nx, ny, nz]),
                                      cube.pose.orientation),
            velocity=ee_vel.copy(), grasped=True)
        _, _, _, hx, hy, hz = geom[binding]
        geom[binding] = (nx, ny, nz, hx, hy, hz)
        # record (but do not resolve) contacts of the held cube
        for sid, sx, sy, sz, shx, shy, shz in world._static_boxes:
            ox = (hx + shx) - abs(nx - sx)
            if ox <= 0.0:
                continue
            oy = (hy + shy) - abs(ny - sy)
            if oy <= 0.0:
                continue
            oz = (hz + shz) - abs(nz - sz)
            if oz <= 0.0:
                continue
            if ox <= oy and ox <= oz:
                axis, pen, d, v = 0, ox, nx - sx, vx
            elif oy <= oz:
                axis, pen, d, v = 1, oy, ny - sy, vy
            else:
                axis, pen, d, v = 2, oz, nz - sz, vz
            sign = 1.0 if d >= 0 else -1.0
            normal = [0.0, 0.0, 0.0]
            normal[axis] = sign
            approach = abs(v) if v * sign < 0 else 0.0
            contacts.append(Contact(binding, sid, tuple(normal), pen, approach))

    # --- free cube dynamics ------------------------------------------------
    for obj in state.objects:
        if not obj.is_cube or obj.id == binding:
            continue
        cur = objects[obj.id]
        ovx = float(cur.velocity[0])
        ovy = float(cur.velocity[1])
        ovz = float(cur.velocity[2])
        cvx, cvy = ovx, ovy
        cvz = ovz - GRAVITY * dt
        px, py, pz, hx, hy, hz = geom[obj.id]
        opx, opy, opz = px, py, pz
        px += cvx * dt
        py += cvy * dt
        pz += cvz * dt

        # floor contact
        at_rest = False
        bottom = pz - hz
        if bottom <= 0.0:
            approach = -cvz if cvz < 0 else 0.0
            pen = -bottom
            pz = hz
            if cvz < 0:
                cvz = 0.0
            # Coulomb-style ground friction on the horizontal component
            speed = math.hypot(cvx, cvy)
            if speed > 0.0:
                drop = world.floor_friction * GRAVITY * dt
                scale = max(0.0, 1.0 - drop / speed)
                cvx *= scale
                cvy *= scale
            contacts.append(Contact(obj.id, FLOOR_ID, (0.0, 0.0, 1.0),
                                    pen, approach))
            # settled on the floor exactly where it already was: nothing can
            # newly overlap it except the carried cube, checked below
            at_rest = (cvx == 0.0 and cvy == 0.0 and cvz == 0.0
                       and px == opx and py == opy and pz == opz)

        others = state.objects
        if at_rest:
            if binding is None:
                continue
            others = (objects[binding],)

        # static boxes and other cubes (treated static for resolution)
        for other in others:
            if other.id == obj.id:
                continue
            sx, sy, sz, shx, shy, shz = geom[other.id]
            ox = (hx + shx) - abs(px - sx)
            if ox <= 0.0:
                continue
            oy = (hy + shy) - abs(py - sy)
            if oy <= 0.0:
                continue
            oz = (hz + shz) - abs(pz - sz)
            if oz <= 0.0:
                continue
            if ox <= oy and ox <= oz:
                d = px - sx
                sign = 1.0 if d >= 0 else -1.0
                pen = ox
                approach = abs(cvx) if cvx * sign < 0 else 0.0
                if cvx * sign < 0:
                    cvx = 0.0
                px += sign * pen
                normal = (sign, 0.0, 0.0)
            elif oy <= oz:
                d = py - sy
                sign = 1.0 if d >= 0 else -1.0
                pen = oy
                approach = abs(cvy) if cvy * sign < 0 else 0.0
                if cvy * sign < 0:
                    cvy = 0.0
                py += sign * pen
                normal = (0.0, sign, 0.0)
            else:
                d = pz - sz
                sign = 1.0 if d >= 0 else -1.0
                pen = oz
                approach = abs(cvz) if cvz * sign < 0 else 0.0
                if cvz * sign < 0:
                    cvz = 0.0
                pz += sign * pen
                normal = (0.0, 0.0, sign)
            contacts.append(Contact(obj.id, other.id, normal, pen, approach))

        if (px != opx or py != opy or pz != opz
                or cvx != ovx or cvy != ovy or cvz != ovz):
            geom[obj.id] = (px, py, pz, hx, hy, hz)
            objects[obj.id] = replace(objects[obj.id],
                                      pose=pose_unchecked(np.array([px, py, pz]),
                                                          obj.pose.orientation),
                                      velocity=np.array([cvx, cvy, cvz]))

    # --- settle check: a released cube registers its drop only once it has
    # come to rest; the acceptance box then decides placement vs miss --------
    if pending_release is not None and pending_release != binding:
        cube = objects[pending_release]
        supported = any(c.a_id == pending_release and c.normal[2] > 0.5
                        for c in contacts)
        at_rest = float(np.linalg.norm(cube.velocity)) < 0.02
        if supported and at_rest:
            target_id = world.script.target_of(pending_release)
            if placement_gate(cube, objects[target_id], world.collider_margin_m):
                pa = placement_accuracy(cube.pose.position,
                                        objects[target_id].pose.position)
                events.append(WorldEvent("placement", t_next,
                                         subject=pending_release, target=target_id,
                                         details={"accuracy_m": pa}))
                placed = placed + (pending_release,)
                script_index += 1
            else:
                events.append(WorldEvent("missed_placement", t_next,
                                         subject=pending_release, target=target_id))
            pending_release = None

    new_objects = tuple(objects[o.id] for o in state.objects)
    return WorldState(time_s=t_next, objects=new_objects, robot_joints=joints,
                      end_effector=ee, grasp_binding=binding,
                      grasp_offset=grasp_offset, contacts=tuple(contacts),
                      events=tuple(events), script_index=script_index,
                      placed=placed, pending_release=pending_release)


# ---------------------------------------------------------------------------
# scene files

SCENE_DIR = Path(__file__).parent / "scenes"


def load_scene(path: str | Path, arm: ArmModel | None = None) -> World:
    """Build a World from a YAML scene file (objects, masses, layout, task
    script, contact parameters)."""
    path = Path(path)
    data = yaml.safe_load(path.read_text())
    return world_from_dict(data, arm=arm)


def world_from_dict(data: dict, arm: ArmModel | None = None) -> World:
    objs = []
    for entry in data["objects"]:
        pos = np.asarray(entry["position"], dtype=float)
        objs.append(SceneObject(
            id=entry["id"],
            color_tag=entry["color_tag"],
            pose=Pose(pos),
            half_extents=np.asarray(entry["half_extents"], dtype=float),
            mass=float(entry.get("mass", 0.0)),
            surface_roughness=float(entry.get("surface_roughness", 0.0)),
        ))
    script_data = data.get("script", {})
    script = TaskScript(
        cube_order=tuple(script_data.get("order", DEFAULT_CUBE_ORDER)),
        targets={k: v for k, v in script_data.get("targets", {}).items()},
        obstacles={k: tuple(v) for k, v in script_data.get("obstacles", {}).items()},
    )
    params = data.get("params", {})
    return World(
        arm=arm or default_arm_model(),
        objects=tuple(objs),
        script=script,
        grasp_threshold_n=float(params.get("grasp_threshold_n", 2.0)),
        grasp_radius_m=float(params.get("grasp_radius_m", 0.03)),
        collider_margin_m=float(params.get("collider_margin_m", 0.02)),
        floor_friction=float(params.get("floor_friction", 0.5)),
        name=str(data.get("name", "unnamed")),
    )


def default_world(arm: ArmModel | None = None) -> World:
    return load_scene(SCENE_DIR / "default.yaml", arm=arm)
