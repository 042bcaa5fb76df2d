/**
 * Scene geometry for the console: the arm's kinematic chain (mirroring the
 * server's default 7-joint table) and a fixed task-facing camera projecting
 * world points onto the canvas. Pure functions returning draw commands; the
 * canvas layer just strokes them.
 */

import type { SceneBox, VisualFramePayload } from "./protocol.js";

type Vec3 = [number, number, number];
type Quat = [number, number, number, number]; // w, x, y, z

interface Link {
  axis: Vec3;
  offset: Vec3;
}

// default arm table (axis in parent frame, translation to the next joint)
export const ARM_LINKS: Link[] = [
  { axis: [0, 0, 1], offset: [0, 0, 0.333] },
  { axis: [0, 1, 0], offset: [0, 0, 0.316] },
  { axis: [0, 0, 1], offset: [0.0825, 0, 0] },
  { axis: [0, -1, 0], offset: [-0.0825, 0, 0.384] },
  { axis: [0, 0, 1], offset: [0, 0, 0] },
  { axis: [0, 1, 0], offset: [0.088, 0, 0] },
  { axis: [0, 0, 1], offset: [0, 0, 0.107] },
];

function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

function quatRotate(q: Quat, v: Vec3): Vec3 {
  const [w, x, y, z] = q;
  const tx = 2 * (y * v[2] - z * v[1]);
  const ty = 2 * (z * v[0] - x * v[2]);
  const tz = 2 * (x * v[1] - y * v[0]);
  return [
    v[0] + w * tx + (y * tz - z * ty),
    v[1] + w * ty + (z * tx - x * tz),
    v[2] + w * tz + (x * ty - y * tx),
  ];
}

function quatAxisAngle(axis: Vec3, angle: number): Quat {
  const h = angle / 2;
  const s = Math.sin(h);
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Joint origins plus the end-effector position for a joint vector. */
export function forwardChain(joints: number[]): { points: Vec3[]; ee: Vec3 } {
  let p: Vec3 = [0, 0, 0];
  let q: Quat = [1, 0, 0, 0];
  const points: Vec3[] = [[0, 0, 0]];
  ARM_LINKS.forEach((link, i) => {
    q = quatMul(q, quatAxisAngle(link.axis, joints[i] ?? 0));
    const step = quatRotate(q, link.offset);
    p = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
    points.push(p);
  });
  return { points, ee: p };
}

// ---------------------------------------------------------------------------
// fixed task-facing camera

const CAM_POS: Vec3 = [1.45, -0.95, 0.85];
const CAM_TARGET: Vec3 = [0.45, 0.05, 0.08];
const CAM_UP: Vec3 = [0, 0, 1];
const FOCAL = 2.4;

function sub(a: Vec3, b: Vec3): Vec3 { return [a[0] - b[0], a[1] - b[1], a[2] - b[2]]; }
function cross(a: Vec3, b: Vec3): Vec3 {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]];
}
function norm(a: Vec3): Vec3 {
  const n = Math.hypot(a[0], a[1], a[2]) || 1;
  return [a[0] / n, a[1] / n, a[2] / n];
}
function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

const fwd = norm(sub(CAM_TARGET, CAM_POS));
const right = norm(cross(fwd, CAM_UP));
const up = cross(right, fwd);

/** World point -> normalized screen coords in [-1, 1] plus view depth. */
export function project(p: Vec3): { x: number; y: number; depth: number } {
  const rel = sub(p, CAM_POS);
  const depth = dot(rel, fwd);
  const sx = (dot(rel, right) / depth) * FOCAL;
  const sy = (dot(rel, up) / depth) * FOCAL;
  return { x: sx, y: -sy, depth };
}

export interface DrawCmd {
  kind: "polyline" | "polygon" | "dot";
  points: Array<{ x: number; y: number }>;
  color: string;
  width?: number;
  fill?: boolean;
}

const COLOR_BY_TAG: Record<string, string> = {
  grey: "#9e9e9e",
  green: "#43a047",
  blue: "#1e88e5",
  purple: "#8e24aa",
  obstacle: "#6d4c41",
  target: "#c8b900",
};

function boxCorners(box: SceneBox): Vec3[] {
  const [cx, cy, cz] = box.pos;
  const [hx, hy, hz] = box.half_extents;
  const out: Vec3[] = [];
  for (const sx of [-1, 1]) for (const sy of [-1, 1]) for (const sz of [-1, 1]) {
    out.push([cx + sx * hx, cy + sy * hy, cz + sz * hz]);
  }
  return out;
}

const BOX_EDGES: Array<[number, number]> = [
  [0, 1], [2, 3], [4, 5], [6, 7],
  [0, 2], [1, 3], [4, 6], [5, 7],
  [0, 4], [1, 5], [2, 6], [3, 7],
];

/** Everything to draw for one delivered frame. */
export function buildDrawList(frame: VisualFramePayload): DrawCmd[] {
  const cmds: DrawCmd[] = [];

  // floor grid
  for (let i = 0; i <= 6; i++) {
    const y = -0.5 + i * (1.0 / 6);
    cmds.push({ kind: "polyline", color: "#2a2f36", points: [
      project([0.1, y, 0]), project([0.8, y, 0])] });
    const x = 0.1 + i * (0.7 / 6);
    cmds.push({ kind: "polyline", color: "#2a2f36", points: [
      project([x, -0.5, 0]), project([x, 0.5, 0])] });
  }

  for (const box of frame.objects) {
    const corners = boxCorners(box).map(project);
    const color = COLOR_BY_TAG[box.color] ?? "#ffffff";
    for (const [a, b] of BOX_EDGES) {
      cmds.push({ kind: "polyline", color,
                  points: [corners[a], corners[b]],
                  width: box.id === frame.grasp_binding ? 2.5 : 1.2 });
    }
  }

  const chain = forwardChain(frame.joints);
  cmds.push({
    kind: "polyline",
    color: "#eceff1",
    width: 3,
    points: chain.points.map(project),
  });
  cmds.push({ kind: "dot", color: "#ff7043",
              points: [project(frame.ee_pos)] });
  return cmds;
}
