/**
 * Wire protocol: length-prefixed JSON frames shared with the session host.
 * A frame is a 4-byte big-endian body length followed by UTF-8 JSON
 * `{"kind":..., "payload":..., "seq":..., "t_ms":...}` with sorted keys.
 */

export type WireKind =
  | "hello"
  | "config"
  | "input"
  | "visual_frame"
  | "haptic_frame"
  | "event"
  | "trial_control"
  | "questionnaire";

export const WIRE_KINDS: readonly WireKind[] = [
  "hello", "config", "input", "visual_frame", "haptic_frame", "event",
  "trial_control", "questionnaire",
];

export interface WireMessage {
  kind: WireKind;
  seq: number;
  t_ms: number;
  payload: unknown;
}

export class ProtocolError extends Error {
  constructor(message: string, public readonly offset: number) {
    super(message);
    this.name = "ProtocolError";
  }
}

const MAX_FRAME_BYTES = 16 * 1024 * 1024;

/** JSON.stringify with recursively sorted object keys (canonical form). */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function encodeFrame(msg: WireMessage): Uint8Array {
  const body = new TextEncoder().encode(canonicalJson({
    kind: msg.kind,
    payload: msg.payload,
    seq: msg.seq,
    t_ms: msg.t_ms,
  }));
  const out = new Uint8Array(4 + body.length);
  new DataView(out.buffer).setUint32(0, body.length, false);
  out.set(body, 4);
  return out;
}

/**
 * Incremental decoder. Truncated input waits for more bytes; malformed
 * frames raise ProtocolError carrying the absolute stream offset.
 */
export class FrameDecoder {
  private buf = new Uint8Array(0);
  private offset = 0;

  buffered(): number {
    return this.buf.length;
  }

  feed(data: Uint8Array): WireMessage[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf, 0);
    joined.set(data, this.buf.length);
    this.buf = joined;

    const out: WireMessage[] = [];
    for (;;) {
      if (this.buf.length < 4) return out;
      const view = new DataView(this.buf.buffer, this.buf.byteOffset);
      const length = view.getUint32(0, false);
      if (length > MAX_FRAME_BYTES) {
        throw new ProtocolError(`frame length ${length} exceeds limit`, this.offset);
      }
      if (this.buf.length < 4 + length) return out;
      const body = this.buf.slice(4, 4 + length);
      const start = this.offset;
      this.buf = this.buf.slice(4 + length);
      this.offset += 4 + length;
      let parsed: Record<string, unknown>;
      try {
        parsed = JSON.parse(new TextDecoder().decode(body));
      } catch (err) {
        throw new ProtocolError(`malformed frame: ${err}`, start);
      }
      const kind = parsed["kind"] as WireKind;
      if (!WIRE_KINDS.includes(kind)
          || typeof parsed["seq"] !== "number"
          || typeof parsed["t_ms"] !== "number") {
        throw new ProtocolError("malformed frame: missing fields", start);
      }
      out.push({
        kind,
        seq: parsed["seq"] as number,
        t_ms: parsed["t_ms"] as number,
        payload: parsed["payload"],
      });
    }
  }
}

// payload shapes produced by the session host -------------------------------

export interface SceneBox {
  id: string;
  color: string;
  pos: [number, number, number];
  half_extents: [number, number, number];
}

export interface VisualFramePayload {
  snapshot_ms: number;
  t_s: number;
  joints: number[];
  aperture: number;
  ee_pos: [number, number, number];
  ee_quat: [number, number, number, number];
  grasp_binding: string | null;
  objects: SceneBox[];
  script_index: number;
}

export interface HapticFramePayload {
  snapshot_ms: number;
  magnitude_n: number;
  direction: [number, number, number];
  torque_z: number;
  clamped: boolean;
}
