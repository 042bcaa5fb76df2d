/**
 * Console state. The delay honesty rule lives here: the renderer can only
 * ever read the last *delivered* visual frame, stored by the wire layer.
 * There is deliberately no prediction, interpolation, or extrapolation API.
 */

import type {
  HapticFramePayload,
  VisualFramePayload,
  WireMessage,
} from "./protocol.js";

export type ConnectionState =
  | "disconnected"
  | "connected"
  | "configured"
  | "running"
  | "finished"
  | "rejected";

export interface ConditionSummary {
  kind: string;
  visual_delay_ms: number;
  haptic_delay_ms: number;
}

export interface DeliveredVisual {
  frame: VisualFramePayload;
  deliveredSimMs: number;
  deliveredWallMs: number;
}

/** Sole source of renderable scene data; frames enter only via delivery. */
export class DeliveredFrameStore {
  private latest: DeliveredVisual | null = null;
  private count = 0;

  acceptDelivered(frame: VisualFramePayload, deliveredSimMs: number,
                  wallNowMs: number): void {
    this.latest = { frame, deliveredSimMs, deliveredWallMs: wallNowMs };
    this.count += 1;
  }

  current(): DeliveredVisual | null {
    return this.latest;
  }

  deliveredCount(): number {
    return this.count;
  }

  /** No frame for a while: the connection is stale, show a frozen-frame
   * banner rather than inventing motion. */
  isStale(wallNowMs: number, thresholdMs = 1500): boolean {
    if (this.latest === null) return true;
    return wallNowMs - this.latest.deliveredWallMs > thresholdMs;
  }
}

export interface EventEntry {
  t_ms: number;
  kind: string;
  subject: string;
}

export class ConsoleState {
  connection: ConnectionState = "disconnected";
  condition: ConditionSummary | null = null;
  readonly frames = new DeliveredFrameStore();
  gauge: HapticFramePayload | null = null;
  events: EventEntry[] = [];
  rejectionReason: string | null = null;
  endStatus: string | null = null;

  get trialActive(): boolean {
    return this.connection === "running";
  }

  /** Route one delivered wire message into the state. */
  handleMessage(msg: WireMessage, wallNowMs: number): void {
    switch (msg.kind) {
      case "hello":
        if (this.connection === "disconnected") this.connection = "connected";
        break;
      case "visual_frame":
        this.frames.acceptDelivered(
          msg.payload as VisualFramePayload, msg.t_ms, wallNowMs);
        break;
      case "haptic_frame":
        this.gauge = msg.payload as HapticFramePayload;
        break;
      case "event": {
        const p = msg.payload as { kind: string; subject: string };
        this.events.push({ t_ms: msg.t_ms, kind: p.kind, subject: p.subject });
        if (this.events.length > 200) this.events.shift();
        break;
      }
      case "trial_control": {
        const p = msg.payload as { status?: string; reason?: string;
                                   end_status?: string };
        if (p.status === "accepted") this.connection = "configured";
        else if (p.status === "rejected") {
          this.connection = "rejected";
          this.rejectionReason = p.reason ?? "rejected";
        } else if (p.status === "finished") {
          this.connection = "finished";
          this.endStatus = p.end_status ?? "completed";
        }
        break;
      }
      default:
        break;
    }
  }

  markStarted(): void {
    if (this.connection === "configured") this.connection = "running";
  }
}
