/**
 * Operator input capture: pointer moves accumulate into end-effector
 * position deltas, a grip key ramps grip force. Messages leave at most once
 * per 90 Hz frame (bursts coalesce into one), with zero-delta keepalives at
 * a low rate while idle.
 */

export interface OperatorInputMessage {
  delta: [number, number, number];
  grip: number;
  aperture: number;
}

export const FRAME_INTERVAL_MS = 1000 / 90;
export const KEEPALIVE_INTERVAL_MS = 500;

const GRASP_FORCE_N = 4.0;
const GRIP_RAMP_N_PER_S = 40.0;
const OPEN_APERTURE = 0.078;
const CLOSED_APERTURE = 0.036;

export class InputCapturer {
  private pending: [number, number, number] = [0, 0, 0];
  private gripHeld = false;
  private grip = 0.0;
  private lastSentGrip = 0.0;
  private lastSentWallMs: number | null = null;
  private lastGripUpdateMs: number | null = null;
  sent = 0;

  /** Accumulate a pointer/keyboard move (already scaled to meters). */
  move(dx: number, dy: number, dz: number): void {
    this.pending[0] += dx;
    this.pending[1] += dy;
    this.pending[2] += dz;
  }

  setGripHeld(held: boolean): void {
    this.gripHeld = held;
  }

  get gripForce(): number {
    return this.grip;
  }

  /**
   * Called by the render loop. Returns the message to send now, or null
   * when inside the rate window with nothing new worth sending.
   */
  sample(wallNowMs: number): OperatorInputMessage | null {
    if (this.lastGripUpdateMs !== null) {
      const dt = (wallNowMs - this.lastGripUpdateMs) / 1000;
      const target = this.gripHeld ? GRASP_FORCE_N : 0.0;
      const step = GRIP_RAMP_N_PER_S * dt;
      this.grip += Math.max(-step, Math.min(step, target - this.grip));
      if (Math.abs(this.grip - target) < 1e-9) this.grip = target;
    }
    this.lastGripUpdateMs = wallNowMs;

    const sinceLast = this.lastSentWallMs === null
      ? Infinity : wallNowMs - this.lastSentWallMs;
    if (sinceLast < FRAME_INTERVAL_MS) {
      return null; // coalesce: pending deltas keep accumulating
    }
    const moving = this.pending[0] !== 0 || this.pending[1] !== 0
      || this.pending[2] !== 0;
    // grip transitions must reach the server even when otherwise idle
    const gripActive = this.gripHeld || this.grip > 0
      || this.grip !== this.lastSentGrip;
    if (!moving && !gripActive && sinceLast < KEEPALIVE_INTERVAL_MS) {
      return null; // idle: only low-rate keepalives
    }
    const msg: OperatorInputMessage = {
      delta: [this.pending[0], this.pending[1], this.pending[2]],
      grip: this.grip,
      aperture: this.gripHeld ? CLOSED_APERTURE : OPEN_APERTURE,
    };
    this.pending = [0, 0, 0];
    this.lastSentWallMs = wallNowMs;
    this.lastSentGrip = this.grip;
    this.sent += 1;
    return msg;
  }
}
