import { describe, expect, it } from "vitest";

import {
  FRAME_INTERVAL_MS,
  InputCapturer,
  KEEPALIVE_INTERVAL_MS,
} from "../src/input.js";

describe("input capture", () => {
  it("coalesces bursts above 90 Hz into one message per frame", () => {
    const cap = new InputCapturer();
    let wall = 0;
    let sent = 0;
    let sumX = 0;
    // 300 pointer events over 100 ms, sampler polled at 3 kHz
    for (let i = 0; i < 300; i++) {
      cap.move(0.0005, 0, 0);
      for (let k = 0; k < 3; k++) {
        wall += 1 / 9;
        const msg = cap.sample(wall);
        if (msg) {
          sent += 1;
          sumX += msg.delta[0];
        }
      }
    }
    const frames = Math.ceil(100 / FRAME_INTERVAL_MS) + 1;
    expect(sent).toBeLessThanOrEqual(frames);
    // nothing lost: coalesced deltas preserve the total displacement
    const tail = cap.sample(wall + FRAME_INTERVAL_MS);
    if (tail) sumX += tail.delta[0];
    expect(sumX).toBeCloseTo(300 * 0.0005, 10);
  });

  it("sends zero-delta keepalives at a low rate while idle", () => {
    const cap = new InputCapturer();
    let wall = 0;
    let sent = 0;
    for (let step = 0; step < 2000; step++) {
      wall += 5;
      const msg = cap.sample(wall);
      if (msg) {
        sent += 1;
        expect(msg.delta).toEqual([0, 0, 0]);
      }
    }
    const expected = (2000 * 5) / KEEPALIVE_INTERVAL_MS;
    expect(sent).toBeGreaterThan(expected * 0.8);
    expect(sent).toBeLessThanOrEqual(expected + 1);
  });

  it("ramps grip force up while held and back to zero on release", () => {
    const cap = new InputCapturer();
    let wall = 0;
    cap.sample(wall);
    cap.setGripHeld(true);
    let peak = 0;
    for (let i = 0; i < 30; i++) {
      wall += FRAME_INTERVAL_MS;
      const msg = cap.sample(wall);
      if (msg) peak = Math.max(peak, msg.grip);
    }
    expect(peak).toBeCloseTo(4.0, 5);
    cap.setGripHeld(false);
    let last = peak;
    for (let i = 0; i < 30; i++) {
      wall += FRAME_INTERVAL_MS;
      const msg = cap.sample(wall);
      if (msg) last = msg.grip;
    }
    expect(last).toBe(0);
  });

  it("closes the aperture while gripping", () => {
    const cap = new InputCapturer();
    cap.setGripHeld(true);
    const msg = cap.sample(1000)!;
    expect(msg.aperture).toBeLessThan(0.05);
  });
});
