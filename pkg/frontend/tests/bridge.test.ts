import { describe, expect, it } from "vitest";

import { WsDecoder, wsEncode } from "../scripts/bridge.js";

function maskedClientFrame(payload: Buffer, opcode = 0x2): Buffer {
  const mask = Buffer.from([0x11, 0x22, 0x33, 0x44]);
  const body = Buffer.from(payload);
  for (let i = 0; i < body.length; i++) body[i] ^= mask[i % 4];
  let header: Buffer;
  if (payload.length < 126) {
    header = Buffer.from([0x80 | opcode, 0x80 | payload.length]);
  } else {
    header = Buffer.alloc(4);
    header[0] = 0x80 | opcode;
    header[1] = 0x80 | 126;
    header.writeUInt16BE(payload.length, 2);
  }
  return Buffer.concat([header, mask, body]);
}

describe("ws framing", () => {
  it("encodes small and medium server frames", () => {
    const small = wsEncode(new Uint8Array([1, 2, 3]));
    expect(small[0]).toBe(0x82);
    expect(small[1]).toBe(3);
    const medium = wsEncode(new Uint8Array(1000));
    expect(medium[1]).toBe(126);
    expect(medium.readUInt16BE(2)).toBe(1000);
  });

  it("unmasks client frames", () => {
    const dec = new WsDecoder();
    const payload = Buffer.from("hello frames");
    const { payloads, closed } = dec.feed(maskedClientFrame(payload));
    expect(closed).toBe(false);
    expect(payloads).toHaveLength(1);
    expect(payloads[0].toString()).toBe("hello frames");
  });

  it("handles split and batched frames", () => {
    const dec = new WsDecoder();
    const a = maskedClientFrame(Buffer.from("one"));
    const b = maskedClientFrame(Buffer.alloc(300, 7));
    const all = Buffer.concat([a, b]);
    const first = dec.feed(all.subarray(0, 10));
    const rest = dec.feed(all.subarray(10));
    const payloads = [...first.payloads, ...rest.payloads];
    expect(payloads).toHaveLength(2);
    expect(payloads[0].toString()).toBe("one");
    expect(payloads[1].length).toBe(300);
  });

  it("signals close frames", () => {
    const dec = new WsDecoder();
    const { closed } = dec.feed(maskedClientFrame(Buffer.alloc(0), 0x8));
    expect(closed).toBe(true);
  });
});
