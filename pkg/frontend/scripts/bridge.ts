/**
 * WebSocket <-> TCP bridge (browsers cannot open raw sockets).
 *
 * Listens for WebSocket connections, opens one TCP connection to the
 * session host per client, and pipes bytes both ways unchanged: WebSocket
 * binary messages carry the same length-prefixed frames the host speaks.
 * Minimal RFC 6455 implementation: no extensions, binary frames only.
 *
 * Usage: node dist/scripts/bridge.js [ws-port] [tcp-host] [tcp-port]
 */

import { createHash } from "node:crypto";
import { createServer as createHttpServer, IncomingMessage } from "node:http";
import { Socket, connect } from "node:net";
import { Duplex } from "node:stream";

const WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

const wsPort = parseInt(process.argv[2] ?? "8701", 10);
const tcpHost = process.argv[3] ?? "127.0.0.1";
const tcpPort = parseInt(process.argv[4] ?? "8700", 10);

function acceptKey(key: string): string {
  return createHash("sha1").update(key + WS_GUID).digest("base64");
}

/** Frame a binary payload for the client (server frames are unmasked). */
export function wsEncode(payload: Uint8Array): Buffer {
  const n = payload.length;
  let header: Buffer;
  if (n < 126) {
    header = Buffer.from([0x82, n]);
  } else if (n < 65536) {
    header = Buffer.alloc(4);
    header[0] = 0x82;
    header[1] = 126;
    header.writeUInt16BE(n, 2);
  } else {
    header = Buffer.alloc(10);
    header[0] = 0x82;
    header[1] = 127;
    header.writeBigUInt64BE(BigInt(n), 2);
  }
  return Buffer.concat([header, Buffer.from(payload)]);
}

/** Incremental client-to-server frame parser (masked frames). */
export class WsDecoder {
  private buf = Buffer.alloc(0);

  feed(data: Buffer): { payloads: Buffer[]; closed: boolean } {
    this.buf = Buffer.concat([this.buf, data]);
    const payloads: Buffer[] = [];
    for (;;) {
      if (this.buf.length < 2) return { payloads, closed: false };
      const opcode = this.buf[0] & 0x0f;
      const masked = (this.buf[1] & 0x80) !== 0;
      let len = this.buf[1] & 0x7f;
      let offset = 2;
      if (len === 126) {
        if (this.buf.length < 4) return { payloads, closed: false };
        len = this.buf.readUInt16BE(2);
        offset = 4;
      } else if (len === 127) {
        if (this.buf.length < 10) return { payloads, closed: false };
        len = Number(this.buf.readBigUInt64BE(2));
        offset = 10;
      }
      const maskLen = masked ? 4 : 0;
      if (this.buf.length < offset + maskLen + len) {
        return { payloads, closed: false };
      }
      const mask = masked ? this.buf.subarray(offset, offset + 4) : null;
      const body = Buffer.from(
        this.buf.subarray(offset + maskLen, offset + maskLen + len));
      if (mask) {
        for (let i = 0; i < body.length; i++) body[i] ^= mask[i % 4];
      }
      this.buf = this.buf.subarray(offset + maskLen + len);
      if (opcode === 0x8) return { payloads, closed: true };
      if (opcode === 0x2 || opcode === 0x1) payloads.push(body);
      // ping -> ignore (the session keeps its own cadence); pong likewise
    }
  }
}

function handleUpgrade(req: IncomingMessage, socket: Duplex): void {
  const key = req.headers["sec-websocket-key"];
  if (!key) {
    socket.end("HTTP/1.1 400 Bad Request\r\n\r\n");
    return;
  }
  socket.write(
    "HTTP/1.1 101 Switching Protocols\r\n" +
    "Upgrade: websocket\r\n" +
    "Connection: Upgrade\r\n" +
    `Sec-WebSocket-Accept: ${acceptKey(String(key))}\r\n\r\n`);

  const tcp: Socket = connect(tcpPort, tcpHost);
  const decoder = new WsDecoder();

  socket.on("data", (chunk: Buffer) => {
    const { payloads, closed } = decoder.feed(chunk);
    for (const p of payloads) tcp.write(p);
    if (closed) {
      tcp.end();
      socket.end();
    }
  });
  tcp.on("data", (chunk: Buffer) => socket.write(wsEncode(chunk)));
  tcp.on("close", () => socket.end());
  tcp.on("error", () => socket.end());
  socket.on("close", () => tcp.end());
  socket.on("error", () => tcp.end());
}

if (process.argv[1]?.endsWith("bridge.js")) {
  const server = createHttpServer((_req, res) => {
    res.writeHead(200, { "content-type": "text/plain" });
    res.end("telesim ws-tcp bridge; connect via WebSocket\n");
  });
  server.on("upgrade", handleUpgrade);
  server.listen(wsPort, () => {
    console.log(`ws-tcp bridge: ws://127.0.0.1:${wsPort} -> tcp ${tcpHost}:${tcpPort}`);
  });
}
