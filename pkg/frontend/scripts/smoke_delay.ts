/**
 * Scripted smoke test against a real session host:
 *
 * 1. Honest-delay check: under synchronous-1000, an instrumented step input
 *    reflects on the delivered visual stream 1000 ms (+ transport) later,
 *    within +-50 ms, and every frame's delivery-minus-snapshot timestamp is
 *    exactly the configured delay.
 * 2. Questionnaire round trip: submitted perceived delays land verbatim in
 *    the server's trial log, and a 100 ms report against a 750 ms actual
 *    visual delay yields a -650 ms visual perception delta in the analysis.
 *
 * Spawns the Python CLI itself; run from frontend/ after `npm run build`:
 *    node dist/scripts/smoke_delay.js
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { Socket, connect } from "node:net";

import { FrameDecoder, encodeFrame, type WireMessage } from "../src/protocol.js";

const PY = process.env.TELESIM_PYTHON ?? "python3";

function fail(msg: string): never {
  console.error(`SMOKE FAIL: ${msg}`);
  process.exit(1);
}

class Client {
  private decoder = new FrameDecoder();
  private queue: WireMessage[] = [];
  private waiters: Array<(m: WireMessage) => void> = [];
  private seq = 0;

  constructor(private sock: Socket) {
    sock.on("data", (chunk) => {
      for (const msg of this.decoder.feed(new Uint8Array(chunk))) {
        const waiter = this.waiters.shift();
        if (waiter) waiter(msg);
        else this.queue.push(msg);
      }
    });
  }

  send(kind: WireMessage["kind"], payload: unknown): void {
    this.sock.write(Buffer.from(encodeFrame(
      { kind, seq: this.seq++, t_ms: 0, payload })));
  }

  next(timeoutMs = 30000): Promise<WireMessage> {
    const queued = this.queue.shift();
    if (queued) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("recv timeout")), timeoutMs);
      this.waiters.push((m) => { clearTimeout(timer); resolve(m); });
    });
  }

  async nextOfKind(kind: string, timeoutMs = 30000): Promise<WireMessage> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const m = await this.next(Math.max(1, deadline - Date.now()));
      if (m.kind === kind) return m;
    }
  }

  close(): void {
    this.sock.end();
  }
}

function startServer(outDir: string): Promise<{ proc: ChildProcess; port: number }> {
  const cfgPath = join(outDir, "serve.yaml");
  writeFileSync(cfgPath, [
    "trial_id: smoke-serve",
    "condition: {kind: control, visual_delay_ms: 0}",
    "scene: default",
    "policy: null",
  ].join("\n"));
  const proc = spawn(PY, ["-m", "telesim.cli", "run", "--config", cfgPath,
                          "--serve", "0", "--out", join(outDir, "logs")],
                     { stdio: ["ignore", "pipe", "inherit"],
                       env: { ...process.env, PYTHONUNBUFFERED: "1" } });
  return new Promise((resolve, reject) => {
    let buf = "";
    proc.stdout!.on("data", (d) => {
      buf += String(d);
      const m = buf.match(/127\.0\.0\.1:(\d+)/);
      if (m) resolve({ proc, port: parseInt(m[1], 10) });
    });
    proc.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
    setTimeout(() => reject(new Error("server did not report a port")), 20000);
  });
}

function dialClient(port: number): Promise<Client> {
  return new Promise((resolve, reject) => {
    const sock = connect(port, "127.0.0.1", () => resolve(new Client(sock)));
    sock.on("error", reject);
  });
}

function trialConfig(kind: string, visual: number, id: string): unknown {
  return {
    condition: { kind, visual_delay_ms: visual },
    scene: null,
    policy: null,
    seed: 12345,
    sim_rate_hz: 500,
    frame_rate_hz: 90,
    duration_cap_s: 20.0,
    trial_id: id,
  };
}

async function handshake(c: Client, cfg: unknown): Promise<void> {
  c.send("hello", {});
  await c.nextOfKind("hello");
  c.send("config", cfg);
  const reply = await c.nextOfKind("trial_control");
  const status = (reply.payload as { status: string }).status;
  if (status !== "accepted") fail(`config rejected: ${JSON.stringify(reply.payload)}`);
  c.send("trial_control", { command: "start" });
}

async function honestDelayCheck(port: number): Promise<void> {
  const c = await dialClient(port);
  await handshake(c, trialConfig("synchronous", 1000, "smoke-delay"));

  // settle into the stream, auditing the exact sim-clock latency
  let baselineX: number | null = null;
  for (let i = 0; i < 12; i++) {
    const f = await c.nextOfKind("visual_frame");
    const p = f.payload as { snapshot_ms: number; ee_pos: number[] };
    if (f.t_ms - p.snapshot_ms !== 1000) {
      fail(`visual frame latency ${f.t_ms - p.snapshot_ms} != 1000 ms`);
    }
    baselineX = p.ee_pos[0];
  }

  // instrumented step input
  const t0 = Date.now();
  c.send("input", { delta: [0.03, 0.0, 0.0], grip: 0.0, aperture: 0.078 });
  let reflectedAt: number | null = null;
  const deadline = Date.now() + 8000;
  while (Date.now() < deadline) {
    const f = await c.nextOfKind("visual_frame");
    const p = f.payload as { snapshot_ms: number; ee_pos: number[] };
    if (f.t_ms - p.snapshot_ms !== 1000) {
      fail(`visual frame latency ${f.t_ms - p.snapshot_ms} != 1000 ms`);
    }
    if (baselineX !== null && Math.abs(p.ee_pos[0] - baselineX) > 0.02) {
      reflectedAt = Date.now();
      break;
    }
  }
  if (reflectedAt === null) fail("step input never reflected on screen");
  const latency = reflectedAt - t0;
  // 1000 ms configured delay + localhost transport; +-50 ms allowed
  if (Math.abs(latency - 1000) > 50) {
    fail(`on-screen reflect latency ${latency} ms (expected 1000 +- 50)`);
  }
  console.log(`honest-delay: step reflected after ${latency} ms (configured 1000)`);
  c.send("trial_control", { command: "stop" });
  await c.nextOfKind("trial_control"); // finished
  c.send("questionnaire", { perceived_visual_ms: 0, perceived_haptic_ms: 0,
                            perceived_gap_ms: 0 });
  await c.nextOfKind("trial_control"); // logged
  c.close();
}

async function questionnaireRoundTrip(port: number, outDir: string): Promise<void> {
  const c = await dialClient(port);
  await handshake(c, trialConfig("synchronous", 750, "smoke-quest"));
  await c.nextOfKind("visual_frame");
  c.send("trial_control", { command: "stop" });
  await c.nextOfKind("trial_control"); // finished
  c.send("questionnaire", {
    perceived_visual_ms: 100.0,
    perceived_haptic_ms: 40.0,
    perceived_gap_ms: 10.0,
    tlx_total: 55.0,
    tlx_confidence: 6.0,
    tlx_frustration: 3.0,
  });
  await c.nextOfKind("trial_control"); // logged
  c.close();

  const logDir = join(outDir, "logs", "smoke-quest");
  const posttrial = readFileSync(join(logDir, "posttrial.csv"), "utf-8");
  const stored = new Map(posttrial.trim().split("\n").slice(1)
    .map((line) => line.split(",") as [string, string]));
  const expectVerbatim: Array<[string, number]> = [
    ["perceived_visual_ms", 100.0], ["perceived_haptic_ms", 40.0],
    ["perceived_gap_ms", 10.0], ["tlx_total", 55.0],
    ["tlx_confidence", 6.0], ["tlx_frustration", 3.0],
  ];
  for (const [field, value] of expectVerbatim) {
    if (Number(stored.get(field)) !== value) {
      fail(`${field} not stored verbatim (${stored.get(field)} != ${value}):\n${posttrial}`);
    }
  }
  console.log("questionnaire: all submitted values stored verbatim");

  const analyze = spawnSync(PY, ["-m", "telesim.cli", "analyze", logDir,
                                 "--report", join(outDir, "report")],
                            { encoding: "utf-8" });
  if (analyze.status !== 0) fail(`analyze failed: ${analyze.stderr}`);
  if (!analyze.stdout.includes("dv=-650.000")) {
    fail(`analysis did not yield dv=-650.000:\n${analyze.stdout}`);
  }
  console.log("questionnaire: 100 ms report vs 750 ms actual -> dv=-650.000");
}

async function main(): Promise<void> {
  const outDir = mkdtempSync(join(tmpdir(), "telesim-smoke-"));
  const { proc, port } = await startServer(outDir);
  try {
    await honestDelayCheck(port);
    await questionnaireRoundTrip(port, outDir);
    console.log("SMOKE PASS");
  } finally {
    proc.kill();
  }
}

main().catch((err) => fail(String(err)));
