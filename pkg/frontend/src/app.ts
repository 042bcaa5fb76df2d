/**
 * Browser wiring: WebSocket to the ws-tcp bridge, canvas rendering of the
 * delivered (delayed) scene, pointer/keyboard capture, the haptic gauge,
 * and the post-trial questionnaire panel.
 */

import { FRAME_INTERVAL_MS, InputCapturer } from "./input.js";
import {
  FrameDecoder,
  type VisualFramePayload,
  type WireMessage,
  encodeFrame,
} from "./protocol.js";
import {
  buildQuestionnairePayload,
  emptyForm,
  type QuestionnaireForm,
} from "./questionnaire.js";
import { buildDrawList } from "./scene.js";
import { ConsoleState } from "./state.js";

const POINTER_SCALE = 0.0012; // px -> m
const WHEEL_SCALE = 0.0004;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class ConsoleApp {
  private readonly state = new ConsoleState();
  private readonly input = new InputCapturer();
  private readonly decoder = new FrameDecoder();
  private ws: WebSocket | null = null;
  private seq = 0;
  private canvas = el<HTMLCanvasElement>("scene");
  private ctx = this.canvas.getContext("2d")!;
  private questionnaire: QuestionnaireForm = emptyForm();
  private questionnaireSent = false;

  start(): void {
    el<HTMLButtonElement>("connect").addEventListener("click", () => this.connect());
    el<HTMLButtonElement>("start").addEventListener("click", () => this.startTrial());
    el<HTMLButtonElement>("end").addEventListener("click", () =>
      this.send("trial_control", { command: "stop" }));
    el<HTMLButtonElement>("submit-q").addEventListener("click", () => this.submitQuestionnaire());
    this.bindPointer();
    requestAnimationFrame((t) => this.tick(t));
  }

  private send(kind: WireMessage["kind"], payload: unknown): void {
    if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return;
    this.ws.send(encodeFrame({ kind, seq: this.seq++, t_ms: 0, payload }));
  }

  private connect(): void {
    const url = el<HTMLInputElement>("bridge-url").value;
    this.ws = new WebSocket(url);
    this.ws.binaryType = "arraybuffer";
    this.ws.onopen = () => {
      this.send("hello", {});
      this.send("config", this.buildConfig());
    };
    this.ws.onmessage = (ev) => {
      for (const msg of this.decoder.feed(new Uint8Array(ev.data as ArrayBuffer))) {
        this.state.handleMessage(msg, performance.now());
      }
    };
    this.ws.onclose = () => {
      this.state.connection = "disconnected";
    };
  }

  private buildConfig(): unknown {
    const kind = el<HTMLSelectElement>("cond-kind").value;
    const v = parseInt(el<HTMLSelectElement>("cond-visual").value, 10);
    this.state.condition = {
      kind,
      visual_delay_ms: kind === "control" ? 0 : v,
      haptic_delay_ms: kind === "anchoring" || kind === "control" ? 0
        : kind === "synchronous" ? v : 250,
    };
    return {
      condition: { kind, visual_delay_ms: kind === "control" ? 0 : v },
      scene: null, // server uses its packaged default when null
      policy: null,
      seed: Date.now() % 100000,
      sim_rate_hz: 1000,
      frame_rate_hz: 90,
      duration_cap_s: 300,
      trial_id: `live-${Date.now()}`,
    };
  }

  private startTrial(): void {
    this.send("trial_control", { command: "start" });
    this.state.markStarted();
  }

  private submitQuestionnaire(): void {
    for (const key of Object.keys(this.questionnaire) as
         Array<keyof QuestionnaireForm>) {
      const box = document.getElementById(`q-${key}`) as HTMLInputElement | null;
      if (box) this.questionnaire[key] = parseFloat(box.value || "0");
    }
    // the server holds the trial log open until this arrives (or times out)
    this.send("questionnaire", buildQuestionnairePayload(this.questionnaire));
    this.questionnaireSent = true;
  }

  private bindPointer(): void {
    let dragging = false;
    this.canvas.addEventListener("pointerdown", () => { dragging = true; });
    window.addEventListener("pointerup", () => { dragging = false; });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!dragging || !this.state.trialActive) return;
      // screen x -> world y, screen y -> world x (task-facing camera)
      this.input.move(-ev.movementY * POINTER_SCALE,
                      ev.movementX * POINTER_SCALE, 0);
    });
    this.canvas.addEventListener("wheel", (ev) => {
      if (!this.state.trialActive) return;
      this.input.move(0, 0, -ev.deltaY * WHEEL_SCALE);
      ev.preventDefault();
    });
    window.addEventListener("keydown", (ev) => {
      if (ev.key === " ") this.input.setGripHeld(true);
    });
    window.addEventListener("keyup", (ev) => {
      if (ev.key === " ") this.input.setGripHeld(false);
    });
  }

  private tick(wallNow: number): void {
    if (this.state.trialActive) {
      const msg = this.input.sample(wallNow);
      if (msg) this.send("input", msg);
    }
    this.render(wallNow);
    requestAnimationFrame((t) => this.tick(t));
  }

  private render(wallNow: number): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = "#14171c";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const delivered = this.state.frames.current();
    if (delivered) {
      this.drawFrame(delivered.frame);
    }
    this.drawHud(wallNow);
  }

  private drawFrame(frame: VisualFramePayload): void {
    const { ctx, canvas } = this;
    const sx = canvas.width / 2;
    const sy = canvas.height / 2;
    for (const cmd of buildDrawList(frame)) {
      ctx.strokeStyle = cmd.color;
      ctx.fillStyle = cmd.color;
      ctx.lineWidth = cmd.width ?? 1;
      if (cmd.kind === "dot") {
        const p = cmd.points[0];
        ctx.beginPath();
        ctx.arc(sx + p.x * sx, sy + p.y * sy, 4, 0, Math.PI * 2);
        ctx.fill();
        continue;
      }
      ctx.beginPath();
      cmd.points.forEach((p, i) => {
        const x = sx + p.x * sx;
        const y = sy + p.y * sy;
        if (i === 0) ctx.moveTo(x, y);
        else ctx.lineTo(x, y);
      });
      ctx.stroke();
    }
  }

  private drawHud(wallNow: number): void {
    const { ctx } = this;
    ctx.fillStyle = "#eceff1";
    ctx.font = "13px monospace";
    const cond = this.state.condition;
    const label = cond
      ? `${cond.kind}  visual ${cond.visual_delay_ms} ms / haptic ${cond.haptic_delay_ms} ms`
      : "no condition";
    ctx.fillText(`${this.state.connection}  |  ${label}`, 12, 20);

    const gauge = this.state.gauge;
    const mag = gauge ? gauge.magnitude_n : 0;
    ctx.fillText(`haptic ${mag.toFixed(2)} N${gauge?.clamped ? " (clamped)" : ""}`,
                 12, 40);
    ctx.strokeStyle = "#546e7a";
    ctx.strokeRect(12, 48, 150, 10);
    ctx.fillStyle = gauge?.clamped ? "#e53935" : "#43a047";
    ctx.fillRect(12, 48, Math.min(mag / 5.0, 1) * 150, 10);

    if (this.state.trialActive && this.state.frames.isStale(wallNow)) {
      ctx.fillStyle = "#e53935";
      ctx.font = "bold 16px monospace";
      ctx.fillText("CONNECTION STALE - FROZEN FRAME", 12, 80);
    }
    if (this.state.connection === "finished") {
      el<HTMLDivElement>("questionnaire").style.display =
        this.questionnaireSent ? "none" : "block";
    }
    if (this.state.connection === "rejected") {
      ctx.fillStyle = "#e53935";
      ctx.fillText(`config rejected: ${this.state.rejectionReason}`, 12, 60);
    }
  }
}

new ConsoleApp().start();
