/** DOM wiring: one LiveClient feeding the status bar, strip chart,
 * path view, event log, and metrics table; forms go the other way.
 * Redraws are batched on animation frames. */

import { StripBuffer, drawStrip } from "./chart.js";
import { LiveClient } from "./client.js";
import {
  BumpInfo,
  PathSample,
  drawPath,
  endpointsCoincide,
} from "./pathview.js";
import { PushDraft, PushProfile, ServerFrame } from "./protocol.js";
import { httpBase } from "./urls.js";

const LOG_LIMIT = 200;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(v: unknown, digits = 3): string {
  return typeof v === "number" ? v.toFixed(digits) : String(v);
}

export class App {
  private readonly client: LiveClient;
  private readonly buffer = new StripBuffer(10);
  private threshold = 1.0;
  private refStart: number[] | null = null;
  private refEnd: number[] | null = null;
  private lastPath: PathSample[] = [];
  private lastBumps: BumpInfo[] = [];
  private drawQueued = false;
  private logCount = 0;

  constructor(private readonly wsUrl: string) {
    this.client = new LiveClient(wsUrl);
  }

  start(): void {
    el<HTMLElement>("server-url").textContent = this.wsUrl;
    this.client.on("state", (state, detail) => {
      const badge = el<HTMLElement>("conn-state");
      badge.textContent = state;
      badge.className = `badge ${state}`;
      if (state !== "connected") this.log("link", detail);
    });
    this.client.on("protocolError", (message) => this.log("protocol", message));
    this.client.on("frame", (frame) => this.onFrame(frame));
    this.wireForms();
    this.fetchReference();
    this.client.connect();
  }

  private async fetchReference(): Promise<void> {
    try {
      const res = await fetch(`${httpBase(this.wsUrl)}/scenario`);
      const scenario = (await res.json()) as {
        path: { s: number; xyz: number[] }[];
      };
      const waypoints = scenario.path;
      if (waypoints.length > 0) {
        this.refStart = waypoints[0]!.xyz;
        this.refEnd = waypoints[waypoints.length - 1]!.xyz;
        this.checkEndpoints();
      }
    } catch {
      this.log("link", "could not fetch /scenario for the reference path");
    }
  }

  private onFrame(frame: ServerFrame): void {
    switch (frame.kind) {
      case "hello": {
        el<HTMLElement>("scenario-name").textContent = String(frame.scenario);
        el<HTMLElement>("scenario-info").textContent =
          `${frame.joints} joints, ${fmt(frame.duration, 1)} s at ` +
          `${frame.sample_rate} Hz`;
        this.threshold = Number(frame.detection_threshold);
        this.buffer.clear();
        break;
      }
      case "tick": {
        this.buffer.push({
          t: Number(frame.t),
          etaBar: Number(frame.eta_bar),
          contact: Number(frame.contact) !== 0,
        });
        el<HTMLElement>("run-clock").textContent = `t = ${fmt(frame.t, 2)} s`;
        el<HTMLElement>("run-progress").textContent = `s = ${fmt(frame.s)}`;
        const contact = Number(frame.contact) !== 0;
        const badge = el<HTMLElement>("contact-state");
        badge.textContent = contact ? `contact on link ${frame.link}` : "no contact";
        badge.className = `badge ${contact ? "oncontact" : "idle"}`;
        el<HTMLElement>("tip-deviation").textContent =
          `path deviation ${fmt(Number(frame.deviation) * 1000, 2)} mm`;
        this.queueDraw();
        break;
      }
      case "detection":
        this.log(
          "detect",
          Number(frame.contact) !== 0
            ? `contact declared on link ${frame.link} at t=${fmt(frame.t, 3)}`
            : `contact cleared at t=${fmt(frame.t, 3)}`,
        );
        break;
      case "estimate": {
        const force = frame.force as number[];
        const mag = Math.hypot(...force);
        this.log(
          "estimate",
          `link ${frame.link}, s=${fmt(frame.s)}, |F|=${fmt(mag, 1)} N ` +
            `(window ${frame.window}, cost ${fmt(frame.cost, 4)})`,
        );
        break;
      }
      case "bump":
        this.log(
          "bump",
          `path deformed from s=${fmt(frame.s_start)} over ${fmt(frame.horizon)}`,
        );
        break;
      case "path_update": {
        this.lastPath = frame.path as PathSample[];
        this.lastBumps = frame.bumps as BumpInfo[];
        el<HTMLElement>("bump-count").textContent =
          `${this.lastBumps.length} deformation term(s)`;
        this.checkEndpoints();
        this.queueDraw();
        break;
      }
      case "metrics":
        this.renderMetrics(frame.data as Record<string, unknown>);
        break;
      case "ack":
        break;
      case "error":
        this.log("server", String(frame.error));
        break;
    }
  }

  private checkEndpoints(): void {
    const badge = el<HTMLElement>("endpoint-state");
    if (this.refStart === null || this.refEnd === null || this.lastPath.length === 0) {
      badge.textContent = "endpoints: awaiting data";
      badge.className = "badge idle";
      return;
    }
    const pinned = endpointsCoincide(this.lastPath, this.refStart, this.refEnd);
    badge.textContent = pinned ? "endpoints pinned" : "ENDPOINTS MOVED";
    badge.className = `badge ${pinned ? "ok" : "bad"}`;
  }

  private queueDraw(): void {
    if (this.drawQueued) return;
    this.drawQueued = true;
    requestAnimationFrame(() => {
      this.drawQueued = false;
      drawStrip(el<HTMLCanvasElement>("strip"), this.buffer, this.threshold);
      if (this.lastPath.length > 0) {
        drawPath(el<HTMLCanvasElement>("pathview"), this.lastPath, this.lastBumps);
      }
    });
  }

  private renderMetrics(data: Record<string, unknown>): void {
    const rows = Object.entries(data)
      .filter(([, v]) => typeof v !== "object" || v === null)
      .map(
        ([k, v]) =>
          `<tr><td>${k}</td><td>${typeof v === "number" ? fmt(v, 4) : String(v)}</td></tr>`,
      )
      .join("");
    el<HTMLElement>("metrics-body").innerHTML = rows;
    el<HTMLElement>("metrics-card").hidden = false;
  }

  private log(tag: string, message: string): void {
    const pane = el<HTMLElement>("log");
    const line = document.createElement("div");
    line.className = `log-line log-${tag}`;
    const now = new Date().toLocaleTimeString();
    line.textContent = `${now}  [${tag}] ${message}`;
    pane.prepend(line);
    this.logCount += 1;
    while (this.logCount > LOG_LIMIT && pane.lastChild !== null) {
      pane.removeChild(pane.lastChild);
      this.logCount -= 1;
    }
  }

  private wireForms(): void {
    const pushBtn = el<HTMLButtonElement>("push-send");
    el<HTMLFormElement>("push-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      const draft: PushDraft = {
        link: Number(el<HTMLInputElement>("push-link").value),
        s: Number(el<HTMLInputElement>("push-s").value),
        force: [
          Number(el<HTMLInputElement>("push-fx").value),
          Number(el<HTMLInputElement>("push-fy").value),
          Number(el<HTMLInputElement>("push-fz").value),
        ],
        duration: Number(el<HTMLInputElement>("push-duration").value),
        profile: el<HTMLSelectElement>("push-profile").value as PushProfile,
      };
      // one push in flight at a time: locked until the ack or timeout
      pushBtn.disabled = true;
      this.client
        .applyPush(draft)
        .then((ack) => {
          this.log(
            "push",
            ack.ok
              ? `accepted at tick ${ack.tick}`
              : `rejected: ${ack.error ?? "no reason given"}`,
          );
        })
        .catch((err: Error) => this.log("push", err.message))
        .finally(() => {
          pushBtn.disabled = false;
        });
    });

    const simple = (id: string, go: () => Promise<unknown>, label: string) => {
      el<HTMLButtonElement>(id).addEventListener("click", () => {
        go().catch((err: Error) => this.log(label, err.message));
      });
    };
    simple("btn-pause", () => this.client.pause(), "pause");
    simple("btn-resume", () => this.client.resume(), "resume");
    simple("btn-reset", () => this.client.reset(), "reset");

    el<HTMLFormElement>("tune-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      const values: Record<string, number> = {};
      for (const [inputId, key] of [
        ["tune-gain", "planner.gain"],
        ["tune-fsat", "planner.force_saturation"],
        ["tune-beta", "planner.horizon_per_newton"],
        ["tune-dead", "planner.deadband"],
      ] as const) {
        const text = el<HTMLInputElement>(inputId).value.trim();
        if (text !== "") values[key] = Number(text);
      }
      if (Object.keys(values).length === 0) {
        this.log("tune", "no values entered");
        return;
      }
      this.client
        .setConfig(values)
        .then((ack) => {
          this.log(
            "tune",
            ack.ok
              ? `applied ${Object.keys(values).join(", ")} (session no longer replayable)`
              : `rejected: ${ack.error ?? "no reason given"}`,
          );
        })
        .catch((err: Error) => this.log("tune", err.message));
    });
  }
}
