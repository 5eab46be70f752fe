/**
 * Client session: connect to the coordinator, obey delivered payloads,
 * and keep a behavior log in the simulator's observation grammar.
 *
 * The delivered program is data; obeying it here means doing the benign
 * mirror of each step. Injection appends a script element whose body is
 * an inert logger. Keystroke hooking records and buffers keys. "Exfil"
 * frames go to the lab's own coordinator. Floods never issue requests,
 * they only log the would-be observations. Worker and service-worker
 * steps use the real platform APIs through the environment ports.
 *
 * The logical clock mirrors the simulator's tick loop: timed triggers
 * fire when the clock passes their tick, the keystroke buffer flushes at
 * every 16 keys or when leaving a tick divisible by 8, and a final flush
 * runs at session end.
 */

import { Environment, SocketPort, WorkerHandle, sameSite } from "./adapters.js";
import {
  CorruptBlob,
  Instruction,
  Payload,
  normalizeBlob,
  sumOfSquares,
  wordCount,
} from "./dsl.js";
import { BehaviorLog } from "./log.js";
import {
  FrameError,
  KeystrokeEvent,
  Message,
  Trigger,
  decodeFrame,
  encodeFrame,
} from "./wire.js";

export interface SessionOptions {
  clientId: string;
  cncUrl: string;
  pageOrigin: string;
  staticScripts?: string[];
  env: Environment;
  /** Payload programs name the modeled attacker host; live runs map those
   * channel URLs onto the one real coordinator endpoint. */
  rewriteChannelUrl?: (url: string) => string;
  flushEvery?: number;
  flushTickMultiple?: number;
  maxRetries?: number;
  retryBaseMs?: number;
}

interface PendingPayload {
  payloadId: string;
  payload: Payload;
  trigger: Trigger;
}

interface MapServer {
  fnId: string;
  socket: SocketPort;
}

export class ClientSession {
  readonly log = new BehaviorLog();
  readonly errors: { error: string }[] = [];
  clock = 0;

  private readonly opts: Required<
    Pick<SessionOptions, "flushEvery" | "flushTickMultiple" | "maxRetries" | "retryBaseMs">
  > &
    SessionOptions;
  private primary: SocketPort | null = null;
  private channels = new Map<string, SocketPort>();
  private pending: PendingPayload[] = [];
  private buffer: KeystrokeEvent[] = [];
  private keystrokeChannel: SocketPort | null = null;
  private cookiesSnapshot: Record<string, string> = {};
  private storageSnapshot: Record<string, string> = {};
  private hooked = false;
  private counters: Record<string, number> = {};
  private mapServer: MapServer | null = null;
  private workers: WorkerHandle[] = [];
  private deliveries = 0;
  private deliveryWaiters: Array<() => void> = [];
  private tickOpen = false; // records were logged at `clock`; boundary work pending

  constructor(options: SessionOptions) {
    this.opts = {
      flushEvery: 16,
      flushTickMultiple: 8,
      maxRetries: 5,
      retryBaseMs: 200,
      ...options,
    };
  }

  private nextId(prefix: string): string {
    const n = this.counters[prefix] ?? 0;
    this.counters[prefix] = n + 1;
    return `${prefix}${n}`;
  }

  get deliveredCount(): number {
    return this.deliveries;
  }

  /** Page load mirror plus the delivery stub: log the page's own scripts,
   * then open the coordinator channel and register on it. */
  async start(): Promise<void> {
    for (const name of this.opts.staticScripts ?? []) {
      this.log.add(this.clock, "script_injected", {
        source: "static",
        script_id: this.nextId("s"),
        script: name,
      });
    }
    this.tickOpen = true;
    this.primary = await this.openWithRetry(this.opts.cncUrl);
    // register before streaming any log records so the coordinator can
    // attribute the whole stream (backlog included) to this client
    this.register(this.primary);
    this.log.attachSink((record) => {
      const sorted = Object.fromEntries(
        Object.entries(record).sort(([a], [b]) => (a < b ? -1 : 1)),
      );
      this.primary?.send(JSON.stringify(sorted));
    });
  }

  private register(socket: SocketPort): void {
    socket.send(encodeFrame({ type: "Register", client_id: this.opts.clientId }));
    this.log.add(this.clock, "frame_out", { frame_type: "Register" });
  }

  private async openWithRetry(url: string): Promise<SocketPort> {
    let attempt = 0;
    for (;;) {
      try {
        const socket = await this.openOnce(url);
        socket.onmessage = (ev) => {
          void this.onText(String(ev.data));
        };
        return socket;
      } catch (err) {
        attempt += 1;
        if (attempt > this.opts.maxRetries) {
          throw new Error(`connection to ${url} failed after ${attempt} attempts: ${err}`);
        }
        await this.opts.env.sleep(this.opts.retryBaseMs * 2 ** (attempt - 1));
      }
    }
  }

  private openOnce(url: string): Promise<SocketPort> {
    return new Promise((resolve, reject) => {
      let socket: SocketPort;
      try {
        socket = this.opts.env.openSocket(url);
      } catch (err) {
        reject(err);
        return;
      }
      socket.onopen = () => resolve(socket);
      socket.onerror = (err) => reject(err ?? new Error("socket error"));
      socket.onclose = () => reject(new Error("closed before open"));
    });
  }

  /** One inbound text: a wire frame, handled; anything undecodable is
   * logged as an error and the session stays connected. */
  async onText(raw: string): Promise<void> {
    let message: Message;
    try {
      message = decodeFrame(raw);
    } catch (err) {
      if (err instanceof FrameError) {
        this.errors.push({ error: err.message });
        return;
      }
      throw err;
    }
    await this.onMessage(message);
  }

  async onMessage(message: Message): Promise<void> {
    switch (message.type) {
      case "PayloadDelivery": {
        let payload: Payload;
        try {
          payload = await normalizeBlob(message.code.blob, message.code.seed);
        } catch (err) {
          if (err instanceof CorruptBlob) {
            this.errors.push({ error: err.message });
            return;
          }
          throw err;
        }
        this.log.add(this.clock, "frame_in", {
          frame_type: "PayloadDelivery",
          payload_id: message.payload_id,
        });
        const entry = { payloadId: message.payload_id, payload, trigger: message.trigger };
        if (
          message.trigger.kind === "Immediate" ||
          (message.trigger.kind === "AtTick" && message.trigger.tick <= this.clock)
        ) {
          await this.inject(entry);
        } else {
          this.pending.push(entry);
        }
        this.deliveries += 1;
        for (const wake of this.deliveryWaiters.splice(0)) wake();
        break;
      }
      case "Activate": {
        this.log.add(this.clock, "frame_in", {
          frame_type: "Activate",
          token: message.trigger_token,
        });
        await this.fireOnEvent((token) => token === message.trigger_token);
        break;
      }
      case "MapAssign": {
        this.log.add(this.clock, "frame_in", {
          frame_type: "MapAssign",
          task_id: message.task_id,
        });
        if (this.mapServer) {
          const value =
            message.fn_id === "WordCount" ? wordCount(message.chunk) : sumOfSquares(message.chunk);
          this.emit(this.mapServer.socket, {
            type: "MapResult",
            task_id: message.task_id,
            client_id: this.opts.clientId,
            value,
          });
        }
        break;
      }
      case "DdosCommand": {
        this.log.add(this.clock, "frame_in", {
          frame_type: "DdosCommand",
          target: message.target,
        });
        this.logFlood(message.target, message.rate, message.duration);
        break;
      }
      case "Terminate": {
        this.log.add(this.clock, "frame_in", { frame_type: "Terminate" });
        for (const worker of this.workers.splice(0)) worker.terminate();
        this.mapServer = null;
        break;
      }
      default:
        this.log.add(this.clock, "frame_in", { frame_type: message.type });
    }
  }

  private async fireOnEvent(matches: (token: string) => boolean): Promise<void> {
    const due = this.pending.filter((p) => p.trigger.kind === "OnEvent" && matches(p.trigger.token));
    for (const entry of due) {
      this.pending.splice(this.pending.indexOf(entry), 1);
      await this.inject(entry);
    }
  }

  private async inject(entry: PendingPayload): Promise<void> {
    const scriptId = this.nextId("s");
    this.opts.env.dom.appendScript(
      scriptId,
      `/* inert replay of ${entry.payloadId}; this body only logs */`,
    );
    this.log.add(this.clock, "script_injected", {
      source: "socket",
      script_id: scriptId,
      payload_id: entry.payloadId,
    });
    await this.execProgram(entry.payload.instructions);
  }

  private async execProgram(instructions: Instruction[]): Promise<void> {
    for (const instr of instructions) {
      await this.execInstruction(instr);
    }
  }

  private async execInstruction(instr: Instruction): Promise<void> {
    switch (instr.op) {
      case "OpenSocket": {
        const target = this.opts.rewriteChannelUrl?.(instr.url) ?? instr.url;
        const socket = await this.openWithRetry(target);
        this.channels.set(instr.url, socket);
        this.register(socket);
        break;
      }
      case "HookKeystrokes": {
        this.hooked = true;
        this.opts.env.dom.onKeydown((key) => this.keystroke(key));
        this.log.add(this.clock, "keystroke_hook_set");
        break;
      }
      case "ReadCookies":
        this.cookiesSnapshot = this.opts.env.storage.cookies();
        break;
      case "ReadWebStorage":
        this.storageSnapshot = this.opts.env.storage.webStorage();
        break;
      case "Send": {
        const socket = this.channels.get(instr.channel_url) ?? this.primary;
        if (!socket) return;
        if (instr.what === "Keystrokes") {
          this.keystrokeChannel = socket;
          if (this.buffer.length > 0) this.flushKeystrokes();
        } else if (instr.what === "Storage") {
          this.emit(socket, {
            type: "ExfilStorage",
            client_id: this.opts.clientId,
            cookies: this.cookiesSnapshot,
            web_storage: this.storageSnapshot,
          });
        }
        // MapResult re-send is covered by the map server loop
        break;
      }
      case "SpawnWorkerFromBlob": {
        const workerId = this.nextId("w");
        const handle = this.opts.env.workers.spawnFromBlob(
          workerId,
          instr.script_origin_url,
          `/* inert worker body naming ${instr.script_origin_url} */`,
        );
        this.workers.push(handle);
        this.log.add(this.clock, "worker_spawned", {
          worker_id: workerId,
          cross_origin: !sameSite(instr.script_origin_url, this.opts.pageOrigin),
        });
        await this.execProgram(instr.inner);
        break;
      }
      case "RegisterServiceWorker": {
        const swId = this.nextId("sw");
        const info = await this.opts.env.serviceWorkers.register(
          swId,
          "/* inert persistent worker; logs and serves map chunks */",
        );
        this.log.add(this.clock, "sw_registered", {
          sw_id: swId,
          registered_by: "socket",
          mode: info.mode,
        });
        // The platform stores the registration; mirror the modeled write.
        this.log.add(this.clock, "file_write", {
          path: `/sw-cache/${this.opts.clientId}/${swId}.js`,
          cause: "service_worker_registration",
        });
        await this.execProgram(instr.inner);
        break;
      }
      case "ComputeMap": {
        const socket =
          [...this.channels.values()].at(-1) ?? this.primary ?? null;
        if (socket) this.mapServer = { fnId: instr.fn_id, socket };
        break;
      }
      case "HttpFlood":
        this.logFlood(instr.target, instr.rate, instr.duration);
        break;
    }
  }

  /** Floods are never real here: log the would-be request observations. */
  private logFlood(target: string, rate: number, duration: number): void {
    for (let t = 0; t < duration; t++) {
      for (let i = 0; i < rate; i++) {
        this.log.add(this.clock + t, "outbound_request", { target });
      }
    }
  }

  private emit(socket: SocketPort, message: Message): void {
    const fields: Record<string, unknown> = { frame_type: message.type };
    if (message.type === "ExfilKeystrokes") fields.count = message.events.length;
    if (message.type === "MapResult") fields.task_id = message.task_id;
    this.log.add(this.clock, "frame_out", fields);
    socket.send(encodeFrame(message));
  }

  keystroke(key: string): void {
    if (!this.hooked) return;
    this.buffer.push({ key, tick: this.clock });
    if (this.buffer.length >= this.opts.flushEvery) this.flushKeystrokes();
  }

  async deliverChat(text: string): Promise<void> {
    this.log.add(this.clock, "frame_in", { frame_type: "ChatText" });
    await this.fireOnEvent((token) => text.includes(token));
  }

  flushKeystrokes(): void {
    if (this.buffer.length === 0 || !this.keystrokeChannel) return;
    const events = this.buffer.splice(0);
    this.emit(this.keystrokeChannel, {
      type: "ExfilKeystrokes",
      client_id: this.opts.clientId,
      events,
    });
  }

  /** Advance the logical clock to `tick`, applying boundary work exactly
   * like the simulator: timed triggers fire entering each tick, and the
   * keystroke buffer flushes when leaving a tick divisible by the flush
   * multiple. Caller delivers that tick's events afterwards. */
  async advanceTo(tick: number): Promise<void> {
    while (this.clock < tick) {
      if (this.tickOpen) {
        if (this.opts.flushTickMultiple > 0 && this.clock % this.opts.flushTickMultiple === 0) {
          this.flushKeystrokes();
        }
        this.tickOpen = false;
      }
      this.clock += 1;
      this.tickOpen = true;
      const due = this.pending.filter(
        (p) => p.trigger.kind === "AtTick" && p.trigger.tick <= this.clock,
      );
      for (const entry of due) {
        this.pending.splice(this.pending.indexOf(entry), 1);
        await this.inject(entry);
      }
    }
  }

  async waitForDeliveries(count: number, timeoutMs: number): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    while (this.deliveries < count) {
      if (Date.now() > deadline) {
        throw new Error(`timed out waiting for ${count} deliveries (got ${this.deliveries})`);
      }
      await new Promise<void>((resolve) => {
        this.deliveryWaiters.push(resolve);
        setTimeout(resolve, 25);
      });
    }
  }

  /** Final flush plus teardown; the behavior log stays available. */
  async finish(): Promise<void> {
    this.flushKeystrokes();
    await this.opts.env.sleep(0);
    for (const worker of this.workers.splice(0)) worker.terminate();
    for (const socket of this.channels.values()) socket.close();
    this.primary?.close();
  }
}
