/** Shared fixtures and a lock-step line client for driving the host. */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { readFileSync } from "node:fs";
import path from "node:path";
import { createInterface, type Interface } from "node:readline";
import { fileURLToPath } from "node:url";

import type { WireTensor } from "../src/tensor.js";

const here = path.dirname(fileURLToPath(import.meta.url));

export const fixturesDir = path.join(here, "fixtures");
export const modelPath = path.join(fixturesDir, "model.sbmc");
export const serverScript = path.join(here, "..", "dist", "server.js");

export interface GoldenCase {
  image: WireTensor;
  class_index: number;
  other_class: number;
  probs: WireTensor;
  grad_presoftmax: WireTensor;
  grad_postsoftmax: WireTensor;
  grad_other_class: WireTensor;
}

export interface GoldenLayer {
  name: string;
  class_index: number;
  activations: WireTensor;
  gradients: WireTensor;
}

export interface Golden {
  model: {
    model_id: string;
    target_layer: string;
    layer_names: string[];
    num_classes: number;
    input_shape: number[];
  };
  cases: GoldenCase[];
  layers: GoldenLayer[];
}

export function loadGolden(): Golden {
  return JSON.parse(readFileSync(path.join(fixturesDir, "golden.json"), "utf8")) as Golden;
}

export function maxAbsDiff(a: Float64Array, b: Float64Array): number {
  if (a.length !== b.length) return Infinity;
  let worst = 0;
  for (let i = 0; i < a.length; i += 1) worst = Math.max(worst, Math.abs(a[i] - b[i]));
  return worst;
}

/** One child process, one reply line per request line. */
export class LineClient {
  private readonly proc: ChildProcessWithoutNullStreams;
  private readonly rl: Interface;
  private readonly lines: string[] = [];
  private readonly waiters: Array<(line: string) => void> = [];
  private nextId = 0;

  constructor(command: string[]) {
    this.proc = spawn(command[0], command.slice(1), { stdio: ["pipe", "pipe", "pipe"] });
    this.rl = createInterface({ input: this.proc.stdout, terminal: false });
    this.rl.on("line", (line) => {
      const waiter = this.waiters.shift();
      if (waiter) waiter(line);
      else this.lines.push(line);
    });
  }

  sendRaw(line: string): void {
    this.proc.stdin.write(line + "\n");
  }

  nextLine(timeoutMs = 15_000): Promise<string> {
    const buffered = this.lines.shift();
    if (buffered !== undefined) return Promise.resolve(buffered);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        const idx = this.waiters.indexOf(settle);
        if (idx >= 0) this.waiters.splice(idx, 1);
        reject(new Error(`no reply within ${timeoutMs}ms`));
      }, timeoutMs);
      const settle = (line: string) => {
        clearTimeout(timer);
        resolve(line);
      };
      this.waiters.push(settle);
    });
  }

  async request(msg: Record<string, unknown>): Promise<Record<string, unknown>> {
    this.nextId += 1;
    const id = this.nextId;
    this.sendRaw(JSON.stringify({ id, ...msg }));
    const reply = JSON.parse(await this.nextLine()) as Record<string, unknown>;
    if (reply.id !== id) throw new Error(`reply id ${reply.id} != request id ${id}`);
    return reply;
  }

  waitExit(timeoutMs = 10_000): Promise<number | null> {
    if (this.proc.exitCode !== null) return Promise.resolve(this.proc.exitCode);
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error("process did not exit")), timeoutMs);
      this.proc.on("exit", (code) => {
        clearTimeout(timer);
        resolve(code);
      });
    });
  }

  kill(): void {
    if (this.proc.exitCode === null) this.proc.kill("SIGKILL");
  }
}
