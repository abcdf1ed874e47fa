#!/usr/bin/env node
/**
 * Stdio host for the bridge line protocol.
 *
 * Serves one saved classifier: every stdin line is a JSON request, every
 * stdout line the matching JSON reply. Supported ops are handshake, predict,
 * input_gradient, layer_grads and shutdown. Malformed input yields a
 * structured error reply, never a crash; the process exits on shutdown or
 * when stdin closes.
 */

import { createInterface } from "node:readline";
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { z } from "zod";

import { errorCode, errorMessage, HostError } from "./errors.js";
import { loadMicroCnn, type MicroCnn } from "./microcnn.js";
import { decodeTensor, encodeTensor, type Tensor } from "./tensor.js";

export const PROTOCOL_VERSION = "SBBRIDGE/1";
export const CAPABILITIES = ["PREDICT", "INPUT_GRAD", "LAYER_INTROSPECT"] as const;

const wireTensorSchema = z.object({
  shape: z.array(z.number().int().nonnegative()),
  data: z.string(),
});

const predictSchema = z.object({ tensor: wireTensorSchema }).passthrough();

const gradientSchema = z
  .object({
    tensor: wireTensorSchema,
    class_index: z.number().int(),
    post_softmax: z.boolean().optional().default(false),
  })
  .passthrough();

const layerGradsSchema = z
  .object({
    tensor: wireTensorSchema,
    class_index: z.number().int(),
    layer_name: z.string(),
  })
  .passthrough();

function parseWith<T>(schema: z.ZodType<T>, msg: unknown): T {
  const result = schema.safeParse(msg);
  if (!result.success) {
    throw new HostError("PROTOCOL", result.error.issues[0]?.message ?? "bad request");
  }
  return result.data;
}

function clippedImage(wire: z.infer<typeof wireTensorSchema>): Tensor {
  const t = decodeTensor(wire);
  for (let i = 0; i < t.data.length; i += 1) {
    t.data[i] = Math.min(1, Math.max(0, t.data[i]));
  }
  return t;
}

export function handleMessage(
  model: MicroCnn,
  msg: Record<string, unknown>,
): Record<string, unknown> {
  switch (msg.op) {
    case "handshake":
      return {
        version: PROTOCOL_VERSION,
        num_classes: model.numClasses,
        input_shape: [...model.inputShape],
        capabilities: [...CAPABILITIES],
        layer_names: model.layerNames,
        target_layer: model.targetLayer,
        model_id: model.modelId,
      };
    case "predict": {
      const req = parseWith(predictSchema, msg);
      const probs = model.predict(clippedImage(req.tensor));
      return { tensor: encodeTensor({ shape: [model.numClasses], data: probs }) };
    }
    case "input_gradient": {
      const req = parseWith(gradientSchema, msg);
      const grad = model.inputGradient(
        clippedImage(req.tensor),
        req.class_index,
        req.post_softmax,
      );
      return { tensor: encodeTensor(grad) };
    }
    case "layer_grads": {
      const req = parseWith(layerGradsSchema, msg);
      const { activations, gradients } = model.layerActivationsAndGradients(
        clippedImage(req.tensor),
        req.class_index,
        req.layer_name,
      );
      return { activations: encodeTensor(activations), gradients: encodeTensor(gradients) };
    }
    default:
      throw new HostError("PROTOCOL", `unknown op ${JSON.stringify(msg.op)}`);
  }
}

/** Answer protocol requests line by line until shutdown or EOF. */
export function serve(
  model: MicroCnn,
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
): Promise<void> {
  return new Promise((resolve) => {
    const rl = createInterface({ input, terminal: false });
    rl.on("line", (line) => {
      if (!line.trim()) return;
      let msgId: unknown = null;
      let reply: Record<string, unknown>;
      let shuttingDown = false;
      try {
        const raw: unknown = JSON.parse(line);
        if (raw !== null && typeof raw === "object" && !Array.isArray(raw)) {
          msgId = (raw as Record<string, unknown>).id ?? null;
        }
        const msg = parseWith(
          z.object({ op: z.string() }).passthrough(),
          raw,
        ) as Record<string, unknown>;
        if (msg.op === "shutdown") {
          reply = { id: msgId, ok: true };
          shuttingDown = true;
        } else {
          reply = { id: msgId, ok: true, ...handleMessage(model, msg) };
        }
      } catch (err) {
        reply = {
          id: msgId,
          ok: false,
          error: { code: errorCode(err), message: errorMessage(err) },
        };
      }
      if (shuttingDown) {
        rl.close();
        output.write(JSON.stringify(reply) + "\n", () => resolve());
      } else {
        output.write(JSON.stringify(reply) + "\n");
      }
    });
    rl.on("close", () => resolve());
  });
}

export async function main(argv: string[]): Promise<number> {
  let modelPath: string | undefined;
  try {
    const { values } = parseArgs({ args: argv, options: { model: { type: "string" } } });
    modelPath = values.model;
  } catch (err) {
    process.stderr.write(`${errorMessage(err)}\n`);
    return 2;
  }
  if (!modelPath) {
    process.stderr.write("usage: server --model <path>\n");
    return 2;
  }
  let model: MicroCnn;
  try {
    model = loadMicroCnn(modelPath);
  } catch (err) {
    process.stderr.write(`${errorMessage(err)}\n`);
    return 1;
  }
  // a vanished client must not crash the host mid-reply
  process.stdout.on("error", () => process.exit(0));
  await serve(model, process.stdin, process.stdout);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    (code) => process.exit(code),
    (err) => {
      process.stderr.write(`${errorMessage(err)}\n`);
      process.exit(1);
    },
  );
}
