/**
 * Loader for the saved-classifier container.
 *
 * Layout: an 8 byte magic, a little-endian uint32 header length, a JSON
 * header describing the architecture and the weight table, then the raw
 * float32 weight blobs at the offsets the table records.
 */

import { readFileSync } from "node:fs";

import { z } from "zod";

import { HostError } from "./errors.js";
import { elementCount, type Tensor } from "./tensor.js";

export const MODEL_MAGIC = "SBMC0001";

const configSchema = z.object({
  in_channels: z.number().int().positive(),
  image_size: z.number().int().positive(),
  conv_channels: z.array(z.number().int().positive()).nonempty(),
  dense_units: z.array(z.number().int().positive()),
  num_classes: z.number().int().positive(),
});

const headerSchema = z.object({
  format: z.literal(MODEL_MAGIC),
  config: configSchema,
  seed: z.number().int(),
  target_layer: z.string(),
  model_id: z.string(),
  weights: z.array(
    z.object({
      name: z.string(),
      shape: z.array(z.number().int().nonnegative()),
      offset: z.number().int().nonnegative(),
      size: z.number().int().nonnegative(),
    }),
  ),
});

export type ModelConfig = z.infer<typeof configSchema>;
export type ModelHeader = z.infer<typeof headerSchema>;

export interface ModelFile {
  header: ModelHeader;
  weights: Map<string, Tensor>;
}

export function readModelFile(path: string): ModelFile {
  let blob: Buffer;
  try {
    blob = readFileSync(path);
  } catch (err) {
    throw new HostError("IO_FORMAT", `cannot read ${path}: ${err}`);
  }
  if (blob.length < 12 || blob.toString("latin1", 0, 8) !== MODEL_MAGIC) {
    throw new HostError("IO_FORMAT", `bad magic in ${path}`);
  }
  const headerLength = blob.readUInt32LE(8);
  if (12 + headerLength > blob.length) {
    throw new HostError("IO_FORMAT", `truncated header in ${path}`);
  }
  let header: ModelHeader;
  try {
    header = headerSchema.parse(JSON.parse(blob.toString("utf8", 12, 12 + headerLength)));
  } catch (err) {
    throw new HostError("IO_FORMAT", `bad header in ${path}: ${err}`);
  }
  const body = blob.subarray(12 + headerLength);
  const weights = new Map<string, Tensor>();
  for (const entry of header.weights) {
    const count = elementCount(entry.shape);
    if (entry.size !== 4 * count || entry.offset + entry.size > body.length) {
      throw new HostError("IO_FORMAT", `weight ${entry.name}: bad extent`);
    }
    const data = new Float64Array(count);
    for (let i = 0; i < count; i += 1) {
      data[i] = body.readFloatLE(entry.offset + 4 * i);
    }
    weights.set(entry.name, { shape: [...entry.shape], data });
  }
  return { header, weights };
}
