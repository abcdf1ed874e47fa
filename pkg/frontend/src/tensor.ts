/**
 * Flat tensors and their wire encoding.
 *
 * On the wire a tensor is ``{shape, data}`` where ``data`` is the base64 of
 * the little-endian float32 payload in C order. Math happens in float64;
 * rounding to float32 is confined to this boundary.
 */

import { HostError } from "./errors.js";

export interface Tensor {
  shape: number[];
  data: Float64Array;
}

export interface WireTensor {
  shape: number[];
  data: string;
}

export function elementCount(shape: readonly number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function zeros(shape: number[]): Tensor {
  return { shape: [...shape], data: new Float64Array(elementCount(shape)) };
}

export function encodeTensor(t: Tensor): WireTensor {
  const buf = Buffer.alloc(4 * t.data.length);
  for (let i = 0; i < t.data.length; i += 1) {
    buf.writeFloatLE(t.data[i], 4 * i);
  }
  return { shape: [...t.shape], data: buf.toString("base64") };
}

export function decodeTensor(wire: WireTensor): Tensor {
  for (const s of wire.shape) {
    if (!Number.isInteger(s) || s < 0) {
      throw new HostError("PROTOCOL", `bad tensor shape entry ${s}`);
    }
  }
  const count = elementCount(wire.shape);
  const raw = Buffer.from(wire.data, "base64");
  if (raw.length !== 4 * count) {
    throw new HostError(
      "PROTOCOL",
      `tensor payload is ${raw.length} bytes, shape needs ${4 * count}`,
    );
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i += 1) {
    data[i] = raw.readFloatLE(4 * i);
  }
  return { shape: [...wire.shape], data };
}
