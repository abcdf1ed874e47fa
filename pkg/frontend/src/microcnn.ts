/**
 * Inference port of the micro CNN: conv/relu/pool stages, a flatten, dense
 * layers with relu between them and a softmax head. Besides the forward pass
 * it implements the backward passes needed for input gradients and for layer
 * introspection, numerically matching the reference trainer. Weights come
 * from a saved container; this port never trains.
 */

import { HostError } from "./errors.js";
import { readModelFile, type ModelHeader } from "./sbmc.js";
import { elementCount, type Tensor } from "./tensor.js";

interface ConvLayer {
  kind: "conv";
  name: string;
  inChannels: number;
  outChannels: number;
  kernel: number;
  pad: number;
  weight: Float64Array; // [out, in, k, k]
  bias: Float64Array; // [out]
}

interface ReluLayer {
  kind: "relu";
  name: string;
}

interface PoolLayer {
  kind: "pool";
  name: string;
  size: number;
}

interface FlattenLayer {
  kind: "flatten";
  name: string;
}

interface DenseLayer {
  kind: "dense";
  name: string;
  inDim: number;
  outDim: number;
  weight: Float64Array; // [out, in]
  bias: Float64Array; // [out]
}

type Layer = ConvLayer | ReluLayer | PoolLayer | FlattenLayer | DenseLayer;

export function softmax(logits: Float64Array): Float64Array {
  let top = -Infinity;
  for (const v of logits) top = Math.max(top, v);
  const out = new Float64Array(logits.length);
  let total = 0;
  for (let i = 0; i < logits.length; i += 1) {
    out[i] = Math.exp(logits[i] - top);
    total += out[i];
  }
  for (let i = 0; i < out.length; i += 1) out[i] /= total;
  return out;
}

function takeWeight(
  weights: Map<string, Tensor>,
  key: string,
  shape: number[],
): Float64Array {
  const t = weights.get(key);
  if (!t) {
    throw new HostError("IO_FORMAT", `missing weight ${key}`);
  }
  if (t.shape.length !== shape.length || t.shape.some((s, i) => s !== shape[i])) {
    throw new HostError(
      "IO_FORMAT",
      `weight ${key}: shape [${t.shape}] != expected [${shape}]`,
    );
  }
  return t.data;
}

// -- per-layer forward / backward kernels -----------------------------------
// All tensors are single images in C order; no batch axis.

function convForward(layer: ConvLayer, x: Tensor): Tensor {
  const [cin, h, w] = x.shape;
  const { outChannels: cout, kernel: k, pad, weight, bias } = layer;
  const oh = h + 2 * pad - k + 1;
  const ow = w + 2 * pad - k + 1;
  const out = new Float64Array(cout * oh * ow);
  for (let co = 0; co < cout; co += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        let acc = bias[co];
        for (let ci = 0; ci < cin; ci += 1) {
          for (let ky = 0; ky < k; ky += 1) {
            const iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (let kx = 0; kx < k; kx += 1) {
              const ix = ox + kx - pad;
              if (ix < 0 || ix >= w) continue;
              acc += x.data[(ci * h + iy) * w + ix] * weight[((co * cin + ci) * k + ky) * k + kx];
            }
          }
        }
        out[(co * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return { shape: [cout, oh, ow], data: out };
}

function convBackward(layer: ConvLayer, gradOut: Tensor, input: Tensor): Tensor {
  const [cin, h, w] = input.shape;
  const [cout, oh, ow] = gradOut.shape;
  const { kernel: k, pad, weight } = layer;
  const dx = new Float64Array(cin * h * w);
  for (let co = 0; co < cout; co += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        const g = gradOut.data[(co * oh + oy) * ow + ox];
        if (g === 0) continue;
        for (let ci = 0; ci < cin; ci += 1) {
          for (let ky = 0; ky < k; ky += 1) {
            const iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (let kx = 0; kx < k; kx += 1) {
              const ix = ox + kx - pad;
              if (ix < 0 || ix >= w) continue;
              dx[(ci * h + iy) * w + ix] += g * weight[((co * cin + ci) * k + ky) * k + kx];
            }
          }
        }
      }
    }
  }
  return { shape: [cin, h, w], data: dx };
}

function reluForward(x: Tensor): Tensor {
  const out = new Float64Array(x.data.length);
  for (let i = 0; i < out.length; i += 1) out[i] = x.data[i] > 0 ? x.data[i] : 0;
  return { shape: [...x.shape], data: out };
}

function reluBackward(gradOut: Tensor, input: Tensor): Tensor {
  const dx = new Float64Array(gradOut.data.length);
  for (let i = 0; i < dx.length; i += 1) dx[i] = input.data[i] > 0 ? gradOut.data[i] : 0;
  return { shape: [...gradOut.shape], data: dx };
}

function poolForward(layer: PoolLayer, x: Tensor): Tensor {
  const [c, h, w] = x.shape;
  const s = layer.size;
  if (h % s !== 0 || w % s !== 0) {
    throw new HostError("SHAPE_MISMATCH", `pool input ${h}x${w} not divisible by ${s}`);
  }
  const oh = h / s;
  const ow = w / s;
  const out = new Float64Array(c * oh * ow);
  for (let ch = 0; ch < c; ch += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        let best = -Infinity;
        for (let dy = 0; dy < s; dy += 1) {
          for (let dx = 0; dx < s; dx += 1) {
            const v = x.data[(ch * h + oy * s + dy) * w + ox * s + dx];
            if (v > best) best = v;
          }
        }
        out[(ch * oh + oy) * ow + ox] = best;
      }
    }
  }
  return { shape: [c, oh, ow], data: out };
}

function poolBackward(layer: PoolLayer, gradOut: Tensor, input: Tensor): Tensor {
  const [c, h, w] = input.shape;
  const s = layer.size;
  const oh = h / s;
  const ow = w / s;
  const dx = new Float64Array(c * h * w);
  for (let ch = 0; ch < c; ch += 1) {
    for (let oy = 0; oy < oh; oy += 1) {
      for (let ox = 0; ox < ow; ox += 1) {
        // winner is the first maximum in (dy, dx) scan order
        let best = -Infinity;
        let winner = 0;
        for (let dy = 0; dy < s; dy += 1) {
          for (let dx2 = 0; dx2 < s; dx2 += 1) {
            const idx = (ch * h + oy * s + dy) * w + ox * s + dx2;
            if (input.data[idx] > best) {
              best = input.data[idx];
              winner = idx;
            }
          }
        }
        dx[winner] += gradOut.data[(ch * oh + oy) * ow + ox];
      }
    }
  }
  return { shape: [c, h, w], data: dx };
}

function denseForward(layer: DenseLayer, x: Tensor): Tensor {
  const { inDim, outDim, weight, bias } = layer;
  const out = new Float64Array(outDim);
  for (let o = 0; o < outDim; o += 1) {
    let acc = bias[o];
    for (let i = 0; i < inDim; i += 1) acc += weight[o * inDim + i] * x.data[i];
    out[o] = acc;
  }
  return { shape: [outDim], data: out };
}

function denseBackward(layer: DenseLayer, gradOut: Tensor): Tensor {
  const { inDim, outDim, weight } = layer;
  const dx = new Float64Array(inDim);
  for (let o = 0; o < outDim; o += 1) {
    const g = gradOut.data[o];
    if (g === 0) continue;
    for (let i = 0; i < inDim; i += 1) dx[i] += g * weight[o * inDim + i];
  }
  return { shape: [inDim], data: dx };
}

function layerForward(layer: Layer, x: Tensor): Tensor {
  switch (layer.kind) {
    case "conv":
      return convForward(layer, x);
    case "relu":
      return reluForward(x);
    case "pool":
      return poolForward(layer, x);
    case "flatten":
      return { shape: [elementCount(x.shape)], data: x.data };
    case "dense":
      return denseForward(layer, x);
  }
}

function layerBackward(layer: Layer, gradOut: Tensor, input: Tensor): Tensor {
  switch (layer.kind) {
    case "conv":
      return convBackward(layer, gradOut, input);
    case "relu":
      return reluBackward(gradOut, input);
    case "pool":
      return poolBackward(layer, gradOut, input);
    case "flatten":
      return { shape: [...input.shape], data: gradOut.data };
    case "dense":
      return denseBackward(layer, gradOut);
  }
}

// -- the model ---------------------------------------------------------------

export class MicroCnn {
  readonly layers: Layer[] = [];
  readonly numClasses: number;
  readonly inputShape: [number, number, number];
  readonly targetLayer: string;
  readonly modelId: string;
  private readonly byName = new Map<string, number>();

  constructor(header: ModelHeader, weights: Map<string, Tensor>) {
    const cfg = header.config;
    let inCh = cfg.in_channels;
    let size = cfg.image_size;
    let reluCount = 0;
    cfg.conv_channels.forEach((outCh, i) => {
      const name = `conv${i + 1}`;
      this.layers.push({
        kind: "conv",
        name,
        inChannels: inCh,
        outChannels: outCh,
        kernel: 3,
        pad: 1,
        weight: takeWeight(weights, `${name}.weight`, [outCh, inCh, 3, 3]),
        bias: takeWeight(weights, `${name}.bias`, [outCh]),
      });
      reluCount += 1;
      this.layers.push({ kind: "relu", name: `relu${reluCount}` });
      this.layers.push({ kind: "pool", name: `pool${i + 1}`, size: 2 });
      inCh = outCh;
      size = Math.floor(size / 2);
    });
    this.layers.push({ kind: "flatten", name: "flatten" });
    let inDim = inCh * size * size;
    cfg.dense_units.forEach((units, j) => {
      const name = `dense${j + 1}`;
      this.layers.push({
        kind: "dense",
        name,
        inDim,
        outDim: units,
        weight: takeWeight(weights, `${name}.weight`, [units, inDim]),
        bias: takeWeight(weights, `${name}.bias`, [units]),
      });
      reluCount += 1;
      this.layers.push({ kind: "relu", name: `relu${reluCount}` });
      inDim = units;
    });
    const head = `dense${cfg.dense_units.length + 1}`;
    this.layers.push({
      kind: "dense",
      name: head,
      inDim,
      outDim: cfg.num_classes,
      weight: takeWeight(weights, `${head}.weight`, [cfg.num_classes, inDim]),
      bias: takeWeight(weights, `${head}.bias`, [cfg.num_classes]),
    });

    this.layers.forEach((layer, i) => this.byName.set(layer.name, i));
    this.numClasses = cfg.num_classes;
    this.inputShape = [cfg.in_channels, cfg.image_size, cfg.image_size];
    this.targetLayer = header.target_layer;
    this.modelId = header.model_id;
  }

  get layerNames(): string[] {
    return this.layers.map((layer) => layer.name);
  }

  checkImage(x: Tensor): void {
    const want = this.inputShape;
    if (x.shape.length !== 3 || x.shape.some((s, i) => s !== want[i])) {
      throw new HostError(
        "SHAPE_MISMATCH",
        `image shape [${x.shape}] != model input [${want}]`,
      );
    }
  }

  private checkClass(classIndex: number): void {
    if (!Number.isInteger(classIndex) || classIndex < 0 || classIndex >= this.numClasses) {
      throw new HostError(
        "CLASS_OUT_OF_RANGE",
        `class ${classIndex} outside [0, ${this.numClasses})`,
      );
    }
  }

  /** Activations per stage: acts[0] is the input, acts[i + 1] layer i's output. */
  private forwardCollect(x: Tensor): Tensor[] {
    const acts: Tensor[] = [x];
    for (const layer of this.layers) {
      x = layerForward(layer, x);
      acts.push(x);
    }
    return acts;
  }

  /** Gradient of the seeded output combination w.r.t. acts[downTo]. */
  private backward(seed: Float64Array, acts: Tensor[], downTo: number): Tensor {
    let grad: Tensor = { shape: [this.numClasses], data: seed };
    for (let i = this.layers.length - 1; i >= downTo; i -= 1) {
      grad = layerBackward(this.layers[i], grad, acts[i]);
    }
    return grad;
  }

  logits(x: Tensor): Float64Array {
    this.checkImage(x);
    const acts = this.forwardCollect(x);
    return acts[acts.length - 1].data;
  }

  predict(x: Tensor): Float64Array {
    return softmax(this.logits(x));
  }

  /**
   * Gradient of the class score w.r.t. input pixels. The score is the
   * pre-softmax logit by default; ``postSoftmax`` differentiates the softmax
   * probability instead.
   */
  inputGradient(x: Tensor, classIndex: number, postSoftmax = false): Tensor {
    this.checkImage(x);
    this.checkClass(classIndex);
    const acts = this.forwardCollect(x);
    const seed = new Float64Array(this.numClasses);
    if (postSoftmax) {
      const p = softmax(acts[acts.length - 1].data);
      for (let i = 0; i < this.numClasses; i += 1) {
        seed[i] = p[classIndex] * ((i === classIndex ? 1 : 0) - p[i]);
      }
    } else {
      seed[classIndex] = 1;
    }
    return this.backward(seed, acts, 0);
  }

  /** Output activations of the named layer and d(logit_c)/d(those). */
  layerActivationsAndGradients(
    x: Tensor,
    classIndex: number,
    layerName: string,
  ): { activations: Tensor; gradients: Tensor } {
    this.checkImage(x);
    this.checkClass(classIndex);
    const idx = this.byName.get(layerName);
    if (idx === undefined) {
      throw new HostError("UNKNOWN_LAYER", `no layer named ${JSON.stringify(layerName)}`);
    }
    const acts = this.forwardCollect(x);
    const seed = new Float64Array(this.numClasses);
    seed[classIndex] = 1;
    return { activations: acts[idx + 1], gradients: this.backward(seed, acts, idx + 1) };
  }
}

export function loadMicroCnn(path: string): MicroCnn {
  const { header, weights } = readModelFile(path);
  return new MicroCnn(header, weights);
}
