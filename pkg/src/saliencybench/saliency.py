"""The seven explainers, each mapping (model, image, class) to an h x w map.

Input-space methods (gradient, guided, integrated gradients) reduce channels
by max absolute value. Layer-space methods (grad-cam style weighting,
contrastive excitation) are computed at ``model.target_layer`` and bilinearly
upsampled to the input size. Perturbation methods (occlusion, randomized
masking) only need ``predict``; they score with the model's predict output,
which is the softmax probability for the reference network.

Maps persist under magic ``SBSM0001``: a JSON header then raw little-endian
float32 scores, plus an optional PGM export of the min-max normalized map.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IOFormatError, ShapeMismatchError
from .imageio import write_pgm
from .model import Capability, ModelHandle, check_class_index, require_capability
from .tensors import Image, as_f64, bilinear_resize, minmax_normalize, require_finite

MAP_MAGIC = b"SBSM0001"


@dataclass(frozen=True)
class SaliencyMap:
    scores: np.ndarray
    method: str
    class_index: int
    normalization: str = "raw"
    model_id: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = as_f64(self.scores)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"saliency scores must be [h, w], got {arr.shape}")
        require_finite(arr, "saliency scores")
        object.__setattr__(self, "scores", arr)

    @property
    def shape(self):
        return self.scores.shape

    def minmax(self) -> "SaliencyMap":
        if self.normalization == "minmax":
            return self
        return SaliencyMap(
            scores=minmax_normalize(self.scores),
            method=self.method,
            class_index=self.class_index,
            normalization="minmax",
            model_id=self.model_id,
            provenance=dict(self.provenance),
        )


@dataclass(frozen=True)
class MaskSpec:
    """Randomized-masking parameters: s x s Bernoulli(p) grids, N masks.

    ``shift`` and ``interpolation`` control upsampling; the defaults (random
    shift, bilinear) give smooth masks, while (no shift, nearest) gives exact
    block masks that a brute-force enumeration can reproduce.
    """

    grid_size: int = 7
    keep_probability: float = 0.5
    mask_count: int = 4000
    seed: int = 0
    shift: bool = True
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if not 0.0 < self.keep_probability < 1.0:
            raise ValueError("keep_probability must be in (0, 1)")
        if self.mask_count < 1:
            raise ValueError("mask_count must be >= 1")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ValueError("interpolation must be 'bilinear' or 'nearest'")


@dataclass(frozen=True)
class OcclusionSpec:
    patch_size: int
    stride: int | None = None  # defaults to half the patch
    baseline_value: float = 0.0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.stride is None:
            object.__setattr__(self, "stride", max(1, self.patch_size // 2))
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError("stride must be in [1, patch_size]")

    @staticmethod
    def default_for(image: Image) -> "OcclusionSpec":
        m = max(1, round(min(image.height, image.width) / 8))
        return OcclusionSpec(patch_size=m)


def channel_reduce(tensor: np.ndarray) -> np.ndarray:
    """[ch, h, w] -> [h, w] by max of absolute values across channels."""
    t = as_f64(tensor)
    if t.ndim != 3:
        raise ShapeMismatchError(f"expected [ch, h, w], got {t.shape}")
    return np.abs(t).max(axis=0)


def _predict_scores(model: ModelHandle, arrs: np.ndarray, class_index: int) -> np.ndarray:
    """Batch of predict()[c] values for [n, ch, h, w]; one forward per image
    unless the model exposes a batch path."""
    if hasattr(model, "logits_batch"):
        logits = model.logits_batch(arrs)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=1, keepdims=True))[:, class_index]
    return np.array([model.predict(Image(np.clip(a, 0.0, 1.0)))[class_index] for a in arrs])


# ---------------------------------------------------------------------------
# gradient family

def gradient_saliency(model: ModelHandle, image: Image, class_index: int,
                      post_softmax: bool = False) -> SaliencyMap:
    """Plain input gradient of the class score (pre-softmax by default)."""
    require_capability(model, Capability.INPUT_GRAD)
    check_class_index(model, class_index)
    grad = model.input_gradient(image, class_index, post_softmax=post_softmax)
    return SaliencyMap(
        scores=channel_reduce(grad), method="gradient", class_index=class_index,
        model_id=model.model_id,
        provenance={"score_space": "probability" if post_softmax else "logit",
                    "channel_reduce": "max_abs"},
    )


def gbp_saliency(model: ModelHandle, image: Image, class_index: int) -> SaliencyMap:
    """Guided variant: negative flows are zeroed at every relu on the way down."""
    require_capability(model, Capability.GUIDED)
    check_class_index(model, class_index)
    grad = model.guided_backward(image, class_index)
    return SaliencyMap(
        scores=channel_reduce(grad), method="gbp", class_index=class_index,
        model_id=model.model_id,
        provenance={"score_space": "logit", "channel_reduce": "max_abs"},
    )


def intgrad_attributions(model: ModelHandle, image: Image, class_index: int,
                         baseline: Image | None = None, steps: int = 64) -> np.ndarray:
    """Per-channel path-integral attributions [ch, h, w].

    The straight-line integral is approximated with the midpoint rule, so the
    channel/pixel sum approaches f_c(image) - f_c(baseline) as steps grow.
    """
    require_capability(model, Capability.INPUT_GRAD)
    check_class_index(model, class_index)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = image.array
    base = np.zeros_like(x) if baseline is None else baseline.array
    if base.shape != x.shape:
        raise ShapeMismatchError("baseline shape differs from image")
    delta = x - base
    total = np.zeros_like(x)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        total += model.input_gradient(Image(np.clip(base + alpha * delta, 0.0, 1.0)), class_index)
    return delta * total / steps


def intgrad_saliency(model: ModelHandle, image: Image, class_index: int,
                     baseline: Image | None = None, steps: int = 64) -> SaliencyMap:
    attr = intgrad_attributions(model, image, class_index, baseline, steps)
    return SaliencyMap(
        scores=channel_reduce(attr), method="intgrad", class_index=class_index,
        model_id=model.model_id,
        provenance={"score_space": "logit", "channel_reduce": "max_abs",
                    "steps": steps, "rule": "midpoint"},
    )


def gradcam_saliency(model: ModelHandle, image: Image, class_index: int,
                     layer_name: str | None = None) -> SaliencyMap:
    """Activation maps weighted by their spatially averaged gradients, relu'd,
    bilinearly upsampled to input size."""
    require_capability(model, Capability.LAYER_INTROSPECT)
    check_class_index(model, class_index)
    layer_name = layer_name or model.target_layer
    acts, grads = model.layer_activations_and_gradients(image, class_index, layer_name)
    if acts.ndim != 3:
        raise ShapeMismatchError(f"layer {layer_name!r} output is not spatial")
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts, axes=1), 0.0)
    up = bilinear_resize(cam, image.height, image.width)
    return SaliencyMap(
        scores=up, method="gradcam", class_index=class_index, model_id=model.model_id,
        provenance={"score_space": "logit", "layer": layer_name, "upsample": "bilinear"},
    )


def cebp_saliency(model: ModelHandle, image: Image, class_index: int,
                  layer_name: str | None = None, contrastive: bool = True,
                  counters: dict | None = None) -> SaliencyMap:
    """Contrastive excitation signal at the target layer, upsampled."""
    require_capability(model, Capability.EXCITATION)
    check_class_index(model, class_index)
    layer_name = layer_name or model.target_layer
    signal = model.excitation_propagate(
        image, class_index, layer_name, contrastive=contrastive, counters=counters)
    if signal.ndim != 2:
        raise ShapeMismatchError(f"layer {layer_name!r} carries no spatial signal")
    up = bilinear_resize(signal, image.height, image.width)
    return SaliencyMap(
        scores=up, method="cebp", class_index=class_index, model_id=model.model_id,
        provenance={"score_space": "excitation", "layer": layer_name,
                    "contrastive": contrastive, "upsample": "bilinear"},
    )


# ---------------------------------------------------------------------------
# perturbation family

def occlusion_saliency(model: ModelHandle, image: Image, class_index: int,
                       spec: OcclusionSpec | None = None) -> SaliencyMap:
    """Score drop per occluding patch, spread over the patch and averaged.

    Each pixel receives the mean of (f_c(I) - f_c(I with patch k blanked))
    / patch_area over every patch k covering it. Patch starts step by
    ``stride`` and always include the far edge so coverage is total.
    """
    require_capability(model, Capability.PREDICT)
    check_class_index(model, class_index)
    spec = spec or OcclusionSpec.default_for(image)
    h, w = image.height, image.width
    m = spec.patch_size
    if m > min(h, w):
        raise ShapeMismatchError(f"patch {m} exceeds image {h}x{w}")

    def starts(extent):
        pos = list(range(0, extent - m + 1, spec.stride))
        if pos[-1] != extent - m:
            pos.append(extent - m)
        return pos

    x = image.array
    base_score = float(model.predict(image)[class_index])
    positions = [(i, j) for i in starts(h) for j in starts(w)]
    batch = np.repeat(x[None], len(positions), axis=0)
    for n, (i, j) in enumerate(positions):
        batch[n, :, i:i + m, j:j + m] = spec.baseline_value
    scores = _predict_scores(model, batch, class_index)

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for (i, j), s in zip(positions, scores):
        acc[i:i + m, j:j + m] += (base_score - s) / (m * m)
        cnt[i:i + m, j:j + m] += 1.0
    return SaliencyMap(
        scores=acc / cnt, method="occlusion", class_index=class_index,
        model_id=model.model_id,
        provenance={"score_space": "predict", "patch_size": m, "stride": spec.stride,
                    "baseline_value": spec.baseline_value,
                    "note": "difference averaged over covering patches, 1/(m*m) kept"},
    )


def generate_masks(spec: MaskSpec, h: int, w: int) -> np.ndarray:
    """All N masks [N, h, w] in [0, 1], deterministic given the mask settings."""
    if spec.grid_size > min(h, w):
        raise ShapeMismatchError(f"grid {spec.grid_size} exceeds image {h}x{w}")
    rng = np.random.default_rng(spec.seed)
    s = spec.grid_size
    grids = (rng.random((spec.mask_count, s, s)) < spec.keep_probability).astype(np.float64)
    cell_h = -(-h // s)
    cell_w = -(-w // s)
    if spec.shift:
        off = rng.integers(0, (cell_h, cell_w), size=(spec.mask_count, 2))
    else:
        off = np.zeros((spec.mask_count, 2), dtype=np.int64)
    up_h, up_w = (s + 1) * cell_h, (s + 1) * cell_w
    masks = np.empty((spec.mask_count, h, w))
    for i in range(spec.mask_count):
        if spec.interpolation == "bilinear":
            up = bilinear_resize(grids[i], up_h, up_w)
            oy, ox = off[i]
            masks[i] = up[oy:oy + h, ox:ox + w]
        else:
            up = np.repeat(np.repeat(grids[i], cell_h, axis=0), cell_w, axis=1)
            oy, ox = off[i]
            masks[i] = up[oy:oy + h, ox:ox + w]
    return masks


def rise_saliency(model: ModelHandle, image: Image, class_index: int,
                  spec: MaskSpec | None = None, normalized: bool = True) -> SaliencyMap:
    """Randomized-mask saliency: scores of masked inputs, combined maskwise.

    ``normalized`` divides each pixel by its total mask weight (the empirical
    realization of N * keep_probability), making the map the conditional
    expectation of the score given the pixel is kept; off it returns the raw
    weighted sum.
    """
    require_capability(model, Capability.PREDICT)
    check_class_index(model, class_index)
    spec = spec or MaskSpec()
    h, w = image.height, image.width
    masks = generate_masks(spec, h, w)
    x = image.array

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    chunk = 256
    for start in range(0, spec.mask_count, chunk):
        mb = masks[start:start + chunk]
        batch = x[None, :, :, :] * mb[:, None, :, :]
        scores = _predict_scores(model, batch, class_index)
        acc += np.tensordot(scores, mb, axes=1)
        cnt += mb.sum(axis=0)
    if normalized:
        out = np.where(cnt > 0, acc / np.where(cnt > 0, cnt, 1.0), 0.0)
    else:
        out = acc
    return SaliencyMap(
        scores=out, method="rise", class_index=class_index, model_id=model.model_id,
        provenance={"score_space": "predict", "grid_size": spec.grid_size,
                    "keep_probability": spec.keep_probability,
                    "mask_count": spec.mask_count, "seed": spec.seed,
                    "normalized": "empirical_count" if normalized else "raw_sum"},
    )


# ---------------------------------------------------------------------------
# reference explainers used as metric baselines

def random_saliency(image: Image, class_index: int, seed: int = 0,
                    model_id: str = "") -> SaliencyMap:
    """Seeded uniform noise map; the seed is mixed with the image bytes and
    class so distinct samples get independent draws while the whole thing
    stays a pure function of its inputs."""
    digest = zlib.crc32(np.ascontiguousarray(image.array).tobytes())
    rng = np.random.default_rng(np.random.SeedSequence((seed, digest, class_index)))
    return SaliencyMap(
        scores=rng.random((image.height, image.width)), method="random",
        class_index=class_index, model_id=model_id, provenance={"seed": seed},
    )


def mask_saliency(mask: np.ndarray, class_index: int, model_id: str = "") -> SaliencyMap:
    """The ground-truth mask itself as an oracle explanation."""
    return SaliencyMap(scores=as_f64(mask), method="oracle-mask",
                       class_index=class_index, model_id=model_id)


# ---------------------------------------------------------------------------
# registry

METHOD_NAMES = ("gradient", "gbp", "intgrad", "gradcam", "cebp", "occlusion", "rise")


def build_explainer(method: str, seed: int = 0, params: dict | None = None):
    """Callable (model, image, class_index) -> SaliencyMap for a method name.

    ``params`` carries per-method knobs (steps, patch_size, mask_count, ...);
    unknown keys are rejected so config typos fail loudly.
    """
    p = dict(params or {})

    def take(*names):
        return {k: p.pop(k) for k in names if k in p}

    if method == "gradient":
        kw = take("post_softmax")
        fn = lambda model, image, c: gradient_saliency(model, image, c, **kw)
    elif method == "gbp":
        fn = lambda model, image, c: gbp_saliency(model, image, c)
    elif method == "intgrad":
        kw = take("steps")
        fn = lambda model, image, c: intgrad_saliency(model, image, c, **kw)
    elif method == "gradcam":
        kw = take("layer_name")
        fn = lambda model, image, c: gradcam_saliency(model, image, c, **kw)
    elif method == "cebp":
        kw = take("layer_name", "contrastive")
        fn = lambda model, image, c: cebp_saliency(model, image, c, **kw)
    elif method == "occlusion":
        kw = take("patch_size", "stride", "baseline_value")
        def fn(model, image, c, _kw=kw):
            if "patch_size" in _kw:
                spec = OcclusionSpec(**_kw)
            else:
                m = OcclusionSpec.default_for(image).patch_size
                spec = OcclusionSpec(patch_size=m, stride=_kw.get("stride"),
                                     baseline_value=_kw.get("baseline_value", 0.0))
            return occlusion_saliency(model, image, c, spec)
    elif method == "rise":
        kw = take("grid_size", "keep_probability", "mask_count", "shift", "interpolation")
        spec = MaskSpec(seed=seed, **kw)
        fn = lambda model, image, c: rise_saliency(model, image, c, spec)
    elif method == "random":
        fn = lambda model, image, c: random_saliency(image, c, seed=seed,
                                                     model_id=model.model_id)
    else:
        raise ConfigError(f"unknown method {method!r}")
    if p:
        raise ConfigError(f"unknown parameters for {method}: {sorted(p)}")
    return fn


# ---------------------------------------------------------------------------
# persistence

def save_saliency(smap: SaliencyMap, path) -> None:
    h, w = smap.shape
    header = {
        "format": MAP_MAGIC.decode(), "h": h, "w": w, "method": smap.method,
        "class": smap.class_index, "normalization": smap.normalization,
        "model_id": smap.model_id, "provenance": smap.provenance,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        f.write(np.asarray(smap.scores, dtype="<f4").tobytes())


def load_saliency(path) -> SaliencyMap:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAP_MAGIC:
        raise IOFormatError(f"bad magic in {path}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen])
    h, w = header["h"], header["w"]
    need = h * w * 4
    body = blob[12 + hlen: 12 + hlen + need]
    if len(body) != need:
        raise IOFormatError(f"expected {need} score bytes, got {len(body)}")
    scores = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return SaliencyMap(scores=scores, method=header["method"],
                       class_index=header["class"],
                       normalization=header.get("normalization", "raw"),
                       model_id=header.get("model_id", ""),
                       provenance=header.get("provenance", {}))


def export_pgm(smap: SaliencyMap, path) -> None:
    write_pgm(path, minmax_normalize(smap.scores))
