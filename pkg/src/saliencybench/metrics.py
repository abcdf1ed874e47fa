"""Evaluation metrics along five axes.

Faithfulness: insertion curve and its area (score recovery as pixels are
restored from a blurred reference in saliency order). Localization: pointing
game and intersection-over-salient-region. False positives: contribution of a
known pasted concept to object and scene classifiers (S_co, G_co, their gap
MCS, ratio gap MCR) plus the paired detection rate IDR. Sensitivity check:
correlation between most- and least-confident class maps (CS). Stability:
maximal map change under bounded input perturbation (SENS_max) and its radius
sweep.

Maps are min-max normalized before the contribution metrics; per-sample
values that cannot be computed (empty salient area, zero-variance map,
zero-sum map) are excluded and counted rather than silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyMaskError,
    EmptySalientAreaError,
    NoCorrectPredictionsError,
    ShapeMismatchError,
    UnpairedSampleError,
)
from .model import ModelHandle, check_class_index
from .saliency import SaliencyMap
from .tensors import Image, as_f64, clip_to_image

DEFAULT_IOSR_THETA = 0.5          # user-threshold default
DEFAULT_SENS_RADIUS = 0.2         # experimental perturbation radius
IDR_RANDOM_BASELINE = 0.5         # chance level for the detection rate


@dataclass(frozen=True)
class GroundTruthMask:
    mask: np.ndarray
    kind: str = "concept"  # bounding-box | segmentation | concept

    def __post_init__(self):
        arr = as_f64(self.mask)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask must be [h, w], got {arr.shape}")
        binary = arr > 0.5
        if not binary.any():
            raise EmptyMaskError("ground-truth mask has no positive pixel")
        if self.kind not in ("bounding-box", "segmentation", "concept"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        object.__setattr__(self, "mask", binary)

    @property
    def area_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class InsertionCurve:
    fractions: np.ndarray       # fraction of pixels inserted, starts at 0
    scores: np.ndarray          # f_c(state) - f_c(reference) per state
    iauc: float

    def __post_init__(self):
        fr = as_f64(self.fractions)
        sc = as_f64(self.scores)
        if fr.shape != sc.shape or fr.ndim != 1:
            raise ShapeMismatchError("fractions and scores must be equal-length vectors")
        if abs(self.iauc - sc.mean()) > 1e-6:
            raise ValueError("iauc must equal the mean of the stored scores")
        object.__setattr__(self, "fractions", fr)
        object.__setattr__(self, "scores", sc)

    @property
    def steps(self) -> int:
        return len(self.scores) - 1


@dataclass(frozen=True)
class PerturbationSpec:
    radius: float = DEFAULT_SENS_RADIUS
    sample_count: int = 10
    norm: str = "linf"
    seed: int = 0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.norm != "linf":
            raise ValueError("only the linf perturbation ball is supported")


@dataclass(frozen=True)
class AggregateResult:
    mean: float
    n_included: int
    n_excluded: int


def aggregate(values) -> AggregateResult:
    """Mean over non-None values with exclusion bookkeeping."""
    included = [float(v) for v in values if v is not None]
    excluded = sum(1 for v in values if v is None)
    if not included:
        return AggregateResult(mean=float("nan"), n_included=0, n_excluded=excluded)
    return AggregateResult(mean=float(np.mean(included)), n_included=len(included),
                           n_excluded=excluded)


# ---------------------------------------------------------------------------
# faithfulness

def blur_reference(image: Image, sigma: float | None = None,
                   radius: int | None = None) -> Image:
    """Gaussian-blurred copy; defaults are an 11x11 kernel with sigma 5 at
    side 64, scaled proportionally for other sizes."""
    scale = min(image.height, image.width) / 64.0
    if sigma is None:
        sigma = 5.0 * scale
    if radius is None:
        radius = max(1, round((11 * scale - 1) / 2))
    out = np.empty_like(image.array)
    for ch in range(image.channels):
        out[ch] = ndimage.gaussian_filter(image.array[ch], sigma=sigma,
                                          truncate=radius / sigma, mode="nearest")
    return clip_to_image(out)


def constant_reference(image: Image, value: float = 0.0) -> Image:
    return Image(np.full_like(image.array, value))


def _predict_prob_batch(model: ModelHandle, arrs: np.ndarray, class_index: int) -> np.ndarray:
    if hasattr(model, "logits_batch"):
        logits = model.logits_batch(arrs)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=1, keepdims=True))[:, class_index]
    return np.array([model.predict(clip_to_image(a))[class_index] for a in arrs])


def insertion_auc(model: ModelHandle, image: Image, class_index: int,
                  saliency: SaliencyMap, reference: Image | None = None,
                  steps: int = 100) -> InsertionCurve:
    """Insert pixels (all channels jointly) from the reference toward the
    image in descending saliency order, in ``steps`` near-equal batches.

    The curve stores f_c(state) - f_c(reference) for the steps+1 states
    including the untouched reference; the area is the mean of those scores.
    Saliency ties break by row-major position so the order is reproducible.
    """
    check_class_index(model, class_index)
    if reference is None:
        reference = blur_reference(image)
    if reference.shape != image.shape:
        raise ShapeMismatchError("reference shape differs from image")
    h, w = image.height, image.width
    if saliency.shape != (h, w):
        raise ShapeMismatchError("saliency shape differs from image")

    n_pix = h * w
    steps = max(1, min(steps, n_pix))
    order = np.argsort(-saliency.scores.ravel(), kind="stable")
    batches = np.array_split(order, steps)

    states = np.empty((steps + 1,) + image.shape)
    state = reference.array.copy()
    states[0] = state
    flat_img = image.array.reshape(image.channels, n_pix)
    flat_state = state.reshape(image.channels, n_pix)
    for i, batch in enumerate(batches, start=1):
        flat_state[:, batch] = flat_img[:, batch]
        states[i] = flat_state.reshape(image.shape)

    probs = _predict_prob_batch(model, states, class_index)
    scores = probs - probs[0]
    counts = np.cumsum([0] + [len(b) for b in batches])
    return InsertionCurve(fractions=counts / n_pix, scores=scores,
                          iauc=float(scores.mean()))


# ---------------------------------------------------------------------------
# localization

def argmax_pixel(scores: np.ndarray) -> tuple:
    """Row-major first maximum, the lexicographic tie-break."""
    flat = int(np.argmax(scores))
    return divmod(flat, scores.shape[1])


def pointing_game(saliency: SaliencyMap, gt: GroundTruthMask,
                  counters: dict | None = None) -> bool:
    """Hit when the top-scoring pixel lies inside the ground truth."""
    if saliency.shape != gt.mask.shape:
        raise ShapeMismatchError("saliency and mask shapes differ")
    scores = saliency.scores
    if counters is not None and scores.max() == scores.min():
        counters["constant_maps"] = counters.get("constant_maps", 0) + 1
    r, c = argmax_pixel(scores)
    return bool(gt.mask[r, c])


def iosr(saliency: SaliencyMap, gt: GroundTruthMask,
         theta: float = DEFAULT_IOSR_THETA) -> float:
    """|salient area intersect mask| / |salient area|, the salient area being
    pixels strictly above theta * max score."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0, 1)")
    if saliency.shape != gt.mask.shape:
        raise ShapeMismatchError("saliency and mask shapes differ")
    scores = saliency.scores
    peak = scores.max()
    if peak <= 0.0:
        raise EmptySalientAreaError("map maximum is not positive")
    salient = scores > theta * peak
    area = int(salient.sum())
    if area == 0:
        raise EmptySalientAreaError("no pixel above threshold")
    return float(np.logical_and(salient, gt.mask).sum() / area)


# ---------------------------------------------------------------------------
# concept contribution family

def concept_contribution(saliency: SaliencyMap, concept_mask: GroundTruthMask) -> float:
    """Mean score over the concept pixels, on the min-max normalized map."""
    if saliency.shape != concept_mask.mask.shape:
        raise ShapeMismatchError("saliency and mask shapes differ")
    e = saliency.minmax().scores
    m = concept_mask.mask
    return float(e[m].sum() / m.sum())


@dataclass(frozen=True)
class GlobalContribution:
    value: float
    n_included: int
    n_total: int


def global_contribution(model: ModelHandle, explainer, images, concept_masks,
                        labels) -> GlobalContribution:
    """Mean concept contribution over correctly predicted images."""
    values = []
    total = 0
    for image, mask, label in zip(images, concept_masks, labels):
        total += 1
        if int(np.argmax(model.predict(image))) != int(label):
            continue
        values.append(concept_contribution(explainer(model, image, int(label)), mask))
    if not values:
        raise NoCorrectPredictionsError("no image was correctly predicted")
    return GlobalContribution(value=float(np.mean(values)),
                              n_included=len(values), n_total=total)


def mcs(g_object: float, g_scene: float) -> float:
    """Contribution gap between the model that should use the concept and the
    one that should not."""
    return float(g_object) - float(g_scene)


@dataclass(frozen=True)
class McrResult:
    value: float
    n_included: int
    n_excluded: int


def mcr(model_object: ModelHandle, model_scene: ModelHandle, explainer,
        images, cf_masks, object_labels, scene_labels) -> McrResult:
    """Mean gap between each model's concept-to-total attribution ratio.

    Only images both models predict correctly enter the mean; a map whose
    normalized scores sum to zero cannot form a ratio and is excluded.
    """
    terms = []
    excluded = 0
    for image, mask, lab_o, lab_s in zip(images, cf_masks, object_labels, scene_labels):
        if int(np.argmax(model_object.predict(image))) != int(lab_o):
            continue
        if int(np.argmax(model_scene.predict(image))) != int(lab_s):
            continue

        def ratio(model, label):
            e = explainer(model, image, int(label)).minmax().scores
            tot = e.sum()
            if tot <= 0.0:
                return None
            return float(e[mask.mask].sum() / mask.mask.sum() / tot)

        r_o = ratio(model_object, lab_o)
        r_s = ratio(model_scene, lab_s)
        if r_o is None or r_s is None:
            excluded += 1
            continue
        terms.append(r_o - r_s)
    if not terms:
        raise NoCorrectPredictionsError("no image was correctly predicted by both models")
    return McrResult(value=float(np.mean(terms)), n_included=len(terms),
                     n_excluded=excluded)


@dataclass(frozen=True)
class CfPair:
    """One with-concept image and its concept-free twin over the same scene."""

    image_with: Image
    image_twin: Image
    cf_mask: GroundTruthMask
    class_index: int

    def __post_init__(self):
        if self.image_with.shape != self.image_twin.shape:
            raise UnpairedSampleError("pair members have different shapes")
        if self.cf_mask.mask.shape != (self.image_with.height, self.image_with.width):
            raise UnpairedSampleError("mask does not match pair images")


@dataclass(frozen=True)
class IdrResult:
    value: float
    hits: int
    n_pairs: int


def idr(model: ModelHandle, explainer, pairs) -> IdrResult:
    """Fraction of pairs whose concept region scores strictly higher with the
    concept present than in its twin. Ties count as non-hits; chance level is
    0.5 for content-blind maps."""
    pairs = list(pairs)
    if not pairs:
        raise UnpairedSampleError("no pairs given")
    hits = 0
    for pair in pairs:
        s_with = concept_contribution(
            explainer(model, pair.image_with, pair.class_index), pair.cf_mask)
        s_twin = concept_contribution(
            explainer(model, pair.image_twin, pair.class_index), pair.cf_mask)
        if s_with > s_twin:
            hits += 1
    return IdrResult(value=hits / len(pairs), hits=hits, n_pairs=len(pairs))


# ---------------------------------------------------------------------------
# sensitivity check

def class_sensitivity(model: ModelHandle, explainer, image: Image,
                      counters: dict | None = None) -> float | None:
    """Pearson correlation between the maps of the most and least confident
    classes; None (excluded) when either map has zero variance."""
    probs = model.predict(image)
    c_max = int(np.argmax(probs))
    c_min = int(np.argmin(probs))
    a = explainer(model, image, c_max).scores.ravel()
    b = explainer(model, image, c_min).scores.ravel()
    if a.std() == 0.0 or b.std() == 0.0:
        if counters is not None:
            counters["cs_undefined"] = counters.get("cs_undefined", 0) + 1
        return None
    return float(np.corrcoef(a, b)[0, 1])


# ---------------------------------------------------------------------------
# stability

def _unit_l2(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    if norm == 0.0:
        return np.zeros_like(x)
    return x / norm


def _map_distance(base_unit: np.ndarray, other: np.ndarray) -> float:
    return float(np.linalg.norm(_unit_l2(other) - base_unit))


def _perturbation_directions(shape, sample_count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EB5)))
    return rng.uniform(-1.0, 1.0, size=(sample_count,) + tuple(shape))


def max_sensitivity(model: ModelHandle, explainer, image: Image, class_index: int,
                    spec: PerturbationSpec | None = None) -> float:
    """Largest distance between unit-normalized maps over sampled
    perturbations with ||delta||_inf <= radius; perturbed pixels are clamped
    back to [0, 1]. Zero radius returns exactly 0."""
    spec = spec or PerturbationSpec()
    if spec.radius == 0.0:
        return 0.0
    base = _unit_l2(explainer(model, image, class_index).scores)
    dirs = _perturbation_directions(image.shape, spec.sample_count, spec.seed)
    worst = 0.0
    for u in dirs:
        perturbed = clip_to_image(image.array + spec.radius * u)
        d = _map_distance(base, explainer(model, perturbed, class_index).scores)
        worst = max(worst, d)
    return worst


def sensitivity_radius_sweep(model: ModelHandle, explainer, image: Image,
                             class_index: int, radii, sample_count: int = 10,
                             seed: int = 0) -> list:
    """max_sensitivity at each radius with one shared direction set and a
    growing perturbation pool, so the curve is nondecreasing exactly (each
    radius takes the max over a superset of the previous pool)."""
    radii = sorted(float(r) for r in radii)
    if any(r < 0 for r in radii):
        raise ValueError("radii must be >= 0")
    base = _unit_l2(explainer(model, image, class_index).scores)
    dirs = _perturbation_directions(image.shape, sample_count, seed)
    curve = []
    running = 0.0
    for r in radii:
        if r > 0.0:
            for u in dirs:
                perturbed = clip_to_image(image.array + r * u)
                d = _map_distance(base, explainer(model, perturbed, class_index).scores)
                running = max(running, d)
        curve.append((r, running))
    return curve
