"""Procedural benchmark generator: sprites pasted on textured scenes.

Every sample carries two labels (object = sprite class, scene = texture
class), an exact binary mask of the pasted sprite, and a twin image that is
the identical scene without the sprite. Sprites use hard alpha compositing
and colors with at least one channel at full intensity, while scene values
stay below 0.84, so with-sprite and twin images differ exactly on the mask
even after the 8-bit round trip to disk.

Determinism: every record is a pure function of (config.seed, object class,
scene class, index), so generation order and parallelism cannot change
content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, UnknownClassError
from .imageio import read_pgm, read_ppm, write_pgm, write_ppm
from .metrics import GroundTruthMask
from .tensors import Image, minmax_normalize

MAX_OBJECT_CLASSES = 10
SCENE_VALUE_CEILING = 0.84  # keeps scene bytes clear of sprite peak channels

# one channel at full intensity per color, guaranteeing an 8-bit gap of at
# least 40 levels against any scene pixel
_SPRITE_COLORS = (
    (1.0, 0.15, 0.15), (0.15, 1.0, 0.15), (0.15, 0.35, 1.0), (1.0, 1.0, 0.2),
    (1.0, 0.2, 1.0), (0.2, 1.0, 1.0), (1.0, 0.55, 0.1), (0.55, 0.1, 1.0),
    (1.0, 1.0, 1.0), (0.1, 1.0, 0.55),
)


@dataclass(frozen=True)
class Placement:
    x: int        # left column of the sprite box
    y: int        # top row
    scale: float  # sprite side / scene side

    def to_dict(self):
        return {"x": self.x, "y": self.y, "scale": self.scale}


@dataclass(frozen=True)
class Sprite:
    object_class: int
    pixels: np.ndarray  # [3, s, s]
    alpha: np.ndarray   # [s, s] bool


@dataclass(frozen=True)
class SampleRecord:
    image: Image
    object_label: int
    scene_label: int
    cf_mask: GroundTruthMask | None
    pair_id: str
    has_cf: bool
    placement: Placement | None

    def __post_init__(self):
        if self.has_cf and self.cf_mask is None:
            raise ConfigError("with-concept record requires a mask")


@dataclass(frozen=True)
class GeneratorConfig:
    n_object_classes: int = 10
    n_scene_classes: int = 10
    image_size: int = 64
    samples_per_combined_label: int = 50
    seed: int = 0
    # planted-shortcut knobs: restrict an object class to chosen scenes, or
    # render one class with another class's sprite so only scene context can
    # tell them apart
    allowed_scenes: dict = field(default_factory=dict)
    sprite_alias: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.n_object_classes, self.n_scene_classes,
               self.samples_per_combined_label) < 1:
            raise ConfigError("class and sample counts must be positive")
        if self.n_object_classes > MAX_OBJECT_CLASSES:
            raise ConfigError(f"sprite vocabulary has {MAX_OBJECT_CLASSES} classes")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")
        for o, scenes in self.allowed_scenes.items():
            if not 0 <= int(o) < self.n_object_classes:
                raise ConfigError(f"allowed_scenes object {o} out of range")
            if not scenes or any(not 0 <= s < self.n_scene_classes for s in scenes):
                raise ConfigError(f"allowed_scenes for object {o} invalid")
        for o, alias in self.sprite_alias.items():
            if not (0 <= int(o) < self.n_object_classes
                    and 0 <= int(alias) < self.n_object_classes):
                raise ConfigError("sprite_alias entry out of range")

    def to_dict(self):
        return {
            "n_object_classes": self.n_object_classes,
            "n_scene_classes": self.n_scene_classes,
            "image_size": self.image_size,
            "samples_per_combined_label": self.samples_per_combined_label,
            "seed": self.seed,
            "allowed_scenes": {str(k): list(v) for k, v in self.allowed_scenes.items()},
            "sprite_alias": {str(k): int(v) for k, v in self.sprite_alias.items()},
        }

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(
            n_object_classes=int(d.get("n_object_classes", 10)),
            n_scene_classes=int(d.get("n_scene_classes", 10)),
            image_size=int(d.get("image_size", 64)),
            samples_per_combined_label=int(d.get("samples_per_combined_label", 50)),
            seed=int(d.get("seed", 0)),
            allowed_scenes={int(k): [int(s) for s in v]
                            for k, v in d.get("allowed_scenes", {}).items()},
            sprite_alias={int(k): int(v) for k, v in d.get("sprite_alias", {}).items()},
        )


# ---------------------------------------------------------------------------
# scenes

def _scene_colors(scene_class: int):
    k = float(scene_class)
    phases = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0])
    col_a = 0.5 + 0.5 * np.cos(2 * np.pi * (k * 0.37 + phases))
    col_b = 0.5 + 0.5 * np.cos(2 * np.pi * (k * 0.61 + 0.5 + phases))
    return col_a, col_b


def render_scene(scene_class: int, seed: int, size: int = 64) -> Image:
    """Class-distinct texture: stripes, warped gradient, or smoothed noise,
    with a class-specific color pair; values capped below the sprite floor."""
    if scene_class < 0:
        raise UnknownClassError(f"scene class {scene_class} invalid")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(scene_class), 0x5CE)))
    ys, xs = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    kind = scene_class % 3
    theta = np.pi * ((scene_class * 0.137) % 1.0)
    proj = xs * np.cos(theta) + ys * np.sin(theta)
    if kind == 0:
        freq = 3 + scene_class % 5 + rng.uniform(-0.2, 0.2)
        phase = rng.uniform(0, 2 * np.pi)
        pattern = 0.5 + 0.5 * np.sin(2 * np.pi * freq * proj + phase)
    elif kind == 1:
        warp = 0.08 * np.sin(2 * np.pi * (2 + scene_class % 3) * ys + rng.uniform(0, 2 * np.pi))
        pattern = minmax_normalize(proj + warp)
    else:
        noise = rng.standard_normal((size, size))
        pattern = minmax_normalize(ndimage.gaussian_filter(noise, sigma=1.0 + scene_class % 4))
    col_a, col_b = _scene_colors(scene_class)
    img = (1 - pattern)[None] * col_a[:, None, None] + pattern[None] * col_b[:, None, None]
    return Image(img * SCENE_VALUE_CEILING)


# ---------------------------------------------------------------------------
# sprites

def _shape_alpha(shape_id: int, side: int, tighten: float) -> np.ndarray:
    c = np.linspace(-1, 1, side, endpoint=False) + 1.0 / side
    vv, uu = np.meshgrid(c, c, indexing="ij")
    t = tighten
    box = np.maximum(np.abs(uu), np.abs(vv))
    r = np.hypot(uu, vv)
    if shape_id == 0:
        return box <= 0.85 * t
    if shape_id == 1:
        return r <= 0.85 * t
    if shape_id == 2:
        width = 0.85 * t * (vv + 0.85 * t) / (1.7 * t)
        return (vv >= -0.85 * t) & (vv <= 0.85 * t) & (np.abs(uu) <= width)
    if shape_id == 3:
        return np.abs(uu) + np.abs(vv) <= 0.95 * t
    if shape_id == 4:
        return (r <= 0.85 * t) & (r >= 0.45 * t)
    if shape_id == 5:
        return ((np.abs(uu) <= 0.28 * t) & (np.abs(vv) <= 0.85 * t)) | \
               ((np.abs(vv) <= 0.28 * t) & (np.abs(uu) <= 0.85 * t))
    if shape_id == 6:
        a = (uu + vv) / np.sqrt(2)
        b = (uu - vv) / np.sqrt(2)
        return ((np.abs(a) <= 0.26 * t) | (np.abs(b) <= 0.26 * t)) & (box <= 0.9 * t)
    if shape_id == 7:
        return (box <= 0.85 * t) & (box >= 0.5 * t)
    if shape_id == 8:
        band = np.floor((vv / t + 0.85) / 0.34).astype(int)
        return (box <= 0.85 * t) & (band % 2 == 0)
    if shape_id == 9:
        gu = np.floor((uu / t + 0.85) / 0.425).astype(int)
        gv = np.floor((vv / t + 0.85) / 0.425).astype(int)
        return (box <= 0.85 * t) & ((gu + gv) % 2 == 0)
    raise UnknownClassError(f"object class {shape_id} invalid")


def render_object(object_class: int, seed: int, side: int = 32) -> Sprite:
    """Flat-colored class shape with a binary alpha mask; small seeded size
    jitter keeps instances distinct without touching the color floor."""
    if not 0 <= object_class < MAX_OBJECT_CLASSES:
        raise UnknownClassError(f"object class {object_class} invalid")
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(object_class), 0x0B1)))
    tighten = rng.uniform(0.92, 1.0)
    alpha = _shape_alpha(object_class, side, tighten)
    if not alpha.any():
        raise ConfigError(f"degenerate sprite for class {object_class} at side {side}")
    color = np.array(_SPRITE_COLORS[object_class])
    pixels = color[:, None, None] * alpha[None]
    return Sprite(object_class=object_class, pixels=pixels, alpha=alpha)


def _nearest_resize_sprite(sprite: Sprite, side: int) -> Sprite:
    src = sprite.alpha.shape[0]
    if src == side:
        return sprite
    idx = np.floor((np.arange(side) + 0.5) * src / side).astype(int)
    return Sprite(object_class=sprite.object_class,
                  pixels=sprite.pixels[:, idx][:, :, idx],
                  alpha=sprite.alpha[idx][:, idx])


# ---------------------------------------------------------------------------
# composition

def compose(scene: Image, sprite: Sprite, seed: int, scene_label: int = 0,
            pair_id: str = "pair") -> tuple:
    """Paste the sprite at a seeded uniform scale in [1/3, 1/2] of the scene
    side and a uniform fully-inside position; returns the with-concept record
    and its twin sharing the exact background."""
    size = scene.height
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC0A)))
    lo = -(-size // 3)
    hi = size // 2
    side = int(rng.integers(lo, hi + 1))
    placed = _nearest_resize_sprite(sprite, side)
    y = int(rng.integers(0, size - side + 1))
    x = int(rng.integers(0, size - side + 1))

    img = scene.array.copy()
    region = img[:, y:y + side, x:x + side]
    img[:, y:y + side, x:x + side] = np.where(placed.alpha[None], placed.pixels, region)
    mask = np.zeros((size, size), dtype=bool)
    mask[y:y + side, x:x + side] = placed.alpha

    with_rec = SampleRecord(
        image=Image(img), object_label=sprite.object_class, scene_label=scene_label,
        cf_mask=GroundTruthMask(mask, kind="concept"), pair_id=pair_id, has_cf=True,
        placement=Placement(x=x, y=y, scale=side / size),
    )
    twin = SampleRecord(
        image=Image(scene.array.copy()), object_label=sprite.object_class,
        scene_label=scene_label, cf_mask=None, pair_id=pair_id, has_cf=False,
        placement=None,
    )
    return with_rec, twin


def generate_dataset(config: GeneratorConfig) -> list:
    """All records in (object, scene, index) order, with-concept before twin."""
    records = []
    for o in range(config.n_object_classes):
        scenes = config.allowed_scenes.get(o, list(range(config.n_scene_classes)))
        sprite_class = config.sprite_alias.get(o, o)
        for s in scenes:
            for i in range(config.samples_per_combined_label):
                ss = np.random.SeedSequence((config.seed, o, s, i))
                scene_seed, sprite_seed, compose_seed = ss.generate_state(3).tolist()
                scene = render_scene(s, scene_seed, size=config.image_size)
                sprite = render_object(sprite_class, sprite_seed,
                                       side=config.image_size // 2)
                if sprite_class != o:
                    # aliased class keeps its own label on a borrowed look,
                    # the whole point of the shortcut construction
                    sprite = Sprite(object_class=o, pixels=sprite.pixels,
                                    alpha=sprite.alpha)
                pair_id = f"o{o:02d}_s{s:02d}_i{i:04d}"
                with_rec, twin = compose(scene, sprite, compose_seed,
                                         scene_label=s, pair_id=pair_id)
                records.append(with_rec)
                records.append(twin)
    return records


def pairs_from_records(records):
    """(with, twin) tuples keyed by pair_id, in first-appearance order."""
    by_id = {}
    order = []
    for rec in records:
        if rec.pair_id not in by_id:
            by_id[rec.pair_id] = {}
            order.append(rec.pair_id)
        by_id[rec.pair_id]["cf" if rec.has_cf else "bg"] = rec
    out = []
    for pid in order:
        entry = by_id[pid]
        if "cf" in entry and "bg" in entry:
            out.append((entry["cf"], entry["bg"]))
    return out


# ---------------------------------------------------------------------------
# disk layout: images/*.ppm, masks/*.pgm, manifest.jsonl

def write_dataset(records, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        stem = f"{rec.pair_id}_{'cf' if rec.has_cf else 'bg'}"
        img_rel = f"images/{stem}.ppm"
        write_ppm(out / img_rel, rec.image.array)
        mask_rel = None
        if rec.cf_mask is not None:
            mask_rel = f"masks/{rec.pair_id}_mask.pgm"
            write_pgm(out / mask_rel, rec.cf_mask.mask.astype(np.float64))
        lines.append(json.dumps({
            "image": img_rel,
            "object_label": rec.object_label,
            "scene_label": rec.scene_label,
            "cf_mask": mask_rel,
            "pair_id": rec.pair_id,
            "has_cf": rec.has_cf,
            "placement": rec.placement.to_dict() if rec.placement else None,
        }, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(manifest_path) -> list:
    manifest = Path(manifest_path)
    root = manifest.parent
    records = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        image = Image(read_ppm(root / d["image"]))
        mask = None
        if d["cf_mask"]:
            mask = GroundTruthMask(read_pgm(root / d["cf_mask"]) > 0.5, kind="concept")
        placement = Placement(**d["placement"]) if d.get("placement") else None
        records.append(SampleRecord(
            image=image, object_label=int(d["object_label"]),
            scene_label=int(d["scene_label"]), cf_mask=mask,
            pair_id=d["pair_id"], has_cf=bool(d["has_cf"]), placement=placement,
        ))
    return records
