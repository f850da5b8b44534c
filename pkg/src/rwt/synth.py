"""Procedural corpus of room-like images with known text ground truth.

Each example is a small RGB image plus the exact character layout that
produced it, so score maps can be rendered noise-free. Overlaid text is
axis-aligned, opaque and high-contrast; scene text is perspective-warped,
faint and sometimes occluded. Backgrounds carry stroke clutter (blind and
shelf-like line clusters) that is not text and never enters the layout,
so pixel readers face distractors that map-guided attention never sees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import cv2
import numpy as np

from .annotation import binarize_label
from .datamodel import (
    AggregatedLabel,
    BinaryClass,
    DatasetManifest,
    LabelSource,
    ManifestRecord,
    ScoreMap,
    TextLabel,
)
from .io import save_image, score_map_path, write_manifest, write_tensor
from .scoremaps import (
    Character,
    CharacterLayout,
    CharKind,
    layout_path,
    oracle_render,
    write_layout,
)
from .selection import GateConfig, region_gate_score
from .training import TrainExample

CLASS_ORDER = (TextLabel.OVERLAYING, TextLabel.ORGANIC, TextLabel.BOTH, TextLabel.NONE)
GROUND_TRUTH_VOTES = 5


@dataclass(frozen=True)
class OverlayStyle:
    """Superimposed text: axis-aligned rows at uniform random positions."""

    glyph_px_range: Tuple[int, int] = (9, 13)
    opacity_range: Tuple[float, float] = (0.3, 1.0)
    contrast_range: Tuple[float, float] = (0.65, 0.9)

    def __post_init__(self) -> None:
        lo, hi = self.opacity_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("opacity range must satisfy 0 < lo <= hi <= 1")
        if self.glyph_px_range[0] < 5 or self.glyph_px_range[0] > self.glyph_px_range[1]:
            raise ValueError("glyph_px_range must be increasing and >= 5")


@dataclass(frozen=True)
class SceneTextStyle:
    """Text belonging to the scene: warped, faint, possibly occluded."""

    perspective: bool = True
    occlusion_probability: float = 0.5
    opacity_range: Tuple[float, float] = (0.35, 0.6)
    contrast_range: Tuple[float, float] = (0.10, 0.2)

    def __post_init__(self) -> None:
        if not 0 <= self.occlusion_probability <= 1:
            raise ValueError("occlusion_probability must lie in [0, 1]")


@dataclass(frozen=True)
class BackgroundStyle:
    """Room-like texture: base tone, gradient, boxy shapes, line clutter.

    Clutter clusters are short parallel strokes (blinds, radiators, shelf
    edges) that read as text-like detail at low resolution but are not
    glyphs and never appear in the character layout.
    """

    rect_count_range: Tuple[int, int] = (2, 4)
    clutter_strokes_range: Tuple[int, int] = (3, 6)
    clutter_clusters_range: Tuple[int, int] = (1, 2)
    noise_sigma: float = 0.015


def _default_mix() -> Dict[str, float]:
    # Organic outweighs Overlaying so that "some text is present" stays a
    # weak predictor of the positive class.
    return {"Overlaying": 0.3, "Organic": 0.35, "Both": 0.1, "None": 0.25}


@dataclass(frozen=True)
class SyntheticSpec:
    image_side: int = 64
    class_mix: Mapping[str, float] = field(default_factory=_default_mix)
    overlay: OverlayStyle = OverlayStyle()
    scene_text: SceneTextStyle = SceneTextStyle()
    background: BackgroundStyle = BackgroundStyle()
    seed: int = 0
    glyphs_min: int = 3
    glyphs_max: int = 5
    oracle_sigma_px: float = 5.0

    def __post_init__(self) -> None:
        if self.image_side % 2 or self.image_side < 32:
            raise ValueError("image_side must be even and >= 32")
        if not 1 <= self.glyphs_min <= self.glyphs_max:
            raise ValueError("need 1 <= glyphs_min <= glyphs_max")
        total = 0.0
        for label in CLASS_ORDER:
            p = float(self.class_mix.get(label.value, 0.0))
            if p < 0:
                raise ValueError(f"class_mix[{label.value!r}] must be >= 0")
            total += p
        if total == 0:
            raise ValueError("class_mix has empty support")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"class_mix must sum to 1, got {total}")

    def mix_vector(self) -> np.ndarray:
        return np.array(
            [float(self.class_mix.get(l.value, 0.0)) for l in CLASS_ORDER], dtype=np.float64
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_side": self.image_side,
            "class_mix": dict(self.class_mix),
            "overlay": {
                "glyph_px_range": list(self.overlay.glyph_px_range),
                "opacity_range": list(self.overlay.opacity_range),
                "contrast_range": list(self.overlay.contrast_range),
            },
            "scene_text": {
                "perspective": self.scene_text.perspective,
                "occlusion_probability": self.scene_text.occlusion_probability,
                "opacity_range": list(self.scene_text.opacity_range),
                "contrast_range": list(self.scene_text.contrast_range),
            },
            "background": {
                "rect_count_range": list(self.background.rect_count_range),
                "clutter_strokes_range": list(self.background.clutter_strokes_range),
                "clutter_clusters_range": list(self.background.clutter_clusters_range),
                "noise_sigma": self.background.noise_sigma,
            },
            "seed": self.seed,
            "glyphs_min": self.glyphs_min,
            "glyphs_max": self.glyphs_max,
            "oracle_sigma_px": self.oracle_sigma_px,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SyntheticSpec":
        def tup(value, fallback):
            return tuple(value) if value is not None else fallback

        overlay_d = data.get("overlay", {})
        scene_d = data.get("scene_text", {})
        bg_d = data.get("background", {})
        overlay = OverlayStyle(
            glyph_px_range=tup(overlay_d.get("glyph_px_range"), OverlayStyle().glyph_px_range),
            opacity_range=tup(overlay_d.get("opacity_range"), OverlayStyle().opacity_range),
            contrast_range=tup(overlay_d.get("contrast_range"), OverlayStyle().contrast_range),
        )
        scene = SceneTextStyle(
            perspective=bool(scene_d.get("perspective", True)),
            occlusion_probability=float(scene_d.get("occlusion_probability", 0.5)),
            opacity_range=tup(scene_d.get("opacity_range"), SceneTextStyle().opacity_range),
            contrast_range=tup(scene_d.get("contrast_range"), SceneTextStyle().contrast_range),
        )
        background = BackgroundStyle(
            rect_count_range=tup(bg_d.get("rect_count_range"), BackgroundStyle().rect_count_range),
            clutter_strokes_range=tup(
                bg_d.get("clutter_strokes_range"), BackgroundStyle().clutter_strokes_range
            ),
            clutter_clusters_range=tup(
                bg_d.get("clutter_clusters_range"), BackgroundStyle().clutter_clusters_range
            ),
            noise_sigma=float(bg_d.get("noise_sigma", BackgroundStyle().noise_sigma)),
        )
        base = cls()
        return cls(
            image_side=int(data.get("image_side", base.image_side)),
            class_mix=dict(data.get("class_mix", _default_mix())),
            overlay=overlay,
            scene_text=scene,
            background=background,
            seed=int(data.get("seed", 0)),
            glyphs_min=int(data.get("glyphs_min", base.glyphs_min)),
            glyphs_max=int(data.get("glyphs_max", base.glyphs_max)),
            oracle_sigma_px=float(data.get("oracle_sigma_px", base.oracle_sigma_px)),
        )


@dataclass(frozen=True)
class SyntheticExample:
    image: np.ndarray
    text_label: TextLabel
    layout: CharacterLayout
    score_map: ScoreMap
    image_id: str = ""

    @property
    def binary_class(self) -> BinaryClass:
        return binarize_label(self.text_label)

    def as_train_example(self) -> TrainExample:
        label = 1 if self.binary_class is BinaryClass.POSITIVE else 0
        return TrainExample(self.image, self.score_map, label, self.image_id)


def example_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one corpus index, stable across run order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _background(rng: np.random.Generator, spec: SyntheticSpec) -> np.ndarray:
    side = spec.image_side
    style = spec.background
    base = rng.uniform(0.25, 0.7, size=3)
    img = np.broadcast_to(base.astype(np.float32), (side, side, 3)).copy()
    ramp = np.linspace(-1.0, 1.0, side, dtype=np.float32) * rng.uniform(0.0, 0.12)
    if rng.random() < 0.5:
        img += ramp[:, None, None]
    else:
        img += ramp[None, :, None]
    lo, hi = style.rect_count_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        x0, y0 = (int(v) for v in rng.integers(0, side, size=2))
        w, h = (int(v) for v in rng.integers(side // 6, side // 2, size=2))
        color = rng.uniform(0.1, 0.9, size=3).astype(np.float32)
        alpha = float(rng.uniform(0.5, 0.85))
        patch = img[y0 : y0 + h, x0 : x0 + w]
        patch[:] = patch * (1 - alpha) + color * alpha
    return np.clip(img, 0.0, 1.0)


def _glyph_alpha(rng: np.random.Generator, size: int) -> np.ndarray:
    canvas = np.zeros((size, size), dtype=np.uint8)
    thickness = max(1, size // 6)
    for _ in range(int(rng.integers(2, 5))):
        kind = int(rng.integers(0, 4))
        if kind == 0:
            x = int(rng.integers(size // 4, 3 * size // 4 + 1))
            cv2.line(canvas, (x, 1), (x, size - 2), 255, thickness)
        elif kind == 1:
            y = int(rng.integers(size // 4, 3 * size // 4 + 1))
            cv2.line(canvas, (1, y), (size - 2, y), 255, thickness)
        elif kind == 2:
            if rng.random() < 0.5:
                cv2.line(canvas, (1, 1), (size - 2, size - 2), 255, thickness)
            else:
                cv2.line(canvas, (size - 2, 1), (1, size - 2), 255, thickness)
        else:
            cv2.ellipse(
                canvas,
                (size // 2, size // 2),
                (size // 3, size // 3),
                0.0,
                float(rng.uniform(0, 360)),
                float(rng.uniform(180, 360)),
                255,
                thickness,
            )
    return canvas.astype(np.float32) / 255.0


def _warp_glyph(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    """Rotate and shear a glyph about its center on an enlarged canvas."""
    size = alpha.shape[0]
    big = int(math.ceil(size * 1.8))
    pad = (big - size) // 2
    canvas = np.zeros((big, big), dtype=np.float32)
    canvas[pad : pad + size, pad : pad + size] = alpha
    angle = float(rng.uniform(18, 40)) * (1 if rng.random() < 0.5 else -1)
    shear = float(rng.uniform(-0.3, 0.3))
    c = big / 2.0
    rot = cv2.getRotationMatrix2D((c, c), angle, float(rng.uniform(0.8, 1.0)))
    rot[0, 1] += shear
    rot[0, 2] -= shear * c
    return cv2.warpAffine(canvas, rot, (big, big), flags=cv2.INTER_LINEAR)


def _paste(img: np.ndarray, alpha: np.ndarray, cx: float, cy: float, color: np.ndarray) -> None:
    side = img.shape[0]
    ah, aw = alpha.shape
    x0 = int(round(cx - aw / 2.0))
    y0 = int(round(cy - ah / 2.0))
    xs, ys = max(x0, 0), max(y0, 0)
    xe, ye = min(x0 + aw, side), min(y0 + ah, side)
    if xs >= xe or ys >= ye:
        return
    a = alpha[ys - y0 : ye - y0, xs - x0 : xe - x0][..., None]
    region = img[ys:ye, xs:xe]
    region[:] = region * (1 - a) + color[None, None, :] * a


def _text_color(
    rng: np.random.Generator, img: np.ndarray, cx: float, cy: float, contrast: float
) -> np.ndarray:
    side = img.shape[0]
    x, y = int(np.clip(cx, 0, side - 1)), int(np.clip(cy, 0, side - 1))
    patch = img[max(y - 4, 0) : y + 5, max(x - 4, 0) : x + 5]
    lum = float(patch.mean())
    direction = -1.0 if lum > 0.5 else 1.0
    target = lum + direction * contrast
    color = np.clip(rng.uniform(-0.06, 0.06, size=3) + target, 0.0, 1.0)
    return color.astype(np.float32)


def _word_path(
    rng: np.random.Generator, side: int, n: int, size: int, angled: bool
) -> Optional[List[Tuple[float, float]]]:
    """Glyph centers for one word, symmetric about a uniformly drawn center.

    Every word kind draws its center from the same box, so accepted glyph
    positions carry as little class information as the frame allows.
    """
    step = size + 1.0
    margin = size * 0.75 + 2
    inset = size * 0.45 + 1
    for _ in range(40):
        theta = math.radians(float(rng.uniform(-38, 38))) if angled else 0.0
        dx, dy = math.cos(theta) * step, math.sin(theta) * step
        cx = float(rng.uniform(margin, side - margin))
        cy = float(rng.uniform(margin, side - margin))
        half = (n - 1) / 2.0
        centers = [(cx + (i - half) * dx, cy + (i - half) * dy) for i in range(n)]
        if all(inset <= x <= side - inset and inset <= y <= side - inset for x, y in centers):
            return centers
    return None


def _add_word(
    rng: np.random.Generator,
    img: np.ndarray,
    layout: CharacterLayout,
    spec: SyntheticSpec,
    kind: CharKind,
    glyphs_min: int,
    glyphs_max: int,
) -> None:
    side = spec.image_side
    n = int(rng.integers(glyphs_min, glyphs_max + 1))
    overlay = kind is CharKind.OVERLAY
    lo_px, hi_px = spec.overlay.glyph_px_range
    max_size = max(8, (side - 6) // max(n, 1) - 1)
    size = int(rng.integers(lo_px, min(hi_px, max_size) + 1))
    warp = not overlay and spec.scene_text.perspective
    centers = _word_path(rng, side, n, size, angled=warp)
    if centers is None:
        centers = [(side / 2.0 + (i - (n - 1) / 2.0) * (size + 1), side / 2.0) for i in range(n)]
    if overlay:
        contrast_range = spec.overlay.contrast_range
        opacity_range = spec.overlay.opacity_range
    else:
        contrast_range = spec.scene_text.contrast_range
        opacity_range = spec.scene_text.opacity_range
    contrast = float(rng.uniform(*contrast_range))
    opacity = float(rng.uniform(*opacity_range))
    color = _text_color(rng, img, centers[0][0], centers[0][1], contrast)
    first = len(layout.characters)
    for cx, cy in centers:
        alpha = _glyph_alpha(rng, size)
        if warp:
            alpha = _warp_glyph(rng, alpha)
        _paste(img, alpha * opacity, cx, cy, color)
        layout.characters.append(
            Character(
                center_x=float(np.clip(cx, 0, side - 1)),
                center_y=float(np.clip(cy, 0, side - 1)),
                scale=float(size),
                kind=kind,
            )
        )
    layout.links.extend((first + i, first + i + 1) for i in range(len(centers) - 1))
    if not overlay and rng.random() < spec.scene_text.occlusion_probability:
        # Partial occlusion: a background-toned bar across the word.
        xs = [c[0] for c in centers]
        ys = [c[1] for c in centers]
        bar = np.clip(
            img.mean(axis=(0, 1)) + rng.uniform(-0.05, 0.05, size=3), 0, 1
        ).astype(np.float32)
        y_bar = int(np.clip(rng.uniform(min(ys) - size / 2, max(ys) + size / 2), 0, side - 1))
        p0 = (int(min(xs) - size / 2), y_bar)
        p1 = (int(max(xs) + size / 2), y_bar + int(rng.integers(-3, 4)))
        cv2.line(img, p0, p1, bar.tolist(), max(2, size // 3))


def _clutter_shade(rng: np.random.Generator, img: np.ndarray, x: int, y: int) -> Tuple[float, ...]:
    side = img.shape[0]
    patch = img[max(y - 4, 0) : min(y + 5, side), max(x - 4, 0) : min(x + 5, side)]
    lum = float(patch.mean())
    direction = -1.0 if lum > 0.5 else 1.0
    shade = float(np.clip(lum + direction * rng.uniform(0.25, 0.55), 0.0, 1.0))
    return (shade, shade, shade)


def _add_clutter(rng: np.random.Generator, img: np.ndarray, spec: SyntheticSpec) -> None:
    # Present in every class, so clutter carries no label signal, but its
    # sharp repeated strokes resemble text to anything reading raw pixels.
    side = spec.image_side
    lo, hi = spec.background.clutter_clusters_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        x0, y0 = (int(v) for v in rng.integers(4, side - 14, size=2))
        bars = int(rng.integers(2, 5))
        length = int(rng.integers(6, 15))
        gap = int(rng.integers(2, 5))
        horizontal = rng.random() < 0.5
        color = _clutter_shade(rng, img, x0, y0)
        for b in range(bars):
            if horizontal:
                p0 = (x0, min(y0 + b * gap, side - 2))
                p1 = (min(x0 + length, side - 2), p0[1])
            else:
                p0 = (min(x0 + b * gap, side - 2), y0)
                p1 = (p0[0], min(y0 + length, side - 2))
            cv2.line(img, p0, p1, color, 1)
    lo, hi = spec.background.clutter_strokes_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        x0, y0 = (int(v) for v in rng.integers(2, side - 2, size=2))
        length = int(rng.integers(3, 9))
        horizontal = rng.random() < 0.5
        x1 = min(x0 + length, side - 2) if horizontal else x0
        y1 = y0 if horizontal else min(y0 + length, side - 2)
        cv2.line(img, (x0, y0), (x1, y1), _clutter_shade(rng, img, x0, y0), 1)


def draw_label(spec: SyntheticSpec, rng: np.random.Generator) -> TextLabel:
    idx = int(rng.choice(len(CLASS_ORDER), p=spec.mix_vector()))
    return CLASS_ORDER[idx]


def generate_example(
    spec: SyntheticSpec, rng: np.random.Generator, image_id: str = ""
) -> SyntheticExample:
    """Render one example; the rng alone determines all content."""
    side = spec.image_side
    label = draw_label(spec, rng)
    img = _background(rng, spec)
    layout = CharacterLayout()
    _add_clutter(rng, img, spec)
    # Single-kind images carry one or two words so word count alone does
    # not reveal the class; Both always pairs one of each kind.
    if label is TextLabel.ORGANIC:
        scene_words, overlay_words = 1 + int(rng.random() < 0.5), 0
    elif label is TextLabel.OVERLAYING:
        scene_words, overlay_words = 0, 1 + int(rng.random() < 0.5)
    elif label is TextLabel.BOTH:
        scene_words, overlay_words = 1, 1
    else:
        scene_words = overlay_words = 0
    for _ in range(scene_words):
        _add_word(rng, img, layout, spec, CharKind.SCENE, spec.glyphs_min, spec.glyphs_max)
    for _ in range(overlay_words):
        _add_word(rng, img, layout, spec, CharKind.OVERLAY, spec.glyphs_min, spec.glyphs_max)
    if spec.background.noise_sigma > 0:
        img += rng.normal(0.0, spec.background.noise_sigma, size=img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    score_map = oracle_render(layout, side, side, spec.oracle_sigma_px)
    return SyntheticExample(
        image=np.ascontiguousarray(img, dtype=np.float32),
        text_label=label,
        layout=layout,
        score_map=score_map,
        image_id=image_id,
    )


def generate_examples(spec: SyntheticSpec, n: int) -> List[SyntheticExample]:
    return [
        generate_example(spec, example_rng(spec.seed, i), image_id=f"synth_{i:05d}")
        for i in range(n)
    ]


def word_count(layout: CharacterLayout) -> int:
    """Words in a layout: every word of k glyphs contributes k-1 links."""
    return len(layout.characters) - len(layout.links)


def corpus_record(example: SyntheticExample, image_path: str) -> ManifestRecord:
    # Ground truth is stored as a unanimous vote so downstream stages see
    # the same shape they would after real aggregation.
    aggregated = AggregatedLabel(
        image_id=example.image_id,
        label=example.text_label,
        votes_for_winner=GROUND_TRUTH_VOTES,
        total_votes=GROUND_TRUTH_VOTES,
        ambiguous=False,
        source=LabelSource.VOTE,
    )
    return ManifestRecord(
        image_id=example.image_id,
        image_path=image_path,
        category=example.text_label.value,
        aggregated=aggregated,
        binary_class=example.binary_class,
        gate_score=region_gate_score(example.score_map, GateConfig()),
        n_text_regions=word_count(example.layout),
    )


def generate_corpus(
    spec: SyntheticSpec, n: int, out_dir: Union[str, Path]
) -> DatasetManifest:
    """Write images, layouts, score maps and a manifest under ``out_dir``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    images_dir = out / "images"
    maps_dir = out / "maps"
    layouts_dir = out / "layouts"
    for d in (images_dir, maps_dir, layouts_dir):
        d.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        ex = generate_example(spec, example_rng(spec.seed, i), image_id=f"synth_{i:05d}")
        image_file = images_dir / f"{ex.image_id}.png"
        save_image(image_file, ex.image)
        write_tensor(score_map_path(maps_dir, ex.image_id), ex.score_map)
        write_layout(layout_path(layouts_dir, ex.image_id), ex.layout)
        records.append(corpus_record(ex, str(image_file.relative_to(out))))
    manifest = DatasetManifest(records)
    write_manifest(out / "manifest.jsonl", manifest)
    return manifest
