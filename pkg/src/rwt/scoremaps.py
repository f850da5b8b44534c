"""Score map providers.

Two sources produce the half-resolution (region, affinity) maps the rest of
the pipeline consumes: a convolutional detector backbone with externally
trained weights, and a synthetic oracle that renders Gaussian heatmaps from
a known character layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from .checkpoint import load_container, save_container
from .datamodel import ScoreMap, check_image

BACKBONE_MIN_SIDE = 32


class ProviderMode(str, Enum):
    PRETRAINED_BACKBONE = "pretrained_backbone"
    SYNTHETIC_ORACLE = "synthetic_oracle"


@dataclass(frozen=True)
class ProviderConfig:
    mode: ProviderMode = ProviderMode.SYNTHETIC_ORACLE
    weights_path: Optional[str] = None
    oracle_sigma_px: float = 4.0

    def __post_init__(self) -> None:
        if self.oracle_sigma_px <= 0:
            raise ValueError("oracle_sigma_px must be > 0")
        if self.mode is ProviderMode.PRETRAINED_BACKBONE and not self.weights_path:
            raise ValueError("weights_path is required for the pretrained backbone mode")


class CharKind(str, Enum):
    SCENE = "scene"
    OVERLAY = "overlay"


@dataclass(frozen=True)
class Character:
    """One glyph's ground-truth center in image pixel coordinates."""

    center_x: float
    center_y: float
    scale: float
    kind: CharKind

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("character scale must be > 0")


@dataclass
class CharacterLayout:
    """Ground truth for the oracle: glyph centers plus word-adjacency links."""

    characters: List[Character] = field(default_factory=list)
    links: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.characters)
        for a, b in self.links:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"affinity link ({a}, {b}) references a missing character")

    def kinds(self) -> set:
        return {c.kind for c in self.characters}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "characters": [
                {"x": c.center_x, "y": c.center_y, "scale": c.scale, "kind": c.kind.value}
                for c in self.characters
            ],
            "links": [list(pair) for pair in self.links],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CharacterLayout":
        chars = [
            Character(float(c["x"]), float(c["y"]), float(c["scale"]), CharKind(c["kind"]))
            for c in data.get("characters", [])
        ]
        links = [(int(a), int(b)) for a, b in data.get("links", [])]
        return cls(chars, links)


def write_layout(path: Union[str, Path], layout: CharacterLayout) -> None:
    Path(path).write_text(json.dumps(layout.to_dict(), separators=(",", ":")) + "\n")


def read_layout(path: Union[str, Path]) -> CharacterLayout:
    return CharacterLayout.from_dict(json.loads(Path(path).read_text()))


def layout_path(directory: Union[str, Path], image_id: str) -> Path:
    return Path(directory) / f"{image_id}.layout.json"


def _gaussian_peaks(
    centers: Sequence[Tuple[float, float]], hh: int, ww: int, sigma_cells: float
) -> np.ndarray:
    """Max-composition of unit-peak isotropic Gaussians on the map grid."""
    out = np.zeros((hh, ww), dtype=np.float32)
    if not centers:
        return out
    ys = np.arange(hh, dtype=np.float64)[:, None]
    xs = np.arange(ww, dtype=np.float64)[None, :]
    denom = 2.0 * sigma_cells * sigma_cells
    for cx, cy in centers:
        g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / denom)
        np.maximum(out, g.astype(np.float32), out=out)
    return out


def oracle_render(layout: CharacterLayout, h: int, w: int, sigma_px: float) -> ScoreMap:
    """Render ground-truth score maps for a character layout.

    The region channel is the element-wise maximum of unit-peak Gaussians at
    each character center; the affinity channel places the same Gaussians at
    the midpoints of linked character pairs. ``sigma_px`` is measured in
    image pixels, so the half-resolution map uses a standard deviation of
    ``sigma_px / 2`` cells. Max composition keeps every value in [0, 1].
    """
    if h % 2 or w % 2:
        raise ValueError(f"oracle_render needs even image dimensions, got {h}x{w}")
    if sigma_px <= 0:
        raise ValueError("sigma_px must be > 0")
    for c in layout.characters:
        if not (0 <= c.center_x < w and 0 <= c.center_y < h):
            raise ValueError(
                f"character center ({c.center_x}, {c.center_y}) outside {h}x{w} image bounds"
            )
    hh, ww = h // 2, w // 2
    sigma_cells = sigma_px / 2.0
    region_centers = [(c.center_x / 2.0, c.center_y / 2.0) for c in layout.characters]
    affinity_centers = []
    for a, b in layout.links:
        ca, cb = layout.characters[a], layout.characters[b]
        affinity_centers.append(
            ((ca.center_x + cb.center_x) / 4.0, (ca.center_y + cb.center_y) / 4.0)
        )
    region = _gaussian_peaks(region_centers, hh, ww, sigma_cells)
    affinity = _gaussian_peaks(affinity_centers, hh, ww, sigma_cells)
    return ScoreMap.from_channels(region, affinity)


class DetectorBackbone(nn.Module):
    """Small character-region detector: RGB image to a half-resolution
    2-channel score map in [0, 1].

    Stands in for an externally trained detector; weights always come from a
    container file and are frozen in downstream training.
    """

    def __init__(self, width: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, width, kernel_size=3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, width, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(width, 2, kernel_size=3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.features(x))


def save_backbone(path: Union[str, Path], model: DetectorBackbone) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_container(path, {"kind": "detector_backbone", "width": model.features[0].out_channels}, tensors)


def load_backbone(path: Union[str, Path]) -> DetectorBackbone:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"backbone weights file not found: {path}")
    meta, tensors = load_container(path)
    if meta.get("kind") != "detector_backbone":
        raise ValueError(f"{path} does not contain detector backbone weights")
    model = DetectorBackbone(width=int(meta.get("width", 16)))
    state = {k: torch.from_numpy(v) for k, v in tensors.items()}
    model.load_state_dict(state)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


class ScoreMapProvider:
    """Computes score maps for images under a fixed configuration.

    Read-only after construction; concurrent ``compute`` calls are safe.
    """

    def __init__(self, cfg: ProviderConfig):
        self.cfg = cfg
        self._backbone: Optional[DetectorBackbone] = None
        if cfg.mode is ProviderMode.PRETRAINED_BACKBONE:
            self._backbone = load_backbone(cfg.weights_path)

    def compute(self, image: np.ndarray, layout: Optional[CharacterLayout] = None) -> ScoreMap:
        image = check_image(image, require_even=True)
        h, w = image.shape[:2]
        if self.cfg.mode is ProviderMode.SYNTHETIC_ORACLE:
            if layout is None:
                raise ValueError("the synthetic oracle needs a character layout")
            return oracle_render(layout, h, w, self.cfg.oracle_sigma_px)
        if h < BACKBONE_MIN_SIDE or w < BACKBONE_MIN_SIDE:
            raise ValueError(
                f"image {h}x{w} is below the backbone minimum of {BACKBONE_MIN_SIDE}"
            )
        with torch.no_grad():
            x = torch.from_numpy(image).permute(2, 0, 1).unsqueeze(0)
            scores = self._backbone(x)[0].permute(1, 2, 0).numpy()
        return ScoreMap(np.clip(scores, 0.0, 1.0).astype(np.float32))


def compute_score_maps(
    image: np.ndarray, cfg: ProviderConfig, layout: Optional[CharacterLayout] = None
) -> ScoreMap:
    """One-shot front end over ScoreMapProvider."""
    return ScoreMapProvider(cfg).compute(image, layout)
