"""The mask-attention classifier and its baselines.

The main variant mixes the two score map channels with a learned
convolution, rectifies, upsamples the result by 2x to image resolution, and
multiplies it into the RGB input before an 18-layer residual head produces a
single logit. The ablation drops the masking; the linear baseline classifies
flattened score map features directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
import torchvision
from torch import nn

from .checkpoint import load_container, save_container
from .datamodel import ScoreMap

DEFAULT_KERNEL_SIZE = 33
DEFAULT_INIT_SIGMA_PX = 8.0
CANONICAL_MAP_SIDE = 112
BINARIZED_FEATURE_LEN = 2 * CANONICAL_MAP_SIDE * CANONICAL_MAP_SIDE


class ModelVariant(str, Enum):
    CRAFT_MASKED = "craft_masked"
    UNMASKED_RESNET = "unmasked_resnet"
    BINARIZED_LINEAR = "binarized_linear"

    @classmethod
    def parse(cls, value: str) -> "ModelVariant":
        return cls(value.replace("-", "_"))


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian stencil.

    Entries are proportional to exp(-(dx^2 + dy^2) / (2 sigma^2)) measured
    from the center cell and sum to one, so convolving a constant field
    leaves it unchanged (away from borders).
    """
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    half = size // 2
    coords = np.arange(size, dtype=np.float64) - half
    sq = coords[:, None] ** 2 + coords[None, :] ** 2
    kernel = np.exp(-sq / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _axis_lerp_indices(n: int, dtype: torch.dtype, device: torch.device):
    # Half-pixel center sampling: output i reads source coordinate
    # (i + 0.5)/2 - 0.5, clamped to the valid range (no corner pinning).
    s = (torch.arange(2 * n, dtype=dtype, device=device) + 0.5) / 2.0 - 0.5
    s = s.clamp(0.0, float(n - 1))
    i0 = s.floor().to(torch.long)
    i1 = torch.clamp(i0 + 1, max=n - 1)
    w = s - i0.to(dtype)
    return i0, i1, w


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    """Bilinear 2x upsampling over the last two dimensions.

    Written in the lerp form v0 + w * (v1 - v0), which reproduces constants
    bit-exactly and never leaves the input's [min, max] interval.
    """
    nh, nw = x.shape[-2], x.shape[-1]
    i0, i1, wh = _axis_lerp_indices(nh, x.dtype, x.device)
    lo = x.index_select(-2, i0)
    hi = x.index_select(-2, i1)
    x = lo + wh.view(-1, 1) * (hi - lo)
    j0, j1, ww = _axis_lerp_indices(nw, x.dtype, x.device)
    lo = x.index_select(-1, j0)
    hi = x.index_select(-1, j1)
    return lo + ww * (hi - lo)


@dataclass(frozen=True)
class AttentionParams:
    """Weights of the score-map mixing layer.

    ``kernel`` has shape (2, k, k): one k x k stencil per score channel,
    combined into the single-channel mask response.
    """

    kernel: np.ndarray
    bias: float
    init_sigma_px: float = DEFAULT_INIT_SIGMA_PX

    def __post_init__(self) -> None:
        k = self.kernel
        if k.ndim != 3 or k.shape[0] != 2 or k.shape[1] != k.shape[2]:
            raise ValueError(f"kernel must have shape (2, k, k), got {k.shape}")
        if k.shape[1] % 2 == 0:
            raise ValueError("kernel size must be odd")
        if not (np.isfinite(k).all() and np.isfinite(self.bias)):
            raise ValueError("attention parameters must be finite")

    @property
    def kernel_size(self) -> int:
        return int(self.kernel.shape[1])

    @classmethod
    def gaussian_init(
        cls, size: int = DEFAULT_KERNEL_SIZE, sigma: float = DEFAULT_INIT_SIGMA_PX
    ) -> "AttentionParams":
        """Both channels share the normalized Gaussian at half weight, so a
        constant score map of value c yields a mask of c away from borders."""
        g = gaussian_kernel(size, sigma) / 2.0
        return cls(kernel=np.stack([g, g]).astype(np.float32), bias=0.0, init_sigma_px=sigma)


class AttentionMixer(nn.Module):
    """Conv + ReLU + 2x bilinear upsample: score maps to an image-sized mask."""

    def __init__(
        self,
        kernel_size: int = DEFAULT_KERNEL_SIZE,
        init_sigma_px: float = DEFAULT_INIT_SIGMA_PX,
    ):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.init_sigma_px = init_sigma_px
        self.conv = nn.Conv2d(2, 1, kernel_size=kernel_size, padding=kernel_size // 2, bias=True)
        init = AttentionParams.gaussian_init(kernel_size, init_sigma_px)
        with torch.no_grad():
            self.conv.weight.copy_(torch.from_numpy(init.kernel).unsqueeze(0))
            self.conv.bias.zero_()

    def forward(self, score_map: torch.Tensor) -> torch.Tensor:
        return upsample2x(F.relu(self.conv(score_map)))

    def get_params(self) -> AttentionParams:
        return AttentionParams(
            kernel=self.conv.weight.detach()[0].cpu().numpy().copy(),
            bias=float(self.conv.bias.detach().item()),
            init_sigma_px=self.init_sigma_px,
        )

    def set_params(self, params: AttentionParams) -> None:
        with torch.no_grad():
            self.conv.weight.copy_(torch.from_numpy(np.asarray(params.kernel)).unsqueeze(0))
            self.conv.bias.fill_(params.bias)


def attention_mask(score_map: ScoreMap, params: AttentionParams) -> np.ndarray:
    """Image-resolution non-negative mask for one score map."""
    mixer = AttentionMixer(params.kernel_size, params.init_sigma_px)
    mixer.set_params(params)
    mixer.eval()
    with torch.no_grad():
        t = torch.from_numpy(np.ascontiguousarray(score_map.data, dtype=np.float32))
        mask = mixer(t.permute(2, 0, 1).unsqueeze(0))
    return mask[0, 0].numpy()


def canonical_map_tensor(score_map: torch.Tensor) -> torch.Tensor:
    """Resize a (B, 2, hh, ww) score map batch to the canonical grid."""
    if score_map.shape[-2:] == (CANONICAL_MAP_SIDE, CANONICAL_MAP_SIDE):
        return score_map
    return F.interpolate(
        score_map,
        size=(CANONICAL_MAP_SIDE, CANONICAL_MAP_SIDE),
        mode="bilinear",
        align_corners=False,
    )


def binarized_features(score_map: ScoreMap) -> np.ndarray:
    """Flatten a score map into the linear baseline's feature vector.

    The map is resized to the canonical grid first; the output is row-major
    with the whole region channel ahead of the affinity channel.
    """
    t = torch.from_numpy(np.ascontiguousarray(score_map.data, dtype=np.float32))
    t = canonical_map_tensor(t.permute(2, 0, 1).unsqueeze(0))
    return t[0].reshape(-1).numpy().copy()


class OverlayTextNet(nn.Module):
    """One of the three classifier variants, producing a single logit."""

    def __init__(
        self,
        variant: ModelVariant = ModelVariant.CRAFT_MASKED,
        attention_kernel_size: int = DEFAULT_KERNEL_SIZE,
        init_sigma_px: float = DEFAULT_INIT_SIGMA_PX,
    ):
        super().__init__()
        self.variant = ModelVariant(variant)
        self.attention_kernel_size = attention_kernel_size
        self.init_sigma_px = init_sigma_px
        self.mixer: Optional[AttentionMixer] = None
        self.head: Optional[nn.Module] = None
        self.linear: Optional[nn.Linear] = None
        if self.variant is ModelVariant.CRAFT_MASKED:
            self.mixer = AttentionMixer(attention_kernel_size, init_sigma_px)
            self.head = torchvision.models.resnet18(weights=None, num_classes=1)
        elif self.variant is ModelVariant.UNMASKED_RESNET:
            self.head = torchvision.models.resnet18(weights=None, num_classes=1)
        else:
            self.linear = nn.Linear(BINARIZED_FEATURE_LEN, 1)

    def forward(self, image: torch.Tensor, score_map: torch.Tensor) -> torch.Tensor:
        """Logits for a batch; image (B, 3, h, w), score map (B, 2, h/2, w/2)."""
        if self.variant is ModelVariant.BINARIZED_LINEAR:
            feats = canonical_map_tensor(score_map).reshape(score_map.shape[0], -1)
            return self.linear(feats).squeeze(1)
        if self.variant is ModelVariant.CRAFT_MASKED:
            mask = self.mixer(score_map)
            if mask.shape[-2:] != image.shape[-2:]:
                raise ValueError(
                    f"mask {tuple(mask.shape[-2:])} does not match image "
                    f"{tuple(image.shape[-2:])}; score map and image disagree"
                )
            image = image * mask
        return self.head(image).squeeze(1)

    def predict_probability(self, image: torch.Tensor, score_map: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward(image, score_map))


def forward(
    image: np.ndarray,
    score_map: ScoreMap,
    model: OverlayTextNet,
) -> float:
    """Probability that a single image carries overlaid text."""
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1).unsqueeze(0)
        m = torch.from_numpy(np.ascontiguousarray(score_map.data, dtype=np.float32))
        m = m.permute(2, 0, 1).unsqueeze(0)
        return float(model.predict_probability(x, m).item())


def save_model(
    path: Union[str, Path], model: OverlayTextNet, extra_meta: Optional[Dict[str, Any]] = None
) -> None:
    meta: Dict[str, Any] = {
        "kind": "overlay_text_net",
        "variant": model.variant.value,
        "attention_kernel_size": model.attention_kernel_size,
        "init_sigma_px": model.init_sigma_px,
        "gaussian_init_normalization": "sum_to_one",
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_container(path, meta, tensors)


def load_model(path: Union[str, Path]) -> Tuple[OverlayTextNet, Dict[str, Any]]:
    meta, tensors = load_container(path)
    if meta.get("kind") != "overlay_text_net":
        raise ValueError(f"{path} does not contain classifier weights")
    model = OverlayTextNet(
        variant=ModelVariant(meta["variant"]),
        attention_kernel_size=int(meta.get("attention_kernel_size", DEFAULT_KERNEL_SIZE)),
        init_sigma_px=float(meta.get("init_sigma_px", DEFAULT_INIT_SIGMA_PX)),
    )
    state = {}
    for k, v in tensors.items():
        ref = model.state_dict()[k]
        state[k] = torch.from_numpy(v).to(ref.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, meta
