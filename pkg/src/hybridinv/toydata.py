"""Deterministic desk-scale test instances.

The canonical hard case for hybrid refinement is a generator-reachable
image with a pasted patch the generator cannot produce: everything outside
the patch should be recoverable by weight tuning, the patch itself only by
feature optimization. `noise_patch_instance` builds exactly that, plus the
ground-truth region mask and a matching parsing raster (patch labeled
`occlusion`, i.e. out-of-domain).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .generator import LatentCode
from .segmentation import ParsingMask, make_parsing


@dataclass
class ToyInstance:
    name: str
    target: np.ndarray
    mask_true: np.ndarray        # 1 = in-domain, 0 = pasted patch
    latent: LatentCode           # W code that generated the clean part
    patch_box: tuple[int, int, int, int]  # y0, y1, x0, x1

    def parsing(self, tau1: float = 0.7, tau2: float = 0.8) -> ParsingMask:
        labels = np.ones(self.mask_true.shape, dtype=np.uint8)  # skin
        labels[self.mask_true == 0] = 10                        # occlusion
        return make_parsing(labels, tau1, tau2)


def sample_latent(state, seed: int) -> LatentCode:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(state.d_latent)
    return LatentCode.w(state.map_z(z))


def reachable_image(state, seed: int) -> tuple[np.ndarray, LatentCode]:
    latent = sample_latent(state, seed)
    return state.synthesize(latent), latent


def noise_patch_instance(state, seed: int, patch_fraction: float = 0.2,
                         name: str = "") -> ToyInstance:
    """Generator image with a uniform-noise square covering ~patch_fraction."""
    if not 0 < patch_fraction < 1:
        raise ValueError("patch_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    target, latent = reachable_image(state, seed)
    target = target.copy()
    r = state.output_resolution
    side = max(2, int(round(np.sqrt(patch_fraction) * r)))
    y0 = int(rng.integers(0, r - side + 1))
    x0 = int(rng.integers(0, r - side + 1))
    patch = rng.uniform(-1.0, 1.0, size=(3, side, side)).astype(target.dtype)
    target[:, y0:y0 + side, x0:x0 + side] = patch
    mask = np.ones((r, r), dtype=np.uint8)
    mask[y0:y0 + side, x0:x0 + side] = 0
    return ToyInstance(name=name or f"patch{seed}", target=target,
                       mask_true=mask, latent=latent,
                       patch_box=(y0, y0 + side, x0, x0 + side))


def make_instances(state, n: int, seed: int = 0,
                   patch_fraction: float = 0.2) -> list[ToyInstance]:
    return [noise_patch_instance(state, seed + i, patch_fraction,
                                 name=f"toy{i:02d}") for i in range(n)]
