"""Latent-direction editing over refined inversion artifacts.

An edit moves the frozen latent along a stored direction and re-renders
with the tuned weights, the optimized feature and the mask all held fixed.
Because the injected feature is blended in after the walk, out-of-domain
content is bit-stable under any edit strength — that is the point of
refining foreign regions in feature space rather than weight space.

Directions are input files (differences of latents, externally learned
attribute vectors, ...); nothing here computes them beyond a two-point
synthetic helper used by tests and demos.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .generator import FeatureMap, LatentCode, LatentSpace
from .storage import load_archive, save_archive


@dataclass
class EditDirection:
    """A named displacement in W or W+; stored as given (see unit_norm)."""

    name: str
    vector: np.ndarray
    space: LatentSpace
    unit_norm: bool = False

    def __post_init__(self):
        self.vector = np.asarray(self.vector)
        if not np.all(np.isfinite(self.vector)):
            raise ConfigError("direction contains non-finite entries")
        if self.space == LatentSpace.W and self.vector.ndim != 1:
            raise ConfigError("W direction must be a vector")
        if self.space == LatentSpace.WPLUS and self.vector.ndim != 2:
            raise ConfigError("Wplus direction must be a matrix")
        if self.space == LatentSpace.Z:
            raise ConfigError("directions live in W or Wplus, not Z")


def apply_direction(latent: LatentCode, direction: EditDirection,
                    alpha: float) -> LatentCode:
    """w_edit = w + alpha * d, broadcasting W against Wplus as needed."""
    if latent.space == LatentSpace.Z:
        raise ConfigError("map Z codes to W before editing")
    lv, dv = latent.values, direction.vector
    if latent.space == LatentSpace.W and direction.space == LatentSpace.W:
        if lv.shape != dv.shape:
            raise ConfigError(f"shape mismatch {lv.shape} vs {dv.shape}")
        return LatentCode.w(lv + alpha * dv)
    # at least one side is Wplus: broadcast the other
    if latent.space == LatentSpace.W:
        lv = np.tile(lv, (dv.shape[0], 1))
    if direction.space == LatentSpace.W:
        dv = np.tile(dv, (lv.shape[0], 1))
    if lv.shape != dv.shape:
        raise ConfigError(f"shape mismatch {lv.shape} vs {dv.shape}")
    return LatentCode.wplus(lv + alpha * dv)


def edit(state, latent: LatentCode, feature: FeatureMap, mask_feat: np.ndarray,
         direction: EditDirection, alpha: float) -> np.ndarray:
    """Render the edited latent with frozen (theta*, f*, mask)."""
    walked = apply_direction(latent, direction, alpha)
    return state.synthesize_with_injection(walked, feature, mask_feat)


def synthetic_direction(state, name: str, seed: int,
                        normalize: bool = True) -> EditDirection:
    """Two-point W difference: a cheap stand-in for a learned direction."""
    rng = np.random.default_rng(seed)
    w_a = state.map_z(rng.standard_normal(state.d_latent))
    w_b = state.map_z(rng.standard_normal(state.d_latent))
    vec = (w_a - w_b).astype(np.float64)
    if normalize:
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ConfigError("degenerate direction (zero difference)")
        vec = vec / norm
    return EditDirection(name=name, vector=vec, space=LatentSpace.W,
                         unit_norm=normalize)


def save_direction(path: str | Path, direction: EditDirection) -> None:
    save_archive(path, {"vector": direction.vector}, {
        "kind": "hybridinv-direction",
        "name": direction.name,
        "space": direction.space.value,
        "d_latent": int(direction.vector.shape[-1]),
        "unit_norm": direction.unit_norm,
    })


def load_direction(path: str | Path) -> EditDirection:
    arrays, manifest = load_archive(path)
    if manifest.get("kind") != "hybridinv-direction":
        raise ConfigError(f"{path} is not a direction archive")
    return EditDirection(name=manifest["name"], vector=arrays["vector"],
                         space=LatentSpace(manifest["space"]),
                         unit_norm=bool(manifest.get("unit_norm", False)))
