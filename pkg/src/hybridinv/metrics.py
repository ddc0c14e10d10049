"""Reconstruction metrics and differentiable perceptual oracles.

Scalar metrics (MSE, PSNR) operate on images rescaled from the internal
[-1, 1] currency to [0, 1] and clamped, so values are comparable across
sources regardless of overshoot.

A *perceptual oracle* is any object with

    loss_field(pred, target) -> (H, W) per-pixel dissimilarity field
    loss_field_vjp(pred, target, g_field) -> gradient w.r.t. pred

such that the field is everywhere >= 0 and identically zero iff the two
images are equal. Refinement consumes the field through spatial masks, so
oracles must keep per-pixel locality of that guarantee. Two are provided:
a pointwise channel-mean squared difference, and a pyramid variant that
adds block-averaged copies of the same difference field, spreading the
signal of fine-grained mismatch (noise, texture) over neighbourhoods.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import ops
from .errors import ConfigError


def to_unit(img: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] image to [0, 1] with clamping."""
    return (np.clip(img, -1.0, 1.0) + 1.0) / 2.0


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = to_unit(pred) - to_unit(target)
    return float(np.mean(d * d))


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] scale; inf if equal."""
    err = mse(pred, target)
    if err == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(err))


def raw_l2_field(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Channel-mean squared difference of raw (unrescaled) images."""
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return np.mean(d * d, axis=0)


class PointwiseOracle:
    """Per-pixel channel-mean squared difference; receptive field of 1."""

    name = "pointwise"

    def loss_field(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        return raw_l2_field(pred, target)

    def spatial_map(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        return self.loss_field(pred, target)

    def loss_field_vjp(self, pred: np.ndarray, target: np.ndarray,
                       g_field: np.ndarray) -> np.ndarray:
        c = pred.shape[0]
        return (2.0 / c) * (pred - target) * g_field[None, :, :]


class PyramidOracle:
    """Squared-difference field averaged over itself plus pooled copies.

    Each pooling factor block-averages the pointwise field and replicates
    it back to full resolution; the output is the mean of all scales. The
    coarse terms give every pixel inside a mismatched neighbourhood a
    comparable score even when the pointwise error is spatially erratic,
    which is what region scoring needs to rate noise-corrupted patches
    uniformly high.
    """

    name = "pyramid"

    def __init__(self, factors: tuple[int, ...] = (2, 4, 8)):
        if any(f < 2 for f in factors):
            raise ConfigError("pooling factors must be >= 2")
        self.factors = tuple(int(f) for f in factors)

    def _check(self, pred: np.ndarray) -> None:
        h, w = pred.shape[1:]
        for f in self.factors:
            if h % f or w % f:
                raise ConfigError(f"pooling factor {f} does not divide {h}x{w}")

    def loss_field(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        self._check(pred)
        d = raw_l2_field(pred, target)
        acc = d.copy()
        for f in self.factors:
            acc += ops.upsample_field(ops.avgpool_field(d, f), f)
        return acc / (1 + len(self.factors))

    def spatial_map(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Region-scoring distance map: pooled levels only, upsampled back.

        Dropping the pointwise term matters for min-max normalized scores.
        A noise-corrupted region has erratic per-pixel error; its outliers
        would own the normalization max and drag every region mean down.
        Pooling first rates each neighbourhood by its average mismatch, so
        corrupted regions score uniformly near the max.
        """
        self._check(pred)
        d = raw_l2_field(pred, target)
        acc = np.zeros_like(d)
        for f in self.factors:
            acc += ops.upsample_field(ops.avgpool_field(d, f), f)
        return acc / len(self.factors)

    def loss_field_vjp(self, pred: np.ndarray, target: np.ndarray,
                       g_field: np.ndarray) -> np.ndarray:
        self._check(pred)
        g_d = g_field.copy()
        for f in self.factors:
            g_d += ops.avgpool_field_vjp(ops.upsample_field_vjp(g_field, f), f)
        g_d /= 1 + len(self.factors)
        c = pred.shape[0]
        return (2.0 / c) * (pred - target) * g_d[None, :, :]


class HuberOracle:
    """Pyramid oracle with a bounded per-pixel penalty.

    Pixel residual magnitudes beyond `delta` contribute linearly instead
    of quadratically, so a region the generator cannot represent at all
    (an occluder, a pasted artifact) cannot dominate the objective and
    drag a short probe fit away from the rest of the image. Deep
    perceptual metrics get the same effect for free from their bounded
    activations; this is the raw-pixel stand-in.
    """

    name = "huber"

    def __init__(self, delta: float = 0.25, sat: float = 0.01,
                 factors: tuple[int, ...] = (2, 4, 8)):
        if delta <= 0:
            raise ConfigError("delta must be > 0")
        if sat <= 0:
            raise ConfigError("sat must be > 0")
        if any(f < 2 for f in factors):
            raise ConfigError("pooling factors must be >= 2")
        self.delta = float(delta)
        self.sat = float(sat)
        self.factors = tuple(int(f) for f in factors)

    def _check(self, pred: np.ndarray) -> None:
        h, w = pred.shape[1:]
        for f in self.factors:
            if h % f or w % f:
                raise ConfigError(f"resolution {h}x{w} not divisible by {f}")

    def _field(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        d = raw_l2_field(pred, target)
        rho = np.sqrt(d)
        return np.where(rho <= self.delta, d,
                        2.0 * self.delta * rho - self.delta ** 2)

    def loss_field(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        self._check(pred)
        f = self._field(pred, target)
        acc = f.copy()
        for fac in self.factors:
            acc += ops.upsample_field(ops.avgpool_field(f, fac), fac)
        return acc / (1 + len(self.factors))

    def spatial_map(self, pred: np.ndarray, target: np.ndarray) -> np.ndarray:
        """Saturated, locally averaged mismatch field for region scoring.

        x/(x+sat) concentrates any genuinely unrepresentable region near
        the top of the scale regardless of how erratic its per-pixel
        error is, while staying linear (ratio-preserving) for the small
        residuals of a well-fit image. The 3x3 mean then rates each
        pixel by its neighbourhood so single-pixel outliers cannot own
        the normalization max.
        """
        self._check(pred)
        f = self._field(pred, target)
        g = f / (f + self.sat)
        return ndimage.uniform_filter(g, 3, mode="nearest")

    def loss_field_vjp(self, pred: np.ndarray, target: np.ndarray,
                       g_field: np.ndarray) -> np.ndarray:
        self._check(pred)
        g_f = g_field.copy()
        for fac in self.factors:
            g_f += ops.avgpool_field_vjp(ops.upsample_field_vjp(g_field, fac),
                                         fac)
        g_f /= 1 + len(self.factors)
        rho = np.sqrt(raw_l2_field(pred, target))
        # d(huber)/d(d) is 1 in the quadratic region, delta/rho beyond it
        scale = np.where(rho <= self.delta, 1.0,
                         self.delta / np.maximum(rho, 1e-12))
        c = pred.shape[0]
        return (2.0 / c) * (pred - target) * (g_f * scale)[None, :, :]


def make_oracle(name: str, factors: tuple[int, ...] = (2, 4, 8)):
    if name == "pointwise":
        return PointwiseOracle()
    if name == "pyramid":
        return PyramidOracle(factors)
    if name == "huber":
        return HuberOracle(factors=factors)
    raise ConfigError(f"unknown perceptual oracle '{name}'")


@dataclass
class EvalRecord:
    """Per-image quality record; psnr always equals -10*log10(mse)."""

    name: str
    mse: float
    psnr: float
    perceptual: float = float("nan")
    wall_time: float = 0.0
    fingerprint: str = ""


def evaluate_pair(pred: np.ndarray, target: np.ndarray, name: str = "",
                  oracle=None, wall_time: float = 0.0,
                  fingerprint: str = "") -> EvalRecord:
    perceptual = float("nan")
    if oracle is not None:
        perceptual = float(np.mean(oracle.loss_field(pred, target)))
    return EvalRecord(name=name, mse=mse(pred, target), psnr=psnr(pred, target),
                      perceptual=perceptual, wall_time=wall_time,
                      fingerprint=fingerprint)


def format_record(rec: EvalRecord, include_time: bool = True) -> str:
    """One structured-text line per record (key=value fields)."""
    parts = [f"name={rec.name or '-'}", f"mse={rec.mse:.8e}", f"psnr={rec.psnr:.4f}"]
    if np.isfinite(rec.perceptual):
        parts.append(f"perceptual={rec.perceptual:.8e}")
    if include_time:
        parts.append(f"wall_time={rec.wall_time:.3f}")
    if rec.fingerprint:
        parts.append(f"config={rec.fingerprint}")
    return " ".join(parts)


def evaluate_dirs(pred_dir: str | Path, target_dir: str | Path,
                  oracle=None) -> tuple[list[EvalRecord], dict]:
    """Pair equally named PNGs from two directories and score them.

    Returns per-image records (sorted by name) plus aggregate means.
    Images present on only one side are an error.
    """
    from .storage import load_image

    pred_dir, target_dir = Path(pred_dir), Path(target_dir)
    preds = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    targets = {p.name: p for p in sorted(target_dir.glob("*.png"))}
    if not preds:
        raise ConfigError(f"no .png files in {pred_dir}")
    if set(preds) != set(targets):
        missing = sorted(set(preds) ^ set(targets))
        raise ConfigError(f"unpaired images: {missing}")
    records = [evaluate_pair(load_image(preds[n]), load_image(targets[n]),
                             name=n, oracle=oracle)
               for n in sorted(preds)]
    finite = [r.psnr for r in records if np.isfinite(r.psnr)]
    aggregate = {
        "count": len(records),
        "mse_mean": float(np.mean([r.mse for r in records])),
        "psnr_mean": float(np.mean(finite)) if finite else float("inf"),
    }
    if oracle is not None:
        aggregate["perceptual_mean"] = float(np.mean([r.perceptual for r in records]))
    return records, aggregate
