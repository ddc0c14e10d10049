"""Initial latent codes: coarse W-space optimization and encoder plug-ins.

The coarse path starts at the generator's mean latent and runs a short
Adam descent on the perceptual loss between the rendering and the target.
Its result serves two consumers: it is the embedding fallback when no
encoder is configured, and its per-pixel residual is the probe signal the
segmenter scores superpixels with.

Encoders are external assets, so they enter through a plug-in seam: any
callable Image -> LatentCode(Wplus) qualifies. `resolve_encoder` builds one
from a config string, either `factory:pkg.mod:attr` (an in-process factory
returning the callable) or `exec:/path/to/tool` (a subprocess that receives
an input image path and an output latent-archive path as its two
arguments).
"""

from __future__ import annotations

import importlib
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .generator import LatentCode, LatentSpace
from .metrics import PyramidOracle
from .optim import Adam
from .storage import load_archive, save_archive, save_image

COARSE_STEPS = 40
COARSE_LR = 0.05
MEAN_LATENT_SAMPLES = 1024


@dataclass
class EmbeddingResult:
    """Coarse-optimization output: final code, rendering and loss curve.

    loss_trace has steps+1 entries: the loss at initialization followed by
    the loss after each update, so trace[0] is meaningful even at steps=0
    and a longer run's trace extends a shorter run's exactly.
    """

    latent: LatentCode
    coarse_image: np.ndarray
    loss_trace: np.ndarray


def perceptual_scalar(oracle, pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(oracle.loss_field(pred, target)))


def coarse_invert(state, target: np.ndarray, steps: int = COARSE_STEPS,
                  lr: float = COARSE_LR, seed: int = 0,
                  oracle=None) -> EmbeddingResult:
    """Optimize a single W vector to reconstruct `target`. Never touches theta."""
    oracle = oracle or PyramidOracle()
    r = state.output_resolution
    if target.shape != (3, r, r):
        raise ConfigError(f"target shape {target.shape} != (3, {r}, {r})")
    if steps < 0:
        raise ConfigError("steps must be >= 0")
    target = target.astype(np.float32)

    w = state.mean_latent(MEAN_LATENT_SAMPLES, seed=seed).values.copy()
    params = {"w": w}
    opt = Adam(params, lr=lr)
    n_pix = target.shape[1] * target.shape[2]
    g_field = np.full(target.shape[1:], 1.0 / n_pix, dtype=np.float32)

    trace = []
    for _ in range(steps):
        rows = state.broadcast_latent(LatentCode.w(params["w"]))
        img, cache = state.forward_cached(rows)
        trace.append(perceptual_scalar(oracle, img, target))
        g_img = oracle.loss_field_vjp(img, target, g_field)
        grads = state.backward(cache, g_img)
        opt.step({"w": grads.w_rows.sum(axis=0)})

    latent = LatentCode.w(params["w"].copy())
    coarse = state.synthesize(latent)
    trace.append(perceptual_scalar(oracle, coarse, target))
    return EmbeddingResult(latent=latent, coarse_image=coarse,
                           loss_trace=np.asarray(trace, dtype=np.float64))


def lift_to_wplus(latent: LatentCode, n_layers: int) -> LatentCode:
    """Replicate a W vector into identical W+ rows (W is a subset of W+)."""
    if latent.space == LatentSpace.WPLUS:
        return latent.copy()
    if latent.space != LatentSpace.W:
        raise ConfigError(f"cannot lift {latent.space.value} directly; map Z first")
    return LatentCode.wplus(np.tile(latent.values, (n_layers, 1)))


def embed(encoder, state, target: np.ndarray, steps: int = COARSE_STEPS,
          lr: float = COARSE_LR, seed: int = 0, oracle=None) -> LatentCode:
    """Produce a W+ code for `target`, via the encoder or the coarse path."""
    if encoder is None:
        result = coarse_invert(state, target, steps=steps, lr=lr, seed=seed,
                               oracle=oracle)
        return lift_to_wplus(result.latent, state.n_layers)
    code = encoder(target)
    if not isinstance(code, LatentCode):
        raise ConfigError("encoder must return a LatentCode")
    if code.space == LatentSpace.W:
        code = lift_to_wplus(code, state.n_layers)
    if code.space != LatentSpace.WPLUS:
        raise ConfigError(f"encoder returned a {code.space.value} code")
    want = (state.n_layers, state.d_latent)
    if code.values.shape != want:
        raise ConfigError(f"encoder output shape {code.values.shape} != {want}")
    return code.copy()


# --- latent persistence -----------------------------------------------------


def save_latent(path: str | Path, latent: LatentCode, fingerprint: str = "") -> None:
    save_archive(path, {"values": latent.values}, {
        "kind": "hybridinv-latent",
        "space": latent.space.value,
        "shape": list(latent.values.shape),
        "generator_fingerprint": fingerprint,
    })


def load_latent(path: str | Path, expect_fingerprint: str | None = None) -> LatentCode:
    arrays, manifest = load_archive(path)
    if manifest.get("kind") != "hybridinv-latent":
        raise ConfigError(f"{path} is not a latent archive")
    if expect_fingerprint is not None:
        stored = manifest.get("generator_fingerprint", "")
        if stored and stored != expect_fingerprint:
            raise ConfigError(
                f"latent bound to generator {stored}, expected {expect_fingerprint}")
    return LatentCode(LatentSpace(manifest["space"]), arrays["values"])


# --- encoder plug-in discovery ------------------------------------------------


class ExecutableEncoder:
    """Adapter for out-of-process encoders.

    The tool is invoked as `tool <input.png> <output latent archive>`; the
    archive must round-trip through load_latent.
    """

    def __init__(self, executable: str | Path):
        self.executable = Path(executable)
        if not self.executable.exists():
            raise ConfigError(f"encoder executable not found: {self.executable}")

    def __call__(self, target: np.ndarray) -> LatentCode:
        with tempfile.TemporaryDirectory(prefix="hybridinv-enc-") as tmp:
            img = Path(tmp) / "input.png"
            out = Path(tmp) / "latent.npz"
            save_image(img, target)
            proc = subprocess.run([str(self.executable), str(img), str(out)],
                                  capture_output=True, text=True)
            if proc.returncode != 0:
                raise ConfigError(
                    f"encoder {self.executable} failed ({proc.returncode}): "
                    f"{proc.stderr.strip()}")
            return load_latent(out)


def resolve_encoder(spec: str):
    """Build an encoder from `factory:module:attr` or `exec:path`; '' -> None."""
    if not spec:
        return None
    kind, _, rest = spec.partition(":")
    if kind == "factory":
        mod_name, _, attr = rest.rpartition(":")
        if not mod_name:
            raise ConfigError("factory spec must be factory:module:attr")
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load encoder factory {rest}: {exc}") from exc
        return factory()
    if kind == "exec":
        return ExecutableEncoder(rest)
    raise ConfigError(f"unknown encoder scheme '{kind}' (use factory: or exec:)")
