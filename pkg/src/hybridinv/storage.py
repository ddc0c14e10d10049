"""On-disk formats: npz archives with manifests, 16-bit rasters, masks.

All writers are byte-deterministic for fixed inputs (np.savez pins zip
timestamps to the 1980 epoch; PNG encoding is deterministic), which the
pipeline's reproducibility contract relies on.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError


def save_archive(path: str | Path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Write named arrays plus a JSON manifest into one .npz archive."""
    if "manifest" in arrays:
        raise ValueError("'manifest' is a reserved archive key")
    payload = dict(sorted(arrays.items()))
    payload["manifest"] = np.array(json.dumps(manifest, sort_keys=True))
    np.savez(str(path), **payload)


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, manifest) from an archive written by save_archive."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"archive not found: {path}")
    with np.load(str(path)) as z:
        if "manifest" not in z:
            raise ConfigError(f"archive {path} has no manifest record")
        manifest = json.loads(str(z["manifest"]))
        arrays = {k: z[k] for k in z.files if k != "manifest"}
    return arrays, manifest


def array_checksum(*arrays: np.ndarray) -> str:
    """SHA-256 over dtype/shape/raw bytes of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- images ---------------------------------------------------------------
#
# Pixel currency is float arrays (3,H,W) in [-1,1]; values are clamped only
# at export. Rasters go to 16-bit PNG so a save/load round trip loses at
# most half a quantization step (1/65535 on the [0,1] scale).


def image_to_uint16(img: np.ndarray) -> np.ndarray:
    """Clamp to [-1,1] and quantize to uint16 (H,W,3)."""
    clamped = np.clip(img, -1.0, 1.0)
    scaled = np.round((clamped.astype(np.float64) + 1.0) * 0.5 * 65535.0)
    return scaled.astype(np.uint16).transpose(1, 2, 0)


def image_from_uint16(raster: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (raster.astype(np.float64).transpose(2, 0, 1) / 65535.0 * 2.0 - 1.0).astype(dtype)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a (3,H,W) float image as 16-bit RGB PNG."""
    raster = image_to_uint16(img)
    # cv2 stores channels as BGR
    if not cv2.imwrite(str(path), raster[:, :, ::-1]):
        raise IOError(f"failed to write image {path}")


def load_image(path: str | Path, dtype=np.float32) -> np.ndarray:
    """Read any 8/16-bit raster into a (3,H,W) float image in [-1,1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ConfigError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    raw = raw[:, :, ::-1]  # BGR -> RGB
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    return (raw.astype(np.float64).transpose(2, 0, 1) / peak * 2.0 - 1.0).astype(dtype)


# --- binary masks and label rasters ---------------------------------------


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    """DomainMask to 8-bit single-channel PNG: 255 = in-domain, 0 = out."""
    raster = (np.asarray(mask) > 0).astype(np.uint8) * 255
    if not cv2.imwrite(str(path), raster):
        raise IOError(f"failed to write mask {path}")


def load_mask(path: str | Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise ConfigError(f"cannot read mask: {path}")
    return (raw >= 128).astype(np.uint8)


def save_labels(path: str | Path, labels: np.ndarray) -> None:
    """8-bit label raster (parsing categories)."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label ids must fit in uint8")
    if not cv2.imwrite(str(path), labels.astype(np.uint8)):
        raise IOError(f"failed to write labels {path}")


def load_labels(path: str | Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise ConfigError(f"cannot read label raster: {path}")
    return raw.astype(np.int64)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())
