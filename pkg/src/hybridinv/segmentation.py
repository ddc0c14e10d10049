"""Region segmentation into in-domain and out-of-domain pixels.

The decision signal is reconstruction difficulty: pixels a short coarse
inversion cannot reproduce are likely foreign to the generator's domain.
The pipeline partitions the image into superpixels, averages a normalized
per-pixel residual map over each partition, thresholds those scores, and
intersects the result with a semantic parsing mask:

    superpixels  +  residual map  ->  per-partition scores
    scores >= tau                ->  partition marked out-of-domain
    mask = parsing_in_mask * superpixel_mask

Superpixels come from a self-contained SLIC: k-means over (L, a, b,
compactness-scaled x, y) features with grid seeding, followed by a
connectivity pass that splits stray same-cluster islands into their own
partitions and absorbs fragments smaller than a quarter of the mean
partition area into the neighbor they touch most.

Parsing is an oracle seam: tests and desk runs use label rasters shipped
beside each image (or a trivial all-in-domain parser); a pretrained face
parser can be plugged in by producing the same ParsingMask structure.
Masks are plain uint8 arrays with 1 = in-domain, 0 = out-of-domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .embedding import coarse_invert
from .errors import ConfigError, StageError
from .metrics import HuberOracle, PyramidOracle

TAU_DEFAULT = 0.7
TAU_FINE = 0.8
SLIC_K = 100
SLIC_COMPACTNESS = 10.0
SLIC_ITERS = 10

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# label raster values -> category names; eyes/nose/mouth carry the stricter
# threshold because reconstruction errors there are perceptually critical
DEFAULT_LABEL_NAMES = {
    0: "background", 1: "skin", 2: "hair", 3: "eyes", 4: "nose", 5: "mouth",
    6: "brows", 7: "ears", 8: "clothing", 9: "headwear", 10: "occlusion",
}
IN_DOMAIN_CATEGORIES = ("skin", "hair", "eyes", "nose", "mouth", "brows", "ears")
FINE_CATEGORIES = ("eyes", "nose", "mouth")


# --- types -------------------------------------------------------------------


@dataclass
class SuperpixelPartition:
    """Dense partition of the pixel grid: labels in [0, count), 4-connected."""

    labels: np.ndarray
    count: int

    def areas(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)

    def mask(self, i: int) -> np.ndarray:
        return self.labels == i

    def validate(self) -> None:
        if self.labels.min() < 0 or self.labels.max() >= self.count:
            raise StageError("segment", "partition labels out of range")
        if (self.areas() == 0).any():
            raise StageError("segment", "empty partition")
        for i in range(self.count):
            _, n = ndimage.label(self.mask(i), structure=FOUR_CONN)
            if n != 1:
                raise StageError("segment", f"partition {i} is not 4-connected")


@dataclass
class LossMap:
    values: np.ndarray
    normalized: bool = False


@dataclass
class ParsingMask:
    """Semantic category raster with per-category domain and threshold."""

    labels: np.ndarray
    category_names: dict[int, str]
    category_domain: dict[str, str]
    category_threshold: dict[str, float]

    def __post_init__(self):
        present = set(np.unique(self.labels).tolist())
        unknown = present - set(self.category_names)
        if unknown:
            raise ConfigError(f"parsing labels without category: {sorted(unknown)}")
        for name in self.category_names.values():
            if name not in self.category_domain:
                raise ConfigError(f"category '{name}' has no domain assignment")
            if self.category_domain[name] not in ("in", "out"):
                raise ConfigError(f"category '{name}' domain must be in/out")
            if name not in self.category_threshold:
                raise ConfigError(f"category '{name}' has no threshold")

    def in_mask(self) -> np.ndarray:
        """m_p: 1 where the pixel's category is declared in-domain."""
        out = np.zeros(self.labels.shape, dtype=np.uint8)
        for label, name in self.category_names.items():
            if self.category_domain[name] == "in":
                out[self.labels == label] = 1
        return out

    def threshold_raster(self) -> np.ndarray:
        taus = np.zeros(self.labels.shape, dtype=np.float64)
        for label, name in self.category_names.items():
            taus[self.labels == label] = self.category_threshold[name]
        return taus


@dataclass
class SegmentationResult:
    mask: np.ndarray
    mask_super: np.ndarray
    partition: SuperpixelPartition
    lmap: LossMap
    scores: np.ndarray
    parsing: ParsingMask
    coarse_image: np.ndarray | None = None


def make_parsing(labels: np.ndarray, tau1: float = TAU_DEFAULT,
                 tau2: float = TAU_FINE) -> ParsingMask:
    """ParsingMask over the default face category table."""
    domain = {name: ("in" if name in IN_DOMAIN_CATEGORIES else "out")
              for name in DEFAULT_LABEL_NAMES.values()}
    threshold = {name: (tau2 if name in FINE_CATEGORIES else tau1)
                 for name in DEFAULT_LABEL_NAMES.values()}
    return ParsingMask(np.asarray(labels), dict(DEFAULT_LABEL_NAMES), domain, threshold)


def identity_parsing(h: int, w: int, tau1: float = TAU_DEFAULT,
                     tau2: float = TAU_FINE) -> ParsingMask:
    """All-skin parsing: everything in-domain, uniform threshold tau1."""
    return make_parsing(np.ones((h, w), dtype=np.uint8), tau1, tau2)


def save_parsing(path: str | Path, parsing: ParsingMask) -> None:
    """Label raster as 8-bit PNG plus a `.categories.txt` sidecar."""
    path = Path(path)
    raster = parsing.labels.astype(np.uint8)
    if not cv2.imwrite(str(path), raster):
        raise IOError(f"cannot write {path}")
    lines = ["# label category domain tau"]
    for label in sorted(parsing.category_names):
        name = parsing.category_names[label]
        lines.append(f"{label} {name} {parsing.category_domain[name]} "
                     f"{parsing.category_threshold[name]}")
    path.with_suffix(".categories.txt").write_text("\n".join(lines) + "\n")


def load_parsing(path: str | Path) -> ParsingMask:
    path = Path(path)
    raster = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raster is None:
        raise ConfigError(f"cannot read parsing raster {path}")
    sidecar = path.with_suffix(".categories.txt")
    if not sidecar.exists():
        raise ConfigError(f"missing parsing sidecar {sidecar}")
    names: dict[int, str] = {}
    domain: dict[str, str] = {}
    threshold: dict[str, float] = {}
    for line in sidecar.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        label_s, name, dom, tau_s = line.split()
        names[int(label_s)] = name
        domain[name] = dom
        threshold[name] = float(tau_s)
    return ParsingMask(raster.astype(np.int64), names, domain, threshold)


# --- SLIC superpixels ----------------------------------------------------------


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """(3,H,W) image in [-1,1] -> (H,W,3) CIELAB (L in [0,100])."""
    rgb = np.clip((image.astype(np.float32) + 1.0) / 2.0, 0.0, 1.0)
    return cv2.cvtColor(rgb.transpose(1, 2, 0), cv2.COLOR_RGB2Lab)


def slic_superpixels(image: np.ndarray, k_target: int = SLIC_K,
                     compactness: float = SLIC_COMPACTNESS,
                     iters: int = SLIC_ITERS) -> SuperpixelPartition:
    """Grid-seeded k-means over (lab, xy) followed by connectivity repair."""
    h, w = image.shape[1:]
    if k_target < 1:
        raise ConfigError("k_target must be >= 1")
    if k_target > h * w:
        raise ConfigError(f"k_target {k_target} exceeds pixel count {h * w}")
    if compactness <= 0:
        raise ConfigError("compactness must be positive")

    lab = rgb_to_lab(image).astype(np.float64)
    interval = np.sqrt(h * w / k_target)
    ratio = compactness / interval

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    feats = np.concatenate([lab.reshape(-1, 3),
                            (ys * ratio).reshape(-1, 1),
                            (xs * ratio).reshape(-1, 1)], axis=1)

    grid_h = max(1, int(round(np.sqrt(k_target * h / w))))
    grid_w = max(1, int(np.ceil(k_target / grid_h)))
    cy = (np.arange(grid_h) + 0.5) * h / grid_h
    cx = (np.arange(grid_w) + 0.5) * w / grid_w
    seeds = [(int(min(y, h - 1)), int(min(x, w - 1))) for y in cy for x in cx]
    seeds = seeds[:k_target]
    centers = feats.reshape(h, w, 5)[tuple(zip(*seeds))].copy()

    assign = np.zeros(h * w, dtype=np.int64)
    for _ in range(max(1, iters)):
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, feats)
        counts = np.bincount(assign, minlength=len(centers))
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]

    labels = _enforce_connectivity(assign.reshape(h, w))
    part = SuperpixelPartition(labels, int(labels.max()) + 1)
    part.validate()
    return part


def _enforce_connectivity(assign: np.ndarray) -> np.ndarray:
    """Split disconnected clusters; absorb fragments < mean_area/4."""
    h, w = assign.shape
    comp = np.zeros((h, w), dtype=np.int64)
    n = 0
    for cid in np.unique(assign):
        cmask = assign == cid
        sub, nc = ndimage.label(cmask, structure=FOUR_CONN)
        comp[cmask] = sub[cmask] + n
        n += nc
    n_clusters = len(np.unique(assign))
    min_area = (h * w / n_clusters) / 4.0

    while True:
        areas = np.bincount(comp.ravel(), minlength=n + 1)
        live = np.flatnonzero(areas)
        if len(live) <= 1:
            break
        small = live[areas[live] < min_area]
        if len(small) == 0:
            break
        target = small[np.argmin(areas[small])]
        neighbor = _dominant_neighbor(comp, target)
        comp[comp == target] = neighbor

    _, labels = np.unique(comp, return_inverse=True)
    return labels.reshape(h, w).astype(np.int64)


def _dominant_neighbor(comp: np.ndarray, cid: int) -> int:
    """Adjacent component sharing the most 4-neighbor contacts with cid."""
    contacts: list[np.ndarray] = []
    m = comp == cid
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        edge = np.roll(m, shift, axis=axis) & ~m
        if axis == 0:  # np.roll wraps; cut the wrapped border row/column
            edge[0 if shift == 1 else -1, :] = False
        else:
            edge[:, 0 if shift == 1 else -1] = False
        contacts.append(comp[edge])
    vals = np.concatenate(contacts) if contacts else np.array([], dtype=np.int64)
    if vals.size == 0:
        raise StageError("segment", f"component {cid} has no neighbors")
    counts = np.bincount(vals)
    return int(counts.argmax())


# --- scoring and binarization ---------------------------------------------------


def loss_map(target: np.ndarray, coarse: np.ndarray, oracle=None) -> LossMap:
    """Min-max normalized per-pixel residual field; constant fields -> zeros."""
    oracle = oracle or PyramidOracle()
    if target.shape != coarse.shape:
        raise ConfigError(f"shape mismatch {target.shape} vs {coarse.shape}")
    field = oracle.spatial_map(coarse, target).astype(np.float64)
    lo, hi = float(field.min()), float(field.max())
    if hi - lo <= 0:
        return LossMap(np.zeros_like(field), normalized=True)
    return LossMap((field - lo) / (hi - lo), normalized=True)


def partition_scores(lmap: LossMap, part: SuperpixelPartition) -> np.ndarray:
    """Mean of the loss map over each partition: v_i = sum(L*m_i)/|m_i|."""
    if not lmap.normalized:
        raise ConfigError("loss map must be normalized before scoring")
    if lmap.values.shape != part.labels.shape:
        raise ConfigError(f"shape mismatch {lmap.values.shape} vs {part.labels.shape}")
    counts = np.bincount(part.labels.ravel(), minlength=part.count)
    if (counts == 0).any():
        raise StageError("segment", "empty partition in scoring")
    sums = np.bincount(part.labels.ravel(), weights=lmap.values.ravel(),
                       minlength=part.count)
    return sums / counts


def binarize(scores: np.ndarray, part: SuperpixelPartition,
             parsing: ParsingMask) -> np.ndarray:
    """Per-partition threshold from the majority parsing category; >= tau -> out."""
    if len(scores) != part.count:
        raise ConfigError(f"{len(scores)} scores for {part.count} partitions")
    if parsing.labels.shape != part.labels.shape:
        raise ConfigError("parsing raster shape mismatch")
    mask = np.ones(part.labels.shape, dtype=np.uint8)
    flat_parse = parsing.labels.ravel()
    flat_part = part.labels.ravel()
    for i in range(part.count):
        in_part = flat_part == i
        majority = int(np.bincount(flat_parse[in_part]).argmax())
        tau = parsing.category_threshold[parsing.category_names[majority]]
        if scores[i] >= tau:
            mask[part.labels == i] = 0
    return mask


def fuse(m_s: np.ndarray, parsing: ParsingMask) -> np.ndarray:
    """Intersect the superpixel mask with the parsing in-domain mask."""
    m_p = parsing.in_mask()
    if m_p.shape != m_s.shape:
        raise ConfigError(f"shape mismatch {m_p.shape} vs {m_s.shape}")
    return (m_p.astype(np.uint8) * m_s.astype(np.uint8)).astype(np.uint8)


def segment_from_parts(lmap: LossMap, part: SuperpixelPartition,
                       parsing: ParsingMask) -> SegmentationResult:
    """Deterministic tail of the pipeline, reusable from cached intermediates."""
    scores = partition_scores(lmap, part)
    m_s = binarize(scores, part, parsing)
    mask = fuse(m_s, parsing)
    return SegmentationResult(mask=mask, mask_super=m_s, partition=part,
                              lmap=lmap, scores=scores, parsing=parsing)


def segment(image: np.ndarray, state, k_target: int = SLIC_K,
            compactness: float = SLIC_COMPACTNESS, iters: int = SLIC_ITERS,
            tau1: float = TAU_DEFAULT, tau2: float = TAU_FINE,
            coarse_steps: int = 40, coarse_lr: float = 0.05, seed: int = 0,
            oracle=None, parsing: ParsingMask | None = None,
            coarse: np.ndarray | None = None) -> SegmentationResult:
    """Full segmentation: coarse inversion -> loss map -> SLIC -> threshold -> fuse.

    `coarse` short-circuits the inversion with a precomputed reconstruction,
    letting callers reuse a robust probe fit. `parsing` defaults to an
    all-in-domain raster with thresholds (tau1, tau2).

    The default oracle is the bounded Huber pyramid, not the plain L2
    pyramid used for reconstruction: the probe fit must not let a
    hard-to-invert region pull the rest of the render off target, or the
    residual map loses its contrast.
    """
    oracle = oracle or HuberOracle()
    if parsing is None:
        parsing = identity_parsing(image.shape[1], image.shape[2], tau1, tau2)
    if coarse is None:
        coarse = coarse_invert(state, image, steps=coarse_steps, lr=coarse_lr,
                               seed=seed, oracle=oracle).coarse_image
    lmap = loss_map(image, coarse, oracle)
    part = slic_superpixels(image, k_target, compactness, iters)
    result = segment_from_parts(lmap, part, parsing)
    result.coarse_image = coarse
    return result
