"""End-to-end orchestration: configuration, bundles, caching, batching.

A run is described by one flat key=value RunConfig; every tunable of the
underlying stages lives there, and the effective config is archived next
to each run's outputs so results are always reproducible from disk.

`invert_image` is the in-memory pipeline (embed -> segment -> refine ->
final rendering). `run_invert` wraps it with persistence: a *bundle*
directory holding the input copy, latent, masks, coarse and refined
images, weight deviations, feature, loss history, eval record, config and
a generator checkpoint — everything `edit` and `eval` need, with no
references outside the directory. Failures leave a FAILED.txt marker
beside whatever was produced.

The coarse inversion is computed once and shared by the embedding and the
segmenter. Setting the cache-root environment variable (HYBRIDINV_CACHE)
additionally persists it keyed by a content hash of (target, generator,
coarse settings), so re-runs and benchmark sweeps skip the search.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import (EmbeddingResult, coarse_invert, lift_to_wplus,
                        resolve_encoder, save_latent, load_latent, embed)
from .editing import EditDirection, load_direction
from .editing import edit as edit_render
from .errors import ConfigError, StageError
from .generator import FeatureMap, LatentCode, ToyGenerator
from .metrics import EvalRecord, evaluate_pair, format_record, make_oracle
from .refinement import (RefineConfig, RefinementSession, load_delta,
                         load_feature, refine, save_delta, save_feature,
                         save_history)
from .segmentation import (ParsingMask, SegmentationResult, identity_parsing,
                           load_parsing, save_parsing, segment)
from .storage import (array_checksum, load_archive, load_image, load_mask,
                      save_archive, save_image, save_mask)

CACHE_ENV = "HYBRIDINV_CACHE"

BUNDLE_FILES = {
    "config": "config.txt",
    "input": "input.png",
    "coarse": "coarse.png",
    "refined": "refined.png",
    "mask": "mask.png",
    "mask_super": "mask_super.png",
    "mask_feat": "mask_feat.png",
    "latent": "latent.npz",
    "delta": "delta.npz",
    "feature": "feature.npz",
    "history": "history.txt",
    "eval": "eval.txt",
    "generator": "generator.npz",
    "parsing": "parsing.png",
    "failed": "FAILED.txt",
}


@dataclass
class RunConfig:
    """Every tunable of the pipeline, serializable as flat key = value text."""

    seed: int = 0
    generator: str = ""            # checkpoint path; empty -> seeded toy
    generator_seed: int = 7
    encoder: str = ""              # factory:mod:attr or exec:path; empty -> coarse
    parsing: str = ""              # parsing raster path; empty -> all in-domain
    steps_coarse: int = 40
    lr_coarse: float = 0.05
    k_target: int = 100
    compactness: float = 10.0
    slic_iters: int = 10
    tau1: float = 0.7
    tau2: float = 0.8
    steps_feature: int = 100
    steps_theta: int = 50
    lr_theta: float = 0.0015
    lr_feature: float = 0.09
    lambda_perceptual: float = 1.0
    oracle: str = "pyramid"
    oracle_segment: str = "huber"  # probe-fit objective; bounded by default
    inject_layer: int = -1         # -1 -> the generator's configured layer
    include_style_affines: bool = False

    def to_refine_config(self) -> RefineConfig:
        # inject_layer rebinding happens once, on the state, before sessions
        return RefineConfig(
            lr_theta=self.lr_theta, lr_feature=self.lr_feature,
            steps_feature=self.steps_feature, steps_theta=self.steps_theta,
            lambda_perceptual=self.lambda_perceptual, oracle=self.oracle,
            inject_layer=None,
            include_style_affines=self.include_style_affines)


def serialize_config(config: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse key = value lines; unknown keys are rejected, not ignored."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = key.strip(), value.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        ftype = fields[key].type
        try:
            if ftype == "bool":
                if value not in ("true", "false"):
                    raise ValueError(value)
                values[key] = value == "true"
            elif ftype == "int":
                values[key] = int(value)
            elif ftype == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return RunConfig(**values)


def config_fingerprint(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:12]


def load_generator(config: RunConfig) -> ToyGenerator:
    if config.generator:
        state = ToyGenerator.load(config.generator)
    else:
        state = ToyGenerator.from_seed(config.generator_seed)
    if config.inject_layer >= 0 and config.inject_layer != state.inject_layer:
        state = state.with_inject_layer(config.inject_layer)
    return state


# --- coarse-inversion cache ----------------------------------------------------


def cache_root(no_cache: bool = False) -> Path | None:
    if no_cache:
        return None
    root = os.environ.get(CACHE_ENV, "")
    return Path(root) if root else None


def _coarse_key(state, target: np.ndarray, config: RunConfig) -> str:
    h = hashlib.sha256()
    h.update(state.fingerprint().encode())
    h.update(array_checksum(target).encode())
    h.update(f"{config.steps_coarse}|{config.lr_coarse}|{config.seed}|"
             f"{config.oracle}".encode())
    return h.hexdigest()[:24]


def coarse_with_cache(state, target: np.ndarray, config: RunConfig,
                      no_cache: bool = False) -> EmbeddingResult:
    root = cache_root(no_cache)
    oracle = make_oracle(config.oracle)
    if root is None:
        return coarse_invert(state, target, steps=config.steps_coarse,
                             lr=config.lr_coarse, seed=config.seed, oracle=oracle)
    key = _coarse_key(state, target, config)
    path = root / f"coarse-{key}.npz"
    if path.exists():
        arrays, manifest = load_archive(path)
        return EmbeddingResult(latent=LatentCode.w(arrays["latent"]),
                               coarse_image=arrays["coarse"],
                               loss_trace=arrays["trace"])
    result = coarse_invert(state, target, steps=config.steps_coarse,
                           lr=config.lr_coarse, seed=config.seed, oracle=oracle)
    root.mkdir(parents=True, exist_ok=True)
    save_archive(path, {"latent": result.latent.values,
                        "coarse": result.coarse_image,
                        "trace": result.loss_trace},
                 {"kind": "hybridinv-coarse-cache", "key": key})
    return result


# --- in-memory pipeline ----------------------------------------------------------


@dataclass
class InvertResult:
    latent: LatentCode
    coarse: EmbeddingResult
    seg: SegmentationResult
    state: object
    feature: FeatureMap
    mask_feat: np.ndarray
    history: list[tuple[float, float]]
    final_image: np.ndarray
    record: EvalRecord


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc


def invert_image(state, target: np.ndarray, config: RunConfig,
                 parsing: ParsingMask | None = None, encoder=None,
                 no_cache: bool = False) -> InvertResult:
    """embed -> segment -> refine -> final rendering, all in memory."""
    t0 = time.perf_counter()
    oracle = make_oracle(config.oracle)

    def do_embed():
        coarse = coarse_with_cache(state, target, config, no_cache)
        if encoder is not None:
            latent = embed(encoder, state, target)
        else:
            latent = lift_to_wplus(coarse.latent, state.n_layers)
        return coarse, latent

    coarse, latent = _stage("embed", do_embed)
    # the segment stage runs its own probe fit under the bounded oracle
    # rather than reusing the reconstruction fit; see segment()
    seg = _stage("segment", segment, target, state,
                 k_target=config.k_target, compactness=config.compactness,
                 iters=config.slic_iters, tau1=config.tau1, tau2=config.tau2,
                 coarse_steps=config.steps_coarse, coarse_lr=config.lr_coarse,
                 seed=config.seed, oracle=make_oracle(config.oracle_segment),
                 parsing=parsing)

    def do_refine():
        session = RefinementSession.create(state, latent, target, seg.mask,
                                           config.to_refine_config())
        refined, feature, history = refine(session)
        final = refined.synthesize_with_injection(latent, feature, session.mask_feat)
        return refined, feature, session.mask_feat, history, final

    refined, feature, mask_feat, history, final = _stage("refine", do_refine)
    record = evaluate_pair(final, target, oracle=oracle,
                           wall_time=time.perf_counter() - t0,
                           fingerprint=config_fingerprint(config))
    return InvertResult(latent=latent, coarse=coarse, seg=seg, state=refined,
                        feature=feature, mask_feat=mask_feat, history=history,
                        final_image=final, record=record)


# --- bundles ---------------------------------------------------------------------


def run_invert(config: RunConfig, image_path: str | Path,
               out_dir: str | Path, no_cache: bool = False) -> Path:
    """Run the pipeline on one image and write a self-sufficient bundle."""
    bundle = Path(out_dir)
    bundle.mkdir(parents=True, exist_ok=True)
    (bundle / BUNDLE_FILES["config"]).write_text(serialize_config(config))
    try:
        def load_input():
            path = Path(image_path)
            if not path.exists():
                raise ConfigError(f"input image not found: {path}")
            return load_image(path)

        target = _stage("input", load_input)
        state = _stage("input", load_generator, config)
        parsing = None
        if config.parsing:
            parsing = _stage("input", load_parsing, config.parsing)
        result = invert_image(state, target, config, parsing=parsing,
                              encoder=resolve_encoder(config.encoder),
                              no_cache=no_cache)
    except StageError as exc:
        (bundle / BUNDLE_FILES["failed"]).write_text(
            f"stage: {exc.stage}\nerror: {exc}\n")
        raise

    fingerprint = result.state.fingerprint()
    save_image(bundle / BUNDLE_FILES["input"], target)
    save_image(bundle / BUNDLE_FILES["coarse"], result.coarse.coarse_image)
    save_image(bundle / BUNDLE_FILES["refined"], result.final_image)
    save_mask(bundle / BUNDLE_FILES["mask"], result.seg.mask)
    save_mask(bundle / BUNDLE_FILES["mask_super"], result.seg.mask_super)
    save_mask(bundle / BUNDLE_FILES["mask_feat"], result.mask_feat)
    save_latent(bundle / BUNDLE_FILES["latent"], result.latent, fingerprint)
    save_delta(bundle / BUNDLE_FILES["delta"], result.state)
    save_feature(bundle / BUNDLE_FILES["feature"], result.feature, fingerprint)
    save_history(bundle / BUNDLE_FILES["history"], result.history)
    result.state.save(bundle / BUNDLE_FILES["generator"])
    save_parsing(bundle / BUNDLE_FILES["parsing"], result.seg.parsing)
    # wall time varies across reruns; bundles must be byte-reproducible
    (bundle / BUNDLE_FILES["eval"]).write_text(
        format_record(result.record, include_time=False) + "\n")
    marker = bundle / BUNDLE_FILES["failed"]
    if marker.exists():
        marker.unlink()
    return bundle


@dataclass
class Bundle:
    root: Path
    config: RunConfig
    state: object
    latent: LatentCode
    feature: FeatureMap
    mask_feat: np.ndarray

    def edit(self, direction: EditDirection, alpha: float) -> np.ndarray:
        return edit_render(self.state, self.latent, self.feature,
                           self.mask_feat, direction, alpha)

    def refined_image(self) -> np.ndarray:
        return load_image(self.root / BUNDLE_FILES["refined"])


def load_bundle(root: str | Path) -> Bundle:
    root = Path(root)
    if not (root / BUNDLE_FILES["config"]).exists():
        raise ConfigError(f"{root} is not a bundle (no config.txt)")
    if (root / BUNDLE_FILES["failed"]).exists():
        raise ConfigError(f"bundle {root} is marked failed: "
                          f"{(root / BUNDLE_FILES['failed']).read_text().strip()}")
    config = parse_config((root / BUNDLE_FILES["config"]).read_text())
    state = ToyGenerator.load(root / BUNDLE_FILES["generator"])
    load_delta(root / BUNDLE_FILES["delta"], state)
    latent = load_latent(root / BUNDLE_FILES["latent"],
                         expect_fingerprint=state.fingerprint())
    feature = load_feature(root / BUNDLE_FILES["feature"])
    mask_feat = load_mask(root / BUNDLE_FILES["mask_feat"])
    return Bundle(root=root, config=config, state=state, latent=latent,
                  feature=feature, mask_feat=mask_feat)


def edit_bundle(root: str | Path, direction_path: str | Path, alpha: float,
                out: str | Path | None = None) -> Path:
    bundle = load_bundle(root)
    direction = load_direction(direction_path)
    image = bundle.edit(direction, alpha)
    if out is None:
        out = bundle.root / f"edit_{direction.name}_{alpha:+g}.png"
    save_image(out, image)
    return Path(out)


# --- batch -----------------------------------------------------------------------


def run_batch(config: RunConfig, image_dir: str | Path, out_root: str | Path,
              no_cache: bool = False) -> tuple[list[EvalRecord], Path]:
    """Invert every PNG in a directory; failures are recorded, not fatal."""
    image_dir, out_root = Path(image_dir), Path(out_root)
    images = sorted(image_dir.glob("*.png"))
    if not images:
        raise ConfigError(f"no .png images in {image_dir}")
    out_root.mkdir(parents=True, exist_ok=True)
    records: list[EvalRecord] = []
    failures: list[tuple[str, str]] = []
    for path in images:
        try:
            bundle = run_invert(config, path, out_root / path.stem, no_cache)
            line = (bundle / BUNDLE_FILES["eval"]).read_text().strip()
            fields = dict(kv.split("=", 1) for kv in line.split())
            records.append(EvalRecord(
                name=path.name, mse=float(fields["mse"]),
                psnr=float(fields["psnr"]),
                perceptual=float(fields.get("perceptual", "nan")),
                fingerprint=fields.get("config", "")))
        except StageError as exc:
            failures.append((path.name, str(exc)))
    lines = ["# name mse psnr perceptual"]
    for r in records:
        lines.append(f"{r.name} {r.mse:.8e} {r.psnr:.4f} {r.perceptual:.8e}")
    if records:
        lines.append(f"mean {np.mean([r.mse for r in records]):.8e} "
                     f"{np.mean([r.psnr for r in records]):.4f} "
                     f"{np.mean([r.perceptual for r in records]):.8e}")
    for name, reason in failures:
        lines.append(f"FAILED {name} {reason}")
    summary = out_root / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    return records, summary
