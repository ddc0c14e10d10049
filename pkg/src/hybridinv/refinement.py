"""Hybrid refinement: masked co-optimization of weights and a feature.

One reconstruction problem, two parameter sets, one mask deciding which
set owns each pixel. Every step runs a single forward pass with the
trainable feature blended in at the injection layer, then derives two
masked losses from the same rendering:

    L_in  = loss field averaged over in-domain pixels  -> drives theta_delta
    L_out = loss field averaged over out-of-domain pixels -> drives the feature

Each branch has its own Adam instance; the weight branch stops early
(steps_theta <= steps_feature) to preserve editability. Gradients are
routed strictly: the weight optimizer never sees L_out's gradient and the
feature optimizer never sees L_in's. `gradient_split_check` validates that
routing numerically (finite differences plus target-perturbation
isolation) and is wired into the CLI's selfcheck.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateRegionError, RefinementDiverged
from .generator import FeatureMap, LatentCode
from .metrics import PointwiseOracle, make_oracle, raw_l2_field
from .optim import Adam
from .storage import load_archive, save_archive

LR_THETA = 0.0015
LR_FEATURE = 0.09
STEPS_FEATURE = 100
STEPS_THETA = 50


@dataclass
class RefineConfig:
    lr_theta: float = LR_THETA
    lr_feature: float = LR_FEATURE
    steps_feature: int = STEPS_FEATURE
    steps_theta: int = STEPS_THETA
    lambda_perceptual: float = 1.0
    oracle: str = "pyramid"
    inject_layer: int | None = None
    include_style_affines: bool = False

    def validate(self) -> None:
        if self.lr_theta <= 0 or self.lr_feature <= 0:
            raise ConfigError("learning rates must be positive")
        if self.steps_feature < 0 or self.steps_theta < 0:
            raise ConfigError("step counts must be >= 0")
        if self.steps_theta > self.steps_feature:
            raise ConfigError("steps_theta must not exceed steps_feature")
        if self.lambda_perceptual < 0:
            raise ConfigError("lambda must be >= 0")


# --- masked losses -------------------------------------------------------------


def _region_weight(mask: np.ndarray, region: str) -> tuple[np.ndarray, int]:
    if region not in ("in", "out"):
        raise ConfigError(f"region must be 'in' or 'out', got {region!r}")
    mu = mask.astype(np.float64) if region == "in" else 1.0 - mask.astype(np.float64)
    count = int(mu.sum())
    if count == 0:
        raise DegenerateRegionError(f"region '{region}' is empty")
    return mu, count


def loss_field(output: np.ndarray, target: np.ndarray, oracle,
               lam: float) -> np.ndarray:
    """Per-pixel objective: channel-mean squared error + lam * oracle field."""
    field = raw_l2_field(output, target)
    if lam != 0.0:
        field = field + lam * oracle.loss_field(output, target)
    return field


def masked_loss(output: np.ndarray, target: np.ndarray, mask: np.ndarray,
                region: str, oracle=None, lam: float = 1.0) -> float:
    """Mean of the loss field over one region of the mask."""
    if output.shape != target.shape:
        raise ConfigError(f"shape mismatch {output.shape} vs {target.shape}")
    if mask.shape != output.shape[1:]:
        raise ConfigError(f"mask shape {mask.shape} != {output.shape[1:]}")
    oracle = oracle or PointwiseOracle()
    mu, count = _region_weight(mask, region)
    return float((loss_field(output, target, oracle, lam) * mu).sum() / count)


def masked_loss_grad(output: np.ndarray, target: np.ndarray, mask: np.ndarray,
                     region: str, oracle=None, lam: float = 1.0) -> np.ndarray:
    """Gradient of masked_loss w.r.t. the output image."""
    oracle = oracle or PointwiseOracle()
    mu, count = _region_weight(mask, region)
    g_field = (mu / count).astype(output.dtype)
    c = output.shape[0]
    g = (2.0 / c) * (output - target) * g_field[None]
    if lam != 0.0:
        g = g + lam * oracle.loss_field_vjp(output, target, g_field)
    return g


def downsample_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Block-vote a binary mask down to (h, w); exact ties go out-of-domain.

    Out-of-domain wins ties so foreign content is never partially
    overwritten by the generated feature.
    """
    mh, mw = mask.shape
    if mh % h or mw % w:
        raise ConfigError(f"({h}, {w}) does not divide mask shape ({mh}, {mw})")
    blocks = mask.reshape(h, mh // h, w, mw // w).astype(np.float64)
    return (blocks.mean(axis=(1, 3)) > 0.5).astype(np.uint8)


# --- session -------------------------------------------------------------------


@dataclass
class RefinementSession:
    """Owns one refinement problem: a state clone, the trainable feature,
    the frozen latent and the masks at both resolutions."""

    state: object
    feature: FeatureMap
    mask_image: np.ndarray
    mask_feat: np.ndarray
    w: LatentCode
    w_rows: np.ndarray
    target: np.ndarray
    hyper: RefineConfig

    @classmethod
    def create(cls, state, latent: LatentCode, target: np.ndarray,
               mask_image: np.ndarray, hyper: RefineConfig | None = None) -> "RefinementSession":
        hyper = hyper or RefineConfig()
        hyper.validate()
        state = state.clone()
        if hyper.inject_layer is not None and hyper.inject_layer != state.inject_layer:
            state = state.with_inject_layer(hyper.inject_layer)
        r = state.output_resolution
        if target.shape != (3, r, r):
            raise ConfigError(f"target shape {target.shape} != (3, {r}, {r})")
        if mask_image.shape != (r, r):
            raise ConfigError(f"mask shape {mask_image.shape} != ({r}, {r})")
        if not np.isin(mask_image, (0, 1)).all():
            raise ConfigError("mask must be binary")
        w_rows = state.broadcast_latent(latent)
        feature = state.tap_feature(latent)
        _, fh, fw = state.feature_shape
        mask_feat = downsample_mask(mask_image, fh, fw)
        return cls(state=state, feature=feature,
                   mask_image=mask_image.astype(np.uint8), mask_feat=mask_feat,
                   w=latent.copy(), w_rows=w_rows,
                   target=target.astype(state.dtype), hyper=hyper)

    def oracle(self):
        return make_oracle(self.hyper.oracle)

    def astype(self, dtype) -> "RefinementSession":
        state = self.state.astype(dtype)
        return RefinementSession(
            state=state, feature=FeatureMap(self.feature.layer,
                                            self.feature.values.astype(dtype)),
            mask_image=self.mask_image.copy(), mask_feat=self.mask_feat.copy(),
            w=self.w.copy(), w_rows=self.w_rows.astype(dtype),
            target=self.target.astype(dtype), hyper=self.hyper)


def _branch_grads(state, w_rows, f_vals, mask_image, mask_feat, target,
                  oracle, lam, trainable):
    """Shared forward pass, then one backward per nondegenerate branch."""
    img, cache = state.forward_cached(w_rows, inject=(f_vals, mask_feat))
    n_in = int(mask_image.sum())
    n_out = mask_image.size - n_in
    l_in = l_out = float("nan")
    g_theta = None
    g_f = None
    if n_in:
        l_in = masked_loss(img, target, mask_image, "in", oracle, lam)
        grads = state.backward(
            cache, masked_loss_grad(img, target, mask_image, "in", oracle, lam))
        g_theta = {k: grads.theta[k] for k in trainable}
    if n_out:
        l_out = masked_loss(img, target, mask_image, "out", oracle, lam)
        grads = state.backward(
            cache, masked_loss_grad(img, target, mask_image, "out", oracle, lam))
        g_f = grads.f
    return img, l_in, l_out, g_theta, g_f


def refine(session: RefinementSession) -> tuple[object, FeatureMap, list[tuple[float, float]]]:
    """Run the two-branch optimization; returns (state, feature, history).

    history[i] = (L_in, L_out) at step i before the update; a degenerate
    (empty) region reports nan and its branch is skipped entirely.
    """
    hyper = session.hyper
    state = session.state
    oracle = session.oracle()
    lam = hyper.lambda_perceptual
    trainable = state.trainable_keys(hyper.include_style_affines)
    theta_params = {k: state.theta_delta[k] for k in trainable}
    feat_params = {"f": session.feature.values}
    opt_theta = Adam(theta_params, lr=hyper.lr_theta)
    opt_feat = Adam(feat_params, lr=hyper.lr_feature)

    history: list[tuple[float, float]] = []
    for step in range(hyper.steps_feature):
        _, l_in, l_out, g_theta, g_f = _branch_grads(
            state, session.w_rows, feat_params["f"], session.mask_image,
            session.mask_feat, session.target, oracle, lam, trainable)
        if g_theta is not None and not np.isfinite(l_in):
            raise RefinementDiverged(step, "weight", l_in)
        if g_f is not None and not np.isfinite(l_out):
            raise RefinementDiverged(step, "feature", l_out)
        history.append((l_in, l_out))
        if g_f is not None:
            opt_feat.step({"f": g_f})
        if g_theta is not None and step < hyper.steps_theta:
            opt_theta.step(g_theta)
    session.feature = FeatureMap(session.feature.layer, feat_params["f"])
    return state, session.feature, history


# --- gradient routing verification -----------------------------------------------


@dataclass
class GradientSplitReport:
    theta_fd_max_rel: float
    feature_fd_max_rel: float
    theta_isolated: bool
    feature_isolated: bool
    coords_checked: int
    failures: list[str] = dataclasses.field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def gradient_split_check(session: RefinementSession, n_coords: int = 24,
                         fd_step: float = 1e-4, rtol: float = 1e-3,
                         seed: int = 0) -> GradientSplitReport:
    """Numerically validate the two-branch gradient routing.

    Checks, on a float64 replica of the session:
      1. the applied weight gradient matches central finite differences of
         L_in, and the applied feature gradient matches those of L_out, at
         `n_coords` random coordinates each;
      2. with lam = 0, perturbing the target inside the in-domain region
         leaves the applied feature gradient bit-identical, and vice versa
         (each branch sees only its own region of the target).

    Raises nothing; inspect `report.passed` / `report.failures`.
    """
    s = session.astype(np.float64)
    state = s.state
    oracle = s.oracle()
    lam = s.hyper.lambda_perceptual
    trainable = state.trainable_keys(s.hyper.include_style_affines)
    rng = np.random.default_rng(seed)
    failures: list[str] = []

    def branch(f_vals, target, lam_):
        return _branch_grads(state, s.w_rows, f_vals, s.mask_image, s.mask_feat,
                             target, oracle, lam_, trainable)

    f0 = s.feature.values
    _, l_in0, l_out0, g_theta, g_f = branch(f0, s.target, lam)

    def rel_err(analytic, numeric):
        scale = max(abs(analytic), abs(numeric), 1e-8)
        return abs(analytic - numeric) / scale

    # 1a. finite differences of L_in w.r.t. theta_delta coordinates
    theta_max = 0.0
    if g_theta is not None:
        for _ in range(n_coords):
            key = trainable[rng.integers(len(trainable))]
            arr = state.theta_delta[key]
            idx = np.unravel_index(rng.integers(arr.size), arr.shape)
            orig = arr[idx]
            arr[idx] = orig + fd_step
            _, lp, _, _, _ = branch(f0, s.target, lam)
            arr[idx] = orig - fd_step
            _, lm, _, _, _ = branch(f0, s.target, lam)
            arr[idx] = orig
            numeric = (lp - lm) / (2 * fd_step)
            err = rel_err(g_theta[key][idx], numeric)
            theta_max = max(theta_max, err)
            if err > rtol:
                failures.append(
                    f"theta fd mismatch at {key}{list(idx)}: "
                    f"analytic={g_theta[key][idx]:.3e} numeric={numeric:.3e}")

    # 1b. finite differences of L_out w.r.t. feature coordinates,
    #     restricted to out-of-domain columns where the gradient can be nonzero
    feat_max = 0.0
    out_cols = np.argwhere(s.mask_feat == 0)
    if g_f is not None and len(out_cols):
        for _ in range(n_coords):
            c = int(rng.integers(f0.shape[0]))
            yx = out_cols[rng.integers(len(out_cols))]
            idx = (c, int(yx[0]), int(yx[1]))
            f_pert = f0.copy()
            f_pert[idx] = f0[idx] + fd_step
            _, _, lp, _, _ = branch(f_pert, s.target, lam)
            f_pert[idx] = f0[idx] - fd_step
            _, _, lm, _, _ = branch(f_pert, s.target, lam)
            numeric = (lp - lm) / (2 * fd_step)
            err = rel_err(g_f[idx], numeric)
            feat_max = max(feat_max, err)
            if err > rtol:
                failures.append(
                    f"feature fd mismatch at {list(idx)}: "
                    f"analytic={g_f[idx]:.3e} numeric={numeric:.3e}")

    # 2. target-perturbation isolation at lam = 0
    _, _, _, g_theta0, g_f0 = branch(f0, s.target, 0.0)
    m3 = s.mask_image[None].astype(np.float64)
    bump_in = s.target + 0.37 * m3 * rng.standard_normal(s.target.shape)
    bump_out = s.target + 0.37 * (1 - m3) * rng.standard_normal(s.target.shape)
    _, _, _, _, g_f_bumped = branch(f0, bump_in, 0.0)
    _, _, _, g_theta_bumped, _ = branch(f0, bump_out, 0.0)
    feature_isolated = theta_isolated = True
    if g_f0 is not None and g_f_bumped is not None:
        feature_isolated = bool(np.array_equal(g_f0, g_f_bumped))
        if not feature_isolated:
            failures.append("feature gradient changed under in-domain target edit")
    if g_theta0 is not None and g_theta_bumped is not None:
        theta_isolated = all(np.array_equal(g_theta0[k], g_theta_bumped[k])
                             for k in g_theta0)
        if not theta_isolated:
            failures.append("weight gradient changed under out-of-domain target edit")

    return GradientSplitReport(
        theta_fd_max_rel=theta_max, feature_fd_max_rel=feat_max,
        theta_isolated=theta_isolated, feature_isolated=feature_isolated,
        coords_checked=n_coords, failures=failures)


# --- artifact io ---------------------------------------------------------------


def save_delta(path: str | Path, state) -> None:
    save_archive(path, state.theta_delta, {
        "kind": "hybridinv-delta",
        "generator_fingerprint": state.fingerprint(),
    })


def load_delta(path: str | Path, state) -> None:
    """Install a stored weight deviation into `state` (must match its base)."""
    arrays, manifest = load_archive(path)
    if manifest.get("kind") != "hybridinv-delta":
        raise ConfigError(f"{path} is not a weight-deviation archive")
    stored = manifest.get("generator_fingerprint", "")
    if stored and stored != state.fingerprint():
        raise ConfigError(f"deviation bound to generator {stored}")
    for key, value in arrays.items():
        if key not in state.theta_delta:
            raise ConfigError(f"unknown deviation key {key!r}")
        if value.shape != state.theta_delta[key].shape:
            raise ConfigError(f"deviation shape mismatch for {key!r}")
        state.theta_delta[key] = value.astype(state.dtype)


def save_feature(path: str | Path, feature: FeatureMap, fingerprint: str = "") -> None:
    save_archive(path, {"values": feature.values}, {
        "kind": "hybridinv-feature",
        "layer": feature.layer,
        "generator_fingerprint": fingerprint,
    })


def load_feature(path: str | Path) -> FeatureMap:
    arrays, manifest = load_archive(path)
    if manifest.get("kind") != "hybridinv-feature":
        raise ConfigError(f"{path} is not a feature archive")
    return FeatureMap(int(manifest["layer"]), arrays["values"])


def save_history(path: str | Path, history: list[tuple[float, float]]) -> None:
    lines = ["# step l_in l_out"]
    lines += [f"{i} {l_in:.10e} {l_out:.10e}" for i, (l_in, l_out) in enumerate(history)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_history(path: str | Path) -> list[tuple[float, float]]:
    history = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        _, l_in, l_out = line.split()
        history.append((float(l_in), float(l_out)))
    return history
