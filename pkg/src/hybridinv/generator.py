"""Layered style-modulated generator with a feature tap/injection point.

The generator follows a progressive-synthesis layout split into an
expansion head and a refinement tail: a learned constant grid passes
through a stack of style-consuming layers (3x3 convolution, per-channel
style scale, pointwise leaky-tanh), each of the first log2(out/base)
layers ending with a nearest x2 upsample, the remaining layers refining
at full resolution; a 1x1 RGB head closes the stack. A latent z is mapped
to w by a small 2-layer head; W+ codes assign an independent w row per
layer.

Weights are split into an immutable `theta_base` and a trainable
`theta_delta` (effective weights are the elementwise sum), so per-image
weight tuning never touches the base checkpoint. One layer index is the
*injection point*: the activation entering that layer can be tapped, or
replaced by a mask-blended mixture of the generated activation and an
externally optimized feature map.

Forward passes can record a cache from which `backward` propagates exact
hand-derived gradients to the latent rows, the weight deviations and the
injected feature. There is deliberately no autodiff framework underneath:
every Jacobian is explicit and unit-verified against finite differences.

Adapter contract: any object exposing `n_layers`, `d_latent`,
`layer_resolutions`, `feature_shape`, `inject_layer`, `fingerprint()`,
`broadcast_latent`, `synthesize`, `tap_feature`, `synthesize_with_injection`,
`blended_feature`, `mean_latent`, `clone`, `forward_cached` and `backward`
can stand in for ToyGenerator, e.g. a loader for an externally trained
checkpoint. Only the toy generator ships here.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ops
from .errors import ConfigError
from .storage import load_archive, save_archive


class LatentSpace(enum.Enum):
    Z = "Z"
    W = "W"
    WPLUS = "Wplus"


@dataclass
class LatentCode:
    """A point in Z, W (one vector) or W+ (one vector per layer)."""

    space: LatentSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("latent code contains non-finite entries")
        if self.space in (LatentSpace.Z, LatentSpace.W):
            if self.values.ndim != 1:
                raise ConfigError(f"{self.space.value} code must be a vector")
        elif self.values.ndim != 2:
            raise ConfigError("Wplus code must be a (n_layers, d_latent) matrix")

    @classmethod
    def z(cls, values) -> "LatentCode":
        return cls(LatentSpace.Z, values)

    @classmethod
    def w(cls, values) -> "LatentCode":
        return cls(LatentSpace.W, values)

    @classmethod
    def wplus(cls, values) -> "LatentCode":
        return cls(LatentSpace.WPLUS, values)

    def copy(self) -> "LatentCode":
        return LatentCode(self.space, self.values.copy())


@dataclass
class FeatureMap:
    """Activation tapped at (or injected into) the generator's blend point."""

    layer: int
    values: np.ndarray

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def copy(self) -> "FeatureMap":
        return FeatureMap(self.layer, self.values.copy())


@dataclass
class Grads:
    """Backward-pass result: gradients for latent rows, weights, feature."""

    w_rows: np.ndarray
    theta: dict[str, np.ndarray]
    f: np.ndarray | None


@dataclass(frozen=True)
class ToyConfig:
    d_latent: int = 64
    stage_channels: tuple[int, ...] = (48, 64, 48, 32)
    base_resolution: int = 4
    inject_layer: int = 4
    identity_mapping: bool = False

    @property
    def n_layers(self) -> int:
        return 2 * len(self.stage_channels)

    @property
    def output_resolution(self) -> int:
        return self.base_resolution * 2 ** (len(self.stage_channels) - 1)


# initialization gains, calibrated so sampled images roughly fill [-1, 1]
# and so the feature-to-pixel response stays well conditioned: each conv
# is a center-tap channel passthrough (_CONV_SKIP) plus random mixing
# (_CONV_NOISE), keeping per-image optimization fast without autodiff tricks
_CONV_SKIP = 0.8
_CONV_NOISE = 0.25
_STYLE_GAIN = 0.25
_RGB_GAIN = 1.4

# leaky-tanh activation: smooth, monotone, non-saturating (slope >= _LEAK
# everywhere), so per-image optimization never stalls in flat regions
_LEAK = 0.2


def leaky_tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x) + _LEAK * x


def leaky_tanh_vjp(t: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """VJP given the cached tanh component t = tanh(x)."""
    return gy * (1.0 - t * t + _LEAK)


class ToyGenerator:
    """Deterministic desk-scale generator (default 8 layers, 32x32x3 out)."""

    def __init__(self, config: ToyConfig, theta_base: dict[str, np.ndarray],
                 seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.theta_base = {k: np.asarray(v, dtype=self.dtype) for k, v in theta_base.items()}
        self.theta_delta = {k: np.zeros_like(self.theta_base[k])
                            for k in self._synthesis_keys()}

    # --- construction -----------------------------------------------------

    @classmethod
    def from_seed(cls, seed: int = 7, config: ToyConfig | None = None,
                  dtype=np.float32) -> "ToyGenerator":
        cfg = config or ToyConfig()
        if not 0 <= cfg.inject_layer < cfg.n_layers:
            raise ConfigError(f"inject_layer {cfg.inject_layer} out of range")
        rng = np.random.default_rng(seed)
        d = cfg.d_latent
        theta: dict[str, np.ndarray] = {}
        theta["mapping.fc1.w"] = rng.standard_normal((d, d)) / np.sqrt(d)
        theta["mapping.fc1.b"] = np.zeros(d)
        theta["mapping.fc2.w"] = rng.standard_normal((d, d)) / np.sqrt(d)
        theta["mapping.fc2.b"] = np.zeros(d)
        theta["const"] = rng.standard_normal((cfg.stage_channels[0],
                                              cfg.base_resolution, cfg.base_resolution))
        c_in = cfg.stage_channels[0]
        for i in range(cfg.n_layers):
            c_out = cfg.stage_channels[i // 2]
            fan_in = c_in * 9
            w = rng.standard_normal((c_out, c_in, 3, 3)) * (_CONV_NOISE / np.sqrt(fan_in))
            k = min(c_in, c_out)
            w[np.arange(k), np.arange(k), 1, 1] += _CONV_SKIP
            theta[f"conv{i}.w"] = w
            theta[f"conv{i}.b"] = np.zeros(c_out)
            theta[f"style{i}.w"] = rng.standard_normal((c_out, d)) * (_STYLE_GAIN / np.sqrt(d))
            theta[f"style{i}.b"] = np.ones(c_out)
            c_in = c_out
        theta["rgb.w"] = rng.standard_normal((3, c_in)) * (_RGB_GAIN / np.sqrt(c_in))
        theta["rgb.b"] = np.zeros(3)
        return cls(cfg, theta, seed=seed, dtype=dtype)

    def _synthesis_keys(self) -> list[str]:
        keys = []
        for i in range(self.config.n_layers):
            keys += [f"conv{i}.w", f"conv{i}.b", f"style{i}.w", f"style{i}.b"]
        keys += ["rgb.w", "rgb.b"]
        return keys

    def trainable_keys(self, include_style_affines: bool = False) -> list[str]:
        """Weight-deviation keys the refinement optimizer may update.

        Convolution weights only by default; style affines are opt-in.
        """
        keys = [k for i in range(self.config.n_layers)
                for k in (f"conv{i}.w", f"conv{i}.b")]
        keys += ["rgb.w", "rgb.b"]
        if include_style_affines:
            keys += [k for i in range(self.config.n_layers)
                     for k in (f"style{i}.w", f"style{i}.b")]
        return keys

    def clone(self, copy_delta: bool = True) -> "ToyGenerator":
        dup = ToyGenerator(self.config, self.theta_base, seed=self.seed, dtype=self.dtype)
        if copy_delta:
            dup.theta_delta = {k: v.copy() for k, v in self.theta_delta.items()}
        return dup

    def astype(self, dtype) -> "ToyGenerator":
        dup = ToyGenerator(self.config, self.theta_base, seed=self.seed, dtype=dtype)
        dup.theta_delta = {k: v.astype(dtype) for k, v in self.theta_delta.items()}
        return dup

    def with_inject_layer(self, layer: int) -> "ToyGenerator":
        """Same weights, different tap/injection point."""
        if not 0 <= layer < self.config.n_layers:
            raise ConfigError(f"inject_layer {layer} out of range")
        dup = ToyGenerator(replace(self.config, inject_layer=layer),
                           self.theta_base, seed=self.seed, dtype=self.dtype)
        dup.theta_delta = {k: v.copy() for k, v in self.theta_delta.items()}
        return dup

    # --- introspection ----------------------------------------------------

    @property
    def n_layers(self) -> int:
        return self.config.n_layers

    @property
    def d_latent(self) -> int:
        return self.config.d_latent

    @property
    def inject_layer(self) -> int:
        return self.config.inject_layer

    @property
    def output_resolution(self) -> int:
        return self.config.output_resolution

    @property
    def layer_resolutions(self) -> list[int]:
        """Output spatial size of each layer (the expansion head upsamples)."""
        n_up = len(self.config.stage_channels) - 1
        return [self.config.base_resolution * 2 ** min(i + 1, n_up)
                for i in range(self.config.n_layers)]

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        """(C,H,W) of the activation entering the injection layer."""
        l = self.config.inject_layer
        if l == 0:
            c = self.config.stage_channels[0]
            r = self.config.base_resolution
        else:
            c = self.config.stage_channels[(l - 1) // 2]
            r = self.layer_resolutions[l - 1]
        return (c, r, r)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self._manifest(), sort_keys=True).encode())
        for k in sorted(self.theta_base):
            h.update(np.ascontiguousarray(self.theta_base[k]).tobytes())
        return h.hexdigest()[:16]

    def _manifest(self) -> dict:
        return {
            "kind": "hybridinv-generator",
            "version": 1,
            "seed": self.seed,
            "d_latent": self.config.d_latent,
            "n_layers": self.config.n_layers,
            "stage_channels": list(self.config.stage_channels),
            "base_resolution": self.config.base_resolution,
            "inject_layer": self.config.inject_layer,
            "identity_mapping": self.config.identity_mapping,
            "resolutions": self.layer_resolutions,
            "dtype": str(self.dtype),
        }

    def effective(self, key: str) -> np.ndarray:
        if key in self.theta_delta:
            return self.theta_base[key] + self.theta_delta[key]
        return self.theta_base[key]

    def delta_is_zero(self) -> bool:
        return all(not v.any() for v in self.theta_delta.values())

    # --- checkpoint io ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_archive(path, self.theta_base, self._manifest())

    @classmethod
    def load(cls, path: str | Path) -> "ToyGenerator":
        arrays, manifest = load_archive(path)
        if manifest.get("kind") != "hybridinv-generator":
            raise ConfigError(f"{path} is not a generator checkpoint")
        cfg = ToyConfig(
            d_latent=manifest["d_latent"],
            stage_channels=tuple(manifest["stage_channels"]),
            base_resolution=manifest["base_resolution"],
            inject_layer=manifest["inject_layer"],
            identity_mapping=manifest.get("identity_mapping", False),
        )
        return cls(cfg, arrays, seed=manifest["seed"], dtype=np.dtype(manifest["dtype"]))

    # --- latent handling ----------------------------------------------------

    def map_z(self, z: np.ndarray) -> np.ndarray:
        """Mapping head Z -> W. Odd in z (zero biases), so E[map(z)] = 0."""
        z = np.asarray(z, dtype=self.dtype)
        if self.config.identity_mapping:
            return z.copy()
        h = np.tanh(z @ self.effective("mapping.fc1.w").T + self.effective("mapping.fc1.b"))
        return h @ self.effective("mapping.fc2.w").T + self.effective("mapping.fc2.b")

    def mean_latent(self, n_samples: int = 1024, seed: int = 0) -> LatentCode:
        """Empirical mean of mapped standard-normal Z samples, in W space."""
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n_samples, self.config.d_latent)).astype(self.dtype)
        return LatentCode.w(self.map_z(z).mean(axis=0))

    def broadcast_latent(self, latent: LatentCode) -> np.ndarray:
        """Resolve any latent space to per-layer style rows (n_layers, d)."""
        cfg = self.config
        v = latent.values.astype(self.dtype)
        if latent.space == LatentSpace.Z:
            if v.shape != (cfg.d_latent,):
                raise ConfigError(f"Z code shape {v.shape} != ({cfg.d_latent},)")
            v = self.map_z(v)
            return np.broadcast_to(v, (cfg.n_layers, cfg.d_latent)).copy()
        if latent.space == LatentSpace.W:
            if v.shape != (cfg.d_latent,):
                raise ConfigError(f"W code shape {v.shape} != ({cfg.d_latent},)")
            return np.broadcast_to(v, (cfg.n_layers, cfg.d_latent)).copy()
        if v.shape != (cfg.n_layers, cfg.d_latent):
            raise ConfigError(
                f"Wplus code shape {v.shape} != ({cfg.n_layers}, {cfg.d_latent})")
        return v.copy()

    # --- forward ------------------------------------------------------------

    def _layer_upsamples(self, i: int) -> bool:
        """The expansion head (first log2(out/base) layers) upsamples."""
        return i < len(self.config.stage_channels) - 1

    def forward_cached(self, w_rows: np.ndarray,
                       inject: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[np.ndarray, dict]:
        """Run the synthesis stack, recording everything backward() needs.

        `inject` is (feature_values, feature_mask): at the injection layer
        the generated activation f_l is replaced by
        f' = f_l * mask + feature * (1 - mask).
        """
        cfg = self.config
        l_inj = cfg.inject_layer if inject is not None else None
        eff = {k: self.effective(k) for k in self.theta_base}
        cache: dict = {"w_rows": w_rows, "eff": eff, "inject": None,
                       "layers": [], "upto": cfg.n_layers}
        x = eff["const"]
        for i in range(cfg.n_layers):
            if l_inj is not None and i == l_inj:
                f_vals, m_feat = inject
                if f_vals.shape != x.shape:
                    raise ConfigError(
                        f"injected feature shape {f_vals.shape} != tap shape {x.shape}")
                if m_feat.shape != x.shape[1:]:
                    raise ConfigError(
                        f"feature mask shape {m_feat.shape} != spatial {x.shape[1:]}")
                m = m_feat.astype(x.dtype)
                f_vals = f_vals.astype(x.dtype)
                blended = x * m + f_vals * (1.0 - m)
                cache["inject"] = {"f_l": x, "f": f_vals, "m": m, "f_prime": blended}
                x = blended
            rec = self._layer_forward(i, x, w_rows[i], eff)
            cache["layers"].append(rec)
            x = rec["y_out"]
        img = ops.conv1x1(x, eff["rgb.w"], eff["rgb.b"])
        cache["x_rgb_in"] = x
        return img, cache

    def _layer_forward(self, i: int, x: np.ndarray, w_row: np.ndarray, eff: dict) -> dict:
        y_conv = ops.conv3x3(x, eff[f"conv{i}.w"], eff[f"conv{i}.b"])
        s = eff[f"style{i}.w"] @ w_row + eff[f"style{i}.b"]
        y_mod = y_conv * s[:, None, None]
        t = np.tanh(y_mod)
        y_act = t + _LEAK * y_mod
        y_out = ops.upsample2x(y_act) if self._layer_upsamples(i) else y_act
        return {"x_in": x, "y_conv": y_conv, "s": s, "t": t, "y_out": y_out}

    def tap_to_layer(self, w_rows: np.ndarray, layer: int) -> np.ndarray:
        """Activation entering `layer` (the output of the first `layer` layers)."""
        eff = {k: self.effective(k) for k in self.theta_base}
        x = eff["const"]
        for i in range(layer):
            x = self._layer_forward(i, x, w_rows[i], eff)["y_out"]
        return x

    # --- backward -----------------------------------------------------------

    def backward(self, cache: dict, g_img: np.ndarray) -> Grads:
        """Propagate d(scalar)/d(image) to latent rows, weights and feature."""
        cfg = self.config
        eff = cache["eff"]
        g_theta: dict[str, np.ndarray] = {}
        g_w_rows = np.zeros((cfg.n_layers, cfg.d_latent), dtype=g_img.dtype)
        g_f = None

        g, g_theta["rgb.w"], g_theta["rgb.b"] = ops.conv1x1_vjp(
            cache["x_rgb_in"], eff["rgb.w"], g_img)

        inj = cache["inject"]
        l_inj = cfg.inject_layer if inj is not None else None
        for i in reversed(range(cfg.n_layers)):
            rec = cache["layers"][i]
            if self._layer_upsamples(i):
                g = ops.upsample2x_vjp(g)
            g_mod = leaky_tanh_vjp(rec["t"], g)
            g_s = (g_mod * rec["y_conv"]).sum(axis=(1, 2))
            g_conv = g_mod * rec["s"][:, None, None]
            g_theta[f"style{i}.w"] = np.outer(g_s, cache["w_rows"][i])
            g_theta[f"style{i}.b"] = g_s
            g_w_rows[i] = eff[f"style{i}.w"].T @ g_s
            g, g_theta[f"conv{i}.w"], g_theta[f"conv{i}.b"] = ops.conv3x3_vjp(
                rec["x_in"], eff[f"conv{i}.w"], g_conv)
            if l_inj is not None and i == l_inj:
                # blend point: route to the injected feature and to f_l
                g_f = g * (1.0 - inj["m"])
                g = g * inj["m"]
        return Grads(w_rows=g_w_rows, theta=g_theta, f=g_f)

    # --- public synthesis ops -------------------------------------------------

    def synthesize(self, latent: LatentCode) -> np.ndarray:
        """Render a (3,H,W) image from a latent code. Deterministic."""
        img, _ = self.forward_cached(self.broadcast_latent(latent))
        return img

    def tap_feature(self, latent: LatentCode) -> FeatureMap:
        """Activation at the injection point, detached from any session."""
        w_rows = self.broadcast_latent(latent)
        x = self.tap_to_layer(w_rows, self.config.inject_layer)
        return FeatureMap(self.config.inject_layer, x.copy())

    def synthesize_with_injection(self, latent: LatentCode, feature: FeatureMap,
                                  feature_mask: np.ndarray) -> np.ndarray:
        """Render with the blend f' = f_l*m + f*(1-m) at the injection layer."""
        self._check_feature(feature, feature_mask)
        img, _ = self.forward_cached(self.broadcast_latent(latent),
                                     inject=(feature.values, feature_mask))
        return img

    def blended_feature(self, latent: LatentCode, feature: FeatureMap,
                        feature_mask: np.ndarray) -> FeatureMap:
        """The blended activation f' actually entering the injection layer."""
        self._check_feature(feature, feature_mask)
        w_rows = self.broadcast_latent(latent)
        f_l = self.tap_to_layer(w_rows, self.config.inject_layer)
        m = feature_mask.astype(f_l.dtype)
        return FeatureMap(self.config.inject_layer,
                          f_l * m + feature.values.astype(f_l.dtype) * (1.0 - m))

    def _check_feature(self, feature: FeatureMap, feature_mask: np.ndarray) -> None:
        if feature.layer != self.config.inject_layer:
            raise ConfigError(
                f"feature tapped at layer {feature.layer}, generator injects at "
                f"{self.config.inject_layer}")
        if feature.values.shape != self.feature_shape:
            raise ConfigError(
                f"feature shape {feature.values.shape} != {self.feature_shape}")
        if feature_mask.shape != self.feature_shape[1:]:
            raise ConfigError(
                f"feature mask shape {feature_mask.shape} != {self.feature_shape[1:]}")
        vals = np.asarray(feature_mask)
        if not np.isin(vals, (0, 1)).all():
            raise ConfigError("feature mask must be binary")
