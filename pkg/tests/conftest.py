"""Shared fixtures: generators at two sizes and a cache-free environment."""

import numpy as np
import pytest

from hybridinv.generator import ToyConfig, ToyGenerator

# small config: same topology, ~20x cheaper; used wherever the numbers
# themselves are not frozen against the default generator
SMALL = ToyConfig(d_latent=12, stage_channels=(8, 10, 8, 6), inject_layer=4)


@pytest.fixture(scope="session")
def state():
    """Default desk-scale generator, float32."""
    return ToyGenerator.from_seed(7)


@pytest.fixture(scope="session")
def state64():
    """Default generator in float64 for finite-difference work."""
    return ToyGenerator.from_seed(7, dtype=np.float64)


@pytest.fixture(scope="session")
def small():
    return ToyGenerator.from_seed(7, config=SMALL)


@pytest.fixture(scope="session")
def small64():
    return ToyGenerator.from_seed(7, config=SMALL, dtype=np.float64)


@pytest.fixture(autouse=True)
def _no_cache(monkeypatch, tmp_path):
    """Point the artifact cache at a fresh temp dir for every test."""
    monkeypatch.setenv("HYBRIDINV_CACHE", str(tmp_path / "cache"))


def corpus_images(state):
    """Representative 32x32 inputs: renders, patched render, flats, noise."""
    from hybridinv.generator import LatentCode

    rng = np.random.default_rng
    render = state.synthesize(
        LatentCode.z(rng(0).standard_normal(state.d_latent)))
    patched = render.copy()
    patched[:, 8:22, 9:23] = rng(1).uniform(-1, 1, (3, 14, 14)).astype(np.float32)
    grad = np.linspace(-1, 1, 32, dtype=np.float32)
    gradient = np.stack([np.tile(grad, (32, 1))] * 3)
    return {
        "render": render,
        "patched": patched,
        "constant": np.zeros((3, 32, 32), dtype=np.float32),
        "gradient": gradient,
        "noise": rng(2).uniform(-1, 1, (3, 32, 32)).astype(np.float32),
    }
