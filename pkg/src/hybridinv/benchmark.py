"""Time-vs-quality sweep over refinement step budgets, plus the
weight-only baseline the hybrid scheme is compared against.

For each budget the full pipeline (embed, segment, refine, render) runs on
every instance with steps_feature = budget and steps_theta = budget // 2,
keeping the paper-default 2:1 ratio between the branches. Metric columns
are deterministic for fixed seeds; wall time is measured, not replayed.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StageError
from .metrics import make_oracle
from .optim import Adam
from .pipeline import RunConfig, invert_image
from .refinement import LR_THETA, masked_loss, masked_loss_grad
from .toydata import ToyInstance, make_instances


@dataclass
class BenchmarkRow:
    steps: int
    wall_time: float   # mean seconds per successful instance
    psnr: float
    mse: float
    failures: int = 0


def run_benchmark(state, instances: list[ToyInstance], budgets: list[int],
                  config: RunConfig | None = None,
                  no_cache: bool = True) -> list[BenchmarkRow]:
    """One row per budget, averaged over instances; failures counted."""
    if not instances and budgets:
        raise ValueError("instance set must be nonempty")
    base = config or RunConfig()
    rows: list[BenchmarkRow] = []
    for budget in budgets:
        cfg = dataclasses.replace(base, steps_feature=int(budget),
                                  steps_theta=int(budget) // 2)
        times, psnrs, mses = [], [], []
        failures = 0
        for inst in instances:
            t0 = time.perf_counter()
            try:
                result = invert_image(state, inst.target, cfg,
                                      parsing=inst.parsing(cfg.tau1, cfg.tau2),
                                      no_cache=no_cache)
            except StageError:
                failures += 1
                continue
            times.append(time.perf_counter() - t0)
            psnrs.append(result.record.psnr)
            mses.append(result.record.mse)
        rows.append(BenchmarkRow(
            steps=int(budget),
            wall_time=float(np.mean(times)) if times else float("nan"),
            psnr=float(np.mean(psnrs)) if psnrs else float("nan"),
            mse=float(np.mean(mses)) if mses else float("nan"),
            failures=failures))
    return rows


def weight_only_refine(state, latent, target: np.ndarray, steps: int,
                       lr: float = LR_THETA, lam: float = 1.0,
                       oracle: str = "pyramid",
                       include_style_affines: bool = False):
    """Whole-image weight tuning without feature injection or masks.

    The baseline the hybrid scheme is measured against: same loss field,
    same optimizer family, but only theta_delta moves and every pixel is
    treated as in-domain. Returns (tuned state, loss history).
    """
    state = state.clone()
    orc = make_oracle(oracle)
    w_rows = state.broadcast_latent(latent)
    target = target.astype(state.dtype)
    full = np.ones(target.shape[1:], dtype=np.uint8)
    trainable = state.trainable_keys(include_style_affines)
    params = {k: state.theta_delta[k] for k in trainable}
    opt = Adam(params, lr=lr)
    history: list[float] = []
    for _ in range(int(steps)):
        img, cache = state.forward_cached(w_rows)
        history.append(masked_loss(img, target, full, "in", orc, lam))
        grads = state.backward(
            cache, masked_loss_grad(img, target, full, "in", orc, lam))
        opt.step({k: grads.theta[k] for k in trainable})
    return state, history


def format_table(rows: list[BenchmarkRow]) -> str:
    lines = [f"{'steps':>6}  {'time_s':>8}  {'psnr_db':>8}  {'mse':>12}  {'failures':>8}"]
    for r in rows:
        lines.append(f"{r.steps:>6}  {r.wall_time:>8.3f}  {r.psnr:>8.3f}  "
                     f"{r.mse:>12.6e}  {r.failures:>8}")
    return "\n".join(lines) + "\n"


def render_curve(rows: list[BenchmarkRow], path: str | Path) -> Path:
    """PSNR against wall time, one point per budget."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=120)
    ok = [r for r in rows if np.isfinite(r.psnr)]
    ax.plot([r.wall_time for r in ok], [r.psnr for r in ok], "o-")
    for r in ok:
        ax.annotate(f"{r.steps}", (r.wall_time, r.psnr),
                    textcoords="offset points", xytext=(5, 5), fontsize=8)
    ax.set_xlabel("wall time per image (s)")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("refinement budget sweep")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
