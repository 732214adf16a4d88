"""Report figures, rendered straight to files (no GUI backend involved)."""

from __future__ import annotations

import numpy as np
from matplotlib.figure import Figure


def _show(ax, image, title, **kw):
    ax.imshow(np.clip(image, 0.0, 1.0) if image.ndim == 3 else image, interpolation="nearest", **kw)
    ax.set_title(title, fontsize=9)
    ax.set_axis_off()


def deblur_report(path, blurred, deblurred, weights, trace=(), reference=None):
    """Input, result, final weights and the energy / weight-change history."""
    panels = 4 if reference is None else 5
    fig = Figure(figsize=(3.2 * panels, 3.4), layout="constrained")
    axes = fig.subplots(1, panels)
    i = 0
    if reference is not None:
        _show(axes[i], reference, "reference")
        i += 1
    _show(axes[i], blurred, "blurred")
    _show(axes[i + 1], deblurred, "deblurred")
    _show(axes[i + 2], weights, "data weights", cmap="gray", vmin=0.0, vmax=1.0)
    ax = axes[i + 3]
    steps = [r for r in trace if not r.closes_round]
    rounds = [r for r in trace if r.closes_round]
    if steps:
        ax.semilogy(np.arange(len(steps)), [r.energy for r in steps], lw=1, label="energy")
        ax.set_xlabel("CG step (all rounds)", fontsize=8)
    if rounds:
        ax2 = ax.twinx()
        per_round = len(steps) / len(rounds) if steps else 1.0
        x = (np.arange(len(rounds)) + 1) * per_round - 1
        ax2.semilogy(x, [max(r.weight_change, 1e-16) for r in rounds], "o-", color="tab:red", ms=3,
                     lw=1, label="max |dw|")
        ax2.tick_params(labelsize=7)
        ax2.set_ylabel("max |dw|", fontsize=8, color="tab:red")
    ax.set_title("solver history", fontsize=9)
    ax.tick_params(labelsize=7)
    fig.savefig(path, dpi=110)


def comparison_figure(path, reference, image, psnr_value, ssim_value):
    fig = Figure(figsize=(9.6, 3.4), layout="constrained")
    a, b, c = fig.subplots(1, 3)
    _show(a, reference, "reference")
    _show(b, image, f"image  psnr {psnr_value:.2f} dB  ssim {ssim_value:.4f}")
    err = np.abs(np.asarray(image, float) - np.asarray(reference, float))
    err = err.mean(axis=2) if err.ndim == 3 else err
    im = c.imshow(err, cmap="magma", interpolation="nearest")
    c.set_title("mean absolute error", fontsize=9)
    c.set_axis_off()
    fig.colorbar(im, ax=c, shrink=0.8)
    fig.savefig(path, dpi=110)


def kernel_figure(path, background, kernels, pixels, samples=None):
    """Blur rows overlaid on the image; ``samples`` optionally adds the sample positions."""
    fig = Figure(figsize=(9.0, 4.4), layout="constrained")
    a, b = fig.subplots(1, 2)
    _show(a, background, "pixels")
    for k, (x, y) in enumerate(pixels):
        a.plot([x], [y], "r+", ms=8)
        if samples is not None:
            s = samples[k]
            a.plot(s[:, 0], s[:, 1], "-", color="yellow", lw=0.8)
    _show(b, kernels, "blur rows", cmap="gray")
    fig.savefig(path, dpi=110)
