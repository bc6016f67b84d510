"""PNG figures rendered next to the CSV reports.

Figures are drawn on bare ``Figure`` objects with the Agg canvas, so no
display or pyplot state is involved, and saved without the software
metadata field so identical data gives identical bytes.
"""

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from . import kernel, net, probe

_SAVE = {"dpi": 100, "metadata": {"Software": None}}


def _new(ncols=1):
    fig = Figure(figsize=(4.5 * ncols, 3.4))
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, axes


def _save(fig, out, fname):
    fig.tight_layout()
    fig.savefig(out / fname, format="png", **_SAVE)
    return fname


def sweep_figure(report, out, name):
    fig, (rel, err, curves) = _new(3)
    for s in report.seeds:
        rows = [r for r in report.rows if r.seed == s]
        rel.plot([r.p for r in rows], [r.rel_convergence for r in rows], "o-", alpha=0.5, label=f"seed {s}")
    rel.plot(report.p_grid, report.by_p("rel_convergence"), "k-", lw=2, label="mean")
    rel.set_xlabel("label corruption p")
    rel.set_ylabel("steps to fit / steps at p=0")
    rel.legend(fontsize=7)
    err.plot(report.p_grid, report.by_p("test_err"), "o-")
    err.axhline(0.9, color="grey", ls=":", lw=1)
    err.set_xlabel("label corruption p")
    err.set_ylabel("test error")
    err.set_ylim(0, 1)
    seed = report.seeds[0]
    for shade, p in zip(np.linspace(0.15, 0.9, len(report.p_grid)), report.p_grid):
        losses = report.loss_curves.get((p, seed))
        if losses:
            curves.plot(np.arange(len(losses)), losses, color=(shade, 0.3, 1 - shade), label=f"p={p:g}")
    curves.set_xlabel("epoch")
    curves.set_ylabel(f"train loss (seed {seed})")
    curves.set_yscale("log")
    curves.legend(fontsize=7)
    return [_save(fig, out, f"{name}.png")]


def trace_figure(trace, out, name):
    fig, (loss, acc) = _new(2)
    loss.plot(trace.epoch, trace.train_loss)
    loss.set_xlabel("epoch")
    loss.set_ylabel("train loss")
    acc.plot(trace.epoch, trace.train_acc)
    acc.axhline(trace.fit_threshold, color="grey", ls=":", lw=1)
    acc.set_xlabel("epoch")
    acc.set_ylabel("train accuracy")
    return [_save(fig, out, f"{name}.png")]


def rademacher_figure(est, out, name):
    fig, (ax,) = _new()
    ax.hist(est.correlations, bins=20, range=(-1, 1))
    ax.axvline(est.estimate, color="k", ls="--", lw=1)
    ax.set_xlabel("per-trial correlation")
    ax.set_ylabel("trials")
    ax.set_title(est.family, fontsize=8)
    return [_save(fig, out, f"{name}.png")]


def linear_trace_figure(trace, out, name):
    fig, (ax,) = _new()
    floor = 1e-300
    ax.semilogy(trace.step, np.maximum(trace.distance_to_min_norm, floor), label="distance to min-norm w")
    ax.semilogy(trace.step, np.maximum(trace.span_residual, floor), label="distance to row space")
    ax.set_xlabel("SGD step")
    ax.legend(fontsize=7)
    return [_save(fig, out, f"{name}.png")]


def ridge_figure(path, out, name):
    fig, (norm, err) = _new(2)
    rows = [r for r in path.rows if r[0] > 0]  # log axis; lambda = 0 stays in the CSV
    lam = [r[0] for r in rows]
    norm.loglog(lam, [r[1] for r in rows], "o-")
    norm.set_xlabel("ridge lambda")
    norm.set_ylabel("RKHS norm")
    err.semilogx(lam, [r[2] for r in rows], "o-", label="train")
    err.semilogx(lam, [r[3] for r in rows], "o-", label="test")
    err.set_xlabel("ridge lambda")
    err.set_ylabel("error")
    err.legend(fontsize=7)
    return [_save(fig, out, f"{name}.png")]


def figures_for(name, report, out):
    """Render the figure that belongs to a report type, if any; returns file names."""
    if isinstance(report, probe.SweepReport):
        return sweep_figure(report, out, name)
    if isinstance(report, net.TrainTrace):
        return trace_figure(report, out, name)
    if isinstance(report, probe.RademacherEstimate):
        return rademacher_figure(report, out, name)
    if isinstance(report, kernel.LinearTrace):
        return linear_trace_figure(report, out, name)
    if isinstance(report, kernel.RidgePath) and sum(r[0] > 0 for r in report.rows) > 1:
        return ridge_figure(report, out, name)
    return []
