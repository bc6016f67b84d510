"""Randomization experiments: Rademacher estimates, corruption sweeps, reports.

Seeds for the pieces of one sweep cell are derived from the base seed with
tags "corrupt/<s>", "init/<s>" and "train/<s>" for replicate s. The same
replicate therefore gets the same initialization at every corruption level,
and its corrupted label sets are nested in p.
"""

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import net
from .data import Mode, randomize_labels
from .errors import ValidationError
from .seeding import derive_seed, rng as make_rng

MANIFEST = "manifest.json"
REPORT_VERSION = "effcap-report-v1"


def fmt(value):
    """9 significant digits for floats; None and NaN print as empty cells."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if np.isnan(value):
        return ""
    return f"{value:.9g}"


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([fmt(v) for v in row])


def _round(obj):
    # JSON floats go through the same 9-digit rounding as the CSVs
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not np.isfinite(obj) else float(f"{float(obj):.9g}")
    return obj


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(_round(doc), f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class Artifact:
    """A file produced by ``write(path)``, e.g. a binary parameter dump."""

    filename: str
    write: object


@dataclass
class Table:
    """A plain CSV artifact (residual tables, summaries)."""

    columns: tuple
    rows: list


# -- Rademacher ----------------------------------------------------------------


@dataclass
class RademacherEstimate:
    correlations: list
    n: int
    family: str
    method: str = "trained-fit lower bound on the supremum, sign-decoded outputs"
    fitted: list = field(default_factory=list)

    @property
    def trials(self):
        return len(self.correlations)

    @property
    def estimate(self):
        return float(np.mean(self.correlations))

    @property
    def standard_error(self):
        if self.trials < 2:
            return 0.0
        return float(np.std(self.correlations, ddof=1) / np.sqrt(self.trials))

    def summary(self):
        return {
            "family": self.family,
            "method": self.method,
            "n": self.n,
            "trials": self.trials,
            "estimate": self.estimate,
            "standard_error": self.standard_error,
            "fitted_trials": int(sum(self.fitted)),
        }


def draw_signs(n, gen):
    return np.where(gen.integers(0, 2, size=n) == 1, 1.0, -1.0)


def sign_correlation(sigma, outputs):
    """(1/n) sum sigma_i sign(f(x_i)) with sign(0) = +1."""
    signs = np.where(np.asarray(outputs) >= 0, 1.0, -1.0)
    return float(np.mean(sigma * signs))


def rademacher_trials(fit, n, trials, seed, family):
    """Generic estimator: ``fit(sigma, trial)`` returns the fitted outputs on the n inputs."""
    if trials < 1 or n < 1:
        raise ValidationError("trials and n must be positive")
    gen = make_rng(derive_seed(seed, "sigma"))
    values = []
    for trial in range(trials):
        sigma = draw_signs(n, gen)
        values.append(sign_correlation(sigma, fit(sigma, trial)))
    return RademacherEstimate(values, n, family)


def constant_family_estimate(n, trials, seed):
    """Exact supremum over {h = +1, h = -1}: |sum sigma| / n."""

    def fit(sigma, _):
        return np.full(n, 1.0 if sigma.sum() >= 0 else -1.0)

    return rademacher_trials(fit, n, trials, seed, "constant {+1, -1}")


def constant_family_expectation(n):
    """Large-n value of E|sum sigma| / n."""
    return float(np.sqrt(2.0 / (np.pi * n)))


def rademacher_estimate(ds, spec, cfg, trials, seed=0):
    """Train a scalar-head MLP on fresh random signs each trial.

    ``spec`` must have a scalar head (num_classes=1, squared loss on +-1
    targets) or 2 classes, which is converted to the scalar head.
    """
    if spec.num_classes not in (1, 2):
        raise ValidationError("Rademacher estimation needs a binary or scalar-output network")
    spec = replace(spec, num_classes=1)
    if spec.input_dim != ds.d:
        raise ValidationError(f"input_dim {spec.input_dim} does not match dataset d={ds.d}")
    fitted = []

    def fit(sigma, trial):
        labels = ((sigma + 1) // 2).astype(np.int64)
        target = replace(ds, labels=labels, num_classes=2)
        params = net.init_mlp(spec, derive_seed(seed, f"init/{trial}"))
        trial_cfg = replace(cfg, seed=derive_seed(seed, f"train/{trial}"))
        trace = net.train(params, target, trial_cfg)
        fitted.append(trace.fitted)
        return net.predict(trace.params, ds.features)[:, 0]

    est = rademacher_trials(fit, ds.n, trials, seed, f"MLP {spec.describe()}")
    est.fitted = fitted
    return est


# -- corruption sweep ------------------------------------------------------------


@dataclass
class SweepRow:
    p: float
    seed: int
    steps_to_fit: int
    rel_convergence: float
    train_acc: float
    test_err: float
    fit_flag: bool


@dataclass
class SweepReport:
    rows: list
    p_grid: list
    seeds: list
    loss_curves: dict = field(default_factory=dict)  # (p, seed) -> per-epoch train loss
    spec: str = ""

    columns = ("p", "seed", "steps_to_fit", "rel_convergence", "train_acc", "test_err", "fit_flag")

    def table(self):
        return [
            (r.p, r.seed, r.steps_to_fit, r.rel_convergence, r.train_acc, r.test_err, r.fit_flag)
            for r in self.rows
        ]

    def by_p(self, attr):
        """Mean of ``attr`` over seeds at each p (NaN where a cell has no value)."""
        out = []
        for p in self.p_grid:
            vals = [getattr(r, attr) for r in self.rows if r.p == p]
            vals = [np.nan if v is None else float(v) for v in vals]
            out.append(float(np.mean(vals)))
        return out

    def spearman(self):
        """Rank correlation of mean steps_to_fit against p."""
        steps = self.by_p("steps_to_fit")
        if len(self.p_grid) < 2 or np.any(np.isnan(steps)):
            return float("nan")
        rho = stats.spearmanr(self.p_grid, steps).statistic
        return float(rho)

    def summary(self):
        return {
            "spec": self.spec,
            "p_grid": self.p_grid,
            "seeds": self.seeds,
            "mean_steps_to_fit": self.by_p("steps_to_fit"),
            "mean_rel_convergence": self.by_p("rel_convergence"),
            "mean_test_err": self.by_p("test_err"),
            "spearman_steps_vs_p": self.spearman(),
            "all_fitted": all(r.fit_flag for r in self.rows),
        }


def _sweep_cell(args):
    train_ds, test_ds, spec, cfg, p, s, base = args
    corrupted = randomize_labels(train_ds, Mode.PARTIAL_CORRUPTION, derive_seed(base, f"corrupt/{s}"), p)
    params = net.init_mlp(spec, derive_seed(base, f"init/{s}"))
    trace = net.train(params, corrupted, replace(cfg, seed=derive_seed(base, f"train/{s}")))
    _, test_acc = net.evaluate(trace.params, test_ds)
    return trace.steps_to_fit, trace.train_acc[-1], 1.0 - test_acc, list(trace.train_loss)


def corruption_sweep(train_ds, test_ds, spec, cfg, p_grid, seeds, jobs=1, base_seed=0):
    """Train one network per (p, seed); rows come back in grid order.

    ``cfg.seed`` is ignored; every cell seed is derived from ``base_seed``.
    """
    p_grid = [float(p) for p in p_grid]
    seeds = [int(s) for s in seeds]
    if not p_grid or not seeds:
        raise ValidationError("corruption sweep needs a nonempty p grid and seed list")
    if p_grid != sorted(p_grid) or len(set(p_grid)) != len(p_grid):
        raise ValidationError("p grid must be strictly increasing")
    if p_grid[0] != 0.0:
        raise ValidationError("p grid must include p=0 (normalization anchor)")
    if any(not 0 <= p <= 1 for p in p_grid):
        raise ValidationError("corruption levels must lie in [0, 1]")
    cells = [(p, s) for p in p_grid for s in seeds]
    work = [(train_ds, test_ds, spec, cfg, p, s, base_seed) for p, s in cells]
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, work))
    else:
        results = [_sweep_cell(w) for w in work]

    base = {s: res[0] for (p, s), res in zip(cells, results) if p == 0.0}
    rows, curves = [], {}
    for (p, s), (steps, acc, err, losses) in zip(cells, results):
        if p == 0.0 and steps is not None:
            rel = 1.0
        elif steps is None or not base.get(s):
            rel = float("nan")
        else:
            rel = steps / base[s]
        rows.append(SweepRow(p, s, steps, rel, acc, err, steps is not None))
        curves[(p, s)] = losses
    return SweepReport(rows, p_grid, seeds, curves, spec.describe())


# -- reports -------------------------------------------------------------------


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _emit(name, report, out):
    """Write one report's CSV/JSON files; returns the file names."""
    from . import kernel

    if isinstance(report, SweepReport):
        write_csv(out / f"{name}.csv", report.columns, report.table())
        write_json(out / f"{name}.json", report.summary())
        return [f"{name}.csv", f"{name}.json"]
    if isinstance(report, RademacherEstimate):
        write_csv(out / f"{name}.csv", ("trial", "correlation"), list(enumerate(report.correlations)))
        write_json(out / f"{name}.json", report.summary())
        return [f"{name}.csv", f"{name}.json"]
    if isinstance(report, net.TrainTrace):
        report.write_csv(out / f"{name}.csv")
        write_json(
            out / f"{name}.json",
            {
                "steps_to_fit": report.steps_to_fit,
                "fit_threshold": report.fit_threshold,
                "epochs": report.epoch[-1],
                "final_train_acc": report.train_acc[-1],
                "final_train_loss": report.train_loss[-1],
            },
        )
        return [f"{name}.csv", f"{name}.json"]
    if isinstance(report, kernel.LinearTrace):
        report.write_csv(out / f"{name}.csv")
        write_json(
            out / f"{name}.json",
            {
                "steps": report.step[-1],
                "max_span_residual": max(report.span_residual),
                "final_distance_to_min_norm": report.distance_to_min_norm[-1],
                "final_w": report.final_w,
            },
        )
        return [f"{name}.csv", f"{name}.json"]
    if isinstance(report, kernel.RidgePath):
        write_csv(out / f"{name}.csv", report.columns, report.rows)
        write_json(out / f"{name}.json", {"kind": report.kind, "gamma": report.gamma, "alpha_norms": report.alpha_norms, "jitter_used": report.jitter})
        return [f"{name}.csv", f"{name}.json"]
    if isinstance(report, Artifact):
        report.write(out / report.filename)
        return [report.filename]
    if isinstance(report, Table):
        write_csv(out / f"{name}.csv", report.columns, report.rows)
        return [f"{name}.csv"]
    if isinstance(report, dict):
        write_json(out / f"{name}.json", report)
        return [f"{name}.json"]
    raise ValidationError(f"no report writer for {type(report).__name__}")


def _write_manifest(out, status, config, files):
    doc = {
        "version": REPORT_VERSION,
        "status": status,
        "config": config or {},
        "files": [{"path": f, "sha256": _sha256(out / f), "bytes": (out / f).stat().st_size} for f in files],
    }
    tmp = out / (MANIFEST + ".tmp")
    with open(tmp, "w") as f:
        json.dump(_round(doc), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, out / MANIFEST)
    return doc


def write_report(reports, out_dir, config=None, figures=True):
    """Write every report in ``reports`` (name -> report) under ``out_dir``.

    The manifest is written first with status "incomplete" and rewritten with
    status "complete" and a sha256 per file once everything else is on disk.
    Returns the final manifest document.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "incomplete", config, [])
    files = []
    for name, report in reports.items():
        files += _emit(name, report, out)
        if figures:
            from . import plotting

            files += plotting.figures_for(name, report, out)
    return _write_manifest(out, "complete", config, files)
