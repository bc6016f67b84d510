"""Command-line entry point: ``effcap <subcommand> [flags]``.

Configuration is one flat set of keys. Values come from the defaults in
``SCHEMA``, then an optional JSON file (``--config``), then explicit flags.
Unknown keys and ill-typed values are rejected. The resolved configuration
is echoed into ``manifest.json`` under ``--out``.

Exit status: 0 success, 1 validation or input error, 2 numeric failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data, expressivity, kernel, net, probe
from .errors import NumericError, ValidationError
from .seeding import derive_seed, rng as make_rng

SUBCOMMANDS = ("fit-random", "sweep-corruption", "expressivity", "kernel", "sgd-linear", "rademacher", "param-count")

# key: (type, default, help). "float?" etc. allow null.
SCHEMA = {
    "seed": ("int", 0, "global seed; every component seed is derived from it"),
    "out": ("str", None, "output directory (default effcap-out/<subcommand>)"),
    "jobs": ("int?", None, "worker processes for sweep cells (default: logical cores)"),
    "figures": ("bool", True, "render PNG figures next to the CSV/JSON reports"),
    "demo": ("bool", False, "run the built-in worked example and print it"),
    # dataset
    "dataset": ("str?", None, "mnist | cifar10 | synth (required by data-driven subcommands)"),
    "mnist_dir": ("str", os.environ.get("EFFCAP_MNIST_DIR", "data/mnist"), "directory with the four MNIST IDX files"),
    "cifar_dir": ("str", os.environ.get("EFFCAP_CIFAR_DIR", "data/cifar-10-batches-bin"), "directory with CIFAR10 binary batches"),
    "n_train": ("int", 1024, "training rows (first rows of the training split)"),
    "n_test": ("int", 10000, "test rows (first rows of the test split)"),
    "whiten": ("bool", True, "per-image whitening"),
    "synth_d": ("int", 32, "synthetic input dimension"),
    "synth_classes": ("int", 10, "synthetic class count"),
    "synth_separation": ("float", 4.0, "distance between synthetic class means"),
    # randomization
    "randomization": ("str", "random_labels", "true | partial | random_labels | shuffled_pixels | random_pixels | gaussian"),
    "corruption_p": ("float", 0.0, "label corruption probability for mode 'partial'"),
    # model and training
    "mlp": ("str", "1x512", "hidden layers, '3x512' or '512,256'"),
    "weight_decay": ("float", 0.0, "L2 coefficient on weights (biases excluded)"),
    "learning_rate": ("float", 0.01, "initial learning rate"),
    "lr_decay": ("float", 0.95, "learning-rate factor per epoch"),
    "momentum": ("float", 0.9, "heavy-ball momentum"),
    "batch_size": ("int", 128, "mini-batch size"),
    "max_epochs": ("int", 1000, "epoch budget"),
    "fit_threshold": ("float", 0.999, "train accuracy that counts as fitted"),
    # sweep / rademacher
    "p_grid": ("floats", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], "corruption levels (must start at 0)"),
    "seeds": ("ints", [0, 1, 2], "sweep replicates"),
    "trials": ("int", 20, "Rademacher trials"),
    # kernel
    "kind": ("str", "rbf", "linear | rbf"),
    "gamma": ("float?", None, "RBF bandwidth (default: 1 / median squared distance)"),
    "ridge_lambdas": ("floats", [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0], "ridge path grid"),
    "relu_features": ("int", 0, "random ReLU features before the kernel (0 = raw inputs)"),
    "feature_scale": ("float", 1.0, "random feature weight scale"),
    # expressivity / sgd-linear
    "n": ("int", 64, "sample count for expressivity and sgd-linear"),
    "d": ("int", 8, "input dimension for expressivity and sgd-linear"),
    "depths": ("ints", [2, 4, 8], "depths k for the layered construction"),
    "steps": ("int", 100000, "SGD steps"),
    "sgd_lr": ("float?", None, "constant SGD step (default 0.5 / largest eigenvalue of X X^T)"),
    "snapshot_every": ("int", 1000, "LinearTrace snapshot interval"),
    # param-count
    "input_dim": ("int", 2352, "input dimension for param-count"),
    "classes": ("int", 10, "output classes for param-count"),
}

# flag -> key, for flags whose name is not the key with '-' for '_'
FLAG_KEYS = {"mode": "randomization", "p": "corruption_p", "lr": "learning_rate", "lambdas": "ridge_lambdas"}


def _check_type(key, value):
    kind = SCHEMA[key][0]
    if kind.endswith("?"):
        if value is None:
            return None
        kind = kind[:-1]
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "ints": lambda v: isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v),
        "floats": lambda v: isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v),
    }[kind]
    if not ok(value):
        raise ValidationError(f"config key {key!r} expects {kind}, got {json.dumps(value)}")
    if kind == "float":
        return float(value)
    if kind == "floats":
        return [float(x) for x in value]
    return value


def load_config_file(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return doc


def parse_config(subcommand, file_values=None, flag_values=None):
    """Resolve defaults < file < flags into a checked dict."""
    if subcommand not in SUBCOMMANDS:
        raise ValidationError(f"unknown subcommand {subcommand!r}")
    config = {key: spec[1] for key, spec in SCHEMA.items()}
    for source in (file_values or {}, flag_values or {}):
        for key, value in source.items():
            if key not in SCHEMA:
                raise ValidationError(f"unknown config key {key!r}")
            config[key] = _check_type(key, value)
    config["subcommand"] = subcommand
    if config["out"] is None:
        config["out"] = str(Path("effcap-out") / subcommand)
    if config["jobs"] is None:
        config["jobs"] = os.cpu_count() or 1
    if config["jobs"] < 1:
        raise ValidationError("jobs must be positive")
    return config


# -- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _flag_type(kind):
    kind = kind.rstrip("?")
    if kind == "ints":
        return lambda s: [int(x) for x in s.split(",") if x]
    if kind == "floats":
        return lambda s: [float(x) for x in s.split(",") if x]
    return {"int": int, "float": float, "str": str}[kind]


def build_parser():
    parser = _Parser(prog="effcap", description="Randomization tests and interpolation constructions.",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    key_flags = {key: "--" + key.replace("_", "-") for key in SCHEMA}
    key_flags.update({key: "--" + flag for flag, key in FLAG_KEYS.items()})
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, allow_abbrev=False)
        p.add_argument("--config", help="JSON config file (flags override its values)")
        for key, (kind, default, help_text) in SCHEMA.items():
            if kind == "bool":
                continue
            p.add_argument(key_flags[key], dest=key, type=_flag_type(kind), default=argparse.SUPPRESS,
                           help=f"{help_text} [default: {default}]")
        p.add_argument("--no-figures", dest="figures", action="store_false", default=argparse.SUPPRESS)
        p.add_argument("--no-whiten", dest="whiten", action="store_false", default=argparse.SUPPRESS)
        p.add_argument("--demo", dest="demo", action="store_true", default=argparse.SUPPRESS)
    return parser


# -- data ----------------------------------------------------------------------------


def _find(directory, *names):
    for name in names:
        for candidate in (Path(directory) / name, Path(directory) / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise ValidationError(f"none of {', '.join(names)} found in {directory}")


def load_datasets(config):
    """(train, test) from the configured source, whitened if requested."""
    source = config["dataset"]
    if source is None:
        raise ValidationError("missing required dataset source (set 'dataset' to mnist, cifar10 or synth)")
    n_train, n_test = config["n_train"], config["n_test"]
    if source == "mnist":
        root = config["mnist_dir"]
        train = data.load_idx(_find(root, "train-images-idx3-ubyte", "train-images.idx3-ubyte"),
                              _find(root, "train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
                              limit=n_train, name="mnist-train")
        test = data.load_idx(_find(root, "t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
                             _find(root, "t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
                             limit=n_test, name="mnist-test")
    elif source == "cifar10":
        root = config["cifar_dir"]
        batches = [_find(root, f"data_batch_{i}.bin") for i in range(1, 6)]
        train = data.load_cifar10_bin(batches, limit=n_train, name="cifar10-train")
        test = data.load_cifar10_bin([_find(root, "test_batch.bin")], limit=n_test, name="cifar10-test")
    elif source == "synth":
        args = (config["synth_d"], config["synth_classes"], config["synth_separation"])
        train = data.synth_blobs(n_train, *args, derive_seed(config["seed"], "synth/train"), name="synth-train")
        test = data.synth_blobs(n_test, *args, derive_seed(config["seed"], "synth/test"), name="synth-test")
    else:
        raise ValidationError(f"unknown dataset source {source!r}")
    if train.n < n_train or test.n < n_test:
        raise ValidationError(f"requested {n_train}/{n_test} rows, source has {train.n}/{test.n}")
    if config["whiten"]:
        train, test = data.whiten_per_image(train), data.whiten_per_image(test)
    return train, test


def train_config(config, seed):
    return net.TrainConfig(
        initial_lr=config["learning_rate"],
        lr_decay_per_epoch=config["lr_decay"],
        momentum=config["momentum"],
        batch_size=config["batch_size"],
        max_epochs=config["max_epochs"],
        fit_threshold=config["fit_threshold"],
        seed=seed,
    )


def _log(message):
    print(message, file=sys.stderr)


# -- subcommands -----------------------------------------------------------------------


def run_param_count(config):
    spec = net.MlpSpec.parse(config["mlp"], config["input_dim"], config["classes"])
    print(net.param_count(spec))
    return None


def run_fit_random(config):
    seed = config["seed"]
    train, test = load_datasets(config)
    rand = data.RandomizationSpec(config["randomization"], config["corruption_p"], derive_seed(seed, "randomize"))
    train, test = data.apply_randomization(train, test, rand)
    spec = net.MlpSpec.parse(config["mlp"], train.d, train.num_classes, config["weight_decay"])
    params = net.init_mlp(spec, derive_seed(seed, "init"))
    trace = net.train(params, train, train_config(config, derive_seed(seed, "train")), log=_log)
    test_loss, test_acc = net.evaluate(trace.params, test)
    summary = {
        "model": spec.describe(),
        "param_count": net.param_count(spec),
        "randomization": rand.mode.value,
        "corruption_p": rand.corruption_p,
        "effective_flip_rate": data.effective_flip_rate(rand.corruption_p, train.num_classes)
        if rand.mode is data.Mode.PARTIAL_CORRUPTION else None,
        "steps_to_fit": trace.steps_to_fit,
        "train_acc": trace.train_acc[-1],
        "test_acc": test_acc,
        "test_loss": test_loss,
    }
    print(f"steps_to_fit={trace.steps_to_fit} train_acc={trace.train_acc[-1]:.4f} test_acc={test_acc:.4f}")
    return {
        "trace": trace,
        "summary": summary,
        "params": probe.Artifact("params.bin", lambda path: net.save_params(path, trace.params, seed)),
    }


def run_sweep(config):
    train, test = load_datasets(config)
    spec = net.MlpSpec.parse(config["mlp"], train.d, train.num_classes, config["weight_decay"])
    report = probe.corruption_sweep(train, test, spec, train_config(config, 0), config["p_grid"], config["seeds"],
                                    jobs=config["jobs"], base_seed=config["seed"])
    for row in report.rows:
        print(f"p={row.p:g} seed={row.seed} steps_to_fit={row.steps_to_fit} test_err={row.test_err:.4f}")
    print(f"spearman(steps_to_fit, p)={report.spearman():.3f}")
    return {"sweep": report}


def run_rademacher(config):
    train, _ = load_datasets(config)
    spec = net.MlpSpec.parse(config["mlp"], train.d, 1, config["weight_decay"])
    est = probe.rademacher_estimate(train, spec, train_config(config, 0), config["trials"], seed=config["seed"])
    control = probe.constant_family_estimate(train.n, max(config["trials"], 200), derive_seed(config["seed"], "control"))
    print(f"estimate={est.estimate:.4f} (lower bound, {est.trials} trials, se {est.standard_error:.4f})")
    print(f"constant family: {control.estimate:.4f} vs sqrt(2/(pi n))={probe.constant_family_expectation(train.n):.4f}")
    return {"rademacher": est, "rademacher_constant_family": control}


def _print_table(columns, rows):
    print("  ".join(f"{c:>14}" for c in columns))
    for row in rows:
        print("  ".join(f"{probe.fmt(v):>14}" for v in row))


def run_expressivity(config):
    if config["demo"]:
        z, y = np.array([[0.0], [1.0]]), np.array([3.0, -1.0])
        model = expressivity.construct_depth2(z, y, config["seed"], direction=[1.0])
        pred = model(z)
        print(f"a={model.a.tolist()} b={model.b.tolist()} w={model.w.tolist()}")
        for zi, yi, pi in zip(z[:, 0], y, pred):
            print(f"c({zi:g}) = {pi:g}  target {yi:g}  residual {abs(pi - yi):g}")
        return None
    n, d, seed = config["n"], config["d"], config["seed"]
    gen = make_rng(derive_seed(seed, "expressivity/data"))
    z = gen.standard_normal((n, d))
    y = gen.standard_normal(n)
    columns = ("construction", "k", "affine_maps", "max_width", "weight_count", "weight_bound", "width_bound",
               "max_rel_residual")
    rows, nets = [], {}
    model = expressivity.construct_depth2(z, y, seed)
    rows.append(("depth2", 2, 2, n, model.weight_count, d + 2 * n, n, expressivity.fit_residuals(model, z, y)))
    nets["depth2"] = model.to_json()
    for k in config["depths"]:
        layered = expressivity.construct_depth_k(z, y, k, seed)
        rows.append((
            "depth_k", k, layered.depth, max(layered.widths), layered.weight_count,
            expressivity.WEIGHT_CONSTANT * (n + d), expressivity.WIDTH_CONSTANT * n / k,
            expressivity.fit_residuals(layered, z, y),
        ))
        nets[f"depth_k{k}"] = layered.to_json()
    _print_table(columns, rows)
    return {"residuals": probe.Table(columns, rows), "networks": nets}


def run_kernel(config):
    if config["demo"]:
        X, y = np.array([[1.0, 1.0]]), np.array([2.0])
        w, norm = kernel.min_norm_linear(X, y)
        print(f"X={X.tolist()} y={y.tolist()} -> w=({', '.join(probe.fmt(v) for v in w)}) norm={norm:.9g}")
        return None
    train, test = load_datasets(config)
    if config["relu_features"]:
        fseed = derive_seed(config["seed"], "relu_features")
        Xtr = kernel.random_relu_features(train.features, config["relu_features"], config["feature_scale"], fseed)
        Xte = kernel.random_relu_features(test.features, config["relu_features"], config["feature_scale"], fseed)
        train = data.Dataset(Xtr, train.labels, train.num_classes, train.name + "+relu")
        test = data.Dataset(Xte, test.labels, test.num_classes, test.name + "+relu")
    spec = kernel.KernelSpec(config["kind"], config["gamma"])
    path = kernel.ridge_path(train, test, spec, config["ridge_lambdas"])
    _print_table(path.columns, path.rows)
    first = path.systems[0]
    y = kernel.one_hot(train.labels, train.num_classes)
    summary = {
        "kind": path.kind,
        "gamma": path.gamma,
        "n_train": train.n,
        "n_test": test.n,
        "d": train.d,
        "lambda": first.ridge_lambda,
        "jitter_used": first.jitter_used,
        "residual": first.residual,
        "residual_tolerance": kernel.interpolation_tolerance(y),
        "rkhs_norm": first.rkhs_norm,
        "encoding": "one-hot targets, one alpha column per class, argmax decoding",
    }
    return {"ridge_path": path, "kernel_summary": summary, "alpha": probe.Artifact("alpha.bin", first.save)}


def run_sgd_linear(config):
    n, d, seed = config["n"], config["d"], config["seed"]
    gen = make_rng(derive_seed(seed, "sgd/data"))
    X = gen.standard_normal((n, d))
    y = gen.standard_normal(n)
    lam_max = float(np.linalg.eigvalsh(X @ X.T)[-1])
    lr = config["sgd_lr"] if config["sgd_lr"] is not None else 0.5 / lam_max
    trace = kernel.sgd_linear_train(X, y, config["steps"], lr, derive_seed(seed, "sgd/order"), config["snapshot_every"])
    H = kernel.hessian_linear(X, y, np.zeros(d), trace.final_w)
    print(f"lr={lr:.6g} max span_residual={max(trace.span_residual):.3g} "
          f"final distance to min-norm={trace.distance_to_min_norm[-1]:.3g}")
    summary = {
        "lr": lr,
        "lambda_max": lam_max,
        "hessian_max_abs_difference": H.max_abs_difference,
        "hessian_min_eigenvalue": H.min_eigenvalue,
    }
    return {"sgd_linear": trace, "sgd_summary": summary}


RUNNERS = {
    "fit-random": run_fit_random,
    "sweep-corruption": run_sweep,
    "expressivity": run_expressivity,
    "kernel": run_kernel,
    "sgd-linear": run_sgd_linear,
    "rademacher": run_rademacher,
    "param-count": run_param_count,
}


def run(config):
    """Execute a resolved config; returns the manifest, or None for print-only runs."""
    reports = RUNNERS[config["subcommand"]](config)
    if reports is None:
        return None
    manifest = probe.write_report(reports, config["out"], config, figures=config["figures"])
    print(f"wrote {len(manifest['files']) + 1} files to {config['out']}")
    return manifest


def main(argv=None):
    try:
        args = vars(build_parser().parse_args(argv))
        subcommand = args.pop("subcommand")
        config_path = args.pop("config", None)
        file_values = load_config_file(config_path) if config_path else {}
        run(parse_config(subcommand, file_values, args))
    except ValidationError as exc:
        print(f"effcap: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"effcap: error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"effcap: numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
