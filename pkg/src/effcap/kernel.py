"""Linear models that interpolate: Gram systems, minimum-norm solutions, SGD.

Solving ``K alpha = y`` with ``K = X X^T`` gives ``w = X^T alpha``, the
minimum Euclidean norm solution of ``X w = y``; SGD started from ``w = 0``
never leaves the row space of X and converges to the same point. The
helpers here build and check each of those statements numerically.

Multi-class targets are encoded one-hot, one alpha column per class, and
decoded by argmax.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NumericError, ValidationError
from .seeding import rng as make_rng

JITTER_START = 1e-10
JITTER_DOUBLINGS = 8
DIVERGENCE_NORM = 1e12
_ROW_BLOCK = 2048


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = None  # RBF only; None -> median heuristic at first use

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ("linear", "rbf"):
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and self.gamma is not None and not self.gamma > 0:
            raise ValidationError("RBF gamma must be positive")


def median_gamma(X, subsample=512, seed=0):
    """1 / median squared pairwise distance over a random row subsample."""
    X = np.asarray(X, dtype=np.float64)
    gen = make_rng(seed)
    rows = X if X.shape[0] <= subsample else X[np.sort(gen.choice(X.shape[0], subsample, replace=False))]
    sq = np.einsum("ij,ij->i", rows, rows)
    dist = sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T
    med = np.median(dist[np.triu_indices(rows.shape[0], 1)]) if rows.shape[0] > 1 else 0.0
    if not med > 0:
        return 1.0
    return 1.0 / med


def resolve(spec, X):
    if spec.kind == "rbf" and spec.gamma is None:
        return KernelSpec("rbf", median_gamma(X))
    return spec


def _symmetrize_inplace(K):
    # copy the upper triangle onto the lower one, one row block at a time
    n = K.shape[0]
    for lo in range(0, n, _ROW_BLOCK):
        hi = min(lo + _ROW_BLOCK, n)
        K[lo:hi, :lo] = K[:lo, lo:hi].T
        diag = K[lo:hi, lo:hi]
        lower = np.tril_indices(hi - lo, -1)
        diag[lower] = diag.T[lower]


def gram(X, spec, Y=None):
    """Kernel matrix k(X_i, Y_j); with Y omitted, the symmetric Gram matrix of X.

    The symmetric case is made exactly symmetric and, for RBF, has an exact
    unit diagonal.
    """
    X = np.asarray(X, dtype=np.float64)
    spec = resolve(spec, X)
    same = Y is None
    Y = X if same else np.asarray(Y, dtype=np.float64)
    K = X @ Y.T
    if spec.kind == "rbf":
        sx = np.einsum("ij,ij->i", X, X)
        sy = sx if same else np.einsum("ij,ij->i", Y, Y)
        K *= -2.0
        K += sx[:, None]
        K += sy[None, :]
        np.maximum(K, 0.0, out=K)
        K *= -spec.gamma
        np.exp(K, out=K)
    if same:
        _symmetrize_inplace(K)
        if spec.kind == "rbf":
            np.fill_diagonal(K, 1.0)
    return K


def gram_bruteforce(X, spec, Y=None):
    """Double loop over pairs; reference implementation for tests."""
    X = np.asarray(X, dtype=np.float64)
    Y = X if Y is None else np.asarray(Y, dtype=np.float64)
    K = np.empty((X.shape[0], Y.shape[0]))
    for i, xi in enumerate(X):
        for j, yj in enumerate(Y):
            if spec.kind == "linear":
                K[i, j] = sum(a * b for a, b in zip(xi, yj))
            else:
                K[i, j] = np.exp(-spec.gamma * sum((a - b) ** 2 for a, b in zip(xi, yj)))
    return K


@dataclass
class KernelSystem:
    K: np.ndarray
    alpha: np.ndarray
    ridge_lambda: float = 0.0
    jitter_used: float = 0.0
    rkhs_norm: float = 0.0
    residual: float = 0.0
    spec: KernelSpec = None

    def save(self, path):
        """One text header line, then alpha as little-endian float64 (row-major)."""
        alpha = np.atleast_2d(self.alpha.T).T
        kind = self.spec.kind if self.spec else "precomputed"
        gamma = self.spec.gamma if self.spec else None
        header = (
            f"effcap-kernel-v1 n={alpha.shape[0]} columns={alpha.shape[1]} kind={kind} gamma={gamma!r} "
            f"lambda={self.ridge_lambda!r} jitter={self.jitter_used!r} rkhs_norm={self.rkhs_norm!r}\n"
        )
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(np.ascontiguousarray(alpha, dtype="<f8").tobytes())


def load_alpha(path):
    """Read a file written by :meth:`KernelSystem.save`; returns (alpha, header dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    cut = raw.index(b"\n")
    fields = raw[:cut].decode("ascii").split()
    if fields[0] != "effcap-kernel-v1":
        raise ValidationError(f"{path}: not an effcap kernel file")
    meta = dict(item.split("=", 1) for item in fields[1:])
    alpha = np.frombuffer(raw[cut + 1 :], dtype="<f8").reshape(int(meta["n"]), int(meta["columns"]))
    return alpha.astype(np.float64), meta


def _condition_estimate(A):
    if A.shape[0] > 4000:
        return float("nan")
    eig = np.linalg.eigvalsh(A)
    return float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")


def _cholesky(A):
    try:
        return linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None


def solve_interpolation(K, y, ridge_lambda=0.0, spec=None):
    """Solve (K + lambda I) alpha = y by Cholesky.

    At lambda = 0 a failed factorization is retried with diagonal jitter
    1e-10 * trace(K) / n, doubled up to 8 times; the amount is reported as
    ``jitter_used``.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = K.shape[0]
    if K.shape != (n, n) or y.shape[0] != n:
        raise ValidationError(f"K has shape {K.shape}, y has {y.shape[0]} rows")
    if ridge_lambda < 0:
        raise ValidationError("ridge_lambda must be nonnegative")
    diag = np.arange(n)
    A = K.copy()
    A[diag, diag] += ridge_lambda
    factor = _cholesky(A)
    jitter = 0.0
    if factor is None and ridge_lambda == 0:
        jitter = JITTER_START * np.trace(K) / n
        for _ in range(JITTER_DOUBLINGS + 1):
            A[diag, diag] = K[diag, diag] + jitter
            factor = _cholesky(A)
            if factor is not None:
                break
            jitter *= 2
    if factor is None:
        A[diag, diag] = K[diag, diag] + ridge_lambda
        raise NumericError(f"Cholesky failed (condition estimate {_condition_estimate(A):.3g})")
    del A
    alpha = linalg.cho_solve(factor, y, check_finite=False)
    del factor
    Ka = K @ alpha
    shift = ridge_lambda + jitter
    residual = float(np.max(np.abs(Ka + shift * alpha - y)))
    rkhs = float(np.sqrt(max(np.sum(alpha * Ka), 0.0)))
    return KernelSystem(K, alpha, ridge_lambda, jitter, rkhs, residual, spec)


def interpolation_tolerance(y):
    return 1e-8 * (1.0 + float(np.max(np.abs(y))))


def predict(system, X_train, spec, X_new, batch_rows=_ROW_BLOCK):
    """k(X_new, X_train) @ alpha, computed in row batches."""
    X_new = np.asarray(X_new, dtype=np.float64)
    spec = resolve(spec, X_train)
    chunks = [gram(X_new[lo : lo + batch_rows], spec, X_train) @ system.alpha for lo in range(0, X_new.shape[0], batch_rows)]
    return np.concatenate(chunks)


def one_hot(labels, num_classes):
    return np.eye(num_classes)[np.asarray(labels)]


def classification_error(scores, labels):
    return float(np.mean(np.argmax(scores, axis=1) != np.asarray(labels)))


def min_norm_linear(X, y):
    """Minimum-norm solution of X w = y via w = X^T alpha, X X^T alpha = y."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    factor = _cholesky(X @ X.T)
    if factor is None:
        raise ValidationError("rows of X are linearly dependent (X X^T is not positive definite)")
    w = X.T @ linalg.cho_solve(factor, y, check_finite=False)
    return w, float(np.linalg.norm(w))


def row_space_basis(X, rtol=1e-12):
    """Orthonormal basis (d x r) of the span of X's rows."""
    u, s, vt = np.linalg.svd(np.asarray(X, dtype=np.float64), full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return vt[:rank].T


def span_residual(w, basis):
    return float(np.linalg.norm(w - basis @ (basis.T @ w)))


@dataclass
class LinearTrace:
    step: list = field(default_factory=list)
    w: list = field(default_factory=list)
    span_residual: list = field(default_factory=list)
    distance_to_min_norm: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    columns = ("step", "span_residual", "dist_to_min_norm")

    @property
    def final_w(self):
        return self.w[-1]

    def rows(self):
        return list(zip(self.step, self.span_residual, self.distance_to_min_norm))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            out = csv.writer(f, lineterminator="\n")
            out.writerow(self.columns)
            for t, s, dist in self.rows():
                out.writerow([t, f"{s:.9g}", f"{dist:.9g}"])


def sgd_linear_train(X, y, steps, lr_schedule, seed, snapshot_every=1000):
    """Plain SGD on squared loss 0.5 (w.x - y)^2 from w = 0.

    ``lr_schedule`` is a constant or a callable t -> step size. Snapshots are
    taken at t = 0, every ``snapshot_every`` steps, and at the end.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    schedule = lr_schedule if callable(lr_schedule) else (lambda t, c=float(lr_schedule): c)
    basis = row_space_basis(X)
    try:
        w_min, _ = min_norm_linear(X, y)
    except ValidationError:
        w_min = np.linalg.pinv(X) @ y
    picks = make_rng(seed).integers(0, n, size=steps)
    trace = LinearTrace()

    def snap(t, w, lr):
        trace.step.append(t)
        trace.w.append(w.copy())
        trace.span_residual.append(span_residual(w, basis))
        trace.distance_to_min_norm.append(float(np.linalg.norm(w - w_min)))
        trace.lr.append(lr)

    w = np.zeros(d)
    snap(0, w, schedule(0))
    for t in range(steps):
        i = picks[t]
        lr = schedule(t)
        err = X[i] @ w - y[i]
        w -= (lr * err) * X[i]
        if not w @ w <= DIVERGENCE_NORM**2:
            raise NumericError(f"SGD diverged at step {t + 1} (||w|| > {DIVERGENCE_NORM:g})")
        if (t + 1) % snapshot_every == 0 or t + 1 == steps:
            snap(t + 1, w, lr)
    return trace


def loss_curvature(z, y, loss_kind):
    """Second derivative of the loss in its first argument, at z."""
    if loss_kind == "squared":
        # loss(z, y) = (z - y)^2
        return np.full_like(np.asarray(z, dtype=np.float64), 2.0)
    if loss_kind == "logistic":
        # loss(z, y) = log(1 + exp(-y z)), y in {-1, +1}
        s = 1.0 / (1.0 + np.exp(-np.asarray(y) * z))
        return s * (1.0 - s)
    raise ValidationError(f"unknown loss {loss_kind!r}")


@dataclass
class HessianReport:
    beta: np.ndarray
    H: np.ndarray
    points: list
    max_abs_difference: float
    min_eigenvalue: float
    symmetric: bool


def hessian_linear(X, y, w_eval, w_other=None, loss_kind="squared"):
    """(1/n) X^T diag(beta) X with beta evaluated at z = X w, at one or two points.

    With ``w_other`` given, also reports the largest elementwise difference
    between the two Hessians. For squared loss that difference is exactly 0.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]

    def at(w):
        beta = loss_curvature(X @ np.asarray(w, dtype=np.float64), y, loss_kind)
        return beta, (X.T * beta) @ X / n

    beta, H = at(w_eval)
    points = [np.asarray(w_eval, dtype=np.float64)]
    diff = 0.0
    if w_other is not None:
        _, H2 = at(w_other)
        points.append(np.asarray(w_other, dtype=np.float64))
        diff = float(np.max(np.abs(H - H2)))
    return HessianReport(
        beta,
        H,
        points,
        diff,
        float(np.linalg.eigvalsh(H)[0]),
        bool(np.max(np.abs(H - H.T)) <= 1e-10),
    )


def random_relu_features(X, m, scale=1.0, seed=0, bias=True):
    """max(0, X W + b), W ~ N(0, scale^2 / d), b ~ N(0, scale^2)."""
    X = np.asarray(X, dtype=np.float64)
    if m < 1:
        raise ValidationError("feature count must be positive")
    gen = make_rng(seed)
    d = X.shape[1]
    W = gen.normal(0.0, scale / np.sqrt(d), size=(d, m))
    b = gen.normal(0.0, scale, size=m) if bias else np.zeros(m)
    return np.maximum(X @ W + b, 0.0)


@dataclass
class RidgePath:
    rows: list = field(default_factory=list)  # (lambda, rkhs_norm, train_err, test_err)
    alpha_norms: list = field(default_factory=list)
    jitter: list = field(default_factory=list)
    gamma: float = None
    kind: str = "rbf"
    systems: list = field(default_factory=list, repr=False)

    columns = ("lambda", "rkhs_norm", "train_err", "test_err")


def ridge_path(train, test, spec, lambdas):
    """Solve one system per lambda and score train/test classification error."""
    spec = resolve(spec, train.features)
    K = gram(train.features, spec)
    Y = one_hot(train.labels, train.num_classes)
    K_test = gram(test.features, spec, train.features)
    path = RidgePath(gamma=spec.gamma, kind=spec.kind)
    for lam in lambdas:
        system = solve_interpolation(K, Y, lam, spec)
        train_err = classification_error(K @ system.alpha, train.labels)
        test_err = classification_error(K_test @ system.alpha, test.labels)
        path.rows.append((float(lam), system.rkhs_norm, train_err, test_err))
        path.alpha_norms.append(float(np.linalg.norm(system.alpha)))
        path.jitter.append(system.jitter_used)
        path.systems.append(system)
    return path
