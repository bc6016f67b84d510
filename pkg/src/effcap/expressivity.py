"""Exact finite-sample interpolation with ReLU networks.

Depth 2: project every sample onto a random unit direction ``a``, place one
breakpoint below each sorted projection so that breakpoints and projections
interleave, and solve the resulting lower-triangular system for the output
weights. The network is

    c(x) = sum_j w_j * max(<a, x> - b_j, 0)

and has exactly d + 2n stored parameters.

Deeper, narrower variant: the sorted projections (rescaled to [0, 1]) are cut
into blocks of consecutive points, each block gets its own 1-D depth-2
interpolator, and block outputs are switched on and off by a trapezoid gate
built from four ReLUs. With a bound M larger than every block output on the
sample, ``max(c + M g - M, 0) - max(-c + M g - M, 0)`` equals c where the gate
is 1 and 0 where it is 0, which selects the right block exactly on the
sample. Off the sample nothing is promised.

Layer layout for B >= 2 blocks (widths in units):

    layer 1        carry t | features of block 1 | 4 gate units
    layer l<=B     carry t | features of block l | 4 gate units
                   | clamp pair of block l-1 | accumulator pair (l >= 3)
    layer B+1      clamp pair of block B | accumulator pair
    output         accumulator difference + clamp difference

so the network has B + 2 affine maps and every hidden layer has at most
ceil(n/B) + 9 units. With B = k - 1 blocks and 2 <= k <= n this is at most
WIDTH_CONSTANT * n / k, and the stored parameter count d + 2n + 4B + 3 is at
most WEIGHT_CONSTANT * (n + d). B = 1 is the plain depth-2 network (no gate).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ValidationError
from .seeding import rng as make_rng

WIDTH_CONSTANT = 12
WEIGHT_CONSTANT = 7
RESAMPLE_BUDGET = 32


def _relu(v):
    return np.maximum(v, 0.0)


def forward_substitution(A, y):
    """Solve A w = y for lower-triangular A, row by row.

    ``y`` may be a vector or an (n, c) matrix of right-hand sides.
    """
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = A.shape[0]
    w = np.zeros_like(y)
    for i in range(n):
        if A[i, i] == 0:
            raise NumericError(f"zero pivot at row {i}")
        w[i] = (y[i] - A[i, :i] @ w[:i]) / A[i, i]
    return w


def check_interleaving(x, b):
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape != b.shape or x.ndim != 1 or x.size == 0:
        raise ValidationError("x and b must be non-empty vectors of equal length")
    merged = np.empty(2 * x.size)
    merged[0::2] = b
    merged[1::2] = x
    return bool(np.all(np.diff(merged) > 0))


@dataclass
class LemmaMatrix:
    A: np.ndarray
    x: np.ndarray
    b: np.ndarray


def relu_feature_matrix(x, b):
    """A_ij = max(x_i - b_j, 0)."""
    return _relu(np.subtract.outer(np.asarray(x, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def lemma_matrix_props(x, b):
    """Build A for interleaving (x, b) and report (A, full_rank, min_eigenvalue).

    A is lower triangular, so its eigenvalues are its diagonal entries
    x_i - b_i; it has full rank exactly when all of them are nonzero.
    """
    if not check_interleaving(x, b):
        raise ValidationError("b_1 < x_1 < b_2 < ... < b_n < x_n does not hold")
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    A = relu_feature_matrix(x, b)
    diag = np.diag(A)
    return LemmaMatrix(A, x, b), bool(np.all(diag > 0)), float(np.min(x - b))


def interleaving_breakpoints(xs, margin=1.0):
    """Midpoints between consecutive projections, plus one below the first.

    The first breakpoint mirrors the second about x_1, i.e. sits half the
    first gap below it; with a single point it sits ``margin`` below.
    """
    b = np.empty_like(xs)
    b[1:] = 0.5 * (xs[:-1] + xs[1:])
    b[0] = xs[0] - (0.5 * (xs[1] - xs[0]) if xs.size > 1 else margin)
    return b


def _check_samples(samples, y):
    z = np.asarray(samples, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ValidationError(f"samples must be an n x d matrix with n, d >= 1, got {z.shape}")
    if y.shape != (z.shape[0],):
        raise ValidationError(f"y has shape {y.shape}, expected ({z.shape[0]},)")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise ValidationError("samples and targets must be finite")
    if np.unique(z, axis=0).shape[0] != z.shape[0]:
        raise ValidationError("sample rows must be distinct")
    return z, y


def _draw_projection(z, gen, ok=None):
    """Random unit direction giving strictly increasing, interleavable projections."""
    for _ in range(RESAMPLE_BUDGET):
        a = gen.standard_normal(z.shape[1])
        a /= np.linalg.norm(a)
        x = z @ a
        order = np.argsort(x, kind="stable")
        xs = x[order]
        b = interleaving_breakpoints(xs)
        if check_interleaving(xs, b) and (ok is None or ok(xs)):
            return a, order, xs, b
    raise NumericError(f"projections collided on {RESAMPLE_BUDGET} random directions")


@dataclass
class InterpolatorNet:
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    sort_order: np.ndarray  # sort_order[i] = sorted position of sample i

    @property
    def d(self):
        return self.a.size

    @property
    def n(self):
        return self.b.size

    @property
    def weight_count(self):
        return self.a.size + self.b.size + self.w.size

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        proj = x @ self.a
        return _relu(np.subtract.outer(proj, self.b)) @ self.w

    def to_json(self):
        return {
            "d": self.d,
            "n": self.n,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "w": self.w.tolist(),
            "sort_order": self.sort_order.tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            np.asarray(doc["a"], dtype=np.float64),
            np.asarray(doc["b"], dtype=np.float64),
            np.asarray(doc["w"], dtype=np.float64),
            np.asarray(doc["sort_order"], dtype=np.int64),
        )


def construct_depth2(samples, y, seed, direction=None):
    """Depth-2 ReLU network with d + 2n weights that reproduces y on the samples.

    ``direction`` fixes the projection vector instead of drawing it from
    ``seed`` (it is normalized; projections must come out distinct).
    """
    z, y = _check_samples(samples, y)
    if direction is None:
        a, order, xs, b = _draw_projection(z, make_rng(seed))
    else:
        a = np.asarray(direction, dtype=np.float64)
        if a.shape != (z.shape[1],) or not np.linalg.norm(a) > 0:
            raise ValidationError(f"direction must be a nonzero vector of length {z.shape[1]}")
        a = a / np.linalg.norm(a)
        order = np.argsort(z @ a, kind="stable")
        xs = (z @ a)[order]
        b = interleaving_breakpoints(xs)
        if not check_interleaving(xs, b):
            raise NumericError("projections onto the given direction are not distinct")
    w = forward_substitution(relu_feature_matrix(xs, b), y[order])
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    return InterpolatorNet(a, b, w, position)


@dataclass
class Block:
    indices: np.ndarray  # original sample indices, sorted by projection
    b: np.ndarray  # breakpoints in rescaled coordinates
    w: np.ndarray
    gate: tuple = None  # (lo - dl, lo, hi, hi + dr)

    def value(self, t):
        return _relu(np.subtract.outer(t, self.b)) @ self.w

    def gate_value(self, t):
        p0, p1, p2, p3 = self.gate
        dl, dr = p1 - p0, p3 - p2
        return (_relu(t - p0) - _relu(t - p1)) / dl - (_relu(t - p2) - _relu(t - p3)) / dr


@dataclass
class LayeredInterpolator:
    k: int
    a: np.ndarray
    shift: float
    span: float
    blocks: list
    M: float
    layers: list = field(default_factory=list)  # [(W, bias)] hidden layers, then the output map
    sort_order: np.ndarray = None

    @property
    def d(self):
        return self.a.size

    @property
    def n(self):
        return sum(blk.indices.size for blk in self.blocks)

    @property
    def depth(self):
        """Number of affine maps (hidden layers + output)."""
        return len(self.layers)

    @property
    def widths(self):
        return [W.shape[1] for W, _ in self.layers[:-1]]

    @property
    def weight_count(self):
        """Stored parameters: a, the rescaling pair, per-block (b, w), gate breakpoints, M."""
        count = self.a.size + 2 + sum(2 * blk.indices.size for blk in self.blocks)
        if len(self.blocks) > 1:
            count += 4 * len(self.blocks) + 1
        return count

    def project(self, x):
        return (np.asarray(x, dtype=np.float64) @ self.a - self.shift) / self.span

    def __call__(self, x):
        h = self.project(x)[..., None]
        for W, bias in self.layers[:-1]:
            h = _relu(h @ W + bias)
        W, bias = self.layers[-1]
        return (h @ W + bias)[..., 0]

    def to_json(self):
        return {
            "d": self.d,
            "n": self.n,
            "k": self.k,
            "a": self.a.tolist(),
            "shift": self.shift,
            "span": self.span,
            "sort_order": self.sort_order.tolist(),
            "blocks": [{"indices": blk.indices.tolist(), "b": blk.b.tolist(), "w": blk.w.tolist()} for blk in self.blocks],
            "gates": [list(blk.gate) for blk in self.blocks if blk.gate is not None],
            "M": self.M,
        }


def _solve_block(t, y, margin):
    b = interleaving_breakpoints(t, margin)
    return b, forward_substitution(relu_feature_matrix(t, b), y)


def _assemble_layers(blocks, M):
    if len(blocks) == 1:
        blk = blocks[0]
        return [(np.ones((1, blk.b.size)), -blk.b), (blk.w[:, None], np.zeros(1))]

    B = len(blocks)
    layouts = []  # per hidden layer: dict of name -> slice
    for layer in range(1, B + 2):
        parts, pos = {}, 0
        for name, size, present in (
            ("carry", 1, layer <= B - 1),
            ("feat", blocks[layer - 1].b.size if layer <= B else 0, layer <= B),
            ("gate", 4, layer <= B),
            ("clamp", 2, layer >= 2),
            ("acc", 2, layer >= 3),
        ):
            if present:
                parts[name] = slice(pos, pos + size)
                pos += size
        layouts.append((parts, pos))

    layers = []
    prev = {"t": slice(0, 1)}
    prev_width = 1
    for layer in range(1, B + 2):
        parts, width = layouts[layer - 1]
        W = np.zeros((prev_width, width))
        bias = np.zeros(width)
        src_t = prev["t"] if layer == 1 else prev.get("carry")
        if "carry" in parts:
            W[src_t, parts["carry"]] = 1.0
        if "feat" in parts:
            blk = blocks[layer - 1]
            W[src_t, parts["feat"]] = 1.0
            bias[parts["feat"]] = -blk.b
            W[src_t, parts["gate"]] = 1.0
            bias[parts["gate"]] = -np.asarray(blk.gate)
        if "clamp" in parts:
            blk = blocks[layer - 2]
            p0, p1, p2, p3 = blk.gate
            dl, dr = p1 - p0, p3 - p2
            gate_coef = np.array([1 / dl, -1 / dl, -1 / dr, 1 / dr])
            c_plus, c_minus = parts["clamp"].start, parts["clamp"].start + 1
            W[prev["feat"], c_plus] = blk.w
            W[prev["feat"], c_minus] = -blk.w
            W[prev["gate"], c_plus] = M * gate_coef
            W[prev["gate"], c_minus] = M * gate_coef
            bias[c_plus] = bias[c_minus] = -M
        if "acc" in parts:
            a_plus, a_minus = parts["acc"].start, parts["acc"].start + 1
            # running sum = previous accumulator + previous clamp output
            pc = prev["clamp"].start
            for src, sign in ((pc, 1.0), (pc + 1, -1.0)):
                W[src, a_plus] = sign
                W[src, a_minus] = -sign
            if "acc" in prev:
                pa = prev["acc"].start
                for src, sign in ((pa, 1.0), (pa + 1, -1.0)):
                    W[src, a_plus] = sign
                    W[src, a_minus] = -sign
        layers.append((W, bias))
        prev, prev_width = parts, width

    W_out = np.zeros((prev_width, 1))
    for name in ("clamp", "acc"):
        start = prev[name].start
        W_out[start, 0] = 1.0
        W_out[start + 1, 0] = -1.0
    layers.append((W_out, np.zeros(1)))
    return layers


def construct_depth_k(samples, y, k, seed):
    """Gated block construction trading width for depth.

    The projection direction is drawn exactly as in :func:`construct_depth2`
    (same seed, same direction), then projections are rescaled to [0, 1] and
    split into k - 1 runs of ceil(n / (k - 1)) consecutive sorted points.
    """
    z, y = _check_samples(samples, y)
    n = z.shape[0]
    if not 2 <= k <= n + 1:
        raise ValidationError(f"depth k must satisfy 2 <= k <= n + 1 = {n + 1}, got {k}")
    size = math.ceil(n / (k - 1))

    def gates_separate(xs):
        # gate ramps sit at midpoints between neighbouring blocks; they must
        # fall strictly between the two sample projections
        cut = np.arange(size, n, size)
        mids = 0.5 * (xs[cut - 1] + xs[cut])
        return bool(np.all((xs[cut - 1] < mids) & (mids < xs[cut])))

    a, order, xs, _ = _draw_projection(z, make_rng(seed), gates_separate)
    shift = float(xs[0])
    span = float(xs[-1] - xs[0]) if n > 1 else 1.0
    t = (xs - shift) / span
    ys = y[order]
    # single-point blocks sit 1 raw projection unit above their breakpoint
    margin = 1.0 / span

    blocks = []
    for lo in range(0, n, size):
        hi = min(lo + size, n)
        b, w = _solve_block(t[lo:hi], ys[lo:hi], margin)
        blocks.append(Block(order[lo:hi], b, w))

    M = 0.0
    if len(blocks) > 1:
        for j, blk in enumerate(blocks):
            lo_idx = j * size
            hi_idx = lo_idx + blk.indices.size - 1
            left = t[lo_idx] - (0.5 * (t[lo_idx] - t[lo_idx - 1]) if j else 1.0)
            right = t[hi_idx] + (0.5 * (t[hi_idx + 1] - t[hi_idx]) if hi_idx + 1 < n else 1.0)
            blk.gate = (left, t[lo_idx], t[hi_idx], right)
        M = max(float(np.max(np.abs(blk.value(t)))) for blk in blocks) + 1.0

    position = np.empty_like(order)
    position[order] = np.arange(n)
    net = LayeredInterpolator(k, a, shift, span, blocks, M, sort_order=position)
    net.layers = _assemble_layers(blocks, M)
    return net


def eval_interpolator(net, x):
    """Evaluate either interpolator on one point or a batch of rows."""
    return net(x)


def fit_residuals(net, samples, y):
    """max_i |net(z_i) - y_i| / (1 + |y_i|)."""
    pred = net(np.asarray(samples, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return float(np.max(np.abs(pred - y) / (1.0 + np.abs(y))))
