"""Implicit coordinate regression over subspace coefficients.

A small ReLU MLP (positional-encoded 2-D coordinates in, K coefficient
channels out) is fitted to the spatial coefficient maps of one volume by
full-batch Adam on the Frobenius norm of the residual. Because the network is
a smooth function of position, the fitted coefficients drop the spatially
uncorrelated noise component, and multiplying them back onto the spectral
basis yields the denoised volume.

Backpropagation is written out by hand; no autograd framework is involved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import SplitMix64
from .subspace import SubspaceDecomposition, gram_svd
from .volume import CoordinateGrid, ZSpectrumVolume, coordinate_grid

IRNP_MAGIC = b"IRNP"
IRNP_VERSION = 1

HIDDEN_LAYERS = 4
HIDDEN_WIDTH = 512


class DivergenceError(RuntimeError):
    """Training or inference produced a non-finite or exploding value."""


@dataclass(frozen=True)
class EncodingConfig:
    """Sin/cos feature lift at frequencies 2^0*pi .. 2^(L-1)*pi per axis."""

    num_frequencies: int = 6

    def __post_init__(self):
        if self.num_frequencies < 1:
            raise ValueError("need at least one encoding frequency")

    @property
    def feature_dim(self) -> int:
        return 4 * self.num_frequencies


def positional_encode(grid: CoordinateGrid, cfg: EncodingConfig) -> np.ndarray:
    """(MN, 4L) features: per axis, interleaved sin/cos at each frequency
    (all first-axis pairs, then all second-axis pairs)."""
    L = cfg.num_frequencies
    freqs = np.pi * (2.0 ** np.arange(L))
    out = np.empty((grid.points.shape[0], 4 * L))
    for axis in (0, 1):
        ang = grid.points[:, axis, None] * freqs[None, :]
        base = 2 * L * axis
        out[:, base : base + 2 * L : 2] = np.sin(ang)
        out[:, base + 1 : base + 2 * L : 2] = np.cos(ang)
    return out


@dataclass(eq=False)
class RegressionNetParams:
    """MLP weights/biases; hidden layers are ReLU, the output layer is linear.

    The canonical denoiser uses 4 hidden layers of 512 units; tests exercise
    smaller stacks through the same code path.
    """

    encoding: EncodingConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be parallel, non-empty lists")
        prev = self.encoding.feature_dim
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or W.shape[0] != prev:
                raise ValueError(
                    f"layer {l}: weight shape {W.shape} does not chain from {prev}"
                )
            if b.shape != (W.shape[1],):
                raise ValueError(f"layer {l}: bias shape {b.shape} vs {W.shape}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")
            prev = W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "RegressionNetParams":
        return RegressionNetParams(
            self.encoding,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )


def init_params(
    encoding: EncodingConfig,
    output_dim: int,
    hidden_width: int = HIDDEN_WIDTH,
    seed: int = 0,
) -> RegressionNetParams:
    """Seeded He-style uniform init (+-sqrt(6/fan_in)); biases start at zero."""
    rng = SplitMix64(seed)
    dims = [encoding.feature_dim] + [hidden_width] * HIDDEN_LAYERS + [output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        W = (2.0 * rng.uniform(fan_in * fan_out) - 1.0) * bound
        weights.append(W.reshape(fan_in, fan_out))
        biases.append(np.zeros(fan_out))
    return RegressionNetParams(encoding, weights, biases)


def _forward_cache(params: RegressionNetParams, features: np.ndarray):
    """Post-activation values per layer plus the linear output."""
    acts = [features]
    h = features
    n_hidden = len(params.weights) - 1
    for l in range(n_hidden):
        h = h @ params.weights[l] + params.biases[l]
        np.maximum(h, 0.0, out=h)
        acts.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return acts, out


def forward(params: RegressionNetParams, features: np.ndarray) -> np.ndarray:
    """Network predictions for a feature batch; raises on non-finite output."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.encoding.feature_dim:
        raise ValueError(
            f"features {features.shape} do not match encoding dim "
            f"{params.encoding.feature_dim}"
        )
    _, out = _forward_cache(params, features)
    if not np.all(np.isfinite(out)):
        raise DivergenceError("non-finite network output")
    return out


def _backward_from_cache(params, acts, out_grad):
    n = len(params.weights)
    dW: list = [None] * n
    db: list = [None] * n
    g = out_grad
    for l in range(n - 1, -1, -1):
        dW[l] = acts[l].T @ g
        db[l] = g.sum(axis=0)
        if l > 0:
            g = g @ params.weights[l].T
            g *= acts[l] > 0.0
    return dW, db


def backward(
    params: RegressionNetParams, features: np.ndarray, out_grad: np.ndarray
):
    """Exact reverse-mode gradients of the forward map, contracted with the
    supplied gradient at the output. Returns (dweights, dbiases)."""
    features = np.asarray(features, dtype=np.float64)
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != (features.shape[0], params.output_dim):
        raise ValueError(
            f"output gradient {out_grad.shape} does not match "
            f"({features.shape[0]}, {params.output_dim})"
        )
    acts, _ = _forward_cache(params, features)
    return _backward_from_cache(params, acts, out_grad)


def loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Frobenius norm of the prediction residual."""
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {targets.shape}")
    r = predictions - targets
    return float(np.sqrt(np.sum(r * r)))


def loss_gradient(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of the Frobenius-norm loss: residual / loss (zero at zero)."""
    r = predictions - targets
    norm = np.sqrt(np.sum(r * r))
    if norm == 0.0:
        return np.zeros_like(r)
    return r / norm


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    normalize_targets: bool = True
    num_frequencies: int = 6
    hidden_width: int = HIDDEN_WIDTH
    # opt-in; changes results relative to the canonical full-batch setting
    batch_size: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.hidden_width < 1 or self.num_frequencies < 1:
            raise ValueError("hidden_width and num_frequencies must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when set")


@dataclass(eq=False)
class TrainState:
    """Parameters plus Adam moment accumulators; updated in place per step."""

    params: RegressionNetParams
    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    loss_history: list = field(default_factory=list)


def init_state(params: RegressionNetParams) -> TrainState:
    return TrainState(
        params=params,
        m_weights=[np.zeros_like(W) for W in params.weights],
        v_weights=[np.zeros_like(W) for W in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(state: TrainState, grads, cfg: TrainConfig) -> TrainState:
    """One Adam update with bias correction; mutates and returns the state."""
    dW, db = grads
    for g in (*dW, *db):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    pairs = zip(
        state.params.weights + state.params.biases,
        state.m_weights + state.m_biases,
        state.v_weights + state.v_biases,
        dW + db,
    )
    for theta, m, v, g in pairs:
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        theta -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return state


def train_regression(targets: np.ndarray, grid: CoordinateGrid, cfg: TrainConfig):
    """Fit the coordinate network to target coefficient maps.

    Targets are standardized per channel before training (std floored at
    1e-12) and the inverse transform is folded into the returned output
    layer, so the returned parameters predict in target units directly.

    Returns (params, loss_history); the history holds the pre-update
    residual norm of every iteration.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n_rows = grid.points.shape[0]
    if targets.ndim != 2 or targets.shape[0] != n_rows:
        raise ValueError(f"targets {targets.shape} do not match {n_rows} grid rows")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")

    enc = EncodingConfig(cfg.num_frequencies)
    features = positional_encode(grid, enc)
    if cfg.normalize_targets:
        mu = targets.mean(axis=0)
        sd = np.maximum(targets.std(axis=0), 1e-12)
        work = (targets - mu) / sd
    else:
        work = targets

    params = init_params(enc, targets.shape[1], cfg.hidden_width, cfg.seed)
    state = init_state(params)

    if cfg.batch_size is not None and cfg.batch_size < n_rows:
        order = np.argsort(SplitMix64(cfg.seed ^ 0x5EED).uniform(n_rows), kind="stable")
    else:
        order = None

    initial = None
    for it in range(cfg.iterations):
        if order is None:
            feats_t, tgt_t = features, work
        else:
            start = (it * cfg.batch_size) % n_rows
            idx = np.take(order, np.arange(start, start + cfg.batch_size), mode="wrap")
            feats_t, tgt_t = features[idx], work[idx]
        acts, preds = _forward_cache(params, feats_t)
        cur = loss(preds, tgt_t)
        if not np.isfinite(cur) or (initial is not None and cur > 100.0 * initial):
            raise DivergenceError(
                f"training diverged at iteration {it + 1}: loss {cur:.6e} "
                f"(initial {initial if initial is not None else float('nan'):.6e})"
            )
        if initial is None:
            initial = max(cur, np.finfo(np.float64).tiny)
        state.loss_history.append(cur)
        grads = _backward_from_cache(params, acts, loss_gradient(preds, tgt_t))
        adam_step(state, grads, cfg)

    if cfg.normalize_targets:
        params.weights[-1] *= sd[None, :]
        params.biases[-1] *= sd
        params.biases[-1] += mu
    return params, np.asarray(state.loss_history)


@dataclass(eq=False)
class IrisResult:
    """Everything produced by one subspace-regression denoising run."""

    volume: ZSpectrumVolume
    decomposition: SubspaceDecomposition
    params: RegressionNetParams
    loss_history: np.ndarray


def run_iris(vol: ZSpectrumVolume, K: int, cfg: TrainConfig = TrainConfig()) -> IrisResult:
    """Decompose, regress the coefficients on coordinates, reconstruct."""
    decomp = gram_svd(vol, K)
    grid = coordinate_grid(vol.M, vol.N)
    params, history = train_regression(decomp.coefficients, grid, cfg)
    u_hat = forward(params, positional_encode(grid, params.encoding))
    out = ZSpectrumVolume(vol.M, vol.N, vol.schedule, u_hat @ decomp.basis)
    return IrisResult(out, decomp, params, history)


def iris_denoise(
    vol: ZSpectrumVolume, K: int, cfg: TrainConfig = TrainConfig()
) -> ZSpectrumVolume:
    return run_iris(vol, K, cfg).volume


def write_params(params: RegressionNetParams, path) -> None:
    """IRNP checkpoint: magic, version, L, layer dims, then f64 LE weights and
    biases in layer order."""
    dims = [params.encoding.feature_dim] + [W.shape[1] for W in params.weights]
    with open(path, "wb") as f:
        f.write(IRNP_MAGIC)
        f.write(struct.pack("<III", IRNP_VERSION, params.encoding.num_frequencies,
                            len(params.weights)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        for W, b in zip(params.weights, params.biases):
            f.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_params(path) -> RegressionNetParams:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != IRNP_MAGIC:
        raise ValueError("not an IRNP checkpoint")
    version, L, n_layers = struct.unpack("<III", blob[4:16])
    if version != IRNP_VERSION:
        raise ValueError(f"unsupported IRNP version {version}")
    off = 16
    dims = struct.unpack(f"<{n_layers + 1}I", blob[off : off + 4 * (n_layers + 1)])
    off += 4 * (n_layers + 1)
    enc = EncodingConfig(L)
    if dims[0] != enc.feature_dim:
        raise ValueError(f"input dim {dims[0]} inconsistent with L={L}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.frombuffer(blob, "<f8", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(blob, "<f8", fan_out, off)
        off += 8 * fan_out
        weights.append(W.copy())
        biases.append(b.copy())
    if off != len(blob):
        raise ValueError("IRNP payload length mismatch")
    return RegressionNetParams(enc, weights, biases)


def write_loss_csv(history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("iteration,loss\n")
        for i, val in enumerate(history, start=1):
            f.write(f"{i},{val:.17g}\n")
