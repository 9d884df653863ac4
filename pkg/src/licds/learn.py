"""Datasets from noisy trajectories, and two learned dynamics models.

Both models are usable anywhere a :class:`~licds.systems.DynamicsFn` is
expected (``model.as_dynamics()``) and support jet evaluation, so local
Taylor models of learned dynamics use exact derivatives.
"""

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import jets
from .integrate import BlowUpError, sample_em
from .systems import DynamicsFn, SystemSpec

GP_MAX_POINTS = 2000


class TrainingError(ArithmeticError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


@dataclass(eq=False)
class Dataset:
    inputs: np.ndarray  # (M, n)
    targets: np.ndarray  # (M, n), (x_{k+1} - x_k) / dt
    dt: float
    source_trajectories: int
    batches: List[np.ndarray] = field(default_factory=list)  # row indices per trajectory

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, trajectories: Sequence[int]) -> "Dataset":
        """Dataset restricted to the given trajectory numbers."""
        rows = [self.batches[i] for i in trajectories]
        idx = np.concatenate(rows)
        out, start = [], 0
        for r in rows:
            out.append(np.arange(start, start + len(r)))
            start += len(r)
        return Dataset(self.inputs[idx], self.targets[idx], self.dt, len(rows), out)

    @classmethod
    def from_trajectories(cls, trajs, dt):
        xs, ys, batches, start = [], [], [], 0
        for tr in trajs:
            s = tr.states
            xs.append(s[:-1])
            ys.append((s[1:] - s[:-1]) / dt)
            batches.append(np.arange(start, start + len(s) - 1))
            start += len(s) - 1
        return cls(np.concatenate(xs), np.concatenate(ys), dt, len(trajs), batches)


def make_dataset(system: SystemSpec, n_traj: int = 10, n_samples: int = 100, dt: float = 0.01,
                 seed: int = 0, x0_box=None, sigma: Optional[float] = None) -> Dataset:
    """Sample ``n_traj`` Euler-Maruyama trajectories of ``n_samples`` states each.

    Initial points are uniform in ``x0_box`` (default: the system's domain
    bounds). Diverging trajectories are dropped.
    """
    if n_traj < 1 or n_samples < 2:
        raise ValueError("need n_traj >= 1 and n_samples >= 2")
    box = np.asarray(x0_box if x0_box is not None else system.domain_bounds, dtype=float)
    sigma = system.noise_sigma if sigma is None else sigma
    rng = np.random.default_rng(seed)
    x0s = rng.uniform(box[:, 0], box[:, 1], size=(n_traj, system.dim))
    seeds = rng.integers(0, 2**63 - 1, size=n_traj)
    trajs = []
    for x0, s in zip(x0s, seeds):
        try:
            trajs.append(sample_em(system.dynamics, x0, (n_samples - 1) * dt, dt, sigma, int(s)))
        except BlowUpError:
            continue
    if not trajs:
        raise BlowUpError(-1, "every sampled trajectory diverged")
    return Dataset.from_trajectories(trajs, dt)


def l2_distance(f: DynamicsFn, g: DynamicsFn, box, n_per_axis: int = 201) -> float:
    """sqrt(int_box ||f - g||^2 dx) by the midpoint rule on a regular grid."""
    box = np.asarray(box, dtype=float)
    if box.shape[0] > 3:
        raise ValueError("grid distance is limited to 3 dimensions")
    axes = [lo + (np.arange(n_per_axis) + 0.5) * (hi - lo) / n_per_axis for lo, hi in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.shape[0])
    sq = np.array([np.sum((f.eval(x) - g.eval(x)) ** 2) for x in grid])
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    return math.sqrt(volume * sq.mean())


def _standardize(a):
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


@dataclass(eq=False)
class MlpModel:
    """Fully connected tanh network; identity output layer.

    Inputs and outputs are standardized with statistics of the training set;
    the stored weights act on the standardized values.
    """

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    loss_history: List[float] = field(default_factory=list, repr=False)

    @property
    def dim(self):
        return self.weights[0].shape[1]

    def forward(self, x):
        if isinstance(x, jets.Jet):
            h = (x - self.x_mean) * (1.0 / self.x_scale)
            for W, b in zip(self.weights[:-1], self.biases[:-1]):
                h = jets.tanh(W @ h + b)
            return (self.weights[-1] @ h + self.biases[-1]) * self.y_scale + self.y_mean
        x = np.asarray(x, dtype=float)
        h = (x - self.x_mean) / self.x_scale
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
        return (h @ self.weights[-1].T + self.biases[-1]) * self.y_scale + self.y_mean

    def input_jacobian(self, x) -> np.ndarray:
        """d forward / d x at one point, by reverse accumulation."""
        h = (np.asarray(x, dtype=float) - self.x_mean) / self.x_scale
        acts = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(W @ h + b)
            acts.append(h)
        J = self.weights[-1] * self.y_scale[:, None]
        for W, a in zip(reversed(self.weights[:-1]), reversed(acts)):
            J = (J * (1.0 - a * a)) @ W
        return J / self.x_scale

    def as_dynamics(self, name=None):
        return DynamicsFn(self.dim, self.forward, name or f"mlp{self.layer_sizes}", jet_ok=True)

    def to_dict(self):
        return {
            "kind": "mlp",
            "layer_sizes": list(self.layer_sizes),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_scale": self.y_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: np.asarray(v, dtype=float)
        return cls(list(d["layer_sizes"]), [arr(W) for W in d["weights"]],
                   [arr(b) for b in d["biases"]], arr(d["x_mean"]), arr(d["x_scale"]),
                   arr(d["y_mean"]), arr(d["y_scale"]))


def init_mlp(dim, layer_sizes, seed) -> MlpModel:
    rng = np.random.default_rng(seed)
    sizes = [dim] + list(layer_sizes) + [dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    z = np.zeros(dim)
    return MlpModel(list(layer_sizes), weights, biases, z, np.ones(dim), z.copy(), np.ones(dim))


def _loss_and_grads(model, x, y):
    """MSE in standardized target units and its parameter gradients."""
    acts = [x]
    h = x
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ W.T + b)
        acts.append(h)
    out = h @ model.weights[-1].T + model.biases[-1]
    diff = out - y
    loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size
    gW, gb = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        gW.append(delta.T @ acts[i])
        gb.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i]) * (1.0 - acts[i] ** 2)
    return loss, gW[::-1], gb[::-1]


def _mse(model, x, y):
    h = x
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ W.T + b)
    d = h @ model.weights[-1].T + model.biases[-1] - y
    return float(np.mean(d * d))


def train_mlp(data: Dataset, layer_sizes: Sequence[int], epochs: int = 5000, lr: float = 1e-2,
              seed: int = 0, beta2: float = 0.999, eps: float = 1e-8) -> MlpModel:
    """Per-trajectory mini-batch training with momentum-free Adam steps.

    The step size follows a cosine decay from ``lr`` to ``lr / 1000`` over
    ``epochs``. Batches are visited in a fixed cyclic order, so one epoch is
    a deterministic map of the parameters and the late loss settles without
    shuffle noise. ``seed`` only sets the initialization.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    model = init_mlp(data.dim, layer_sizes, seed)
    model.x_mean, model.x_scale = _standardize(data.inputs)
    model.y_mean, model.y_scale = _standardize(data.targets)
    x = (data.inputs - model.x_mean) / model.x_scale
    y = (data.targets - model.y_mean) / model.y_scale
    batches = data.batches or [np.arange(len(data))]
    params = model.weights + model.biases
    second = [np.zeros_like(p) for p in params]
    step = 0
    history = []
    for epoch in range(epochs):
        rate = lr * (1e-3 + (1.0 - 1e-3) * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs)))
        for rows in batches:
            loss, gW, gb = _loss_and_grads(model, x[rows], y[rows])
            if not math.isfinite(loss):
                raise TrainingError(epoch)
            step += 1
            correction = 1.0 - beta2 ** step
            for p, g, v in zip(params, gW + gb, second):
                v *= beta2
                v += (1.0 - beta2) * g * g
                p -= rate * g / (np.sqrt(v / correction) + eps)
        full = _mse(model, x, y)
        if not math.isfinite(full):
            raise TrainingError(epoch)
        history.append(full)
    model.loss_history = history
    return model


@dataclass(eq=False)
class GpModel:
    """Zero-mean GP regression with a squared-exponential kernel, one GP per output."""

    train_inputs: np.ndarray
    train_targets: np.ndarray
    lengthscale: float = 1.0
    signal_var: float = 1.0
    noise_var: float = 1e-2
    jitter: float = 1e-6

    def __post_init__(self):
        self.train_inputs = np.asarray(self.train_inputs, dtype=float)
        self.train_targets = np.asarray(self.train_targets, dtype=float)
        if self.train_inputs.shape[0] > GP_MAX_POINTS:
            raise ValueError(f"dense GP limited to {GP_MAX_POINTS} points")
        K = self.kernel(self.train_inputs, self.train_inputs)
        self.alpha = None
        for jitter in (self.jitter, 1e-5, 1e-4):
            try:
                factor = cho_factor(K + (self.noise_var + jitter) * np.eye(len(K)), lower=True)
            except np.linalg.LinAlgError:
                continue
            self.jitter = jitter
            self._factor = factor
            self.alpha = cho_solve(factor, self.train_targets)
            break
        if self.alpha is None:
            raise np.linalg.LinAlgError("kernel matrix not positive definite after jitter 1e-4")

    @property
    def dim(self):
        return self.train_inputs.shape[1]

    def kernel(self, a, b):
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.signal_var * np.exp(-0.5 * d2 / self.lengthscale ** 2)

    def mean(self, x):
        if isinstance(x, jets.Jet):
            diff = x - self.train_inputs  # (M, n)
            r2 = (diff * diff).sum(axis=1)
            k = jets.exp(r2 * (-0.5 / self.lengthscale ** 2)) * self.signal_var
            return self.alpha.T @ k
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        k = self.kernel(np.atleast_2d(x), self.train_inputs)
        out = k @ self.alpha
        return out[0] if single else out

    def gradient(self, x) -> np.ndarray:
        """Analytic Jacobian of the posterior mean, shape (n_out, n_in)."""
        x = np.asarray(x, dtype=float)
        diff = x[None, :] - self.train_inputs
        k = self.kernel(x[None, :], self.train_inputs)[0]
        dk = -(diff / self.lengthscale ** 2) * k[:, None]  # (M, n)
        return self.alpha.T @ dk

    def log_marginal_likelihood(self) -> float:
        L = self._factor[0]
        n = len(L)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        fit = np.sum(self.train_targets * self.alpha, axis=0)
        per_dim = -0.5 * fit - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
        return float(per_dim.sum())

    def as_dynamics(self, name="gp"):
        return DynamicsFn(self.dim, self.mean, name, jet_ok=True)

    def to_dict(self):
        return {
            "kind": "gp",
            "inputs": self.train_inputs.tolist(),
            "targets": self.train_targets.tolist(),
            "lengthscale": self.lengthscale,
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["inputs"]), np.array(d["targets"]), float(d["lengthscale"]),
                   float(d["signal_var"]), float(d["noise_var"]))


GP_GRID = {
    "lengthscale": (0.3, 1.0, 3.0),
    "signal_var": (0.1, 1.0, 10.0),
    "noise_var": (1e-3, 1e-2, 1e-1),
}


def fit_gp(data: Dataset, lengthscale: float = 1.0, signal_var: float = 1.0,
           noise_var: float = 1e-2, grid_search: bool = False) -> GpModel:
    """Fit on all pairs; with ``grid_search`` pick the 3x3x3 grid point of highest
    marginal likelihood instead of the given hyperparameters."""
    if not grid_search:
        return GpModel(data.inputs, data.targets, lengthscale, signal_var, noise_var)
    best = None
    for ls in GP_GRID["lengthscale"]:
        for sv in GP_GRID["signal_var"]:
            for nv in GP_GRID["noise_var"]:
                try:
                    gp = GpModel(data.inputs, data.targets, ls, sv, nv)
                except np.linalg.LinAlgError:
                    continue
                lml = gp.log_marginal_likelihood()
                if best is None or lml > best[0]:
                    best = (lml, gp)
    if best is None:
        raise np.linalg.LinAlgError("no grid point gave a factorizable kernel matrix")
    return best[1]


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "mlp":
        return MlpModel.from_dict(d)
    if kind == "gp":
        return GpModel.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


def load_model(path) -> DynamicsFn:
    with open(path) as fh:
        d = json.load(fh)
    model = model_from_dict(d)
    return model.as_dynamics(d.get("name") or str(path))
