"""Per-agent perceptron controllers, written against numpy only.

Architecture: a stack of affine maps, each followed by batch
normalization and a rectifier, then an affine output head. Training uses
mean-square error, Adam, and shuffled mini-batches; inference always
normalizes with the running statistics, so a row's output never depends
on the batch it arrives in.

The loss reported everywhere is mean over the batch of the squared error
norm, (1/B) sum_b |out_b - target_b|^2.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConfigError,
    DimensionError,
    TrainingDivergenceError,
    WeightFormatError,
)

WEIGHT_FORMAT_VERSION = 1

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class MlpController:
    """Multilayer perceptron with batch-normalized hidden layers.

    Parameters per hidden layer l: weight (in, out), bias (out,), batch-norm
    scale gamma and shift beta, running mean/variance. The output head is a
    plain affine map.
    """

    def __init__(self, input_dim, hidden, output_dim, seed=0, dtype=np.float64):
        if input_dim < 1 or output_dim < 1 or any(h < 1 for h in hidden):
            raise ConfigError("layer widths must be positive")
        self.input_dim = int(input_dim)
        self.hidden = list(int(h) for h in hidden)
        self.output_dim = int(output_dim)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        widths = [self.input_dim] + self.hidden + [self.output_dim]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(
                rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype)
            )
            self.biases.append(rng.uniform(-bound, bound, fan_out).astype(self.dtype))
        self.gamma = [np.ones(h, dtype=self.dtype) for h in self.hidden]
        self.beta = [np.zeros(h, dtype=self.dtype) for h in self.hidden]
        self.run_mean = [np.zeros(h, dtype=self.dtype) for h in self.hidden]
        self.run_var = [np.ones(h, dtype=self.dtype) for h in self.hidden]

    @property
    def n_hidden(self) -> int:
        return len(self.hidden)

    def layer_widths(self) -> list[int]:
        return [self.input_dim] + self.hidden + [self.output_dim]

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays, in a fixed order shared with gradients()."""
        return [*self.weights, *self.biases, *self.gamma, *self.beta]

    def forward(self, x: np.ndarray, mode: str = "infer") -> np.ndarray:
        """Network output for a single row (D,) or a batch (B, D).

        Train mode normalizes with batch statistics and updates the running
        statistics; it requires at least two rows (batch variance of a
        single row is undefined).
        """
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.input_dim:
            raise DimensionError(
                f"input width {h.shape[1]} does not match {self.input_dim}"
            )
        if mode == "train":
            if h.shape[0] < 2:
                raise DimensionError("train-mode forward needs a batch of >= 2 rows")
            out, _ = self._forward_train(h)
        elif mode == "infer":
            out = self._forward_infer(h)
        else:
            raise ConfigError(f"unknown forward mode {mode!r}")
        return out[0] if single else out

    def _forward_infer(self, h: np.ndarray) -> np.ndarray:
        # Row-at-a-time: BLAS gemm results depend on the batch size, which
        # would leak the batch composition into individual outputs.
        out = np.empty((h.shape[0], self.output_dim), dtype=self.dtype)
        for r in range(h.shape[0]):
            row = h[r]
            for l in range(self.n_hidden):
                z = row @ self.weights[l] + self.biases[l]
                zhat = (z - self.run_mean[l]) / np.sqrt(self.run_var[l] + BN_EPS)
                row = np.maximum(self.gamma[l] * zhat + self.beta[l], 0.0)
            out[r] = row @ self.weights[-1] + self.biases[-1]
        return out

    def _forward_train(self, h: np.ndarray):
        """Batch-statistics forward pass; returns (output, cache for backprop)."""
        cache = []
        b = h.shape[0]
        for l in range(self.n_hidden):
            z = h @ self.weights[l] + self.biases[l]
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            ivar = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * ivar
            pre = self.gamma[l] * zhat + self.beta[l]
            a = np.maximum(pre, 0.0)
            cache.append((h, zhat, ivar, pre))
            # unbiased variance for the running estimate
            self.run_mean[l] += BN_MOMENTUM * (mu - self.run_mean[l])
            self.run_var[l] += BN_MOMENTUM * (var * b / (b - 1) - self.run_var[l])
            h = a
        out = h @ self.weights[-1] + self.biases[-1]
        cache.append(h)
        return out, cache

    def backprop(self, batch: np.ndarray, targets: np.ndarray):
        """Gradients of the batch MSE with respect to every parameter.

        Runs its own train-mode forward pass on the batch. Returns
        (gradients, loss) with gradients ordered like parameters().
        """
        batch = np.asarray(batch, dtype=self.dtype)
        targets = np.asarray(targets, dtype=self.dtype)
        if batch.ndim != 2 or batch.shape[0] < 2:
            raise DimensionError("backprop needs a batch of >= 2 rows")
        if targets.shape != (batch.shape[0], self.output_dim):
            raise DimensionError(
                f"targets must have shape ({batch.shape[0]}, {self.output_dim})"
            )
        out, cache = self._forward_train(batch)
        b = batch.shape[0]
        diff = out - targets
        loss = float((diff * diff).sum() / b)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(f"non-finite training loss {loss}")

        d_w = [None] * len(self.weights)
        d_b = [None] * len(self.biases)
        d_gamma = [None] * self.n_hidden
        d_beta = [None] * self.n_hidden

        dout = (2.0 / b) * diff
        h_last = cache[-1]
        d_w[-1] = h_last.T @ dout
        d_b[-1] = dout.sum(axis=0)
        dh = dout @ self.weights[-1].T
        for l in range(self.n_hidden - 1, -1, -1):
            h_in, zhat, ivar, pre = cache[l]
            da = dh * (pre > 0)
            d_gamma[l] = (da * zhat).sum(axis=0)
            d_beta[l] = da.sum(axis=0)
            dzhat = da * self.gamma[l]
            dz = (ivar / b) * (
                b * dzhat
                - dzhat.sum(axis=0)
                - zhat * (dzhat * zhat).sum(axis=0)
            )
            d_w[l] = h_in.T @ dz
            d_b[l] = dz.sum(axis=0)
            if l > 0:
                dh = dz @ self.weights[l].T
        grads = [*d_w, *d_b, *d_gamma, *d_beta]
        return grads, loss

    def snapshot(self) -> list[np.ndarray]:
        """Copies of all state (parameters and running statistics)."""
        return [p.copy() for p in self.parameters()] + [
            a.copy() for a in (*self.run_mean, *self.run_var)
        ]

    def restore(self, snap: list[np.ndarray]) -> None:
        live = self.parameters() + [*self.run_mean, *self.run_var]
        if len(snap) != len(live):
            raise WeightFormatError("snapshot does not match the architecture")
        for dst, src in zip(live, snap):
            dst[...] = src


@dataclass
class AdamState:
    """Adam accumulators for a fixed list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(opt: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if len(params) != len(opt.m) or len(grads) != len(params):
        raise DimensionError("parameter/gradient lists do not match the optimizer")
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1**t
    c2 = 1.0 - opt.beta2**t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        m += (1.0 - opt.beta1) * (g - m)
        v += (1.0 - opt.beta2) * (g * g - v)
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


@dataclass
class TrainResult:
    loss_history: list[float]
    converged: bool
    epochs_run: int
    best_loss: float
    warning: str | None = None


def train(
    model: MlpController,
    inputs: np.ndarray,
    targets: np.ndarray,
    epochs: int = 500,
    loss_target: float = 5e-4,
    batch_size: int = 256,
    seed: int = 0,
    lr: float = 1e-3,
    log_every: int = 0,
) -> TrainResult:
    """Mini-batch Adam training until the loss target or the epoch cap.

    Batches are reshuffled each epoch with a generator seeded from `seed`,
    so identical seeds give identical loss histories. If the target is not
    reached the best-epoch weights are restored and a warning is set.
    """
    inputs = np.asarray(inputs, dtype=model.dtype)
    targets = np.asarray(targets, dtype=model.dtype)
    if len(inputs) == 0:
        raise ConfigError("training dataset is empty")
    if len(inputs) != len(targets):
        raise DimensionError("inputs and targets must have equal length")
    rng = np.random.default_rng(seed)
    opt = AdamState.for_params(model.parameters(), lr=lr)
    history: list[float] = []
    best_loss = np.inf
    best_snap = None
    converged = False
    for epoch in range(epochs):
        order = rng.permutation(len(inputs))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue  # batch variance undefined for a single row
            grads, loss = model.backprop(inputs[idx], targets[idx])
            adam_step(opt, model.parameters(), grads)
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_snap = model.snapshot()
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: loss {epoch_loss:.3e}")
        if epoch_loss <= loss_target:
            converged = True
            break
    warning = None
    if not converged:
        if best_snap is not None:
            model.restore(best_snap)
        warning = (
            f"loss target {loss_target:g} not reached in {epochs} epochs "
            f"(best {best_loss:.3e}); best weights restored"
        )
    return TrainResult(
        loss_history=history,
        converged=converged,
        epochs_run=len(history),
        best_loss=best_loss,
        warning=warning,
    )


def save_weights(model: MlpController, path) -> None:
    """Write a self-describing weight container (npz with a JSON header)."""
    meta = {
        "format_version": WEIGHT_FORMAT_VERSION,
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "output_dim": model.output_dim,
        "dtype": model.dtype.name,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{l}"] = w
        arrays[f"b{l}"] = b
    for l in range(model.n_hidden):
        arrays[f"gamma{l}"] = model.gamma[l]
        arrays[f"beta{l}"] = model.beta[l]
        arrays[f"rmean{l}"] = model.run_mean[l]
        arrays[f"rvar{l}"] = model.run_var[l]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(path) -> MlpController:
    """Read a weight container written by save_weights.

    Raises WeightFormatError for unreadable, truncated, or mismatched files.
    """
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except Exception as exc:
        raise WeightFormatError(f"cannot read weight file {path}: {exc}") from exc
    if "meta" not in data:
        raise WeightFormatError(f"{path} has no meta header")
    try:
        meta = json.loads(bytes(data["meta"]).decode())
    except Exception as exc:
        raise WeightFormatError(f"{path} meta header is not valid JSON") from exc
    if meta.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise WeightFormatError(
            f"unsupported weight format version {meta.get('format_version')!r}"
        )
    model = MlpController(
        meta["input_dim"], meta["hidden"], meta["output_dim"],
        dtype=np.dtype(meta["dtype"]),
    )
    try:
        for l in range(len(model.weights)):
            _assign(model.weights[l], data[f"w{l}"], f"w{l}", path)
            _assign(model.biases[l], data[f"b{l}"], f"b{l}", path)
        for l in range(model.n_hidden):
            _assign(model.gamma[l], data[f"gamma{l}"], f"gamma{l}", path)
            _assign(model.beta[l], data[f"beta{l}"], f"beta{l}", path)
            _assign(model.run_mean[l], data[f"rmean{l}"], f"rmean{l}", path)
            _assign(model.run_var[l], data[f"rvar{l}"], f"rvar{l}", path)
    except KeyError as k:
        raise WeightFormatError(f"{path} is missing array {k}") from k
    if any(np.any(v < 0) for v in model.run_var):
        raise WeightFormatError(f"{path} carries negative running variances")
    return model


def _assign(dst: np.ndarray, src: np.ndarray, name: str, path) -> None:
    if dst.shape != src.shape:
        raise WeightFormatError(
            f"{path}: array {name} has shape {src.shape}, expected {dst.shape}"
        )
    dst[...] = src.astype(dst.dtype)


class MlpEnsemble:
    """Stacked inference over one controller per agent.

    All member networks must share an architecture; their weights are
    stacked along a leading agent axis so one batched matmul serves every
    agent inside the simulation loop.
    """

    def __init__(self, models: list[MlpController]):
        if not models:
            raise ConfigError("ensemble needs at least one controller")
        widths = models[0].layer_widths()
        for m in models[1:]:
            if m.layer_widths() != widths:
                raise DimensionError("ensemble members must share an architecture")
        self.models = models
        self.dtype = models[0].dtype
        self.n_models = len(models)
        self.w = [
            np.stack([m.weights[l] for m in models]).astype(self.dtype)
            for l in range(len(models[0].weights))
        ]
        self.b = [
            np.stack([m.biases[l] for m in models]).astype(self.dtype)
            for l in range(len(models[0].biases))
        ]
        n_hidden = models[0].n_hidden
        self.scale = []
        self.shift = []
        for l in range(n_hidden):
            ivar = np.stack(
                [1.0 / np.sqrt(m.run_var[l] + BN_EPS) for m in models]
            ).astype(self.dtype)
            gamma = np.stack([m.gamma[l] for m in models]).astype(self.dtype)
            mean = np.stack([m.run_mean[l] for m in models]).astype(self.dtype)
            beta = np.stack([m.beta[l] for m in models]).astype(self.dtype)
            # fold batch-norm inference into one scale and shift per feature
            self.scale.append(gamma * ivar)
            self.shift.append(beta - gamma * ivar * mean)

    def infer(self, inputs: np.ndarray) -> np.ndarray:
        """Row i through model i: (n_models, D) -> (n_models, out)."""
        h = np.asarray(inputs, dtype=self.dtype)
        if h.shape[0] != self.n_models:
            raise DimensionError(
                f"expected {self.n_models} rows, got {h.shape[0]}"
            )
        h = h[:, None, :]
        for l in range(len(self.scale)):
            z = np.matmul(h, self.w[l]) + self.b[l][:, None, :]
            h = np.maximum(z * self.scale[l][:, None, :] + self.shift[l][:, None, :], 0.0)
        out = np.matmul(h, self.w[-1]) + self.b[-1][:, None, :]
        return out[:, 0, :].astype(np.float64)
