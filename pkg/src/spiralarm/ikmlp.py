"""Small MLP mapping (gravity angle, tip pose) -> tendon lengths.

Input is the 8-vector (theta_G, x, y, z, qw, qx, qy, qz); output the three
commanded tendon lengths in meters.  Three ReLU hidden layers trained with
Adam on mean squared error; inputs standardized by train-split statistics.
Weights round-trip through a JSON file (layer sizes, row-major matrices,
normalization stats).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class MlpIkModel:
    layer_sizes: list                 # [8, h, h, h, 3]
    weights: list                     # per layer, (out, in)
    biases: list                      # per layer, (out,)
    input_mean: np.ndarray            # (8,)
    input_std: np.ndarray             # (8,)
    output_lo: np.ndarray             # (3,) clamp bounds, meters
    output_hi: np.ndarray
    meta: dict = field(default_factory=dict)

    def forward(self, x):
        """Deterministic forward pass for (..., 8) inputs -> (..., 3)."""
        h = (np.asarray(x, dtype=float) - self.input_mean) / self.input_std
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                np.maximum(h, 0.0, out=h)
        return h


def ik_infer(model: MlpIkModel, theta_g, pos, quat):
    """Tendon lengths for one target pose, clamped to actuation bounds."""
    quat = np.asarray(quat, dtype=float)
    n = np.linalg.norm(quat)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {n} not within 1e-6 of 1")
    x = np.concatenate([[theta_g], np.asarray(pos, dtype=float), quat])
    y = model.forward(x)
    return np.clip(y, model.output_lo, model.output_hi)


def init_model(input_dim=8, hidden=64, output_dim=3, seed=0) -> MlpIkModel:
    sizes = [input_dim, hidden, hidden, hidden, output_dim]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / nin), size=(nout, nin)))
        biases.append(np.zeros(nout))
    return MlpIkModel(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        input_mean=np.zeros(input_dim),
        input_std=np.ones(input_dim),
        output_lo=np.full(output_dim, -np.inf),
        output_hi=np.full(output_dim, np.inf),
        meta={"seed": seed},
    )


def _forward_cached(model, X):
    acts = [X]
    h = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts


def _mse_grads(model, acts, Y):
    B = Y.shape[0]
    grads_W = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    delta = 2.0 * (acts[-1] - Y) / (B * Y.shape[1])
    for i in range(len(model.weights) - 1, -1, -1):
        grads_W[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * (acts[i] > 0.0)
    return grads_W, grads_b


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 40
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    quat_sign_augment: bool = True   # q and -q encode the same rotation


def train_ik(dataset, hyper: TrainConfig = TrainConfig(), hidden=64,
             output_bounds=None, progress=None):
    """Train on the dataset's train split; returns (model, history).

    history holds per-epoch train MSE and val MSE (meters^2).  Raises
    TrainingDivergedError if the validation loss goes non-finite.
    """
    Xtr, Ytr = dataset.train
    Xva, Yva = dataset.val
    if len(Xtr) == 0:
        raise ValueError("empty train split")

    model = init_model(hidden=hidden, seed=hyper.seed)
    mean = Xtr.mean(axis=0)
    std = Xtr.std(axis=0)
    if hyper.quat_sign_augment:
        # under sign augmentation the quaternion input distribution is
        # symmetric: zero mean, RMS scale
        mean[4:8] = 0.0
        std[4:8] = np.sqrt(np.mean(Xtr[:, 4:8] ** 2, axis=0))
    std[std < 1e-9] = 1.0
    model.input_mean = mean
    model.input_std = std
    # regression-head conditioning: start at the label mean so early Adam
    # steps refine shape instead of fighting the output scale
    model.weights[-1] *= 0.01
    model.biases[-1][:] = Ytr.mean(axis=0)
    if output_bounds is not None:
        model.output_lo = np.asarray(output_bounds[0], dtype=float)
        model.output_hi = np.asarray(output_bounds[1], dtype=float)

    Xn = (Xtr - mean) / std
    Xv = (Xva - mean) / std if len(Xva) else None

    mW = [np.zeros_like(W) for W in model.weights]
    vW = [np.zeros_like(W) for W in model.weights]
    mb = [np.zeros_like(b) for b in model.biases]
    vb = [np.zeros_like(b) for b in model.biases]
    rng = np.random.default_rng(hyper.seed)
    t_adam = 0
    history = {"train_mse": [], "val_mse": []}

    def val_mse():
        if Xv is None or len(Xv) == 0:
            return float("nan")
        pred = _forward_cached(model, Xv)[-1]
        return float(np.mean((pred - Yva) ** 2))

    for epoch in range(hyper.epochs):
        order = rng.permutation(len(Xn))
        ep_loss = 0.0
        n_seen = 0
        for start in range(0, len(order), hyper.batch):
            sel = order[start:start + hyper.batch]
            xb = Xn[sel]
            if hyper.quat_sign_augment:
                xb = xb.copy()
                signs = rng.integers(0, 2, size=len(sel)) * 2.0 - 1.0
                xb[:, 4:8] *= signs[:, None]
            acts = _forward_cached(model, xb)
            pred = acts[-1]
            ep_loss += float(np.sum((pred - Ytr[sel]) ** 2))
            n_seen += len(sel)
            gW, gb = _mse_grads(model, acts, Ytr[sel])
            t_adam += 1
            bc1 = 1.0 - hyper.beta1**t_adam
            bc2 = 1.0 - hyper.beta2**t_adam
            for i in range(len(model.weights)):
                mW[i] = hyper.beta1 * mW[i] + (1 - hyper.beta1) * gW[i]
                vW[i] = hyper.beta2 * vW[i] + (1 - hyper.beta2) * gW[i] ** 2
                model.weights[i] -= hyper.lr * (mW[i] / bc1) / (
                    np.sqrt(vW[i] / bc2) + hyper.eps)
                mb[i] = hyper.beta1 * mb[i] + (1 - hyper.beta1) * gb[i]
                vb[i] = hyper.beta2 * vb[i] + (1 - hyper.beta2) * gb[i] ** 2
                model.biases[i] -= hyper.lr * (mb[i] / bc1) / (
                    np.sqrt(vb[i] / bc2) + hyper.eps)
        train_mse = ep_loss / (n_seen * Ytr.shape[1])
        vm = val_mse()
        history["train_mse"].append(train_mse)
        history["val_mse"].append(vm)
        if Xv is not None and len(Xv) and not np.isfinite(vm):
            raise TrainingDivergedError(
                f"validation MSE non-finite at epoch {epoch}: "
                f"train_mse={train_mse:.3e}, lr={hyper.lr}"
            )
        if progress:
            progress(f"epoch {epoch + 1}/{hyper.epochs} "
                     f"train {train_mse:.3e} val {vm:.3e}")

    model.meta.update({
        "hidden": hidden,
        "epochs": hyper.epochs,
        "lr": hyper.lr,
        "batch": hyper.batch,
        "train_seed": hyper.seed,
        "final_train_mse": history["train_mse"][-1],
        "final_val_mse": history["val_mse"][-1],
    })
    return model, history


def save_model(model: MlpIkModel, path):
    doc = {
        "layer_sizes": model.layer_sizes,
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "input_mean": model.input_mean.tolist(),
        "input_std": model.input_std.tolist(),
        "output_lo": [None if not np.isfinite(v) else float(v)
                      for v in model.output_lo],
        "output_hi": [None if not np.isfinite(v) else float(v)
                      for v in model.output_hi],
        "meta": model.meta,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path) -> MlpIkModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    lo = np.array([-np.inf if v is None else v for v in doc["output_lo"]])
    hi = np.array([np.inf if v is None else v for v in doc["output_hi"]])
    return MlpIkModel(
        layer_sizes=list(doc["layer_sizes"]),
        weights=[np.asarray(W, dtype=float) for W in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        input_mean=np.asarray(doc["input_mean"], dtype=float),
        input_std=np.asarray(doc["input_std"], dtype=float),
        output_lo=lo,
        output_hi=hi,
        meta=dict(doc.get("meta", {})),
    )
