"""Target-delayed recurrent network: forward evaluation and exact
derivatives.

The network is a single-hidden-layer recurrent net with shared weights:

    h_t = f_h(U x_t + W h_{t-1} + b_h),   h_{-1} = 0
    y_t = f_y(V . h_t + b_y)

where the training label for step t is the close price ``tau`` trading
days later.  Gradients are exact (full, untruncated backpropagation
through time); the per-sample Jacobian is computed by forward sensitivity
propagation, which yields the same exact values through an independent
recursion and so cross-checks the reverse-mode gradient.

Parameter vector layout (used by the trainers and both derivative
routines): U row-major, then W row-major, then V, then b_h, then b_y.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .market_data import AlignedDataset

_ACTIVATIONS = {
    "tanh": np.tanh,
    "identity": lambda x: x,
}
# Derivative expressed through the activation *value* (works for both).
_DERIV_FROM_VALUE = {
    "tanh": lambda v: 1.0 - v * v,
    "identity": lambda v: np.ones_like(v),
}


@dataclass(frozen=True)
class RnnModel:
    n_input: int
    n_hidden: int
    delay_tau: int
    U: np.ndarray  # (n_hidden, n_input)
    W: np.ndarray  # (n_hidden, n_hidden)
    V: np.ndarray  # (n_hidden,)
    b_h: np.ndarray  # (n_hidden,)
    b_y: float
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        if self.delay_tau < 1:
            raise ValueError(f"delay_tau must be >= 1, got {self.delay_tau}")
        for name in (self.hidden_activation, self.output_activation):
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        shapes = {
            "U": (self.n_hidden, self.n_input),
            "W": (self.n_hidden, self.n_hidden),
            "V": (self.n_hidden,),
            "b_h": (self.n_hidden,),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValueError(f"{name} has shape {got}, want {want}")
        for name in shapes:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if not np.isfinite(self.b_y):
            raise ValueError("b_y is not finite")

    @property
    def n_params(self) -> int:
        h, j = self.n_hidden, self.n_input
        return h * j + h * h + h + h + 1

    def params_to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.U.ravel(), self.W.ravel(), self.V, self.b_h, [self.b_y]]
        )

    def with_params(self, theta: np.ndarray) -> "RnnModel":
        h, j = self.n_hidden, self.n_input
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"parameter vector has shape {theta.shape}, "
                             f"want ({self.n_params},)")
        o1 = h * j
        o2 = o1 + h * h
        return dataclasses.replace(
            self,
            U=theta[:o1].reshape(h, j).copy(),
            W=theta[o1:o2].reshape(h, h).copy(),
            V=theta[o2:o2 + h].copy(),
            b_h=theta[o2 + h:o2 + 2 * h].copy(),
            b_y=float(theta[-1]),
        )


def init_rnn(n_input: int, n_hidden: int, delay_tau: int, seed: int,
             hidden_activation: str = "tanh",
             output_activation: str = "identity") -> RnnModel:
    """Seeded initial model: weights uniform in [-0.5, 0.5]/sqrt(fan-in),
    biases zero."""
    rng = np.random.default_rng(seed)

    def draw(shape, fan_in):
        return rng.uniform(-0.5, 0.5, size=shape) / np.sqrt(fan_in)

    return RnnModel(
        n_input=n_input,
        n_hidden=n_hidden,
        delay_tau=delay_tau,
        U=draw((n_hidden, n_input), n_input),
        W=draw((n_hidden, n_hidden), n_hidden),
        V=draw(n_hidden, n_hidden),
        b_h=np.zeros(n_hidden),
        b_y=0.0,
        hidden_activation=hidden_activation,
        output_activation=output_activation,
    )


@dataclass(frozen=True)
class SequenceDataset:
    """Time-ordered supervised pairs: row t of ``inputs`` is labelled by
    the close price ``tau`` steps after it."""

    inputs: np.ndarray  # (n_pairs, n_input)
    targets: np.ndarray  # (n_pairs,)

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be 2-D")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError("targets length must match inputs rows")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def build_supervised(features, target=None, tau: int = 1) -> SequenceDataset:
    """Pair feature row t with the target tau steps later.

    ``features`` may be an :class:`AlignedDataset` (its close-price
    target is used) or a plain matrix with an explicit ``target``
    series.  A series of length T yields exactly T - tau pairs.
    """
    if isinstance(features, AlignedDataset):
        matrix, series = features.features, features.target
    else:
        matrix = np.asarray(features, dtype=float)
        if target is None:
            raise ValueError("target series required when features is a matrix")
        series = np.asarray(target, dtype=float)
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    T = matrix.shape[0]
    if tau >= T:
        raise ValueError(f"tau={tau} leaves no pairs for a series of length {T}")
    return SequenceDataset(inputs=matrix[:T - tau].copy(), targets=series[tau:].copy())


def _forward_states(model: RnnModel, inputs: np.ndarray):
    """Hidden states (N x h) and predictions (N,) over the sequence."""
    f_h = _ACTIVATIONS[model.hidden_activation]
    f_y = _ACTIVATIONS[model.output_activation]
    N = inputs.shape[0]
    pre = inputs @ model.U.T + model.b_h  # (N, h)
    H = np.empty((N, model.n_hidden))
    h = np.zeros(model.n_hidden)
    for t in range(N):
        h = f_h(pre[t] + model.W @ h)
        H[t] = h
    preds = f_y(H @ model.V + model.b_y)
    bad = ~np.isfinite(preds)
    if bad.any():
        t = int(np.argmax(bad | ~np.isfinite(H).all(axis=1)))
        raise FloatingPointError(f"non-finite network state at time index {t}")
    return H, preds


def forward(model: RnnModel, dataset: SequenceDataset) -> np.ndarray:
    """Predictions over the full sequence, recursing h from h0 = 0."""
    if dataset.inputs.shape[1] != model.n_input:
        raise ValueError(
            f"dataset has {dataset.inputs.shape[1]} features, model wants {model.n_input}"
        )
    _, preds = _forward_states(model, dataset.inputs)
    return preds


def loss_mse(predictions, targets) -> float:
    """Mean squared error (1/N) sum (pred - target)^2."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {targets.shape}")
    if predictions.size == 0:
        raise ValueError("empty prediction vector")
    diff = predictions - targets
    return float(diff @ diff / diff.size)


def gradient_sse(model: RnnModel, dataset: SequenceDataset, index_subset=None) -> np.ndarray:
    """Exact gradient of sum_{i in subset} (pred_i - target_i)^2.

    Reverse-mode backpropagation through time over the whole sequence;
    errors outside the subset contribute nothing.  Returns a vector in
    the documented parameter layout.
    """
    H, preds = _forward_states(model, dataset.inputs)
    N, h = H.shape
    dy = np.zeros(N)
    idx = np.arange(N) if index_subset is None else np.asarray(index_subset)
    dy[idx] = 2.0 * (preds[idx] - dataset.targets[idx])
    dy *= _DERIV_FROM_VALUE[model.output_activation](preds)

    d_hidden = _DERIV_FROM_VALUE[model.hidden_activation]
    X = dataset.inputs
    dU = np.zeros_like(model.U)
    dW = np.zeros_like(model.W)
    dV = H.T @ dy
    db_h = np.zeros(h)
    db_y = float(dy.sum())
    da_next = np.zeros(h)
    WT = model.W.T
    for t in range(N - 1, -1, -1):
        dh = model.V * dy[t] + WT @ da_next
        da = dh * d_hidden(H[t])
        dU += np.outer(da, X[t])
        if t > 0:
            dW += np.outer(da, H[t - 1])
        db_h += da
        da_next = da
    return np.concatenate([dU.ravel(), dW.ravel(), dV, db_h, [db_y]])


def prediction_jacobian(model: RnnModel, dataset: SequenceDataset,
                        index_subset=None) -> np.ndarray:
    """Rows d e_i / d theta = d pred_i / d theta for i in the subset.

    Exact forward sensitivity propagation: S_t = D_t (B_t + W S_{t-1})
    where S_t = dh_t/dtheta and B_t holds the direct dependence of the
    pre-activation on U, W, and b_h.  An independent recursion from the
    reverse-mode gradient, so 2 J^T e == gradient_sse serves as a
    consistency check.
    """
    H, preds = _forward_states(model, dataset.inputs)
    X = dataset.inputs
    N, h = H.shape
    j = model.n_input
    P = model.n_params
    oW = h * j
    oV = oW + h * h
    obh = oV + h

    D = _DERIV_FROM_VALUE[model.hidden_activation](H)  # (N, h)
    d_out = _DERIV_FROM_VALUE[model.output_activation](preds)
    J = np.empty((N, P))
    S = np.zeros((h, P))
    G = np.empty((h, P))
    # Strided views of the direct-dependence diagonals inside G: entry
    # [i, i*j + c] for U, [i, oW + i*h + c] for W, [i, obh + i] for b_h.
    itemsize = G.itemsize
    diag_u = np.lib.stride_tricks.as_strided(
        G, shape=(h, j), strides=((P + j) * itemsize, itemsize))
    diag_w = np.lib.stride_tricks.as_strided(
        G[:, oW:], shape=(h, h), strides=((P + h) * itemsize, itemsize))
    diag_b = np.lib.stride_tricks.as_strided(
        G[:, obh:], shape=(h,), strides=((P + 1) * itemsize,))
    W = model.W
    V = model.V
    h_prev = np.zeros(h)
    for t in range(N):
        np.matmul(W, S, out=G)
        diag_u += X[t]
        diag_w += h_prev
        diag_b += 1.0
        np.multiply(D[t, :, None], G, out=S)
        np.matmul(V, S, out=J[t])
        h_prev = H[t]
    J[:, oV:oV + h] += H
    J[:, P - 1] += 1.0
    if model.output_activation != "identity":
        J *= d_out[:, None]
    if index_subset is None:
        return J
    return J[np.asarray(index_subset)]


def rescale_output(model: RnnModel, scale: float, offset: float) -> RnnModel:
    """Fold an affine output mapping y -> y*scale + offset into V and b_y.

    Exact for the identity output activation; used to return models in
    natural target units after training against standardized targets.
    """
    if model.output_activation != "identity":
        raise ValueError("output rescaling requires the identity output activation")
    return dataclasses.replace(model, V=model.V * scale,
                               b_y=model.b_y * scale + offset)


MODEL_FORMAT = "aeroforecast-rnn-v1"


def save_model(path, model: RnnModel) -> None:
    """Self-describing text serialization; round-trips bit-exactly."""
    doc = {
        "format": MODEL_FORMAT,
        "n_input": model.n_input,
        "n_hidden": model.n_hidden,
        "delay_tau": model.delay_tau,
        "hidden_activation": model.hidden_activation,
        "output_activation": model.output_activation,
        "U": model.U.tolist(),
        "W": model.W.tolist(),
        "V": model.V.tolist(),
        "b_h": model.b_h.tolist(),
        "b_y": model.b_y,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> RnnModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: unknown model format {doc.get('format')!r}")
    return RnnModel(
        n_input=int(doc["n_input"]),
        n_hidden=int(doc["n_hidden"]),
        delay_tau=int(doc["delay_tau"]),
        U=np.array(doc["U"], dtype=float),
        W=np.array(doc["W"], dtype=float),
        V=np.array(doc["V"], dtype=float),
        b_h=np.array(doc["b_h"], dtype=float),
        b_y=float(doc["b_y"]),
        hidden_activation=doc["hidden_activation"],
        output_activation=doc["output_activation"],
    )
