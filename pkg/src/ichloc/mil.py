"""Multiple-instance pooling heads.

A bag holds K position embeddings (rows of ``H``, shape K x M) laid out on a
``grid_rows x grid_cols`` feature grid. Two heads are provided:

* global max pooling over a scalar feature map (M == 1);
* gated attention pooling, ``z = sum_k a_k h_k`` with
  ``a = softmax_k(w . (tanh(V h_k) * sigmoid(U h_k)))``,
  followed by a logistic classifier trained with weighted cross-entropy.

Forward and backward passes are vectorized over a stack of equally sized bags
so the training loop stays in numpy.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ShapeError, as_matrix
from .io import read_matrix, write_json, write_matrix

PROB_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingBag:
    H: np.ndarray
    grid_rows: int
    grid_cols: int
    # per-position witness flags; only known for synthetic bags
    instance_labels: np.ndarray | None = None

    def __post_init__(self):
        H = as_matrix(self.H, "H")
        object.__setattr__(self, "H", H)
        if self.grid_rows < 1 or self.grid_cols < 1 or self.grid_rows * self.grid_cols != H.shape[0]:
            raise ShapeError(f"grid {self.grid_rows}x{self.grid_cols} does not hold K={H.shape[0]} positions")
        if self.instance_labels is not None:
            lab = np.asarray(self.instance_labels, dtype=bool)
            if lab.shape != (H.shape[0],):
                raise ShapeError("instance_labels must have one entry per position")
            lab.flags.writeable = False
            object.__setattr__(self, "instance_labels", lab)

    @property
    def K(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @classmethod
    def from_feature_map(cls, fmap) -> "EmbeddingBag":
        """Scalar feature map (rows x cols) as a bag with M == 1."""
        fmap = as_matrix(fmap, "feature map")
        return cls(fmap.reshape(-1, 1), fmap.shape[0], fmap.shape[1])


@dataclass(frozen=True)
class AttentionParams:
    w: np.ndarray  # (L,)
    V: np.ndarray  # (L, M)
    U: np.ndarray  # (L, M)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        V = as_matrix(self.V, "V")
        U = as_matrix(self.U, "U")
        if not np.all(np.isfinite(w)):
            raise ValueError("w contains non-finite values")
        if V.shape != U.shape or V.shape[0] != w.shape[0]:
            raise ShapeError(f"inconsistent attention shapes w{w.shape} V{V.shape} U{U.shape}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "U", U)

    @property
    def L_dim(self) -> int:
        return self.w.shape[0]

    @property
    def M(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class ClassifierHead:
    theta: np.ndarray  # (M,)
    bias: float = 0.0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(theta)) or not np.isfinite(self.bias):
            raise ValueError("classifier parameters must be finite")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", float(self.bias))


@dataclass(frozen=True)
class Gradients:
    w: np.ndarray
    V: np.ndarray
    U: np.ndarray
    theta: np.ndarray
    bias: float


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------- max pooling

def max_pool_score(bag: EmbeddingBag) -> tuple[float, int]:
    """Global max over a scalar feature map; ties go to the first position."""
    if bag.M != 1:
        raise ShapeError(f"max pooling needs a scalar feature map (M == 1), got M={bag.M}")
    k = int(np.argmax(bag.H[:, 0]))
    return float(bag.H[k, 0]), k


# ---------------------------------------------------------- gated attention

def attention_scores(H: np.ndarray, p: AttentionParams) -> np.ndarray:
    """Pre-softmax scores for one bag (K,) or a stack of bags (N, K)."""
    if H.shape[-1] != p.M:
        raise ShapeError(f"embedding dimension {H.shape[-1]} != attention M {p.M}")
    gate = np.tanh(H @ p.V.T) * _sigmoid(H @ p.U.T)
    return gate @ p.w


def gated_attention_weights(bag: EmbeddingBag, p: AttentionParams) -> np.ndarray:
    return _softmax(attention_scores(bag.H, p))


def attention_pool(bag: EmbeddingBag, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (bag.K,):
        raise ShapeError(f"attention vector has shape {a.shape}, expected ({bag.K},)")
    if abs(a.sum() - 1.0) > 1e-9:
        raise ValueError(f"attention weights must sum to 1, got {a.sum()!r}")
    return a @ bag.H


def classify(z, head: ClassifierHead) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != head.theta.shape:
        raise ShapeError(f"pooled vector {z.shape} does not match classifier {head.theta.shape}")
    return float(_sigmoid(head.theta @ z + head.bias))


def weighted_cross_entropy(p, y, pos_weight: float = 1.0):
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(pos_weight * y * np.log(p) + (1 - y) * np.log1p(-p))


def predict_proba(bag: EmbeddingBag, p: AttentionParams, head: ClassifierHead) -> float:
    a = gated_attention_weights(bag, p)
    return classify(a @ bag.H, head)


def _forward_backward(H, y, p: AttentionParams, head: ClassifierHead, pos_weight: float):
    """Mean loss and gradients over a stack of bags H (N, K, M), labels y (N,)."""
    N = H.shape[0]
    pre_t = H @ p.V.T                       # (N, K, L)
    pre_g = H @ p.U.T
    t = np.tanh(pre_t)
    g = _sigmoid(pre_g)
    gate = t * g
    s = gate @ p.w                          # (N, K)
    a = _softmax(s, axis=1)
    z = np.einsum("nk,nkm->nm", a, H)       # (N, M)
    logit = z @ head.theta + head.bias
    prob = _sigmoid(logit)
    loss = weighted_cross_entropy(prob, y, pos_weight)

    # d loss / d logit; the probability clamp makes the loss flat outside it
    dlogit = prob * (1 - y) - pos_weight * y * (1 - prob)
    clamped = (prob < PROB_EPS) | (prob > 1.0 - PROB_EPS)
    dlogit = np.where(clamped, 0.0, dlogit) / N

    g_theta = dlogit @ z
    g_bias = float(dlogit.sum())
    g_z = dlogit[:, None] * head.theta[None, :]         # (N, M)
    g_a = np.einsum("nkm,nm->nk", H, g_z)
    g_s = a * (g_a - np.sum(a * g_a, axis=1, keepdims=True))
    g_w = np.einsum("nkl,nk->l", gate, g_s)
    g_gate = g_s[:, :, None] * p.w[None, None, :]       # (N, K, L)
    g_pre_t = g_gate * g * (1 - t * t)
    g_pre_g = g_gate * t * g * (1 - g)
    g_V = np.einsum("nkl,nkm->lm", g_pre_t, H)
    g_U = np.einsum("nkl,nkm->lm", g_pre_g, H)
    grads = Gradients(w=g_w, V=g_V, U=g_U, theta=g_theta, bias=g_bias)
    return float(loss.mean()), grads, prob


def bag_loss(bag: EmbeddingBag, p: AttentionParams, head: ClassifierHead, y: int, pos_weight: float = 1.0) -> float:
    return float(weighted_cross_entropy(predict_proba(bag, p, head), y, pos_weight))


def backward(bag: EmbeddingBag, p: AttentionParams, head: ClassifierHead, y: int, pos_weight: float = 1.0) -> Gradients:
    """Gradient of the single-bag weighted cross-entropy w.r.t. every parameter."""
    _, grads, _ = _forward_backward(bag.H[None], np.array([float(y)]), p, head, pos_weight)
    return grads


# ----------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 300
    pos_weight: float = 1.0
    seed: int = 0
    momentum: float = 0.9
    L_dim: int = 8
    init_scale: float = 0.5


def init_params(M: int, L_dim: int, seed: int = 0, scale: float = 0.5) -> tuple[AttentionParams, ClassifierHead]:
    rng = np.random.default_rng(seed)
    V = rng.normal(0.0, scale / np.sqrt(M), size=(L_dim, M))
    U = rng.normal(0.0, scale / np.sqrt(M), size=(L_dim, M))
    w = rng.normal(0.0, scale / np.sqrt(L_dim), size=L_dim)
    return AttentionParams(w=w, V=V, U=U), ClassifierHead(theta=np.zeros(M), bias=0.0)


def _stack(dataset):
    Ks = {bag.K for bag, _ in dataset}
    Ms = {bag.M for bag, _ in dataset}
    if len(Ks) != 1 or len(Ms) != 1:
        raise ShapeError("all bags in a training set must share K and M")
    H = np.stack([bag.H for bag, _ in dataset])
    y = np.array([float(label) for _, label in dataset])
    return H, y


def train_mil_head(
    dataset: Sequence[tuple[EmbeddingBag, int]],
    config: TrainConfig = TrainConfig(),
    init: tuple[AttentionParams, ClassifierHead] | None = None,
) -> tuple[AttentionParams, ClassifierHead, list[float]]:
    """Full-batch gradient descent with heavy-ball momentum.

    Returns the trained parameters and the mean training loss recorded before
    each epoch's update. Deterministic for a given seed and dataset.
    """
    if not dataset:
        raise ValueError("training set is empty")
    H, y = _stack(dataset)
    if len(np.unique(y)) < 2:
        warnings.warn("training set contains a single class", RuntimeWarning, stacklevel=2)
    if init is None:
        init = init_params(H.shape[2], config.L_dim, config.seed, config.init_scale)
    p, head = init
    names = ("w", "V", "U", "theta", "bias")
    vals = {"w": p.w.copy(), "V": p.V.copy(), "U": p.U.copy(), "theta": head.theta.copy(), "bias": np.float64(head.bias)}
    vel = {k: np.zeros_like(v) for k, v in vals.items()}
    history: list[float] = []
    for _ in range(config.epochs):
        p = AttentionParams(vals["w"], vals["V"], vals["U"])
        head = ClassifierHead(vals["theta"], float(vals["bias"]))
        loss, grads, _ = _forward_backward(H, y, p, head, config.pos_weight)
        history.append(loss)
        for k in names:
            vel[k] = config.momentum * vel[k] - config.learning_rate * np.asarray(getattr(grads, k))
            vals[k] = vals[k] + vel[k]
    if config.epochs:
        p = AttentionParams(vals["w"], vals["V"], vals["U"])
        head = ClassifierHead(vals["theta"], float(vals["bias"]))
    return p, head, history


def mean_loss(dataset, p: AttentionParams, head: ClassifierHead, pos_weight: float = 1.0) -> float:
    H, y = _stack(dataset)
    loss, _, _ = _forward_backward(H, y, p, head, pos_weight)
    return loss


def bag_accuracy(dataset, p: AttentionParams, head: ClassifierHead) -> float:
    H, y = _stack(dataset)
    _, _, prob = _forward_backward(H, y, p, head, 1.0)
    return float(np.mean((prob >= 0.5) == (y == 1)))


# ------------------------------------------------------------- map building

def resize_bilinear(grid, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize with aligned corners (corner pixels keep corner values)."""
    grid = np.asarray(grid, dtype=np.float64)
    gr, gc = grid.shape

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(rows, gr)
    c0, c1, fc = coords(cols, gc)
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bottom * fr[:, None]


def _check_target(bag: EmbeddingBag, rows: int, cols: int) -> None:
    if rows < bag.grid_rows or cols < bag.grid_cols:
        raise ShapeError(
            f"target {rows}x{cols} is smaller than the feature grid {bag.grid_rows}x{bag.grid_cols}"
        )


def attention_map_from_weights(a, bag: EmbeddingBag, rows: int, cols: int) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (bag.K,):
        raise ShapeError(f"attention vector has shape {a.shape}, expected ({bag.K},)")
    _check_target(bag, rows, cols)
    grid = a.reshape(bag.grid_rows, bag.grid_cols)
    return as_matrix(np.maximum(resize_bilinear(grid, rows, cols), 0.0))


def activation_map_from_features(bag: EmbeddingBag, rows: int, cols: int) -> np.ndarray:
    """Pre-pooling scalar activations, shifted so the minimum is 0, resized."""
    if bag.M != 1:
        raise ShapeError(f"activation maps need M == 1, got M={bag.M}")
    _check_target(bag, rows, cols)
    grid = bag.H[:, 0].reshape(bag.grid_rows, bag.grid_cols)
    grid = grid - grid.min()
    return as_matrix(np.maximum(resize_bilinear(grid, rows, cols), 0.0))


# --------------------------------------------------------------- persistence

def save_bag(bag: EmbeddingBag, label: int | None, path) -> None:
    path = Path(path)
    write_matrix(bag.H, path, "amap")
    meta = {"grid_rows": bag.grid_rows, "grid_cols": bag.grid_cols, "label": label}
    if bag.instance_labels is not None:
        meta["instance_labels"] = [int(v) for v in bag.instance_labels]
    write_json(meta, path.with_suffix(".json"))


def load_bag(path) -> tuple[EmbeddingBag, int | None]:
    path = Path(path)
    H = read_matrix(path, "amap")
    meta = json.loads(path.with_suffix(".json").read_text())
    bag = EmbeddingBag(H, int(meta["grid_rows"]), int(meta["grid_cols"]), meta.get("instance_labels"))
    label = meta.get("label")
    return bag, None if label is None else int(label)


def save_params(p: AttentionParams, head: ClassifierHead, directory, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(p.w.reshape(-1, 1), d / "w.amap")
    write_matrix(p.V, d / "V.amap")
    write_matrix(p.U, d / "U.amap")
    write_matrix(head.theta.reshape(-1, 1), d / "theta.amap")
    write_json({"bias": head.bias, "L_dim": p.L_dim, "M": p.M, **(extra or {})}, d / "params.json")


def load_params(directory) -> tuple[AttentionParams, ClassifierHead]:
    d = Path(directory)
    meta = json.loads((d / "params.json").read_text())
    p = AttentionParams(
        w=read_matrix(d / "w.amap").ravel(),
        V=read_matrix(d / "V.amap"),
        U=read_matrix(d / "U.amap"),
    )
    head = ClassifierHead(theta=read_matrix(d / "theta.amap").ravel(), bias=float(meta["bias"]))
    if head.theta.shape[0] != p.M:
        raise ShapeError("classifier and attention dimensions disagree")
    return p, head
