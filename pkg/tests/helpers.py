"""Shared fixtures for gradient checks (used by the unit and acceptance suites)."""
import numpy as np

from ichloc.mil import AttentionParams, ClassifierHead, EmbeddingBag, backward

from oracles import mp_central_difference, scalar_loss


def random_instance(rng, K=None, M=None, L=None, scale=1.0):
    K = K or int(rng.integers(1, 9))
    M = M or int(rng.integers(1, 5))
    L = L or int(rng.integers(1, 5))
    bag = EmbeddingBag(rng.standard_normal((K, M)), K, 1)
    p = AttentionParams(
        w=scale * rng.standard_normal(L),
        V=scale * rng.standard_normal((L, M)),
        U=scale * rng.standard_normal((L, M)),
    )
    head = ClassifierHead(theta=rng.standard_normal(M), bias=float(rng.standard_normal()))
    return bag, p, head


def _flatten(p, head):
    return np.concatenate([p.w, p.V.ravel(), p.U.ravel(), head.theta, [head.bias]])


def _unflatten(x, L, M):
    i = 0
    w = x[i:i + L]; i += L
    V = x[i:i + L * M].reshape(L, M); i += L * M
    U = x[i:i + L * M].reshape(L, M); i += L * M
    theta = x[i:i + M]; i += M
    return AttentionParams(w, V, U), ClassifierHead(theta, float(x[i]))


def _grad_vector(g):
    return np.concatenate([g.w, g.V.ravel(), g.U.ravel(), g.theta, [g.bias]])


def max_relative_error(bag, p, head, y, pos_weight):
    """Largest norm-wise relative error over the five parameter groups."""
    L, M = p.L_dim, p.M
    x0 = _flatten(p, head)

    H = bag.H.tolist()

    def f(x):
        return scalar_loss(x, bag.K, M, L, H, y, pos_weight)

    fd = mp_central_difference(f, x0, step=1e-6)
    an = _grad_vector(backward(bag, p, head, y, pos_weight))
    sizes = [L, L * M, L * M, M, 1]
    err = 0.0
    start = 0
    for n in sizes:
        a, b = an[start:start + n], fd[start:start + n]
        start += n
        denom = max(np.linalg.norm(a), np.linalg.norm(b))
        if denom > 1e-7:
            err = max(err, np.linalg.norm(a - b) / denom)
        else:
            err = max(err, np.linalg.norm(a - b))
    return err
