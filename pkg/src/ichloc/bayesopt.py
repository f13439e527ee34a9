"""Gaussian-process Bayesian optimization of detector parameters.

The surrogate is a zero-mean GP with an ARD Matern 5/2 kernel fitted on
unit-cube inputs and standardized targets; proposals maximize expected
improvement. Everything is deterministic given the seed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, optimize, stats
from scipy.stats import qmc

from .core import DetectorParams, NumericalError, ParameterError

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-10
MAX_JITTER = 1e-4
N_RESTARTS = 8
N_CANDIDATES = 2048
N_REFINE = 5

# log-space hyperparameter bounds on unit-cube inputs and standardized targets
LENGTH_BOUNDS = (1e-3, 1e2)
SIGNAL_BOUNDS = (1e-2, 1e2)
NOISE_BOUNDS = (NOISE_FLOOR, 1.0)


# ------------------------------------------------------------- search space

@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise ParameterError(f"{self.name}: scale must be 'linear' or 'log'")
        if not self.lower < self.upper:
            raise ParameterError(f"{self.name}: lower bound must be below upper bound")
        if self.scale == "log" and self.lower <= 0:
            raise ParameterError(f"{self.name}: log scale requires a positive lower bound")

    def from_unit(self, u: float) -> float:
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "log":
            lo, hi = math.log(self.lower), math.log(self.upper)
            v = math.exp(lo + u * (hi - lo))
        else:
            v = self.lower + u * (self.upper - self.lower)
        v = min(max(v, self.lower), self.upper)
        if self.integer:
            v = float(min(max(round(v), math.ceil(self.lower)), math.floor(self.upper)))
        return v

    def to_unit(self, v: float) -> float:
        if self.scale == "log":
            lo, hi = math.log(self.lower), math.log(self.upper)
            u = (math.log(v) - lo) / (hi - lo)
        else:
            u = (v - self.lower) / (self.upper - self.lower)
        return min(max(u, 0.0), 1.0)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dimension, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ParameterError("dimension names must be unique")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def __len__(self) -> int:
        return len(self.dims)

    def from_unit(self, u) -> dict[str, float]:
        return {d.name: d.from_unit(ui) for d, ui in zip(self.dims, u)}

    def to_unit(self, point: dict[str, float]) -> np.ndarray:
        return np.array([d.to_unit(point[d.name]) for d in self.dims])

    def contains(self, point: dict[str, float]) -> bool:
        return all(d.lower <= point[d.name] <= d.upper for d in self.dims)

    def to_dict(self) -> dict:
        return {"dimensions": [
            {"name": d.name, "lower": d.lower, "upper": d.upper, "scale": d.scale, "integer": d.integer}
            for d in self.dims
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpace":
        try:
            return cls(tuple(
                Dimension(str(d["name"]), float(d["lower"]), float(d["upper"]),
                          str(d.get("scale", "linear")), bool(d.get("integer", False)))
                for d in data["dimensions"]
            ))
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed search space: {exc}") from None


DEFAULT_SPACE = SearchSpace((
    Dimension("h", 1e-4, 0.5, "log"),
    Dimension("T", 1e-4, 1.0, "log"),
    Dimension("d", 1.0, 100.0, "linear", integer=True),
))


def latin_hypercube(n: int, space: SearchSpace, seed: int = 0) -> list[dict[str, float]]:
    """Stratified initial design: one point per 1/n stratum in every dimension."""
    if n < 1:
        raise ParameterError("latin_hypercube needs n >= 1")
    u = qmc.LatinHypercube(d=len(space), seed=np.random.default_rng(seed)).random(n)
    return [space.from_unit(row) for row in u]


# ---------------------------------------------------------------------- GP

def matern52(X1: np.ndarray, X2: np.ndarray, lengths: np.ndarray, signal: float) -> np.ndarray:
    diff = (X1[:, None, :] - X2[None, :, :]) / lengths
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    s5r = math.sqrt(5.0) * r
    return signal * (1.0 + s5r + 5.0 / 3.0 * r * r) * np.exp(-s5r)


def _cholesky(K: np.ndarray, noise: float):
    """Cholesky of K + noise*I, escalating jitter x10 up to MAX_JITTER."""
    n = K.shape[0]
    jitter = 0.0
    while True:
        try:
            c = linalg.cho_factor(K + (noise + jitter) * np.eye(n), lower=True, check_finite=False)
            return c, noise + jitter
        except linalg.LinAlgError:
            jitter = NOISE_FLOOR if jitter == 0.0 else jitter * 10
            if jitter > MAX_JITTER:
                raise NumericalError("covariance is not positive definite even with maximum jitter")


def _neg_log_marginal(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-hyperparameters."""
    n, d = X.shape
    lengths = np.exp(theta[:d])
    signal = math.exp(theta[d])
    noise = math.exp(theta[d + 1])
    diff2 = ((X[:, None, :] - X[None, :, :]) / lengths) ** 2     # (n, n, d)
    r = np.sqrt(diff2.sum(axis=-1))
    s5r = math.sqrt(5.0) * r
    e = np.exp(-s5r)
    K = signal * (1.0 + s5r + 5.0 / 3.0 * r * r) * e
    try:
        c, _ = _cholesky(K, noise)
    except NumericalError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve(c, y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    val = 0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * math.log(2 * math.pi)
    if not np.isfinite(val):
        return 1e25, np.zeros_like(theta)
    # d nll / d theta = 0.5 tr((K^-1 - alpha alpha^T) dK/dtheta)
    W = linalg.cho_solve(c, np.eye(n), check_finite=False) - np.outer(alpha, alpha)
    dk_common = (5.0 / 3.0) * signal * (1.0 + s5r) * e
    grad = np.empty_like(theta)
    grad[:d] = 0.5 * np.einsum("ij,ijk->k", W * dk_common, diff2)
    grad[d] = 0.5 * np.sum(W * K)
    grad[d + 1] = 0.5 * noise * np.trace(W)
    return float(val), grad


@dataclass(frozen=True)
class GPModel:
    X: np.ndarray            # unit-cube inputs (n, d)
    y: np.ndarray            # standardized targets (n,)
    y_mean: float
    y_std: float
    lengths: np.ndarray
    signal: float
    noise: float             # effective noise incl. any jitter, standardized units
    lower: np.ndarray
    upper: np.ndarray
    chol: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    degenerate: bool = False

    def normalize(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self.lower) / (self.upper - self.lower)


def gp_fit(
    X,
    y,
    lower=None,
    upper=None,
    n_restarts: int = N_RESTARTS,
    seed: int = 0,
    hyperparams: dict | None = None,
) -> GPModel:
    """Fit a GP by maximizing the log marginal likelihood.

    Inputs are rescaled to the unit cube using ``lower``/``upper`` (default:
    already unit-cube). ``hyperparams`` (keys ``lengths``, ``signal``,
    ``noise``, in unit-cube/standardized units) skips the optimization.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if len(y) != n:
        raise ParameterError("X and y differ in length")
    if len(np.unique(X, axis=0)) < 2:
        raise ParameterError("gp_fit needs at least two distinct points")
    lower = np.zeros(d) if lower is None else np.asarray(lower, dtype=np.float64)
    upper = np.ones(d) if upper is None else np.asarray(upper, dtype=np.float64)
    Xu = (X - lower) / (upper - lower)

    y_mean = float(y.mean())
    y_std = float(y.std())
    # round-off leaves a tiny spread on constant targets; treat it as zero
    degenerate = y_std <= 1e-12 * max(1.0, abs(y_mean))
    if degenerate:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    if hyperparams is not None:
        lengths = np.broadcast_to(np.asarray(hyperparams["lengths"], dtype=np.float64), (d,)).copy()
        signal = float(hyperparams["signal"])
        noise = max(float(hyperparams["noise"]), NOISE_FLOOR)
    elif degenerate:
        # flat targets: nothing to learn, keep a smooth prior and minimal noise
        lengths, signal, noise = np.full(d, 0.5), SIGNAL_BOUNDS[0], NOISE_FLOOR
    else:
        bounds = [tuple(np.log(LENGTH_BOUNDS))] * d + [tuple(np.log(SIGNAL_BOUNDS)), tuple(np.log(NOISE_BOUNDS))]
        rng = np.random.default_rng(seed)
        starts = [np.r_[np.full(d, math.log(0.3)), 0.0, math.log(1e-4)]]
        lo_b = np.array([b[0] for b in bounds])
        hi_b = np.array([b[1] for b in bounds])
        starts += [rng.uniform(lo_b, hi_b) for _ in range(max(n_restarts - 1, 0))]
        best = None
        for x0 in starts:
            res = optimize.minimize(_neg_log_marginal, x0, args=(Xu, ys), jac=True, method="L-BFGS-B", bounds=bounds)
            if best is None or res.fun < best.fun:
                best = res
        theta = best.x
        lengths = np.exp(theta[:d])
        signal = float(np.exp(theta[d]))
        noise = max(float(np.exp(theta[d + 1])), NOISE_FLOOR)

    chol, eff_noise = _cholesky(matern52(Xu, Xu, lengths, signal), noise)
    alpha = linalg.cho_solve(chol, ys, check_finite=False)
    return GPModel(
        X=Xu, y=ys, y_mean=y_mean, y_std=y_std, lengths=lengths, signal=signal,
        noise=eff_noise, lower=lower, upper=upper, chol=chol, alpha=alpha, degenerate=degenerate,
    )


def gp_predict_many(model: GPModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance (original target units) at rows of ``x``."""
    xu = model.normalize(x)
    ks = matern52(xu, model.X, model.lengths, model.signal)
    mean = ks @ model.alpha
    v = linalg.cho_solve(model.chol, ks.T, check_finite=False)
    var = model.signal - np.sum(ks * v.T, axis=1)
    var = np.maximum(var, 0.0)
    return model.y_mean + model.y_std * mean, var * model.y_std ** 2


def gp_predict(model: GPModel, x) -> tuple[float, float]:
    mean, var = gp_predict_many(model, x)
    return float(mean[0]), float(var[0])


# -------------------------------------------------------------- acquisition

def expected_improvement(mean, variance, best_so_far):
    """EI for maximization; exact ``max(mean - best, 0)`` where variance is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    delta = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.where(sigma > 0, delta / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = delta * stats.norm.cdf(u) + sigma * stats.norm.pdf(u)
    ei = np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(delta, 0.0))
    return float(ei) if ei.ndim == 0 else ei


def propose(model: GPModel, best: float, dim: int, seed: int) -> np.ndarray:
    """Maximize EI over Sobol candidates, then polish the best few with L-BFGS-B."""
    cand = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(seed)).random(N_CANDIDATES)
    mean, var = gp_predict_many(model, cand)
    ei = expected_improvement(mean, var, best)
    order = np.argsort(-ei, kind="stable")
    best_x, best_ei = cand[order[0]], float(ei[order[0]])

    def neg_ei(u):
        m, v = gp_predict_many(model, u[None])
        return -float(expected_improvement(m, v, best)[0])

    for i in order[:N_REFINE]:
        res = optimize.minimize(neg_ei, cand[i], method="L-BFGS-B", bounds=[(0.0, 1.0)] * dim)
        if -res.fun > best_ei:
            best_x, best_ei = np.clip(res.x, 0.0, 1.0), float(-res.fun)
    return best_x


# ------------------------------------------------------------ optimization

@dataclass(frozen=True)
class TrialRecord:
    params: dict[str, float]
    objective: float
    iteration: int

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.objective)

    def detector_params(self) -> DetectorParams:
        return DetectorParams(h=self.params["h"], T=self.params["T"], d=self.params["d"])


def optimize_detector(
    objective: Callable[[dict[str, float]], float],
    space: SearchSpace = DEFAULT_SPACE,
    budget: int = 60,
    seed: int = 0,
    n_initial: int | None = None,
) -> tuple[TrialRecord, list[TrialRecord]]:
    """Maximize ``objective`` over ``space`` with ``budget`` evaluations.

    A Latin hypercube of ``min(10, budget // 3)`` points (or ``n_initial``)
    seeds the GP. Non-finite objective values are recorded as ``-inf``
    failures; the surrogate sees them as the worst finite value observed.
    """
    if budget < 5:
        raise ParameterError(f"budget must be >= 5, got {budget}")
    n0 = min(10, budget // 3) if n_initial is None else int(n_initial)
    if not 1 <= n0 <= budget:
        raise ParameterError(f"initial design size {n0} outside [1, budget]")

    history: list[TrialRecord] = []

    def evaluate(point):
        try:
            val = float(objective(dict(point)))
        except (ArithmeticError, ValueError) as exc:
            log.warning("objective failed at %s: %s", point, exc)
            val = float("-inf")
        if not math.isfinite(val):
            val = float("-inf")
        history.append(TrialRecord(params=dict(point), objective=val, iteration=len(history)))

    for point in latin_hypercube(n0, space, seed):
        evaluate(point)

    rng = np.random.default_rng(seed)
    while len(history) < budget:
        U = np.array([space.to_unit(t.params) for t in history])
        ys = np.array([t.objective for t in history])
        finite = np.isfinite(ys)
        if finite.any():
            ys = np.where(finite, ys, ys[finite].min())
        else:
            ys = np.zeros_like(ys)
        step_seed = int(rng.integers(2**31))
        if len(np.unique(U, axis=0)) < 2:
            u = rng.uniform(size=len(space))
        else:
            model = gp_fit(U, ys, seed=step_seed)
            u = propose(model, float(ys.max()), len(space), step_seed)
        evaluate(space.from_unit(u))
        log.debug("iteration %d: %s -> %.4f", len(history) - 1, history[-1].params, history[-1].objective)

    best = max(history, key=lambda t: (t.objective, -t.iteration))
    return best, history


def grid_search(objective: Callable[[dict[str, float]], float], space: SearchSpace, n: int = 10) -> tuple[TrialRecord, list[TrialRecord]]:
    """Exhaustive search over an n-per-dimension grid in unit-cube coordinates."""
    axis = np.linspace(0.0, 1.0, n)
    mesh = np.stack(np.meshgrid(*[axis] * len(space), indexing="ij"), axis=-1).reshape(-1, len(space))
    history = [TrialRecord(space.from_unit(u), float(objective(space.from_unit(u))), i) for i, u in enumerate(mesh)]
    best = max(history, key=lambda t: (t.objective, -t.iteration))
    return best, history
