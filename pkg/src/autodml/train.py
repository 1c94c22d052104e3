"""Minibatch first-order training under regression and Riesz losses."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .exceptions import DegenerateWeightsError, DivergenceError
from .problems import ProblemSpec, ResidualSpec, numeric_gateaux_weights, v_rho_eval

MIN_WEIGHT_MASS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    early_stop: tuple | None = None  # (validation fraction, patience)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}; use 'sgd' or 'adam'")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.early_stop is not None:
            frac, patience = self.early_stop
            if not 0 < frac < 1 or patience < 1:
                raise ValueError("early_stop needs 0 < fraction < 1 and patience >= 1")


@dataclass(frozen=True)
class LossSpec:
    """Which objective to minimize.

    ``regression``: the family's loss whose first-order condition is the
    residual orthogonality condition. ``riesz``: ``-2 D_j(w, alpha) -
    v_rho(w) alpha(x)^2`` where ``D_j`` is ``m(w, alpha)`` for a linear
    functional and the Gateaux derivative at the fitted regressions otherwise.
    """

    kind: str
    residual: ResidualSpec
    problem: ProblemSpec | None = None
    j: int = 0
    gammas: tuple = ()
    gateaux_mode: str = "auto"
    gateaux_step: float = 1e-4

    @classmethod
    def regression(cls, residual: ResidualSpec) -> "LossSpec":
        return cls("regression", residual)

    @classmethod
    def riesz(cls, problem: ProblemSpec, gammas=(), j: int = 0, gateaux_mode="auto",
              gateaux_step=1e-4) -> "LossSpec":
        if not 0 <= j < problem.J:
            raise IndexError(f"regression index {j} out of range for J={problem.J}")
        gammas = tuple(gammas) if gammas is not None else ()
        return cls("riesz", problem.residuals[j], problem, j, gammas, gateaux_mode,
                   gateaux_step)

    @property
    def x_cols(self):
        return self.residual.x

    def prepare(self, ds: Dataset, rows) -> "_Objective":
        rows = np.asarray(rows)
        if rows.size == 0:
            raise ValueError("no training rows")
        w = ds.take(rows)
        X = w.block(self.residual.x)
        if self.kind == "regression":
            fam = self.residual.family
            target = w.col(self.residual.d if fam == "ipw" else self.residual.y)
            return _RegressionObjective(fam, X, target)
        if self.kind != "riesz":
            raise ValueError(f"unknown loss kind {self.kind!r}")
        return self._prepare_riesz(w, X)

    def _prepare_riesz(self, w, X):
        problem, j = self.problem, self.j
        res = self.residual
        if res.family == "glm_logistic" or not problem.functional.linear \
                or self.gateaux_mode == "numeric":
            if len(self.gammas) != problem.J:
                raise ValueError("fitted regressions are required for this Riesz loss")
        g = self.gammas[j].predict(X) if res.family == "glm_logistic" else None
        v = v_rho_eval(res, w, g if g is not None else np.zeros(w.n))
        mass = float(np.mean(-v))
        if mass < MIN_WEIGHT_MASS:
            raise DegenerateWeightsError(
                f"mean(-v_rho) = {mass:.3g} over the training rows; the Riesz loss is degenerate")
        points = problem.eval_points(w, j)
        if self.gateaux_mode == "numeric":
            values = problem.values(w, self.gammas)
            weights = numeric_gateaux_weights(problem, w, values, j, self.gateaux_step)
        elif problem.functional.linear:
            weights = problem.linear_weights(w)
        else:
            weights = problem.gateaux_weights(w, problem.values(w, self.gammas), j)
        return _RieszObjective(X, v, points, weights)


class _RegressionObjective:
    def __init__(self, family, X, target):
        self.family, self.X, self.t = family, X, np.asarray(target, dtype=float)
        self.n = X.shape[0]

    def per_sample(self, f, idx=None):
        X, t = (self.X, self.t) if idx is None else (self.X[idx], self.t[idx])
        return self._loss(f.predict(X), t)

    def _loss(self, g, t):
        if self.family == "linear":
            return 0.5 * (t - g) ** 2
        if self.family == "ipw":
            return -2.0 * g + t * g * g
        return np.logaddexp(0.0, g) - t * g

    def _dloss(self, g, t):
        if self.family == "linear":
            return g - t
        if self.family == "ipw":
            return -2.0 + 2.0 * t * g
        return 1.0 / (1.0 + np.exp(-g)) - t

    def value_and_grad(self, f, idx=None):
        X, t = (self.X, self.t) if idx is None else (self.X[idx], self.t[idx])
        g, cache = f.forward(X)
        nb = X.shape[0]
        return float(np.mean(self._loss(g, t))), f.backward(cache, self._dloss(g, t) / nb)


class _RieszObjective:
    def __init__(self, X, v, points, weights):
        self.X, self.v = X, np.asarray(v, dtype=float)
        self.points = list(points)
        self.weights = [np.asarray(c, dtype=float) for c in weights]
        self.n = X.shape[0]

    def _stack(self, idx):
        if idx is None:
            return np.vstack([self.X, *self.points]), self.v, self.weights
        return (np.vstack([self.X[idx], *(P[idx] for P in self.points)]), self.v[idx],
                [c[idx] for c in self.weights])

    def per_sample(self, f, idx=None):
        stacked, v, weights = self._stack(idx)
        out = f.predict(stacked)
        nb = v.shape[0]
        a = out[:nb]
        loss = -v * a * a
        for k, c in enumerate(weights):
            loss = loss - 2.0 * c * out[(k + 1) * nb:(k + 2) * nb]
        return loss

    def value_and_grad(self, f, idx=None):
        stacked, v, weights = self._stack(idx)
        out, cache = f.forward(stacked)
        nb = v.shape[0]
        a = out[:nb]
        loss = -v * a * a
        upstream = [-2.0 * v * a / nb]
        for k, c in enumerate(weights):
            loss = loss - 2.0 * c * out[(k + 1) * nb:(k + 2) * nb]
            upstream.append(-2.0 * c / nb)
        return float(np.mean(loss)), f.backward(cache, np.concatenate(upstream))


@dataclass
class TrainTrace:
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def record(self, epoch, loss, grad_norm):
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.grad_norms.append(grad_norm)

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def best_loss(self):
        return self.losses[self.epochs.index(self.best_epoch)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "grad_norm"])
            for row in zip(self.epochs, self.losses, self.grad_norms):
                writer.writerow([row[0], repr(row[1]), repr(row[2])])


def empirical_loss(function, loss: LossSpec, ds: Dataset, rows) -> float:
    """Mean per-sample loss of ``function`` over ``rows``."""
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ValueError("empirical loss over an empty row set")
    return float(np.mean(loss.prepare(ds, rows).per_sample(function)))


class _Adam:
    def __init__(self, size, cfg):
        self.cfg = cfg
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        return params - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


class _SGD:
    def __init__(self, size, cfg):
        self.cfg = cfg

    def step(self, params, grad):
        return params - self.cfg.learning_rate * grad


def train(function, loss: LossSpec, ds: Dataset, rows, cfg: TrainConfig = TrainConfig()):
    """Minimize ``loss`` over ``rows`` starting from ``function``.

    Returns ``(trained, trace)`` where ``trained`` carries the parameters with
    the lowest epoch-end objective seen (on the validation split when early
    stopping is enabled), which may be the starting point.
    """
    # overflow is caught below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(function, loss, ds, rows, cfg)


def _train(function, loss, ds, rows, cfg):
    rows = np.asarray(rows)
    rng = np.random.default_rng(cfg.seed)
    fit_rows, val_rows = rows, None
    if cfg.early_stop is not None:
        frac, _ = cfg.early_stop
        perm = rng.permutation(rows.size)
        n_val = max(1, int(round(frac * rows.size)))
        val_rows, fit_rows = rows[perm[:n_val]], rows[perm[n_val:]]
    objective = loss.prepare(ds, fit_rows)
    monitor = objective if val_rows is None else loss.prepare(ds, val_rows)
    wd = cfg.weight_decay

    def full(params):
        f = function.with_params(params)
        value, grad = objective.value_and_grad(f)
        if wd:
            value += 0.5 * wd * float(params @ params)
            grad = grad + wd * params
        if monitor is objective:
            return value, value, grad
        score = float(np.mean(monitor.per_sample(f))) + (0.5 * wd * float(params @ params))
        return value, score, grad

    params = function.params.copy()
    value, score, grad = full(params)
    if not np.isfinite(value):
        raise DivergenceError("initial loss is not finite")
    trace = TrainTrace()
    trace.record(0, value, float(np.linalg.norm(grad)))
    best_params, best_score = params, score
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(params.size, cfg)
    n = objective.n
    bs = min(cfg.batch_size, n)
    since_best = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            idx = None if bs == n else order[start:start + bs]
            try:
                f = function.with_params(params)
            except ValueError as err:
                raise DivergenceError(f"parameters became non-finite at epoch {epoch}") from err
            batch_loss, g = objective.value_and_grad(f, idx)
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"minibatch loss became non-finite at epoch {epoch}")
            if wd:
                g = g + wd * params
            params = opt.step(params, g)
        try:
            value, score, grad = full(params)
        except ValueError as err:
            raise DivergenceError(f"parameters became non-finite at epoch {epoch}") from err
        if not np.isfinite(value):
            raise DivergenceError(f"empirical loss became non-finite at epoch {epoch}")
        trace.record(epoch, value, float(np.linalg.norm(grad)))
        if score < best_score:
            best_params, best_score = params, score
            trace.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop is not None and since_best >= cfg.early_stop[1]:
                trace.stopped_early = True
                break
    return function.with_params(best_params.copy()), trace
