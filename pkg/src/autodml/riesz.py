"""Automatic learning of the debiasing function.

The learners below only see the functional (through ``m`` or its Gateaux
derivative), the residual family and the data. They never consult an oracle
or a closed form for the debiasing function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .learners import FunctionLearner
from .problems import ProblemSpec, v_rho_eval
from .train import LossSpec


@dataclass(frozen=True)
class AlphaLearnerConfig:
    """Function class plus training settings for the debiasing learner.

    ``gateaux_mode`` is ``"auto"`` (analytic partials) or ``"numeric"``
    (central differences with ``gateaux_step``).
    """

    learner: FunctionLearner
    gateaux_step: float = 1e-4
    gateaux_mode: str = "auto"

    def __post_init__(self):
        if not self.gateaux_step > 0:
            raise ValueError("gateaux_step must be positive")
        if self.gateaux_mode not in ("auto", "numeric"):
            raise ValueError(f"unknown gateaux mode {self.gateaux_mode!r}")


def _as_config(cfg) -> AlphaLearnerConfig:
    return cfg if isinstance(cfg, AlphaLearnerConfig) else AlphaLearnerConfig(cfg)


def learn_alpha_single(ds: Dataset, train_rows, problem: ProblemSpec, gamma_hat,
                       cfg, return_trace: bool = False):
    """Minimize the sample Riesz loss ``mean(-2 m(W, a) - v_rho(W) a(X)^2)``.

    ``gamma_hat`` is only used to evaluate the residual derivative for the
    logistic family and may be ``None`` otherwise.
    """
    if problem.J != 1:
        raise ValueError("learn_alpha_single needs a single regression; use learn_alpha_multi")
    cfg = _as_config(cfg)
    gammas = () if gamma_hat is None else (gamma_hat,)
    loss = LossSpec.riesz(problem, gammas, 0, cfg.gateaux_mode, cfg.gateaux_step)
    alpha, trace = cfg.learner.fit_loss(loss, ds, train_rows)
    return (alpha, trace) if return_trace else alpha


def learn_alpha_multi(ds: Dataset, train_rows, problem: ProblemSpec, gamma_hats, j: int,
                      cfg, return_trace: bool = False):
    """Debiasing function for regression ``j``, with ``m`` replaced by its Gateaux derivative."""
    if not 0 <= j < problem.J:
        raise IndexError(f"regression index {j} out of range for J={problem.J}")
    gamma_hats = list(gamma_hats) if gamma_hats is not None else []
    if len(gamma_hats) != problem.J:
        raise ValueError(f"expected {problem.J} fitted regressions, got {len(gamma_hats)}")
    cfg = _as_config(cfg)
    loss = LossSpec.riesz(problem, gamma_hats, j, cfg.gateaux_mode, cfg.gateaux_step)
    alpha, trace = cfg.learner.fit_loss(loss, ds, train_rows)
    return (alpha, trace) if return_trace else alpha


def vrho_hat(problem: ProblemSpec, j: int, gamma_hat, w: Dataset) -> np.ndarray:
    """Plug-in residual derivative for regression ``j`` at ``gamma_hat``."""
    res = problem.residuals[j]
    if res.family == "glm_logistic":
        g = gamma_hat.predict(w.block(res.x))
    else:
        g = np.zeros(w.n)
    return v_rho_eval(res, w, g)
