"""Cross-fitted debiased estimation, inference and structural checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtri
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, FoldPlan, make_folds
from .exceptions import AutoDMLError, FoldError
from .funcspace import ShiftedFunction
from .learners import DictionaryLearner
from .problems import ProblemSpec, m_eval, rho_eval
from .riesz import AlphaLearnerConfig, learn_alpha_multi, learn_alpha_single, vrho_hat
from .train import LossSpec

DEFAULT_THRESHOLDS = {"min_weight_mass": 0.05, "alpha_bound": None,
                      "overlap_low": 0.01, "overlap_high": 0.99}


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic child seed for ``(base, *keys)``."""
    return int(np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(1)[0])


def normal_quantile(level: float) -> float:
    """Two-sided critical value ``z`` with ``P(|Z| <= z) = level``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(ndtri(0.5 + level / 2))


@dataclass
class EstimateReport:
    theta_hat: float
    V_hat: float
    se: float
    ci: tuple
    level: float
    n: int
    L: int
    psi_values: np.ndarray
    per_fold: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat, "V_hat": self.V_hat, "se": self.se,
                "ci": list(self.ci), "level": self.level, "n": self.n, "L": self.L,
                "seeds": self.seeds, "per_fold": self.per_fold,
                "diagnostics": self.diagnostics, "warnings": self.warnings}

    def to_json(self, path, **extra) -> None:
        with open(path, "w") as fh:
            json.dump({**self.to_dict(), **extra}, fh, indent=2, sort_keys=True)

    def psi_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "psi"])
            for i, v in enumerate(self.psi_values):
                writer.writerow([i, repr(float(v))])


def _population(population):
    if isinstance(population, Dataset):
        return population, np.full(population.n, 1.0 / population.n)
    ds, weights = population
    weights = np.asarray(weights, dtype=float)
    return ds, weights / weights.sum()


def psi_eval(problem: ProblemSpec, w: Dataset, gammas, alphas, theta: float) -> np.ndarray:
    """Orthogonal moment ``m(w, g) - theta + sum_j a_j(x_j) rho_j(w, g_j)`` per row."""
    out = m_eval(problem, w, gammas) - theta
    for j, res in enumerate(problem.residuals):
        X = w.block(res.x)
        out = out + alphas[j].predict(X) * rho_eval(res, w, gammas[j].predict(X))
    return out


def _fit_fold(ds, problem, plan, ell, gamma_learners, alpha_cfg, seed):
    rows_g, rows_a = plan.training_rows(ell)
    in_rows = plan.fold(ell)
    # fold exclusion is structural; guard against plan corruption anyway
    if np.intersect1d(in_rows, rows_g).size or np.intersect1d(in_rows, rows_a).size:
        raise AutoDMLError(f"fold {ell} training rows overlap its evaluation rows")
    try:
        gammas = []
        for j, res in enumerate(problem.residuals):
            learner = clone(gamma_learners[j]).set_params(random_state=derive_seed(seed, ell, j, 0))
            g, _ = learner.fit_loss(LossSpec.regression(res), ds, rows_g)
            gammas.append(g)
        alphas = []
        for j in range(problem.J):
            cfg = AlphaLearnerConfig(
                clone(alpha_cfg[j].learner).set_params(random_state=derive_seed(seed, ell, j, 1)),
                alpha_cfg[j].gateaux_step, alpha_cfg[j].gateaux_mode)
            if problem.J == 1:
                alphas.append(learn_alpha_single(ds, rows_a, problem, gammas[0], cfg))
            else:
                alphas.append(learn_alpha_multi(ds, rows_a, problem, gammas, j, cfg))
    except AutoDMLError as err:
        raise FoldError(ell, err) from err
    w = ds.take(in_rows)
    m = m_eval(problem, w, gammas)
    corr = np.zeros(w.n)
    vrho, alpha_vals = [], []
    for j, res in enumerate(problem.residuals):
        X = w.block(res.x)
        a = alphas[j].predict(X)
        corr = corr + a * rho_eval(res, w, gammas[j].predict(X))
        vrho.append(vrho_hat(problem, j, gammas[j], w))
        alpha_vals.append(a)
    return {"fold": ell, "rows": in_rows, "m": m, "corr": corr, "gammas": gammas,
            "alphas": alphas, "vrho": vrho, "alpha_values": alpha_vals}


def _per_j(obj, J, name):
    if isinstance(obj, (list, tuple)):
        if len(obj) != J:
            raise ValueError(f"{name}: expected {J} entries, got {len(obj)}")
        return list(obj)
    return [obj] * J


def crossfit_estimate(ds: Dataset, problem: ProblemSpec, foldplan: FoldPlan, gamma_cfg,
                      alpha_cfg, level: float = 0.95, seed: int = 0, n_jobs=1,
                      thresholds=None, return_folds: bool = False):
    """Cross-fitted estimate with variance, confidence interval and diagnostics.

    ``gamma_cfg``/``alpha_cfg`` are learners (or :class:`AlphaLearnerConfig`
    for the debiasing side), either one shared by all regressions or a list
    of ``J``. Learners are cloned per fold and regression with seeds derived
    from ``seed``.
    """
    problem.validate(ds)
    if foldplan.n != ds.n:
        raise ValueError(f"fold plan covers {foldplan.n} rows, data has {ds.n}")
    if ds.n < 2 * foldplan.L:
        raise ValueError(f"need n >= 2L (n={ds.n}, L={foldplan.L})")
    z = normal_quantile(level)
    gamma_learners = _per_j(gamma_cfg, problem.J, "gamma_cfg")
    alpha_cfgs = [c if isinstance(c, AlphaLearnerConfig) else AlphaLearnerConfig(c)
                  for c in _per_j(alpha_cfg, problem.J, "alpha_cfg")]
    jobs = (delayed(_fit_fold)(ds, problem, foldplan, ell, gamma_learners, alpha_cfgs, seed)
            for ell in range(foldplan.L))
    folds = Parallel(n_jobs=n_jobs)(jobs) if n_jobs not in (None, 1) else [
        _fit_fold(ds, problem, foldplan, ell, gamma_learners, alpha_cfgs, seed)
        for ell in range(foldplan.L)]
    folds.sort(key=lambda f: f["fold"])

    n = ds.n
    contrib = np.empty(n)
    for f in folds:
        contrib[f["rows"]] = f["m"] + f["corr"]
    theta = float(contrib.mean())
    psi = contrib - theta
    V = float(np.mean(psi * psi))
    se = float(np.sqrt(V / n))
    per_fold = [{"fold": f["fold"], "n": int(f["rows"].size), "m_mean": float(f["m"].mean()),
                 "correction_mean": float(f["corr"].mean())} for f in folds]
    diagnostics, warnings = _diagnostics(
        problem, [np.concatenate([f["vrho"][j] for f in folds]) for j in range(problem.J)],
        [np.concatenate([f["alpha_values"][j] for f in folds]) for j in range(problem.J)],
        ds.take(np.concatenate([f["rows"] for f in folds])),
        [[f["gammas"][j] for f in folds] for j in range(problem.J)],
        [[f["alphas"][j] for f in folds] for j in range(problem.J)],
        [f["rows"].size for f in folds], thresholds)
    report = EstimateReport(theta, V, se, (theta - z * se, theta + z * se), level, n,
                            foldplan.L, psi, per_fold, diagnostics, warnings,
                            {"seed": int(seed), "fold_seed": int(foldplan.seed)})
    return (report, folds) if return_folds else report


def _diagnostics(problem, vrho, alpha_values, w, gammas, alphas, sizes, thresholds):
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    diag, warnings = {}, []
    for j in range(problem.J):
        suffix = "" if problem.J == 1 else f"_{j + 1}"
        weights = -np.asarray(vrho[j])
        mass = float(weights.mean())
        diag["min_neg_vrho" + suffix] = float(weights.min())
        diag["weight_mass" + suffix] = mass
        sup = float(np.max(np.abs(alpha_values[j])))
        diag["alpha_sup_norm" + suffix] = sup
        if mass < th["min_weight_mass"]:
            warnings.append(f"weight mass below threshold for regression {j + 1}: "
                            f"mean(-v_rho) = {mass:.4g} < {th['min_weight_mass']}")
        if th["alpha_bound"] is not None and sup > th["alpha_bound"]:
            warnings.append(f"debiasing function exceeds bound {th['alpha_bound']}: "
                            f"sup |alpha| = {sup:.4g}")
    overlap = _overlap(problem, w, gammas, alphas, sizes)
    if overlap is not None:
        lo, hi = overlap
        diag["overlap_min"], diag["overlap_max"] = lo, hi
        if lo < th["overlap_low"] or hi > th["overlap_high"]:
            warnings.append(f"estimated overlap [{lo:.4g}, {hi:.4g}] outside "
                            f"[{th['overlap_low']}, {th['overlap_high']}]")
    return diag, warnings


def _overlap(problem, w, gammas, alphas, sizes):
    """Implied P or propensity range, evaluated with each fold's own learners."""
    kind = problem.functional.kind
    res = problem.residuals[0]
    bounds = np.cumsum([0, *sizes])
    implied = []
    for k in range(len(sizes)):
        part = w.take(np.arange(bounds[k], bounds[k + 1]))
        X = part.block(res.x)
        if res.family == "ipw":
            g = gammas[0][k].predict(X)
            implied.append(1.0 / g[g > 0])
        elif kind == "ate":
            X1 = problem.eval_points(part, 0)[0]
            a = alphas[0][k].predict(X1)
            implied.append(1.0 / a[a > 0])
    if not implied:
        return None
    values = np.concatenate(implied)
    if values.size == 0:
        return None
    return float(values.min()), float(values.max())


def assumption_diagnostics(ds: Dataset, problem: ProblemSpec, gamma_hat, alpha_hat,
                           thresholds=None):
    """Diagnostics for a single set of fitted learners evaluated on ``ds``.

    Returns ``(diagnostics, warnings)``: minimum and mean of ``-v_rho``, the
    sup norm of each debiasing function over the sample and, for ipw and ATE
    problems, the range of the implied probability.
    """
    gamma_hat, alpha_hat = list(gamma_hat), list(alpha_hat)
    vrho = [vrho_hat(problem, j, gamma_hat[j], ds) for j in range(problem.J)]
    alpha_values = [alpha_hat[j].predict(ds.block(problem.residuals[j].x))
                    for j in range(problem.J)]
    return _diagnostics(problem, vrho, alpha_values, ds, [[g] for g in gamma_hat],
                        [[a] for a in alpha_hat], [ds.n], thresholds)


def orthogonality_check(problem: ProblemSpec, gamma0, alpha0, delta, tau_grid, population,
                        theta0: float | None = None):
    """Mean of the orthogonal moment as ``gamma`` moves along ``gamma0 + tau delta``.

    ``population`` is a :class:`Dataset` (plain average) or ``(atoms,
    weights)`` for exact enumeration. Returns rows ``(tau, D, D/tau, D/tau^2)``;
    the ratios are ``nan`` at ``tau = 0``.
    """
    w, p = _population(population)
    gamma0, alpha0 = list(gamma0), list(alpha0)
    deltas = _per_j(delta, problem.J, "delta")
    if theta0 is None:
        theta0 = float(p @ m_eval(problem, w, gamma0))
    rows = []
    for tau in tau_grid:
        tau = float(tau)
        moved = [g if dlt is None else ShiftedFunction(g, dlt, tau)
                 for g, dlt in zip(gamma0, deltas)]
        value = float(p @ psi_eval(problem, w, moved, alpha0, theta0))
        if tau == 0.0:
            rows.append((tau, value, float("nan"), float("nan")))
        else:
            rows.append((tau, value, value / tau, value / tau ** 2))
    return rows


def alpha_robustness_check(problem: ProblemSpec, gamma0, alpha, population,
                           theta0: float | None = None) -> float:
    """Mean of the orthogonal moment at the true regressions for an arbitrary ``alpha``."""
    w, p = _population(population)
    gamma0 = list(gamma0)
    alpha = _per_j(alpha, problem.J, "alpha")
    if theta0 is None:
        theta0 = float(p @ m_eval(problem, w, gamma0))
    return float(p @ psi_eval(problem, w, gamma0, alpha, theta0))


class AutoDML(BaseEstimator):
    """Automatic debiased machine learning estimator of ``E[m(W, gamma)]``.

    Parameters
    ----------
    problem : ProblemSpec
        Residual families, regressor blocks and the target functional.
    gamma_learner, alpha_learner : FunctionLearner or list, optional
        Learners for the regressions and for the debiasing functions; one
        shared learner or one per regression. Default: dictionary learners.
    n_folds : int
        Number of cross-fitting folds.
    double_crossfit : bool
        Fit regressions and debiasing functions on disjoint halves of each
        fold's complement.
    level : float
        Confidence level of ``ci_``.
    random_state : int
        Seeds the fold plan and, through derived seeds, every learner.
    n_jobs : int, optional
        Folds to fit in parallel (joblib); results do not depend on it.

    Attributes
    ----------
    theta_, se_, ci_, psi_ : estimate, standard error, interval, moment values.
    report_ : EstimateReport
    gammas_, alphas_ : fitted functions, indexed ``[fold][j]``.
    """

    def __init__(self, problem=None, gamma_learner=None, alpha_learner=None, n_folds=5,
                 double_crossfit=False, level=0.95, random_state=0, n_jobs=None,
                 gateaux_step=1e-4, gateaux_mode="auto", thresholds=None):
        self.problem = problem
        self.gamma_learner = gamma_learner
        self.alpha_learner = alpha_learner
        self.n_folds = n_folds
        self.double_crossfit = double_crossfit
        self.level = level
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.gateaux_step = gateaux_step
        self.gateaux_mode = gateaux_mode
        self.thresholds = thresholds

    def fit(self, X, y=None):
        if self.problem is None:
            raise ValueError("AutoDML needs a problem specification")
        ds = X if isinstance(X, Dataset) else Dataset.from_frame(X)
        J = self.problem.J
        gl = self.gamma_learner if self.gamma_learner is not None else DictionaryLearner()
        al = self.alpha_learner if self.alpha_learner is not None else DictionaryLearner()
        alpha_cfg = [a if isinstance(a, AlphaLearnerConfig)
                     else AlphaLearnerConfig(a, self.gateaux_step, self.gateaux_mode)
                     for a in _per_j(al, J, "alpha_learner")]
        plan = make_folds(ds.n, self.n_folds, self.random_state, self.double_crossfit)
        report, folds = crossfit_estimate(ds, self.problem, plan, gl, alpha_cfg, self.level,
                                          self.random_state, self.n_jobs, self.thresholds,
                                          return_folds=True)
        self.report_ = report
        self.fold_plan_ = plan
        self.theta_, self.se_, self.ci_ = report.theta_hat, report.se, report.ci
        self.psi_ = report.psi_values
        self.gammas_ = [f["gammas"] for f in folds]
        self.alphas_ = [f["alphas"] for f in folds]
        return self

    def summary(self) -> dict:
        check_is_fitted(self, "report_")
        return self.report_.to_dict()

