"""Synthetic data-generating processes with exact oracles, Monte Carlo and sweeps.

Discrete DGPs are enumerated exactly. A Gaussian column enters the
enumeration as the two-point law ``mean +/- sd`` (weights 1/2), which
matches its first three moments; every enumerated quantity here is at most
quadratic in a Gaussian column, so the expectations are exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from sklearn.base import clone

from .data import Dataset, DensitySpec, Schema
from .estimator import derive_seed
from .exceptions import NumericalError
from .funcspace import CallableFunction, table_function
from .problems import FunctionalSpec, ProblemSpec, ResidualSpec, m_eval, oracle_vm, rho_eval
from .riesz import AlphaLearnerConfig, learn_alpha_multi, learn_alpha_single
from .train import LossSpec


@dataclass(frozen=True)
class Law:
    """Conditional law of one generated column, parameterized per support point.

    ``mean`` is the success probability (bernoulli), the mean (gaussian) or
    the value (point). A ``gate`` column multiplies the drawn value.
    """

    column: str
    kind: str
    mean: tuple
    sd: float = 0.0
    gate: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        if self.kind not in ("bernoulli", "gaussian", "point"):
            raise ValueError(f"unknown law {self.kind!r}")
        if self.kind == "bernoulli" and any(not 0 <= p <= 1 for p in self.mean):
            raise ValueError(f"{self.column}: probabilities must lie in [0, 1]")
        if self.sd < 0:
            raise ValueError(f"{self.column}: sd must be non-negative")

    def atoms(self, k):
        mu = self.mean[k]
        if self.kind == "bernoulli":
            return [(0.0, 1.0 - mu), (1.0, mu)]
        if self.kind == "gaussian" and self.sd > 0:
            return [(mu - self.sd, 0.5), (mu + self.sd, 0.5)]
        return [(mu, 1.0)]


@dataclass
class OracleBundle:
    """Population quantities per regression ``j``, as functions and tables."""

    gamma0: list
    alpha0: list
    v_m: list
    v_rho: list
    theta0: float
    tables: list = field(default_factory=list)

    def to_dict(self):
        out = {"theta0": self.theta0}
        if self.tables:
            out["tables"] = [{k: np.asarray(v).tolist() for k, v in t.items()}
                             for t in self.tables]
        return out


class DiscreteDGP:
    """Finite-support design with parametric conditional laws.

    ``design`` columns take the values of the selected ``support`` row
    (drawn with probabilities ``pmf``); each :class:`Law` then generates one
    more column given that row. Every regressor block must consist of
    design columns.
    """

    def __init__(self, name, design, support, pmf, laws, problem: ProblemSpec, roles):
        self.name = name
        self.design = tuple(design)
        self.support = np.atleast_2d(np.asarray(support, dtype=float))
        self.pmf = np.asarray(pmf, dtype=float)
        self.laws = tuple(laws)
        self.problem = problem
        self.schema = Schema(roles)
        if self.support.shape != (self.pmf.size, len(self.design)):
            raise ValueError("support must have one row per pmf entry and one column per design column")
        if np.any(self.pmf < 0) or abs(self.pmf.sum() - 1.0) > 1e-12:
            raise ValueError("pmf must be non-negative and sum to 1")
        for law in self.laws:
            if len(law.mean) != self.pmf.size:
                raise ValueError(f"law for {law.column} needs one parameter per support point")
        for res in problem.residuals:
            if any(c not in self.design for c in res.x):
                raise ValueError("regressor blocks must consist of design columns")

    @property
    def columns(self):
        return self.design + tuple(law.column for law in self.laws)

    def with_problem(self, problem: ProblemSpec) -> "DiscreteDGP":
        return DiscreteDGP(self.name, self.design, self.support, self.pmf, self.laws, problem,
                           self.schema.roles)

    # -- sampling and enumeration -------------------------------------------

    def sample(self, n: int, seed: int = 0) -> Dataset:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        idx = rng.choice(self.pmf.size, size=n, p=self.pmf)
        cols = {c: self.support[idx, i] for i, c in enumerate(self.design)}
        for law in self.laws:
            mean = np.asarray(law.mean)[idx]
            if law.kind == "bernoulli":
                value = (rng.random(n) < mean).astype(float)
            elif law.kind == "gaussian":
                value = mean + law.sd * rng.standard_normal(n)
            else:
                value = mean
            if law.gate is not None:
                value = value * cols[law.gate]
            cols[law.column] = value
        return Dataset(np.column_stack([cols[c] for c in self.columns]), self.columns,
                       self.schema)

    def atoms(self):
        """Enumerated population: ``(Dataset of atoms, probabilities)``."""
        rows, probs = [], []
        for k in range(self.pmf.size):
            partial = [(dict(zip(self.design, self.support[k])), self.pmf[k])]
            for law in self.laws:
                grown = []
                for values, p in partial:
                    for v, q in law.atoms(k):
                        new = dict(values)
                        new[law.column] = v * new[law.gate] if law.gate else v
                        grown.append((new, p * q))
                partial = grown
            for values, p in partial:
                rows.append([values[c] for c in self.columns])
                probs.append(p)
        return Dataset(np.array(rows), self.columns, self.schema), np.array(probs)

    def _expected(self, column):
        """``E[column | support point k]`` for every ``k``."""
        if column in self.design:
            return self.support[:, self.design.index(column)].copy()
        law = next(law for law in self.laws if law.column == column)
        out = np.asarray(law.mean, dtype=float).copy()
        if law.gate is not None:
            out = out * self._expected(law.gate)
        return out

    def block_support(self, j: int):
        """Distinct points of regressor block ``j``, their probabilities and the point map."""
        cols = [self.design.index(c) for c in self.problem.residuals[j].x]
        proj = self.support[:, cols]
        points, inverse = np.unique(proj, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        probs = np.bincount(inverse, weights=self.pmf, minlength=len(points))
        return points, probs, inverse

    def _cond(self, values, j):
        points, probs, inverse = self.block_support(j)
        num = np.bincount(inverse, weights=self.pmf * values, minlength=len(points))
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / probs

    def l2_error(self, f, g, j: int = 0) -> float:
        """``sqrt(E[(f - g)^2])`` over the marginal law of regressor block ``j``."""
        points, probs, _ = self.block_support(j)
        diff = f.predict(points) - g.predict(points)
        return float(np.sqrt(probs @ (diff * diff)))

    # -- oracles -------------------------------------------------------------

    def oracles(self) -> OracleBundle:
        problem = self.problem
        gammas, vrhos, tables = [], [], []
        for j, res in enumerate(problem.residuals):
            points, probs, _ = self.block_support(j)
            if res.family == "ipw":
                P = self._cond(self._expected(res.d), j)
                if np.any(P <= 0):
                    raise ValueError("P(x) = 0 at a support point; the ipw regression is undefined")
                g0, vr = 1.0 / P, -P
            else:
                mu = self._cond(self._expected(res.y), j)
                if res.family == "linear":
                    g0, vr = mu, -np.ones_like(mu)
                else:
                    if np.any((mu <= 0) | (mu >= 1)):
                        raise ValueError("E[Y|x] must lie strictly inside (0, 1)")
                    g0, vr = logit(mu), -mu * (1 - mu)
            gammas.append(g0)
            vrhos.append(vr)
            tables.append({"points": points, "probs": probs, "gamma0": g0, "v_rho": vr})
        gamma_f = [table_function(t["points"], t["gamma0"]) for t in tables]
        vms = self._riesz_representers(tables, gamma_f)
        theta0 = self._theta0(tables, gamma_f, vms)
        alphas = []
        for t, vm in zip(tables, vms):
            t["v_m"] = vm
            t["alpha0"] = vm / (-t["v_rho"])
            alphas.append(table_function(t["points"], t["alpha0"]))
        return OracleBundle(gamma_f, alphas, [table_function(t["points"], t["v_m"]) for t in tables],
                            [table_function(t["points"], t["v_rho"]) for t in tables],
                            float(theta0), tables)

    def _riesz_representers(self, tables, gamma_f):
        f, problem = self.problem.functional, self.problem
        if f.kind == "ate":
            points = tables[0]["points"]
            x = problem.residuals[0].x
            t_pos = x.index(f.treatment)
            others = [k for k in range(len(x)) if k != t_pos]
            treated = self._cond_on(points, others, t_pos, tables[0]["probs"])
            return [oracle_vm("ate", points[:, [t_pos, *others]], propensity=treated)]
        if f.kind == "ipw_mean":
            P = self._cond(self._expected(f.indicator), 0)
            if np.any(P <= 0):
                raise ValueError("P(x) = 0 at a support point")
            ubar = self._cond(self._expected(f.aux), 0) / P
            return [oracle_vm("ipw_mean", tables[0]["points"], P=P, ubar=ubar)]
        if f.kind == "multi_product":
            out = []
            for j in range(2):
                other = 1 - j
                cols = [self.design.index(c) for c in problem.residuals[other].x]
                g_other = gamma_f[other].predict(self.support[:, cols])
                out.append(self._cond(g_other, j))
            return out
        if f.kind == "plugin_linear":
            return [self._enumerated_vm(0, tables[0])]
        raise ValueError(f"no discrete oracle for functional {f.kind!r}")

    @staticmethod
    def _cond_on(points, others, t_pos, probs):
        """``Pr(treatment = 1 | other block columns)`` at each block point."""
        out = np.empty(len(points))
        for i, p in enumerate(points):
            same = np.all(points[:, others] == p[others], axis=1)
            out[i] = probs[same & (points[:, t_pos] == 1)].sum() / probs[same].sum()
        return out

    def _enumerated_vm(self, j, table):
        """``v_m(x) = E[m(W, 1{X = x})] / Pr(X = x)``, by enumeration."""
        atoms, w = self.atoms()
        out = np.empty(len(table["points"]))
        for i, point in enumerate(table["points"]):
            indicator = table_function(point[None, :], [1.0])
            out[i] = w @ m_eval(self.problem, atoms, [indicator]) / table["probs"][i]
        return out

    def _theta0(self, tables, gamma_f, vms):
        f, problem = self.problem.functional, self.problem
        if f.kind == "ate":
            x = problem.residuals[0].x
            cols = [self.design.index(c) for c in x]
            X = self.support[:, cols]
            X1, X0 = X.copy(), X.copy()
            t_pos = x.index(f.treatment)
            X1[:, t_pos], X0[:, t_pos] = 1.0, 0.0
            return self.pmf @ (gamma_f[0].predict(X1) - gamma_f[0].predict(X0))
        if f.kind == "ipw_mean":
            P = self._cond(self._expected(f.indicator), 0)
            ubar = self._cond(self._expected(f.aux), 0) / P
            return tables[0]["probs"] @ (P * ubar * tables[0]["gamma0"])
        if f.kind == "multi_product":
            g = [gamma_f[j].predict(self.support[:, [self.design.index(c) for c in
                                                      problem.residuals[j].x]])
                 for j in range(2)]
            return self.pmf @ (g[0] * g[1])
        atoms, w = self.atoms()
        return w @ m_eval(problem, atoms, gamma_f)


def enumerate_oracles(dgp) -> OracleBundle:
    """Exact population oracles (quadrature for the continuous design)."""
    return dgp.oracles()


def check_oracles(dgp, oracles: OracleBundle | None = None) -> dict:
    """Residuals of the oracle identities, computed by enumeration on the atoms.

    Keys: ``m_theta`` = ``|E[m(W, g0)] - theta0|``; ``riesz_j`` =
    ``|E[v_m g0] - theta0|``; ``orth_j`` = ``|E[a0 rho(W, g0)]|``.
    """
    o = oracles if oracles is not None else dgp.oracles()
    atoms, w = dgp.atoms()
    problem = dgp.problem
    out = {"m_theta": abs(float(w @ m_eval(problem, atoms, o.gamma0)) - o.theta0)}
    for j, res in enumerate(problem.residuals):
        X = atoms.block(res.x)
        g = o.gamma0[j].predict(X)
        out[f"riesz_{j + 1}"] = abs(float(w @ (o.v_m[j].predict(X) * g)) - o.theta0)
        out[f"orth_{j + 1}"] = abs(float(w @ (o.alpha0[j].predict(X) * rho_eval(res, atoms, g))))
    return out


# -- built-in discrete designs ------------------------------------------------

def ipw_dgp(P=(0.5, 0.8), ubar=(1.0, 2.0), px=(0.5, 0.5), sigma=1.0) -> DiscreteDGP:
    """Binary ``x``; ``d ~ Bernoulli(P(x))``; ``u ~ N(ubar(x), sigma)`` observed when ``d = 1``."""
    problem = ProblemSpec([ResidualSpec("ipw", ("x",), d="d")],
                          FunctionalSpec("ipw_mean", indicator="d", aux="u"))
    return DiscreteDGP(
        "ipw", ("x",), [[0.0], [1.0]], px,
        [Law("d", "bernoulli", P), Law("u", "gaussian", ubar, sigma, gate="d")],
        problem, {"regressors": ["x"], "indicator": ["d"], "auxiliary": ["u"]})


def _treatment_design(z_values, z_probs, propensity):
    z_values = np.asarray(z_values, dtype=float)
    z_probs = np.asarray(z_probs, dtype=float)
    pi = np.asarray(propensity(z_values) if callable(propensity) else propensity, dtype=float)
    pi = np.broadcast_to(pi, z_values.shape)
    support, pmf = [], []
    for z, pz, p in zip(z_values, z_probs, pi):
        support += [[0.0, z], [1.0, z]]
        pmf += [pz * (1 - p), pz * p]
    return np.array(support), np.array(pmf)


def _logistic_propensity(z):
    return expit(-0.5 + 0.5 * np.asarray(z))


def ate_dgp(z_values=(0.0, 1.0, 2.0), z_probs=None, propensity=_logistic_propensity,
            outcome=(0.0, 1.0, 0.5, 0.25), sigma=1.0) -> DiscreteDGP:
    """Discrete-``z`` treatment design with ``E[y | d, z] = b0 + bd d + bz z + bdz d z``."""
    z_probs = np.full(len(z_values), 1 / len(z_values)) if z_probs is None else z_probs
    support, pmf = _treatment_design(z_values, z_probs, propensity)
    b0, bd, bz, bdz = outcome
    mean = b0 + bd * support[:, 0] + bz * support[:, 1] + bdz * support[:, 0] * support[:, 1]
    problem = ProblemSpec([ResidualSpec("linear", ("d", "z"), y="y")],
                          FunctionalSpec("ate", treatment="d"))
    return DiscreteDGP("ate", ("d", "z"), support, pmf, [Law("y", "gaussian", mean, sigma)],
                       problem, {"regressors": ["d", "z"], "outcome": ["y"]})


def glm_dgp(z_values=(0.0, 1.0, 2.0), z_probs=None, propensity=_logistic_propensity,
            index=(-0.5, 1.0, 0.4, 0.0)) -> DiscreteDGP:
    """Binary outcome with ``logit P(y = 1 | d, z)`` linear in ``(d, z, d z)``; target is the ATE on the index."""
    z_probs = np.full(len(z_values), 1 / len(z_values)) if z_probs is None else z_probs
    support, pmf = _treatment_design(z_values, z_probs, propensity)
    b0, bd, bz, bdz = index
    eta = b0 + bd * support[:, 0] + bz * support[:, 1] + bdz * support[:, 0] * support[:, 1]
    problem = ProblemSpec([ResidualSpec("glm_logistic", ("d", "z"), y="y")],
                          FunctionalSpec("ate", treatment="d"))
    return DiscreteDGP("glm", ("d", "z"), support, pmf, [Law("y", "bernoulli", expit(eta))],
                       problem, {"regressors": ["d", "z"], "outcome": ["y"]})


def multi_product_dgp(pmf=((0.3, 0.2), (0.1, 0.4)), a=(1.0, 2.0), b=(0.5, 1.5),
                      sigma=1.0) -> DiscreteDGP:
    """Two regressions on a 2x2 support; target ``E[g1(x1) g2(x2)]``."""
    pmf = np.asarray(pmf, dtype=float)
    support = np.array([[i, k] for i in range(2) for k in range(2)], dtype=float)
    flat = np.array([pmf[int(i), int(k)] for i, k in support])
    mean1 = np.asarray(a)[support[:, 0].astype(int)]
    mean2 = np.asarray(b)[support[:, 1].astype(int)]
    problem = ProblemSpec([ResidualSpec("linear", ("x1",), y="y1"),
                           ResidualSpec("linear", ("x2",), y="y2")],
                          FunctionalSpec("multi_product"))
    return DiscreteDGP("multi_product", ("x1", "x2"), support, flat,
                       [Law("y1", "gaussian", mean1, sigma), Law("y2", "gaussian", mean2, sigma)],
                       problem, {"regressors": ["x1", "x2"], "outcome": ["y1", "y2"]})


# -- continuous average-derivative design --------------------------------------

class GaussianDesignDGP:
    """``z ~ N(0, 1)``, ``d = a z + N(0, 1)``, ``draw ~ omega`` independent.

    The regression is ``g0(d, z) = c0 + cd d + cz z + cdz d z + cdd d^2``,
    with ``y = g0 + N(0, sigma^2)`` (linear family) or ``y ~
    Bernoulli(expit(g0))`` (glm_logistic). The target is the
    ``omega``-weighted average derivative of ``g0`` in ``d``. Oracles use
    64-node Gauss-Hermite quadrature.
    """

    name = "avg_derivative"
    NODES = 64

    def __init__(self, family="linear", coef=(0.2, 0.8, -0.4, 0.0, 0.0), a=0.5,
                 omega=DensitySpec("gaussian", 0.0, 0.8), sigma=1.0):
        self.family = family
        self.coef = tuple(float(c) for c in coef)
        self.a = float(a)
        self.omega = omega if isinstance(omega, DensitySpec) else DensitySpec.from_dict(omega)
        self.sigma = float(sigma)
        self.problem = ProblemSpec(
            [ResidualSpec(family, ("d", "z"), y="y")],
            FunctionalSpec("avg_derivative", treatment="d", draw="draw", density=self.omega))
        self.schema = Schema({"regressors": ["d", "z"], "outcome": ["y"], "draw": ["draw"]})
        self.columns = ("d", "z", "draw", "y")

    def gamma0(self, d, z):
        c0, cd, cz, cdz, cdd = self.coef
        return c0 + cd * d + cz * z + cdz * d * z + cdd * d * d

    def dgamma0(self, d, z):
        _, cd, _, cdz, cdd = self.coef
        return cd + cdz * z + 2 * cdd * d

    def cond_density(self, d, z):
        e = d - self.a * z
        return np.exp(-0.5 * e * e) / np.sqrt(2 * np.pi)

    def sample(self, n: int, seed: int = 0) -> Dataset:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(n)
        d = self.a * z + rng.standard_normal(n)
        draw = self.omega.sample(rng, n)
        g = self.gamma0(d, z)
        if self.family == "linear":
            y = g + self.sigma * rng.standard_normal(n)
        else:
            y = (rng.random(n) < expit(g)).astype(float)
        return Dataset(np.column_stack([d, z, draw, y]), self.columns, self.schema)

    def _nodes(self):
        x, w = np.polynomial.hermite_e.hermegauss(self.NODES)
        return x, w / np.sqrt(2 * np.pi)

    def _vrho(self, d, z):
        if self.family == "linear":
            return -np.ones_like(np.asarray(d, dtype=float))
        p = expit(self.gamma0(d, z))
        return -p * (1 - p)

    def v_m(self, d, z):
        return self.omega.pdf(d) * self.omega.score(d) / self.cond_density(d, z)

    def l2_error(self, f, g, j: int = 0) -> float:
        """``sqrt(E[(f - g)^2])`` over the law of ``(d, z)``, by quadrature."""
        x, w = self._nodes()
        z = np.repeat(x, x.size)
        d = self.a * z + np.tile(x, x.size)
        X = np.column_stack([d, z])
        diff = f.predict(X) - g.predict(X)
        return float(np.sqrt(np.outer(w, w).ravel() @ (diff * diff)))

    def quadrature(self):
        """``theta0`` three ways: derivative form, score form, and ``E[v_m g0]``."""
        x, w = self._nodes()
        z = x[:, None]
        u = self.omega.mean + self.omega.sd * x[None, :]
        W = w[:, None] * w[None, :]
        derivative = float(np.sum(W * self.dgamma0(u, z)))
        score = float(np.sum(W * self.omega.score(u) * self.gamma0(u, z)))
        d = self.a * z + x[None, :]
        riesz = float(np.sum(W * self.v_m(d, z) * self.gamma0(d, z)))
        return derivative, score, riesz

    def oracles(self) -> OracleBundle:
        derivative, _, _ = self.quadrature()
        g0 = CallableFunction(lambda X: self.gamma0(X[:, 0], X[:, 1]), 2)
        vm = CallableFunction(lambda X: self.v_m(X[:, 0], X[:, 1]), 2)
        vr = CallableFunction(lambda X: self._vrho(X[:, 0], X[:, 1]), 2)
        a0 = CallableFunction(
            lambda X: self.v_m(X[:, 0], X[:, 1]) / -self._vrho(X[:, 0], X[:, 1]), 2)
        return OracleBundle([g0], [a0], [vm], [vr], derivative)


BUILTIN_DGPS = {
    "ipw": ipw_dgp,
    "ate": ate_dgp,
    "glm": glm_dgp,
    "multi_product": multi_product_dgp,
    "avg_derivative": GaussianDesignDGP,
}


def make_dgp(name: str, **params):
    try:
        factory = BUILTIN_DGPS[name]
    except KeyError:
        raise ValueError(f"unknown dgp {name!r}; expected one of {sorted(BUILTIN_DGPS)}") from None
    return factory(**params)


def sample(dgp, n: int, seed: int = 0) -> Dataset:
    return dgp.sample(n, seed)


# -- Monte Carlo ----------------------------------------------------------------

REPLICATION_FIELDS = ("rep", "seed", "theta_hat", "se", "ci_lo", "ci_hi", "covered")


def _one_replicate(dgp, n, estimator, seed, theta0):
    ds = dgp.sample(n, seed)
    est = clone(estimator).set_params(random_state=seed, n_jobs=None).fit(ds)
    lo, hi = est.ci_
    return {"seed": seed, "theta_hat": est.theta_, "se": est.se_, "ci_lo": lo, "ci_hi": hi,
            "covered": bool(lo <= theta0 <= hi)}


def monte_carlo(dgp, n: int, reps: int, estimator, master_seed: int = 0, n_jobs=None,
                min_success: float = 0.9):
    """Repeat sample-and-estimate ``reps`` times with seeds ``master_seed + r``.

    ``estimator`` is an unfitted :class:`~autodml.estimator.AutoDML`; its
    ``random_state`` is replaced per replicate. Replicates failing with a
    numerical error are recorded and excluded. Returns ``(table, summary)``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    theta0 = dgp.oracles().theta0

    def run(r):
        seed = master_seed + r
        try:
            row = _one_replicate(dgp, n, estimator, seed, theta0)
        except NumericalError as err:
            row = {"seed": seed, "theta_hat": float("nan"), "se": float("nan"),
                   "ci_lo": float("nan"), "ci_hi": float("nan"), "covered": False,
                   "error": f"{type(err).__name__}: {err}"}
        row["rep"] = r
        return row

    if n_jobs in (None, 1):
        table = [run(r) for r in range(reps)]
    else:
        from joblib import Parallel, delayed

        table = Parallel(n_jobs=n_jobs)(delayed(run)(r) for r in range(reps))
    table.sort(key=lambda row: row["rep"])
    return table, summarize(table, theta0, n, estimator.level, min_success)


def summarize(table, theta0, n, level, min_success=0.9) -> dict:
    ok = [row for row in table if "error" not in row]
    if len(ok) < min_success * len(table):
        raise NumericalError(f"only {len(ok)} of {len(table)} replicates succeeded")
    theta = np.array([row["theta_hat"] for row in ok])
    se = np.array([row["se"] for row in ok])
    covered = np.array([row["covered"] for row in ok], dtype=float)
    err = theta - theta0
    sd = float(np.std(theta, ddof=1)) if theta.size > 1 else 0.0
    mean_se = float(se.mean())
    return {"n": int(n), "reps": len(table), "successes": len(ok),
            "failures": len(table) - len(ok), "theta0": float(theta0), "level": float(level),
            "mean_theta": float(theta.mean()), "bias": float(err.mean()),
            "rmse": float(np.sqrt(np.mean(err * err))), "mean_se": mean_se, "sd_theta": sd,
            "se_ratio": mean_se / sd if sd > 0 else None,
            "coverage": float(covered.mean())}


def write_replications(table, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLICATION_FIELDS)
        for row in table:
            writer.writerow([row["rep"], row["seed"], repr(row["theta_hat"]), repr(row["se"]),
                             repr(row["ci_lo"]), repr(row["ci_hi"]), int(row["covered"])])


def write_summary(summary, path, **extra) -> None:
    with open(path, "w") as fh:
        json.dump({**summary, **extra}, fh, indent=2, sort_keys=True)


# -- convergence sweep ---------------------------------------------------------

def convergence_sweep(dgp, n_grid, seeds, gamma_learner, alpha_learner, j: int = 0):
    """L2 errors of the fitted regression and debiasing function against the oracle.

    Each ``(n, seed)`` fits on a full fresh sample. Returns ``(raw, table)``:
    one row per run and one row per ``n`` with medians across seeds.
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be increasing")
    o = dgp.oracles()
    problem = dgp.problem
    alpha_cfg = alpha_learner if isinstance(alpha_learner, AlphaLearnerConfig) \
        else AlphaLearnerConfig(alpha_learner)
    raw = []
    for n in n_grid:
        for seed in seeds:
            ds = dgp.sample(n, seed)
            rows = np.arange(ds.n)
            gammas = []
            for jj, res in enumerate(problem.residuals):
                learner = clone(gamma_learner).set_params(random_state=derive_seed(seed, n, jj, 0))
                gammas.append(learner.fit_loss(LossSpec.regression(res), ds, rows)[0])
            cfg = AlphaLearnerConfig(
                clone(alpha_cfg.learner).set_params(random_state=derive_seed(seed, n, j, 1)),
                alpha_cfg.gateaux_step, alpha_cfg.gateaux_mode)
            if problem.J == 1:
                alpha = learn_alpha_single(ds, rows, problem, gammas[0], cfg)
            else:
                alpha = learn_alpha_multi(ds, rows, problem, gammas, j, cfg)
            raw.append({"n": n, "seed": seed,
                        "alpha_error": dgp.l2_error(alpha, o.alpha0[j], j),
                        "gamma_error": dgp.l2_error(gammas[j], o.gamma0[j], j)})
    table = []
    for n in n_grid:
        errs = [r for r in raw if r["n"] == n]
        table.append({"n": n, "seeds": len(errs),
                      "median_alpha_error": float(np.median([r["alpha_error"] for r in errs])),
                      "median_gamma_error": float(np.median([r["gamma_error"] for r in errs]))})
    return raw, table


def write_sweep(table, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "seeds", "median_alpha_error", "median_gamma_error"])
        for row in table:
            writer.writerow([row["n"], row["seeds"], repr(row["median_alpha_error"]),
                             repr(row["median_gamma_error"])])
