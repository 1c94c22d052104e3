"""Residual families, target functionals and their derivatives.

A functional ``m(w, gamma)`` is represented through the points at which it
evaluates each regression: for row ``i`` and regression ``j`` there are
``K_j`` input vectors ``P_jk(w_i)`` and ``m`` is a known function of the
values ``gamma_j(P_jk(w_i))``. Linear functionals are then
``sum_k c_k(w) gamma(P_k(w))``, and a Gateaux derivative in direction
``alpha_j`` is ``sum_k G_jk(w) alpha_j(P_jk(w))`` with ``G_jk`` the partial
derivative of ``m`` in the ``k``-th value. This covers every built-in kind
without symbolic machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, DensitySpec
from .exceptions import SchemaError
from .funcspace import ShiftedFunction

FAMILIES = ("linear", "ipw", "glm_logistic")
KINDS = ("avg_derivative", "ate", "ipw_mean", "plugin_linear", "multi_product")


@dataclass(frozen=True)
class ResidualSpec:
    """One generalized regression: its residual family and bindings.

    ``x`` lists the regressor columns, ``y`` the outcome (linear and
    glm_logistic) and ``d`` the indicator (ipw).
    """

    family: str
    x: tuple
    y: str | None = None
    d: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown residual family {self.family!r}; expected {FAMILIES}")
        object.__setattr__(self, "x", tuple(self.x))
        if not self.x:
            raise ValueError("regressor block must be non-empty")
        if self.family in ("linear", "glm_logistic") and self.y is None:
            raise ValueError(f"{self.family} residual needs an outcome column y")
        if self.family == "ipw" and self.d is None:
            raise ValueError("ipw residual needs an indicator column d")

    @property
    def affine(self) -> bool:
        return self.family in ("linear", "ipw")

    def to_dict(self):
        out = {"family": self.family, "x": list(self.x)}
        if self.y is not None:
            out["y"] = self.y
        if self.d is not None:
            out["d"] = self.d
        return out


def rho_eval(spec: ResidualSpec, w: Dataset, g) -> np.ndarray:
    """Residual ``rho(w, gamma)`` given ``g = gamma(x)`` for each row of ``w``."""
    g = np.asarray(g, dtype=float)
    if spec.family == "linear":
        return w.col(spec.y) - g
    if spec.family == "ipw":
        return 1.0 - w.col(spec.d) * g
    return w.col(spec.y) - expit(g)


def v_rho_eval(spec: ResidualSpec, w: Dataset, g) -> np.ndarray:
    """Derivative of ``rho(w, g + a)`` in ``a`` at ``a = 0``."""
    g = np.asarray(g, dtype=float)
    if spec.family == "linear":
        return np.full(w.n, -1.0)
    if spec.family == "ipw":
        return -w.col(spec.d).astype(float)
    p = expit(g)
    return -p * (1.0 - p)


@dataclass(frozen=True)
class LinearTerm:
    """One term ``weight(w) * gamma(x')`` of a plug-in linear functional.

    ``x'`` is the row's regressor vector after applying ``set`` (column ->
    value) and then ``shift`` (column -> added amount). ``weight`` is a
    number, a column name, or a callable ``Dataset -> array``.
    """

    weight: float | str | Callable = 1.0
    set: Mapping[str, float] = field(default_factory=dict)
    shift: Mapping[str, float] = field(default_factory=dict)

    def weights(self, w: Dataset) -> np.ndarray:
        if callable(self.weight):
            return np.asarray(self.weight(w), dtype=float).reshape(w.n)
        if isinstance(self.weight, str):
            return w.col(self.weight).astype(float)
        return np.full(w.n, float(self.weight))

    def points(self, w: Dataset, x_cols) -> np.ndarray:
        X = w.block(x_cols).copy()
        for col, value in self.set.items():
            X[:, _pos(x_cols, col)] = value
        for col, delta in self.shift.items():
            X[:, _pos(x_cols, col)] += delta
        return X

    def to_dict(self):
        if callable(self.weight):
            raise TypeError("callable weights cannot be serialized")
        return {"weight": self.weight, "set": dict(self.set), "shift": dict(self.shift)}


def _pos(x_cols, col):
    try:
        return list(x_cols).index(col)
    except ValueError:
        raise SchemaError(f"column {col!r} is not in the regressor block {list(x_cols)}") from None


@dataclass(frozen=True)
class FunctionalSpec:
    """The target functional ``m(w, gamma)``.

    Bindings by kind:

    - ``ate``: ``treatment`` (a column of the regressor block).
    - ``ipw_mean``: ``indicator`` and ``aux`` (the outcome seen when the
      indicator is 1).
    - ``avg_derivative``: ``treatment``, ``draw`` (simulated column) and
      ``density`` (the law of the draw).
    - ``plugin_linear``: ``terms``, a list of :class:`LinearTerm`; an empty
      list is the zero functional.
    - ``multi_product``: no bindings; ``gamma_1(x_1) * gamma_2(x_2)``.
    """

    kind: str
    treatment: str | None = None
    indicator: str | None = None
    aux: str | None = None
    draw: str | None = None
    density: DensitySpec | None = None
    terms: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}; expected {KINDS}")
        object.__setattr__(self, "terms", tuple(
            t if isinstance(t, LinearTerm) else LinearTerm(**t) for t in self.terms))
        if isinstance(self.density, Mapping):
            object.__setattr__(self, "density", DensitySpec.from_dict(self.density))
        missing = {
            "ate": ["treatment"],
            "ipw_mean": ["indicator", "aux"],
            "avg_derivative": ["treatment", "draw", "density"],
        }.get(self.kind, [])
        missing = [b for b in missing if getattr(self, b) is None]
        if missing:
            raise ValueError(f"functional {self.kind!r} needs bindings {missing}")
        if self.kind == "avg_derivative" and self.density.kind != "gaussian":
            raise ValueError(
                "avg_derivative needs a smooth draw density; a uniform density has zero "
                "score on its support")

    @property
    def linear(self) -> bool:
        return self.kind != "multi_product"

    def to_dict(self):
        out = {"kind": self.kind}
        for name in ("treatment", "indicator", "aux", "draw"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.density is not None:
            out["density"] = self.density.to_dict()
        if self.kind == "plugin_linear":
            out["terms"] = [t.to_dict() for t in self.terms]
        return out


class ProblemSpec:
    """``J`` residual specs plus a functional; optional oracle bundle.

    The oracle bundle is only read by verification code, never by learners.
    """

    def __init__(self, residuals: Sequence[ResidualSpec], functional: FunctionalSpec,
                 oracles=None):
        self.residuals = tuple(residuals)
        self.functional = functional
        self._oracles = oracles
        if not self.residuals:
            raise ValueError("at least one regression is required")
        if functional.kind == "multi_product" and self.J != 2:
            raise ValueError("multi_product requires exactly two regressions")
        if functional.kind != "multi_product" and self.J != 1:
            raise ValueError(f"{functional.kind} is defined for a single regression")
        if functional.treatment is not None and functional.treatment not in self.residuals[0].x:
            raise SchemaError(
                f"treatment column {functional.treatment!r} must belong to the regressor block")

    @property
    def J(self) -> int:
        return len(self.residuals)

    @property
    def oracles(self):
        return self._oracles

    def with_oracles(self, oracles) -> "ProblemSpec":
        return ProblemSpec(self.residuals, self.functional, oracles)

    def to_dict(self):
        return {"residuals": [r.to_dict() for r in self.residuals],
                "functional": self.functional.to_dict()}

    @classmethod
    def from_dict(cls, doc) -> "ProblemSpec":
        residuals = [ResidualSpec(r["family"], tuple(r["x"]), r.get("y"), r.get("d"))
                     for r in doc["residuals"]]
        return cls(residuals, FunctionalSpec(**doc["functional"]))

    def validate(self, ds: Dataset) -> None:
        """Raise :class:`SchemaError` if any binding is absent from ``ds``."""
        names = set()
        for r in self.residuals:
            names.update(r.x)
            names.update(c for c in (r.y, r.d) if c is not None)
        f = self.functional
        names.update(c for c in (f.indicator, f.aux, f.draw) if c is not None)
        for t in f.terms:
            if isinstance(t.weight, str):
                names.add(t.weight)
        missing = sorted(n for n in names if n not in ds.columns)
        if missing:
            raise SchemaError(f"problem references columns missing from the data: {missing}")

    # -- evaluation points ---------------------------------------------------

    def regressors(self, w: Dataset, j: int) -> np.ndarray:
        return w.block(self.residuals[j].x)

    def eval_points(self, w: Dataset, j: int) -> list[np.ndarray]:
        """Input arrays at which ``m`` evaluates regression ``j``."""
        f, x_cols = self.functional, self.residuals[j].x
        if f.kind == "ate":
            return [LinearTerm(set={f.treatment: 1.0}).points(w, x_cols),
                    LinearTerm(set={f.treatment: 0.0}).points(w, x_cols)]
        if f.kind == "avg_derivative":
            X = w.block(x_cols).copy()
            X[:, _pos(x_cols, f.treatment)] = w.col(f.draw)
            return [X]
        if f.kind == "plugin_linear":
            return [t.points(w, x_cols) for t in f.terms]
        return [w.block(x_cols)]

    def linear_weights(self, w: Dataset) -> list[np.ndarray]:
        """Coefficients ``c_k(w)`` of a linear functional, aligned with ``eval_points``."""
        f = self.functional
        if not f.linear:
            raise TypeError(f"{f.kind} is not linear in gamma")
        if f.kind == "ate":
            return [np.ones(w.n), -np.ones(w.n)]
        if f.kind == "ipw_mean":
            return [w.col(f.indicator) * w.col(f.aux)]
        if f.kind == "avg_derivative":
            return [f.density.score(w.col(f.draw))]
        return [t.weights(w) for t in f.terms]

    def combine(self, w: Dataset, values: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
        """``m`` from the regression values at the evaluation points."""
        if self.functional.kind == "multi_product":
            return values[0][0] * values[1][0]
        out = np.zeros(w.n)
        for c, v in zip(self.linear_weights(w), values[0]):
            out = out + c * v
        return out

    def gateaux_weights(self, w: Dataset, values, j: int) -> list[np.ndarray]:
        """Analytic ``G_jk(w)``: partials of ``m`` in each value of regression ``j``."""
        if self.functional.kind == "multi_product":
            return [values[1 - j][0].copy()]
        return self.linear_weights(w)

    def values(self, w: Dataset, gammas) -> list[list[np.ndarray]]:
        return [[g.predict(P) for P in self.eval_points(w, j)] for j, g in enumerate(gammas)]


def m_eval(problem: ProblemSpec, w: Dataset, gammas) -> np.ndarray:
    """``m(W_i, gamma)`` for each row of ``w``."""
    gammas = list(gammas)
    if len(gammas) != problem.J:
        raise ValueError(f"expected {problem.J} regression functions, got {len(gammas)}")
    return problem.combine(w, problem.values(w, gammas))


def numeric_gateaux_weights(problem: ProblemSpec, w: Dataset, values, j: int,
                            step: float = 1e-4) -> list[np.ndarray]:
    """Central-difference partials of ``m`` in each value of regression ``j``."""
    if not step > 0:
        raise ValueError("step must be positive")
    out = []
    for k in range(len(values[j])):
        up = [list(v) for v in values]
        down = [list(v) for v in values]
        up[j][k] = values[j][k] + step
        down[j][k] = values[j][k] - step
        out.append((problem.combine(w, up) - problem.combine(w, down)) / (2 * step))
    return out


def gateaux(problem: ProblemSpec, w: Dataset, gamma_hat, j: int, alpha_j, step: float = 1e-4,
            mode: str = "auto") -> np.ndarray:
    """Directional derivative of ``m`` at ``gamma_hat`` along ``alpha_j`` in component ``j``.

    ``mode="auto"`` uses the analytic partials (every built-in kind is
    linear in each single regression); ``mode="numeric"`` forms the central
    difference ``[m(gamma + step e_j alpha) - m(gamma - step e_j alpha)] / (2 step)``.
    """
    gamma_hat = list(gamma_hat)
    if not 0 <= j < problem.J:
        raise IndexError(f"regression index {j} out of range for J={problem.J}")
    if mode == "numeric":
        if not step > 0:
            raise ValueError("step must be positive")
        plus = list(gamma_hat)
        minus = list(gamma_hat)
        plus[j] = ShiftedFunction(gamma_hat[j], alpha_j, step)
        minus[j] = ShiftedFunction(gamma_hat[j], alpha_j, -step)
        return (m_eval(problem, w, plus) - m_eval(problem, w, minus)) / (2 * step)
    if mode != "auto":
        raise ValueError(f"unknown gateaux mode {mode!r}")
    values = problem.values(w, gamma_hat)
    weights = problem.gateaux_weights(w, values, j)
    out = np.zeros(w.n)
    for c, P in zip(weights, problem.eval_points(w, j)):
        out = out + c * alpha_j.predict(P)
    return out


def oracle_vm(kind: str, points, **nuisances) -> np.ndarray:
    """Riesz representer ``v_m`` tabulated at regressor ``points``.

    - ``ate``: ``points`` are ``(d, z...)`` rows; needs ``propensity`` (array
      of ``pi0(z)`` per point).
    - ``ipw_mean``: needs ``P`` and ``ubar`` per point.
    - ``avg_derivative``: ``points`` are ``(d, z...)`` rows; needs
      ``cond_density`` (``f(d|z)`` per point) and ``density``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if kind == "ate":
        pi = np.asarray(nuisances["propensity"], dtype=float)
        if np.any((pi <= 0) | (pi >= 1)):
            raise ValueError("propensity score must lie strictly inside (0, 1)")
        d = points[:, 0]
        return d / pi - (1 - d) / (1 - pi)
    if kind == "ipw_mean":
        P = np.asarray(nuisances["P"], dtype=float)
        if np.any((P <= 0) | (P > 1)):
            raise ValueError("P(x) must lie in (0, 1]")
        return P * np.asarray(nuisances["ubar"], dtype=float)
    if kind == "avg_derivative":
        density = nuisances["density"]
        f = np.asarray(nuisances["cond_density"], dtype=float)
        if np.any(f <= 0):
            raise ValueError("conditional density must be positive")
        d = points[:, 0]
        return density.pdf(d) * density.score(d) / f
    raise ValueError(f"no closed-form representer for kind {kind!r}")
