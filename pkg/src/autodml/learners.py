"""Estimator-style learner specifications.

A learner bundles a function class with its training hyperparameters. It
follows the scikit-learn conventions (``get_params``/``set_params``,
``clone``), so the cross-fitting code clones one learner per fold and
regression. Used on its own, each learner is a least-squares regressor
with ``fit(X, y)`` / ``predict(X)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .funcspace import (
    DictionaryFunction,
    init_mlp,
    init_partially_linear,
    monomial_basis,
    support_basis,
)
from .problems import ResidualSpec
from .train import LossSpec, TrainConfig, TrainTrace, train

MAX_SUPPORT_POINTS = 32


class FunctionLearner(BaseEstimator, RegressorMixin):
    """Shared training hyperparameters and the fit/predict surface."""

    def _train_config(self) -> TrainConfig:
        early = self.early_stop
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            optimizer=self.optimizer, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            weight_decay=self.weight_decay,
            early_stop=None if early is None else tuple(early),
            seed=self.random_state)

    def init_function(self, ds: Dataset, rows, x_cols):
        raise NotImplementedError

    def fit_loss(self, loss: LossSpec, ds: Dataset, rows):
        """Train a fresh function on ``loss`` over ``rows``; returns ``(function, trace)``."""
        rows = np.asarray(rows)
        f0 = self.init_function(ds, rows, loss.x_cols)
        return train(f0, loss, ds, rows, self._train_config())

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        cols = [f"x{k}" for k in range(X.shape[1])]
        ds = Dataset(np.column_stack([X, y]), cols + ["y"])
        loss = LossSpec.regression(ResidualSpec("linear", tuple(cols), y="y"))
        self.function_, self.trace_ = self.fit_loss(loss, ds, np.arange(ds.n))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "function_")
        X = check_array(X)
        return self.function_.predict(X)


def _train_params(epochs, batch_size, learning_rate, optimizer, beta1, beta2, eps,
                  weight_decay, early_stop, random_state):
    return dict(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate,
                optimizer=optimizer, beta1=beta1, beta2=beta2, eps=eps,
                weight_decay=weight_decay, early_stop=early_stop, random_state=random_state)


class MLPLearner(FunctionLearner):
    """ReLU MLP of ``depth`` hidden layers with ``width`` units each."""

    def __init__(self, depth=2, width=16, init_scale=1.0, output_clip=None, epochs=200,
                 batch_size=64, learning_rate=1e-3, optimizer="adam", beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0, early_stop=None, random_state=0):
        self.depth = depth
        self.width = width
        self.init_scale = init_scale
        self.output_clip = output_clip
        for k, v in _train_params(epochs, batch_size, learning_rate, optimizer, beta1, beta2,
                                  eps, weight_decay, early_stop, random_state).items():
            setattr(self, k, v)

    def init_function(self, ds, rows, x_cols):
        return init_mlp(len(x_cols), self.depth, self.width, self.random_state,
                        self.init_scale, self.output_clip)


class PartiallyLinearLearner(FunctionLearner):
    """``a(x1) + x2' b(x1)`` with each component an MLP.

    ``x2`` names the regressor columns entering linearly; the remaining
    regressor columns form ``x1``.
    """

    def __init__(self, x2=(), depth=2, width=16, init_scale=1.0, output_clip=None, epochs=200,
                 batch_size=64, learning_rate=1e-3, optimizer="adam", beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0, early_stop=None, random_state=0):
        self.x2 = x2
        self.depth = depth
        self.width = width
        self.init_scale = init_scale
        self.output_clip = output_clip
        for k, v in _train_params(epochs, batch_size, learning_rate, optimizer, beta1, beta2,
                                  eps, weight_decay, early_stop, random_state).items():
            setattr(self, k, v)

    def init_function(self, ds, rows, x_cols):
        x_cols = list(x_cols)
        x2 = [x_cols.index(c) if isinstance(c, str) else int(c) for c in self.x2]
        x1 = [k for k in range(len(x_cols)) if k not in x2]
        if not x1:
            raise ValueError("partially linear class needs at least one x1 column")
        return init_partially_linear(x1, x2, self.depth, self.width, self.random_state,
                                     self.init_scale, self.output_clip)


class DictionaryLearner(FunctionLearner):
    """Linear combination of a fixed dictionary.

    ``basis``: ``"support"`` (indicator of each distinct regressor row seen
    in training), ``"poly"`` (monomials up to ``degree``), ``"auto"``
    (support when the training block has at most 32 distinct rows, poly
    otherwise) or an explicit list of basis descriptors.
    """

    def __init__(self, basis="auto", degree=2, epochs=200, batch_size=64, learning_rate=1e-3,
                 optimizer="adam", beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0,
                 early_stop=None, random_state=0):
        self.basis = basis
        self.degree = degree
        for k, v in _train_params(epochs, batch_size, learning_rate, optimizer, beta1, beta2,
                                  eps, weight_decay, early_stop, random_state).items():
            setattr(self, k, v)

    def init_function(self, ds, rows, x_cols):
        d = len(x_cols)
        basis = self.basis
        if isinstance(basis, str):
            X = ds.block(x_cols)[rows]
            if basis == "auto":
                distinct = np.unique(X, axis=0).shape[0]
                basis = "support" if distinct <= MAX_SUPPORT_POINTS else "poly"
            if basis == "support":
                basis = support_basis(X)
            elif basis == "poly":
                basis = monomial_basis(d, self.degree)
            else:
                raise ValueError(f"unknown basis {self.basis!r}")
        return DictionaryFunction(d, basis)


class FixedLearner(FunctionLearner):
    """Returns ``function`` unchanged; stands in for a known or perfect learner."""

    def __init__(self, function=None, random_state=0):
        self.function = function
        self.random_state = random_state

    def init_function(self, ds, rows, x_cols):
        if self.function is None:
            raise ValueError("FixedLearner needs a function")
        return self.function

    def fit_loss(self, loss, ds, rows):
        return self.function, TrainTrace()


LEARNERS = {"mlp": MLPLearner, "partially_linear": PartiallyLinearLearner,
            "dictionary": DictionaryLearner}


def learner_from_dict(spec) -> FunctionLearner:
    """Build a learner from ``{"type": ..., **params}``."""
    spec = dict(spec)
    kind = spec.pop("type", "mlp")
    if kind not in LEARNERS:
        raise ValueError(f"unknown learner type {kind!r}; expected {sorted(LEARNERS)}")
    if "early_stop" in spec and spec["early_stop"] is not None:
        spec["early_stop"] = tuple(spec["early_stop"])
    return LEARNERS[kind](**spec)
