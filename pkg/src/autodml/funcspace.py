"""Trainable real-valued function classes over a regressor block.

All classes share one calling convention. ``predict(X)`` maps an
``(N, d)`` array to ``(N,)`` outputs. ``forward`` returns the outputs plus a
cache that ``backward`` turns into the gradient, with respect to the flat
parameter vector, of ``sum_i upstream[i] * f(X[i])``. Parameters live in a
single flat ``params`` array so optimizers can treat every class alike.
"""

from __future__ import annotations

import itertools
import json
from typing import Callable, Sequence

import numpy as np

FORMAT_VERSION = 1


def _as_2d(X, input_dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if input_dim > 1 or X.shape[0] == 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != input_dim:
        raise ValueError(f"expected inputs with {input_dim} columns, got shape {np.shape(X)}")
    return X


class ParamFunction:
    """Base class; subclasses define ``input_dim``, ``params`` and the passes."""

    input_dim: int
    params: np.ndarray

    def __call__(self, X):
        return self.predict(X)

    def predict(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def forward(self, X):
        raise NotImplementedError

    def backward(self, cache, upstream) -> np.ndarray:
        raise NotImplementedError

    def with_params(self, params) -> "ParamFunction":
        raise NotImplementedError

    def grad_params(self, X, upstream) -> np.ndarray:
        """Gradient of ``sum_i upstream[i] * f(X[i])`` with respect to ``params``."""
        X = _as_2d(X, self.input_dim)
        upstream = np.broadcast_to(np.asarray(upstream, dtype=float), (X.shape[0],))
        _, cache = self.forward(X)
        return self.backward(cache, upstream)

    @property
    def n_params(self) -> int:
        return self.params.shape[0]


class MlpFunction(ParamFunction):
    """ReLU multilayer perceptron ``d -> K -> ... -> K -> 1``.

    Hidden layers carry a bias, which plays the role of a constant neuron
    feeding the next layer. If ``output_clip`` is set the output is clipped
    to ``[-B, B]`` and saturated outputs contribute zero gradient.
    """

    def __init__(self, input_dim, depth, width, params, output_clip=None, seed=None,
                 init_scale=1.0):
        self.input_dim = int(input_dim)
        self.depth = int(depth)
        self.width = int(width)
        self.output_clip = None if output_clip is None else float(output_clip)
        self.seed = seed
        self.init_scale = float(init_scale)
        self.shapes = self.layer_shapes(self.input_dim, self.depth, self.width)
        size = sum(int(np.prod(s)) for s in self.shapes)
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.shape[0] != size:
            raise ValueError(f"expected {size} parameters, got {params.shape[0]}")
        if not np.all(np.isfinite(params)):
            raise ValueError("MLP weights must be finite")
        self.params = params

    @staticmethod
    def layer_shapes(d, depth, width):
        shapes = []
        fan_in = d
        for _ in range(depth):
            shapes += [(fan_in, width), (width,)]
            fan_in = width
        shapes += [(fan_in, 1), (1,)]
        return shapes

    def layers(self):
        """List of ``(W, b)`` views into ``params``."""
        out, offset = [], 0
        views = []
        for shape in self.shapes:
            size = int(np.prod(shape))
            views.append(self.params[offset:offset + size].reshape(shape))
            offset += size
        for k in range(0, len(views), 2):
            out.append((views[k], views[k + 1]))
        return out

    def with_params(self, params):
        return MlpFunction(self.input_dim, self.depth, self.width, params,
                           self.output_clip, self.seed, self.init_scale)

    def hidden_activations(self, X, layer=0):
        X = _as_2d(X, self.input_dim)
        h = X
        for k, (W, b) in enumerate(self.layers()[:-1]):
            h = np.maximum(h @ W + b, 0.0)
            if k == layer:
                return h
        raise IndexError(layer)

    def forward(self, X):
        X = _as_2d(X, self.input_dim)
        layers = self.layers()
        h = X
        cache = []
        for W, b in layers[:-1]:
            z = h @ W + b
            cache.append((h, z))
            h = np.maximum(z, 0.0)
        W, b = layers[-1]
        out = (h @ W)[:, 0] + b[0]
        active = None
        if self.output_clip is not None:
            B = self.output_clip
            active = (out >= -B) & (out <= B)
            out = np.clip(out, -B, B)
        return out, (cache, h, active)

    def backward(self, cache, upstream):
        hidden, h_last, active = cache
        g = np.asarray(upstream, dtype=float)
        if active is not None:
            g = g * active
        layers = self.layers()
        grads = []
        W, _ = layers[-1]
        grads.append(np.array([g.sum()]))
        grads.append((h_last.T @ g)[:, None])
        dh = np.outer(g, W[:, 0])
        for (W, _), (h, z) in zip(reversed(layers[:-1]), reversed(hidden)):
            dz = dh * (z > 0)
            grads.append(dz.sum(axis=0))
            grads.append(h.T @ dz)
            dh = dz @ W.T
        grads.reverse()
        return np.concatenate([np.ravel(gr) for gr in grads])

    def describe(self):
        return {"type": "mlp", "input_dim": self.input_dim, "depth": self.depth,
                "width": self.width, "seed": self.seed, "init_scale": self.init_scale,
                "output_clip": self.output_clip}


def init_mlp(d, depth, width, seed=0, init_scale=1.0, output_clip=None) -> MlpFunction:
    """Glorot-style uniform weights scaled by ``init_scale``; zero biases."""
    if d < 1 or depth < 1 or width < 1:
        raise ValueError("d, depth and width must all be >= 1")
    if init_scale < 0:
        raise ValueError("init_scale must be non-negative")
    rng = np.random.default_rng(seed)
    chunks = []
    for shape in MlpFunction.layer_shapes(d, depth, width):
        if len(shape) == 2:
            s = init_scale * np.sqrt(6.0 / (shape[0] + shape[1]))
            chunks.append(rng.uniform(-s, s, size=shape).ravel() if s > 0 else np.zeros(shape).ravel())
        else:
            chunks.append(np.zeros(shape))
    return MlpFunction(d, depth, width, np.concatenate(chunks), output_clip, seed, init_scale)


class PartiallyLinearFunction(ParamFunction):
    """``base(x1) + sum_j x2[j] * slopes[j](x1)`` with MLP components.

    ``x1_indices`` and ``x2_indices`` are positions within the regressor
    vector passed to ``predict``.
    """

    def __init__(self, base: MlpFunction, slopes: Sequence[MlpFunction], x1_indices,
                 x2_indices):
        self.base = base
        self.slopes = list(slopes)
        self.x1_indices = tuple(int(i) for i in x1_indices)
        self.x2_indices = tuple(int(i) for i in x2_indices)
        if len(self.slopes) != len(self.x2_indices):
            raise ValueError("need one slope network per x2 column")
        for f in [base, *self.slopes]:
            if f.input_dim != len(self.x1_indices):
                raise ValueError("component networks must take the x1 block as input")
        self.input_dim = len(set(self.x1_indices) | set(self.x2_indices))
        if max(self.x1_indices + self.x2_indices) >= self.input_dim:
            raise ValueError("x1/x2 indices must cover positions 0..d-1")
        self.params = np.concatenate([f.params for f in [base, *self.slopes]])

    def _split(self, params):
        parts, offset = [], 0
        for f in [self.base, *self.slopes]:
            parts.append(params[offset:offset + f.n_params])
            offset += f.n_params
        return parts

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        parts = self._split(params)
        return PartiallyLinearFunction(
            self.base.with_params(parts[0]),
            [s.with_params(p) for s, p in zip(self.slopes, parts[1:])],
            self.x1_indices, self.x2_indices)

    def forward(self, X):
        X = _as_2d(X, self.input_dim)
        x1 = X[:, list(self.x1_indices)]
        x2 = X[:, list(self.x2_indices)]
        out, base_cache = self.base.forward(x1)
        slope_caches = []
        for j, slope in enumerate(self.slopes):
            s, c = slope.forward(x1)
            out = out + x2[:, j] * s
            slope_caches.append(c)
        return out, (base_cache, slope_caches, x2)

    def backward(self, cache, upstream):
        base_cache, slope_caches, x2 = cache
        grads = [self.base.backward(base_cache, upstream)]
        for j, (slope, c) in enumerate(zip(self.slopes, slope_caches)):
            grads.append(slope.backward(c, upstream * x2[:, j]))
        return np.concatenate(grads)

    def describe(self):
        return {"type": "partially_linear", "input_dim": self.input_dim,
                "x1_indices": list(self.x1_indices), "x2_indices": list(self.x2_indices),
                "base": self.base.describe(), "slopes": [s.describe() for s in self.slopes]}


def init_partially_linear(x1_indices, x2_indices, depth, width, seed=0, init_scale=1.0,
                          output_clip=None) -> PartiallyLinearFunction:
    seeds = np.random.SeedSequence(seed).generate_state(len(x2_indices) + 1)
    d1 = len(x1_indices)
    nets = [init_mlp(d1, depth, width, int(s), init_scale, output_clip) for s in seeds]
    return PartiallyLinearFunction(nets[0], nets[1:], x1_indices, x2_indices)


class DictionaryFunction(ParamFunction):
    """Linear combination of fixed features.

    Each basis element is a descriptor: ``("monomial", exponents)`` for
    ``prod_k x_k ** exponents[k]`` or ``("indicator", point)`` for the
    indicator that ``x`` equals ``point`` in every coordinate.
    """

    def __init__(self, input_dim, basis, coef=None):
        self.input_dim = int(input_dim)
        self.basis = [(kind, tuple(float(v) if kind == "indicator" else int(v) for v in arg))
                      for kind, arg in basis]
        for kind, arg in self.basis:
            if kind not in ("monomial", "indicator"):
                raise ValueError(f"unknown basis element {kind!r}")
            if len(arg) != self.input_dim:
                raise ValueError("basis element does not match input_dim")
        coef = np.zeros(len(self.basis)) if coef is None else np.asarray(coef, dtype=float)
        if coef.shape != (len(self.basis),):
            raise ValueError("one coefficient per basis element required")
        self.params = coef.copy()

    @property
    def coef(self):
        return self.params

    def features(self, X) -> np.ndarray:
        X = _as_2d(X, self.input_dim)
        cols = []
        for kind, arg in self.basis:
            if kind == "monomial":
                col = np.ones(X.shape[0])
                for k, e in enumerate(arg):
                    if e:
                        col = col * X[:, k] ** e
            else:
                col = np.all(X == np.asarray(arg), axis=1).astype(float)
            cols.append(col)
        return np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))

    def with_params(self, params):
        return DictionaryFunction(self.input_dim, self.basis, params)

    def forward(self, X):
        F = self.features(X)
        return F @ self.params, F

    def backward(self, cache, upstream):
        return cache.T @ np.asarray(upstream, dtype=float)

    def describe(self):
        return {"type": "dictionary", "input_dim": self.input_dim,
                "basis": [[k, list(a)] for k, a in self.basis]}


def monomial_basis(d: int, degree: int = 2):
    """All monomials in ``d`` variables of total degree at most ``degree``."""
    basis = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), total):
            exps = [0] * d
            for k in combo:
                exps[k] += 1
            basis.append(("monomial", tuple(exps)))
    return basis


def support_basis(points) -> list:
    """One indicator per distinct row of ``points``."""
    points = np.unique(np.asarray(points, dtype=float), axis=0)
    return [("indicator", tuple(p)) for p in points]


def table_function(points, values) -> DictionaryFunction:
    """Function equal to ``values[k]`` at ``points[k]`` and zero elsewhere."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    basis = [("indicator", tuple(p)) for p in points]
    return DictionaryFunction(points.shape[1], basis, np.asarray(values, dtype=float))


class CallableFunction(ParamFunction):
    """Evaluation-only wrapper around a vectorized callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], input_dim: int):
        self.fn = fn
        self.input_dim = int(input_dim)
        self.params = np.zeros(0)

    def forward(self, X):
        X = _as_2d(X, self.input_dim)
        return np.asarray(self.fn(X), dtype=float).reshape(X.shape[0]), None


class ShiftedFunction(ParamFunction):
    """Evaluation-only ``base(x) + tau * direction(x)``."""

    def __init__(self, base, direction, tau):
        self.base, self.direction, self.tau = base, direction, float(tau)
        self.input_dim = base.input_dim
        self.params = np.zeros(0)

    def forward(self, X):
        out = self.base.predict(X)
        if self.tau != 0.0:
            out = out + self.tau * self.direction.predict(X)
        return out, None


def constant_function(value: float, input_dim: int) -> DictionaryFunction:
    return DictionaryFunction(input_dim, [("monomial", (0,) * input_dim)], [value])


def evaluate(f: ParamFunction, x) -> float:
    """Value of ``f`` at a single regressor vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.input_dim,):
        raise ValueError(f"expected a vector of length {f.input_dim}, got shape {x.shape}")
    return float(f.predict(x[None, :])[0])


def grad_params(f: ParamFunction, x, upstream: float = 1.0) -> np.ndarray:
    """Gradient of ``upstream * f(x)`` at a single regressor vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (f.input_dim,):
        raise ValueError(f"expected a vector of length {f.input_dim}, got shape {x.shape}")
    return f.grad_params(x[None, :], [upstream])


def sup_norm(f: ParamFunction, X) -> float:
    values = f.predict(X)
    return float(np.max(np.abs(values))) if values.size else 0.0


# -- serialization -----------------------------------------------------------

def function_to_dict(f: ParamFunction, **tags) -> dict:
    if not hasattr(f, "describe"):
        raise TypeError(f"{type(f).__name__} cannot be serialized")
    doc = {"format": "autodml-function", "version": FORMAT_VERSION, "header": f.describe(),
           "params": [float(v) for v in f.params]}
    if tags:
        doc["tags"] = tags
    return doc


def function_from_dict(doc: dict) -> ParamFunction:
    header = doc["header"]
    params = np.array(doc["params"], dtype=float)
    f = _build(header, params)
    f.tags = dict(doc.get("tags", {}))
    return f


def _build(header, params):
    kind = header["type"]
    if kind == "mlp":
        return MlpFunction(header["input_dim"], header["depth"], header["width"], params,
                           header.get("output_clip"), header.get("seed"),
                           header.get("init_scale", 1.0))
    if kind == "dictionary":
        return DictionaryFunction(header["input_dim"], [(k, a) for k, a in header["basis"]],
                                  params)
    if kind == "partially_linear":
        comps = [header["base"], *header["slopes"]]
        nets, offset = [], 0
        for h in comps:
            size = sum(int(np.prod(s)) for s in
                       MlpFunction.layer_shapes(h["input_dim"], h["depth"], h["width"]))
            nets.append(_build(h, params[offset:offset + size]))
            offset += size
        return PartiallyLinearFunction(nets[0], nets[1:], header["x1_indices"],
                                       header["x2_indices"])
    raise ValueError(f"unknown function type {kind!r}")


def save_function(f: ParamFunction, path, **tags) -> None:
    """Write ``f`` as JSON; float ``repr`` makes the round trip bit-exact."""
    with open(path, "w") as fh:
        json.dump(function_to_dict(f, **tags), fh)


def load_function(path) -> ParamFunction:
    with open(path) as fh:
        return function_from_dict(json.load(fh))
