import numpy as np
import pytest

from autodml.funcspace import (
    CallableFunction,
    DictionaryFunction,
    MlpFunction,
    ShiftedFunction,
    constant_function,
    evaluate,
    grad_params,
    init_mlp,
    init_partially_linear,
    load_function,
    monomial_basis,
    save_function,
    support_basis,
    table_function,
)


def central_difference(f, X, upstream, h=1e-6):
    base = f.params
    out = np.empty(base.size)
    for k in range(base.size):
        step = np.zeros_like(base)
        step[k] = h
        plus = upstream @ f.with_params(base + step).predict(X)
        minus = upstream @ f.with_params(base - step).predict(X)
        out[k] = (plus - minus) / (2 * h)
    return out


class TestMlp:
    def test_shapes_and_count(self):
        f = init_mlp(3, 2, 5, seed=0)
        assert [W.shape for W, _ in f.layers()] == [(3, 5), (5, 5), (5, 1)]
        assert f.n_params == 3 * 5 + 5 + 5 * 5 + 5 + 5 + 1
        assert f.predict(np.zeros((4, 3))).shape == (4,)

    def test_forward_matches_manual(self):
        f = init_mlp(2, 1, 3, seed=1)
        (W1, b1), (W2, b2) = f.layers()
        X = np.array([[0.3, -1.2], [2.0, 0.5]])
        expected = np.maximum(X @ W1 + b1, 0) @ W2[:, 0] + b2[0]
        np.testing.assert_allclose(f.predict(X), expected, rtol=0, atol=1e-15)

    def test_zero_init_scale_gives_zero_function(self):
        f = init_mlp(2, 2, 4, init_scale=0.0)
        np.testing.assert_array_equal(f.params, 0.0)
        np.testing.assert_array_equal(f.predict(np.ones((3, 2))), 0.0)

    def test_init_is_seeded(self):
        np.testing.assert_array_equal(init_mlp(2, 2, 4, seed=3).params,
                                      init_mlp(2, 2, 4, seed=3).params)
        assert not np.array_equal(init_mlp(2, 2, 4, seed=3).params,
                                  init_mlp(2, 2, 4, seed=4).params)

    def test_nonfinite_weights_rejected(self):
        f = init_mlp(1, 1, 2)
        bad = f.params.copy()
        bad[0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            f.with_params(bad)

    def test_wrong_input_width(self):
        with pytest.raises(ValueError, match="2 columns"):
            init_mlp(2, 1, 3).predict(np.zeros((4, 3)))

    @pytest.mark.parametrize("depth,width", [(1, 4), (2, 6), (3, 3)])
    def test_gradient_matches_finite_differences(self, depth, width):
        rng = np.random.default_rng(depth)
        f = init_mlp(3, depth, width, seed=depth)
        f = f.with_params(f.params + 0.1 * rng.normal(size=f.n_params))
        X = rng.normal(size=(7, 3))
        upstream = rng.normal(size=7)
        np.testing.assert_allclose(f.grad_params(X, upstream),
                                   central_difference(f, X, upstream), rtol=1e-5, atol=1e-8)

    def test_relu_derivative_at_zero_is_zero(self):
        f = MlpFunction(1, 1, 1, [1.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(grad_params(f, [0.0]), [0.0, 0.0, 0.0, 1.0])

    def test_clipped_outputs_have_zero_gradient(self):
        f = MlpFunction(1, 1, 1, [1.0, 0.0, 1.0, 0.0], output_clip=2.0)
        np.testing.assert_array_equal(f.predict([[5.0], [1.0]]), [2.0, 1.0])
        np.testing.assert_array_equal(grad_params(f, [5.0]), 0.0)
        assert np.any(grad_params(f, [1.0]) != 0)

    def test_hidden_activations(self):
        f = init_mlp(2, 2, 3, seed=0)
        h = f.hidden_activations(np.ones((2, 2)), layer=1)
        assert h.shape == (2, 3) and np.all(h >= 0)


class TestPartiallyLinear:
    def test_structure(self):
        f = init_partially_linear([0], [1], depth=1, width=4, seed=2)
        X = np.array([[0.5, 0.0], [0.5, 1.0], [0.5, 3.0]])
        out = f.predict(X)
        np.testing.assert_allclose(out[2] - out[0], 3 * (out[1] - out[0]), atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        f = init_partially_linear([0, 2], [1], depth=2, width=3, seed=5)
        # zero initial biases put all-dead rows exactly on a kink
        f = f.with_params(f.params + 0.1 * rng.normal(size=f.n_params))
        X = rng.normal(size=(6, 3))
        up = rng.normal(size=6)
        np.testing.assert_allclose(f.grad_params(X, up), central_difference(f, X, up),
                                   rtol=1e-5, atol=1e-8)


class TestDictionary:
    def test_monomials(self):
        basis = monomial_basis(2, 2)
        assert len(basis) == 6
        f = DictionaryFunction(2, basis, np.arange(6.0))
        x = np.array([2.0, 3.0])
        feats = [1, 2, 3, 4, 6, 9]
        assert evaluate(f, x) == pytest.approx(np.dot(np.arange(6.0), feats))

    def test_table_function(self):
        f = table_function([[0.0], [1.0]], [2.0, 5.0])
        np.testing.assert_array_equal(f.predict([[1.0], [0.0], [0.5]]), [5.0, 2.0, 0.0])

    def test_support_basis_is_unique_rows(self):
        basis = support_basis([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
        assert [p for _, p in basis] == [(0.0, 0.0), (1.0, 0.0)]

    def test_gradient_is_features(self):
        f = DictionaryFunction(1, monomial_basis(1, 3), [1.0, -1.0, 0.5, 2.0])
        np.testing.assert_allclose(grad_params(f, [2.0], 3.0), 3 * np.array([1, 2, 4, 8]))


class TestHelpers:
    def test_shifted_and_callable(self):
        base = CallableFunction(lambda X: X[:, 0] ** 2, 1)
        moved = ShiftedFunction(base, constant_function(1.0, 1), 0.5)
        np.testing.assert_allclose(moved.predict([[2.0]]), [4.5])

    def test_evaluate_checks_shape(self):
        with pytest.raises(ValueError):
            evaluate(init_mlp(2, 1, 2), [1.0, 2.0, 3.0])


class TestSerialization:
    @pytest.mark.parametrize("make", [
        lambda: init_mlp(3, 2, 5, seed=9, output_clip=4.0),
        lambda: init_partially_linear([0], [1, 2], depth=1, width=3, seed=1),
        lambda: DictionaryFunction(2, monomial_basis(2, 2), np.linspace(-1, 1, 6) / 3),
    ])
    def test_round_trip_is_bit_exact(self, tmp_path, make):
        f = make()
        f = f.with_params(f.params + np.pi / 7)
        save_function(f, tmp_path / "f.json", role="alpha", fold=2)
        g = load_function(tmp_path / "f.json")
        np.testing.assert_array_equal(g.params, f.params)
        X = np.random.default_rng(0).normal(size=(10, f.input_dim))
        np.testing.assert_array_equal(g.predict(X), f.predict(X))
        assert g.tags == {"role": "alpha", "fold": 2}
