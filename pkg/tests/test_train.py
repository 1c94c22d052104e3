import numpy as np
import pytest

from autodml.data import Dataset
from autodml.exceptions import DegenerateWeightsError, DivergenceError
from autodml.funcspace import DictionaryFunction, constant_function, init_mlp, monomial_basis
from autodml.problems import FunctionalSpec, ProblemSpec, ResidualSpec
from autodml.sim import ipw_dgp
from autodml.train import LossSpec, TrainConfig, TrainTrace, empirical_loss, train

FULL_SGD = dict(optimizer="sgd", batch_size=10**6)


def ipw_problem():
    return ProblemSpec([ResidualSpec("ipw", ("x",), d="d")],
                       FunctionalSpec("ipw_mean", indicator="d", aux="u"))


def riesz_normal_equations(f0, problem, ds):
    """Closed-form minimizer of the dictionary Riesz loss: ``H c = r``."""
    res = problem.residuals[0]
    B = f0.features(ds.block(res.x))
    v = -ds.col(res.d)
    H = (B * -v[:, None]).T @ B / ds.n
    r = sum(c[:, None] * f0.features(P)
            for c, P in zip(problem.linear_weights(ds), problem.eval_points(ds, 0))).mean(axis=0)
    return np.linalg.solve(H, r)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(batch_size=0),
                                        dict(beta1=1.0), dict(optimizer="lbfgs"),
                                        dict(early_stop=(1.5, 3)), dict(weight_decay=-1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestRegression:
    def test_linear_least_squares(self):
        x = np.linspace(0, 1, 101)
        ds = Dataset(np.column_stack([x, 2 + x]), ["x", "y"])
        loss = LossSpec.regression(ResidualSpec("linear", ("x",), y="y"))
        f0 = DictionaryFunction(1, monomial_basis(1, 1))
        f, trace = train(f0, loss, ds, np.arange(ds.n),
                         TrainConfig(epochs=2000, learning_rate=0.5, **FULL_SGD))
        np.testing.assert_allclose(f.coef, [2.0, 1.0], atol=1e-6)
        assert trace.best_loss <= trace.initial_loss

    def test_ipw_regression_recovers_inverse_probability(self):
        ds = ipw_dgp().sample(4000, seed=1)
        loss = LossSpec.regression(ResidualSpec("ipw", ("x",), d="d"))
        f0 = DictionaryFunction(1, [("indicator", (0.0,)), ("indicator", (1.0,))])
        f, _ = train(f0, loss, ds, np.arange(ds.n),
                     TrainConfig(epochs=300, learning_rate=0.5, **FULL_SGD))
        x, d = ds.col("x"), ds.col("d")
        expected = [1 / d[x == 0].mean(), 1 / d[x == 1].mean()]
        np.testing.assert_allclose(f.coef, expected, rtol=1e-8)

    def test_glm_gradient_is_minus_residual_times_jacobian(self):
        rng = np.random.default_rng(0)
        n = 40
        X = rng.normal(size=(n, 2))
        y = (rng.random(n) < 0.4).astype(float)
        ds = Dataset(np.column_stack([X, y]), ["a", "b", "y"])
        res = ResidualSpec("glm_logistic", ("a", "b"), y="y")
        f = init_mlp(2, 2, 5, seed=3)
        f = f.with_params(f.params + 0.05 * rng.normal(size=f.n_params))
        objective = LossSpec.regression(res).prepare(ds, np.arange(n))
        _, grad = objective.value_and_grad(f)
        rho = y - 1 / (1 + np.exp(-f.predict(X)))
        np.testing.assert_allclose(grad, f.grad_params(X, -rho / n), rtol=1e-12, atol=1e-15)
        h = 1e-6
        fd = np.empty(f.n_params)
        for k in range(f.n_params):
            e = np.zeros(f.n_params)
            e[k] = h
            fd[k] = (objective.value_and_grad(f.with_params(f.params + e))[0]
                     - objective.value_and_grad(f.with_params(f.params - e))[0]) / (2 * h)
        scale = np.maximum(np.abs(fd), 1e-3)
        assert np.max(np.abs(grad - fd) / scale) < 1e-4


class TestRiesz:
    def test_ipw_dictionary_matches_subsample_means(self):
        ds = ipw_dgp().sample(3000, seed=2)
        problem = ipw_problem()
        f0 = DictionaryFunction(1, [("indicator", (0.0,)), ("indicator", (1.0,))])
        f, _ = train(f0, LossSpec.riesz(problem), ds, np.arange(ds.n),
                     TrainConfig(epochs=300, learning_rate=1.0, **FULL_SGD))
        x, d, u = ds.col("x"), ds.col("d"), ds.col("u")
        expected = [u[(x == k) & (d == 1)].mean() for k in (0, 1)]
        np.testing.assert_allclose(f.coef, expected, rtol=1e-8)

    def test_monomial_dictionary_matches_normal_equations(self):
        ds = ipw_dgp().sample(2000, seed=5)
        problem = ipw_problem()
        f0 = DictionaryFunction(1, monomial_basis(1, 1))
        f, _ = train(f0, LossSpec.riesz(problem), ds, np.arange(ds.n),
                     TrainConfig(epochs=3000, learning_rate=1.0, **FULL_SGD))
        exact = riesz_normal_equations(f0, problem, ds)
        np.testing.assert_allclose(f.coef, exact, rtol=1e-4)

    def test_empirical_loss_single_row(self):
        ds = Dataset([[0.0, 1.0, 2.0]], ["x", "d", "u"])
        value = empirical_loss(constant_function(3.0, 1), LossSpec.riesz(ipw_problem()), ds, [0])
        assert value == -3.0

    def test_zero_alpha_has_zero_loss(self):
        ds = ipw_dgp().sample(50, seed=0)
        value = empirical_loss(constant_function(0.0, 1), LossSpec.riesz(ipw_problem()), ds,
                               np.arange(50))
        assert value == 0.0

    def test_degenerate_weights(self):
        ds = Dataset(np.column_stack([np.arange(10) % 2, np.zeros(10), np.ones(10)]),
                     ["x", "d", "u"])
        with pytest.raises(DegenerateWeightsError):
            train(constant_function(0.0, 1), LossSpec.riesz(ipw_problem()), ds, np.arange(10))

    def test_glm_riesz_needs_fitted_regression(self):
        problem = ProblemSpec([ResidualSpec("glm_logistic", ("d", "z"), y="y")],
                              FunctionalSpec("ate", treatment="d"))
        ds = Dataset(np.ones((4, 3)), ["d", "z", "y"])
        with pytest.raises(ValueError, match="fitted"):
            LossSpec.riesz(problem).prepare(ds, np.arange(4))


class TestTraining:
    def setup_method(self):
        self.ds = ipw_dgp().sample(500, seed=3)
        self.loss = LossSpec.riesz(ipw_problem())

    def test_zero_epochs_returns_initial(self):
        f0 = init_mlp(1, 2, 4, seed=1)
        f, trace = train(f0, self.loss, self.ds, np.arange(500), TrainConfig(epochs=0))
        np.testing.assert_array_equal(f.params, f0.params)
        assert trace.epochs == [0]

    def test_deterministic(self):
        f0 = init_mlp(1, 2, 4, seed=1)
        cfg = TrainConfig(epochs=5, batch_size=32, learning_rate=1e-2, seed=9)
        a, _ = train(f0, self.loss, self.ds, np.arange(500), cfg)
        b, _ = train(f0, self.loss, self.ds, np.arange(500), cfg)
        np.testing.assert_array_equal(a.params, b.params)

    def test_best_iterate_never_worse_than_start(self):
        f0 = init_mlp(1, 2, 4, seed=1)
        f, trace = train(f0, self.loss, self.ds, np.arange(500),
                         TrainConfig(epochs=10, batch_size=8, learning_rate=0.5, seed=1))
        rows = np.arange(500)
        assert empirical_loss(f, self.loss, self.ds, rows) <= \
            empirical_loss(f0, self.loss, self.ds, rows)
        assert trace.best_loss == min(trace.losses)

    def test_divergence(self):
        loss = LossSpec.regression(ResidualSpec("linear", ("x",), y="y"))
        ds = Dataset(np.column_stack([np.linspace(0, 100, 50), np.ones(50)]), ["x", "y"])
        with pytest.raises(DivergenceError):
            train(DictionaryFunction(1, monomial_basis(1, 2)), loss, ds, np.arange(50),
                  TrainConfig(epochs=200, learning_rate=10.0, optimizer="sgd", batch_size=50))

    def test_early_stopping(self):
        f0 = init_mlp(1, 2, 4, seed=1)
        _, trace = train(f0, self.loss, self.ds, np.arange(500),
                         TrainConfig(epochs=500, learning_rate=0.05, batch_size=16,
                                     early_stop=(0.2, 3), seed=0))
        assert trace.stopped_early and len(trace.epochs) < 501

    def test_weight_decay_shrinks(self):
        f0 = DictionaryFunction(1, [("indicator", (0.0,)), ("indicator", (1.0,))])
        cfg = dict(epochs=300, learning_rate=0.5, **FULL_SGD)
        plain, _ = train(f0, self.loss, self.ds, np.arange(500), TrainConfig(**cfg))
        ridge, _ = train(f0, self.loss, self.ds, np.arange(500),
                         TrainConfig(weight_decay=0.5, **cfg))
        assert np.all(np.abs(ridge.coef) < np.abs(plain.coef))

    def test_trace_csv(self, tmp_path):
        trace = TrainTrace()
        trace.record(0, 1.5, 0.25)
        trace.record(1, 1.0, 0.125)
        trace.to_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines() == [
            "epoch,loss,grad_norm", "0,1.5,0.25", "1,1.0,0.125"]

    def test_empty_rows(self):
        with pytest.raises(ValueError):
            empirical_loss(constant_function(0.0, 1), self.loss, self.ds, [])
