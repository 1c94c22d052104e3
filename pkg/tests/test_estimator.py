import json

import numpy as np
import pytest
from sklearn.base import clone

from autodml.data import Dataset, make_folds
from autodml.estimator import (
    AutoDML,
    alpha_robustness_check,
    assumption_diagnostics,
    crossfit_estimate,
    derive_seed,
    normal_quantile,
    orthogonality_check,
    psi_eval,
)
from autodml.exceptions import FoldError
from autodml.funcspace import constant_function, init_mlp, table_function
from autodml.learners import DictionaryLearner, FixedLearner, MLPLearner
from autodml.sim import GaussianDesignDGP, glm_dgp, ipw_dgp, multi_product_dgp


def support_learner(**kw):
    params = dict(basis="support", optimizer="sgd", batch_size=10**6, learning_rate=1.0,
                  epochs=100)
    params.update(kw)
    return DictionaryLearner(**params)


class TestHelpers:
    def test_normal_quantile(self):
        assert normal_quantile(0.95) == pytest.approx(1.959963984540054, abs=1e-12)
        assert normal_quantile(0.5) == pytest.approx(0.6744897501960817, abs=1e-12)
        with pytest.raises(ValueError):
            normal_quantile(1.0)

    def test_derive_seed(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)


class TestCrossfit:
    def setup_method(self):
        self.dgp = ipw_dgp()
        self.ds = self.dgp.sample(4000, seed=7)

    def fit(self, **kw):
        params = dict(gamma_learner=support_learner(), alpha_learner=support_learner(),
                      random_state=2)
        params.update(kw)
        return AutoDML(self.dgp.problem, **params).fit(self.ds)

    def test_report_invariants(self):
        est = self.fit()
        r = est.report_
        assert abs(r.psi_values.mean()) < 1e-10
        assert r.V_hat == np.mean(r.psi_values ** 2)
        assert r.se == np.sqrt(r.V_hat / r.n)
        lo, hi = r.ci
        assert hi - r.theta_hat == pytest.approx(r.theta_hat - lo, abs=1e-14)
        assert hi - r.theta_hat == pytest.approx(normal_quantile(0.95) * r.se, rel=1e-14)
        assert abs(r.theta_hat - 1.5) < 4 * r.se

    def test_per_fold_means_recombine(self):
        est = self.fit()
        folds = est.report_.per_fold
        total = sum(f["n"] * (f["m_mean"] + f["correction_mean"]) for f in folds)
        assert total / self.ds.n == pytest.approx(est.theta_, abs=1e-12)
        assert [f["fold"] for f in folds] == list(range(5))

    def test_parallel_matches_sequential(self):
        a = self.fit(n_jobs=1)
        b = self.fit(n_jobs=2)
        np.testing.assert_array_equal(a.psi_, b.psi_)
        assert a.theta_ == b.theta_

    def test_double_crossfit(self):
        est = self.fit(double_crossfit=True)
        assert abs(est.theta_ - 1.5) < 4 * est.se_

    def test_wrong_gamma_is_doubly_robust(self):
        est = self.fit(gamma_learner=FixedLearner(constant_function(0.0, 1)))
        assert abs(est.theta_ - 1.5) < 4 * est.se_

    def test_needs_two_rows_per_fold(self):
        ds = self.dgp.sample(9, seed=0)
        with pytest.raises(ValueError, match="2L"):
            crossfit_estimate(ds, self.dgp.problem, make_folds(9, 5), support_learner(),
                              support_learner())

    def test_fold_error_carries_fold_id(self):
        bad = MLPLearner(width=4, learning_rate=1e12, optimizer="sgd", epochs=50,
                         batch_size=10**6, init_scale=10.0)
        with pytest.raises(FoldError) as info:
            self.fit(gamma_learner=bad)
        assert info.value.fold == 0

    def test_report_serialization(self, tmp_path):
        r = self.fit().report_
        r.to_json(tmp_path / "r.json", note="x")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["theta_hat"] == r.theta_hat and doc["note"] == "x"
        assert set(doc) >= {"theta_hat", "V_hat", "se", "ci", "level", "n", "L", "seeds",
                            "diagnostics"}
        r.psi_to_csv(tmp_path / "psi.csv")
        lines = (tmp_path / "psi.csv").read_text().splitlines()
        assert len(lines) == self.ds.n + 1
        assert float(lines[5].split(",")[1]) == r.psi_values[4]

    def test_estimator_api(self):
        est = AutoDML(self.dgp.problem, n_folds=3)
        assert clone(est).get_params()["n_folds"] == 3
        with pytest.raises(ValueError):
            AutoDML().fit(self.ds)


class TestDegenerate:
    def test_p_one_gives_sample_mean_exactly(self):
        dgp = ipw_dgp(P=(1.0, 1.0))
        ds = dgp.sample(1000, seed=0)
        est = AutoDML(dgp.problem, FixedLearner(constant_function(1.0, 1)),
                      support_learner()).fit(ds)
        u = ds.col("u")
        assert est.theta_ == u.mean()
        assert est.report_.V_hat == np.mean((u - u.mean()) ** 2)


class TestOtherDesigns:
    def test_multi_product(self):
        dgp = multi_product_dgp()
        est = AutoDML(dgp.problem, support_learner(), support_learner(),
                      random_state=1).fit(dgp.sample(4000, seed=3))
        assert abs(est.theta_ - dgp.oracles().theta0) < 4 * est.se_

    def test_glm_average_derivative(self):
        dgp = GaussianDesignDGP(family="glm_logistic")
        ds = dgp.sample(4000, seed=2)
        gamma = DictionaryLearner(basis="poly", degree=1, optimizer="adam", learning_rate=0.05,
                                  epochs=60, batch_size=256)
        alpha = MLPLearner(width=16, depth=2, learning_rate=5e-3, epochs=40, batch_size=128)
        est = AutoDML(dgp.problem, gamma, alpha, random_state=0).fit(ds)
        assert abs(est.theta_ - dgp.oracles().theta0) < 4 * est.se_


class TestStructuralChecks:
    def test_orthogonality_affine_is_flat(self):
        dgp = ipw_dgp()
        o = dgp.oracles()
        delta = init_mlp(1, 1, 3, seed=0)
        rows = orthogonality_check(dgp.problem, o.gamma0, o.alpha0, delta, [0.0, 0.05, 0.1],
                                   dgp.atoms(), o.theta0)
        for tau, value, r1, r2 in rows:
            assert abs(value) < 1e-12
        assert np.isnan(rows[0][2]) and np.isnan(rows[0][3])

    def test_orthogonality_glm_is_quadratic(self):
        dgp = glm_dgp()
        o = dgp.oracles()
        rows = orthogonality_check(dgp.problem, o.gamma0, o.alpha0,
                                   constant_function(1.0, 2), [0.0, 0.05, 0.1], dgp.atoms(),
                                   o.theta0)
        assert abs(rows[0][1]) < 1e-12
        assert 3.5 <= rows[2][1] / rows[1][1] <= 4.5

    @pytest.mark.parametrize("make", [ipw_dgp, glm_dgp, multi_product_dgp])
    def test_alpha_robustness(self, make):
        dgp = make()
        o = dgp.oracles()
        atoms = dgp.atoms()
        for j in range(dgp.problem.J):
            assert dgp.block_support(j)[0].shape[0] >= 2
        alphas = [table_function(t["points"], np.full(len(t["points"]), 7.0)) for t in o.tables]
        assert abs(alpha_robustness_check(dgp.problem, o.gamma0, alphas, atoms, o.theta0)) < 1e-12
        assert abs(alpha_robustness_check(dgp.problem, o.gamma0, o.alpha0, atoms,
                                          o.theta0)) < 1e-12

    def test_double_robustness_by_enumeration(self):
        dgp = ipw_dgp()
        o = dgp.oracles()
        atoms, p = dgp.atoms()
        zero = constant_function(0.0, 1)
        assert abs(p @ psi_eval(dgp.problem, atoms, [zero], o.alpha0, o.theta0)) < 1e-12


class TestAssumptionDiagnostics:
    def test_all_treated(self):
        ds = ipw_dgp(P=(1.0, 1.0)).sample(200, seed=1)
        diag, warnings = assumption_diagnostics(ds, ipw_dgp().problem,
                                                [constant_function(1.0, 1)],
                                                [constant_function(1.5, 1)])
        assert diag["min_neg_vrho"] == 1.0
        assert not any("weight mass" in w for w in warnings)
        assert any("overlap" in w for w in warnings)

    def test_low_weight_mass_warns(self):
        d = np.zeros(1000)
        d[:10] = 1.0
        ds = Dataset(np.column_stack([np.arange(1000) % 2, d, d]), ["x", "d", "u"])
        _, warnings = assumption_diagnostics(ds, ipw_dgp().problem,
                                             [constant_function(1.0, 1)],
                                             [constant_function(1.0, 1)])
        assert any("weight mass" in w for w in warnings)

    def test_clipped_alpha_sup_norm(self):
        ds = ipw_dgp().sample(200, seed=1)
        big = init_mlp(1, 1, 4, seed=0, init_scale=0.0, output_clip=3.0)
        params = big.params.copy()
        params[-1] = 50.0
        alpha = big.with_params(params)
        diag, warnings = assumption_diagnostics(ds, ipw_dgp().problem,
                                                [constant_function(1.0, 1)], [alpha],
                                                thresholds={"alpha_bound": 2.0})
        assert diag["alpha_sup_norm"] == 3.0
        assert any("bound" in w for w in warnings)
