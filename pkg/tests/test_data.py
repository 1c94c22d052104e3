import numpy as np
import pytest

from autodml.data import (
    Dataset,
    DensitySpec,
    Schema,
    attach_simulated_draws,
    load_csv,
    make_folds,
)
from autodml.exceptions import DataError, SchemaError


class TestSchema:
    def test_resolve_by_name_and_position(self):
        schema = Schema({"outcome": ["y"], "regressors": [0, "z"]})
        assert schema.resolve(["d", "z", "y"]) == {"outcome": (2,), "regressors": (0, 1)}

    def test_unknown_role(self):
        with pytest.raises(SchemaError, match="unknown role"):
            Schema({"target": ["y"]})

    def test_out_of_range_position(self):
        with pytest.raises(SchemaError, match="3 columns"):
            Schema({"outcome": [5]}).resolve(["a", "b", "c"])

    def test_unknown_name(self):
        with pytest.raises(SchemaError, match="'w'"):
            Schema({"outcome": ["w"]}).resolve(["a", "b"])

    def test_column_in_two_roles(self):
        with pytest.raises(SchemaError, match="both"):
            Schema({"outcome": ["a"], "regressors": ["a"]}).resolve(["a", "b"])


class TestDataset:
    def setup_method(self):
        self.ds = Dataset([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], ["d", "z", "y"],
                          Schema({"outcome": ["y"], "regressors": ["d", "z"]}))

    def test_accessors(self):
        assert self.ds.n == 2 and self.ds.width == 3
        np.testing.assert_array_equal(self.ds.col("z"), [2.0, 5.0])
        np.testing.assert_array_equal(self.ds.block(["y", "d"]), [[3.0, 1.0], [6.0, 4.0]])
        assert self.ds.role("regressors") == ("d", "z")
        assert self.ds.role("draw") == ()

    def test_immutable(self):
        with pytest.raises(ValueError):
            self.ds.values[0, 0] = 9.0

    def test_missing_value_names_row_and_column(self):
        with pytest.raises(DataError, match=r"row 2, column 'b'"):
            Dataset([[1.0, 2.0], [3.0, np.nan]], ["a", "b"])

    def test_take_and_with_column(self):
        sub = self.ds.take([1])
        np.testing.assert_array_equal(sub.values, [[4.0, 5.0, 6.0]])
        wider = self.ds.with_column("u", [7.0, 8.0], role="draw")
        assert wider.role("draw") == ("u",)
        assert self.ds.width == 3

    def test_csv_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(20, 3)), ["a", "b", "c"])
        ds.to_csv(tmp_path / "x.csv")
        back = load_csv(tmp_path / "x.csv")
        np.testing.assert_array_equal(back.values, ds.values)
        assert back.columns == ds.columns


class TestLoadCsv:
    def test_schema_mismatch_names_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError, match="'y'"):
            load_csv(path, Schema({"outcome": ["y"]}))

    def test_bad_cell(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(DataError, match=r"row 3, column 'b'"):
            load_csv(path)

    def test_empty_cell_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b\n1,\n")
        with pytest.raises(DataError):
            load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_csv(tmp_path / "nope.csv")


class TestFolds:
    def test_partition_and_balance(self):
        plan = make_folds(103, 5, seed=4)
        sizes = np.bincount(plan.assignment)
        assert sizes.sum() == 103 and sizes.max() - sizes.min() <= 1
        for ell in range(5):
            rows = plan.fold(ell)
            assert np.intersect1d(rows, plan.complement(ell)).size == 0
            assert rows.size + plan.complement(ell).size == 103

    def test_deterministic_and_seed_dependent(self):
        a, b = make_folds(50, 5, seed=1), make_folds(50, 5, seed=1)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert not np.array_equal(a.assignment, make_folds(50, 5, seed=2).assignment)

    def test_n_equals_L(self):
        plan = make_folds(5, 5, seed=0)
        np.testing.assert_array_equal(np.sort(plan.assignment), np.arange(5))

    @pytest.mark.parametrize("n,L", [(10, 1), (3, 4)])
    def test_invalid(self, n, L):
        with pytest.raises(ValueError):
            make_folds(n, L)

    def test_double_crossfit_halves_are_disjoint(self):
        plan = make_folds(200, 4, seed=3, double_crossfit=True)
        for ell in range(4):
            g_rows, a_rows = plan.training_rows(ell)
            assert np.intersect1d(g_rows, a_rows).size == 0
            assert np.intersect1d(g_rows, plan.fold(ell)).size == 0
            np.testing.assert_array_equal(np.sort(np.concatenate([g_rows, a_rows])),
                                          plan.complement(ell))
            assert abs(g_rows.size - a_rows.size) <= 4


class TestDensity:
    def test_gaussian_score_and_pdf(self):
        dens = DensitySpec("gaussian", 1.0, 2.0)
        np.testing.assert_allclose(dens.score([3.0]), [0.5])
        np.testing.assert_allclose(dens.pdf(1.0), 1 / (2 * np.sqrt(2 * np.pi)))

    def test_uniform(self):
        dens = DensitySpec("uniform", low=-1.0, high=1.0)
        np.testing.assert_array_equal(dens.pdf([0.0, 2.0]), [0.5, 0.0])
        np.testing.assert_array_equal(dens.score([0.3]), [0.0])

    def test_attach_draws(self):
        ds = Dataset(np.zeros((1000, 1)), ["x"])
        out = attach_simulated_draws(ds, {"kind": "gaussian", "mean": 2.0, "sd": 0.5}, seed=7)
        assert out.role("draw") == ("draw",)
        draws = out.col("draw")
        assert abs(draws.mean() - 2.0) < 0.1 and abs(draws.std() - 0.5) < 0.05
        again = attach_simulated_draws(ds, DensitySpec("gaussian", 2.0, 0.5), seed=7)
        np.testing.assert_array_equal(again.col("draw"), draws)

    def test_invalid(self):
        with pytest.raises(ValueError):
            DensitySpec("gaussian", sd=0.0)
        with pytest.raises(ValueError):
            DensitySpec("laplace")
