import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcal import DataError, Dataset, load_csv, standardize, treatment_indicators
from mcal.data import Standardization

from conftest import make_dataset


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_four_row_binary(self, tmp_path):
        path = write_csv(tmp_path, "y,t,x1\n1.0,0,0.5\n2.0,1,-1.0\n0.5,0,0.1\n1.5,1,0.7\n")
        d = load_csv(path, {"outcome": "y", "treatment": "t"})
        assert d.k == 2 and d.n == 4 and d.p == 1
        assert np.all(d.f[:, 0] == 1.0)

    def test_relabeling_preserves_first_appearance_order(self, tmp_path):
        path = write_csv(
            tmp_path,
            "y,t,x1\n" + "".join(f"{i}.0,{lab},0.{i}\n"
                                 for i, lab in enumerate([2, 5, 9, 2, 5, 9])),
        )
        d = load_csv(path, {"outcome": "y", "treatment": "t"})
        assert d.treatment_labels == (2, 5, 9)
        assert d.t.tolist() == [0, 1, 2, 0, 1, 2]

    def test_nan_outcome_rejected(self, tmp_path):
        path = write_csv(tmp_path, "y,t,x1\n1.0,0,0.5\n,1,0.2\n2.0,0,0.1\n1.0,1,0.3\n")
        with pytest.raises(DataError, match="non-finite"):
            load_csv(path, {"outcome": "y", "treatment": "t"})

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "y,t\n1.0,0\n2.0,1\n")
        with pytest.raises(DataError, match="missing column"):
            load_csv(path, {"outcome": "z", "treatment": "t"})

    def test_single_level_rejected(self, tmp_path):
        path = write_csv(tmp_path, "y,t,x1\n1.0,0,0.5\n2.0,0,0.2\n")
        with pytest.raises(DataError, match="fewer than 2"):
            load_csv(path, {"outcome": "y", "treatment": "t"})

    def test_covariate_subset(self, tmp_path):
        path = write_csv(tmp_path, "y,t,a,b\n1,0,1,9\n2,1,2,9\n3,0,3,9\n4,1,4,9\n")
        d = load_csv(path, {"outcome": "y", "treatment": "t", "covariates": ["a"]})
        assert d.p == 1 and d.column_names == ("(intercept)", "a")


class TestDatasetInvariants:
    def test_missing_level(self):
        with pytest.raises(DataError, match="zero rows"):
            Dataset(y=np.zeros(4), t=np.array([0, 0, 2, 2]),
                    f=np.ones((4, 1)), k=3, p=0)

    def test_intercept_column_checked(self):
        f = np.ones((4, 2))
        f[0, 0] = 2.0
        with pytest.raises(DataError, match="column 0"):
            Dataset(y=np.zeros(4), t=np.array([0, 1, 0, 1]), f=f, k=2, p=1)

    def test_nonfinite_rejected(self):
        f = np.ones((4, 2))
        f[2, 1] = np.inf
        with pytest.raises(DataError, match="non-finite"):
            Dataset(y=np.zeros(4), t=np.array([0, 1, 0, 1]), f=f, k=2, p=1)

    def test_n_at_least_k(self):
        with pytest.raises(DataError):
            Dataset(y=np.zeros(1), t=np.zeros(1, dtype=int), f=np.ones((1, 1)), k=2, p=0)

    def test_arrays_immutable(self, rng):
        d = make_dataset(rng)
        with pytest.raises(ValueError):
            d.y[0] = 99.0


class TestStandardize:
    def test_three_point_column(self):
        f = np.column_stack([np.ones(3), [1.0, 2.0, 3.0]])
        d = Dataset(y=np.zeros(3), t=np.array([0, 1, 0]), f=f, k=2, p=1)
        ds, std = standardize(d)
        assert abs(ds.f[:, 1].mean()) < 1e-14
        assert abs(ds.f[:, 1].var() - 1.0) < 1e-14  # divisor n
        assert np.all(ds.f[:, 0] == 1.0)

    def test_constant_column_error_names_column(self):
        f = np.column_stack([np.ones(4), [5.0, 5.0, 5.0, 5.0]])
        d = Dataset(y=np.zeros(4), t=np.array([0, 1, 0, 1]), f=f, k=2, p=1,
                    column_names=("(intercept)", "width"))
        with pytest.raises(DataError, match="width"):
            standardize(d)

    def test_idempotent_within_tolerance(self, rng):
        d = make_dataset(rng, n=50, p=4)
        d1, _ = standardize(d)
        d2, _ = standardize(d1)
        assert np.abs(d1.f - d2.f).max() < 1e-12

    def test_coef_roundtrip_preserves_predictions(self, rng):
        d = make_dataset(rng, n=40, p=5)
        ds, std = standardize(d)
        coef_std = rng.standard_normal((d.p + 1, 3))
        coef = std.destandardize_coef(coef_std)
        pred_std = ds.f @ coef_std
        pred = d.f @ coef
        scale = np.abs(pred_std).max()
        assert np.abs(pred - pred_std).max() <= 1e-10 * max(scale, 1.0)
        back = std.standardize_coef(coef)
        assert np.abs(back - coef_std).max() < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_roundtrip_property(self, seed):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(1, 6))
        means = rng.normal(size=p) * 3
        scales = np.abs(rng.normal(size=p)) + 0.1
        std = Standardization(means=means, scales=scales)
        coef = rng.standard_normal((p + 1, 2))
        again = std.destandardize_coef(std.standardize_coef(coef))
        assert np.abs(again - coef).max() < 1e-9 * (1 + np.abs(coef).max())


class TestTreatmentIndicators:
    def test_example(self):
        f = np.ones((3, 1))
        d = Dataset(y=np.zeros(3), t=np.array([0, 1, 1]), f=f, k=2, p=0)
        expected = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        assert np.array_equal(treatment_indicators(d), expected)

    def test_partition(self, rng):
        d = make_dataset(rng, n=70, p=2, k=4)
        ind = treatment_indicators(d)
        assert np.array_equal(ind.sum(axis=1), np.ones(d.n))
        assert np.array_equal(ind.sum(axis=0), d.group_counts())

    def test_k1_rejected_upstream(self):
        with pytest.raises(DataError):
            Dataset(y=np.zeros(3), t=np.zeros(3, dtype=int), f=np.ones((3, 1)),
                    k=1, p=0)
