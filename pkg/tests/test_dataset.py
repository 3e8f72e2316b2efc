import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from alasso.dataset import (
    ColumnMapping,
    ModelSpec,
    RawSeriesTable,
    build_design,
    read_csv,
    write_csv,
)
from alasso.errors import DataError


def table(**cols):
    names = tuple(cols)
    values = np.column_stack([np.asarray(v, dtype=float) for v in cols.values()])
    return RawSeriesTable(names=names, values=values)


class TestBuildDesign:
    def test_single_lag_shift(self):
        ds = build_design(table(y=[1, 2, 3, 4]), ModelSpec(p1=1, p2=0, p3=0))
        assert ds.n == 3
        assert_array_equal(ds.y, [2, 3, 4])
        assert_array_equal(ds.design[:, 0], [1, 2, 3])

    def test_two_lag_alignment(self):
        y = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
        ds = build_design(table(y=y), ModelSpec(p1=2, p2=0, p3=0))
        # first usable observation is the third raw row
        assert ds.n == 4
        assert_array_equal(ds.y, y[2:])
        assert_array_equal(ds.design[0], [20.0, 10.0])
        assert_array_equal(ds.design[-1], [50.0, 40.0])

    def test_predictor_lag_hand_enumerated(self):
        # T=5 rows; expected design enumerated by hand
        raw = table(y=[10, 20, 30, 40, 50], x=[1, 2, 3, 4, 5])
        ds = build_design(raw, ModelSpec(p1=1, p2=0, p3=1))
        assert ds.n == 4
        assert_array_equal(ds.y, [20, 30, 40, 50])
        assert_array_equal(ds.design, [[10, 1], [20, 2], [30, 3], [40, 4]])

    def test_covariate_is_contemporaneous(self):
        raw = table(y=[1, 2, 3, 4], w=[5, 6, 7, 8])
        ds = build_design(raw, ModelSpec(p1=1, p2=1, p3=0))
        assert_array_equal(ds.design[:, 1], [6, 7, 8])

    def test_random_alignment_property(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p1 = int(rng.integers(0, 4))
            p2 = int(rng.integers(0, 3))
            p3 = int(rng.integers(0, 3))
            if p1 + p2 + p3 == 0:
                p1 = 1
            t_total = int(rng.integers(max(p1, 1) + 3, 40))
            y = rng.standard_normal(t_total)
            w = rng.standard_normal((t_total, p2))
            x = rng.standard_normal((t_total, p3))
            values = np.column_stack([y, w, x])
            names = ["y"] + [f"w{i}" for i in range(p2)] + [f"x{i}" for i in range(p3)]
            ds = build_design(
                RawSeriesTable(names=tuple(names), values=values),
                ModelSpec(p1=p1, p2=p2, p3=p3),
            )
            lead = max(p1, 1)
            for _ in range(10):
                t = int(rng.integers(0, ds.n))
                j = int(rng.integers(0, ds.p))
                raw_t = lead + t
                if j < p1:
                    expected = y[raw_t - (j + 1)]
                elif j < p1 + p2:
                    expected = w[raw_t, j - p1]
                else:
                    expected = x[raw_t - 1, j - p1 - p2]
                assert ds.design[t, j] == expected

    def test_intercept_centering(self):
        raw = table(y=[1, 2, 4, 8, 16.0], w=[3, 1, 4, 1, 5.0])
        ds = build_design(raw, ModelSpec(p1=1, p2=1, p3=0, include_intercept=True))
        assert_allclose(ds.y.mean(), 0.0, atol=1e-12)
        assert_allclose(ds.design.mean(axis=0), 0.0, atol=1e-12)
        assert ds.y_mean == pytest.approx(np.mean([2, 4, 8, 16]))
        # column means are recorded on the original scale
        assert ds.design_means[0] == pytest.approx(np.mean([1, 2, 4, 8]))

    def test_too_short(self):
        with pytest.raises(DataError, match="too short"):
            build_design(table(y=[1, 2]), ModelSpec(p1=1, p2=0, p3=0))

    def test_nonfinite_rejected(self):
        raw = table(y=[1, 2, np.nan, 4, 5])
        with pytest.raises(DataError, match="row 3"):
            build_design(raw, ModelSpec(p1=1, p2=0, p3=0))

    def test_column_count_mismatch(self):
        with pytest.raises(DataError, match="columns"):
            build_design(table(y=[1, 2, 3, 4]), ModelSpec(p1=1, p2=1, p3=0))

    def test_immutability(self):
        ds = build_design(table(y=[1, 2, 3, 4]), ModelSpec(p1=1, p2=0, p3=0))
        with pytest.raises(ValueError):
            ds.design[0, 0] = 99.0


class TestModelSpec:
    def test_default_names(self):
        spec = ModelSpec(p1=2, p2=1, p3=1)
        assert spec.variable_names == ("y_l1", "y_l2", "w1", "x1_l1")
        assert spec.p == 4

    def test_name_count_enforced(self):
        with pytest.raises(ValueError, match="variable names"):
            ModelSpec(p1=1, p2=0, p3=0, variable_names=("a", "b"))

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            ModelSpec(p1=0, p2=2, p3=0, variable_names=("w", "w"))

    def test_empty_model_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec(p1=0, p2=0, p3=0)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec(p1=-1, p2=2, p3=0)


class TestReadCsv:
    def test_two_column_file(self, tmp_path):
        path = tmp_path / "rates.csv"
        path.write_text("date,rate\n2001-01,1.5\n2001-02,2.5\n2001-03,3.5\n")
        raw = read_csv(str(path), ColumnMapping(response="rate", date="date"))
        assert raw.names == ("rate",)
        assert raw.n_rows == 3
        assert raw.labels == ("2001-01", "2001-02", "2001-03")
        assert_array_equal(raw.values[:, 0], [1.5, 2.5, 3.5])

    def test_648_rows_16_columns(self, tmp_path):
        rng = np.random.default_rng(0)
        names = ["rate"] + [f"m{i}" for i in range(15)]
        rows = [",".join(names)]
        for _ in range(648):
            rows.append(",".join(format(v, ".6f") for v in rng.standard_normal(16)))
        path = tmp_path / "macro.csv"
        path.write_text("\n".join(rows) + "\n")
        raw = read_csv(
            str(path),
            ColumnMapping(response="rate", covariates=tuple(names[1:])),
        )
        assert raw.n_rows == 648
        ds = build_design(raw, ModelSpec(p1=1, p2=15, p3=0))
        assert ds.n == 647

    def test_blank_cell_reports_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,\n")
        with pytest.raises(DataError, match=r"row 3, column 'b'"):
            read_csv(str(path), ColumnMapping(response="a", covariates=("b",)))

    def test_unparsable_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a\n1\noops\n")
        with pytest.raises(DataError, match=r"row 3.*'oops'"):
            read_csv(str(path), ColumnMapping(response="a"))

    def test_missing_column(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("a\n1\n")
        with pytest.raises(DataError, match="missing column"):
            read_csv(str(path), ColumnMapping(response="a", covariates=("zz",)))

    def test_duplicate_headers(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,a\n1,2\n")
        with pytest.raises(DataError, match="duplicate"):
            read_csv(str(path), ColumnMapping(response="a"))

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(DataError, match="row 3"):
            read_csv(str(path), ColumnMapping(response="a", covariates=("b",)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            read_csv(str(tmp_path / "nope.csv"), ColumnMapping(response="a"))


class TestRoundTrip:
    def test_write_read_bit_exact(self, tmp_path):
        rng = np.random.default_rng(99)
        values = np.column_stack([
            rng.standard_normal(50) * 10.0**rng.integers(-8, 8, 50),
            rng.standard_normal(50),
        ])
        values[0, 0] = 0.1  # not exactly representable
        values[1, 0] = 1.0 / 3.0
        raw = RawSeriesTable(names=("a", "b"), values=values)
        path = tmp_path / "rt.csv"
        write_csv(raw, str(path))
        back = read_csv(str(path), ColumnMapping(response="a", covariates=("b",)))
        assert_array_equal(back.values, raw.values)

    def test_round_trip_with_labels(self, tmp_path):
        raw = RawSeriesTable(
            names=("a",), values=np.array([[1.5], [2.5]]), labels=("t1", "t2")
        )
        path = tmp_path / "rt.csv"
        write_csv(raw, str(path))
        back = read_csv(str(path), ColumnMapping(response="a", date="date"))
        assert back.labels == ("t1", "t2")
        assert_array_equal(back.values, raw.values)
