import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrams.data import (
    CONTINUOUS,
    LABEL,
    Column,
    DataError,
    Preprocessor,
    Schema,
    SchemaError,
    SplitSpec,
    TabularDataset,
    fit_apply_preprocessor,
    format_schema,
    load_csv,
    load_split_manifest,
    make_synthetic,
    parse_schema,
    save_split_manifest,
    split,
    split_indices,
    split_sizes,
    write_csv,
)

SCHEMA_TEXT = """
# toy table
[columns]
age = continuous
color = categorical: red, green
income = continuous
class = label: no, yes

[options]
positive = yes
"""


@pytest.fixture
def schema():
    return parse_schema(SCHEMA_TEXT)


def write(tmp_path, text, name="t.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestSchema:
    def test_parse(self, schema):
        assert [c.name for c in schema.continuous] == ["age", "income"]
        assert schema.categorical[0].vocabulary == ("red", "green")
        assert schema.classes == ("no", "yes")
        assert schema.feature_names == ["age", "income", "color"]

    def test_positive_label_is_class_one(self):
        s = parse_schema("[columns]\nx = continuous\nc = label: RB, NRB\n[options]\npositive = RB\n")
        assert s.classes == ("NRB", "RB")

    def test_round_trip(self, schema):
        assert parse_schema(format_schema(schema)) == schema

    def test_named_delimiters(self):
        s = parse_schema("[columns]\nx = continuous\nc = label: a, b\n[options]\ndelimiter = semicolon\n")
        assert s.delimiter == ";"
        assert parse_schema(format_schema(s)).delimiter == ";"

    @pytest.mark.parametrize("text", [
        "[columns]\nx = continuous\n",
        "[columns]\nx = continuous\na = label: p, q\nb = label: p, q\n",
        "[columns]\nx = wobbly\na = label: p, q\n",
        "[columns]\nx = categorical: u, u\na = label: p, q\n",
        "[columns]\na = label:\n",
        "[columns]\na = label: p, q\n[options]\npositive = z\n",
        "[other]\na = 1\n",
    ])
    def test_invalid(self, text):
        with pytest.raises(SchemaError):
            parse_schema(text)


class TestLoadCsv:
    def test_one_empty_cell(self, tmp_path, schema):
        path = write(tmp_path, "age,color,income,class\n1,red,3.5,no\n2,green,,yes\n3,red,1,no\n")
        ds, _ = load_csv(path, schema)
        assert ds.n == 3
        assert (~ds.mask).sum() == 1 and not ds.mask[1, 1]
        np.testing.assert_array_equal(ds.y, [0, 1, 0])

    def test_na_tokens(self, tmp_path, schema):
        ds, _ = load_csv(write(tmp_path, "age,color,income,class\n?,NA,1,no\n2,red,2,yes\n"), schema)
        np.testing.assert_array_equal(ds.mask[0], [False, True, False])

    def test_header_order_free(self, tmp_path, schema):
        ds, _ = load_csv(write(tmp_path, "class,income,color,age\nyes,5,green,7\n"), schema)
        np.testing.assert_array_equal(ds.x_cont, [[7.0, 5.0]])
        assert ds.x_cat[0, 0] == 1

    def test_training_load_extends_vocabulary(self, tmp_path, schema):
        ds, ext = load_csv(write(tmp_path, "age,color,income,class\n1,blue,1,no\n"), schema)
        assert ext.categorical[0].vocabulary == ("red", "green", "blue")
        assert ds.x_cat[0, 0] == 2

    def test_unseen_value_maps_to_unknown_at_test_time(self, tmp_path, schema):
        ds, _ = load_csv(write(tmp_path, "age,color,income,class\n1,blue,1,no\n"), schema, training=False)
        assert ds.x_cat[0, 0] == 2  # len(vocab) is the unknown slot
        assert ds.schema.categorical[0].vocabulary == ("red", "green")

    def test_label_outside_schema(self, tmp_path, schema):
        with pytest.raises(DataError, match="maybe"):
            load_csv(write(tmp_path, "age,color,income,class\n1,red,1,maybe\n"), schema)

    def test_missing_label(self, tmp_path, schema):
        with pytest.raises(DataError, match="label missing"):
            load_csv(write(tmp_path, "age,color,income,class\n1,red,1,\n"), schema)

    def test_unparseable_number(self, tmp_path, schema):
        with pytest.raises(DataError, match="parse"):
            load_csv(write(tmp_path, "age,color,income,class\nold,red,1,no\n"), schema)

    def test_unknown_column(self, tmp_path, schema):
        with pytest.raises(DataError, match="unknown column"):
            load_csv(write(tmp_path, "age,color,income,class,zip\n1,red,1,no,9\n"), schema)

    def test_headerless_semicolon(self, tmp_path):
        s = parse_schema("[columns]\na = continuous\nb = continuous\nc = label: NRB, RB\n"
                         "[options]\npositive = RB\nheader = false\ndelimiter = semicolon\n")
        ds, _ = load_csv(write(tmp_path, "1.5;2;RB\n0;;NRB\n"), s)
        np.testing.assert_array_equal(ds.y, [1, 0])
        assert not ds.mask[1, 1]

    def test_write_read_round_trip(self, tmp_path, schema):
        path = write(tmp_path, "age,color,income,class\n1,red,3.5,no\n2,,,yes\n")
        ds, ext = load_csv(path, schema)
        write_csv(tmp_path / "out.csv", ds)
        again, _ = load_csv(tmp_path / "out.csv", ext)
        np.testing.assert_array_equal(again.mask, ds.mask)
        np.testing.assert_array_equal(again.x_cont[again.mask[:, :2]], ds.x_cont[ds.mask[:, :2]])


class TestSplit:
    def test_sizes_650_150_200(self):
        assert split_sizes(1000, (0.65, 0.15, 0.2)) == [650, 150, 200]

    def test_deterministic(self):
        y = make_synthetic(n=300, seed=1).y
        a, b = split_indices(y, SplitSpec(seed=4)), split_indices(y, SplitSpec(seed=4))
        for x, z in zip(a, b):
            np.testing.assert_array_equal(x, z)

    def test_stratified(self):
        ds = make_synthetic(n=1000, positive_ratio=0.3, seed=2)
        overall = ds.positive_rate()
        for part in split(ds):
            assert abs(part.positive_rate() - overall) < 0.02

    def test_too_small(self):
        with pytest.raises(DataError):
            split_sizes(3, (0.65, 0.15, 0.2))

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            SplitSpec(ratios=(0.5, 0.6, -0.1))

    @given(st.integers(10, 400), st.integers(0, 2**31 - 1))
    def test_disjoint_covering_and_sized(self, n, seed):
        y = np.random.default_rng(seed).integers(0, 2, n)
        parts = split_indices(y, SplitSpec(seed=seed))
        joined = np.sort(np.concatenate(parts))
        np.testing.assert_array_equal(joined, np.arange(n))
        for part, r in zip(parts, (0.65, 0.15, 0.2)):
            assert abs(part.size - n * r) <= 1

    def test_manifest_round_trip(self, tmp_path):
        parts = split_indices(np.arange(40) % 2, SplitSpec(seed=1))
        save_split_manifest(tmp_path / "s.json", parts, SplitSpec(seed=1))
        back = load_split_manifest(tmp_path / "s.json")
        for name, part in zip(("train", "val", "test"), parts):
            np.testing.assert_array_equal(back[name], part)


def _table(values, mask=None):
    x = np.asarray(values, dtype=float).reshape(-1, 1)
    cols = (Column("x", CONTINUOUS), Column("y", LABEL, ("0", "1")))
    m = np.ones_like(x, dtype=bool) if mask is None else np.asarray(mask).reshape(-1, 1)
    return TabularDataset(Schema(cols), x, np.zeros((x.shape[0], 0), dtype=int), m, np.zeros(x.shape[0], dtype=int))


class TestPreprocessor:
    def test_zero_two_becomes_minus_one_plus_one(self):
        _, out = fit_apply_preprocessor(_table([0.0, 2.0]))
        np.testing.assert_array_equal(out.x_cont[:, 0], [-1.0, 1.0])

    def test_constant_column(self):
        pre, out = fit_apply_preprocessor(_table([3.0, 3.0, 3.0]))
        assert pre.std[0] == 1.0
        np.testing.assert_array_equal(out.x_cont[:, 0], 0.0)

    def test_masked_entries_untouched(self):
        ds = _table([1.0, 5.0, 3.0], mask=[True, False, True])
        pre, out = fit_apply_preprocessor(ds)
        assert pre.mean[0] == 2.0
        assert out.x_cont[1, 0] == 5.0
        np.testing.assert_array_equal(out.mask, ds.mask)

    def test_statistics_ignore_other_splits(self):
        train = _table([1.0, 2.0, 4.0])
        a = fit_apply_preprocessor(train, _table([9.0]))[0]
        b = fit_apply_preprocessor(train, _table([-100.0]))[0]
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.std, b.std)

    def test_dict_round_trip(self):
        pre = Preprocessor.fit(_table([1.0, 2.0, 4.0]))
        back = Preprocessor.from_dict(pre.to_dict())
        np.testing.assert_array_equal(back.mean, pre.mean)
        np.testing.assert_array_equal(back.std, pre.std)


class TestDataset:
    def test_mask_shape_checked(self):
        with pytest.raises(DataError):
            _table([1.0, 2.0], mask=[True, False, True])

    def test_apply_mask_keeps_native_missing(self):
        ds = _table([1.0, 2.0], mask=[False, True])
        out = ds.apply_mask(np.array([[True], [False]]))
        np.testing.assert_array_equal(out.mask[:, 0], [False, False])

    def test_drop_labels(self):
        assert not _table([1.0]).drop_labels().labeled
