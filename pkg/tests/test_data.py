import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crits.data import (
    BadShape,
    ChannelMismatch,
    ClassTooSmall,
    MalformedHeader,
    NonBinaryLabels,
    NormStats,
    NumericParse,
    RaggedSeries,
    ShapeMismatch,
    TimeSeriesDataset,
    apply_norm,
    fit_norm,
    load_dataset,
    mask_to_csv,
    parse_csv,
    parse_mask_csv,
    parse_ts,
    split_indices,
    stratified_split,
    synth_bump,
    to_csv,
)

TS_MINIMAL = """# a comment
@problemName Tiny
@timeStamps false
@univariate true
@classLabel true a b
@data
1.0,2.0,3.0,4.0:a
-1.5,0.25,1e-3,7:b
"""


class TestParseTs:
    def test_minimal_file(self):
        ds = parse_ts(TS_MINIMAL)
        assert (ds.n, ds.m, ds.T) == (2, 1, 4)
        assert ds.name == "Tiny"
        assert ds.labels.tolist() == [0, 1]
        np.testing.assert_array_equal(ds.instances[1, 0], [-1.5, 0.25, 1e-3, 7.0])

    def test_multichannel_line(self):
        text = "@problemName X\n@univariate false\n@dimensions 3\n@classLabel true a b\n@data\n1,2,3:4,5,6:a\n"
        ds = parse_ts(text)
        assert (ds.m, ds.T) == (2, 3)
        np.testing.assert_array_equal(ds.instances[0], [[1, 2, 3], [4, 5, 6]])
        assert ds.labels.tolist() == [0]

    def test_label_mapping_is_sorted(self):
        text = "@classLabel true 2 1\n@data\n1,2:2\n3,4:1\n"
        ds = parse_ts(text)
        assert ds.labels.tolist() == [1, 0]
        assert ds.class_names == ("1", "2")

    def test_ragged_across_instances(self):
        text = "@classLabel true a b\n@data\n1,2,3,4:a\n1,2,3,4,5:b\n"
        with pytest.raises(RaggedSeries):
            parse_ts(text)

    def test_ragged_within_instance(self):
        with pytest.raises(RaggedSeries):
            parse_ts("@classLabel true a b\n@data\n1,2,3:4,5:a\n")

    def test_series_length_mismatch(self):
        with pytest.raises(RaggedSeries):
            parse_ts("@seriesLength 5\n@classLabel true a b\n@data\n1,2,3:a\n")

    @pytest.mark.parametrize("text", [
        "@classLabel true a b\n1,2:a\n",
        "@problemName X\n@data\n1,2:a\n",
        "@classLabel false\n@data\n1,2\n",
    ])
    def test_missing_directives(self, text):
        with pytest.raises(MalformedHeader):
            parse_ts(text)

    def test_three_classes(self):
        with pytest.raises(NonBinaryLabels):
            parse_ts("@classLabel true a b c\n@data\n1,2:a\n3,4:b\n5,6:c\n")

    def test_undeclared_label(self):
        with pytest.raises(MalformedHeader):
            parse_ts("@classLabel true a b\n@data\n1,2:z\n")

    def test_numeric_error_reports_position(self):
        with pytest.raises(NumericParse) as err:
            parse_ts("@classLabel true a b\n@data\n1,2:a\n1,x:b\n")
        assert err.value.line == 4 and err.value.column == 2

    def test_missing_value_rejected(self):
        with pytest.raises(NumericParse):
            parse_ts("@classLabel true a b\n@data\n1,?,3:a\n")


class TestParseCsv:
    def test_single_row(self):
        ds = parse_csv("0,0,0,0,1", layout=(1, 4))
        np.testing.assert_array_equal(ds.instances, np.zeros((1, 1, 4)))
        assert ds.labels.tolist() == [1]

    def test_channel_major(self):
        ds = parse_csv("1,2,3,4,5,6,0", layout=(2, 3))
        np.testing.assert_array_equal(ds.instances[0], [[1, 2, 3], [4, 5, 6]])
        assert ds.labels.tolist() == [0]

    def test_missing_label(self):
        with pytest.raises(ShapeMismatch):
            parse_csv("1,2,3,4,5,6", layout=(2, 3))

    def test_header_layout(self):
        ds = parse_csv("# m=2 T=3\n1,2,3,4,5,6,1\n")
        assert (ds.m, ds.T) == (2, 3)

    def test_bad_label(self):
        with pytest.raises(NonBinaryLabels):
            parse_csv("1,2,3,2", layout=(1, 3))

    def test_bad_number(self):
        with pytest.raises(NumericParse):
            parse_csv("1,abc,3,0", layout=(1, 3))

    def test_ts_to_csv_round_trip(self):
        ds = parse_ts(TS_MINIMAL)
        back = parse_csv(to_csv(ds))
        np.testing.assert_array_equal(back.instances, ds.instances)
        np.testing.assert_array_equal(back.labels, ds.labels)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 6), st.integers(1, 5), st.integers(0, 2**31))
    def test_round_trip_property(self, m, T, n, seed):
        r = np.random.default_rng(seed)
        ds = TimeSeriesDataset(r.standard_normal((n, m, T)) * 10 ** r.uniform(-5, 5), r.integers(0, 2, n))
        back = parse_csv(to_csv(ds))
        np.testing.assert_array_equal(back.instances, ds.instances)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_load_dataset_by_suffix(self, tmp_path):
        (tmp_path / "a.ts").write_text(TS_MINIMAL)
        (tmp_path / "b.csv").write_text("# m=1 T=4\n1,2,3,4,0\n")
        assert load_dataset(tmp_path / "a.ts").T == 4
        assert load_dataset(tmp_path / "b.csv").n == 1


class TestDatasetInvariants:
    def test_rejects_nonbinary(self):
        with pytest.raises(NonBinaryLabels):
            TimeSeriesDataset(np.zeros((2, 1, 3)), [0, 2])

    def test_rejects_short_series(self):
        with pytest.raises(BadShape):
            TimeSeriesDataset(np.zeros((2, 1, 1)), [0, 1])

    def test_immutable(self):
        ds = TimeSeriesDataset(np.zeros((2, 1, 3)), [0, 1])
        with pytest.raises(ValueError):
            ds.instances[0, 0, 0] = 1.0


class TestNorm:
    def test_symmetric_values(self):
        X = np.tile([-1.0, 1.0], (3, 1, 4))
        stats = fit_norm(TimeSeriesDataset(X, [0, 1, 0]))
        np.testing.assert_allclose(stats.mean, [0.0], atol=1e-15)
        np.testing.assert_allclose(stats.std, [1.0])

    def test_constant_channel(self):
        stats = fit_norm(TimeSeriesDataset(np.full((2, 1, 5), 5.0), [0, 1]))
        assert stats.mean[0] == 5.0 and stats.std[0] == 1.0

    def test_population_std(self):
        X = np.array([[[0.0, 2.0, 4.0]], [[4.0, 0.0, 2.0]]])
        stats = fit_norm(TimeSeriesDataset(X, [0, 1]))
        assert stats.mean[0] == pytest.approx(2.0)
        assert stats.std[0] == pytest.approx(np.sqrt(8 / 3), abs=1e-12)
        assert stats.std[0] == pytest.approx(1.63299, abs=1e-5)

    def test_apply_identity(self):
        ds = TimeSeriesDataset(np.arange(6.0).reshape(1, 2, 3), [1])
        out = apply_norm(NormStats([0.0, 0.0], [1.0, 1.0]), ds)
        np.testing.assert_array_equal(out.instances, ds.instances)

    def test_apply_arithmetic(self):
        ds = TimeSeriesDataset(np.array([[[4.0, 4.0]]]), [0])
        assert apply_norm(NormStats([2.0], [2.0]), ds).instances[0, 0, 0] == 1.0

    def test_no_clipping(self):
        ds = TimeSeriesDataset(np.array([[[100.0, -100.0]]]), [0])
        out = apply_norm(NormStats([0.0], [1.0]), ds)
        assert out.instances.max() == 100.0

    def test_channel_mismatch(self):
        with pytest.raises(ChannelMismatch):
            apply_norm(NormStats([0.0], [1.0]), TimeSeriesDataset(np.zeros((1, 2, 3)), [0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(2, 20), st.integers(1, 10), st.integers(0, 2**31))
    def test_train_split_is_standardised(self, m, T, n, seed):
        r = np.random.default_rng(seed)
        X = r.normal(r.uniform(-50, 50, (1, m, 1)), r.uniform(0.1, 20, (1, m, 1)), (n, m, T))
        X[:, 0, :] = 3.0  # one degenerate channel
        ds = TimeSeriesDataset(X, r.integers(0, 2, n))
        out = apply_norm(fit_norm(ds), ds).instances
        assert np.all(np.abs(out.mean(axis=(0, 2))) <= 1e-9)
        np.testing.assert_allclose(out.std(axis=(0, 2))[1:], 1.0, atol=1e-9)


class TestSplit:
    def test_balanced_ten(self):
        labels = np.array([0, 1] * 5)
        tr, te = split_indices(labels, 0.2, seed=0)
        assert sorted(labels[te].tolist()) == [0, 1]
        assert len(tr) == 8

    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 2, 50)
        a = split_indices(labels, 0.3, seed=5)
        b = split_indices(labels, 0.3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @pytest.mark.parametrize("n_pos", [200, 214, 225, 237, 251])
    def test_gunpoint_size(self, n_pos):
        labels = np.array([1] * n_pos + [0] * (451 - n_pos))
        _, te = split_indices(labels, 0.2, seed=0)
        assert len(te) in (90, 91)

    def test_class_too_small(self):
        with pytest.raises(ClassTooSmall):
            split_indices(np.array([0, 0, 0, 1]), 0.2, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_partition_and_proportion(self, n0, n1, frac, seed):
        labels = np.array([0] * n0 + [1] * n1)
        tr, te = split_indices(labels, frac, seed)
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n0 + n1))
        for cls, n_c in ((0, n0), (1, n1)):
            got = int(np.sum(labels[te] == cls))
            assert abs(got - frac * n_c) <= 1.0

    def test_stratified_split_datasets(self):
        ds = TimeSeriesDataset(np.zeros((10, 1, 3)), [0, 1] * 5)
        train, test = stratified_split(ds, 0.2, seed=1)
        assert (train.n, test.n) == (8, 2)


class TestSynth:
    def test_masks(self):
        ds, mask = synth_bump(4, 1, 20, 5, 2.0, seed=0)
        per_instance = mask.sum(axis=(1, 2))
        assert sorted(per_instance.tolist()) == [0, 0, 5, 5]
        for i in range(4):
            assert (per_instance[i] == 5) == (ds.labels[i] == 1)
            if per_instance[i]:
                idx = np.flatnonzero(mask[i, 0])
                assert np.all(np.diff(idx) == 1)

    def test_balanced(self):
        ds, _ = synth_bump(100, 2, 30, 4, 1.0, seed=3)
        assert ds.labels.sum() == 50

    def test_bit_exact(self):
        a, ma = synth_bump(20, 2, 32, 6, 3.0, seed=11)
        b, mb = synth_bump(20, 2, 32, 6, 3.0, seed=11)
        assert a.instances.tobytes() == b.instances.tobytes()
        assert np.array_equal(ma, mb) and np.array_equal(a.labels, b.labels)

    def test_zero_snr_has_no_signal(self):
        ds, mask = synth_bump(2000, 1, 32, 8, 0.0, seed=2)
        pos, neg = ds.instances[ds.labels == 1], ds.instances[ds.labels == 0]
        assert abs(pos.mean() - neg.mean()) < 0.02
        assert abs(pos.std() - neg.std()) < 0.02

    def test_bump_only_on_channel_zero(self):
        ds, mask = synth_bump(10, 3, 40, 8, 5.0, seed=4)
        assert not mask[:, 1:].any()

    @pytest.mark.parametrize("args", [(3, 1, 20, 5), (4, 1, 20, 11), (4, 1, 20, 1)])
    def test_bad_shape(self, args):
        with pytest.raises(BadShape):
            synth_bump(*args, 1.0, seed=0)

    def test_mask_csv_round_trip(self):
        _, mask = synth_bump(6, 2, 16, 4, 1.0, seed=0)
        np.testing.assert_array_equal(parse_mask_csv(mask_to_csv(mask)), mask)
