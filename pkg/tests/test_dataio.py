"""Tests of gesture loading, preprocessing and pairing."""
import json

import numpy as np
import pytest

import touchtools.dataio as dataio
from touchtools.errors import DataError
from touchtools.errors import FormatError
from touchtools.errors import ValidationError

HEADER = "user_id,sample_id,t,x,y,p,a"


def sample(user, sid, n=4, t0=0.0):
    rows = np.column_stack([t0 + 10.0 * np.arange(n), np.arange(n) * 2.0,
                            np.arange(n) * 3.0, np.linspace(0.2, 0.8, n),
                            np.linspace(1.0, 2.0, n)])
    return dataio.GestureSample(user, sid, rows)


class TestLoadCsv:
    def test_three_rows_one_sample(self, csv_file):
        f = csv_file([HEADER, "u1,s1,100,5,5,0.5,1",
                      "u1,s1,150,6,5,0.6,1", "u1,s1,220,7,5,0.7,1"])
        samples = dataio.load_gesture_csv(f, print_msg=False)
        assert len(samples) == 1
        assert samples[0].length == 3
        np.testing.assert_allclose(samples[0].rows[:, 0], [100, 150, 220])

    def test_interleaved_samples(self, csv_file):
        f = csv_file([HEADER, "u1,s1,0,0,0,1,1", "u1,s2,0,0,0,1,1",
                      "u1,s1,1,0,0,1,1", "u1,s2,5,0,0,1,1"])
        samples = dataio.load_gesture_csv(f, print_msg=False)
        assert [s.sample_id for s in samples] == ["s1", "s2"]
        np.testing.assert_allclose(samples[1].rows[:, 0], [0, 5])

    def test_decreasing_time_names_sample(self, csv_file):
        f = csv_file([HEADER, "u1,s9,10,0,0,1,1", "u1,s9,5,0,0,1,1"])
        with pytest.raises(ValidationError, match="u1/s9"):
            dataio.load_gesture_csv(f, print_msg=False)

    def test_missing_column(self, csv_file):
        f = csv_file(["user_id,sample_id,t,x,y,p", "u1,s1,0,0,0,1"])
        with pytest.raises(FormatError, match="'a'"):
            dataio.load_gesture_csv(f, print_msg=False)

    def test_bad_number(self, csv_file):
        f = csv_file([HEADER, "u1,s1,0,zero,0,1,1", "u1,s1,1,0,0,1,1"])
        with pytest.raises(FormatError, match="line 2"):
            dataio.load_gesture_csv(f, print_msg=False)

    def test_single_row_sample(self, csv_file):
        f = csv_file([HEADER, "u1,s1,0,0,0,1,1"])
        with pytest.raises(ValidationError):
            dataio.load_gesture_csv(f, print_msg=False)

    def test_column_adapter(self, csv_file):
        f = csv_file(["user ID,stroke ID,time[ms],x-coordinate,y-coordinate,"
                      "pressure,area covered",
                      "7,1,0,1,2,0.5,0.1", "7,1,8,2,3,0.6,0.1"])
        samples = dataio.load_gesture_csv(f, adapter="touchalytics",
                                          print_msg=False)
        assert samples[0].key == "7/1"
        np.testing.assert_allclose(samples[0].rows[1], [8, 2, 3, 0.6, 0.1])

    def test_header_quotes_and_case(self, csv_file):
        f = csv_file(['"User_ID", "Sample_ID",T,X,Y,P,A',
                      "u1,s1,0,0,0,1,1", "u1,s1,4,1,0,1,1"])
        samples = dataio.load_gesture_csv(f, print_msg=False)
        assert samples[0].key == "u1/s1"

    def test_write_then_read(self, tmp_path):
        data = [sample("a", "0"), sample("b", "1", n=3)]
        f = dataio.write_gesture_csv(data, str(tmp_path / "out.csv"))
        back = dataio.load_gesture_csv(f, print_msg=False)
        assert [s.key for s in back] == ["a/0", "b/1"]
        np.testing.assert_allclose(back[1].rows, data[1].rows, atol=1e-6)


class TestPreprocessing:
    def test_first_order_difference(self):
        rows = np.array([[100, 5, 1, 0, 0], [150, 5, 2, 0, 0],
                         [220, 5, 4, 0, 0]], dtype=float)
        diff = dataio.first_order_difference(rows)
        np.testing.assert_allclose(diff[:, 0], [0, 50, 70])
        np.testing.assert_allclose(diff[:, 1], [0, 0, 0])
        np.testing.assert_allclose(diff[:, 2], [0, 1, 2])

    def test_difference_of_single_row(self):
        diff = dataio.first_order_difference(np.ones((1, 5)))
        np.testing.assert_array_equal(diff, np.zeros((1, 3)))

    def test_zscore(self):
        np.testing.assert_allclose(dataio.zscore_normalize([1, 2, 3]),
                                   [-1.2247449, 0.0, 1.2247449], atol=1e-6)

    def test_zscore_constant(self):
        np.testing.assert_array_equal(dataio.zscore_normalize([4, 4, 4]),
                                      [0, 0, 0])

    def test_zscore_idempotent_on_standardized(self, rng):
        z = dataio.zscore_normalize(rng.normal(size=50))
        np.testing.assert_allclose(dataio.zscore_normalize(z), z, atol=1e-6)

    def test_only_pressure_and_area_standardized(self):
        feats = dataio.preprocess_features(sample("u", "s", n=5))
        np.testing.assert_allclose(feats[1:, 0], 10.0)
        assert feats[:, 3].mean() == pytest.approx(0.0, abs=1e-9)
        assert feats[:, 4].std() == pytest.approx(1.0)

    def test_pipeline_is_not_idempotent(self):
        s = sample("u", "s", n=6)
        once = dataio.preprocess_features(s)
        twice = dataio.preprocess_features(dataio.GestureSample("u", "s",
                                                                once))
        assert not np.allclose(once, twice)

    @pytest.mark.parametrize("T, pad_len, valid", [
        (9, 12, [True, True, False]),
        (8, 8, [True, True]),
        (10, 12, [True, True, True]),
    ])
    def test_pad_and_window_mask(self, T, pad_len, valid):
        out = dataio.pad_and_window_mask(np.ones((T, 5)), 4)
        assert out.pad_len == pad_len
        assert out.window_valid.tolist() == valid
        assert out.features.shape == (pad_len, 5)
        np.testing.assert_array_equal(out.features[T:], 0.0)

    def test_short_sample_keeps_one_valid_window(self):
        out = dataio.pad_and_window_mask(np.ones((2, 5)), 8)
        assert out.window_valid.tolist() == [True]

    def test_preprocess_sample(self):
        p = dataio.preprocess_sample(sample("u", "s", n=9), 4)
        assert p.key == "u/s"
        assert p.pad_len % 4 == 0 and p.pad_len >= p.length
        np.testing.assert_array_equal(p.features[0, :3], 0.0)

    def test_threads_give_same_result(self, tiny_samples):
        a = dataio.preprocess_samples(tiny_samples, 4, threads=0)
        b = dataio.preprocess_samples(tiny_samples, 4, threads=3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)


class TestPairs:
    def test_two_users_two_samples(self):
        data = [sample("a", "0"), sample("a", "1"), sample("b", "0"),
                sample("b", "1")]
        pairs = dataio.make_pairs(data, rng_seed=0, n_pairs=4)
        pos = [(a, b) for a, b, y in pairs if y == 1]
        neg = [(a, b) for a, b, y in pairs if y == 0]
        assert len(pos) == 2 and len(neg) == 2
        assert sorted(a.user_id for a, _ in pos) == ["a", "b"]
        assert all(a.user_id != b.user_id for a, b in neg)

    def test_labels_match_users(self, tiny_samples):
        pairs = dataio.make_pairs(tiny_samples, rng_seed=3, n_pairs=51)
        assert len(pairs) == 51
        assert int(pairs.labels().sum()) == 26
        for a, b, y in pairs:
            assert y == int(a.user_id == b.user_id)
            assert a is not b

    def test_empty(self, tiny_samples):
        assert len(dataio.make_pairs(tiny_samples, n_pairs=0)) == 0

    def test_deterministic(self, tiny_samples):
        one = dataio.make_pairs(tiny_samples, rng_seed=5, n_pairs=30)
        two = dataio.make_pairs(tiny_samples, rng_seed=5, n_pairs=30)
        assert [(a.key, b.key, y) for a, b, y in one] == \
            [(a.key, b.key, y) for a, b, y in two]

    def test_needs_two_users(self):
        with pytest.raises(DataError):
            dataio.make_pairs([sample("a", "0"), sample("a", "1")],
                              n_pairs=2)

    def test_needs_two_samples_per_user(self):
        with pytest.raises(DataError):
            dataio.make_pairs([sample("a", "0"), sample("a", "1"),
                               sample("b", "0")], n_pairs=2)


class TestSplit:
    def test_disjoint_and_per_user(self, tiny_samples):
        train, test = dataio.split_samples(tiny_samples, ratio=0.8, seed=1)
        keys_train = {s.key for s in train}
        keys_test = {s.key for s in test}
        assert not keys_train & keys_test
        assert len(keys_train | keys_test) == len(tiny_samples)
        assert {s.user_id for s in train} == {s.user_id for s in test}
        assert len(train) == 15 and len(test) == 3

    def test_two_per_side(self):
        data = [sample(u, str(k)) for u in "abc" for k in range(4)]
        train, test = dataio.split_samples(data, ratio=0.8, seed=0,
                                           min_side=2)
        for part in (train, test):
            assert sorted(s.user_id for s in part) == list("aabbcc")
        _, test_one = dataio.split_samples(data, ratio=0.8, seed=0)
        assert len(test_one) == 3

    def test_small_user_keeps_one_per_side(self):
        data = [sample("a", str(k)) for k in range(3)]
        train, test = dataio.split_samples(data, ratio=0.5, seed=0,
                                           min_side=2)
        assert len(train) == 2 and len(test) == 1

    def test_bad_min_side(self, tiny_samples):
        with pytest.raises(DataError):
            dataio.split_samples(tiny_samples, min_side=0)

    def test_manifest(self, tmp_path, tiny_samples):
        pairs = dataio.make_pairs(tiny_samples, rng_seed=2, n_pairs=10)
        f = dataio.write_pair_manifest(pairs, str(tmp_path / "p.jsonl"))
        first = json.loads(open(f).readline())
        assert set(first) == {"a", "b", "y"}
        back = dataio.read_pair_manifest(f, tiny_samples)
        assert [(a.key, b.key, y) for a, b, y in back] == \
            [(a.key, b.key, y) for a, b, y in pairs]

    def test_manifest_unknown_sample(self, tmp_path, tiny_samples):
        f = tmp_path / "p.jsonl"
        f.write_text('{"a": "nobody/0", "b": "user0/0", "y": 0}\n')
        with pytest.raises(DataError, match="nobody/0"):
            dataio.read_pair_manifest(str(f), tiny_samples)
