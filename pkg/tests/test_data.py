import numpy as np
import pytest

from protobft import data
from protobft.data import PartitionSpec
from protobft.errors import CapacityError, ConfigError


def blobs(J=10, per_class=200, seed=0, dim=4, spread=1.0):
    return data.generate_synthetic(J, dim, per_class, spread, seed)


def test_zero_spread_gives_class_means():
    ds = data.generate_synthetic(3, 5, 4, 0.0, seed=1)
    for j in range(3):
        rows = ds.features[ds.labels == j]
        assert np.all(rows == rows[0])


def test_dataset_counts():
    ds = data.generate_synthetic(2, 3, 50, 1.0, seed=2)
    assert len(ds) == 100
    assert np.bincount(ds.labels).tolist() == [50, 50]


def test_dataset_determinism():
    a, b = blobs(seed=5), blobs(seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, blobs(seed=6).features)


def test_class_means_separated():
    ds = data.generate_synthetic(6, 8, 400, 0.5, seed=3)
    means = np.stack([ds.features[ds.labels == j].mean(axis=0) for j in range(6)])
    d = np.linalg.norm(means[:, None] - means[None], axis=2)[np.triu_indices(6, 1)]
    assert d.min() > 0.9 * 4 * 0.5


def test_bad_generator_args():
    with pytest.raises(ConfigError):
        data.generate_synthetic(1, 3, 5, 1.0, 0)
    with pytest.raises(ConfigError):
        data.generate_synthetic(3, 3, 5, 1.0, 0, min_separation=2.0)


def test_iid_like_partition():
    shards = data.partition_non_iid(blobs(J=4), 5, PartitionSpec(avg=4, std=0, samples_per_class=10), 0)
    assert all(s.classes == (0, 1, 2, 3) for s in shards)


def test_single_client():
    (shard,) = data.partition_non_iid(blobs(), 1, PartitionSpec(3, 2, 10), 4)
    assert set(shard.train_y) | set(shard.test_y) == set(shard.classes)


def test_equal_samples_per_class_and_split():
    shards = data.partition_non_iid(blobs(), 20, PartitionSpec(3, 2, 10), 7)
    for s in shards:
        tr = np.bincount(s.train_y, minlength=10)[list(s.classes)]
        te = np.bincount(s.test_y, minlength=10)[list(s.classes)]
        assert np.all(tr == 8) and np.all(te == 2)


def test_no_sample_in_two_shards():
    shards = data.partition_non_iid(blobs(), 20, PartitionSpec(3, 2, 10), 11)
    idx = np.concatenate([np.concatenate([s.train_idx, s.test_idx]) for s in shards])
    assert len(idx) == len(np.unique(idx))


def test_partition_determinism():
    a = data.partition_non_iid(blobs(), 20, PartitionSpec(3, 2, 10), 3)
    b = data.partition_non_iid(blobs(), 20, PartitionSpec(3, 2, 10), 3)
    for x, y in zip(a, b):
        assert x.classes == y.classes
        np.testing.assert_array_equal(x.train_x, y.train_x)
        np.testing.assert_array_equal(x.test_idx, y.test_idx)


def test_capacity_error_and_replacement():
    ds = blobs(J=3, per_class=15)
    with pytest.raises(CapacityError):
        data.partition_non_iid(ds, 4, PartitionSpec(3, 0, 10), 0)
    shards = data.partition_non_iid(ds, 4, PartitionSpec(3, 0, 10, allow_replacement=True), 0)
    assert all(len(s.train_y) == 24 for s in shards)


def test_invalid_partition_spec():
    with pytest.raises(ConfigError):
        data.partition_non_iid(blobs(J=3), 2, PartitionSpec(avg=4), 0)
    with pytest.raises(ConfigError):
        data.partition_non_iid(blobs(), 0, PartitionSpec(), 0)


def test_class_count_moments_over_seeds():
    means, stds = [], []
    for seed in range(50):
        st = data.shard_stats(data.partition_non_iid(blobs(per_class=200), 20, PartitionSpec(3, 2, 10), seed))
        means.append(st.mean_classes)
        stds.append(st.std_classes)
    assert abs(np.mean(means) - 3) <= 0.7
    assert abs(np.mean(stds) - 2) <= 0.8


def make_shard(k, labels, n_test=0):
    labels = np.asarray(labels)
    return data.ClientShard(k, np.zeros((len(labels), 2)), labels, np.zeros((n_test, 2)),
                            np.zeros(n_test, dtype=int), tuple(sorted(set(labels.tolist()))))


def test_stats_small_cases():
    st = data.shard_stats([make_shard(0, [0, 1])])
    assert st.holders == {0: (0,), 1: (0,)}
    st = data.shard_stats([make_shard(0, [3] * 10), make_shard(1, [3] * 10)])
    assert st.class_totals[3] == 20
    assert st.holders[3] == (0, 1)


def test_stats_partition_identity():
    shards = data.partition_non_iid(blobs(), 20, PartitionSpec(3, 2, 10), 2)
    st = data.shard_stats(shards)
    assert sum(st.class_totals.values()) == sum(len(s.train_y) for s in shards)
    counts = [len(s.classes) for s in shards]
    assert st.mean_classes == pytest.approx(np.mean(counts))
    assert st.std_classes == pytest.approx(np.std(counts, ddof=1))


def test_restricted_stats():
    st = data.shard_stats([make_shard(0, [1, 1, 2]), make_shard(1, [1]), make_shard(2, [2, 2])])
    sub = st.restricted([0, 2])
    assert sub.holders == {1: (0,), 2: (0, 2)}
    assert sub.class_totals == {1: 2, 2: 3}


def test_shard_stats_empty():
    with pytest.raises(ValueError):
        data.shard_stats([])


def test_csv_round_trip_is_bitwise(tmp_path):
    shards = data.partition_non_iid(blobs(dim=6), 5, PartitionSpec(3, 2, 10), 9)
    path = tmp_path / "shards.csv"
    data.dump_shards_csv(shards, path)
    assert path.read_text().splitlines()[0] == "client_id,split,label,f0,f1,f2,f3,f4,f5"
    back = data.load_shards_csv(path)
    for a, b in zip(shards, back):
        assert a.client_id == b.client_id and a.classes == b.classes
        np.testing.assert_array_equal(a.train_x, b.train_x)
        np.testing.assert_array_equal(a.test_x, b.test_x)
        np.testing.assert_array_equal(a.train_y, b.train_y)
