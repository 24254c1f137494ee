import numpy as np
import pytest

from quad.data import (DataError, DatasetSpec, MultimodalDataset, NoiseSpec, NonNumericCell, RowCountMismatch,
                       Standardizer, UnseenLabel, generate_synthetic, inject_noise, load_tabular, prepare,
                       read_tabular, split, write_tabular)


def small(seed=0, n=200, sep=2.0):
    return generate_synthetic(DatasetSpec(2, 3, (4, 5), n, (sep, sep), seed))


def nearest_centroid_accuracy(train, test):
    # oracle: distances to per-class means, summed over modalities
    score = np.zeros((len(test), train.n_classes))
    for xtr, xte in zip(train.modalities, test.modalities):
        means = np.stack([xtr[train.labels == c].mean(axis=0) for c in range(train.n_classes)])
        score += ((xte[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(score.argmin(axis=1) == test.labels))


def test_spec_validation():
    with pytest.raises(DataError):
        DatasetSpec(n_classes=1).validate()
    with pytest.raises(DataError):
        DatasetSpec(2, 2, (3,), 10, (1.0, 1.0)).validate()
    with pytest.raises(DataError):
        DatasetSpec(1, 4, (3,), 3, (1.0,)).validate()
    with pytest.raises(DataError):
        generate_synthetic(DatasetSpec(1, 2, (0,), 10, (1.0,)))


def test_generation_is_deterministic():
    a, b = small(3), small(3)
    assert a.fingerprint() == b.fingerprint()
    assert all(np.array_equal(x, y) for x, y in zip(a.modalities, b.modalities))
    assert small(4).fingerprint() != a.fingerprint()


def test_labels_balanced_within_one():
    ds = generate_synthetic(DatasetSpec(1, 3, (2,), 101, (1.0,), 0))
    counts = np.bincount(ds.labels)
    assert counts.max() - counts.min() <= 1


def test_zero_separation_is_chance_level():
    ds = generate_synthetic(DatasetSpec(2, 4, (8, 8), 4000, (0.0, 0.0), 1))
    tr, _, te = split(ds, (0.5, 0.25, 0.25), 0)
    assert abs(nearest_centroid_accuracy(tr, te) - 0.25) < 0.05


def test_separable_set_nearest_centroid_oracle():
    ds = generate_synthetic(DatasetSpec())
    tr, _, te = split(ds, (0.6, 0.2, 0.2), 0)
    assert nearest_centroid_accuracy(tr, te) >= 0.99


def test_dataset_is_read_only():
    ds = small()
    with pytest.raises(ValueError):
        ds.modalities[0][0, 0] = 1.0


def test_dataset_rejects_nan():
    with pytest.raises(DataError):
        MultimodalDataset((np.array([[np.nan]]),), np.array([0]), 2)


def test_sample_view():
    ds = small()
    s = ds.sample(5)
    assert len(s.features) == 2 and s.label == ds.labels[5]


# noise ---------------------------------------------------------------------------

def test_zero_sigma_is_identity():
    ds = small()
    out = inject_noise(ds, NoiseSpec((0, 1), 0.0, 1.0, 0))
    assert out.fingerprint() == ds.fingerprint()


def test_fraction_half_modifies_floor_half():
    ds = small(n=201)
    out = inject_noise(ds, NoiseSpec((0,), 1.0, 0.5, 0))
    changed = np.any(out.modalities[0] != ds.modalities[0], axis=1)
    assert changed.sum() == 100
    assert np.array_equal(out.noised, changed)
    # untouched rows and untouched modalities are bit-identical
    assert np.array_equal(out.modalities[0][~changed], ds.modalities[0][~changed])
    assert np.array_equal(out.modalities[1], ds.modalities[1])


def test_noise_scale_sample_statistics():
    ds = generate_synthetic(DatasetSpec(1, 2, (8,), 1000, (1.0,), 0))
    out = inject_noise(ds, NoiseSpec((0,), 5.0, 1.0, 1))
    resid = out.modalities[0] - ds.modalities[0]
    assert 4.8 <= resid.std() <= 5.2


def test_noise_composition_adds_in_quadrature():
    ds = generate_synthetic(DatasetSpec(1, 2, (8,), 1000, (1.0,), 0))
    once = inject_noise(ds, NoiseSpec((0,), 3.0, 1.0, 1))
    twice = inject_noise(once, NoiseSpec((0,), 4.0, 1.0, 2))
    assert inject_noise(twice, NoiseSpec((0,), 0.0)).fingerprint() == twice.fingerprint()
    resid = (twice.modalities[0] - ds.modalities[0]).std()
    assert abs(resid - 5.0) <= 0.05 * 5.0


def test_noise_rejects_bad_spec():
    with pytest.raises(DataError):
        inject_noise(small(), NoiseSpec((0,), -1.0))
    with pytest.raises(DataError):
        inject_noise(small(), NoiseSpec((7,), 1.0))


# splits ---------------------------------------------------------------------------

def test_split_sizes_and_partition():
    ds = generate_synthetic(DatasetSpec(1, 2, (2,), 100, (1.0,), 0))
    parts = split(ds, (0.8, 0.1, 0.1), 0)
    assert [len(p) for p in parts] == [80, 10, 10]
    rows = np.concatenate([p.modalities[0] for p in parts])
    assert len(np.unique(rows, axis=0)) == 100


def test_split_is_seeded():
    ds = small()
    a, b = split(ds, (0.6, 0.2, 0.2), 5), split(ds, (0.6, 0.2, 0.2), 5)
    assert all(x.fingerprint() == y.fingerprint() for x, y in zip(a, b))


def test_split_is_stratified():
    ds = generate_synthetic(DatasetSpec(1, 3, (2,), 301, (1.0,), 2))
    train = split(ds, (0.7, 0.15, 0.15), 1)[0]
    glob = np.bincount(ds.labels) / len(ds)
    assert np.all(np.abs(np.bincount(train.labels) - glob * len(train)) <= 1.0)


def test_split_errors():
    ds = generate_synthetic(DatasetSpec(1, 2, (2,), 4, (1.0,), 0))
    with pytest.raises(DataError):
        split(ds, (0.5, 0.2, 0.2, 0.1), 0)
    with pytest.raises(DataError):
        split(ds, (0.5, 0.4), 0)


# normalisation -------------------------------------------------------------------

def test_standardizer_train_only_statistics():
    ds = small(n=300)
    sp = prepare(ds, (0.6, 0.2, 0.2), 0)
    tr, va, te = split(ds, (0.6, 0.2, 0.2), 0)
    bumped = MultimodalDataset(tuple(x + 100.0 for x in te.modalities), te.labels, te.n_classes)
    a = Standardizer.fit(tr)
    b = Standardizer.fit(tr)
    bumped_scaled = a.transform(bumped)
    assert all(np.array_equal(m1, m2) for m1, m2 in zip(a.means, b.means))
    assert all(np.array_equal(m1, m2) for m1, m2 in zip(a.means, sp.scaler.means))
    assert np.allclose(sp.train.modalities[0].mean(axis=0), 0.0, atol=1e-12)
    assert not np.allclose(bumped_scaled.modalities[0].mean(axis=0), 0.0)


def test_constant_column_maps_to_zero():
    x = np.column_stack([np.full(10, 3.0), np.arange(10.0)])
    ds = MultimodalDataset((x,), np.arange(10) % 2, 2)
    sc = Standardizer.fit(ds)
    assert sc.stds[0][0] == 1.0
    assert np.all(sc.transform(ds).modalities[0][:, 0] == 0.0)


def test_centers_follow_the_scaler():
    ds = small()
    sp = prepare(ds, (0.6, 0.2, 0.2), 0)
    expect = (ds.centers[1] - sp.scaler.means[1]) / sp.scaler.stds[1]
    assert np.allclose(sp.train.centers[1], expect)


# tabular input ---------------------------------------------------------------------

def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in r) for r in rows) + "\n", encoding="utf-8")


def test_three_files_ten_rows(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for m in range(3):
        p = tmp_path / f"m{m}.csv"
        write_csv(p, rng.standard_normal((10, 2 + m)).round(4).tolist())
        paths.append(p)
    write_csv(tmp_path / "y.csv", [[v] for v in [0, 1] * 5])
    ds = read_tabular(paths, tmp_path / "y.csv")
    assert len(ds) == 10 and ds.n_modalities == 3 and ds.dims == (2, 3, 4)


def test_row_count_mismatch_names_files(tmp_path):
    write_csv(tmp_path / "a.csv", [[1, 2]] * 10)
    write_csv(tmp_path / "b.csv", [[1, 2]] * 9)
    write_csv(tmp_path / "y.csv", [[0]] * 10)
    with pytest.raises(RowCountMismatch) as err:
        read_tabular([tmp_path / "a.csv", tmp_path / "b.csv"], tmp_path / "y.csv")
    assert "b.csv=9" in str(err.value) and "a.csv=10" in str(err.value)


def test_non_numeric_cell_location(tmp_path):
    write_csv(tmp_path / "a.csv", [[1, 2], [3, "x"]])
    write_csv(tmp_path / "y.csv", [[0], [1]])
    with pytest.raises(NonNumericCell, match="row 2, column 2"):
        read_tabular([tmp_path / "a.csv"], tmp_path / "y.csv")


def test_header_and_delimiter(tmp_path):
    (tmp_path / "a.tsv").write_text("f1\tf2\n1\t2\n3\t4\n", encoding="utf-8")
    (tmp_path / "y.tsv").write_text("label\n5\n9\n", encoding="utf-8")
    ds = read_tabular([tmp_path / "a.tsv"], tmp_path / "y.tsv", delimiter="\t", header=True)
    assert ds.modalities[0].tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert ds.labels.tolist() == [0, 1]


def test_unseen_label_at_test_time(tmp_path):
    rows = [[float(i)] for i in range(9)]
    write_csv(tmp_path / "a.csv", rows)
    write_csv(tmp_path / "y.csv", [[0], [0], [0], [1], [1], [1], [0], [1], [2]])
    with pytest.raises(DataError):
        load_tabular([tmp_path / "a.csv"], tmp_path / "y.csv", (0.6, 0.2, 0.2))
    ds = read_tabular([tmp_path / "a.csv"], tmp_path / "y.csv")
    tr = ds.subset(np.arange(8))
    from quad.data import check_labels_seen
    with pytest.raises(UnseenLabel):
        check_labels_seen(tr, ds)


def test_tabular_round_trip(tmp_path):
    ds = small(n=30)
    paths = write_tabular(ds, tmp_path)
    back = read_tabular(paths[:-1], paths[-1])
    assert back.fingerprint() == ds.fingerprint()
