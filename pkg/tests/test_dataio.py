"""Synthetic generator and dataset file-format tests."""

import numpy as np
import pytest
from scipy import stats

from decollab.container import FormatError, write_header
from decollab.dataio import (
    DATASET_MAGIC,
    SplitBundle,
    SyntheticConfig,
    TripletDataset,
    generate_synthetic,
    load_dataset,
    nearest_template_labels,
    save_dataset,
)


def oracle_nearest_template(C, templates):
    """Independent enumeration oracle: plain-python Hamming argmin."""
    labels = []
    for row in np.asarray(C):
        best_k, best_d = 0, None
        for k, t in enumerate(np.asarray(templates)):
            d = sum(int(a != b) for a, b in zip(row, t))
            if best_d is None or d < best_d:
                best_k, best_d = k, d
        labels.append(best_k)
    return np.array(labels)


def small_config(**overrides):
    defaults = dict(
        n_classes=6, n_concepts=10, n_features=16, n_train=400, n_val=100, n_test=300, seed=11
    )
    defaults.update(overrides)
    return SyntheticConfig(**defaults)


class TestGenerator:
    def test_same_seed_bitwise_identical(self):
        config = small_config(completeness=0.5)
        a = generate_synthetic(config)
        b = generate_synthetic(config)
        for name in ("train", "val", "test"):
            sa, sb = getattr(a, name), getattr(b, name)
            np.testing.assert_array_equal(sa.X, sb.X)
            np.testing.assert_array_equal(sa.C, sb.C)
            np.testing.assert_array_equal(sa.Y, sb.Y)

    def test_full_completeness_no_noise_labels_from_concepts(self):
        bundle = generate_synthetic(small_config(completeness=1.0, concept_noise=0.0))
        for name in ("train", "val", "test"):
            split = getattr(bundle, name)
            np.testing.assert_array_equal(oracle_nearest_template(split.C, bundle.templates), split.Y)

    def test_partial_completeness_oracle_accuracy(self):
        K = 10
        bundle = generate_synthetic(
            small_config(n_classes=K, n_concepts=12, n_test=1500, completeness=0.3, seed=23)
        )
        labels = oracle_nearest_template(bundle.test.C, bundle.templates)
        accuracy = float((labels == bundle.test.Y).mean())
        assert abs(accuracy - (0.3 + 0.7 / K)) <= 0.05

    def test_vectorized_nearest_template_matches_oracle(self):
        bundle = generate_synthetic(small_config(completeness=0.4))
        np.testing.assert_array_equal(
            nearest_template_labels(bundle.val.C, bundle.templates),
            oracle_nearest_template(bundle.val.C, bundle.templates),
        )

    def test_group_exclusivity(self):
        groups = [[0, 1, 2], [5, 6]]
        bundle = generate_synthetic(small_config(group_spec=groups, concept_noise=0.2, completeness=0.7))
        for name in ("train", "val", "test"):
            split = getattr(bundle, name)
            for g in groups:
                np.testing.assert_array_equal(split.C[:, g].sum(axis=1), np.ones(split.n))

    def test_label_marginal_roughly_uniform(self):
        config = small_config(n_classes=10, n_concepts=12, n_train=6000, completeness=0.4, seed=31)
        bundle = generate_synthetic(config)
        counts = np.bincount(bundle.train.Y, minlength=10)
        expected = bundle.train.n / 10
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < stats.chi2.ppf(0.999, df=9)

    def test_completeness_monotonicity(self):
        accs = []
        for kappa in (0.2, 0.5, 0.8):
            bundle = generate_synthetic(
                small_config(n_classes=10, n_concepts=12, n_test=1200, completeness=kappa, seed=17)
            )
            labels = oracle_nearest_template(bundle.test.C, bundle.templates)
            accs.append(float((labels == bundle.test.Y).mean()))
        assert accs[0] <= accs[1] <= accs[2]

    def test_infeasible_config_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic(small_config(n_classes=40, n_concepts=5))
        with pytest.raises(ValueError):
            SyntheticConfig(n_classes=10, n_concepts=3, completeness=1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            small_config(concept_noise=1.5)
        with pytest.raises(ValueError):
            small_config(n_train=0)
        with pytest.raises(ValueError):
            small_config(group_spec=[[0, 0]])
        with pytest.raises(ValueError):
            small_config(group_spec=[[0, 1], [1, 2]])


class TestDatasetFile:
    def test_round_trip_is_bitwise_identity(self, tmp_path):
        bundle = generate_synthetic(small_config(completeness=0.6, group_spec=[[2, 3]]))
        path = tmp_path / "bundle.dcds"
        save_dataset(bundle, path)
        loaded = load_dataset(path)
        assert loaded.seed == bundle.seed
        for name in ("train", "val", "test"):
            a, b = getattr(bundle, name), getattr(loaded, name)
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.C, b.C)
            np.testing.assert_array_equal(a.Y, b.Y)
            assert a.n_classes == b.n_classes

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dcds"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(FormatError) as err:
            load_dataset(path)
        assert err.value.code == "malformed_header"

    def test_truncated_payload_rejected(self, tmp_path):
        bundle = generate_synthetic(small_config())
        path = tmp_path / "bundle.dcds"
        save_dataset(bundle, path)
        raw = path.read_bytes()
        (tmp_path / "cut.dcds").write_bytes(raw[: len(raw) - 100])
        with pytest.raises(FormatError) as err:
            load_dataset(tmp_path / "cut.dcds")
        assert err.value.code == "truncated_payload"

    def test_declared_rows_exceeding_payload_rejected(self, tmp_path):
        # header says N=10 but only 9 rows of payload follow
        path = tmp_path / "short.dcds"
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            write_header(
                fh,
                {"n": "10", "feature_dim": "2", "concept_dim": "2", "n_classes": "2", "split": "train", "seed": "0"},
            )
            fh.write(np.zeros((9, 2)).tobytes())
        with pytest.raises(FormatError) as err:
            load_dataset(path)
        assert err.value.code == "truncated_payload"

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "mismatch.dcds"
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            for name, d_feat in (("train", 2), ("val", 3), ("test", 2)):
                write_header(
                    fh,
                    {
                        "n": "1",
                        "feature_dim": str(d_feat),
                        "concept_dim": "2",
                        "n_classes": "2",
                        "split": name,
                        "seed": "0",
                    },
                )
                fh.write(np.zeros((1, d_feat), dtype="<f8").tobytes())
                fh.write(np.zeros((1, 2), dtype=np.uint8).tobytes())
                fh.write(np.zeros(1, dtype="<u4").tobytes())
        with pytest.raises(FormatError) as err:
            load_dataset(path)
        assert err.value.code == "dimension_mismatch"

    def test_split_invariants_enforced(self):
        a = TripletDataset(np.zeros((2, 3)), np.zeros((2, 2), dtype=int), np.zeros(2, dtype=int), 2)
        b = TripletDataset(np.zeros((2, 4)), np.zeros((2, 2), dtype=int), np.zeros(2, dtype=int), 2)
        with pytest.raises(ValueError):
            SplitBundle(train=a, val=b, test=a, seed=0)

    def test_triplet_validation(self):
        with pytest.raises(ValueError):
            TripletDataset(np.zeros((2, 3)), np.full((2, 2), 2), np.zeros(2, dtype=int), 2)
        with pytest.raises(ValueError):
            TripletDataset(np.zeros((2, 3)), np.zeros((2, 2), dtype=int), np.array([0, 5]), 2)
