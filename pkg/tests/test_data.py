import struct

import numpy as np
import pytest

from bnnkit.data import (
    Dataset,
    SplitConfig,
    batches,
    blobs_with_test,
    load_idx,
    split,
    steps_per_epoch,
    synth_blobs,
    write_idx,
)
from bnnkit.errors import BadMagicError, CountMismatchError, TruncatedFileError
from bnnkit.mlp import Mlp, MlpSpec
from bnnkit.sgd import SgdConfig, fit_sgd
from bnnkit.params import FlatParams


def byte_dataset(n=20, d=7, k=4, seed=0):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(n, d), dtype=np.uint8)
    labels = rng.integers(0, k, size=n)
    return Dataset(pixels.astype(np.float64) / 255.0, labels, k)


class TestIdx:
    def test_roundtrip_exact_from_bytes(self, tmp_path):
        ds = byte_dataset()
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        back = load_idx(tmp_path / "img", tmp_path / "lab")
        assert (back.labels == ds.labels).all()
        np.testing.assert_array_equal(back.inputs, ds.inputs)

    def test_roundtrip_quantized(self, tmp_path):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.uniform(size=(10, 5)), rng.integers(0, 3, 10), 3)
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        back = load_idx(tmp_path / "img", tmp_path / "lab")
        assert np.abs(back.inputs - ds.inputs).max() <= 0.5 / 255.0 + 1e-12

    def test_bad_image_magic(self, tmp_path):
        (tmp_path / "img").write_bytes(struct.pack(">IIII", 0xDEADBEEF, 1, 1, 1) + b"\x00")
        (tmp_path / "lab").write_bytes(struct.pack(">II", 0x00000801, 1) + b"\x00")
        with pytest.raises(BadMagicError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_bad_label_magic(self, tmp_path):
        ds = byte_dataset(4)
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        raw = bytearray((tmp_path / "lab").read_bytes())
        raw[:4] = struct.pack(">I", 0x00000999)
        (tmp_path / "lab").write_bytes(bytes(raw))
        with pytest.raises(BadMagicError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_truncated_images(self, tmp_path):
        ds = byte_dataset(4)
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-3])
        with pytest.raises(TruncatedFileError):
            load_idx(tmp_path / "img", tmp_path / "lab")

    def test_count_mismatch(self, tmp_path):
        ds = byte_dataset(4)
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        other = byte_dataset(5)
        write_idx(other, tmp_path / "img5", tmp_path / "lab5")
        with pytest.raises(CountMismatchError):
            load_idx(tmp_path / "img", tmp_path / "lab5")

    def test_gzip_transparent(self, tmp_path):
        import gzip

        ds = byte_dataset(6)
        write_idx(ds, tmp_path / "img", tmp_path / "lab")
        for name in ("img", "lab"):
            raw = (tmp_path / name).read_bytes()
            with gzip.open(tmp_path / f"{name}.gz", "wb") as fh:
                fh.write(raw)
        back = load_idx(tmp_path / "img.gz", tmp_path / "lab.gz")
        assert (back.labels == ds.labels).all()


class TestBlobs:
    def test_deterministic(self):
        a = synth_blobs(3, 10, 5, 0.2, 9)
        b = synth_blobs(3, 10, 5, 0.2, 9)
        assert (a.inputs == b.inputs).all() and (a.labels == b.labels).all()

    def test_size(self):
        ds = synth_blobs(4, 7, 3, 0.2, 0)
        assert len(ds) == 28

    def test_nearly_separable_clusters_fit_perfectly(self):
        # spread -> 0 gives point clusters; a linear softmax model nails them
        ds = synth_blobs(2, 30, 6, 1e-4, 5)
        model = Mlp(MlpSpec(6, (), 2))
        theta0 = FlatParams(model.init_values(0), model.layout)
        theta = fit_sgd(model, theta0, ds, ds, SgdConfig(lr=0.5, epochs=60, batch_size=16))
        assert model.dataset_error(theta.values, ds) == 0.0

    def test_train_test_share_means(self):
        pool, test = blobs_with_test(3, 8, 4, 5, 0.2, 3)
        assert len(pool) == 24 and len(test) == 12
        # class means of the two shares nearly coincide (same clusters)
        for c in range(3):
            mp = pool.inputs[pool.labels == c].mean(axis=0)
            mt = test.inputs[test.labels == c].mean(axis=0)
            assert np.linalg.norm(mp - mt) < 0.5


class TestSplit:
    def test_half_split_sizes(self):
        ds = synth_blobs(2, 5, 3, 0.2, 0)  # N=10
        train, valid = split(ds, SplitConfig(0.5, 1))
        assert len(train) == 5 and len(valid) == 5

    def test_deterministic(self):
        ds = synth_blobs(2, 6, 3, 0.2, 0)
        a = split(ds, SplitConfig(0.6, 4))
        b = split(ds, SplitConfig(0.6, 4))
        assert (a[0].inputs == b[0].inputs).all()
        assert (a[1].labels == b[1].labels).all()

    def test_exact_coverage(self):
        ds = synth_blobs(3, 7, 4, 0.2, 2)
        train, valid = split(ds, SplitConfig(0.4, 8))
        joined = np.vstack([train.inputs, valid.inputs])
        assert joined.shape[0] == len(ds)
        # every original row appears exactly once
        order = np.lexsort(joined.T)
        base = np.lexsort(ds.inputs.T)
        np.testing.assert_array_equal(joined[order], ds.inputs[base])


class TestBatches:
    def test_short_last_batch(self):
        ds = synth_blobs(5, 1, 3, 0.2, 0)  # N=5
        sizes = [len(b) for b in batches(ds, 2, 0, 0)]
        assert sizes == [2, 2, 1]

    def test_labels_are_permutation(self):
        ds = synth_blobs(3, 4, 3, 0.2, 0)
        got = np.concatenate([b.labels for b in batches(ds, 4, 7, 0)])
        assert sorted(got.tolist()) == sorted(ds.labels.tolist())

    def test_epoch_changes_permutation(self):
        ds = synth_blobs(3, 10, 3, 0.2, 0)
        e0 = np.concatenate([b.inputs for b in batches(ds, 8, 7, 0)])
        e1 = np.concatenate([b.inputs for b in batches(ds, 8, 7, 1)])
        assert not (e0 == e1).all()

    def test_steps_per_epoch(self):
        assert steps_per_epoch(5, 2) == 3
        assert steps_per_epoch(4, 2) == 2
