import gzip
import struct

import numpy as np
import pytest

from deepmr import data, deepnet, rbm
from deepmr.errors import (ChecksumError, FormatError, IntegrityError,
                           TruncationError, VersionError)


def write_fixture_idx(tmp_path, pixels, labels=None):
    """Byte-level IDX fixture written here, independent of the package's
    own writers."""
    n, rows, cols = pixels.shape
    img_path = tmp_path / "imgs-idx3-ubyte"
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(pixels.astype(np.uint8).tobytes())
    lab_path = None
    if labels is not None:
        lab_path = tmp_path / "labs-idx1-ubyte"
        with open(lab_path, "wb") as f:
            f.write(struct.pack(">II", 0x00000801, len(labels)))
            f.write(bytes(labels))
    return img_path, lab_path


def test_idx_fixture_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    img, lab = write_fixture_idx(tmp_path, pixels, [3, 9])
    ds = data.load_idx(img, lab)
    assert len(ds) == 2
    assert ds.image_rows == 28 and ds.image_cols == 28
    for i, case in enumerate(ds.cases):
        assert case.case_id == i
        assert np.array_equal(case.pixels, pixels[i].reshape(-1) / 255.0)
    assert [c.label for c in ds.cases] == [3, 9]
    assert all(0.0 <= p <= 1.0 for c in ds.cases for p in c.pixels)


def test_idx_gzip_transparent(tmp_path):
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(3, 28, 28), dtype=np.uint8)
    img, _ = write_fixture_idx(tmp_path, pixels)
    gz = tmp_path / "imgs-idx3-ubyte.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    ds = data.load_idx(gz)
    assert len(ds) == 3
    assert np.array_equal(ds.cases[2].pixels, pixels[2].reshape(-1) / 255.0)


def test_idx_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(struct.pack(">IIII", 0xdead, 1, 28, 28) + b"\x00" * 784)
    with pytest.raises(FormatError, match="byte 0"):
        data.load_idx(path)


def test_idx_truncation_reports_offset(tmp_path):
    path = tmp_path / "short"
    path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 28, 28) + b"\x00" * 100)
    with pytest.raises(FormatError, match="truncated at byte 116"):
        data.load_idx(path)


def test_idx_count_mismatch(tmp_path):
    rng = np.random.default_rng(2)
    pixels = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    img, lab = write_fixture_idx(tmp_path, pixels, [1, 2, 3])
    with pytest.raises(IntegrityError, match="2 images but 3 labels"):
        data.load_idx(img, lab)


def _random_net():
    layers = [rbm.randomize_weights(8, 5, seed=1, layer=0),
              rbm.randomize_weights(5, 3, seed=2, layer=1),
              rbm.randomize_weights(3, 2, seed=3, layer=2)]
    return deepnet.NetworkWeights(layers, mode="stack")


def test_weight_file_roundtrip(tmp_path):
    net = _random_net()
    path = tmp_path / "w.weights"
    data.save_weights(path, net)
    back = data.load_weights(path)
    assert back.mode == net.mode
    assert back.encoder_depth == net.encoder_depth
    for a, b in zip(net.layers, back.layers):
        assert a.layer == b.layer
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.vbias, b.vbias)
        assert np.array_equal(a.hbias, b.hbias)


def test_weight_file_roundtrip_preserves_unrolled_meta(tmp_path):
    net = deepnet.unroll(_random_net())
    path = tmp_path / "ae.weights"
    data.save_weights(path, net)
    back = data.load_weights(path)
    assert back.mode == "autoencoder"
    assert back.encoder_depth == 3
    # a saved file from a trained run still drives inference
    x = np.random.default_rng(5).random(8)
    assert np.array_equal(deepnet.encode(back, x), deepnet.encode(net, x))


def test_weight_file_corruption_detected(tmp_path):
    path = tmp_path / "w.weights"
    data.save_weights(path, _random_net())
    raw = bytearray(path.read_bytes())
    raw[60] ^= 0x40  # flip one payload bit
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        data.load_weights(path)


def test_weight_file_truncation_detected(tmp_path):
    path = tmp_path / "w.weights"
    data.save_weights(path, _random_net())
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncationError):
        data.load_weights(path)


def test_weight_file_version_detected(tmp_path):
    path = tmp_path / "w.weights"
    data.save_weights(path, _random_net())
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 8, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        data.load_weights(path)


def test_weight_file_magic_detected(tmp_path):
    path = tmp_path / "w.weights"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(FormatError):
        data.load_weights(path)


def test_subset_deterministic_and_stratified(train_dataset):
    a = data.subset(train_dataset, 500, seed=3)
    b = data.subset(train_dataset, 500, seed=3)
    assert [c.case_id for c in a.cases] == [c.case_id for c in b.cases]
    c = data.subset(train_dataset, 500, seed=4)
    assert [x.case_id for x in a.cases] != [x.case_id for x in c.cases]

    counts = np.bincount([x.label for x in a.cases], minlength=10)
    source = np.bincount([x.label for x in train_dataset.cases], minlength=10)
    for cls in range(10):
        want = 500 * source[cls] / len(train_dataset.cases)
        assert abs(counts[cls] - want) <= 0.02 * 500


def test_subset_range_error(train_dataset):
    with pytest.raises(ValueError, match="subset"):
        data.subset(train_dataset, len(train_dataset.cases) + 1, seed=0)


def test_subset_preserves_case_ids(train_dataset):
    sub = data.subset(train_dataset, 50, seed=5)
    for case in sub.cases:
        original = train_dataset.cases[case.case_id]
        assert np.array_equal(case.pixels, original.pixels)
        assert case.label == original.label


def test_binarize(train_dataset):
    sub = data.subset(train_dataset, 20, seed=6)
    binary = data.binarize(sub, seed=1)
    values = np.unique(np.concatenate([c.pixels for c in binary.cases]))
    assert set(values) <= {0.0, 1.0}
    again = data.binarize(sub, seed=1)
    assert all(np.array_equal(a.pixels, b.pixels)
               for a, b in zip(binary.cases, again.cases))
