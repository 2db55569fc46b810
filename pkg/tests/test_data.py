import gzip
import hashlib
import logging
import os
import struct

import numpy as np
import pytest

from varinit.core import RandomSource
from varinit.data import (CIFAR_RECORD, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Dataset, FormatError, batches,
                          data_root, decode_cifar_records, encode_cifar_record, holdout_split,
                          load_cifar10_binary, load_dataset, load_mnist_idx, read_idx, standardize,
                          toy_mnist)


def idx_bytes(arr: np.ndarray, magic: int) -> bytes:
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.astype(np.uint8).tobytes()


def write_mnist(dirpath, n_train=12, n_test=5, gz=False):
    rng = RandomSource(0)
    arrays = {}
    for prefix, n in (("train", n_train), ("t10k", n_test)):
        imgs = rng.integers(0, 256, (n, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        arrays[prefix] = (imgs, labels)
        for suffix, arr, magic in (("images-idx3-ubyte", imgs, IDX_IMAGES_MAGIC),
                                   ("labels-idx1-ubyte", labels, IDX_LABELS_MAGIC)):
            raw = idx_bytes(arr, magic)
            name = os.path.join(dirpath, f"{prefix}-{suffix}")
            if gz:
                with gzip.open(name + ".gz", "wb") as fh:
                    fh.write(raw)
            else:
                with open(name, "wb") as fh:
                    fh.write(raw)
    return arrays


@pytest.mark.parametrize("gz", [False, True])
def test_mnist_fixture_round_trip(tmp_path, gz):
    arrays = write_mnist(tmp_path, gz=gz)
    train, test = load_mnist_idx(str(tmp_path))
    assert train.images.shape == (12, 784) and test.images.shape == (5, 784)
    np.testing.assert_array_equal(train.images, arrays["train"][0].reshape(12, -1) / 255.0)
    np.testing.assert_array_equal(test.labels, arrays["t10k"][1])
    assert train.images.min() >= 0.0 and train.images.max() <= 1.0


def test_mnist_subdirectory_is_found(tmp_path):
    os.mkdir(tmp_path / "mnist")
    write_mnist(tmp_path / "mnist")
    train, _ = load_dataset("mnist", str(tmp_path))
    assert len(train) == 12


def test_idx_truncated_payload(tmp_path):
    raw = idx_bytes(np.zeros((4, 3, 3)), IDX_IMAGES_MAGIC)
    p = tmp_path / "t"
    p.write_bytes(raw[:-5])
    with pytest.raises(FormatError) as e:
        read_idx(str(p), IDX_IMAGES_MAGIC)
    assert e.value.offset == len(raw) - 5


def test_idx_truncated_header(tmp_path):
    p = tmp_path / "t"
    p.write_bytes(b"\x00\x00\x08")
    with pytest.raises(FormatError) as e:
        read_idx(str(p), IDX_IMAGES_MAGIC)
    assert e.value.offset == 3


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "t"
    p.write_bytes(idx_bytes(np.zeros(4), IDX_LABELS_MAGIC))
    with pytest.raises(FormatError) as e:
        read_idx(str(p), IDX_IMAGES_MAGIC)
    assert e.value.offset == 0
    assert str(p) in str(e.value)


def test_missing_files_raise_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist_idx(str(tmp_path))


def cifar_bytes(n, seed=0):
    rng = RandomSource(seed)
    imgs = rng.integers(0, 256, (n, 32, 32, 3)).astype(np.uint8)
    labels = rng.integers(0, 10, n)
    return b"".join(encode_cifar_record(i, int(l)) for i, l in zip(imgs, labels)), imgs, labels


def test_cifar_channel_major_decoding():
    img = np.zeros((32, 32, 3), dtype=np.uint8)
    img[0, 1, 2] = 200  # blue channel, row 0, column 1
    raw = encode_cifar_record(img, 4)
    assert raw[0] == 4 and raw[1 + 2048 + 1] == 200
    imgs, labels = decode_cifar_records(raw)
    assert labels.tolist() == [4] and imgs[0, 0, 1, 2] == 200


def test_cifar_record_round_trip():
    raw, imgs, labels = cifar_bytes(3)
    dec, lab = decode_cifar_records(raw)
    assert np.array_equal(dec, imgs) and np.array_equal(lab, labels)
    assert encode_cifar_record(dec[1], int(lab[1])) == raw[CIFAR_RECORD:2 * CIFAR_RECORD]


def test_cifar_size_mismatch():
    raw, _, _ = cifar_bytes(2)
    with pytest.raises(FormatError) as e:
        decode_cifar_records(raw[:-7])
    assert e.value.offset == CIFAR_RECORD


def test_cifar_bad_label():
    raw, _, _ = cifar_bytes(3)
    bad = bytearray(raw)
    bad[2 * CIFAR_RECORD] = 10
    with pytest.raises(FormatError) as e:
        decode_cifar_records(bytes(bad))
    assert e.value.offset == 2 * CIFAR_RECORD


def test_cifar_fixture_loader(tmp_path):
    d = tmp_path / "cifar-10-batches-bin"
    d.mkdir()
    for i in range(1, 6):
        (d / f"data_batch_{i}.bin").write_bytes(cifar_bytes(2, seed=i)[0])
    (d / "test_batch.bin").write_bytes(cifar_bytes(3, seed=9)[0])
    train, test = load_cifar10_binary(str(tmp_path))
    assert train.images.shape == (10, 32, 32, 3) and test.images.shape == (3, 32, 32, 3)
    assert train.labels.max() < 10 and 0.0 <= train.images.min() and train.images.max() <= 1.0


def _have_mnist():
    for d in (os.path.join(data_root(), "mnist"), data_root()):
        if any(os.path.exists(os.path.join(d, "train-images-idx3-ubyte" + s)) for s in ("", ".gz")):
            return True
    return False


REAL_MNIST = _have_mnist()


@pytest.mark.skipif(not REAL_MNIST, reason="MNIST files not present under the data root")
def test_official_mnist_shapes():
    train, test = load_dataset("mnist")
    assert train.images.shape == (60000, 784) and test.images.shape == (10000, 784)


@pytest.mark.skipif(not os.path.isdir(os.path.join(data_root(), "cifar-10-batches-bin")),
                    reason="CIFAR-10 files not present under the data root")
def test_official_cifar_shapes():
    train, test = load_dataset("cifar10")
    assert train.images.shape == (50000, 32, 32, 3) and test.images.shape == (10000, 32, 32, 3)


def test_standardize_train_and_test(caplog):
    rng = RandomSource(1)
    x = rng.standard_normal((200, 5)) * 3 + 2
    x[:, 3] = 7.0
    tr = Dataset(x, np.zeros(200, dtype=np.int64))
    with caplog.at_level(logging.WARNING):
        z, stats = standardize(tr)
    assert "constant" in caplog.text
    assert np.abs(z.images.mean(axis=0)).max() < 1e-10
    assert np.all(z.images[:, 3] == 0.0) and stats.scale[3] == 1.0
    te = Dataset(rng.standard_normal((50, 5)) * 3 + 2, np.zeros(50, dtype=np.int64))
    zt, _ = standardize(te, stats)
    assert np.abs(zt.images.mean(axis=0)).max() > 1e-3


def test_batches():
    ds = Dataset(np.arange(100.0)[:, None], np.zeros(100, dtype=np.int64))
    assert [len(y) for _, y in batches(ds, 64)] == [64, 36]
    natural = np.concatenate([x[:, 0] for x, _ in batches(ds, 64)])
    assert np.array_equal(natural, np.arange(100.0))
    a = np.concatenate([x[:, 0] for x, _ in batches(ds, 10, shuffle=True, seed=3)])
    b = np.concatenate([x[:, 0] for x, _ in batches(ds, 10, shuffle=True, seed=3)])
    assert np.array_equal(a, b) and not np.array_equal(a, natural)
    assert sorted(a) == list(natural)


def test_holdout_split_sizes_and_disjointness():
    n = 60000
    ds = Dataset(np.arange(n, dtype=np.float64)[:, None], np.zeros(n, dtype=np.int64))
    tr, va = holdout_split(ds, 5000, seed=0)
    assert (len(tr), len(va)) == (55000, 5000)
    ids_tr, ids_va = set(tr.images[:, 0]), set(va.images[:, 0])
    assert not ids_tr & ids_va and len(ids_tr | ids_va) == n
    tr2, va2 = holdout_split(ds, 5000, seed=0)
    assert np.array_equal(va.images, va2.images)


def test_dataset_validation():
    from varinit.core import DataError
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 10]))


def test_toy_mnist_golden_checksum():
    tr, te = toy_mnist(100, 20, seed=0)
    assert tr.images.shape == (100, 784) and te.images.shape == (20, 784)
    assert 0.0 <= tr.images.min() and tr.images.max() <= 1.0
    digest = hashlib.sha256(tr.images.tobytes() + tr.labels.tobytes()).hexdigest()
    assert digest == "199131d4103639c66273a13795c582e4aabdde2875b9300960205f148e46673b"
