"""Dataset ingestion (IDX image/label files), case subsetting, and the
persistent weight-file format.

IDX files follow the standard big-endian layout: magic 0x00000803 for
images (count, rows, cols headers, then row-major uint8 pixels) and
0x00000801 for labels. Gzipped files are read transparently.

Weight files are little-endian binary:

    offset  size  field
    0       8     magic "DMRWGHT1"
    8       4     format version (u32, currently 1)
    12      1     mode tag (0 stack, 1 autoencoder, 2 classifier)
    13      1     top-linear flag
    14      4     encoder depth (i32, -1 when not unrolled)
    18      4     layer count (u32)
    22      ...   per layer: layer index, numVis, numHid (3 x i32),
                  then w, vbias, hbias as float64
    end-4   4     crc32 (u32) of everything before it

Truncation, version and checksum problems raise distinct errors.
"""

import gzip
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .deepnet import NetworkWeights, TrainingCase, pack_network, unpack_network
from .errors import ChecksumError, FormatError, IntegrityError, TruncationError, VersionError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

WEIGHT_MAGIC = b"DMRWGHT1"
WEIGHT_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    cases: tuple
    image_rows: int
    image_cols: int
    source: str

    def __len__(self):
        return len(self.cases)


def _read_file(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _read_be32(buf: bytes, offset: int, what: str) -> int:
    if len(buf) < offset + 4:
        raise FormatError(f"{what}: file truncated at byte {len(buf)}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx_images(path) -> np.ndarray:
    buf = _read_file(path)
    magic = _read_be32(buf, 0, "image file")
    if magic != IMAGE_MAGIC:
        raise FormatError(
            f"image file: bad magic 0x{magic:08x} at byte 0, expected "
            f"0x{IMAGE_MAGIC:08x}")
    count = _read_be32(buf, 4, "image file")
    rows = _read_be32(buf, 8, "image file")
    cols = _read_be32(buf, 12, "image file")
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise FormatError(
            f"image file: pixel data truncated at byte {len(buf)}, needs {need}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    buf = _read_file(path)
    magic = _read_be32(buf, 0, "label file")
    if magic != LABEL_MAGIC:
        raise FormatError(
            f"label file: bad magic 0x{magic:08x} at byte 0, expected "
            f"0x{LABEL_MAGIC:08x}")
    count = _read_be32(buf, 4, "label file")
    need = 8 + count
    if len(buf) < need:
        raise FormatError(
            f"label file: data truncated at byte {len(buf)}, needs {need}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path=None) -> Dataset:
    """Load an image file (and optionally its label file) into cases with
    pixels scaled by 1/255 into [0, 1]."""
    images = load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if len(labels) != len(images):
            raise IntegrityError(
                f"{len(images)} images but {len(labels)} labels")
    count, rows, cols = images.shape
    flat = images.reshape(count, rows * cols).astype(np.float64) / 255.0
    cases = tuple(
        TrainingCase(i, flat[i], int(labels[i]) if labels is not None else None)
        for i in range(count))
    return Dataset(cases, rows, cols, str(images_path))


def save_weights(path, net: NetworkWeights) -> None:
    body = WEIGHT_MAGIC + struct.pack("<I", WEIGHT_VERSION) + pack_network(net)
    crc = zlib.crc32(body)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", crc))


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(WEIGHT_MAGIC) + 8:
        raise TruncationError(f"weight file ends at byte {len(buf)}")
    if buf[:8] != WEIGHT_MAGIC:
        raise FormatError(f"not a weight file (magic {buf[:8]!r})")
    stored_crc = struct.unpack_from("<I", buf, len(buf) - 4)[0]
    crc_ok = zlib.crc32(buf[:-4]) == stored_crc
    version = struct.unpack_from("<I", buf, 8)[0]
    if version != WEIGHT_VERSION:
        raise VersionError(f"weight file version {version}, expected {WEIGHT_VERSION}")
    try:
        net, pos = unpack_network(buf[:-4], offset=12)
    except TruncationError:
        raise
    except FormatError:
        if not crc_ok:
            raise ChecksumError("weight file checksum mismatch") from None
        raise
    if pos != len(buf) - 4:
        raise FormatError(f"{len(buf) - 4 - pos} trailing bytes after layer data")
    if not crc_ok:
        raise ChecksumError("weight file checksum mismatch")
    return net


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Deterministic stratified sample of n cases. With labels present the
    per-class share matches the source distribution to within one case;
    without labels it is a plain shuffled prefix. Case ids are preserved."""
    if n > len(dataset.cases):
        raise ValueError(f"subset of {n} from {len(dataset.cases)} cases")
    rng = np.random.default_rng(np.random.SeedSequence((seed, len(dataset.cases), n)))
    cases = dataset.cases
    if n and cases[0].label is not None:
        by_class = {}
        for idx, c in enumerate(cases):
            by_class.setdefault(c.label, []).append(idx)
        # largest-remainder allocation of n over classes
        quotas = {lab: n * len(ids) / len(cases) for lab, ids in by_class.items()}
        take = {lab: int(q) for lab, q in quotas.items()}
        short = n - sum(take.values())
        for lab in sorted(quotas, key=lambda l: quotas[l] - take[l], reverse=True)[:short]:
            take[lab] += 1
        chosen = []
        for lab in sorted(by_class):
            ids = by_class[lab]
            picked = rng.permutation(len(ids))[:take[lab]]
            chosen.extend(ids[i] for i in picked)
        order = rng.permutation(len(chosen))
        selected = tuple(cases[chosen[i]] for i in order)
    else:
        selected = tuple(cases[i] for i in rng.permutation(len(cases))[:n])
    return Dataset(selected, dataset.image_rows, dataset.image_cols, dataset.source)


def binarize(dataset: Dataset, seed: int) -> Dataset:
    """Stochastic binarization: each pixel becomes 1 with probability
    equal to its intensity."""
    rng = np.random.default_rng(seed)
    cases = tuple(
        TrainingCase(c.case_id,
                     (rng.random(c.pixels.shape) < c.pixels).astype(np.float64),
                     c.label)
        for c in dataset.cases)
    return Dataset(cases, dataset.image_rows, dataset.image_cols, dataset.source)
