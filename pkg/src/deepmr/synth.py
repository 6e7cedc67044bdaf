"""Deterministic synthetic handwritten-digit corpus in IDX format.

Each digit has a few hand-drawn stroke skeletons; samples are produced by
rasterizing a skeleton and pushing it through random affine and elastic
distortions plus intensity jitter. The output files are byte-exact IDX
(28x28 uint8 images, uint8 labels) with the conventional file names, so
anything that reads the real digit database reads these too.
"""

import struct
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

SIZE = 28
_HIRES = 84  # rasterize at 3x, then box-average down


def _ellipse(cx, cy, rx, ry, t0=0.0, t1=2 * np.pi, n=48):
    t = np.linspace(t0, t1, n)
    return list(zip(cx + rx * np.sin(t), cy - ry * np.cos(t)))


# Stroke skeletons in a unit box, x right / y down, as polyline lists.
_SKELETONS = {
    0: [
        [_ellipse(0.50, 0.50, 0.21, 0.34)],
        [_ellipse(0.50, 0.50, 0.16, 0.36)],
    ],
    1: [
        [[(0.50, 0.14), (0.50, 0.86)]],
        [[(0.36, 0.30), (0.52, 0.14), (0.52, 0.86)], [(0.38, 0.86), (0.66, 0.86)]],
    ],
    2: [
        [[(0.28, 0.30), (0.33, 0.18), (0.46, 0.13), (0.61, 0.15), (0.69, 0.26),
          (0.67, 0.38), (0.55, 0.53), (0.40, 0.67), (0.29, 0.80), (0.28, 0.85),
          (0.72, 0.85)]],
        [[(0.30, 0.34), (0.36, 0.17), (0.52, 0.12), (0.66, 0.18), (0.70, 0.32),
          (0.58, 0.50), (0.42, 0.64), (0.30, 0.79), (0.30, 0.84), (0.50, 0.80),
          (0.72, 0.84)]],
    ],
    3: [
        [[(0.30, 0.18), (0.44, 0.12), (0.60, 0.15), (0.67, 0.26), (0.61, 0.38),
          (0.47, 0.45)],
         [(0.47, 0.45), (0.63, 0.52), (0.70, 0.64), (0.62, 0.79), (0.45, 0.87),
          (0.30, 0.80)]],
        [[(0.32, 0.14), (0.66, 0.14), (0.48, 0.42)],
         [(0.48, 0.42), (0.65, 0.50), (0.70, 0.65), (0.60, 0.82), (0.42, 0.87),
          (0.29, 0.79)]],
    ],
    4: [
        [[(0.52, 0.14), (0.24, 0.56), (0.76, 0.56)], [(0.60, 0.22), (0.60, 0.88)]],
        [[(0.32, 0.14), (0.28, 0.52), (0.72, 0.52)], [(0.62, 0.14), (0.62, 0.88)]],
    ],
    5: [
        [[(0.68, 0.14), (0.32, 0.14), (0.30, 0.45)],
         [(0.30, 0.45), (0.48, 0.40), (0.64, 0.46), (0.70, 0.60), (0.63, 0.76),
          (0.46, 0.85), (0.30, 0.78)]],
        [[(0.70, 0.13), (0.34, 0.13), (0.33, 0.40)],
         [(0.33, 0.40), (0.52, 0.38), (0.68, 0.48), (0.70, 0.66), (0.58, 0.82),
          (0.40, 0.86), (0.28, 0.76)]],
    ],
    6: [
        [[(0.64, 0.13), (0.48, 0.20), (0.36, 0.35), (0.30, 0.52), (0.30, 0.66)],
         _ellipse(0.47, 0.67, 0.17, 0.19)],
        [[(0.60, 0.12), (0.44, 0.26), (0.33, 0.46), (0.31, 0.64)],
         _ellipse(0.48, 0.68, 0.16, 0.17)],
    ],
    7: [
        [[(0.26, 0.15), (0.73, 0.15), (0.44, 0.87)]],
        [[(0.26, 0.17), (0.73, 0.15), (0.46, 0.87)], [(0.34, 0.50), (0.62, 0.50)]],
    ],
    8: [
        [_ellipse(0.50, 0.30, 0.16, 0.17), _ellipse(0.50, 0.66, 0.19, 0.20)],
        [_ellipse(0.50, 0.28, 0.13, 0.15), _ellipse(0.50, 0.64, 0.20, 0.22)],
    ],
    9: [
        [_ellipse(0.50, 0.33, 0.18, 0.19), [(0.68, 0.35), (0.66, 0.60), (0.57, 0.88)]],
        [_ellipse(0.50, 0.31, 0.17, 0.18), [(0.67, 0.31), (0.67, 0.88)]],
    ],
}

_DISC = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)
         if dy * dy + dx * dx <= 5]


@lru_cache(maxsize=None)
def _prototype(digit: int, variant: int) -> np.ndarray:
    """Rasterize one skeleton to a clean 28x28 grayscale prototype."""
    canvas = np.zeros((_HIRES, _HIRES))
    for stroke in _SKELETONS[digit][variant]:
        pts = np.asarray(stroke, dtype=np.float64)
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            steps = max(2, int(np.hypot(x1 - x0, y1 - y0) * _HIRES * 2))
            xs = np.linspace(x0, x1, steps) * (_HIRES - 1)
            ys = np.linspace(y0, y1, steps) * (_HIRES - 1)
            for px, py in zip(np.rint(xs).astype(int), np.rint(ys).astype(int)):
                for dy, dx in _DISC:
                    yy, xx = py + dy, px + dx
                    if 0 <= yy < _HIRES and 0 <= xx < _HIRES:
                        canvas[yy, xx] = 1.0
    canvas = ndimage.gaussian_filter(canvas, sigma=1.6)
    low = canvas.reshape(SIZE, 3, SIZE, 3).mean(axis=(1, 3))
    low = np.clip(low / low.max() * 1.5, 0.0, 1.0)
    return low


def _distort(proto: np.ndarray, rng) -> np.ndarray:
    """Random affine + elastic warp + intensity jitter of a prototype."""
    theta = rng.uniform(-0.20, 0.20)
    scale = np.exp(rng.uniform(-0.12, 0.10))
    shear = rng.uniform(-0.18, 0.18)
    ty, tx = rng.uniform(-2.0, 2.0, size=2)
    c, s = np.cos(theta), np.sin(theta)
    # (row, col) coordinates; output = A @ (input - center) + center + t
    fwd = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]]) * scale
    inv = np.linalg.inv(fwd)
    center = np.array([(SIZE - 1) / 2.0, (SIZE - 1) / 2.0])
    offset = center - inv @ (center + np.array([ty, tx]))
    img = ndimage.affine_transform(proto, inv, offset=offset, order=1,
                                   mode="constant", cval=0.0)
    alpha = rng.uniform(1.2, 2.6)
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (SIZE, SIZE)), 4.0) * alpha * 8
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (SIZE, SIZE)), 4.0) * alpha * 8
    grid_y, grid_x = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
    img = ndimage.map_coordinates(img, [grid_y + dy, grid_x + dx], order=1,
                                  mode="constant", cval=0.0)
    img = np.clip(img * rng.uniform(0.85, 1.1), 0.0, 1.0)
    return img


def _balanced_labels(count: int, rng) -> np.ndarray:
    labels = np.arange(count) % 10
    rng.shuffle(labels)
    return labels


def generate(count: int, seed: int) -> tuple:
    """(images uint8 (count, 28, 28), labels uint8) with near-equal class
    counts; fully determined by the seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, count)))
    labels = _balanced_labels(count, rng)
    images = np.empty((count, SIZE, SIZE), dtype=np.uint8)
    for i, digit in enumerate(labels):
        variant = int(rng.integers(len(_SKELETONS[int(digit)])))
        img = _distort(_prototype(int(digit), variant), rng)
        images[i] = np.rint(img * 255).astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def make_corpus(out_dir, train_count: int, test_count: int, seed: int) -> dict:
    """Write a train/test corpus with the conventional IDX file names;
    returns the four paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_images, train_labels = generate(train_count, seed)
    test_images, test_labels = generate(test_count, seed + 1)
    paths = {
        "train_images": out / "train-images-idx3-ubyte",
        "train_labels": out / "train-labels-idx1-ubyte",
        "test_images": out / "t10k-images-idx3-ubyte",
        "test_labels": out / "t10k-labels-idx1-ubyte",
    }
    write_idx_images(paths["train_images"], train_images)
    write_idx_labels(paths["train_labels"], train_labels)
    write_idx_images(paths["test_images"], test_images)
    write_idx_labels(paths["test_labels"], test_labels)
    return {k: str(v) for k, v in paths.items()}


def preview(image: np.ndarray) -> str:
    """ASCII rendering of one image, for eyeballing samples."""
    shades = " .:-=+*#%@"
    arr = np.asarray(image, dtype=np.float64)
    if arr.max() > 1:
        arr = arr / 255.0
    idx = np.minimum((arr * len(shades)).astype(int), len(shades) - 1)
    return "\n".join("".join(shades[v] for v in row) for row in idx)
