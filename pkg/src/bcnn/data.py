"""Dataset ingestion (IDX, PGM), stratified subsampling, rotation machinery
and the generated dataset variants (rotated digits, textured backgrounds)."""

from __future__ import annotations

import gzip
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
QUARTER = math.pi / 2.0


class FormatError(ValueError):
    """Malformed IDX/PGM payload; message names the byte offset."""


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (N, H, W, 1) float64 in [0, 1]
    labels: np.ndarray  # (N,) integer
    class_count: int

    def __len__(self) -> int:
        return len(self.images)

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_count)


def _open_maybe_gz(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Strict big-endian IDX parsing; pixel bytes scaled to [0, 1]."""
    with _open_maybe_gz(images_path) as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"{images_path}: truncated header at byte {len(blob)}")
    magic, count, rows, cols = struct.unpack_from(">IIII", blob, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x} at byte 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"{images_path}: expected {expected} bytes, found mismatch at byte {min(len(blob), expected)}"
        )
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(count, rows, cols)

    with _open_maybe_gz(labels_path) as fh:
        lblob = fh.read()
    if len(lblob) < 8:
        raise FormatError(f"{labels_path}: truncated header at byte {len(lblob)}")
    lmagic, lcount = struct.unpack_from(">II", lblob, 0)
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{lmagic:08x} at byte 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    if len(lblob) != 8 + lcount:
        raise FormatError(
            f"{labels_path}: expected {8 + lcount} bytes, found mismatch at byte {min(len(lblob), 8 + lcount)}"
        )
    if lcount != count:
        raise FormatError(f"{labels_path}: {lcount} labels for {count} images")
    labels = np.frombuffer(lblob, dtype=np.uint8, offset=8).astype(np.int64)
    images = (pixels.astype(np.float64) / 255.0)[..., None]
    return LabeledDataset(images, labels, int(labels.max()) + 1 if count else 0)


def write_idx(images_path, labels_path, dataset: LabeledDataset) -> None:
    """Inverse of load_idx (images quantized back to uint8)."""
    imgs = np.clip(np.round(dataset.images[..., 0] * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = imgs.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(imgs.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5), 8- or 16-bit, as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a P5 PGM (byte 0)")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(blob[start:pos]))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header token at byte {start}") from exc
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval < 256:
        data = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    else:
        data = np.frombuffer(blob, dtype=">u2", count=width * height, offset=pos)
    if data.size != width * height:
        raise FormatError(f"{path}: pixel payload truncated at byte {len(blob)}")
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Binary PGM (P5) from a float image in [0, 1]; 16-bit when maxval > 255."""
    arr = np.clip(np.round(np.asarray(image) * maxval), 0, maxval)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode()
    payload = arr.astype(np.uint8 if maxval < 256 else ">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def stratified_subsample(ds: LabeledDataset, count: int, seed: int) -> LabeledDataset:
    """Seeded subsample preserving per-class proportions within one sample."""
    if count > len(ds):
        raise ValueError(f"count {count} exceeds dataset size {len(ds)}")
    if count < ds.class_count:
        raise ValueError(f"count {count} below class count {ds.class_count}")
    rng = np.random.default_rng(seed)
    hist = ds.class_histogram()
    exact = hist * count / len(ds)
    take = np.floor(exact).astype(int)
    remainder = exact - take
    # largest remainders round up until the total matches
    for cls in np.argsort(-remainder):
        if take.sum() == count:
            break
        take[cls] += 1
    chosen = []
    for cls in range(ds.class_count):
        pool = np.nonzero(ds.labels == cls)[0]
        chosen.append(rng.choice(pool, size=take[cls], replace=False))
    idx = np.concatenate(chosen)
    return ds.subset(rng.permutation(idx))


def rotate_image(image: np.ndarray, alpha: float, fill: float = 0.0) -> np.ndarray:
    """Rotate a square image by alpha (counter-clockwise on screen).

    Quarter-turn multiples use the exact pixel permutation; anything else is
    inverse-map bilinear about the image center with `fill` outside.
    """
    image = np.asarray(image)
    if image.shape[0] != image.shape[1]:
        raise ValueError("rotate_image expects a square image")
    turns = alpha / QUARTER
    nearest = round(turns)
    if abs(turns - nearest) < 1e-12:
        return np.ascontiguousarray(np.rot90(image, nearest % 4))
    size = image.shape[0]
    center = (size - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    px = cc - center
    py = center - rr  # y up on screen
    cos_a, sin_a = math.cos(alpha), math.sin(alpha)
    # inverse map: source = R(-alpha) (px, py)
    sx = cos_a * px + sin_a * py
    sy = -sin_a * px + cos_a * py
    src_c = sx + center
    src_r = center - sy
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    wr = src_r - r0
    wc = src_c - c0
    out_shape = image.shape
    flat = image.reshape(size, size, -1)
    channels = flat.shape[2]
    result = np.full((size, size, channels), fill, dtype=np.float64)
    valid = (r0 >= -1) & (r0 <= size - 1) & (c0 >= -1) & (c0 <= size - 1)

    def sample(rs, cs):
        ok = (rs >= 0) & (rs < size) & (cs >= 0) & (cs < size)
        vals = np.full((size, size, channels), fill, dtype=np.float64)
        vals[ok] = flat[rs[ok], cs[ok]]
        return vals

    w00 = ((1 - wr) * (1 - wc))[..., None]
    w01 = ((1 - wr) * wc)[..., None]
    w10 = (wr * (1 - wc))[..., None]
    w11 = (wr * wc)[..., None]
    interp = (
        w00 * sample(r0, c0)
        + w01 * sample(r0, c0 + 1)
        + w10 * sample(r0 + 1, c0)
        + w11 * sample(r0 + 1, c0 + 1)
    )
    result[valid] = interp[valid]
    return result.reshape(out_shape)


def pad_to_odd(image: np.ndarray) -> np.ndarray:
    """Zero-pad an even-sized square image by one row/column (bottom, right)."""
    if image.shape[0] % 2 == 1:
        return image
    size = image.shape[0] + 1
    out = np.zeros((size, size) + image.shape[2:], dtype=image.dtype)
    out[: image.shape[0], : image.shape[1]] = image
    return out


def rotate_dataset(ds: LabeledDataset, seed: int) -> LabeledDataset:
    """Each image rotated once by a fresh uniform angle in [0, 2 pi)."""
    rng = np.random.default_rng(seed)
    rotated = np.stack(
        [rotate_image(img, float(rng.uniform(0.0, 2.0 * math.pi))) for img in ds.images]
    )
    return LabeledDataset(np.clip(rotated, 0.0, 1.0), ds.labels, ds.class_count)


def load_texture() -> np.ndarray:
    """The bundled grayscale texture used for generated backgrounds."""
    from importlib import resources

    with resources.as_file(resources.files("bcnn") / "assets" / "texture.pgm") as p:
        return read_pgm(p)


def compose_background(ds: LabeledDataset, texture: np.ndarray, seed: int) -> LabeledDataset:
    """Random texture patches behind each digit (max compositing)."""
    rng = np.random.default_rng(seed)
    h, w = ds.images.shape[1:3]
    th, tw = texture.shape
    out = np.empty_like(ds.images)
    for i, img in enumerate(ds.images):
        r = int(rng.integers(0, th - h + 1))
        c = int(rng.integers(0, tw - w + 1))
        patch = texture[r : r + h, c : c + w][..., None]
        out[i] = np.maximum(img, patch)
    return LabeledDataset(out, ds.labels, ds.class_count)


class AugmentStream:
    """Deterministic per-epoch batch iterator with optional augmentation.

    Batch order is fixed once by the seed; policy "none" therefore yields
    identical epochs, while the rotation policies draw fresh angles (and
    flips) from a seeded per-epoch stream.
    """

    POLICIES = ("none", "online-rotations", "rotations-reflections")

    def __init__(self, ds: LabeledDataset, policy: str, seed: int, batch_size: int):
        if policy not in self.POLICIES:
            raise ValueError(f"unknown augmentation policy {policy!r}")
        self.ds = ds
        self.policy = policy
        self.seed = seed
        self.batch_size = batch_size
        self.order = np.random.default_rng(seed).permutation(len(ds))

    def epoch(self, epoch_index: int):
        rng = np.random.default_rng((self.seed, epoch_index))
        for start in range(0, len(self.ds), self.batch_size):
            idx = self.order[start : start + self.batch_size]
            images = self.ds.images[idx]
            if self.policy != "none":
                images = np.stack(
                    [
                        rotate_image(img, float(rng.uniform(0.0, 2.0 * math.pi)))
                        for img in images
                    ]
                )
                if self.policy == "rotations-reflections":
                    flips = rng.random(len(images)) < 0.5
                    images[flips] = images[flips][:, :, ::-1]
                images = np.clip(images, 0.0, 1.0)
            yield images, self.ds.labels[idx]


def make_augment_fn(policy: str):
    """Batch-transform hook for the training loop (None for policy "none")."""
    if policy == "none":
        return None
    if policy not in AugmentStream.POLICIES:
        raise ValueError(f"unknown augmentation policy {policy!r}")

    def augment(rng, batch):
        out = np.stack(
            [rotate_image(img, float(rng.uniform(0.0, 2.0 * math.pi))) for img in batch]
        )
        if policy == "rotations-reflections":
            flips = rng.random(len(out)) < 0.5
            out[flips] = out[flips][:, :, ::-1]
        return np.clip(out, 0.0, 1.0)

    return augment


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.linspace(0, h - 1, out_h)
    xs = np.linspace(0, w - 1, out_w)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x0 + 1)]
    c = img[np.ix_(y0 + 1, x0)]
    d = img[np.ix_(y0 + 1, x0 + 1)]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)


def _cubic_weights(length: int, out_length: int) -> np.ndarray:
    """Catmull-Rom interpolation matrix (out_length x length), edge-clamped."""
    src = np.linspace(0, length - 1, out_length)
    base = np.floor(src).astype(int)
    t = src - base
    w_m1 = 0.5 * (-(t**3) + 2 * t**2 - t)
    w_0 = 0.5 * (3 * t**3 - 5 * t**2 + 2)
    w_1 = 0.5 * (-3 * t**3 + 4 * t**2 + t)
    w_2 = 0.5 * (t**3 - t**2)
    w = np.zeros((out_length, length))
    for offset, weights in ((-1, w_m1), (0, w_0), (1, w_1), (2, w_2)):
        cols = np.clip(base + offset, 0, length - 1)
        np.add.at(w, (np.arange(out_length), cols), weights)
    return w


def _resize_cubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    wr = _cubic_weights(img.shape[0], out_h)
    wc = _cubic_weights(img.shape[1], out_w)
    return wr @ img @ wc.T


def load_digits_fallback() -> LabeledDataset:
    """Bundled handwritten digits (1797 samples) in the 28x28 layout.

    Desk-scale stand-in used when no IDX digit files are available: each 8x8
    digit is upsampled to 20x20 and centered in a 28x28 frame.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    n = len(raw.images)
    images = np.zeros((n, 28, 28, 1))
    for i, img in enumerate(raw.images):
        images[i, 4:24, 4:24, 0] = _resize_bilinear(img / 16.0, 20, 20)
    return LabeledDataset(images, raw.target.astype(np.int64), 10)


MNIST_FILES = {
    True: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    False: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist_dir() -> Path | None:
    candidates = []
    env = os.environ.get("BCNN_MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates.append(Path("data") / "mnist")
    for cand in candidates:
        img, _ = MNIST_FILES[True]
        if (cand / img).exists() or (cand / (img + ".gz")).exists():
            return cand
    return None


def load_base_digits(train: bool = True) -> tuple[LabeledDataset, str]:
    """Real MNIST IDX files when available, else the bundled-digits fallback.

    Returns (dataset, source_tag); the tag lands in every manifest so
    generated variants are never mistaken for the benchmark files.
    """
    mnist_dir = find_mnist_dir()
    if mnist_dir is not None:
        img_name, lbl_name = MNIST_FILES[train]
        img = mnist_dir / img_name
        lbl = mnist_dir / lbl_name
        if not img.exists():
            img = mnist_dir / (img_name + ".gz")
            lbl = mnist_dir / (lbl_name + ".gz")
        return load_idx(img, lbl), "mnist-idx"
    ds = load_digits_fallback()
    # deterministic disjoint split, stratified per class; the small train
    # pool (30/class) leaves the bulk for test-set evaluation
    rng = np.random.default_rng(171717)
    take = []
    for cls in range(ds.class_count):
        pool = rng.permutation(np.nonzero(ds.labels == cls)[0])
        take.append(pool[:30] if train else pool[30:])
    return ds.subset(np.sort(np.concatenate(take))), "digits-fallback"


def dataset_manifest(source: str, variant: str, seed: int, ds: LabeledDataset,
                     extra: dict | None = None) -> str:
    doc = {
        "source": source,
        "variant": variant,
        "seed": seed,
        "count": len(ds),
        "class_histogram": ds.class_histogram().tolist(),
        "image_shape": list(ds.images.shape[1:]),
    }
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2)
