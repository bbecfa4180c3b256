"""Multi-size resizing: aspect-ratio buckets, bilinear resize, bucket-homogeneous batches
and dataset manifest ingestion."""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import InputError, ParseError, UnknownCharacterError

MAX_TRAIN_LABEL = 25
R4_MAX_MULTIPLE = 24
RESIZE_MODES = ("msr", "fixed32x128", "fixed64x256")


@dataclass
class RawSample:
    """``image`` is a float array (3, H, W) in [0, 1]; ``label`` holds charset indices."""

    image: np.ndarray
    label: tuple
    source_id: str

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


@dataclass(frozen=True)
class AspectBucket:
    id: str
    target: tuple  # (height, width)

    @property
    def key(self) -> tuple:
        return (self.id,) + tuple(self.target)


def compute_bucket(height: float, width: float, mode: str = "msr") -> AspectBucket:
    """Route an image to its target size by aspect ratio ``R = W / H``.

    R < 1.5 -> 64x64, [1.5, 2.5) -> 48x96, [2.5, 3.5) -> 40x112, otherwise
    32 x (floor(R) * 32) with floor(R) clamped to [3, 24].
    """
    if height <= 0 or width <= 0:
        raise InputError(f"image extents must be positive, got {height}x{width}")
    if mode == "fixed32x128":
        return AspectBucket("F32x128", (32, 128))
    if mode == "fixed64x256":
        return AspectBucket("F64x256", (64, 256))
    if mode != "msr":
        raise InputError(f"unknown resize mode {mode!r}")
    r = width / height
    if r < 1.5:
        return AspectBucket("R1", (64, 64))
    if r < 2.5:
        return AspectBucket("R2", (48, 96))
    if r < 3.5:
        return AspectBucket("R3", (40, 112))
    k = min(max(math.floor(r), 3), R4_MAX_MULTIPLE)
    return AspectBucket("R4", (32, k * 32))


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(image: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image with half-pixel centres."""
    h, w = int(target[0]), int(target[1])
    if h <= 0 or w <= 0:
        raise InputError(f"target extents must be positive, got {target}")
    img = np.asarray(image)
    _, H, W = img.shape
    if (H, W) == (h, w):
        return img.copy()
    y0, y1, wy = _axis_weights(H, h)
    x0, x1, wx = _axis_weights(W, w)
    top = img[:, y0, :]
    bot = img[:, y1, :]
    rows = top * (1.0 - wy)[None, :, None] + bot * wy[None, :, None]
    out = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
    return np.clip(out, 0.0, 1.0)


def msr_resize(sample: RawSample, mode: str = "msr") -> tuple:
    """Resize a sample to its bucket target; returns ``(image, bucket)``."""
    bucket = compute_bucket(sample.height, sample.width, mode)
    return resize_bilinear(sample.image, bucket.target), bucket


@dataclass
class BatchManifest:
    """Ordered batches of sample indices; each batch shares one target size."""

    batches: list
    targets: list
    seed: int
    buckets: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self):
        return iter(zip(self.batches, self.targets))


def build_batches(samples: Sequence, batch_size: int, seed: int, mode: str = "msr") -> BatchManifest:
    """Group samples by target size, shuffle with ``seed`` and cut into batches.

    ``samples`` may be RawSamples or ``(height, width)`` pairs.  The last
    partial batch of every group is kept.
    """
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    if len(samples) == 0:
        raise InputError("cannot batch an empty dataset")
    groups: dict = {}
    bucket_of = {}
    for i, s in enumerate(samples):
        hw = (s.height, s.width) if isinstance(s, RawSample) else tuple(s)
        b = compute_bucket(hw[0], hw[1], mode)
        groups.setdefault(b.target, []).append(i)
        bucket_of[b.target] = b.id
    rng = np.random.default_rng(seed)
    chunks = []
    for target in sorted(groups):
        idx = np.array(groups[target])
        rng.shuffle(idx)
        for start in range(0, len(idx), batch_size):
            chunks.append((target, [int(v) for v in idx[start:start + batch_size]]))
    order = rng.permutation(len(chunks))
    chunks = [chunks[k] for k in order]
    return BatchManifest([c[1] for c in chunks], [c[0] for c in chunks], seed,
                         [bucket_of[c[0]] for c in chunks])


# files ---------------------------------------------------------------------

class Charset:
    """Ordered characters; class index = line index.  The CTC blank is not included."""

    def __init__(self, chars: Iterable[str]):
        self.chars = list(chars)
        if len(set(self.chars)) != len(self.chars):
            raise InputError("charset contains duplicate characters")
        self.index = {c: i for i, c in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(self.chars)

    def __getitem__(self, i):
        return self.chars[i]

    def encode(self, text: str) -> tuple:
        missing = sorted({c for c in text if c not in self.index})
        if missing:
            raise UnknownCharacterError(f"characters not in charset: {missing!r}")
        return tuple(self.index[c] for c in text)

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.chars[i] for i in indices)

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.chars).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def load(cls, path) -> "Charset":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for n, line in enumerate(lines, 1):
            if len(line) != 1:
                raise ParseError(f"expected one character, got {line!r}", n)
        return cls(lines)

    def save(self, path) -> None:
        Path(path).write_text("".join(c + "\n" for c in self.chars), encoding="utf-8")


def read_image(path) -> np.ndarray:
    """Load a binary PGM/PPM as a (3, H, W) float array in [0, 1]."""
    with Image.open(path) as im:
        if im.format not in ("PPM", "PGM") and im.format is not None:
            raise InputError(f"{path}: unsupported image format {im.format}")
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_pgm(path, gray: np.ndarray) -> None:
    """Write a 2-D array in [0, 1] as 8-bit binary PGM."""
    arr = np.clip(np.rint(np.asarray(gray) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")


def parse_manifest(path) -> list:
    """Return ``(line_number, relative_path, label_text)`` triples."""
    entries = []
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for n, line in enumerate(lines, 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError("expected '<image-path>\\t<label>'", n)
        rel, label = parts
        if not rel:
            raise ParseError("empty image path", n)
        if not label:
            raise ParseError("empty label", n)
        entries.append((n, rel, label))
    return entries


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SVTR2_THREADS", "1")))
    except ValueError:
        return 1


def load_manifest(path, charset: Charset) -> list:
    """Decode every manifest entry into a RawSample (order and duplicates preserved)."""
    path = Path(path)
    root = path.parent
    entries = parse_manifest(path)
    labels = []
    for n, rel, text in entries:
        try:
            labels.append(charset.encode(text))
        except UnknownCharacterError as exc:
            raise UnknownCharacterError(f"line {n}: {exc}") from None
    files = [root / rel for _, rel, _ in entries]
    for f in files:
        if not f.is_file():
            raise FileNotFoundError(f"missing image {f}")
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            images = list(pool.map(read_image, files))
    else:
        images = [read_image(f) for f in files]
    return [RawSample(img, lab, rel) for img, lab, (_, rel, _) in zip(images, labels, entries)]
