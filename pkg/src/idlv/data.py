"""Dataset directory layout, PGM/PPM decoding, pair sampling and synthetic spoof data.

On-disk layout::

    <root>/<split>/<client_id>/real/*.pgm
    <root>/<split>/<client_id>/fake/*.pgm

``split`` is one of train, dev, test. A subdirectory inside ``real/`` or
``fake/`` is treated as one video clip stored as frames and contributes all
of its image files. Paths are sorted lexicographically before any sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DatasetError, DecodeError, TruncatedImageError, UnsupportedFormatError
from .labels import Liveness
from .siamese import LabeledPair

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class RawImage:
    """Decoded 8-bit image reduced to one gray channel (float64 samples in [0, 255])."""

    width: int
    height: int
    channels: int
    samples: np.ndarray


def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and (data[pos : pos + 1].isspace() or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                end = data.find(b"\n", pos)
                pos = n if end < 0 else end
            pos += 1
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise TruncatedImageError("header ends before width, height and maxval")
        tokens.append(data[start:pos])
    if pos >= n:
        raise TruncatedImageError("no payload after header")
    return tokens, pos + 1  # exactly one whitespace byte separates header and payload


def decode_image(data: bytes) -> RawImage:
    """Decode binary PGM (P5) or PPM (P6) with maxval <= 255."""
    magic = bytes(data[:2])
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"unsupported image magic {magic!r}; expected P5 or P6")
    tokens, offset = _header_tokens(data[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DecodeError(f"non-numeric header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise DecodeError(f"bad image size {width}x{height}")
    if not 0 < maxval <= 255:
        raise UnsupportedFormatError(f"maxval {maxval} not supported (must be 1..255)")
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    payload = np.frombuffer(data, dtype=np.uint8, count=min(expected, max(len(data) - offset, 0)), offset=offset)
    if payload.size < expected:
        raise TruncatedImageError(f"payload has {payload.size} bytes, header declares {expected}")
    if channels == 1:
        samples = payload.reshape(height, width).astype(np.float64)
    else:
        samples = payload.reshape(height, width, 3).astype(np.float64) @ LUMA
    if maxval != 255:
        samples = samples * (255.0 / maxval)
    return RawImage(width, height, channels, samples)


def encode_pgm(samples) -> bytes:
    """Binary P5 bytes for a 2-D uint8-range array."""
    arr = np.asarray(samples)
    if arr.ndim != 2:
        raise ValueError("encode_pgm expects a 2-D array")
    arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


def preprocess(raw: RawImage, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour resize to ``[1, target_h, target_w]`` scaled into [0, 1]."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be positive")
    rows = (np.arange(target_h) * raw.height) // target_h
    cols = (np.arange(target_w) * raw.width) // target_w
    return (raw.samples[np.ix_(rows, cols)] / 255.0)[None, :, :]


def read_image(path, size) -> np.ndarray:
    h, w = (size, size) if np.isscalar(size) else size
    return preprocess(decode_image(Path(path).read_bytes()), h, w)


@dataclass
class ImageRecord:
    pixels: np.ndarray
    path: Path | None
    client_id: str
    label: Liveness

    def __post_init__(self):
        self.label = Liveness.coerce(self.label)
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise ValueError("pixel values must lie in [0, 1]")

    @classmethod
    def load(cls, path, client_id, label, size) -> "ImageRecord":
        return cls(read_image(path, size), Path(path), client_id, label)


@dataclass
class ClientRecord:
    client_id: str
    real_images: list[Path] = field(default_factory=list)
    fake_images: list[Path] = field(default_factory=list)

    def __post_init__(self):
        if not self.client_id:
            raise ValueError("client_id must be non-empty")

    def images(self, label) -> list[Path]:
        return self.real_images if Liveness.coerce(label) is Liveness.REAL else self.fake_images


@dataclass
class DatasetSplit:
    name: str
    clients: list[ClientRecord]

    def __post_init__(self):
        if self.name not in SPLITS:
            raise ValueError(f"split name must be one of {SPLITS}, got {self.name!r}")
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate client ids in split {self.name}")

    def counts(self) -> dict[str, tuple[int, int]]:
        return {c.client_id: (len(c.real_images), len(c.fake_images)) for c in self.clients}

    @property
    def n_real(self) -> int:
        return sum(len(c.real_images) for c in self.clients)

    @property
    def n_fake(self) -> int:
        return sum(len(c.fake_images) for c in self.clients)

    def client(self, client_id) -> ClientRecord:
        for c in self.clients:
            if c.client_id == client_id:
                return c
        raise KeyError(client_id)

    def samples(self):
        """Every image of the split as ``(client_id, path, Liveness)``, in sorted order."""
        for c in self.clients:
            for label in (Liveness.REAL, Liveness.FAKE):
                for path in c.images(label):
                    yield c.client_id, path, label


def _is_readable_image(path: Path) -> bool:
    try:
        decode_image(path.read_bytes())
    except (OSError, DecodeError) as exc:
        logger.warning("skipping unreadable image %s: %s", path, exc)
        return False
    return True


def _scan_label_dir(d: Path) -> list[Path]:
    if not d.is_dir():
        return []
    found = []
    for entry in sorted(d.iterdir()):
        if entry.is_dir():
            found.extend(_scan_label_dir(entry))
        elif _is_readable_image(entry):
            found.append(entry)
    return found


def load_split(root, name: str) -> DatasetSplit:
    split_dir = Path(root) / name
    if not split_dir.is_dir():
        raise DatasetError(f"missing split directory {split_dir}")
    clients = []
    for client_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        record = ClientRecord(
            client_dir.name,
            _scan_label_dir(client_dir / "real"),
            _scan_label_dir(client_dir / "fake"),
        )
        if not record.real_images:
            logger.warning("client %s in split %s has no real images", record.client_id, name)
        clients.append(record)
    if not clients:
        raise DatasetError(f"no clients in split {name!r} ({split_dir})")
    split = DatasetSplit(name, clients)
    logger.info("split %s: %d clients, %d real, %d fake", name, len(clients), split.n_real, split.n_fake)
    return split


def load_dataset(root, splits: Sequence[str] = SPLITS) -> dict[str, DatasetSplit]:
    """Index every readable image under ``root`` for the requested splits."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    return {name: load_split(root, name) for name in splits}


class ImageCache:
    """Decode each file once at a fixed input size."""

    def __init__(self, size):
        self.size = size
        self._cache: dict[Path, np.ndarray] = {}

    def __call__(self, path) -> np.ndarray:
        path = Path(path)
        if path not in self._cache:
            self._cache[path] = read_image(path, self.size)
        return self._cache[path]


def build_pairs(split: DatasetSplit, seed: int, size=64, load: Callable | None = None) -> list[LabeledPair]:
    """One positive and one negative pair anchored on every real image.

    For each real image r of client c, a different real image of c (drawn with
    replacement) forms the positive pair and a fake image of c forms the
    negative pair. Anchors missing a counterpart are skipped with a warning.
    ``load`` maps a file reference to a ``[1, H, W]`` tensor; by default files
    are decoded and resized to ``size``.
    """
    if not split.clients:
        raise DatasetError(f"split {split.name} is empty")
    load = load or ImageCache(size)
    rng = np.random.default_rng(seed)
    pairs = []
    for client in split.clients:
        reals, fakes = client.real_images, client.fake_images
        if len(reals) < 2:
            logger.warning("client %s: fewer than 2 real images, no positive pairs", client.client_id)
        if not fakes:
            logger.warning("client %s: no fake images, no negative pairs", client.client_id)
        for k, anchor in enumerate(reals):
            if len(reals) >= 2:
                j = int(rng.integers(len(reals) - 1))
                j += j >= k
                pairs.append(LabeledPair(load(anchor), load(reals[j]), 1, client.client_id))
            if fakes:
                f = int(rng.integers(len(fakes)))
                pairs.append(LabeledPair(load(anchor), load(fakes[f]), 0, client.client_id))
    return pairs


# --- synthetic spoof data -----------------------------------------------------

MOIRE_AMPLITUDE = 16.0
MOIRE_PERIOD = 4.0
CONTRAST = 0.8
REAL_NOISE = 4.0


def base_pattern(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random face stand-in: a sum of wide Gaussian blobs mapped to [40, 215]."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size))
    for _ in range(6):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        sigma = rng.uniform(0.08, 0.3)
        img += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-9:
        return np.full((size, size), 128.0)
    return 40.0 + 175.0 * (img - lo) / (hi - lo)


def box_blur(img: np.ndarray) -> np.ndarray:
    padded = np.pad(img, 1, mode="edge")
    h, w = img.shape
    return sum(padded[i : i + h, j : j + w] for i in range(3) for j in range(3)) / 9.0


def spoof_transform(img: np.ndarray, phase: float = 0.0) -> np.ndarray:
    """Recapture artefacts: 3x3 box blur, horizontal moire stripes, contrast x0.8."""
    out = box_blur(img)
    rows = np.arange(img.shape[0])[:, None]
    out = out + MOIRE_AMPLITUDE * np.sin(2 * np.pi * rows / MOIRE_PERIOD + phase)
    return 128.0 + CONTRAST * (out - 128.0)


def _split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(round(0.6 * n))
    n_dev = int(round(0.2 * n))
    return n_train, n_dev, n - n_train - n_dev


def synth_dataset(out, n_clients: int, reals_per_client: int, fakes_per_client: int, image_size: int, seed: int):
    """Write a seeded synthetic real/fake dataset in the standard layout.

    Each client gets a smooth base pattern. Real images add small Gaussian
    noise; fakes pass a noisy copy through :func:`spoof_transform` with a random
    stripe phase. Images are split 60/20/20 per client and label, in generation
    order. Returns the dataset root.
    """
    for name, v in (("n_clients", n_clients), ("reals", reals_per_client), ("fakes", fakes_per_client), ("size", image_size)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    root = Path(out)
    rng = np.random.default_rng(seed)
    width = max(2, len(str(n_clients - 1)))
    try:
        for split in SPLITS:
            (root / split).mkdir(parents=True, exist_ok=True)
        for c in range(n_clients):
            client_id = f"client{c:0{width}d}"
            base = base_pattern(rng, image_size)
            images = {"real": [], "fake": []}
            for _ in range(reals_per_client):
                images["real"].append(base + rng.normal(0.0, REAL_NOISE, base.shape))
            for _ in range(fakes_per_client):
                noisy = base + rng.normal(0.0, REAL_NOISE, base.shape)
                images["fake"].append(spoof_transform(noisy, rng.uniform(0, 2 * np.pi)))
            for label, imgs in images.items():
                bounds = np.cumsum((0,) + _split_counts(len(imgs)))
                for split, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:]):
                    d = root / split / client_id / label
                    d.mkdir(parents=True, exist_ok=True)
                    for k in range(lo, hi):
                        (d / f"{label}_{k:04d}.pgm").write_bytes(encode_pgm(imgs[k]))
    except OSError as exc:
        raise DatasetError(f"cannot write synthetic dataset to {root}: {exc}") from exc
    return root
