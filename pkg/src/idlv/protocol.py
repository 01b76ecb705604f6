"""Identity-conditioned liveness decisions against an enrolled gallery.

A test image whose identity is already known is paired with the stored real
reference of that client; the pair is accepted as live when the embedding
distance falls strictly below the threshold.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GalleryFormatError, ProtocolError, UnknownClientError
from .evaluation import MetricsReport, best_threshold
from .labels import Liveness
from .siamese import SiameseModel, embed, pair_distance

GALLERY_MAGIC = b"IDLV-GAL"
GALLERY_VERSION = 1


@dataclass
class GalleryEntry:
    embedding: np.ndarray
    source: str = ""


@dataclass
class Gallery:
    model_digest: str
    embedding_dim: int
    entries: dict[str, GalleryEntry] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: SiameseModel) -> "Gallery":
        return cls(model.digest(), model.embedding_dim)

    def __contains__(self, client_id):
        return client_id in self.entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, client_id) -> np.ndarray:
        try:
            return self.entries[client_id].embedding
        except KeyError:
            raise UnknownClientError(f"client {client_id!r} is not enrolled") from None

    def check_model(self, model: SiameseModel):
        if model.digest() != self.model_digest:
            raise ProtocolError("gallery was built with a different model checkpoint")


@dataclass(frozen=True)
class Decision:
    verdict: Liveness
    distance: float
    threshold: float
    client_id: str


def _pixels(image):
    return getattr(image, "pixels", image)


def enroll(gallery: Gallery, client_id: str, image, model: SiameseModel) -> Gallery:
    """Store the embedding of a client's real reference image, replacing any earlier one."""
    label = getattr(image, "label", Liveness.REAL)
    if Liveness.coerce(label) is not Liveness.REAL:
        raise ProtocolError(f"refusing to enroll a {Liveness.coerce(label).value} image for client {client_id!r}")
    if model.embedding_dim != gallery.embedding_dim or model.digest() != gallery.model_digest:
        raise ProtocolError("model does not match the checkpoint recorded in the gallery")
    source = getattr(image, "path", None)
    gallery.entries[client_id] = GalleryEntry(embed(model, _pixels(image)), "" if source is None else str(source))
    return gallery


def verify(model: SiameseModel, gallery: Gallery, client_id: str, image, threshold: float) -> Decision:
    """REAL iff the distance to the client's reference is strictly below ``threshold``."""
    if not threshold > 0:
        raise ProtocolError(f"threshold must be positive, got {threshold}")
    reference = gallery[client_id]
    d = pair_distance(reference, embed(model, _pixels(image)))
    verdict = Liveness.REAL if d < threshold else Liveness.FAKE
    return Decision(verdict, d, float(threshold), client_id)


def distances_for(model: SiameseModel, gallery: Gallery, samples: Sequence):
    """Distances and truths for ``(client_id, image, liveness)`` samples."""
    distances, truths = [], []
    for client_id, image, truth in samples:
        distances.append(pair_distance(gallery[client_id], embed(model, _pixels(image))))
        truths.append(Liveness.coerce(truth))
    return distances, truths


def calibrate_threshold(model: SiameseModel, gallery: Gallery, samples: Sequence) -> tuple[float, MetricsReport]:
    """Pick the HTER-minimising threshold on labelled development samples."""
    distances, truths = distances_for(model, gallery, samples)
    report = best_threshold(distances, truths)
    return report.threshold, report


# --- gallery file -----------------------------------------------------------
#
#   magic "IDLV-GAL" | u32 version | 32-byte SHA-256 model digest | u32 dim | u32 count
#   count x ( u32 id length | utf-8 client id | dim x f64 ) ; little-endian, sorted by id


def gallery_bytes(gallery: Gallery) -> bytes:
    out = [GALLERY_MAGIC, struct.pack("<I", GALLERY_VERSION), bytes.fromhex(gallery.model_digest)]
    out.append(struct.pack("<II", gallery.embedding_dim, len(gallery.entries)))
    for client_id in sorted(gallery.entries):
        raw = client_id.encode("utf-8")
        emb = np.asarray(gallery.entries[client_id].embedding, dtype="<f8")
        if emb.shape != (gallery.embedding_dim,):
            raise ProtocolError(f"embedding for {client_id!r} has shape {emb.shape}")
        out += [struct.pack("<I", len(raw)), raw, emb.tobytes()]
    return b"".join(out)


def save_gallery(gallery: Gallery, path):
    Path(path).write_bytes(gallery_bytes(gallery))


def parse_gallery(data: bytes) -> Gallery:
    if data[: len(GALLERY_MAGIC)] != GALLERY_MAGIC:
        raise GalleryFormatError("not a gallery file (bad magic)")
    pos = len(GALLERY_MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise GalleryFormatError("gallery file is truncated")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != GALLERY_VERSION:
        raise GalleryFormatError(f"unsupported gallery version {version}")
    digest = take(32).hex()
    dim, count = struct.unpack("<II", take(8))
    gallery = Gallery(digest, dim)
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4))
        client_id = take(n).decode("utf-8")
        gallery.entries[client_id] = GalleryEntry(np.frombuffer(take(8 * dim), dtype="<f8").astype(np.float64))
    if pos != len(data):
        raise GalleryFormatError("trailing bytes after gallery records")
    return gallery


def load_gallery(path) -> Gallery:
    return parse_gallery(Path(path).read_bytes())
