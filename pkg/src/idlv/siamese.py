"""Shared-weight twin embedding, contrastive loss and the training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .autodiff import DTYPE, Architecture, ParamStore, backward_pass, forward, sgd_step
from .errors import ShapeError, TrainingError

logger = logging.getLogger(__name__)

# Below this distance the negative-pair gradient (which carries a 1/d factor) is taken as zero.
ZERO_DISTANCE = 1e-12

SEED_OFFSETS = {"init": 0, "shuffle": 1, "pairs": 2, "synth": 3}


def derive_seed(seed: int, purpose: str) -> int:
    """Per-purpose seed derived from the single run seed by a fixed offset."""
    return (int(seed) + SEED_OFFSETS[purpose]) % 2**64


@dataclass
class TrainConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass
class LabeledPair:
    """Two images of one client; ``y == 1`` iff both are real."""

    a: np.ndarray
    b: np.ndarray
    y: int
    client_id: Hashable = None

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.y!r}")


@dataclass
class SiameseModel:
    """One architecture and one parameter store; both branches go through it."""

    architecture: Architecture
    store: ParamStore

    def __post_init__(self):
        if len(self.architecture.output_shape) != 1:
            raise ShapeError("embedding network must end in a flat vector", ndim=(1, len(self.architecture.output_shape)))
        self.store.check_against(self.architecture)

    @classmethod
    def initialize(cls, architecture: Architecture, seed: int = 0) -> "SiameseModel":
        return cls(architecture, ParamStore.initialize(architecture, derive_seed(seed, "init")))

    @property
    def embedding_dim(self) -> int:
        return self.architecture.output_shape[0]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.architecture.input_shape

    def digest(self) -> str:
        """SHA-256 over the architecture descriptor and all parameter bytes."""
        h = hashlib.sha256(json.dumps(self.architecture.to_dict(), sort_keys=True).encode())
        for i, name, p, _ in self.store.items():
            h.update(f"{i}.{name}".encode())
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def embed(model: SiameseModel, image) -> np.ndarray:
    """G_w(x) for one image ``[C, H, W]`` or a batch ``[N, C, H, W]``."""
    return forward(model.architecture, model.store, image)


def pair_distance(a, b) -> float:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError("embeddings must have equal length", length=(a.shape, b.shape))
    return float(np.sqrt(np.sum((a - b) ** 2)))


def contrastive_loss(distances: Sequence[float], labels: Sequence[int], margin: float) -> float:
    """(1/2N) * sum(y d^2 + (1 - y) max(margin - d, 0)^2)."""
    d = np.asarray(distances, dtype=DTYPE).ravel()
    y = np.asarray(labels, dtype=DTYPE).ravel()
    if d.size == 0:
        raise ValueError("contrastive loss over an empty batch")
    if d.shape != y.shape:
        raise ShapeError("distances and labels differ in length", length=(d.size, y.size))
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin}")
    hinge = np.maximum(margin - d, 0.0)
    return float(np.sum(y * d * d + (1.0 - y) * hinge * hinge) / (2 * d.size))


def contrastive_loss_and_grads(emb_a, emb_b, labels, margin):
    """Loss over a batch of embedding pairs and its gradient w.r.t. both sides.

    ``emb_a`` and ``emb_b`` are ``[N, k]``. Returns ``(loss, grad_a, grad_b)``
    with ``grad_b == -grad_a``.
    """
    emb_a = np.asarray(emb_a, dtype=DTYPE)
    emb_b = np.asarray(emb_b, dtype=DTYPE)
    y = np.asarray(labels, dtype=DTYPE).reshape(-1, 1)
    n = emb_a.shape[0]
    diff = emb_a - emb_b
    d = np.sqrt(np.sum(diff * diff, axis=1, keepdims=True))
    loss = contrastive_loss(d, y, margin)
    hinge = np.maximum(margin - d, 0.0)
    safe_d = np.where(d < ZERO_DISTANCE, 1.0, d)
    neg_scale = np.where(d < ZERO_DISTANCE, 0.0, hinge / safe_d)
    grad_a = (y - (1.0 - y) * neg_scale) * diff / n
    return loss, grad_a, -grad_a


def _stack(images):
    return np.stack([np.asarray(im, dtype=DTYPE) for im in images])


def pair_batch_loss(model: SiameseModel, batch: Sequence[LabeledPair], margin: float, record=False, input_grad=False):
    """Forward both branches of every pair in one pass through the shared store.

    With ``record=True`` also backpropagates, accumulating parameter gradients
    into ``model.store.grads``, and returns ``(loss, input_grad_a, input_grad_b)``;
    the input gradients are None unless ``input_grad`` is set.
    """
    n = len(batch)
    x = np.concatenate([_stack([p.a for p in batch]), _stack([p.b for p in batch])])
    y = np.array([p.y for p in batch], dtype=DTYPE)
    if not record:
        e = forward(model.architecture, model.store, x)
        return contrastive_loss_and_grads(e[:n], e[n:], y, margin)[0]
    e, tape = forward(model.architecture, model.store, x, record=True)
    loss, ga, gb = contrastive_loss_and_grads(e[:n], e[n:], y, margin)
    gx = backward_pass(model.architecture, model.store, tape, np.concatenate([ga, gb]), input_grad=input_grad)
    if gx is None:
        return loss, None, None
    return loss, gx[:n], gx[n:]


def train_step(model: SiameseModel, batch: Sequence[LabeledPair], config: TrainConfig, batch_index=None) -> float:
    """One forward/backward/SGD update over ``batch``; returns the pre-update loss."""
    if not batch:
        raise ValueError("empty training batch")
    model.store.zero_grad()
    loss, _, _ = pair_batch_loss(model, batch, config.margin, record=True)
    if not math.isfinite(loss):
        model.store.zero_grad()
        clients = sorted({str(p.client_id) for p in batch})
        raise TrainingError(f"non-finite loss {loss} in batch {batch_index} (clients {clients})")
    sgd_step(model.store, config.learning_rate)
    return loss


def fit(model: SiameseModel, pairs: Sequence[LabeledPair], config: TrainConfig):
    """Train for ``config.epochs`` epochs with a seeded global shuffle per epoch.

    Returns ``(model, history)`` where ``history[e]`` is the mean batch loss of epoch ``e``.
    """
    history: list[float] = []
    if config.epochs == 0:
        return model, history
    if not pairs:
        raise ValueError("no training pairs")
    labels = {p.y for p in pairs}
    if labels != {0, 1}:
        logger.warning("training pairs contain only label(s) %s", sorted(labels))
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    for epoch in range(config.epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for b, start in enumerate(range(0, len(pairs), config.batch_size)):
            batch = [pairs[k] for k in order[start : start + config.batch_size]]
            losses.append(train_step(model, batch, config, batch_index=(epoch, b)))
        history.append(float(np.mean(losses)))
        logger.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, history[-1])
    return model, history
