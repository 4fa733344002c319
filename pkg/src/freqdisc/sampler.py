"""Clustering-difficulty-aware sampling.

Per-class difficulty combines intra-class dispersion (mean squared distance
of predicted-class embeddings to their prototype) with inter-class
prototype crowding (mean cosine similarity to the other prototypes); a
softmax over the sums drives categorical resampling of hard classes, whose
recent embeddings are retrieved from a per-class ring buffer.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass
class DifficultyStats:
    d_intra: np.ndarray  # (C,) >= 0
    d_inter: np.ndarray  # (C,) in [-1, 1]
    counts: np.ndarray  # (C,) samples predicted per class
    p_difficulty: np.ndarray  # (C,) simplex

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "n_c", "d_intra", "d_inter", "p_difficulty"])
            for c in range(len(self.counts)):
                writer.writerow(
                    [
                        c,
                        int(self.counts[c]),
                        f"{self.d_intra[c]:.8f}",
                        f"{self.d_inter[c]:.8f}",
                        f"{self.p_difficulty[c]:.8f}",
                    ]
                )


class FeatureBank:
    """Per-class ring buffers of recent embeddings predicted as that class."""

    def __init__(self, n_classes: int, capacity: int = 64):
        self.n_classes = n_classes
        self.capacity = capacity
        self._buffers = [deque(maxlen=capacity) for _ in range(n_classes)]

    def push(self, embedding, predicted_class: int) -> None:
        self._buffers[predicted_class].append(np.asarray(embedding, dtype=np.float64).copy())

    def push_batch(self, embeddings, predictions) -> None:
        for emb, pred in zip(embeddings, predictions):
            self.push(emb, int(pred))

    def size(self, class_c: int) -> int:
        return len(self._buffers[class_c])

    def all_embeddings(self):
        """(embeddings, predicted classes) across every buffer, oldest first."""
        embs, labels = [], []
        for c, buf in enumerate(self._buffers):
            embs.extend(buf)
            labels.extend([c] * len(buf))
        if not embs:
            return np.zeros((0, 0)), np.zeros(0, dtype=int)
        return np.stack(embs), np.asarray(labels)

    def retrieve(self, class_c: int, n: int, rng=None) -> np.ndarray:
        """Up to n most-recent class-c embeddings, newest first."""
        del rng  # retrieval is recency-based; kept for interface stability
        buf = self._buffers[class_c]
        if not buf:
            return np.zeros((0, 0))
        recent = list(buf)[-n:][::-1]
        return np.stack(recent)


def compute_difficulty(embeddings, predictions, prototypes, mean_probs=None) -> DifficultyStats:
    """Per-class difficulty from embeddings, hard predictions, prototypes.

    Empty classes take the mean d_intra of the populated ones (neutral
    imputation) so they neither dominate nor vanish from the draw.
    """
    h = np.asarray(embeddings, dtype=np.float64)
    protos = np.asarray(prototypes, dtype=np.float64)
    n_classes = protos.shape[0]
    if mean_probs is not None:
        preds = np.argmax(np.asarray(mean_probs), axis=1)
    else:
        preds = np.asarray(predictions, dtype=int)

    counts = np.zeros(n_classes, dtype=int)
    d_intra = np.zeros(n_classes)
    for c in range(n_classes):
        members = h[preds == c]
        counts[c] = members.shape[0]
        if counts[c]:
            d_intra[c] = float(np.mean(np.sum((members - protos[c]) ** 2, axis=1)))
    populated = counts > 0
    if populated.any() and not populated.all():
        d_intra[~populated] = d_intra[populated].mean()

    on = protos / np.maximum(np.linalg.norm(protos, axis=1, keepdims=True), 1e-12)
    sim = on @ on.T
    if n_classes > 1:
        d_inter = (sim.sum(axis=1) - np.diag(sim)) / (n_classes - 1)
    else:
        d_inter = np.zeros(1)

    return DifficultyStats(
        d_intra=d_intra,
        d_inter=d_inter,
        counts=counts,
        p_difficulty=sampling_probs_from_scores(d_intra + d_inter),
    )


def sampling_probs_from_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    shifted = s - s.max()
    e = np.exp(shifted)
    return e / e.sum()


def sampling_probs(stats: DifficultyStats) -> np.ndarray:
    """Softmax of d_intra + d_inter (max-subtracted)."""
    return sampling_probs_from_scores(stats.d_intra + stats.d_inter)


def sample_category(probs, rng) -> int:
    """Inverse-CDF categorical draw."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise ValueError("probs must be a nonnegative vector summing to 1")
    cdf = np.cumsum(p)
    u = rng.random()
    return int(np.searchsorted(cdf, u, side="right").clip(0, len(p) - 1))
