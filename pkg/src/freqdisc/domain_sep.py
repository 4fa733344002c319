"""Frequency-based separation of known- and unknown-domain samples.

Pipeline: flattened amplitude descriptors -> mean cosine similarity to the
K nearest labeled anchors -> two-component 1-D Gaussian mixture fitted by
EM on the density scores -> per-sample posterior of known-domain
membership. The component with the larger mean is the known domain
(known-domain samples score closer to the anchor set).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import fft2

VARIANCE_FLOOR = 1e-6
DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class AmplitudeDescriptor:
    vector: np.ndarray
    source_id: str = ""


@dataclass(frozen=True)
class AnchorSet:
    descriptors: tuple

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([d.vector for d in self.descriptors])

    def __len__(self):
        return len(self.descriptors)


@dataclass
class GmmModel:
    """Two-component 1-D Gaussian mixture; variances, not standard deviations."""

    mean_known: float
    mean_unknown: float
    var_known: float
    var_unknown: float
    weight_known: float
    weight_unknown: float
    log_likelihood_trace: list = field(default_factory=list)
    n_iter: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean_known": self.mean_known,
                "mean_unknown": self.mean_unknown,
                "var_known": self.var_known,
                "var_unknown": self.var_unknown,
                "weight_known": self.weight_known,
                "weight_unknown": self.weight_unknown,
                "iterations": self.n_iter,
                "final_log_likelihood": self.log_likelihood_trace[-1]
                if self.log_likelihood_trace
                else None,
            },
            indent=2,
        )


@dataclass
class DomainPartition:
    sample_ids: list
    density_scores: np.ndarray
    p_known: np.ndarray
    hard_known: np.ndarray  # bool, True = known domain

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "density_score", "p_known", "hard_label"])
            for sid, score, p, hard in zip(
                self.sample_ids, self.density_scores, self.p_known, self.hard_known
            ):
                writer.writerow(
                    [sid, f"{score:.8f}", f"{p:.8f}", "known" if hard else "unknown"]
                )


def amplitude_descriptor(image: np.ndarray, source_id: str = "", log_scale: bool = False) -> AmplitudeDescriptor:
    """Flattened centered amplitude spectrum of an image.

    Descriptors of images larger than 64x64 are 2x2 average-pooled per
    channel to keep the dimensionality in check.
    """
    amp = fft2(image).amplitude
    _, h, w = amp.shape
    if h * w > 64 * 64:
        h2, w2 = (h // 2) * 2, (w // 2) * 2
        amp = amp[:, :h2, :w2].reshape(amp.shape[0], h2 // 2, 2, w2 // 2, 2).mean(axis=(2, 4))
    if log_scale:
        amp = np.log1p(amp)
    vec = amp.reshape(-1)
    if np.linalg.norm(vec) == 0.0:
        raise ValueError(f"zero image yields a zero-norm descriptor (id={source_id!r})")
    return AmplitudeDescriptor(vector=vec, source_id=source_id)


def build_anchor_set(images, ids=None, subsample=None, rng=None, log_scale=False) -> AnchorSet:
    """Anchor descriptors from labeled known-domain images.

    subsample=None keeps every anchor; an integer draws that many without
    replacement (rng required).
    """
    ids = ids if ids is not None else [str(i) for i in range(len(images))]
    descs = [amplitude_descriptor(img, sid, log_scale) for img, sid in zip(images, ids)]
    if subsample is not None and subsample < len(descs):
        if rng is None:
            raise ValueError("anchor subsampling requires an rng")
        keep = rng.choice(len(descs), size=subsample, replace=False)
        descs = [descs[i] for i in sorted(keep)]
    return AnchorSet(descriptors=tuple(descs))


def knn_density(query: AmplitudeDescriptor, anchors: AnchorSet, k: int) -> float:
    """Mean cosine similarity between the query and its K nearest anchors."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if k > len(anchors):
        raise ValueError(f"K={k} exceeds anchor set size {len(anchors)}")
    mat = anchors.matrix
    q = query.vector
    sims = (mat @ q) / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q))
    top = np.sort(sims)[-k:]
    return float(np.mean(top))


def _gauss_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def fit_gmm_1d(scores, max_iter: int = 100, tol: float = 1e-7, seed: int = 0) -> GmmModel:
    """Two-component EM on 1-D scores.

    Initialization splits the scores at their median (deterministic, so the
    seed argument is accepted for interface stability but unused). The
    component with the larger fitted mean is labeled known.
    """
    del seed
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError(f"need at least 4 scores to fit, got {x.size}")
    if np.all(x == x[0]):
        raise ValueError("all scores identical; mixture fit is degenerate")

    med = np.median(x)
    lo, hi = x[x <= med], x[x > med]
    if hi.size == 0:  # ties at the median can empty the upper half
        order = np.argsort(x)
        lo, hi = x[order[: x.size // 2]], x[order[x.size // 2 :]]
    means = np.array([lo.mean(), hi.mean()])
    variances = np.maximum(np.array([lo.var(), hi.var()]), VARIANCE_FLOOR)
    weights = np.array([lo.size, hi.size], dtype=np.float64) / x.size

    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        # E-step
        dens = np.stack(
            [weights[j] * _gauss_pdf(x, means[j], variances[j]) for j in range(2)]
        )
        dens = np.maximum(dens, DENSITY_FLOOR)
        total = dens.sum(axis=0)
        ll = float(np.sum(np.log(total)))
        resp = dens / total
        # M-step
        nk = resp.sum(axis=1)
        means = (resp @ x) / nk
        variances = np.maximum(
            np.array([np.sum(resp[j] * (x - means[j]) ** 2) / nk[j] for j in range(2)]),
            VARIANCE_FLOOR,
        )
        weights = nk / x.size
        if trace and ll - trace[-1] < tol:
            trace.append(ll)
            break
        trace.append(ll)

    known, unknown = (0, 1) if means[0] >= means[1] else (1, 0)
    return GmmModel(
        mean_known=float(means[known]),
        mean_unknown=float(means[unknown]),
        var_known=float(variances[known]),
        var_unknown=float(variances[unknown]),
        weight_known=float(weights[known]),
        weight_unknown=float(weights[unknown]),
        log_likelihood_trace=trace,
        n_iter=n_iter,
    )


def posterior(model: GmmModel, score: float) -> float:
    """Posterior probability that a density score came from the known domain."""
    dk = max(model.weight_known * _gauss_pdf(score, model.mean_known, model.var_known), DENSITY_FLOOR)
    du = max(
        model.weight_unknown * _gauss_pdf(score, model.mean_unknown, model.var_unknown),
        DENSITY_FLOOR,
    )
    return float(dk / (dk + du))


def partition(unlabeled, anchors: AnchorSet, k: int = 3, max_iter: int = 100, tol: float = 1e-7) -> tuple:
    """Full separation pipeline over (sample_id, image) pairs.

    Returns (DomainPartition, GmmModel). Ties at p_known = 0.5 resolve to
    known, the supervised branch being the safer default.
    """
    if not unlabeled:
        raise ValueError("no unlabeled samples to partition")
    if len(anchors) == 0:
        raise ValueError("empty anchor set")
    ids = [sid for sid, _ in unlabeled]
    scores = np.array(
        [knn_density(amplitude_descriptor(img, sid), anchors, k) for sid, img in unlabeled]
    )
    model = fit_gmm_1d(scores, max_iter=max_iter, tol=tol)
    p_known = np.array([posterior(model, s) for s in scores])
    part = DomainPartition(
        sample_ids=ids,
        density_scores=scores,
        p_known=p_known,
        hard_known=p_known >= 0.5,
    )
    return part, model
