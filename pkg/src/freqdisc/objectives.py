"""Loss functions: contrastive (unsupervised + supervised), self-distillation
clustering, entropy regularization, and the composite known-domain /
unknown-domain objectives with the student/teacher temperature schedule.

Every loss returns (value, gradients w.r.t. its immediate inputs); the
composite losses fold the softmax Jacobian so their gradients are w.r.t.
projections z and raw cosine logits. Teacher targets are sharpened with
tau_t and never receive gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model_core import softmax_vjp

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.35
    epsilon: float = 0.1
    tau_u: float = 0.07  # unsupervised contrastive
    tau_c: float = 0.1  # supervised contrastive
    tau_s: float = 0.1  # student softmax
    tau_t_start: float = 0.07
    tau_t_end: float = 0.04
    tau_t_warmup_epochs: int = 30

    def __post_init__(self):
        for name in ("tau_u", "tau_c", "tau_s", "tau_t_start", "tau_t_end"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


def tau_t_at(epoch: float, weights: LossWeights) -> float:
    """Teacher temperature: cosine warmup from start to end, then constant."""
    w = weights.tau_t_warmup_epochs
    if w <= 0 or epoch >= w:
        return weights.tau_t_end
    frac = max(epoch, 0.0) / w
    return weights.tau_t_end + (weights.tau_t_start - weights.tau_t_end) * 0.5 * (
        1.0 + np.cos(np.pi * frac)
    )


def sharpen(logits, tau_t: float):
    """Temperature-sharpened softmax (stable, max-subtracted)."""
    if tau_t <= 0:
        raise ValueError(f"tau_t must be positive, got {tau_t}")
    scaled = np.asarray(logits, dtype=np.float64) / tau_t
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ContrastiveBatch:
    """Stacked unit projections plus per-anchor positive index sets."""

    z: np.ndarray  # (N, d)
    anchors: list  # indices with nonempty positives
    positives: list  # aligned with anchors, arrays of indices (self excluded)

    def validate(self):
        n = self.z.shape[0]
        for anchor, pos in zip(self.anchors, self.positives):
            pos = np.asarray(pos)
            if pos.size == 0:
                raise ValueError(f"anchor {anchor} has an empty positive set")
            if anchor in pos:
                raise ValueError(f"anchor {anchor} occurs in its own positive set")
            if np.any(pos < 0) or np.any(pos >= n):
                raise ValueError(f"positive indices for anchor {anchor} out of range")


def views_batch(z_views) -> ContrastiveBatch:
    """Multi-view batch: the positives of each entry are its sibling views."""
    v = len(z_views)
    b = z_views[0].shape[0]
    z = np.concatenate(z_views, axis=0)
    anchors, positives = [], []
    for i in range(v * b):
        sample = i % b
        sibs = np.array([sample + k * b for k in range(v) if sample + k * b != i])
        anchors.append(i)
        positives.append(sibs)
    return ContrastiveBatch(z=z, anchors=anchors, positives=positives)


def labeled_batch(z_views, labels) -> ContrastiveBatch:
    """Supervised batch: positives share the ground-truth label (any view)."""
    v = len(z_views)
    b = z_views[0].shape[0]
    z = np.concatenate(z_views, axis=0)
    stacked = np.tile(np.asarray(labels), v)
    anchors, positives = [], []
    for i in range(v * b):
        same = np.where(stacked == stacked[i])[0]
        same = same[same != i]
        if same.size:
            anchors.append(i)
            positives.append(same)
    return ContrastiveBatch(z=z, anchors=anchors, positives=positives)


def contrastive_loss(batch: ContrastiveBatch, tau: float):
    """Mean InfoNCE over anchors; denominator spans every other entry.

    Returns (value, grad w.r.t. z). Log-sum-exp is max-subtracted.
    """
    batch.validate()
    z = np.asarray(batch.z, dtype=np.float64)
    n = z.shape[0]
    if not batch.anchors:
        return 0.0, np.zeros_like(z)
    sims = (z @ z.T) / tau
    np.fill_diagonal(sims, -np.inf)

    n_anchors = len(batch.anchors)
    coeff = np.zeros((n, n))
    total = 0.0
    for anchor, pos in zip(batch.anchors, batch.positives):
        row = sims[anchor]
        m = row.max()
        lse = m + np.log(np.sum(np.exp(row - m)))
        soft = np.exp(row - lse)
        soft[anchor] = 0.0
        total += float(lse - np.mean(row[pos]))
        coeff[anchor] += soft
        coeff[anchor, pos] -= 1.0 / len(pos)
    loss = total / n_anchors
    coeff /= n_anchors
    dz = (coeff @ z + coeff.T @ z) / tau
    return loss, dz


def cluster_loss(p_student, q_target):
    """Mean cross-entropy -sum_k q_k log p_k; q carries no gradient."""
    p = np.asarray(p_student, dtype=np.float64)
    q = np.asarray(q_target, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    b = p.shape[0]
    safe = np.maximum(p, PROB_FLOOR)
    loss = float(-np.sum(q * np.log(safe)) / b)
    dp = -(q / safe) / b
    return loss, dp


def entropy_reg(p_batch):
    """Negative entropy of the batch-mean prediction, in [-log C, 0]."""
    p = np.asarray(p_batch, dtype=np.float64)
    b = p.shape[0]
    mean = p.mean(axis=0)
    safe = np.maximum(mean, PROB_FLOOR)
    value = float(np.sum(mean * np.log(safe)))
    dp = np.tile((np.log(safe) + 1.0) / b, (b, 1))
    return value, dp


# --- composite objectives ---------------------------------------------------


@dataclass
class KdBatch:
    """Two augmented views of CDFP-perturbed known-domain + labeled samples."""

    z1: np.ndarray
    z2: np.ndarray
    cos1: np.ndarray
    cos2: np.ndarray
    labels: np.ndarray  # ground truth, -1 for unlabeled known-domain samples


@dataclass
class KdGrads:
    dz1: np.ndarray
    dz2: np.ndarray
    dcos1: np.ndarray
    dcos2: np.ndarray


@dataclass
class UdBatch:
    """Two plain views plus the frequency-perturbed view (IDFP triples)."""

    za: np.ndarray
    zb: np.ndarray
    zp: np.ndarray
    cosa: np.ndarray
    cosb: np.ndarray
    cosp: np.ndarray


@dataclass
class UdGrads:
    dza: np.ndarray
    dzb: np.ndarray
    dzp: np.ndarray
    dcosa: np.ndarray
    dcosb: np.ndarray
    dcosp: np.ndarray


def _student_vjp(p, dp, tau_s):
    return softmax_vjp(p, dp) / tau_s


def loss_kd(batch: KdBatch, weights: LossWeights, tau_t: float, teachers=None):
    """Known-domain objective.

    (1 - beta) * (unsupervised contrastive + cross-view self-distillation
    over every sample) + beta * (supervised contrastive + one-hot
    cross-entropy over the labeled subset). The self-distillation teachers
    are sharpened cross-view predictions under stop-gradient; `teachers`
    overrides them with frozen (q1, q2) targets, which is how the
    finite-difference suite pins the stop-gradient semantics.
    """
    b = batch.z1.shape[0]
    grads = KdGrads(
        np.zeros_like(batch.z1),
        np.zeros_like(batch.z2),
        np.zeros_like(batch.cos1),
        np.zeros_like(batch.cos2),
    )
    if b == 0:
        return 0.0, grads
    beta = weights.beta
    tau_s = weights.tau_s
    p1 = sharpen(batch.cos1, tau_s)
    p2 = sharpen(batch.cos2, tau_s)

    # Unsupervised contrastive over both views of every sample.
    rep_u, dz = contrastive_loss(views_batch([batch.z1, batch.z2]), weights.tau_u)
    grads.dz1 += (1 - beta) * dz[:b]
    grads.dz2 += (1 - beta) * dz[b:]

    # Self-distillation: each view's student vs the other view's teacher.
    if teachers is None:
        q1 = sharpen(batch.cos2, tau_t)
        q2 = sharpen(batch.cos1, tau_t)
    else:
        q1, q2 = teachers
    cls_a, dp1 = cluster_loss(p1, q1)
    cls_b, dp2 = cluster_loss(p2, q2)
    cls_u = 0.5 * (cls_a + cls_b)
    grads.dcos1 += (1 - beta) * 0.5 * _student_vjp(p1, dp1, tau_s)
    grads.dcos2 += (1 - beta) * 0.5 * _student_vjp(p2, dp2, tau_s)

    labeled = np.where(np.asarray(batch.labels) >= 0)[0]
    rep_s = cls_s = 0.0
    if labeled.size == 0:
        if beta > 0:
            warnings.warn("loss_kd: no labeled samples in batch; supervised terms are 0")
    else:
        y = np.asarray(batch.labels)[labeled]
        zs = [batch.z1[labeled], batch.z2[labeled]]
        rep_s, dzs = contrastive_loss(labeled_batch(zs, y), weights.tau_c)
        nl = labeled.size
        grads.dz1[labeled] += beta * dzs[:nl]
        grads.dz2[labeled] += beta * dzs[nl:]

        onehot = np.eye(batch.cos1.shape[1])[y]
        ce1, dpl1 = cluster_loss(p1[labeled], onehot)
        ce2, dpl2 = cluster_loss(p2[labeled], onehot)
        cls_s = 0.5 * (ce1 + ce2)
        grads.dcos1[labeled] += beta * 0.5 * _student_vjp(p1[labeled], dpl1, tau_s)
        grads.dcos2[labeled] += beta * 0.5 * _student_vjp(p2[labeled], dpl2, tau_s)

    value = (1 - beta) * (rep_u + cls_u) + beta * (rep_s + cls_s)
    return float(value), grads


def loss_ud(batch: UdBatch, weights: LossWeights, tau_t: float, use_perturbed: bool = True, teachers=None):
    """Unknown-domain objective over IDFP triples.

    Contrastive positives span all three views of a sample; the clustering
    students are the two plain views against the sharpened perturbed-view
    teacher (stop-gradient; `teachers` pins frozen targets for gradient
    checks — (q,) in the three-view form, (qa, qb) in the two-view form).
    With use_perturbed=False (IDFP ablated) the standard two-view form is
    used: cross-view teachers, no third view.
    """
    b = batch.za.shape[0]
    grads = UdGrads(
        np.zeros_like(batch.za),
        np.zeros_like(batch.zb),
        np.zeros_like(batch.zp),
        np.zeros_like(batch.cosa),
        np.zeros_like(batch.cosb),
        np.zeros_like(batch.cosp),
    )
    if b == 0:
        return 0.0, grads
    tau_s = weights.tau_s
    pa = sharpen(batch.cosa, tau_s)
    pb = sharpen(batch.cosb, tau_s)

    if use_perturbed:
        rep, dz = contrastive_loss(
            views_batch([batch.za, batch.zb, batch.zp]), weights.tau_u
        )
        grads.dza += dz[:b]
        grads.dzb += dz[b : 2 * b]
        grads.dzp += dz[2 * b :]
        q = sharpen(batch.cosp, tau_t) if teachers is None else teachers[0]
        ca, dpa = cluster_loss(pa, q)
        cb, dpb = cluster_loss(pb, q)
    else:
        rep, dz = contrastive_loss(views_batch([batch.za, batch.zb]), weights.tau_u)
        grads.dza += dz[:b]
        grads.dzb += dz[b:]
        if teachers is None:
            qa, qb = sharpen(batch.cosb, tau_t), sharpen(batch.cosa, tau_t)
        else:
            qa, qb = teachers
        ca, dpa = cluster_loss(pa, qa)
        cb, dpb = cluster_loss(pb, qb)
    cls = 0.5 * (ca + cb)
    grads.dcosa += 0.5 * _student_vjp(pa, dpa, tau_s)
    grads.dcosb += 0.5 * _student_vjp(pb, dpb, tau_s)
    return float(rep + cls), grads


def loss_total(kd: float, ud: float, entropy: float, epsilon: float) -> float:
    """L_total = L_kd + L_ud + epsilon * entropy term."""
    return float(kd + ud + epsilon * entropy)
