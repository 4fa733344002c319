"""Desk-scale differentiable model: MLP encoder, projection head, prototype
classifier, with hand-derived reverse-mode gradients and SGD + cosine decay.

Forward: h = W2 tanh(W1 x + b1) + b2; z = normalize(V2 tanh(V1 h + c1) + c2);
cos_k = <normalize(h), normalize(o_k)>; p = softmax(cos / tau). Losses hand
back gradients with respect to z and cos; backward() pushes them through
every layer, including both unit-normalizations. All gradients are checked
against central finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"FQDM"
CHECKPOINT_VERSION = 1
_EPS = 1e-12


@dataclass
class ModelState:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    c2: np.ndarray
    prototypes: np.ndarray  # (n_classes, embed_dim), rows unit-norm
    step: int = 0
    seed: int = 0

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def embed_dim(self):
        return self.W2.shape[1]

    @property
    def n_classes(self):
        return self.prototypes.shape[0]

    def param_items(self):
        return [
            ("W1", self.W1),
            ("b1", self.b1),
            ("W2", self.W2),
            ("b2", self.b2),
            ("V1", self.V1),
            ("c1", self.c1),
            ("V2", self.V2),
            ("c2", self.c2),
            ("prototypes", self.prototypes),
        ]


@dataclass
class BatchForward:
    """Cached activations for one forward pass; x is None on head-only passes."""

    x: np.ndarray | None
    t1: np.ndarray | None
    h: np.ndarray
    g1: np.ndarray
    g: np.ndarray
    z: np.ndarray
    hn: np.ndarray
    cos: np.ndarray
    logits: np.ndarray
    p: np.ndarray


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    c2: np.ndarray
    prototypes: np.ndarray

    @staticmethod
    def zeros_like(state: ModelState) -> "Gradients":
        return Gradients(*[np.zeros_like(arr) for _, arr in state.param_items()])

    def items(self):
        return [
            ("W1", self.W1),
            ("b1", self.b1),
            ("W2", self.W2),
            ("b2", self.b2),
            ("V1", self.V1),
            ("c1", self.c1),
            ("V2", self.V2),
            ("c2", self.c2),
            ("prototypes", self.prototypes),
        ]

    def add_(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for (_, mine), (_, theirs) in zip(self.items(), other.items()):
            mine += scale * theirs
        return self

    def scale_(self, factor: float) -> "Gradients":
        for _, arr in self.items():
            arr *= factor
        return self

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for _, arr in self.items())


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_state(
    input_dim: int,
    n_classes: int,
    enc_hidden: int = 256,
    embed_dim: int = 128,
    proj_hidden: int = 128,
    proj_dim: int = 64,
    seed: int = 0,
) -> ModelState:
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(n_classes, embed_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    return ModelState(
        W1=_glorot(rng, input_dim, enc_hidden),
        b1=np.zeros(enc_hidden),
        W2=_glorot(rng, enc_hidden, embed_dim),
        b2=np.zeros(embed_dim),
        V1=_glorot(rng, embed_dim, proj_hidden),
        c1=np.zeros(proj_hidden),
        V2=_glorot(rng, proj_hidden, proj_dim),
        c2=np.zeros(proj_dim),
        prototypes=protos,
        seed=seed,
    )


def _normalize_rows(m):
    return m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), _EPS)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _flatten_images(state, images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != state.input_dim:
        raise ValueError(
            f"batch shape {x.shape} incompatible with encoder input dim {state.input_dim}"
        )
    return x


def _head_forward(state, h, tau_cls):
    g1 = np.tanh(h @ state.V1 + state.c1)
    g = g1 @ state.V2 + state.c2
    z = _normalize_rows(g)
    hn = _normalize_rows(h)
    on = _normalize_rows(state.prototypes)
    cos = hn @ on.T
    logits = cos / tau_cls
    p = _softmax(logits)
    return g1, g, z, hn, cos, logits, p


def forward(state: ModelState, images, tau_cls: float = 0.1) -> BatchForward:
    """Full forward pass over a batch of images (flattened internally)."""
    x = _flatten_images(state, images)
    t1 = np.tanh(x @ state.W1 + state.b1)
    h = t1 @ state.W2 + state.b2
    g1, g, z, hn, cos, logits, p = _head_forward(state, h, tau_cls)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
    return BatchForward(x=x, t1=t1, h=h, g1=g1, g=g, z=z, hn=hn, cos=cos, logits=logits, p=p)


def forward_embeddings(state: ModelState, h, tau_cls: float = 0.1) -> BatchForward:
    """Head-only forward from fixed embeddings (no encoder gradients)."""
    h = np.asarray(h, dtype=np.float64)
    g1, g, z, hn, cos, logits, p = _head_forward(state, h, tau_cls)
    return BatchForward(x=None, t1=None, h=h, g1=g1, g=g, z=z, hn=hn, cos=cos, logits=logits, p=p)


def normalize_vjp(normalized, upstream, norms):
    """VJP of row-wise unit normalization; output is orthogonal to each row."""
    inner = np.sum(normalized * upstream, axis=1, keepdims=True)
    return (upstream - normalized * inner) / norms


def backward(state: ModelState, fwd: BatchForward, dz=None, dcos=None) -> Gradients:
    """Exact gradients of a scalar loss given grads w.r.t. z and/or cos."""
    grads = Gradients.zeros_like(state)
    batch = fwd.h.shape[0]
    dh = np.zeros_like(fwd.h)

    if dz is not None and np.any(dz):
        g_norms = np.maximum(np.linalg.norm(fwd.g, axis=1, keepdims=True), _EPS)
        dg = normalize_vjp(fwd.z, np.asarray(dz, dtype=np.float64), g_norms)
        grads.V2 += fwd.g1.T @ dg
        grads.c2 += dg.sum(axis=0)
        dg1 = (dg @ state.V2.T) * (1.0 - fwd.g1**2)
        grads.V1 += fwd.h.T @ dg1
        grads.c1 += dg1.sum(axis=0)
        dh += dg1 @ state.V1.T

    if dcos is not None and np.any(dcos):
        dcos = np.asarray(dcos, dtype=np.float64)
        on = _normalize_rows(state.prototypes)
        dhn = dcos @ on
        don = dcos.T @ fwd.hn
        proto_norms = np.maximum(
            np.linalg.norm(state.prototypes, axis=1, keepdims=True), _EPS
        )
        grads.prototypes += normalize_vjp(on, don, proto_norms)
        h_norms = np.maximum(np.linalg.norm(fwd.h, axis=1, keepdims=True), _EPS)
        dh += normalize_vjp(fwd.hn, dhn, h_norms)

    if fwd.x is not None and np.any(dh):
        grads.W2 += fwd.t1.T @ dh
        grads.b2 += dh.sum(axis=0)
        da1 = (dh @ state.W2.T) * (1.0 - fwd.t1**2)
        grads.W1 += fwd.x.T @ da1
        grads.b1 += da1.sum(axis=0)
    del batch
    return grads


def softmax_vjp(p, dp):
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    inner = np.sum(p * dp, axis=1, keepdims=True)
    return p * (dp - inner)


def cosine_lr(lr0: float, epoch: float, total_epochs: int) -> float:
    """lr(e) = lr0 * 0.5 * (1 + cos(pi * e / E))."""
    if total_epochs <= 0:
        return lr0
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return lr0 * 0.5 * (1.0 + np.cos(np.pi * frac))


def sgd_step(state: ModelState, grads: Gradients, lr: float) -> ModelState:
    """In-place SGD update; prototype rows are renormalized afterward."""
    if not grads.all_finite():
        bad = [name for name, arr in grads.items() if not np.all(np.isfinite(arr))]
        raise FloatingPointError(f"non-finite gradients in {bad}; step aborted")
    for (_, param), (_, grad) in zip(state.param_items(), grads.items()):
        param -= lr * grad
    state.prototypes /= np.maximum(
        np.linalg.norm(state.prototypes, axis=1, keepdims=True), _EPS
    )
    state.step += 1
    return state


# --- checkpoint I/O --------------------------------------------------------

_CKPT_HEADER = struct.Struct("<4sIIIIIIIQQ")


def save_checkpoint(state: ModelState, path) -> None:
    dims = (
        state.W1.shape[0],
        state.W1.shape[1],
        state.W2.shape[1],
        state.V1.shape[1],
        state.V2.shape[1],
        state.prototypes.shape[0],
    )
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *dims, state.step, state.seed)
        )
        for _, arr in state.param_items():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        header = fh.read(_CKPT_HEADER.size)
        if len(header) != _CKPT_HEADER.size:
            raise ValueError(f"{path}: truncated checkpoint header")
        magic, version, d_in, enc_h, emb, proj_h, proj_d, n_cls, step, seed = _CKPT_HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        shapes = [
            (d_in, enc_h),
            (enc_h,),
            (enc_h, emb),
            (emb,),
            (emb, proj_h),
            (proj_h,),
            (proj_h, proj_d),
            (proj_d,),
            (n_cls, emb),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"{path}: truncated parameter payload")
            arrays.append(np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape))
    return ModelState(*arrays, step=step, seed=seed)
