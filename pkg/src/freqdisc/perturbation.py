"""Cross-domain and intra-domain frequency perturbation.

CDFP restyles a known-domain image with the low-frequency amplitudes of a
pseudo-label-matched unknown-domain donor drawn from a FIFO memory bank;
below the confidence gate (or when no gated donor exists) the donor is a
uniform draw from the whole bank. IDFP swaps low-frequency amplitudes
between two independently augmented views of one unknown-domain image.
All randomness flows through the caller's generator.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .spectral import FreqWindow, fft2, swap_low_freq


@dataclass
class BankEntry:
    image: np.ndarray
    pseudo_label: int
    confidence: float
    insert_seq: int = -1


class MemoryBank:
    """Fixed-capacity FIFO of unknown-domain samples with pseudo-labels."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries = deque()
        self._next_seq = 0

    def __len__(self):
        return len(self._entries)

    @property
    def entries(self):
        return tuple(self._entries)

    def push(self, entry: BankEntry) -> None:
        """Append an entry, evicting the oldest when over capacity."""
        if not np.isfinite(entry.confidence):
            raise ValueError("entry confidence must be finite")
        stamped = BankEntry(entry.image, entry.pseudo_label, entry.confidence, self._next_seq)
        self._next_seq += 1
        self._entries.append(stamped)
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def random_entry(self, rng):
        if not self._entries:
            return None
        return self._entries[int(rng.integers(len(self._entries)))]

    def select_style_donor(self, class_k: int, eta: float, rng):
        """Uniform draw among gated class-k entries, whole-bank fallback.

        Returns (entry, class_aware) or (None, False) on an empty bank.
        """
        if not self._entries:
            return None, False
        gated = [e for e in self._entries if e.pseudo_label == class_k and e.confidence > eta]
        if gated:
            return gated[int(rng.integers(len(gated)))], True
        return self.random_entry(rng), False


# --- image augmentations -------------------------------------------------


def _bilinear_resize(img, out_h, out_w):
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


@dataclass(frozen=True)
class HorizontalFlip:
    p: float = 0.5

    def apply(self, img, rng):
        if rng.random() < self.p:
            return img[:, :, ::-1].copy()
        return img


@dataclass(frozen=True)
class RandomCropResize:
    scale: tuple = (0.8, 1.0)

    def apply(self, img, rng):
        _, h, w = img.shape
        area = rng.uniform(self.scale[0], self.scale[1])
        side = np.sqrt(area)
        ch = max(1, int(round(side * h)))
        cw = max(1, int(round(side * w)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        crop = img[:, top : top + ch, left : left + cw]
        return _bilinear_resize(crop, h, w)


@dataclass(frozen=True)
class BrightnessJitter:
    delta: float = 0.2

    def apply(self, img, rng):
        shift = rng.uniform(-self.delta, self.delta)
        return np.clip(img + shift, 0.0, 1.0)


@dataclass(frozen=True)
class ContrastJitter:
    delta: float = 0.2

    def apply(self, img, rng):
        factor = rng.uniform(1.0 - self.delta, 1.0 + self.delta)
        mean = img.mean()
        return np.clip((img - mean) * factor + mean, 0.0, 1.0)


@dataclass(frozen=True)
class AugmentationSpec:
    """Ordered shape-preserving transforms with an optional standalone seed."""

    transforms: tuple = ()
    seed: int | None = None

    def apply(self, img, rng=None):
        if rng is None:
            rng = np.random.default_rng(self.seed)
        out = np.asarray(img, dtype=np.float64)
        for t in self.transforms:
            out = t.apply(out, rng)
        return out


def default_view_spec() -> AugmentationSpec:
    return AugmentationSpec(
        transforms=(
            HorizontalFlip(0.5),
            RandomCropResize((0.8, 1.0)),
            BrightnessJitter(0.2),
            ContrastJitter(0.2),
        )
    )


# --- perturbation operators ----------------------------------------------


@dataclass(frozen=True)
class CdfpInfo:
    """Telemetry for one CDFP call."""

    fallback: str  # "none" (class-aware), "whole_bank", or "identity"
    donor_seq: int = -1
    donor_label: int = -1
    donor_confidence: float = 0.0

    @property
    def class_aware(self):
        return self.fallback == "none"


def cdfp(known_image, known_pseudo, bank: MemoryBank, eta: float, window: FreqWindow, rng, gate_both: bool = True):
    """Cross-domain frequency perturbation of one known-domain image.

    known_pseudo is (class, confidence); labeled samples pass their ground
    truth with confidence 1.0. With gate_both (default) the class-aware
    donor search runs only when the receiver's confidence also exceeds eta.
    Returns (image, CdfpInfo); an empty bank yields the input unchanged.
    """
    if len(bank) == 0:
        return np.asarray(known_image, dtype=np.float64).copy(), CdfpInfo("identity")
    class_k, confidence = known_pseudo
    if gate_both and not (confidence > eta):
        donor, class_aware = bank.random_entry(rng), False
    else:
        donor, class_aware = bank.select_style_donor(class_k, eta, rng)
    out = swap_low_freq(fft2(donor.image), fft2(known_image), window)
    return out, CdfpInfo(
        fallback="none" if class_aware else "whole_bank",
        donor_seq=donor.insert_seq,
        donor_label=donor.pseudo_label,
        donor_confidence=donor.confidence,
    )


def idfp(image, spec_a: AugmentationSpec, spec_b: AugmentationSpec, window: FreqWindow, rng):
    """Intra-domain frequency perturbation.

    Builds two augmented views, swaps their low-frequency amplitudes in
    both directions, and keeps one direction uniformly at random. Returns
    (view_a, view_b, perturbed).
    """
    img = np.asarray(image, dtype=np.float64)
    view_a = spec_a.apply(img, rng)
    view_b = spec_b.apply(img, rng)
    spec_fa = fft2(view_a)
    spec_fb = fft2(view_b)
    a_style_into_b = swap_low_freq(spec_fa, spec_fb, window)
    b_style_into_a = swap_low_freq(spec_fb, spec_fa, window)
    perturbed = a_style_into_b if rng.random() < 0.5 else b_style_into_a
    return view_a, view_b, perturbed
