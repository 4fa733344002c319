"""2D Fourier transforms, amplitude/phase decomposition, low-frequency amplitude swap.

Images are real-valued arrays of shape (C, H, W) with nominal pixel range
[0, 1]. Spectra are stored centered (DC at index (floor(H/2), floor(W/2)))
as separate amplitude and phase grids. The forward transform is the
unnormalized DFT; the inverse carries the 1/(H*W) factor, so Parseval reads
sum(x^2) = sum(A^2)/(H*W) per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Spectrum:
    """Centered per-channel amplitude and phase of an image.

    amplitude: (C, H, W) nonnegative, DC shifted to the grid center.
    phase:     (C, H, W) radians in (-pi, pi].
    """

    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self):
        return self.amplitude.shape


@dataclass(frozen=True)
class FreqWindow:
    """Square low-frequency window with relative side ratio L in [0, 0.5].

    The pixel side length is s = floor(2 * L * min(H, W)); L = 0 gives an
    empty window.
    """

    L: float = 0.04

    def __post_init__(self):
        if not (0.0 <= self.L <= 0.5):
            raise ValueError(f"window ratio L must lie in [0, 0.5], got {self.L}")

    def side(self, height: int, width: int) -> int:
        return int(np.floor(2.0 * self.L * min(height, width)))


def _check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must have shape (C, H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        bad = int(np.count_nonzero(~np.isfinite(img)))
        raise ValueError(f"image contains {bad} non-finite pixel(s)")
    return img


def fft2(image: np.ndarray) -> Spectrum:
    """Per-channel unnormalized 2D DFT, returned as a centered Spectrum."""
    img = _check_image(image)
    coeff = np.fft.fft2(img, axes=(-2, -1))
    coeff = np.fft.fftshift(coeff, axes=(-2, -1))
    return Spectrum(amplitude=np.abs(coeff), phase=np.angle(coeff))


def ifft2(spectrum: Spectrum, clamp: bool = True) -> np.ndarray:
    """Inverse transform of a centered Spectrum back to an image.

    Recombines A * exp(i * P), applies the 1/(H*W) inverse DFT, takes the
    real part and (by default) clamps to [0, 1].
    """
    amp = np.asarray(spectrum.amplitude, dtype=np.float64)
    pha = np.asarray(spectrum.phase, dtype=np.float64)
    if amp.shape != pha.shape:
        raise ValueError(
            f"amplitude/phase shape mismatch: {amp.shape} vs {pha.shape}"
        )
    if amp.ndim != 3:
        raise ValueError(f"spectrum must have shape (C, H, W), got {amp.shape}")
    coeff = np.fft.ifftshift(amp * np.exp(1j * pha), axes=(-2, -1))
    img = np.real(np.fft.ifft2(coeff, axes=(-2, -1)))
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def window_slices(height: int, width: int, window: FreqWindow):
    """Row/column slices of the centered s x s low-frequency block.

    The block is anchored at the DC bin (floor(H/2), floor(W/2)) and spans
    [c - floor(s/2), c - floor(s/2) + s) on each axis.
    """
    s = window.side(height, width)
    ch, cw = height // 2, width // 2
    r0 = ch - s // 2
    c0 = cw - s // 2
    return slice(r0, r0 + s), slice(c0, c0 + s)


def swap_spectrum(style_donor: Spectrum, content: Spectrum, window: FreqWindow) -> Spectrum:
    """Overwrite content's centered low-frequency amplitude block with the donor's.

    Phase is taken from content unchanged. Overwriting (not blending) makes
    this operator idempotent at the spectrum level.
    """
    if style_donor.shape != content.shape:
        raise ValueError(
            f"donor/content shape mismatch: {style_donor.shape} vs {content.shape}"
        )
    _, h, w = content.shape
    rows, cols = window_slices(h, w, window)
    amp = content.amplitude.copy()
    amp[:, rows, cols] = style_donor.amplitude[:, rows, cols]
    return Spectrum(amplitude=amp, phase=content.phase.copy())


def swap_low_freq(style_donor: Spectrum, content: Spectrum, window: FreqWindow) -> np.ndarray:
    """Low-frequency amplitude swap, reconstructed to image space.

    Even window sides leave one boundary row/column without its conjugate
    mirror, so the swapped spectrum is not exactly Hermitian; the inverse
    transform then carries an imaginary residue proportional to the
    donor/content amplitude mismatch at that boundary. The real part is
    kept and the result clamped to [0, 1].
    """
    swapped = swap_spectrum(style_donor, content, window)
    coeff = np.fft.ifftshift(
        swapped.amplitude * np.exp(1j * swapped.phase), axes=(-2, -1)
    )
    full = np.fft.ifft2(coeff, axes=(-2, -1))
    return np.clip(full.real, 0.0, 1.0)
