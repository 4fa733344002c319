"""Synthetic two-domain benchmark: procedural classes, corruptions, splits.

Each class is a parameterized texture/shape family (disk, square, stripes,
rings) with a distinct base hue and characteristic spatial frequency;
per-sample jitter moves position, scale, and hue. Domain B applies one
corruption kind at a fixed severity to independently drawn samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio

MAX_CLASSES = 32
SHAPES = ("disk", "square", "stripes", "rings")
CORRUPTION_KINDS = ("gaussian_noise", "shot_noise", "impulse_noise", "contrast", "fog_haze")

GAUSSIAN_SIGMA = (0.0, 0.04, 0.08, 0.12, 0.18, 0.26)
SHOT_PHOTONS = (None, 60, 25, 12, 5, 3)
IMPULSE_FRACTION = (0.0, 0.01, 0.03, 0.06, 0.1, 0.17)
CONTRAST_BLEND = (0.0, 0.15, 0.3, 0.45, 0.6, 0.75)
FOG_BLEND = (0.0, 0.15, 0.3, 0.45, 0.6, 0.75)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 8
    n_known: int = 4
    per_class: int = 40  # samples per class per domain
    size: int = 32
    channels: int = 3
    corruption: str = "fog_haze"
    severity: int = 4
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.n_known <= self.n_classes):
            raise ValueError(f"need 1 <= n_known <= n_classes, got {self.n_known}/{self.n_classes}")
        if self.n_classes > MAX_CLASSES:
            raise ValueError(f"class family grid holds {MAX_CLASSES} classes, got {self.n_classes}")
        if self.corruption not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption {self.corruption!r}")
        if not (0 <= self.severity <= 5):
            raise ValueError(f"severity must be in 0..5, got {self.severity}")


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray
    label: int
    domain: str  # "A" or "B"


@dataclass
class DatasetSplit:
    labeled: list = field(default_factory=list)  # Samples with visible labels
    unlabeled: list = field(default_factory=list)  # Samples; label/domain hidden
    old_classes: set = field(default_factory=set)
    n_classes: int = 0


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV->RGB for arrays in [0, 1]."""
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return r, g, b


BG_TINT = 0.18  # background hue saturation: mild class-style coupling
BG_ALPHA_BASE = 1.4  # per-class spectral slope of the background texture
BG_ALPHA_STEP = 0.1


def _class_params(c: int):
    shape = SHAPES[c % 4]
    hue = (c * 0.61803398875) % 1.0
    freq = 2.0 + (c // 4) % 4
    angle = np.deg2rad(22.5 * (c // 4))
    alpha = BG_ALPHA_BASE + BG_ALPHA_STEP * (c % 8)
    return shape, hue, freq, angle, alpha


def _fractal_background(rng, size, hue, alpha):
    """1/f^alpha texture with a faint class-hue tint.

    The class-specific spectral slope and tint couple a mild style
    component to class identity (affine corruptions rescale the spectrum
    but preserve its slope), so cross-class amplitude swaps produce
    off-manifold chimeras while class-matched swaps stay realistic —
    which is what class-aware donor selection protects."""
    coeff = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fy**2 + fx**2)
    radius[0, 0] = 1.0
    coeff = coeff / radius**alpha
    coeff[0, 0] = 0.0
    field = np.fft.ifft2(coeff).real
    span = field.max() - field.min()
    if span > 0:
        field = (field - field.min()) / span
    value = 0.35 + 0.3 * field  # texture in [0.35, 0.65]
    return np.stack(_hsv_to_rgb(np.full_like(value, hue), BG_TINT, value))


def render_sample(c: int, spec: SyntheticSpec, rng) -> np.ndarray:
    """One jittered sample of class c, shape (channels, size, size) in [0, 1].

    Class identity is carried by the shape layout and hue (phase-like
    structure); the background texture statistics are identical for all
    classes so that amplitude spectra act as a domain cue, not a class cue.
    """
    size = spec.size
    shape, hue, freq, angle, alpha = _class_params(c)
    hue = (hue + rng.uniform(-0.03, 0.03)) % 1.0
    scale = rng.uniform(0.92, 1.08)
    cx = 0.5 + rng.uniform(-0.08, 0.08)
    cy = 0.5 + rng.uniform(-0.08, 0.08)

    yy, xx = np.mgrid[0:size, 0:size] / size
    dx, dy = xx - cx, yy - cy
    r = np.sqrt(dx**2 + dy**2)
    extent = 1.0 / (1.0 + np.exp((r - 0.32 * scale) * size))  # soft footprint

    if shape == "disk":
        mask = extent
    elif shape == "square":
        d = np.maximum(np.abs(dx), np.abs(dy))
        mask = 1.0 / (1.0 + np.exp((d - 0.28 * scale) * size))
    elif shape == "stripes":
        proj = dx * np.cos(angle) + dy * np.sin(angle)
        grating = 0.5 + 0.5 * np.sin(2 * np.pi * freq * proj * scale * 2.0)
        mask = extent * grating
    else:  # rings
        grating = 0.5 + 0.5 * np.sin(2 * np.pi * freq * r * scale * 2.0)
        mask = extent * grating

    fg = np.stack(_hsv_to_rgb(np.full_like(mask, hue), 0.75, 0.85))
    bg = _fractal_background(rng, size, hue, alpha)
    blend = 0.65 * mask
    img = bg * (1.0 - blend) + fg * blend
    img = img + rng.normal(0.0, 0.01, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    if spec.channels == 1:
        img = img.mean(axis=0, keepdims=True)
    return img


def _sample_rng(spec: SyntheticSpec, domain: str, c: int, idx: int):
    dom = 0 if domain == "A" else 1
    return np.random.default_rng(np.random.SeedSequence((spec.seed, dom, c, idx)))


def generate_classes(spec: SyntheticSpec, domain: str = "A") -> list:
    """Clean dataset for one domain: per_class samples of each class."""
    samples = []
    for c in range(spec.n_classes):
        for idx in range(spec.per_class):
            rng = _sample_rng(spec, domain, c, idx)
            img = render_sample(c, spec, rng)
            samples.append(Sample(f"{domain}-c{c:02d}-{idx:04d}", img, c, domain))
    return samples


def corrupt(image: np.ndarray, kind: str, severity: int, rng) -> np.ndarray:
    """Apply one corruption at the given severity; 0 is the exact identity."""
    if kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}")
    if not (0 <= severity <= 5):
        raise ValueError(f"severity must be in 0..5, got {severity}")
    img = np.asarray(image, dtype=np.float64)
    if severity == 0:
        return img.copy()
    if kind == "gaussian_noise":
        out = img + rng.normal(0.0, GAUSSIAN_SIGMA[severity], size=img.shape)
    elif kind == "shot_noise":
        photons = SHOT_PHOTONS[severity]
        out = rng.poisson(img * photons) / photons
    elif kind == "impulse_noise":
        frac = IMPULSE_FRACTION[severity]
        out = img.copy()
        hits = rng.random(img.shape) < frac
        salt = rng.random(img.shape) < 0.5
        out[hits & salt] = 1.0
        out[hits & ~salt] = 0.0
    elif kind == "contrast":
        f = CONTRAST_BLEND[severity]
        out = (1.0 - f) * img + f * img.mean()
    else:  # fog_haze
        f = FOG_BLEND[severity]
        out = (1.0 - f) * img + f * 1.0
    return np.clip(out, 0.0, 1.0)


def generate_corrupted_domain(spec: SyntheticSpec) -> list:
    """Domain B: independently drawn samples, each corrupted per the spec."""
    samples = generate_classes(spec, domain="B")
    for s in samples:
        rng = _sample_rng(spec, "Bc", s.label, int(s.sample_id.rsplit("-", 1)[1]))
        s.image = corrupt(s.image, spec.corruption, spec.severity, rng)
    return samples


def make_split(clean_a: list, corrupted_b: list, spec: SyntheticSpec, rng) -> DatasetSplit:
    """Labeled = random 50% of domain-A samples from the first n_known classes."""
    old_classes = set(range(spec.n_known))
    labeled, unlabeled = [], []
    known_a = [s for s in clean_a if s.label in old_classes]
    rest_a = [s for s in clean_a if s.label not in old_classes]
    picked = set(
        rng.choice(len(known_a), size=len(known_a) // 2, replace=False).tolist()
    )
    for i, s in enumerate(known_a):
        (labeled if i in picked else unlabeled).append(s)
    unlabeled.extend(rest_a)
    unlabeled.extend(corrupted_b)
    return DatasetSplit(
        labeled=labeled,
        unlabeled=unlabeled,
        old_classes=old_classes,
        n_classes=spec.n_classes,
    )


def generate_benchmark(spec: SyntheticSpec) -> DatasetSplit:
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 99)))
    clean_a = generate_classes(spec, "A")
    corrupted_b = generate_corrupted_domain(spec)
    return make_split(clean_a, corrupted_b, spec, rng)


def save_dataset(split: DatasetSplit, root) -> None:
    """Write labeled/ and unlabeled/ PNG trees plus manifest.csv."""
    root = Path(root)
    (root / "labeled").mkdir(parents=True, exist_ok=True)
    (root / "unlabeled").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in split.labeled:
        imgio.write_png(root / "labeled" / f"{s.sample_id}.png", s.image)
        rows.append(
            [s.sample_id, "labeled", s.label, s.label, s.domain, int(s.label in split.old_classes)]
        )
    for s in split.unlabeled:
        imgio.write_png(root / "unlabeled" / f"{s.sample_id}.png", s.image)
        rows.append(
            [s.sample_id, "unlabeled", "", s.label, s.domain, int(s.label in split.old_classes)]
        )
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "split", "label_or_blank", "hidden_label", "hidden_domain", "class_is_old"]
        )
        writer.writerows(rows)


def load_dataset(root) -> DatasetSplit:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    split = DatasetSplit()
    labels = set()
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = row["sample_id"]
            hidden = int(row["hidden_label"])
            labels.add(hidden)
            if int(row["class_is_old"]):
                split.old_classes.add(hidden)
            img = imgio.read_png(root / row["split"] / f"{sid}.png")
            sample = Sample(sid, img, hidden, row["hidden_domain"])
            if row["split"] == "labeled":
                split.labeled.append(sample)
            else:
                split.unlabeled.append(sample)
    split.n_classes = max(labels) + 1 if labels else 0
    return split


def ingest_image_folder(folder_a, folder_b=None, n_known=None, labeled_fraction=0.5, seed=0) -> DatasetSplit:
    """Directory-per-class PNG trees as a DS_GCD split.

    folder_a is the known domain; an optional folder_b (same class names)
    becomes the unknown domain. The first n_known class names (sorted) are
    the old classes; half of their domain-A samples are labeled.
    """
    folder_a = Path(folder_a)
    class_names = sorted(p.name for p in folder_a.iterdir() if p.is_dir())
    if not class_names:
        raise ValueError(f"no class subdirectories under {folder_a}")
    name_to_idx = {name: i for i, name in enumerate(class_names)}
    n_known = len(class_names) if n_known is None else n_known

    def read_tree(folder, domain):
        out = []
        for name in class_names:
            sub = Path(folder) / name
            if not sub.is_dir():
                continue
            for i, png in enumerate(sorted(sub.glob("*.png"))):
                out.append(
                    Sample(f"{domain}-{name}-{i:04d}", imgio.read_png(png), name_to_idx[name], domain)
                )
        return out

    clean_a = read_tree(folder_a, "A")
    domain_b = read_tree(folder_b, "B") if folder_b else []
    rng = np.random.default_rng(seed)
    old_classes = set(range(n_known))
    known_a = [s for s in clean_a if s.label in old_classes]
    rest_a = [s for s in clean_a if s.label not in old_classes]
    n_lab = int(len(known_a) * labeled_fraction)
    picked = set(rng.choice(len(known_a), size=n_lab, replace=False).tolist())
    split = DatasetSplit(old_classes=old_classes, n_classes=len(class_names))
    for i, s in enumerate(known_a):
        (split.labeled if i in picked else split.unlabeled).append(s)
    split.unlabeled.extend(rest_a)
    split.unlabeled.extend(domain_b)
    return split
