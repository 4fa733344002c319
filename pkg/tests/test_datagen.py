import numpy as np
import pytest

from freqdisc.datagen import (
    CORRUPTION_KINDS,
    DatasetSplit,
    SyntheticSpec,
    corrupt,
    generate_benchmark,
    generate_classes,
    ingest_image_folder,
    load_dataset,
    make_split,
    render_sample,
    save_dataset,
)
from freqdisc import imgio


def small_spec(**kw):
    base = dict(n_classes=4, n_known=2, per_class=6, size=16, seed=7)
    base.update(kw)
    return SyntheticSpec(**base)


def test_same_seed_identical_samples():
    spec = small_spec()
    a = generate_classes(spec)
    b = generate_classes(spec)
    assert len(a) == len(b) == 4 * 6
    for s1, s2 in zip(a, b):
        assert s1.sample_id == s2.sample_id
        assert np.array_equal(s1.image, s2.image)


def test_pixel_range_in_unit_interval():
    for s in generate_classes(small_spec()):
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.image.shape == (3, 16, 16)


def test_class_means_pairwise_distinct():
    spec = SyntheticSpec(n_classes=16, n_known=4, per_class=8, size=16, seed=1)
    samples = generate_classes(spec)
    means = {}
    for s in samples:
        means.setdefault(s.label, []).append(s.image)
    mean_imgs = {c: np.mean(v, axis=0) for c, v in means.items()}
    for a in range(16):
        for b in range(a + 1, 16):
            dist = np.linalg.norm(mean_imgs[a] - mean_imgs[b])
            assert dist > 0.05, (a, b, dist)


def test_class_capacity_enforced():
    with pytest.raises(ValueError, match="32"):
        SyntheticSpec(n_classes=33, n_known=4)


def test_corrupt_severity_zero_identity():
    rng = np.random.default_rng(0)
    img = rng.random((3, 8, 8))
    for kind in CORRUPTION_KINDS:
        out = corrupt(img, kind, 0, np.random.default_rng(1))
        assert np.array_equal(out, img)


def test_gaussian_severity_three_noise_std():
    rng = np.random.default_rng(2)
    img = np.full((3, 64, 64), 0.5)
    out = corrupt(img, "gaussian_noise", 3, rng)
    # Clipping is negligible at 0.5 +/- 0.12.
    std = float(np.std(out - img))
    assert abs(std - 0.12) / 0.12 < 0.1


def test_fog_severity_five_on_black():
    img = np.zeros((3, 8, 8))
    out = corrupt(img, "fog_haze", 5, np.random.default_rng(0))
    assert np.allclose(out, 0.75, atol=1e-12)


def test_contrast_preserves_mean():
    rng = np.random.default_rng(3)
    img = rng.random((3, 16, 16))
    out = corrupt(img, "contrast", 4, rng)
    assert np.isclose(out.mean(), img.mean(), atol=1e-9)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown corruption"):
        corrupt(np.zeros((1, 4, 4)), "zoom_blur", 3, np.random.default_rng(0))
    with pytest.raises(ValueError, match="severity"):
        corrupt(np.zeros((1, 4, 4)), "fog_haze", 6, np.random.default_rng(0))


@pytest.mark.parametrize("kind", CORRUPTION_KINDS)
def test_corruption_ladder_monotone(kind):
    spec = small_spec()
    img = render_sample(1, spec, np.random.default_rng(5))
    dists = []
    for severity in range(6):
        out = corrupt(img, kind, severity, np.random.default_rng(42))
        dists.append(float(np.linalg.norm(out - img)))
    for lo, hi in zip(dists, dists[1:]):
        assert hi >= lo - 1e-9, (kind, dists)


def test_split_counts_match_arithmetic():
    spec = SyntheticSpec(n_classes=8, n_known=4, per_class=20, size=16, seed=3)
    split = generate_benchmark(spec)
    assert len(split.labeled) == 40
    assert len(split.unlabeled) == 280
    assert split.old_classes == {0, 1, 2, 3}


def test_split_degenerates_to_single_domain_gcd():
    spec = small_spec(n_known=4)  # all classes known
    clean = generate_classes(spec, "A")
    split = make_split(clean, [], spec, np.random.default_rng(0))
    assert len(split.labeled) == len(clean) // 2
    assert all(s.domain == "A" for s in split.unlabeled)


def test_labeled_subset_of_old_classes_and_disjoint():
    split = generate_benchmark(small_spec())
    labeled_ids = {s.sample_id for s in split.labeled}
    unlabeled_ids = {s.sample_id for s in split.unlabeled}
    assert labeled_ids.isdisjoint(unlabeled_ids)
    assert all(s.label in split.old_classes for s in split.labeled)
    assert len(labeled_ids) + len(unlabeled_ids) == 2 * 4 * 6


def test_benchmark_deterministic():
    s1 = generate_benchmark(small_spec())
    s2 = generate_benchmark(small_spec())
    for a, b in zip(s1.labeled + s1.unlabeled, s2.labeled + s2.unlabeled):
        assert a.sample_id == b.sample_id
        assert np.array_equal(a.image, b.image)


def test_save_load_roundtrip(tmp_path):
    split = generate_benchmark(small_spec())
    save_dataset(split, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back.labeled) == len(split.labeled)
    assert len(back.unlabeled) == len(split.unlabeled)
    assert back.old_classes == split.old_classes
    assert back.n_classes == split.n_classes
    by_id = {s.sample_id: s for s in back.labeled}
    orig = split.labeled[0]
    loaded = by_id[orig.sample_id]
    assert loaded.label == orig.label
    assert loaded.domain == orig.domain
    assert np.max(np.abs(loaded.image - orig.image)) <= 0.5 / 255 + 1e-9
    manifest = (tmp_path / "ds" / "manifest.csv").read_text().splitlines()
    assert manifest[0] == "sample_id,split,label_or_blank,hidden_label,hidden_domain,class_is_old"


def test_ingest_image_folder(tmp_path):
    rng = np.random.default_rng(6)
    for domain in ("A", "B"):
        for cls in ("cat", "dog"):
            sub = tmp_path / domain / cls
            sub.mkdir(parents=True)
            for i in range(4):
                imgio.write_png(sub / f"{i}.png", rng.random((3, 8, 8)))
    split = ingest_image_folder(tmp_path / "A", tmp_path / "B", n_known=1, seed=0)
    assert split.n_classes == 2
    assert split.old_classes == {0}
    assert len(split.labeled) == 2  # half of the 4 class-0 domain-A samples
    assert len(split.unlabeled) == 14
    assert all(s.domain == "A" for s in split.labeled)
