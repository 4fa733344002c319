import json

import numpy as np
import pytest

from freqdisc.domain_sep import (
    AnchorSet,
    GmmModel,
    amplitude_descriptor,
    build_anchor_set,
    fit_gmm_1d,
    knn_density,
    partition,
    posterior,
)

from oracles import dft2_direct, knn_mean_cosine


def smooth_image(rng, h=8, w=8):
    """Low-frequency structured image, values in [0.2, 0.8]."""
    yy, xx = np.mgrid[0:h, 0:w]
    fx, fy = rng.uniform(0.5, 2.0, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    base = 0.5 + 0.3 * np.sin(2 * np.pi * (fx * xx / w + fy * yy / h) + phase)
    return base[None, :, :]


def test_identical_images_identical_descriptors():
    rng = np.random.default_rng(0)
    img = smooth_image(rng)
    d1 = amplitude_descriptor(img, "a")
    d2 = amplitude_descriptor(img, "b")
    assert np.array_equal(d1.vector, d2.vector)


def test_constant_image_descriptor_dc_only():
    img = np.full((1, 4, 4), 0.6)
    d = amplitude_descriptor(img)
    assert np.count_nonzero(d.vector > 1e-9) == 1


def test_binary_negation_differs_only_at_dc():
    # Unbalanced pattern: 5 ones, so the DC bins of x and 1-x differ.
    img = np.array(
        [[[1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]], dtype=np.float64
    )
    neg = 1.0 - img
    da = amplitude_descriptor(img).vector.reshape(4, 4)
    db = amplitude_descriptor(neg).vector.reshape(4, 4)
    # Oracle: away from DC the direct DFTs differ only by sign.
    fa, fb = dft2_direct(img[0]), dft2_direct(neg[0])
    mask = np.ones((4, 4), dtype=bool)
    mask[0, 0] = False
    assert np.allclose(np.abs(fa)[mask], np.abs(fb)[mask], atol=1e-9)
    off_dc = np.ones((4, 4), dtype=bool)
    off_dc[2, 2] = False  # centered DC
    assert np.allclose(da[off_dc], db[off_dc], atol=1e-9)
    cos = np.dot(da.ravel(), db.ravel()) / (
        np.linalg.norm(da) * np.linalg.norm(db)
    )
    assert cos < 1.0 - 1e-9


def test_descriptor_rejects_zero_image():
    with pytest.raises(ValueError, match="zero"):
        amplitude_descriptor(np.zeros((1, 4, 4)))


def test_descriptor_pools_large_images():
    rng = np.random.default_rng(2)
    small = amplitude_descriptor(rng.random((1, 64, 64)))
    large = amplitude_descriptor(rng.random((1, 128, 128)))
    assert small.vector.size == 64 * 64
    assert large.vector.size == 64 * 64


def make_anchors(rng, n=5, dim=6):
    descs = [rng.random(dim) + 0.1 for _ in range(n)]
    from freqdisc.domain_sep import AmplitudeDescriptor

    return AnchorSet(tuple(AmplitudeDescriptor(v, str(i)) for i, v in enumerate(descs)))


def test_knn_self_nearest():
    rng = np.random.default_rng(3)
    anchors = make_anchors(rng)
    q = anchors.descriptors[2]
    assert knn_density(q, anchors, 1) == pytest.approx(1.0, abs=1e-12)


def test_knn_full_set_equals_mean_cosine():
    rng = np.random.default_rng(4)
    anchors = make_anchors(rng, n=6)
    q = anchors.descriptors[0]
    got = knn_density(q, anchors, 6)
    mat = anchors.matrix
    sims = mat @ q.vector / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q.vector))
    assert got == pytest.approx(float(sims.mean()), abs=1e-12)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_knn_matches_exhaustive_oracle(k):
    rng = np.random.default_rng(5)
    anchors = make_anchors(rng, n=5)
    from freqdisc.domain_sep import AmplitudeDescriptor

    q = AmplitudeDescriptor(rng.random(6) + 0.1, "q")
    got = knn_density(q, anchors, k)
    want = knn_mean_cosine(q.vector, [d.vector for d in anchors.descriptors], k)
    assert got == pytest.approx(want, abs=1e-12)


def test_knn_rejects_k_too_large():
    rng = np.random.default_rng(6)
    anchors = make_anchors(rng, n=3)
    with pytest.raises(ValueError, match="exceeds"):
        knn_density(anchors.descriptors[0], anchors, 4)


def test_knn_permutation_and_scale_invariance():
    rng = np.random.default_rng(7)
    from freqdisc.domain_sep import AmplitudeDescriptor

    vecs = [rng.random(8) + 0.1 for _ in range(6)]
    q = AmplitudeDescriptor(rng.random(8) + 0.1, "q")
    a1 = AnchorSet(tuple(AmplitudeDescriptor(v, str(i)) for i, v in enumerate(vecs)))
    perm = [vecs[i] for i in rng.permutation(6)]
    a2 = AnchorSet(tuple(AmplitudeDescriptor(v, str(i)) for i, v in enumerate(perm)))
    assert knn_density(q, a1, 3) == pytest.approx(knn_density(q, a2, 3), abs=1e-12)
    scaled = AnchorSet(
        tuple(AmplitudeDescriptor(7.5 * v, str(i)) for i, v in enumerate(vecs))
    )
    q_scaled = AmplitudeDescriptor(3.0 * q.vector, "q")
    assert knn_density(q_scaled, scaled, 3) == pytest.approx(
        knn_density(q, a1, 3), abs=1e-10
    )


def test_gmm_recovers_known_generative_parameters():
    rng = np.random.default_rng(8)
    scores = np.concatenate(
        [rng.normal(0.9, 0.01, 100), rng.normal(0.3, 0.01, 100)]
    )
    model = fit_gmm_1d(scores)
    assert abs(model.mean_known - 0.9) < 0.02
    assert abs(model.mean_unknown - 0.3) < 0.02
    assert abs(model.weight_known - 0.5) < 0.1
    assert abs(model.weight_unknown - 0.5) < 0.1


def test_gmm_symmetric_data_straddles_center():
    delta = 0.05
    scores = np.array([0.4 - delta, 0.4 + delta] * 10)
    model = fit_gmm_1d(scores)
    assert model.mean_known + model.mean_unknown == pytest.approx(0.8, abs=1e-6)
    assert model.mean_known > 0.4 > model.mean_unknown


def test_gmm_log_likelihood_nondecreasing():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        scores = rng.random(40)
        model = fit_gmm_1d(scores)
        trace = np.array(model.log_likelihood_trace)
        assert np.all(np.diff(trace) >= -1e-9)


def test_gmm_rejects_degenerate_inputs():
    with pytest.raises(ValueError, match="identical"):
        fit_gmm_1d(np.full(10, 0.5))
    with pytest.raises(ValueError, match="at least 4"):
        fit_gmm_1d(np.array([0.1, 0.9]))


def hand_model():
    return GmmModel(
        mean_known=0.8,
        mean_unknown=0.2,
        var_known=0.01,
        var_unknown=0.01,
        weight_known=0.7,
        weight_unknown=0.3,
    )


def test_posterior_midpoint_symmetry():
    model = GmmModel(0.8, 0.2, 0.01, 0.01, 0.5, 0.5)
    assert posterior(model, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_posterior_dominance_at_known_mean():
    model = GmmModel(0.9, 0.1, 0.0004, 0.0004, 0.5, 0.5)
    assert posterior(model, 0.9) > 0.999


def test_posterior_matches_closed_form_oracle():
    model = hand_model()

    def pdf(x, m, v):
        return np.exp(-0.5 * (x - m) ** 2 / v) / np.sqrt(2 * np.pi * v)

    dk = 0.7 * pdf(0.5, 0.8, 0.01)
    du = 0.3 * pdf(0.5, 0.2, 0.01)
    assert posterior(model, 0.5) == pytest.approx(dk / (dk + du), abs=1e-12)


def test_posterior_normalizes_exactly():
    model = hand_model()
    for s in np.linspace(-1, 2, 13):
        pk = posterior(model, s)
        flipped = GmmModel(
            model.mean_unknown,
            model.mean_known,
            model.var_unknown,
            model.var_known,
            model.weight_unknown,
            model.weight_known,
        )
        assert pk + posterior(flipped, s) == pytest.approx(1.0, abs=1e-12)


def test_partition_identical_to_anchors_all_known():
    rng = np.random.default_rng(9)
    anchor_imgs = [smooth_image(rng) for _ in range(8)]
    anchors = build_anchor_set(anchor_imgs)
    # Unlabeled = anchors plus mild copies; scores cluster near 1 except a
    # couple of noisy outliers that define the unknown mode.
    unlabeled = [(f"u{i}", img) for i, img in enumerate(anchor_imgs)]
    noisy = [
        (f"n{i}", np.clip(smooth_image(rng) + rng.normal(0, 0.26, (1, 8, 8)), 0, 1))
        for i in range(8)
    ]
    part, _ = partition(unlabeled + noisy, anchors, k=3)
    assert np.all(part.hard_known[: len(unlabeled)])


def test_partition_separates_clean_from_heavy_noise():
    rng = np.random.default_rng(10)
    anchor_imgs = [smooth_image(rng, 16, 16) for _ in range(20)]
    anchors = build_anchor_set(anchor_imgs)
    clean = [(f"c{i}", smooth_image(rng, 16, 16)) for i in range(50)]
    noisy = [
        (
            f"n{i}",
            np.clip(
                smooth_image(rng, 16, 16) + rng.normal(0, 0.26, (1, 16, 16)), 0, 1
            ),
        )
        for i in range(50)
    ]
    part, model = partition(clean + noisy, anchors, k=3)
    truth = np.array([True] * 50 + [False] * 50)
    acc = float(np.mean(part.hard_known == truth))
    assert acc >= 0.9
    assert model.mean_known > model.mean_unknown


def test_partition_rejects_duplicated_single_image():
    rng = np.random.default_rng(11)
    img = smooth_image(rng)
    anchors = build_anchor_set([smooth_image(rng) for _ in range(4)])
    dup = [(f"d{i}", img) for i in range(10)]
    with pytest.raises(ValueError, match="identical"):
        partition(dup, anchors, k=3)


def test_partition_csv_and_model_json(tmp_path):
    rng = np.random.default_rng(12)
    anchors = build_anchor_set([smooth_image(rng) for _ in range(5)])
    unlabeled = [(f"s{i}", smooth_image(rng)) for i in range(6)] + [
        (f"x{i}", np.clip(smooth_image(rng) + rng.normal(0, 0.3, (1, 8, 8)), 0, 1))
        for i in range(6)
    ]
    part, model = partition(unlabeled, anchors, k=2)
    csv_path = tmp_path / "partition.csv"
    part.write_csv(csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "sample_id,density_score,p_known,hard_label"
    assert len(lines) == 13
    record = json.loads(model.to_json())
    assert set(record) == {
        "mean_known",
        "mean_unknown",
        "var_known",
        "var_unknown",
        "weight_known",
        "weight_unknown",
        "iterations",
        "final_log_likelihood",
    }
    assert record["mean_known"] >= record["mean_unknown"]


def test_anchor_subsample():
    rng = np.random.default_rng(13)
    imgs = [smooth_image(rng) for _ in range(10)]
    full = build_anchor_set(imgs)
    sub = build_anchor_set(imgs, subsample=4, rng=np.random.default_rng(0))
    assert len(full) == 10
    assert len(sub) == 4
