import numpy as np
import pytest

import textcam


def test_bundle_round_trip(tmp_path):
    acts = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    textcam.write_bundle(tmp_path / "b", {"acts": acts}, {"acts": "activation"}, {"layer": "x"})
    arrays, roles, meta = textcam.read_bundle(tmp_path / "b")
    assert roles == {"acts": "activation"}
    assert meta == {"layer": "x"}
    np.testing.assert_array_equal(arrays["acts"], acts)


def test_missing_bundle_raises_with_code(tmp_path):
    with pytest.raises(textcam.TextcamError) as info:
        textcam.read_bundle(tmp_path / "absent")
    assert info.value.code == "MissingFile"


def test_cam_is_the_weighted_channel_sum():
    rng = np.random.default_rng(0)
    maps = rng.random((5, 4, 6))
    w = rng.normal(size=5)
    np.testing.assert_allclose(textcam.saliency(maps, w), np.tensordot(w, maps, axes=1), atol=1e-12)
    np.testing.assert_allclose(textcam.gap(maps), maps.mean(axis=(1, 2)), atol=1e-12)
    image = textcam.render(textcam.saliency(maps, w), 8, 12)
    assert image.shape == (8, 12) and image.dtype == np.uint8
    assert textcam.render(textcam.saliency(maps, w), 8, 12, "jet").shape == (8, 12, 3)
    assert textcam.encode_png(image)[:8] == b"\x89PNG\r\n\x1a\n"


def test_identity_vocabulary_soft_thresholds():
    sol = textcam.admm_solve(np.array([3.0, -1.0]), np.eye(2), alpha=1.0, beta=0.0, tol=1e-10)
    assert sol["converged"]
    np.testing.assert_allclose(sol["omega"], [2.0, 0.0], atol=1e-8)
    assert textcam.top_k_indices(np.array([0.2, 0.0, 0.7]), 5) == [2, 0]


def test_unbounded_objective_is_reported():
    e = np.array([[1.0, -1.0], [0.0, 0.0]])
    with pytest.raises(textcam.TextcamError) as info:
        textcam.admm_solve(np.array([1.0, 0.0]), e, alpha=0.05, beta=0.1)
    assert info.value.code == "UnboundedObjective"


def test_lda_and_table():
    pos = np.array([[1.1, 0.1], [0.9, -0.1], [1.1, -0.1], [0.9, 0.1]])
    p = textcam.lda_direction(pos, -pos)
    np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-9)
    assert textcam.lda_direction(pos, pos) is None

    rng = np.random.default_rng(1)
    directions, degenerate = textcam.build_table(rng.normal(size=(40, 5)), rng.normal(size=(40, 3)), 10)
    assert directions.shape == (3, 5) and degenerate == [False] * 3
    np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)
    a, w = rng.random(3), rng.normal(size=3)
    t = textcam.semantic_representation(directions, degenerate, a, w)
    np.testing.assert_allclose(t, (w * a) @ directions, atol=1e-12)


def test_groups_partition_the_map():
    rng = np.random.default_rng(2)
    maps, w = rng.random((10, 5, 5)), rng.normal(size=10)
    out = textcam.greedy_relocate(rng.normal(size=(10, 4)), rng.normal(size=(3, 4)))
    assert out["converged"] and sorted(set(out["group"])) == [0, 1, 2]
    total = sum(textcam.group_saliency(maps, w, out["group"], k) for k in range(3))
    np.testing.assert_allclose(total, textcam.saliency(maps, w), atol=1e-12)


def test_concept_eval_and_protocol():
    scores = textcam.concept_scores(np.array([0.0, 2.0, 0.0]), np.eye(3))
    np.testing.assert_allclose(scores, [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(textcam.ablate(np.ones(4), [1, 3]), [1, 0, 1, 0])
    assert len(textcam.color_dominant_mask(np.eye(3, 6), 2)) <= 6

    data = textcam.synth_clevr_features(seed=0, n_per_class=20, bias=1.0)
    assert data["features"].shape[0] == 60
    assert all(c == {0: 1, 1: 0, 2: 2}[s] for s, c in zip(data["shapes"], data["colors"]))
    r = textcam.run_clevr_protocol()
    assert r["shape_acc_txt"] == 1.0 and r["color_acc_txt"] == 1.0
    assert r["shape_accuracy_after"] >= r["shape_accuracy_before"]
