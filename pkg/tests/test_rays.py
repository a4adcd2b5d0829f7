import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from floorloc.raycast import NO_HIT, CameraModel, RayBundle
from floorloc.rays import (
    InterpolationError,
    NoiseModel,
    PredictionRecord,
    SimilarityWeights,
    depths_match,
    interpolate_depth_linear,
    interpolate_semantic_majority,
    load_predictions,
    perturb,
    ray_similarity,
    save_predictions,
)


def vote_oracle(labels, fov, n_d, gap, w):
    """Step-by-step reference of the majority-vote interpolation.

    Independent transcription: explicit counting loops, no shared helpers.
    """
    n = len(labels)
    c = n // 2
    out = []
    for i in range(n_d):
        theta = (i - n_d // 2) * gap
        if n == 1:
            idx = 0
        else:
            delta_alpha = fov / (n - 1)
            idx = round(c + theta / delta_alpha)
        votes = {}
        seen = set()
        for j in range(idx - w, idx + w + 1):
            j = min(max(0, j), n - 1)  # window indices clamp to the valid range
            if j in seen:
                continue  # each neighbor ray votes once
            seen.add(j)
            votes[int(labels[j])] = votes.get(int(labels[j]), 0) + 1
        top = max(votes.values())
        tied = sorted(k for k, v in votes.items() if v == top)
        if len(tied) > 1 and 0 <= idx <= n - 1 and int(labels[idx]) in tied:
            out.append(int(labels[idx]))
        else:
            out.append(tied[0])
    return np.array(out)


def test_paper_coarse_configuration_runs():
    labels = np.tile([1, 1, 2, 1, 3, 1, 1, 1], 5)
    out = interpolate_semantic_majority(labels, 80.0, 7, 80.0 / 6.0, window=1)
    assert len(out) == 7
    assert set(out.tolist()) <= set(labels.tolist())


def test_constant_input_stays_constant():
    for n_d in (1, 3, 7, 9):
        out = interpolate_semantic_majority(np.ones(40, dtype=int), 80.0, n_d,
                                            80.0 / max(1, n_d - 1), window=2)
        assert (out == 1).all()


def test_alternating_sequence_matches_hand_execution():
    labels = np.array([1, 3, 1, 3, 1, 3, 1, 3, 1])
    fov = 80.0
    gap = fov / 2.0
    got = interpolate_semantic_majority(labels, fov, 3, gap, window=1)
    want = vote_oracle(labels, fov, 3, gap, 1)
    assert np.array_equal(got, want)


def test_majority_matches_oracle_on_random_sequences():
    rng = np.random.default_rng(777)
    for _ in range(300):
        n = int(rng.integers(1, 60))
        labels = rng.integers(1, 4, n)
        n_d = int(rng.integers(1, 10))
        fov = 80.0
        gap = fov / max(6, 2 * (n_d // 2) * 2)  # keep targets inside the fov
        w = int(rng.integers(0, 4))
        got = interpolate_semantic_majority(labels, fov, n_d, gap, w)
        assert np.array_equal(got, vote_oracle(labels, fov, n_d, gap, w))


def test_window_zero_is_nearest_neighbor():
    rng = np.random.default_rng(5)
    labels = rng.integers(1, 4, 40)
    out = interpolate_semantic_majority(labels, 80.0, 7, 80.0 / 6.0, window=0)
    c = 20
    expect = []
    for i in range(7):
        theta = (i - 3) * 80.0 / 6.0
        idx = round(c + theta / (80.0 / 39.0))
        expect.append(labels[min(max(idx, 0), 39)])
    assert np.array_equal(out, np.array(expect))


def test_target_outside_fov_is_rejected():
    with pytest.raises(InterpolationError, match="extrapolate"):
        interpolate_semantic_majority(np.ones(9, dtype=int), 80.0, 5, 30.0)
    with pytest.raises(InterpolationError, match="extrapolate"):
        interpolate_depth_linear(np.ones(9), 80.0, 5, 30.0)


def test_depth_constant_and_knot_passthrough():
    assert np.allclose(interpolate_depth_linear(np.full(40, 2.5), 80.0, 7, 80.0 / 6.0), 2.5)
    # targets that coincide with source bearings pass depths through exactly
    depths = np.linspace(1.0, 3.0, 9)
    out = interpolate_depth_linear(depths, 80.0, 9, 80.0 / 8.0)
    assert np.allclose(out, depths)


def test_depth_two_ray_midpoint():
    out = interpolate_depth_linear(np.array([1.0, 3.0]), 80.0, 1, 0.0)
    assert out.shape == (1,)
    assert out[0] == pytest.approx(2.0)


def test_perturb_identity_at_zero_noise():
    cam = CameraModel()
    bundle = RayBundle(depths=np.linspace(0.5, 3.0, 40),
                       labels=np.tile([1, 2, 3, 1], 10), camera=cam)
    out = perturb(bundle, NoiseModel(0.0, 0.0, rng_seed=3))
    assert np.array_equal(out.depths, bundle.depths)
    assert np.array_equal(out.labels, bundle.labels)


def test_perturb_flip_prob_one_always_changes_labels():
    cam = CameraModel()
    labels = np.array([1, 2, 3, 1, 2, 3, NO_HIT, 1], dtype=np.int32)
    bundle = RayBundle(depths=np.full(8, 2.0), labels=labels, camera=cam)
    out = perturb(bundle, NoiseModel(0.0, 1.0, rng_seed=11))
    assert (out.labels != labels).all()
    assert set(out.labels.tolist()) <= {1, 2, 3}


def test_perturb_depth_noise_statistics():
    cam = CameraModel(max_range=15.0)
    n = 100_000
    bundle = RayBundle(depths=np.full(n, 7.5), labels=np.ones(n, dtype=np.int32),
                       camera=cam)
    out = perturb(bundle, NoiseModel(0.1, 0.0, rng_seed=42))
    std = float(np.std(out.depths - bundle.depths))
    assert 0.097 <= std <= 0.103


def test_perturb_reproducible_and_clamped():
    cam = CameraModel(max_range=5.0)
    bundle = RayBundle(depths=np.array([0.01, 4.99, 2.0]),
                       labels=np.array([1, 2, 3], dtype=np.int32), camera=cam)
    a = perturb(bundle, NoiseModel(2.0, 0.5, rng_seed=9))
    b = perturb(bundle, NoiseModel(2.0, 0.5, rng_seed=9))
    assert np.array_equal(a.depths, b.depths)
    assert np.array_equal(a.labels, b.labels)
    assert (a.depths > 0).all() and (a.depths <= 5.0).all()


def _bundle(depths, labels):
    return RayBundle(depths=np.asarray(depths, dtype=float),
                     labels=np.asarray(labels, dtype=np.int32))


def test_similarity_identity_is_zero():
    a = _bundle([1.0, 2.0, 3.0], [1, 2, 3])
    assert ray_similarity(a, a, SimilarityWeights(0.5)) == 0.0


def test_similarity_alpha_one_depth_only():
    a = _bundle([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1])
    b = _bundle([1.5, 2.5, 3.5, 4.5], [2, 3, 2, 3])
    assert ray_similarity(a, b, SimilarityWeights(1.0)) == pytest.approx(0.5)


def test_similarity_weighted_arithmetic():
    # depth L1-mean 0.2 m, 10 of 40 labels mismatched, alpha 0.6
    depths_a = np.full(40, 2.0)
    depths_b = np.full(40, 2.2)
    labels_a = np.ones(40, dtype=np.int32)
    labels_b = labels_a.copy()
    labels_b[:10] = 2
    score = ray_similarity(_bundle(depths_a, labels_a), _bundle(depths_b, labels_b),
                           SimilarityWeights(0.6))
    assert score == pytest.approx(0.6 * 0.2 + 0.4 * 0.25)


def test_similarity_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        ray_similarity(_bundle([1.0], [1]), _bundle([1.0, 2.0], [1, 2]),
                       SimilarityWeights(0.5))


def test_similarity_l1_metric_mode():
    a = _bundle([1.0, 1.0], [1, 1])
    b = _bundle([1.0, 1.0], [3, 2])
    assert ray_similarity(a, b, SimilarityWeights(0.0), semantic_metric="l1") == pytest.approx(1.5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 0.99))
def test_similarity_is_a_metric(seed, alpha):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    bundles = [
        _bundle(rng.uniform(0.1, 10.0, n), rng.integers(1, 4, n))
        for _ in range(3)
    ]
    w = SimilarityWeights(alpha)
    a, b, c = bundles
    dab = ray_similarity(a, b, w)
    dba = ray_similarity(b, a, w)
    assert dab == pytest.approx(dba)
    dac = ray_similarity(a, c, w)
    dcb = ray_similarity(c, b, w)
    assert dab <= dac + dcb + 1e-12


def test_depths_match_thresholds():
    assert depths_match(2.00, 2.05)
    assert not depths_match(2.00, 2.10)
    assert depths_match(2.00, 2.0999)


def test_prediction_file_round_trip(tmp_path):
    records = [
        PredictionRecord("q0", np.array([1.0, 2.0]), np.array([1, 2]),
                         room_label="Kitchen", room_conf=0.93),
        PredictionRecord("q1", np.array([3.0, 4.0]), np.array([3, 1])),
    ]
    path = tmp_path / "pred.jsonl"
    save_predictions(records, path)
    loaded = load_predictions(path)
    assert [r.query_id for r in loaded] == ["q0", "q1"]
    assert loaded[0].room_hint() == ("Kitchen", 0.93)
    assert loaded[1].room_hint() is None
    assert np.array_equal(loaded[1].depths, records[1].depths)


def test_prediction_file_error_reports_line(tmp_path):
    path = tmp_path / "pred.jsonl"
    path.write_text('{"query_id": "a", "depths": [1.0], "labels": [1]}\n{"bad": 1}\n')
    with pytest.raises(ValueError, match=":2:"):
        load_predictions(path)
