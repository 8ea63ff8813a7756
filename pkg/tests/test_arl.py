import json

import numpy as np
import pytest

from ztflow import arl as A
from ztflow import records as R
from ztflow import synth

SCHEMA3 = ("u", "v", "w")


def const_vec(values=(1.0, 2.0, 3.0), schema=SCHEMA3):
    return R.FeatureVector(tuple(values), schema)


def small_cfg(**kw):
    base = dict(map_samples=20, min_train_samples=2000, validation_samples=40)
    base.update(kw)
    return A.ArlConfig(**base)


def feed_n(det, vec, n, t0=0.0, dt=1.0):
    rep = None
    for i in range(n):
        rep = det.feed(vec, t0 + i * dt)
    return rep


# --- feature map ---------------------------------------------------------------

def test_feature_map_is_partition():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(1, 24))
        samples = rng.normal(size=(50, n))
        fmap = A.build_feature_map(samples, max_cluster_size=5)
        flat = sorted(i for c in fmap.clusters for i in c)
        assert flat == list(range(n))
        assert all(len(c) <= 5 for c in fmap.clusters)


def test_feature_map_groups_correlated_features():
    rng = np.random.default_rng(1)
    base = rng.normal(size=400)
    samples = np.column_stack([base, base * 2 + 0.01 * rng.normal(size=400),
                               rng.normal(size=400)])
    fmap = A.build_feature_map(samples, max_cluster_size=2)
    cluster_of = {i: c for c in fmap.clusters for i in c}
    assert cluster_of[0] == cluster_of[1]
    assert cluster_of[2] != cluster_of[0]


def test_feature_map_rejects_non_partition():
    with pytest.raises(ValueError):
        A.FeatureMap(((0, 1), (1, 2)), 3)
    with pytest.raises(ValueError):
        A.FeatureMap(((0,),), 2)


# --- state machine --------------------------------------------------------------

def test_stays_in_mapping_below_map_samples():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    rep = feed_n(det, const_vec(), 19)
    assert rep.state is A.ArlState.MAPPING
    assert det.scaler is None


def test_mapping_transition_builds_scaler_and_map():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    rep = feed_n(det, const_vec(), 20)
    assert rep.state is A.ArlState.TRAINING
    assert rep.transitioned
    assert det.scaler is not None
    assert det.feature_map is not None


def test_constant_data_reaches_execute_with_tiny_threshold():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    rep = feed_n(det, const_vec(), 20 + 2000)
    assert rep.state is A.ArlState.VALIDATING
    rep = feed_n(det, const_vec(), 40, t0=1000.0)
    assert rep.state is A.ArlState.EXECUTE
    assert det.decision_threshold is not None
    assert det.score(const_vec()) < 0.01  # constant data reconstructs near-zero


def test_min_train_duration_gates_transition():
    cfg = small_cfg(min_train_duration=1e6)
    det = A.ArlDetector(SCHEMA3, cfg, seed=0)
    rep = feed_n(det, const_vec(), 2500)  # 2500 s elapsed < 1e6
    assert rep.state is A.ArlState.TRAINING


def test_bad_validation_window_returns_to_training():
    rng = np.random.default_rng(12)
    cfg = small_cfg(min_train_samples=2000, validation_samples=40,
                    max_train_rmse=0.05, max_validation_rmse=0.1)
    det = A.ArlDetector(SCHEMA3, cfg, seed=0)
    for i, v in enumerate(two_level_stream(4000, rng)):
        if det.feed(v, float(i)).state is A.ArlState.VALIDATING:
            break
    assert det.state is A.ArlState.VALIDATING
    outlier = const_vec((900.0, -800.0, 700.0))
    rep = feed_n(det, outlier, 40, t0=1e5)
    assert rep.state is A.ArlState.TRAINING
    assert rep.transitioned
    assert rep.validation_max > det.config.max_validation_rmse


def test_score_invalid_before_validation():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    feed_n(det, const_vec(), 50)
    assert det.state is A.ArlState.TRAINING
    with pytest.raises(A.InvalidStateError):
        det.score(const_vec())
    with pytest.raises(A.InvalidStateError):
        det.decide(const_vec())


def test_schema_mismatch_rejected():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    with pytest.raises(R.SchemaMismatchError):
        det.feed(R.FeatureVector((1.0,), ("x",)), 0.0)


def test_enforcement_never_updates_weights():
    det = A.ArlDetector(SCHEMA3, small_cfg(), seed=0)
    feed_n(det, const_vec(), 2020)
    frozen = json.dumps(det.ensemble.to_dict(), sort_keys=True)
    det.score(const_vec((5.0, 5.0, 5.0)))  # validating-state score
    assert json.dumps(det.ensemble.to_dict(), sort_keys=True) == frozen
    feed_n(det, const_vec(), 40, t0=1000.0)
    assert det.state is A.ArlState.EXECUTE
    det.decide(const_vec((99.0, -99.0, 0.0)))
    det.feed(const_vec(), 5000.0)  # feeding in execute is a no-op
    assert json.dumps(det.ensemble.to_dict(), sort_keys=True) == frozen


def test_config_validation():
    with pytest.raises(ValueError):
        A.ArlConfig(max_train_rmse=0.1, max_validation_rmse=0.05)
    with pytest.raises(ValueError):
        A.ArlConfig(map_samples=0)


# --- behavior on structured data -------------------------------------------------

def two_level_stream(n, rng):
    """Vectors drawn from a discrete 2x2 level structure plus mild noise."""
    vals = []
    for _ in range(n):
        a = rng.choice([10.0, 20.0])
        b = rng.choice([5.0, 9.0])
        c = a + b
        vals.append(R.FeatureVector((a, b, c), SCHEMA3))
    return vals


def train_to_execute(det, stream, t0=0.0):
    for i, v in enumerate(stream):
        rep = det.feed(v, t0 + float(i))
        if rep.state is A.ArlState.EXECUTE:
            return i
    raise AssertionError(f"never reached execute: {det.state}")


def test_unseen_extreme_value_scores_higher():
    rng = np.random.default_rng(3)
    det = A.ArlDetector(SCHEMA3, small_cfg(min_train_samples=2000,
                                           validation_samples=100,
                                           max_train_rmse=0.05,
                                           max_validation_rmse=0.1), seed=2)
    train_to_execute(det, two_level_stream(4000, rng))
    benign = det.score(R.FeatureVector((10.0, 9.0, 19.0), SCHEMA3))
    anomalous = det.score(R.FeatureVector((500.0, 9.0, 19.0), SCHEMA3))
    assert anomalous > benign * 10


def test_decide_allows_benign_denies_anomalous():
    rng = np.random.default_rng(4)
    det = A.ArlDetector(SCHEMA3, small_cfg(min_train_samples=2000,
                                           validation_samples=100,
                                           max_train_rmse=0.05,
                                           max_validation_rmse=0.1), seed=2)
    train_to_execute(det, two_level_stream(4000, rng))
    good = det.decide(R.FeatureVector((20.0, 5.0, 25.0), SCHEMA3))
    assert good.allowed
    bad = det.decide(R.FeatureVector((-400.0, 300.0, 0.0), SCHEMA3))
    assert not bad.allowed
    assert bad.rmse > det.decision_threshold


def test_same_seed_same_data_bitwise_identical():
    rng1 = np.random.default_rng(5)
    rng2 = np.random.default_rng(5)
    d1 = A.ArlDetector(SCHEMA3, small_cfg(), seed=9)
    d2 = A.ArlDetector(SCHEMA3, small_cfg(), seed=9)
    s1 = two_level_stream(300, rng1)
    s2 = two_level_stream(300, rng2)
    for i, (v1, v2) in enumerate(zip(s1, s2)):
        d1.feed(v1, float(i))
        d2.feed(v2, float(i))
    assert json.dumps(d1.to_dict(), sort_keys=True) \
        == json.dumps(d2.to_dict(), sort_keys=True)


def test_json_round_trip_scores_identically():
    rng = np.random.default_rng(6)
    det = A.ArlDetector(SCHEMA3, small_cfg(min_train_samples=1000,
                                           validation_samples=100,
                                           max_train_rmse=0.05,
                                           max_validation_rmse=0.1), seed=3)
    train_to_execute(det, two_level_stream(3000, rng))
    clone = A.ArlDetector.from_dict(json.loads(det.to_json()))
    assert clone.state is A.ArlState.EXECUTE
    assert clone.decision_threshold == det.decision_threshold
    for v in two_level_stream(50, rng):
        assert clone.score(v) == det.score(v)


# --- separation analogue (small-scale preview of the acceptance run) -------------

def test_two_app_separation_small_scale():
    rng = np.random.default_rng(7)
    app_a, app_b = synth.two_app_profiles()
    packets = synth.gen_app_packets(app_a, 4000, rng, packets_per_session=400)
    vecs = [R.preprocess(p) for p in packets]
    cfg = A.ArlConfig(map_samples=200, min_train_samples=2500,
                      validation_samples=250, max_train_rmse=0.02,
                      max_validation_rmse=0.05)
    det = A.ArlDetector(vecs[0].schema, cfg, seed=11)
    for v, p in zip(vecs, packets):
        if det.feed(v, p.ts).state is A.ArlState.EXECUTE:
            break
    assert det.state is A.ArlState.EXECUTE
    swapped = synth.rewrite_endpoints(
        synth.gen_app_packets(app_b, 100, rng),
        app_a.client_ip, app_a.server_ip, app_a.client_mac, app_a.server_mac)
    for p in swapped:
        assert not det.decide(R.preprocess(p)).allowed
