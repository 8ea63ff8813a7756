import functools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ztflow import rtfsl as T
from ztflow import synth
from ztflow.records import FlowStatSample


# Independent reference DTW: plain recursion with memoization.
def ref_dtw(a, b):
    a = tuple(a)
    b = tuple(b)

    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i < 0 or j < 0:
            return float("inf")
        cost = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return cost
        return cost + min(d(i - 1, j), d(i, j - 1), d(i - 1, j - 1))

    return d(len(a) - 1, len(b) - 1)


def test_first_order_diff_examples():
    assert list(T.first_order_diff([1, 3, 6, 10])) == [2, 3, 4]
    assert list(T.first_order_diff([5, 5, 5])) == [0, 0]
    cum = np.cumsum([3, 1, 4, 1, 5])
    assert all(v >= 0 for v in T.first_order_diff(cum))
    with pytest.raises(ValueError):
        T.first_order_diff([1])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
@settings(max_examples=50)
def test_diff_inverts_cumsum(deltas):
    cum = np.concatenate([[0.0], np.cumsum(deltas)])
    assert np.allclose(T.first_order_diff(cum), deltas, atol=1e-6)


def test_dtw_trivial_examples():
    assert T.dtw_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert T.dtw_distance([0], [5]) == 5.0
    # duplicate element warps at zero cost
    assert T.dtw_exact([1, 2, 3], [1, 2, 2, 3]) == 0.0
    assert ref_dtw([1, 2, 3], [1, 2, 2, 3]) == 0.0


def test_dtw_exact_matches_reference_on_random_series():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = rng.normal(size=rng.integers(1, 16))
        b = rng.normal(size=rng.integers(1, 16))
        assert T.dtw_exact(a, b) == pytest.approx(ref_dtw(a, b), abs=1e-12)


def test_fastdtw_with_large_radius_equals_exact():
    rng = np.random.default_rng(23)
    for _ in range(100):
        n = int(rng.integers(1, 33))
        m = int(rng.integers(1, 33))
        a = rng.normal(size=n)
        b = rng.normal(size=m)
        radius = max(n, m)
        assert T.fastdtw(a, b, radius=radius) == T.dtw_exact(a, b)


def test_fastdtw_never_beats_exact():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.normal(size=80)
        b = rng.normal(size=80)
        assert T.fastdtw(a, b, radius=1) >= T.dtw_exact(a, b) - 1e-9


def test_dtw_symmetry():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = rng.normal(size=rng.integers(1, 33))
        b = rng.normal(size=rng.integers(1, 33))
        assert T.dtw_distance(a, b) == pytest.approx(T.dtw_distance(b, a))


def test_dtw_rejects_empty():
    with pytest.raises(ValueError):
        T.dtw_distance([], [1.0])


def test_dtw_batch_agrees_with_exact():
    rng = np.random.default_rng(31)
    lib = rng.normal(size=60)
    obs = rng.normal(size=12)
    from numpy.lib.stride_tricks import sliding_window_view
    segments = sliding_window_view(lib, len(obs))
    dists = T._dtw_batch(obs, segments, band=len(obs))
    for k in range(segments.shape[0]):
        assert dists[k] == pytest.approx(T.dtw_exact(obs, segments[k]), abs=1e-9)


# --- match_pattern -----------------------------------------------------------

def model_with_library(lib, window_size=8, threshold=0.8):
    cfg = T.RtfslConfig(window_size=window_size, anomaly_threshold=threshold,
                        min_train_samples=10)
    libs = {ch: np.asarray(lib, dtype=float) for ch in T.Channel}
    scalers = {ch: (0.0, 1.0) for ch in T.Channel}
    return T.RtfslModel(cfg, window_size, scalers, libs)


def test_match_exact_subseries_is_zero():
    cum = np.cumsum([0, 3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5]).astype(float)
    lib = T.first_order_diff(cum)
    model = model_with_library(lib, window_size=8)
    window = cum[2:10]  # contiguous sub-series of the training cumulative data
    dist, _ = model.match_pattern(window, T.Channel.PACKETS)
    assert dist == pytest.approx(0.0, abs=1e-12)


def test_match_against_zero_library_closed_form():
    window_samples = 8
    c = 0.35
    model = model_with_library(np.zeros(50), window_size=window_samples)
    window = np.arange(window_samples) * c  # diffs all equal c
    dist, _ = model.match_pattern(window, T.Channel.BYTES)
    assert dist == pytest.approx(c * (window_samples - 1))


def test_match_requires_library_at_least_observation_length():
    model = model_with_library(np.zeros(5), window_size=5)
    with pytest.raises(ValueError):
        model.match_pattern(np.arange(8.0), T.Channel.PACKETS)


def test_flood_pattern_exceeds_threshold():
    rng = np.random.default_rng(2)
    spec = synth.FlowStreamSpec(regime_len=20)
    benign = synth.gen_flow_stream(spec, 220, rng)
    trainer = T.RtfslTrainer(T.RtfslConfig(window_size=16, min_train_samples=60,
                                           validation_samples=30))
    for s in benign:
        report = trainer.feed(s)
        if report.state is T.RtfslState.EXECUTE:
            break
    assert trainer.state is T.RtfslState.EXECUTE
    model = trainer.model

    flood_rate = spec.nominal_rate * 10
    last = benign[-1]
    cum = last.packets_cum + np.cumsum(np.full(16, flood_rate))
    scaled = model.scale_cumulative(cum, T.Channel.PACKETS)
    dist, _ = model.match_pattern(scaled, T.Channel.PACKETS)
    # oracle cross-check on the same window with exact DTW
    obs = T.first_order_diff(scaled)
    lib = model.libraries[T.Channel.PACKETS]
    ref = min(T.dtw_exact(obs, lib[k:k + len(obs)])
              for k in range(len(lib) - len(obs) + 1))
    assert dist >= ref - 1e-9
    assert ref > model.config.anomaly_threshold


# --- trainer ------------------------------------------------------------------

def ramp_samples(n, rate=40, bpp=600, f=5.0, start=0.0):
    return [FlowStatSample(start + i * f, int((i + 1) * rate),
                           int((i + 1) * rate * bpp)) for i in range(n)]


def test_stable_pattern_trains_to_execute():
    cfg = T.RtfslConfig(window_size=20, min_train_samples=60,
                        validation_samples=25)
    trainer = T.RtfslTrainer(cfg)
    states = []
    for s in ramp_samples(120):
        states.append(trainer.feed(s).state)
    assert T.RtfslState.VALIDATING in states
    assert trainer.state is T.RtfslState.EXECUTE
    assert trainer.samples_trained == 60
    model = trainer.model
    for ch in T.Channel:
        assert len(model.libraries[ch]) >= cfg.window_size


def test_repeated_identical_pattern_does_not_grow_library():
    cfg = T.RtfslConfig(window_size=10, min_train_samples=200,
                        validation_samples=10)
    trainer = T.RtfslTrainer(cfg)
    for s in ramp_samples(150):
        trainer.feed(s)
    # bootstrap window only: every later window matches at distance ~0
    assert len(trainer._libraries[T.Channel.PACKETS]) == cfg.window_size


def test_validation_failure_resumes_training():
    cfg = T.RtfslConfig(window_size=10, min_train_samples=40,
                        validation_samples=15)
    trainer = T.RtfslTrainer(cfg)
    samples = ramp_samples(40)
    for s in samples:
        trainer.feed(s)
    assert trainer.state is T.RtfslState.VALIDATING
    # a 30x burst mid-validation pushes the max distance over threshold
    last = samples[-1]
    burst = [FlowStatSample(last.t + (i + 1) * 5.0,
                            last.packets_cum + (i + 1) * 1200,
                            last.bytes_cum + (i + 1) * 1200 * 600)
             for i in range(15)]
    final = None
    for s in burst:
        final = trainer.feed(s)
    assert trainer.state is T.RtfslState.TRAINING
    assert final.transitioned
    assert final.validation_max > cfg.anomaly_threshold
    # replayed validation samples count as training data
    assert trainer.samples_trained == 55


def test_min_duration_heuristic_blocks_early_stop():
    cfg = T.RtfslConfig(window_size=10, min_train_samples=20,
                        min_train_duration=1000.0, validation_samples=5)
    trainer = T.RtfslTrainer(cfg)
    for s in ramp_samples(50):  # 50 samples span 245 s < 1000 s
        trainer.feed(s)
    assert trainer.state is T.RtfslState.TRAINING


def test_window_defaults_by_stack():
    cfg = T.RtfslConfig()
    assert cfg.window_for("ETHERNET_IP_TCP") == 90
    assert cfg.window_for("ETHERNET_IP_UDP") == 70
    assert cfg.window_for("ETHERNET_ARP") == 70


# --- monitor -------------------------------------------------------------------

def trained_model(seed=1, n=260, window=16, **spec_kw):
    rng = np.random.default_rng(seed)
    spec = synth.FlowStreamSpec(regime_len=20, **spec_kw)
    stream = synth.gen_flow_stream(spec, n, rng)
    trainer = T.RtfslTrainer(T.RtfslConfig(window_size=window,
                                           min_train_samples=120,
                                           validation_samples=40))
    for s in stream:
        if trainer.feed(s).state is T.RtfslState.EXECUTE:
            break
    assert trainer.state is T.RtfslState.EXECUTE, "trainer failed to converge"
    return trainer.model, spec


def test_monitor_first_sample_has_no_verdict_basis():
    model, _ = trained_model()
    mon = T.RtfslMonitor(model)
    verdict = mon.step(FlowStatSample(0.0, 100, 60000))
    assert not verdict.anomalous
    assert all(d is None for d in verdict.distances.values())


def test_monitor_benign_stream_stays_normal():
    model, spec = trained_model()
    rng = np.random.default_rng(99)
    held_out = synth.gen_flow_stream(spec, 120, rng)
    mon = T.RtfslMonitor(model)
    verdicts = [mon.step(s) for s in held_out]
    assert not any(v.anomalous for v in verdicts)
    dists = [d for v in verdicts for d in v.distances.values() if d is not None]
    assert max(dists) < model.config.anomaly_threshold


def test_monitor_flags_flood_within_window():
    model, spec = trained_model()
    rng = np.random.default_rng(17)
    onset = 60
    stream = synth.gen_flow_stream(spec, 120, rng, flood_at=onset)
    mon = T.RtfslMonitor(model)
    flagged_at = None
    for i, s in enumerate(stream):
        if mon.step(s).anomalous:
            flagged_at = i
            break
    assert flagged_at is not None
    assert flagged_at >= onset
    assert flagged_at - onset < model.window_size


def test_monitor_counter_reset_starts_new_segment():
    model, _ = trained_model()
    mon = T.RtfslMonitor(model)
    for i in range(6):
        mon.step(FlowStatSample(i * 5.0, 40 * (i + 1), 24000 * (i + 1)))
    assert len(mon._buffers[T.Channel.PACKETS]) == 6
    verdict = mon.step(FlowStatSample(30.0, 10, 6000))  # rule reinstalled
    assert len(mon._buffers[T.Channel.PACKETS]) == 1
    assert not verdict.anomalous


def test_monitoring_never_mutates_model():
    model, spec = trained_model()
    before = json.dumps(model.to_dict(), sort_keys=True)
    rng = np.random.default_rng(4)
    mon = T.RtfslMonitor(model)
    for s in synth.gen_flow_stream(spec, 60, rng, flood_at=30):
        mon.step(s)
    assert json.dumps(model.to_dict(), sort_keys=True) == before


def test_verdict_log_rows_shape():
    model, spec = trained_model()
    mon = T.RtfslMonitor(model)
    rng = np.random.default_rng(8)
    stream = synth.gen_flow_stream(spec, 10, rng)
    for s in stream:
        mon.step(s)
    rows = T.verdict_log_rows(mon)
    assert rows[0] == "t,channel,distance,verdict"
    assert len(rows) == 1 + 2 * len(stream)
    assert all(row.split(",")[3] in ("normal", "anomalous") for row in rows[1:])


def test_model_json_round_trip_scores_identically():
    model, spec = trained_model()
    clone = T.RtfslModel.from_dict(json.loads(model.to_json()))
    rng = np.random.default_rng(77)
    stream = synth.gen_flow_stream(spec, 40, rng)
    m1, m2 = T.RtfslMonitor(model), T.RtfslMonitor(clone)
    for s in stream:
        v1, v2 = m1.step(s), m2.step(s)
        assert v1.distances == v2.distances
