"""Flow-behavior learning from cumulative flow statistics.

Cumulative per-edge (packets, bytes) counters are standard-scaled and
detrended by first-order differencing; the resulting per-interval pattern
series forms a growing library. Live windows are matched against every
equal-length library segment with dynamic time warping, and a window whose
minimum distance exceeds the anomaly threshold flags the flow.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .records import FlowStatSample

# Below this length the exact quadratic DP is cheap enough to skip the
# FastDTW approximation entirely.
EXACT_DTW_MAX = 64

MODEL_FORMAT_VERSION = 1


class Channel(Enum):
    PACKETS = "packets"
    BYTES = "bytes"


class RtfslState(Enum):
    TRAINING = "training"
    VALIDATING = "validating"
    EXECUTE = "execute"


@dataclass(frozen=True)
class DiffSeries:
    """First differences of a cumulative series, tagged with its channel."""

    values: tuple[float, ...]
    channel: Channel
    sampling_rate: float

    @classmethod
    def from_cumulative(cls, x: Sequence[float], channel: Channel,
                        sampling_rate: float) -> "DiffSeries":
        diffs = first_order_diff(x)
        return cls(tuple(float(v) for v in diffs), channel, sampling_rate)


def first_order_diff(x: Sequence[float]) -> np.ndarray:
    """Delta series: out[i] = x[i+1] - x[i]; length is len(x) - 1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or len(arr) < 2:
        raise ValueError("series must be 1-D with length >= 2")
    return np.diff(arr)


def dtw_exact(a: Sequence[float], b: Sequence[float]) -> float:
    """Exact O(n*m) dynamic-programming DTW with pointwise Euclidean cost."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("series must be non-empty")
    n, m = len(a), len(b)
    cost = np.abs(a[:, None] - b[None, :])
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        row = D[i]
        prev = D[i - 1]
        ci = cost[i - 1]
        for j in range(1, m + 1):
            row[j] = ci[j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(D[n, m])


def _dtw_sparse(a: np.ndarray, b: np.ndarray,
                window: Optional[list[tuple[int, int]]] = None,
                ) -> tuple[float, list[tuple[int, int]]]:
    """Windowed DTW returning (distance, warp path); full grid when no window."""
    n, m = len(a), len(b)
    if window is None:
        window = [(i, j) for i in range(n) for j in range(m)]
    inf = np.inf
    D: dict[tuple[int, int], float] = {}
    for i, j in window:
        cost = abs(a[i] - b[j])
        if i == 0 and j == 0:
            D[(0, 0)] = cost
            continue
        best = min(D.get((i - 1, j), inf), D.get((i, j - 1), inf),
                   D.get((i - 1, j - 1), inf))
        D[(i, j)] = cost + best
    dist = D.get((n - 1, m - 1), inf)
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        _, (i, j) = min(
            (D.get((i - 1, j - 1), inf), (i - 1, j - 1)),
            (D.get((i - 1, j), inf), (i - 1, j)),
            (D.get((i, j - 1), inf), (i, j - 1)),
            key=lambda t: t[0],
        )
        path.append((i, j))
    path.reverse()
    return float(dist), path


def _reduce_by_half(x: np.ndarray) -> np.ndarray:
    even = len(x) // 2 * 2
    out = (x[0:even:2] + x[1:even:2]) / 2.0
    if len(x) % 2:
        out = np.append(out, x[-1])
    return out


def _expand_window(path: list[tuple[int, int]], len_a: int, len_b: int,
                   radius: int) -> list[tuple[int, int]]:
    expanded = set()
    for i, j in path:
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                expanded.add((i + di, j + dj))
    projected = set()
    for i, j in expanded:
        for cell in ((i * 2, j * 2), (i * 2, j * 2 + 1),
                     (i * 2 + 1, j * 2), (i * 2 + 1, j * 2 + 1)):
            projected.add(cell)
    # Sweep row-major, keeping each row's contiguous covered span.
    window = []
    start_j = 0
    for i in range(len_a):
        new_start_j = None
        for j in range(start_j, len_b):
            if (i, j) in projected:
                window.append((i, j))
                if new_start_j is None:
                    new_start_j = j
            elif new_start_j is not None:
                break
        if new_start_j is not None:
            start_j = new_start_j
    return window


def fastdtw(a: Sequence[float], b: Sequence[float], radius: int = 1) -> float:
    """FastDTW approximation: coarsen, solve, refine within +-radius.

    With radius >= max(len(a), len(b)) this degenerates to the exact DP.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    dist, _ = _fastdtw_rec(np.asarray(a, dtype=float),
                           np.asarray(b, dtype=float), radius)
    return dist


def _fastdtw_rec(a: np.ndarray, b: np.ndarray,
                 radius: int) -> tuple[float, list[tuple[int, int]]]:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("series must be non-empty")
    min_size = radius + 2
    if len(a) <= min_size or len(b) <= min_size:
        return _dtw_sparse(a, b)
    _, low_path = _fastdtw_rec(_reduce_by_half(a), _reduce_by_half(b), radius)
    window = _expand_window(low_path, len(a), len(b), radius)
    return _dtw_sparse(a, b, window)


def dtw_distance(a: Sequence[float], b: Sequence[float], radius: int = 1) -> float:
    """DTW distance; exact for short series, FastDTW beyond EXACT_DTW_MAX."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("series must be non-empty")
    if max(len(a), len(b)) <= EXACT_DTW_MAX:
        return dtw_exact(a, b)
    return fastdtw(a, b, radius)


def _dtw_batch(obs: np.ndarray, segments: np.ndarray, band: int) -> np.ndarray:
    """Banded DTW of one series against many equal-length segments at once.

    Vectorizes the DP over the segment axis; band >= len(obs) gives the
    exact distances.
    """
    n = len(obs)
    n_seg, m = segments.shape
    inf = np.inf
    prev = np.full((n_seg, m), inf)
    cur = np.full((n_seg, m), inf)
    for i in range(n):
        cur.fill(inf)
        lo = max(0, i - band)
        hi = min(m - 1, i + band)
        for j in range(lo, hi + 1):
            cost = np.abs(obs[i] - segments[:, j])
            if i == 0 and j == 0:
                cur[:, 0] = cost
                continue
            best = np.full(n_seg, inf)
            if i > 0:
                np.minimum(best, prev[:, j], out=best)
                if j > 0:
                    np.minimum(best, prev[:, j - 1], out=best)
            if j > 0:
                np.minimum(best, cur[:, j - 1], out=best)
            cur[:, j] = cost + best
        prev, cur = cur, prev
    return prev[:, m - 1]


@dataclass
class RtfslConfig:
    """Training/enforcement knobs for one edge's flow-behavior model."""

    sampling_rate: float = 5.0
    min_train_samples: int = 150
    min_train_duration: float = 0.0
    validation_samples: Optional[int] = None   # default: one window
    validation_duration: Optional[float] = None
    train_add_threshold: Optional[float] = None  # default: anomaly_threshold
    anomaly_threshold: float = 0.8
    udp_window: int = 70
    tcp_window: int = 90
    window_size: Optional[int] = None  # overrides per-stack defaults
    radius: int = 1
    max_train_samples: Optional[int] = None  # training budget, None = unbounded

    def __post_init__(self):
        for name in ("sampling_rate", "min_train_samples", "anomaly_threshold",
                     "udp_window", "tcp_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def window_for(self, stack_name: str) -> int:
        if self.window_size is not None:
            return self.window_size
        return self.tcp_window if stack_name.endswith("_TCP") else self.udp_window

    @property
    def add_threshold(self) -> float:
        if self.train_add_threshold is not None:
            return self.train_add_threshold
        return self.anomaly_threshold

    def to_dict(self) -> dict:
        return {
            "sampling_rate": self.sampling_rate,
            "min_train_samples": self.min_train_samples,
            "min_train_duration": self.min_train_duration,
            "validation_samples": self.validation_samples,
            "validation_duration": self.validation_duration,
            "train_add_threshold": self.train_add_threshold,
            "anomaly_threshold": self.anomaly_threshold,
            "udp_window": self.udp_window,
            "tcp_window": self.tcp_window,
            "window_size": self.window_size,
            "radius": self.radius,
            "max_train_samples": self.max_train_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RtfslConfig":
        return cls(**d)


class RtfslModel:
    """Frozen per-edge model: a scaler and pattern library per channel."""

    def __init__(self, config: RtfslConfig, window_size: int,
                 scalers: dict[Channel, tuple[float, float]],
                 libraries: dict[Channel, np.ndarray]):
        self.config = config
        self.window_size = window_size
        self.scalers = scalers
        self.libraries = {ch: np.asarray(lib, dtype=float)
                          for ch, lib in libraries.items()}
        for ch, lib in self.libraries.items():
            if len(lib) < window_size:
                raise ValueError(
                    f"{ch.value} library shorter than window size {window_size}")

    def scale_cumulative(self, values: Sequence[float], channel: Channel) -> np.ndarray:
        mean, std = self.scalers[channel]
        arr = np.asarray(values, dtype=float)
        return (arr - mean) / std

    def match_pattern(self, scaled_window: np.ndarray,
                      channel: Channel) -> tuple[float, int]:
        """Minimum DTW distance of the window's diffs over all library
        segments of equal length, plus the best segment's start index."""
        obs = first_order_diff(scaled_window)
        lib = self.libraries[channel]
        m = len(obs)
        if len(lib) < m:
            raise ValueError("pattern library shorter than observation window")
        segments = sliding_window_view(lib, m)
        band = m if m <= EXACT_DTW_MAX else 2 * self.config.radius + 1
        dists = _dtw_batch(obs, segments, band)
        best = int(np.argmin(dists))
        return float(dists[best]), best

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "window_size": self.window_size,
            "config": self.config.to_dict(),
            "channels": {
                ch.value: {
                    "mean": self.scalers[ch][0],
                    "std": self.scalers[ch][1],
                    "library": [float(v) for v in self.libraries[ch]],
                }
                for ch in Channel
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RtfslModel":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        config = RtfslConfig.from_dict(d["config"])
        scalers = {}
        libraries = {}
        for ch in Channel:
            part = d["channels"][ch.value]
            scalers[ch] = (float(part["mean"]), float(part["std"]))
            libraries[ch] = np.array(part["library"], dtype=float)
        return cls(config, d["window_size"], scalers, libraries)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def match_pattern(model: RtfslModel, new_obs: Sequence[float],
                  channel: Channel) -> tuple[float, int]:
    return model.match_pattern(np.asarray(new_obs, dtype=float), channel)


@dataclass(frozen=True)
class StepVerdict:
    anomalous: bool
    channel: Optional[Channel] = None
    distance: Optional[float] = None
    distances: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RtfslFeedReport:
    state: RtfslState
    samples_trained: int
    transitioned: bool = False
    validation_max: Optional[float] = None


class RtfslMonitor:
    """Rolling-window enforcement state for one edge's trained model.

    Verdicts start once two samples are buffered; a cumulative counter
    decrease (rule reinstall) starts a new flow segment.
    """

    def __init__(self, model: RtfslModel):
        self.model = model
        self._buffers: dict[Channel, deque] = {
            ch: deque(maxlen=model.window_size) for ch in Channel}
        self._last: dict[Channel, Optional[float]] = {ch: None for ch in Channel}
        self.history: list[tuple[float, StepVerdict]] = []

    def step(self, sample: FlowStatSample) -> StepVerdict:
        values = {Channel.PACKETS: float(sample.packets_cum),
                  Channel.BYTES: float(sample.bytes_cum)}
        for ch, v in values.items():
            if self._last[ch] is not None and v < self._last[ch]:
                self._buffers[ch].clear()
            self._last[ch] = v
            self._buffers[ch].append(v)
        distances: dict[Channel, Optional[float]] = {}
        worst: Optional[tuple[float, Channel]] = None
        threshold = self.model.config.anomaly_threshold
        for ch in Channel:
            buf = self._buffers[ch]
            if len(buf) < 2:
                distances[ch] = None
                continue
            scaled = self.model.scale_cumulative(list(buf), ch)
            dist, _ = self.model.match_pattern(scaled, ch)
            distances[ch] = dist
            if dist > threshold and (worst is None or dist > worst[0]):
                worst = (dist, ch)
        if worst is None:
            verdict = StepVerdict(False, distances=distances)
        else:
            verdict = StepVerdict(True, channel=worst[1], distance=worst[0],
                                  distances=distances)
        self.history.append((sample.t, verdict))
        return verdict


def monitor_step(mon: RtfslMonitor, sample: FlowStatSample) -> StepVerdict:
    return mon.step(sample)


def verdict_log_rows(mon: RtfslMonitor) -> list[str]:
    """CSV rows ``t,channel,distance,verdict`` for the monitor's history."""
    rows = ["t,channel,distance,verdict"]
    threshold = mon.model.config.anomaly_threshold
    for t, verdict in mon.history:
        for ch in Channel:
            dist = verdict.distances.get(ch)
            if dist is None:
                rows.append(f"{t},{ch.value},,normal")
            else:
                label = "anomalous" if dist > threshold else "normal"
                rows.append(f"{t},{ch.value},{dist!r},{label}")
    return rows


class RtfslTrainer:
    """Grows a pattern library until the training-stop heuristics hold.

    Stopping requires all of: minimum training duration, minimum sample
    count, and a validation window whose worst match distance stays at or
    below the anomaly threshold. A failed validation resumes training and
    replays the validation samples so their patterns can join the library.
    """

    def __init__(self, config: RtfslConfig, stack_name: str = ""):
        self.config = config
        self.window_size = config.window_for(stack_name)
        self.state = RtfslState.TRAINING
        self.samples_trained = 0
        self.first_t: Optional[float] = None
        self.last_t: Optional[float] = None
        self._train_values = {ch: [] for ch in Channel}
        self._pending = {ch: [] for ch in Channel}
        self._last = {ch: None for ch in Channel}
        self._libraries = {ch: [] for ch in Channel}  # raw (unscaled) diffs
        self._candidate: Optional[RtfslModel] = None
        self._val_monitor: Optional[RtfslMonitor] = None
        self._val_buffer: list[FlowStatSample] = []
        self._val_max = 0.0
        self._val_start_t: Optional[float] = None
        self.model: Optional[RtfslModel] = None

    def _running_std(self, ch: Channel) -> float:
        vals = self._train_values[ch]
        std = float(np.std(vals)) if len(vals) >= 2 else 0.0
        return std if std > 0 else 1.0

    def _ingest(self, sample: FlowStatSample) -> None:
        values = {Channel.PACKETS: float(sample.packets_cum),
                  Channel.BYTES: float(sample.bytes_cum)}
        for ch, v in values.items():
            if self._last[ch] is not None and v < self._last[ch]:
                self._pending[ch] = []  # counter reset: new flow segment
            self._last[ch] = v
            self._train_values[ch].append(v)
            self._pending[ch].append(v)
            if len(self._pending[ch]) == self.window_size + 1:
                diffs = np.diff(np.asarray(self._pending[ch], dtype=float))
                lib = self._libraries[ch]
                if len(lib) < len(diffs):
                    lib.extend(diffs.tolist())
                else:
                    std = self._running_std(ch)
                    segments = sliding_window_view(
                        np.asarray(lib, dtype=float) / std, len(diffs))
                    band = (len(diffs) if len(diffs) <= EXACT_DTW_MAX
                            else 2 * self.config.radius + 1)
                    dist = float(np.min(_dtw_batch(diffs / std, segments, band)))
                    if dist > self.config.add_threshold:
                        lib.extend(diffs.tolist())
                self._pending[ch] = [self._pending[ch][-1]]

    def _freeze(self) -> RtfslModel:
        scalers = {}
        libraries = {}
        for ch in Channel:
            vals = np.asarray(self._train_values[ch], dtype=float)
            mean = float(vals.mean())
            std = float(vals.std())
            if std == 0:
                std = 1.0  # dormant channel: keep raw diffs visible
            scalers[ch] = (mean, std)
            libraries[ch] = np.asarray(self._libraries[ch], dtype=float) / std
        return RtfslModel(self.config, self.window_size, scalers, libraries)

    def _stop_heuristics_met(self, t: float) -> bool:
        if self.samples_trained < self.config.min_train_samples:
            return False
        if self.first_t is None or (t - self.first_t) < self.config.min_train_duration:
            return False
        return all(len(self._libraries[ch]) >= self.window_size for ch in Channel)

    def _validation_complete(self, t: float) -> bool:
        if self.config.validation_duration is not None:
            return (t - self._val_start_t) >= self.config.validation_duration
        target = self.config.validation_samples
        if target is None:
            target = self.window_size
        return len(self._val_buffer) >= target

    def feed(self, sample: FlowStatSample) -> RtfslFeedReport:
        if self.state is RtfslState.EXECUTE:
            return RtfslFeedReport(self.state, self.samples_trained)
        if self.first_t is None:
            self.first_t = sample.t
        self.last_t = sample.t

        if self.state is RtfslState.TRAINING:
            self._ingest(sample)
            self.samples_trained += 1
            if self._stop_heuristics_met(sample.t):
                self._candidate = self._freeze()
                self._val_monitor = RtfslMonitor(self._candidate)
                self._val_buffer = []
                self._val_max = 0.0
                self._val_start_t = sample.t
                self.state = RtfslState.VALIDATING
                return RtfslFeedReport(self.state, self.samples_trained,
                                       transitioned=True)
            return RtfslFeedReport(self.state, self.samples_trained)

        # VALIDATING: score on unseen data without touching the library.
        self._val_buffer.append(sample)
        verdict = self._val_monitor.step(sample)
        for dist in verdict.distances.values():
            if dist is not None and dist > self._val_max:
                self._val_max = dist
        if not self._validation_complete(sample.t):
            return RtfslFeedReport(self.state, self.samples_trained,
                                   validation_max=self._val_max)
        if self._val_max <= self.config.anomaly_threshold:
            self.model = self._candidate
            self.state = RtfslState.EXECUTE
            return RtfslFeedReport(self.state, self.samples_trained,
                                   transitioned=True,
                                   validation_max=self._val_max)
        # Failed validation: resume training, replaying the window so the
        # offending patterns can be learned.
        failed_max = self._val_max
        replay = self._val_buffer
        self.state = RtfslState.TRAINING
        self._candidate = None
        self._val_monitor = None
        self._val_buffer = []
        for s in replay:
            self._ingest(s)
            self.samples_trained += 1
        return RtfslFeedReport(self.state, self.samples_trained,
                               transitioned=True, validation_max=failed_max)


def train_feed(trainer: RtfslTrainer, sample: FlowStatSample) -> RtfslFeedReport:
    return trainer.feed(sample)
