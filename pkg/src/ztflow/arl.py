"""Per-edge access-request detector.

A lightweight CPU autoencoder ensemble: features are clustered by absolute
correlation (learned from an initial mapping buffer), each cluster feeds a
small 3-layer autoencoder, and an output autoencoder scores the vector of
per-cluster reconstruction errors. Training is iterative: the detector
keeps learning until a minimum duration, a minimum sample count, and a
validation-window error bound all hold, then freezes and enforces with a
fixed decision threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import linkage, to_tree

from .records import FeatureVector, Scaler, SchemaMismatchError

MODEL_FORMAT_VERSION = 1

_NORM_EPS = 1e-16


class ArlState(Enum):
    MAPPING = "mapping"
    TRAINING = "training"
    VALIDATING = "validating"
    EXECUTE = "execute"


class InvalidStateError(RuntimeError):
    """Operation not permitted in the detector's current state."""


@dataclass
class ArlConfig:
    """Training heuristics and model hyperparameters for one detector."""

    map_samples: int = 200
    min_train_samples: int = 20000
    min_train_duration: float = 0.0
    validation_samples: Optional[int] = None  # default: min_train_samples // 10
    validation_duration: Optional[float] = None
    max_train_rmse: float = 0.009
    max_validation_rmse: float = 0.05
    enforcement_margin: float = 2.0
    max_cluster_size: int = 10
    hidden_ratio: float = 0.75
    learning_rate: float = 0.05
    ewa_alpha: float = 0.01
    max_feed_samples: Optional[int] = None  # training budget, None = unbounded

    def __post_init__(self):
        for name in ("map_samples", "min_train_samples", "max_train_rmse",
                     "max_validation_rmse", "enforcement_margin",
                     "max_cluster_size", "hidden_ratio", "learning_rate",
                     "ewa_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_train_rmse > self.max_validation_rmse:
            raise ValueError("max_train_rmse must not exceed max_validation_rmse")

    @property
    def resolved_validation_samples(self) -> int:
        if self.validation_samples is not None:
            return self.validation_samples
        return max(1, self.min_train_samples // 10)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "map_samples", "min_train_samples", "min_train_duration",
            "validation_samples", "validation_duration", "max_train_rmse",
            "max_validation_rmse", "enforcement_margin", "max_cluster_size",
            "hidden_ratio", "learning_rate", "ewa_alpha", "max_feed_samples")}

    @classmethod
    def from_dict(cls, d: dict) -> "ArlConfig":
        return cls(**d)


@dataclass(frozen=True)
class FeatureMap:
    """Partition of feature indices into correlation clusters of size <= m."""

    clusters: tuple[tuple[int, ...], ...]
    n_features: int

    def __post_init__(self):
        seen: list[int] = []
        for cluster in self.clusters:
            seen.extend(cluster)
        if sorted(seen) != list(range(self.n_features)):
            raise ValueError("clusters must partition the feature indices")


def build_feature_map(samples: np.ndarray, max_cluster_size: int) -> FeatureMap:
    """Cluster features by absolute-correlation distance (single linkage),
    breaking the dendrogram into subtrees of at most max_cluster_size."""
    n = samples.shape[1]
    if n == 1:
        return FeatureMap(((0,),), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(samples, rowvar=False)
    corr = np.nan_to_num(corr, nan=0.0)  # constant features: uncorrelated
    dist = 1.0 - np.abs(corr)
    np.fill_diagonal(dist, 0.0)
    dist = np.clip(dist, 0.0, None)
    condensed = dist[np.triu_indices(n, 1)]
    tree = to_tree(linkage(condensed))

    def break_cluster(node) -> list[list[int]]:
        if node.count <= max_cluster_size:
            return [node.pre_order()]
        return break_cluster(node.get_left()) + break_cluster(node.get_right())

    clusters = tuple(tuple(sorted(c)) for c in break_cluster(tree))
    return FeatureMap(clusters, n)


class _Autoencoder:
    """3-layer autoencoder (d -> ceil(beta*d) -> d) with tied weights,
    sigmoid activations, plain SGD, and online per-feature 0-1 scaling."""

    def __init__(self, n_visible: int, hidden_ratio: float, lr: float,
                 rng: np.random.Generator):
        self.n_visible = n_visible
        self.n_hidden = max(1, int(np.ceil(n_visible * hidden_ratio)))
        self.lr = lr
        a = 1.0 / n_visible
        self.W = rng.uniform(-a, a, size=(n_visible, self.n_hidden))
        self.hbias = np.zeros(self.n_hidden)
        self.vbias = np.zeros(n_visible)
        self.norm_min = np.full(n_visible, np.inf)
        self.norm_max = np.full(n_visible, -np.inf)

    @staticmethod
    def _sigmoid(x: np.ndarray) -> np.ndarray:
        # saturation on far-out-of-distribution inputs is intended
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-x))

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.norm_min) / (self.norm_max - self.norm_min + _NORM_EPS)

    def train(self, x: np.ndarray) -> float:
        np.minimum(self.norm_min, x, out=self.norm_min)
        np.maximum(self.norm_max, x, out=self.norm_max)
        x = self._normalize(x)
        y = self._sigmoid(x @ self.W + self.hbias)
        z = self._sigmoid(y @ self.W.T + self.vbias)
        err_v = x - z
        err_h = (err_v @ self.W) * y * (1.0 - y)
        self.W += self.lr * (np.outer(x, err_h) + np.outer(err_v, y))
        self.hbias += self.lr * err_h
        self.vbias += self.lr * err_v
        return float(np.sqrt(np.mean(err_v ** 2)))

    def score(self, x: np.ndarray) -> float:
        """Reconstruction RMSE without updating weights or norms."""
        x = self._normalize(x)
        y = self._sigmoid(x @ self.W + self.hbias)
        z = self._sigmoid(y @ self.W.T + self.vbias)
        return float(np.sqrt(np.mean((x - z) ** 2)))

    def to_dict(self) -> dict:
        return {
            "n_visible": self.n_visible,
            "n_hidden": self.n_hidden,
            "lr": self.lr,
            "W": [float(v) for v in self.W.ravel()],  # row-major
            "hbias": [float(v) for v in self.hbias],
            "vbias": [float(v) for v in self.vbias],
            "norm_min": [float(v) for v in self.norm_min],
            "norm_max": [float(v) for v in self.norm_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "_Autoencoder":
        ae = cls.__new__(cls)
        ae.n_visible = d["n_visible"]
        ae.n_hidden = d["n_hidden"]
        ae.lr = d["lr"]
        ae.W = np.array(d["W"], dtype=float).reshape(ae.n_visible, ae.n_hidden)
        ae.hbias = np.array(d["hbias"], dtype=float)
        ae.vbias = np.array(d["vbias"], dtype=float)
        ae.norm_min = np.array(d["norm_min"], dtype=float)
        ae.norm_max = np.array(d["norm_max"], dtype=float)
        return ae


class AutoencoderEnsemble:
    """Per-cluster autoencoders plus an output autoencoder over their
    reconstruction errors; the final score is the output RMSE."""

    def __init__(self, feature_map: FeatureMap, hidden_ratio: float,
                 lr: float, rng: np.random.Generator):
        self.feature_map = feature_map
        self.members = [_Autoencoder(len(c), hidden_ratio, lr, rng)
                        for c in feature_map.clusters]
        self.output = _Autoencoder(len(self.members), hidden_ratio, lr, rng)

    def train(self, x: np.ndarray) -> float:
        errors = np.array([m.train(x[list(c)]) for m, c in
                           zip(self.members, self.feature_map.clusters)])
        return self.output.train(errors)

    def score(self, x: np.ndarray) -> float:
        errors = np.array([m.score(x[list(c)]) for m, c in
                           zip(self.members, self.feature_map.clusters)])
        return self.output.score(errors)

    def to_dict(self) -> dict:
        return {
            "clusters": [list(c) for c in self.feature_map.clusters],
            "n_features": self.feature_map.n_features,
            "members": [m.to_dict() for m in self.members],
            "output": self.output.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderEnsemble":
        ens = cls.__new__(cls)
        ens.feature_map = FeatureMap(
            tuple(tuple(c) for c in d["clusters"]), d["n_features"])
        ens.members = [_Autoencoder.from_dict(m) for m in d["members"]]
        ens.output = _Autoencoder.from_dict(d["output"])
        return ens


@dataclass(frozen=True)
class Decision:
    allowed: bool
    rmse: float


@dataclass(frozen=True)
class ArlFeedReport:
    state: ArlState
    samples_mapped: int
    samples_trained: int
    ewa_rmse: Optional[float] = None
    transitioned: bool = False
    validation_max: Optional[float] = None


class ArlDetector:
    """State machine over one CR edge's packet feature stream.

    Mapping buffers the first map_samples vectors to fit the scaler and
    feature clusters; Training runs one SGD step per vector until the stop
    heuristics hold; Validating scores a window without learning and either
    freezes into Execute or falls back to Training. The window passes when
    its average RMSE stays within max_validation_rmse; the enforcement
    threshold is margin * the worst RMSE observed in the passing window.
    """

    def __init__(self, schema: tuple[str, ...], config: ArlConfig,
                 seed: int = 0):
        self.schema = tuple(schema)
        self.config = config
        self.seed = seed
        self.state = ArlState.MAPPING
        self.scaler: Optional[Scaler] = None
        self.ensemble: Optional[AutoencoderEnsemble] = None
        self.decision_threshold: Optional[float] = None
        self.samples_mapped = 0
        self.samples_trained = 0
        self.first_ts: Optional[float] = None
        self._rng = np.random.default_rng(seed)
        self._map_buffer: list[np.ndarray] = []
        self._ewa_rmse: Optional[float] = None
        self._val_count = 0
        self._val_sum = 0.0
        self._val_max = 0.0
        self._val_start_ts: Optional[float] = None

    @property
    def feature_map(self) -> Optional[FeatureMap]:
        return self.ensemble.feature_map if self.ensemble else None

    def _check_schema(self, v: FeatureVector) -> np.ndarray:
        if v.schema != self.schema:
            raise SchemaMismatchError(
                f"vector schema {v.schema} does not match detector {self.schema}")
        return np.asarray(v.values, dtype=float)

    def _scaled(self, raw: np.ndarray) -> np.ndarray:
        return self.scaler.transform_array(raw.copy())

    def _validation_complete(self, ts: float) -> bool:
        if self.config.validation_duration is not None:
            return (ts - self._val_start_ts) >= self.config.validation_duration
        return self._val_count >= self.config.resolved_validation_samples

    def feed(self, v: FeatureVector, ts: float) -> ArlFeedReport:
        raw = self._check_schema(v)
        if self.first_ts is None:
            self.first_ts = ts

        if self.state is ArlState.MAPPING:
            self._map_buffer.append(raw)
            self.samples_mapped += 1
            if self.samples_mapped >= self.config.map_samples:
                mat = np.array(self._map_buffer)
                self.scaler = Scaler(mat.mean(axis=0), mat.std(axis=0), self.schema)
                fmap = build_feature_map(mat, self.config.max_cluster_size)
                self.ensemble = AutoencoderEnsemble(
                    fmap, self.config.hidden_ratio,
                    self.config.learning_rate, self._rng)
                self._map_buffer = []
                self.state = ArlState.TRAINING
                return self._report(transitioned=True)
            return self._report()

        if self.state is ArlState.TRAINING:
            rmse = self.ensemble.train(self._scaled(raw))
            self.samples_trained += 1
            alpha = self.config.ewa_alpha
            self._ewa_rmse = (rmse if self._ewa_rmse is None
                              else (1 - alpha) * self._ewa_rmse + alpha * rmse)
            if (self.samples_trained >= self.config.min_train_samples
                    and (ts - self.first_ts) >= self.config.min_train_duration
                    and self._ewa_rmse <= self.config.max_train_rmse):
                self.state = ArlState.VALIDATING
                self._val_count = 0
                self._val_sum = 0.0
                self._val_max = 0.0
                self._val_start_ts = ts
                return self._report(transitioned=True)
            return self._report()

        if self.state is ArlState.VALIDATING:
            rmse = self.ensemble.score(self._scaled(raw))
            self._val_count += 1
            self._val_sum += rmse
            self._val_max = max(self._val_max, rmse)
            if not self._validation_complete(ts):
                return self._report(validation_max=self._val_max)
            if self._val_sum / self._val_count <= self.config.max_validation_rmse:
                self.decision_threshold = (
                    self.config.enforcement_margin * self._val_max)
                self.state = ArlState.EXECUTE
            else:
                self.state = ArlState.TRAINING
            return self._report(transitioned=True, validation_max=self._val_max)

        return self._report()  # EXECUTE: enforcement data is never learned

    def _report(self, transitioned: bool = False,
                validation_max: Optional[float] = None) -> ArlFeedReport:
        return ArlFeedReport(
            state=self.state,
            samples_mapped=self.samples_mapped,
            samples_trained=self.samples_trained,
            ewa_rmse=self._ewa_rmse,
            transitioned=transitioned,
            validation_max=validation_max,
        )

    def score(self, v: FeatureVector) -> float:
        if self.state not in (ArlState.VALIDATING, ArlState.EXECUTE):
            raise InvalidStateError(f"cannot score in state {self.state.value}")
        raw = self._check_schema(v)
        return self.ensemble.score(self._scaled(raw))

    def decide(self, v: FeatureVector) -> Decision:
        if self.state is not ArlState.EXECUTE:
            raise InvalidStateError(f"cannot decide in state {self.state.value}")
        rmse = self.score(v)
        return Decision(allowed=rmse <= self.decision_threshold, rmse=rmse)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "schema": list(self.schema),
            "config": self.config.to_dict(),
            "seed": self.seed,
            "state": self.state.value,
            "decision_threshold": self.decision_threshold,
            "samples_mapped": self.samples_mapped,
            "samples_trained": self.samples_trained,
            "first_ts": self.first_ts,
            "ewa_rmse": self._ewa_rmse,
            "scaler": self.scaler.to_dict() if self.scaler else None,
            "ensemble": self.ensemble.to_dict() if self.ensemble else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArlDetector":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        det = cls(tuple(d["schema"]), ArlConfig.from_dict(d["config"]),
                  seed=d["seed"])
        det.state = ArlState(d["state"])
        det.decision_threshold = d["decision_threshold"]
        det.samples_mapped = d["samples_mapped"]
        det.samples_trained = d["samples_trained"]
        det.first_ts = d["first_ts"]
        det._ewa_rmse = d["ewa_rmse"]
        if d["scaler"] is not None:
            det.scaler = Scaler.from_dict(d["scaler"])
        if d["ensemble"] is not None:
            det.ensemble = AutoencoderEnsemble.from_dict(d["ensemble"])
        return det

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
