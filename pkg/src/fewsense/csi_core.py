"""CSI gesture records, dataset splits, persistence, and a synthetic generator.

Records hold linear amplitude tensors shaped [time x subcarrier x antenna].
The synthetic generator stands in for a real capture corpus: each gesture
class carries a distinct low-frequency modulation template (frequency, phase,
and per-subcarrier weighting) applied multiplicatively to a shared multipath
baseline, with additive measurement noise on top. Class identity therefore
lives in the spectral content of the series, which both a nearest-centroid
oracle on raw spectra and a learned embedding can pick up.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DatasetParseError, FormatVersionError

DATASET_FORMAT_VERSION = 1
_MAGIC = b"CSID"


@dataclass(frozen=True)
class CsiRecord:
    """One gesture capture: amplitude [T x S x A] plus label and metadata."""

    amplitude: np.ndarray
    label: int
    env: str = "synthetic"
    sample_rate_hz: float = 500.0

    def __post_init__(self):
        amp = np.ascontiguousarray(self.amplitude, dtype=np.float32)
        if amp.ndim != 3:
            raise ConfigurationError(
                f"amplitude must be [T x S x A], got {amp.ndim} dimensions"
            )
        if min(amp.shape) < 1:
            raise ConfigurationError(f"empty amplitude axis in shape {amp.shape}")
        if not np.isfinite(amp).all():
            raise ConfigurationError("amplitude contains non-finite values")
        if self.sample_rate_hz <= 0:
            raise ConfigurationError("sample_rate_hz must be positive")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.amplitude.shape

    @property
    def window_seconds(self) -> float:
        return self.amplitude.shape[0] / self.sample_rate_hz

    def with_amplitude(self, amplitude: np.ndarray) -> "CsiRecord":
        """Copy of this record with a new amplitude tensor, metadata kept."""
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class GestureDataset:
    """A set of records with a label space and a disjoint train/test label split."""

    records: tuple[CsiRecord, ...]
    label_space: frozenset[int]
    train_labels: frozenset[int]
    test_labels: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "label_space", frozenset(self.label_space))
        object.__setattr__(self, "train_labels", frozenset(self.train_labels))
        object.__setattr__(self, "test_labels", frozenset(self.test_labels))
        if self.train_labels & self.test_labels:
            raise ConfigurationError(
                f"train/test label overlap: {sorted(self.train_labels & self.test_labels)}"
            )
        if not (self.train_labels | self.test_labels) <= self.label_space:
            raise ConfigurationError("split labels outside the label space")
        for rec in self.records:
            if rec.label not in self.label_space:
                raise ConfigurationError(f"record label {rec.label} not in label space")

    def labels_for_phase(self, phase: str) -> frozenset[int]:
        if phase == "meta_train":
            return self.train_labels
        if phase == "meta_test":
            return self.test_labels
        raise ConfigurationError(f"unknown phase {phase!r}")

    def indices_by_label(self) -> dict[int, list[int]]:
        index: dict[int, list[int]] = {label: [] for label in self.label_space}
        for i, rec in enumerate(self.records):
            index[rec.label].append(i)
        return index

    def map_records(self, fn) -> "GestureDataset":
        """Dataset with fn applied to every record; labels and split kept."""
        return replace(self, records=tuple(fn(rec) for rec in self.records))


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters for the synthetic corpus generator.

    T is tied to a 4-second capture window by default: sample rate is
    derived as T / window_seconds, so T=2000 means 500 Hz.
    """

    n_classes: int = 62
    samples_per_class: int = 50
    seed: int = 0
    T: int = 2000
    S: int = 30
    A: int = 3
    motion_bandwidth_hz: float = 10.0
    window_seconds: float = 4.0
    class_depth: float = 0.8
    warp_fraction: float = 0.05
    measurement_noise: float = 0.05
    n_train_labels: int | None = None
    env: str = "synthetic"

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigurationError("n_classes must be >= 2")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be >= 1")
        if min(self.T, self.S, self.A) < 1:
            raise ConfigurationError(
                f"dimensions must be positive, got T={self.T} S={self.S} A={self.A}"
            )
        if self.motion_bandwidth_hz <= 0:
            raise ConfigurationError("motion_bandwidth_hz must be positive")
        if self.window_seconds <= 0:
            raise ConfigurationError("window_seconds must be positive")
        nyquist = self.sample_rate_hz / 2
        if self.motion_bandwidth_hz >= nyquist:
            raise ConfigurationError(
                f"motion_bandwidth_hz {self.motion_bandwidth_hz} exceeds Nyquist {nyquist}"
            )

    @property
    def sample_rate_hz(self) -> float:
        return self.T / self.window_seconds

    def default_train_label_count(self) -> int:
        if self.n_train_labels is not None:
            return self.n_train_labels
        if self.n_classes == 62:
            return 46
        # keep the 46/62 proportion elsewhere, at least one label per side
        return min(self.n_classes - 1, max(1, round(self.n_classes * 46 / 62)))


def generate_synthetic(cfg: SyntheticConfig) -> GestureDataset:
    """Build a deterministic synthetic corpus of cfg.n_classes x cfg.samples_per_class records."""
    rng = np.random.default_rng(cfg.seed)
    t = np.arange(cfg.T, dtype=np.float64) / cfg.sample_rate_hz

    # shared static multipath profile per (subcarrier, antenna)
    baseline = (1.0 + 0.4 * rng.random((cfg.S, cfg.A))).astype(np.float32)

    # class templates: evenly spaced frequencies guarantee distinctness,
    # phase and subcarrier weighting come from the seeded stream
    lo, hi = 0.25 * cfg.motion_bandwidth_hz, cfg.motion_bandwidth_hz
    freqs = np.linspace(lo, hi, cfg.n_classes)
    phases = rng.uniform(0.0, 2 * np.pi, cfg.n_classes)
    weights = rng.uniform(-1.0, 1.0, (cfg.n_classes, cfg.S))

    records = []
    for c in range(cfg.n_classes):
        warps = 1.0 + cfg.warp_fraction * rng.uniform(-1.0, 1.0, cfg.samples_per_class)
        # [samples x T]: each sample sees the class template on its own warped clock
        osc = np.sin(2 * np.pi * freqs[c] * warps[:, None] * t[None, :] + phases[c])
        # [samples x T x S], float32 to keep the full-corpus footprint sane
        mod = (
            1.0 + cfg.class_depth * weights[c][None, None, :] * osc[:, :, None]
        ).astype(np.float32)
        block = baseline[None, None, :, :] * mod[:, :, :, None]
        block += cfg.measurement_noise * rng.standard_normal(
            block.shape, dtype=np.float32
        )
        np.maximum(block, 0.0, out=block)
        for j in range(cfg.samples_per_class):
            records.append(
                CsiRecord(
                    amplitude=block[j],
                    label=c,
                    env=cfg.env,
                    sample_rate_hz=cfg.sample_rate_hz,
                )
            )

    labels = frozenset(range(cfg.n_classes))
    ds = GestureDataset(
        records=tuple(records),
        label_space=labels,
        train_labels=labels,
        test_labels=frozenset(),
    )
    return split_labels(ds, cfg.default_train_label_count(), seed=cfg.seed)


def split_labels(ds: GestureDataset, n_train: int, seed: int) -> GestureDataset:
    """Assign exactly n_train labels to the train split, the rest to test."""
    labels = sorted(ds.label_space)
    if not 0 < n_train < len(labels):
        raise ConfigurationError(
            f"n_train must be in [1, {len(labels) - 1}], got {n_train}"
        )
    order = np.random.default_rng(seed).permutation(len(labels))
    train = frozenset(labels[i] for i in order[:n_train])
    test = frozenset(labels[i] for i in order[n_train:])
    return replace(ds, train_labels=train, test_labels=test)


def save_dataset(ds: GestureDataset, path) -> None:
    """Write the dataset container: magic, JSON header, float32 LE payloads."""
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "label_space": sorted(ds.label_space),
        "train_labels": sorted(ds.train_labels),
        "test_labels": sorted(ds.test_labels),
        "records": [
            {
                "label": int(rec.label),
                "env": rec.env,
                "sample_rate_hz": float(rec.sample_rate_hz),
                "shape": list(rec.shape),
            }
            for rec in ds.records
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for rec in ds.records:
            fh.write(np.ascontiguousarray(rec.amplitude, dtype="<f4").tobytes())


def load_dataset(path) -> GestureDataset:
    """Read a dataset container written by save_dataset; lossless round trip."""
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < len(_MAGIC) or data[: len(_MAGIC)] != _MAGIC:
        raise DatasetParseError("bad magic, not a dataset container", byte_offset=0)
    offset = len(_MAGIC)

    if len(data) < offset + 4:
        raise DatasetParseError("truncated header length field", byte_offset=offset)
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4

    if len(data) < offset + header_len:
        raise DatasetParseError("truncated JSON header", byte_offset=len(data))
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetParseError(f"invalid JSON header: {exc}", byte_offset=offset) from exc
    offset += header_len

    version = header.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise FormatVersionError("dataset", version, DATASET_FORMAT_VERSION)

    records = []
    for meta in header["records"]:
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape)) * 4
        if len(data) < offset + nbytes:
            raise DatasetParseError(
                f"truncated tensor payload for record {len(records)}",
                byte_offset=len(data),
            )
        amp = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        records.append(
            CsiRecord(
                amplitude=amp.reshape(shape).copy(),
                label=int(meta["label"]),
                env=meta["env"],
                sample_rate_hz=float(meta["sample_rate_hz"]),
            )
        )
        offset += nbytes

    return GestureDataset(
        records=tuple(records),
        label_space=frozenset(header["label_space"]),
        train_labels=frozenset(header["train_labels"]),
        test_labels=frozenset(header["test_labels"]),
    )
