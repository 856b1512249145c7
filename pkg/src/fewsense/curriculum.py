"""Staged Gaussian-noise augmentation of the query set.

Six stages over training: clean first, then noise of 10% through 50% of the
per-record amplitude standard deviation, stepping every total/6 epochs.
Within a noisy stage, augmented and original query records are mixed 4:1 per
class (8 of 10 replaced at N_q=10), keeping episode shapes constant. The
relative-std convention pins the SNR accounting: a fraction p adds noise at
10*log10(1/p^2) dB, so 0.1 -> 20 dB and 0.2 -> ~14 dB.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .csi_core import CsiRecord
from .errors import ConfigurationError

STAGE_FRACTIONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
MIX_RATIO = (4, 1)  # augmented : original within a noisy stage
N_STAGES = len(STAGE_FRACTIONS)


@dataclass(frozen=True)
class CurriculumStage:
    stage_index: int  # 1..6
    noise_fraction: float
    epoch_range: tuple[int, int]  # inclusive
    mix_ratio: tuple[int, int] = MIX_RATIO

    def __post_init__(self):
        if not 1 <= self.stage_index <= N_STAGES:
            raise ConfigurationError(f"stage_index must be 1..{N_STAGES}")
        if not 0.0 <= self.noise_fraction <= 0.5:
            raise ConfigurationError("noise_fraction must be within [0, 0.5]")
        if self.epoch_range[0] > self.epoch_range[1] or self.epoch_range[0] < 1:
            raise ConfigurationError(f"bad epoch_range {self.epoch_range}")


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian perturbation with per-record sigma."""

    sigma: float
    mu: float = 0.0

    def __post_init__(self):
        if self.mu != 0.0:
            raise ConfigurationError("noise mean must be zero")
        if self.sigma <= 0:
            raise ConfigurationError("noise sigma must be positive")


def build_schedule(total_epochs: int) -> tuple[CurriculumStage, ...]:
    """Six equal contiguous stages tiling [1, total_epochs]."""
    if total_epochs < N_STAGES or total_epochs % N_STAGES != 0:
        raise ConfigurationError(
            f"total_epochs must be a positive multiple of {N_STAGES}, got {total_epochs}"
        )
    block = total_epochs // N_STAGES
    return tuple(
        CurriculumStage(
            stage_index=i + 1,
            noise_fraction=STAGE_FRACTIONS[i],
            epoch_range=(i * block + 1, (i + 1) * block),
        )
        for i in range(N_STAGES)
    )


def stage_for_epoch(epoch: int, total_epochs: int) -> CurriculumStage:
    if not 1 <= epoch <= total_epochs:
        raise ConfigurationError(f"epoch {epoch} outside [1, {total_epochs}]")
    schedule = build_schedule(total_epochs)
    return schedule[(epoch - 1) // (total_epochs // N_STAGES)]


def noise_spec_for(rec: CsiRecord, noise_fraction: float) -> NoiseSpec:
    """Sigma is noise_fraction times the record's amplitude standard deviation."""
    if noise_fraction <= 0:
        raise ConfigurationError("noise_fraction must be positive for a noise spec")
    return NoiseSpec(sigma=noise_fraction * float(rec.amplitude.std()))


def add_noise(
    rec: CsiRecord, noise_fraction: float, rng: np.random.Generator
) -> CsiRecord:
    """Element-wise Gaussian perturbation; fraction 0 returns the record as is."""
    if noise_fraction < 0:
        raise ConfigurationError("noise_fraction must be >= 0")
    if noise_fraction == 0:
        return rec
    spec = noise_spec_for(rec, noise_fraction)
    noise = rng.normal(spec.mu, spec.sigma, size=rec.shape).astype(np.float32)
    return rec.with_amplitude(rec.amplitude + noise)


def snr_db(noise_fraction: float) -> float:
    """SNR in dB under the relative-std convention: 10*log10(1/fraction^2)."""
    if noise_fraction < 0:
        raise ConfigurationError("noise_fraction must be >= 0")
    if noise_fraction == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / noise_fraction**2)


def augment_query(
    query, stage: CurriculumStage, rng: np.random.Generator
) -> list[tuple[CsiRecord, int]]:
    """Replace 4 of every 5 query records per class with noisy copies.

    Stage one (noise 0) returns the query unchanged. Positions to perturb are
    drawn per class; order, labels, and per-class counts are preserved. The
    support set is never seen here.
    """
    query = list(query)
    if stage.noise_fraction == 0:
        return query

    by_class: dict[int, list[int]] = {}
    for pos, (_, label) in enumerate(query):
        by_class.setdefault(label, []).append(pos)

    parts = sum(stage.mix_ratio)
    out = list(query)
    for label, positions in by_class.items():
        count = len(positions)
        if count % parts != 0:
            raise ConfigurationError(
                f"per-class query count {count} for class {label} is not divisible "
                f"by {parts} (mix ratio {stage.mix_ratio[0]}:{stage.mix_ratio[1]})"
            )
        n_augment = count * stage.mix_ratio[0] // parts
        chosen = rng.permutation(count)[:n_augment]
        for j in chosen:
            pos = positions[j]
            rec, lab = query[pos]
            out[pos] = (add_noise(rec, stage.noise_fraction, rng), lab)
    return out
