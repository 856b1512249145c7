"""Conv-4 embedding network mapping a CSI record to a d-dimensional vector.

Records enter as images: antennas are input channels, mean-pooled time is
height, subcarriers are width. Four conv blocks (conv 3x3, batch norm, ReLU,
max pool) feed global average pooling and a linear head to the embedding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .csi_core import CsiRecord
from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    input_shape: tuple[int, int, int] = (3, 250, 30)  # (A, T', S)
    conv_channels: tuple[int, int, int, int] = (64, 64, 64, 64)
    embedding_dim: int = 64
    downsample_factor: int = 8

    def __post_init__(self):
        if len(self.conv_channels) != 4:
            raise ConfigurationError("exactly four conv blocks are required")
        if min(self.conv_channels) < 1 or self.embedding_dim < 1:
            raise ConfigurationError("channel counts and embedding_dim must be positive")
        if min(self.input_shape) < 1:
            raise ConfigurationError(f"bad input_shape {self.input_shape}")
        if self.downsample_factor < 1:
            raise ConfigurationError("downsample_factor must be >= 1")


class Conv4Embedding(nn.Module):
    """Four conv-bn-relu-pool blocks, global average pool, linear projection."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        channels = (cfg.input_shape[0],) + tuple(cfg.conv_channels)
        self.blocks = nn.ModuleList()
        for cin, cout in zip(channels[:-1], channels[1:]):
            self.blocks.append(
                nn.Sequential(
                    nn.Conv2d(cin, cout, kernel_size=3, padding=1),
                    nn.BatchNorm2d(cout),
                    nn.ReLU(),
                )
            )
        self.head = nn.Linear(cfg.conv_channels[-1], cfg.embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.cfg.input_shape):
            raise ShapeError(
                ("n",) + tuple(self.cfg.input_shape), tuple(x.shape), "backbone input"
            )
        for block in self.blocks:
            x = block(x)
            # halve each spatial axis where there is room to pool
            kernel = (2 if x.shape[-2] >= 2 else 1, 2 if x.shape[-1] >= 2 else 1)
            if kernel != (1, 1):
                x = F.max_pool2d(x, kernel)
        x = x.mean(dim=(-2, -1))
        return self.head(x)


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if not np.isfinite(vals).all():
            raise ConfigurationError("embedding contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def record_to_input(rec: CsiRecord, cfg: BackboneConfig) -> torch.Tensor:
    """Amplitude [T x S x A] -> network input [A x T' x S] with mean-pooled time."""
    amp = rec.amplitude
    t = amp.shape[0]
    f = cfg.downsample_factor
    t_out = t // f
    if t_out < 1:
        raise ConfigurationError(
            f"record length {t} smaller than downsample factor {f}"
        )
    pooled = amp[: t_out * f].reshape(t_out, f, amp.shape[1], amp.shape[2]).mean(axis=1)
    return torch.from_numpy(np.ascontiguousarray(pooled.transpose(2, 0, 1), dtype=np.float32))


def batch_to_input(records, cfg: BackboneConfig) -> torch.Tensor:
    return torch.stack([record_to_input(rec, cfg) for rec in records])


def embed(rec: CsiRecord, model: Conv4Embedding) -> EmbeddingVector:
    """Inference-mode embedding of a single record (running batch-norm stats)."""
    return EmbeddingVector(embed_batch([rec], model)[0])


def embed_batch(records, model: Conv4Embedding) -> np.ndarray:
    """Inference-mode embeddings, one row per record: [n x d]."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(batch_to_input(records, model.cfg))
    finally:
        model.train(was_training)
    return out.numpy()
