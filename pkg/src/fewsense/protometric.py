"""Prototype metric learning: class means, feature attention, weighted distance.

A class prototype is the mean of its support embeddings. The attention
module turns a class's support embeddings into a positive weight per
embedding dimension (mean-normalized to 1), and the class distance becomes
the attention-weighted sum of squared per-dimension differences. Class
probabilities are the softmax of negative distances; the episode loss is
the mean negative log-likelihood of the true classes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, EpisodeError, ShapeError


@dataclass(frozen=True)
class ClassPrototype:
    class_id: int
    values: torch.Tensor  # (d,)


@dataclass(frozen=True)
class AttentionScores:
    class_id: int
    weights: torch.Tensor  # (d,), strictly positive

    def __post_init__(self):
        if (self.weights <= 0).any():
            raise ConfigurationError("attention weights must be strictly positive")


@dataclass(frozen=True)
class EpisodeLogits:
    """Per-query scores over the episode's classes; score = -distance."""

    class_ids: tuple[int, ...]
    scores: torch.Tensor  # (M, N)

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.softmax(self.scores, dim=1)

    def predicted_classes(self) -> list[int]:
        return [self.class_ids[i] for i in self.scores.argmax(dim=1).tolist()]


class FeatureAttention(nn.Module):
    """Three conv-relu blocks along the feature axis producing d scores.

    Input is a class's K support embeddings stacked [K x d]. Block one runs
    per support sample; the K channel maps are then mean-pooled so the module
    is permutation-invariant over supports and its parameter count does not
    depend on K. The final single-channel map is the score vector; weights
    are exp(scores) normalized to mean 1.
    """

    def __init__(self, channels: tuple[int, int, int] = (8, 8, 1), kernel_size: int = 3):
        super().__init__()
        if len(channels) != 3:
            raise ConfigurationError("exactly three attention conv blocks are required")
        if channels[-1] != 1:
            raise ConfigurationError("final attention block must emit one channel")
        pad = kernel_size // 2
        self.block1 = nn.Conv1d(1, channels[0], kernel_size, padding=pad)
        self.block2 = nn.Conv1d(channels[0], channels[1], kernel_size, padding=pad)
        self.block3 = nn.Conv1d(channels[1], channels[2], kernel_size, padding=pad)

    def forward(self, class_embeddings: torch.Tensor) -> torch.Tensor:
        if class_embeddings.ndim != 2:
            raise ShapeError(("K", "d"), tuple(class_embeddings.shape), "attention input")
        x = class_embeddings.unsqueeze(1)  # (K, 1, d)
        x = F.relu(self.block1(x))
        x = x.mean(dim=0, keepdim=True)  # pool over the K supports
        x = F.relu(self.block2(x))
        x = F.relu(self.block3(x))
        return x.squeeze(0).squeeze(0)  # (d,)


def compute_prototypes(
    embeddings: torch.Tensor,
    labels: Sequence[int],
    class_ids: Sequence[int] | None = None,
) -> list[ClassPrototype]:
    """Per-class mean of support embeddings; classes ordered by first appearance."""
    if embeddings.ndim != 2 or embeddings.shape[0] != len(labels):
        raise ShapeError((len(labels), "d"), tuple(embeddings.shape), "support embeddings")
    order: list[int] = []
    groups: dict[int, list[int]] = {}
    for i, label in enumerate(labels):
        if label not in groups:
            groups[label] = []
            order.append(label)
        groups[label].append(i)
    if class_ids is not None:
        missing = [c for c in class_ids if c not in groups]
        if missing:
            raise EpisodeError(f"no support embeddings for classes {missing}")
        order = list(class_ids)
    counts = {len(idx) for idx in groups.values()}
    if len(counts) != 1:
        raise EpisodeError(
            f"unbalanced support: per-class counts {sorted(len(groups[c]) for c in order)}"
        )
    return [
        ClassPrototype(class_id=c, values=embeddings[groups[c]].mean(dim=0))
        for c in order
    ]


def attention_scores(
    class_embeddings: torch.Tensor, module: FeatureAttention, class_id: int
) -> AttentionScores:
    """Positive, mean-1 weights over feature dimensions for one class."""
    raw = module(class_embeddings)
    weights = torch.exp(raw)
    return AttentionScores(class_id=class_id, weights=weights / weights.mean())


def uniform_attention(class_ids: Sequence[int], dim: int) -> list[AttentionScores]:
    """All-ones weights: the attended distance reduces to squared Euclidean."""
    return [AttentionScores(c, torch.ones(dim)) for c in class_ids]


def attended_distance(
    query: torch.Tensor, proto: ClassPrototype, att: AttentionScores
) -> torch.Tensor:
    """Sum over dimensions of weight * (query - prototype)^2."""
    if query.shape != proto.values.shape or query.shape != att.weights.shape:
        raise ShapeError(
            tuple(proto.values.shape), tuple(query.shape), "query/prototype/attention"
        )
    return (att.weights * (query - proto.values) ** 2).sum()


def classify(
    query_embeddings: torch.Tensor,
    prototypes: Sequence[ClassPrototype],
    attentions: Sequence[AttentionScores] | None = None,
) -> EpisodeLogits:
    """Scores -d(query, class) for every query/class pair.

    attentions=None means unweighted squared Euclidean distance. Softmax of
    the scores (see EpisodeLogits.probabilities) is max-stabilized, so equal
    distances give exactly 1/N.
    """
    if not prototypes:
        raise EpisodeError("cannot classify with an empty prototype list")
    class_ids = tuple(p.class_id for p in prototypes)
    proto = torch.stack([p.values for p in prototypes])  # (N, d)
    if query_embeddings.ndim != 2 or query_embeddings.shape[1] != proto.shape[1]:
        raise ShapeError(
            ("M", proto.shape[1]), tuple(query_embeddings.shape), "query embeddings"
        )
    if attentions is not None:
        if tuple(a.class_id for a in attentions) != class_ids:
            raise EpisodeError("attention class order does not match prototypes")
        weights = torch.stack([a.weights for a in attentions])  # (N, d)
    else:
        weights = torch.ones_like(proto)
    sq = (query_embeddings.unsqueeze(1) - proto.unsqueeze(0)) ** 2  # (M, N, d)
    distances = (sq * weights.unsqueeze(0)).sum(dim=-1)
    return EpisodeLogits(class_ids=class_ids, scores=-distances)


def episode_loss(logits: EpisodeLogits, true_labels: Sequence[int]) -> torch.Tensor:
    """Mean over queries of -log softmax probability of the true class."""
    position = {c: i for i, c in enumerate(logits.class_ids)}
    try:
        targets = torch.tensor([position[label] for label in true_labels])
    except KeyError as exc:
        raise EpisodeError(f"query label {exc.args[0]} not among episode classes") from exc
    if len(true_labels) != logits.scores.shape[0]:
        raise ShapeError(
            (logits.scores.shape[0],), (len(true_labels),), "query labels"
        )
    return F.cross_entropy(logits.scores, targets)
