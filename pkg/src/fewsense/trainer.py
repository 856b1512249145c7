"""Episodic meta-training and meta-testing.

One optimizer step per episode: sample, optionally noise-augment the query
set per the curriculum stage, embed support and query in a single forward
pass, build prototypes (and attention weights when the mode uses them),
classify, and step on the negative log-likelihood. Meta-testing runs clean
episodes from the held-out label split.

Ablation modes: "proto" is the plain prototype network; "_A" adds feature
attention, "_B" fixed-fraction query noise after the first epoch block,
"_Bplus" the six-stage progressive schedule.
"""
from __future__ import annotations

import math
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch

from . import curriculum
from .backbone import BackboneConfig, Conv4Embedding, batch_to_input
from .csi_core import GestureDataset
from .episodes import Episode, EpisodeConfig, episode_stream
from .errors import ConfigurationError, EpisodeError, FormatVersionError, TrainingDivergedError
from .preprocess import DwtConfig, HampelConfig, preprocess_record
from .protometric import (
    FeatureAttention,
    attention_scores,
    classify,
    compute_prototypes,
    episode_loss,
)

MODES = ("proto", "proto_A", "proto_B", "proto_Bplus", "proto_A_Bplus")
_ATTENTION_MODES = frozenset({"proto_A", "proto_A_Bplus"})
_PROGRESSIVE_MODES = frozenset({"proto_Bplus", "proto_A_Bplus"})
_FIXED_NOISE_MODES = frozenset({"proto_B"})

CHECKPOINT_FORMAT_VERSION = 1
_EVAL_SEED_TAG = 7919


@dataclass(frozen=True)
class TrainConfig:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 10
    epochs: int = 600
    episodes_per_epoch: int = 100
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    ablation_mode: str = "proto_A_Bplus"
    seed: int = 0
    fixed_noise_fraction: float = 0.3
    conv_channels: tuple[int, int, int, int] = (64, 64, 64, 64)
    embedding_dim: int = 64
    downsample_factor: int = 8
    attention_channels: tuple[int, int, int] = (8, 8, 1)
    preprocess: bool = True
    hampel: HampelConfig = field(default_factory=HampelConfig)
    dwt: DwtConfig = field(default_factory=DwtConfig)
    n_test_episodes: int = 600

    def __post_init__(self):
        if min(self.epochs, self.episodes_per_epoch) < 1:
            raise ConfigurationError("epochs and episodes_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.ablation_mode not in MODES:
            raise ConfigurationError(
                f"ablation_mode must be one of {MODES}, got {self.ablation_mode!r}"
            )
        if not 0 < self.fixed_noise_fraction <= 0.5:
            raise ConfigurationError("fixed_noise_fraction must be in (0, 0.5]")

    @property
    def uses_attention(self) -> bool:
        return self.ablation_mode in _ATTENTION_MODES

    @property
    def uses_augmentation(self) -> bool:
        return self.ablation_mode in (_PROGRESSIVE_MODES | _FIXED_NOISE_MODES)


@dataclass(frozen=True)
class TrainedModel:
    backbone: Conv4Embedding
    attention: FeatureAttention | None
    train_config: TrainConfig
    backbone_config: BackboneConfig


@dataclass
class RunReport:
    epoch_losses: list[float]
    epoch_accuracies: list[float]
    test_accuracy: float
    test_ci95: float
    train_seconds: float
    config: dict
    stage_table: list[dict]

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "epoch_accuracies": self.epoch_accuracies,
            "test_accuracy": self.test_accuracy,
            "test_ci95": self.test_ci95,
            "train_seconds": self.train_seconds,
            "config": self.config,
            "stage_table": self.stage_table,
        }

    @staticmethod
    def from_dict(data: dict) -> "RunReport":
        return RunReport(**data)


def make_optimizer(name: str, params, lr: float) -> torch.optim.Optimizer:
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise ConfigurationError(f"unknown optimizer {name!r}")


def stage_plan(cfg: TrainConfig) -> tuple[curriculum.CurriculumStage, ...]:
    """Resolve the mode's noise schedule over [1, cfg.epochs]."""
    if not cfg.uses_augmentation:
        return (curriculum.CurriculumStage(1, 0.0, (1, cfg.epochs)),)
    if cfg.epochs % curriculum.N_STAGES != 0:
        raise ConfigurationError(
            f"epochs must be a multiple of {curriculum.N_STAGES} for augmented "
            f"modes, got {cfg.epochs}"
        )
    if cfg.ablation_mode in _PROGRESSIVE_MODES:
        return curriculum.build_schedule(cfg.epochs)
    block = cfg.epochs // curriculum.N_STAGES
    return (
        curriculum.CurriculumStage(1, 0.0, (1, block)),
        curriculum.CurriculumStage(2, cfg.fixed_noise_fraction, (block + 1, cfg.epochs)),
    )


def _stage_for(plan: Sequence[curriculum.CurriculumStage], epoch: int):
    for stage in plan:
        if stage.epoch_range[0] <= epoch <= stage.epoch_range[1]:
            return stage
    raise ConfigurationError(f"epoch {epoch} not covered by the stage plan")


def stage_table_rows(plan: Sequence[curriculum.CurriculumStage]) -> list[dict]:
    return [
        {
            "stage": s.stage_index,
            "noise_fraction": s.noise_fraction,
            "epoch_start": s.epoch_range[0],
            "epoch_end": s.epoch_range[1],
            "mix_augmented": s.mix_ratio[0],
            "mix_original": s.mix_ratio[1],
        }
        for s in plan
    ]


def _backbone_config(ds: GestureDataset, cfg: TrainConfig) -> BackboneConfig:
    if not ds.records:
        raise ConfigurationError("dataset has no records")
    t, s, a = ds.records[0].shape
    return BackboneConfig(
        input_shape=(a, t // cfg.downsample_factor, s),
        conv_channels=tuple(cfg.conv_channels),
        embedding_dim=cfg.embedding_dim,
        downsample_factor=cfg.downsample_factor,
    )


def _maybe_preprocess(ds: GestureDataset, cfg: TrainConfig) -> GestureDataset:
    if not cfg.preprocess:
        return ds
    return ds.map_records(lambda rec: preprocess_record(rec, cfg.hampel, cfg.dwt))


def _forward_episode(
    model: TrainedModel, episode: Episode, query
) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Embed, classify, and score one episode; returns (loss, scores, accuracy)."""
    cfg = model.train_config
    support_records = [rec for rec, _ in episode.support]
    query_records = [rec for rec, _ in query]
    batch = batch_to_input(support_records + query_records, model.backbone_config)
    emb = model.backbone(batch)
    emb_s, emb_q = emb[: len(support_records)], emb[len(support_records) :]

    protos = compute_prototypes(
        emb_s, [lab for _, lab in episode.support], class_ids=episode.class_ids
    )
    atts = None
    if model.attention is not None:
        k = cfg.k_shot
        atts = [
            attention_scores(emb_s[i * k : (i + 1) * k], model.attention, class_id)
            for i, class_id in enumerate(episode.class_ids)
        ]
    logits = classify(emb_q, protos, atts)
    true_labels = [lab for _, lab in query]
    loss = episode_loss(logits, true_labels)

    position = {c: i for i, c in enumerate(logits.class_ids)}
    targets = torch.tensor([position[lab] for lab in true_labels])
    accuracy = float((logits.scores.argmax(dim=1) == targets).float().mean())
    return loss, logits.scores, accuracy


def train(
    ds: GestureDataset,
    cfg: TrainConfig,
    *,
    resume_from=None,
    checkpoint_path=None,
    checkpoint_every: int | None = None,
    stop_after_epoch: int | None = None,
) -> tuple[TrainedModel, RunReport]:
    """Meta-train per the config; deterministic end to end under cfg.seed.

    resume_from restores model, optimizer, and rng states from a checkpoint
    written by this function and continues at the saved epoch + 1.
    stop_after_epoch ends the loop early (checkpoint still written when a
    path is given), which is how a resumable interruption is produced.
    """
    plan = stage_plan(cfg)
    torch.manual_seed(cfg.seed)
    ds_p = _maybe_preprocess(ds, cfg)
    bb_cfg = _backbone_config(ds_p, cfg)
    backbone = Conv4Embedding(bb_cfg)
    attention = FeatureAttention(cfg.attention_channels) if cfg.uses_attention else None
    model = TrainedModel(backbone, attention, cfg, bb_cfg)

    params = list(backbone.parameters())
    if attention is not None:
        params += list(attention.parameters())
    optimizer = make_optimizer(cfg.optimizer, params, cfg.learning_rate)

    stream_seed, aug_seed = (
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(2)
    )
    aug_rng = np.random.default_rng(aug_seed)
    stream_rng = random.Random(stream_seed)
    start_epoch = 1
    epoch_losses: list[float] = []
    epoch_accuracies: list[float] = []

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        _check_resume_compat(ckpt["train_config"], cfg)
        backbone.load_state_dict(ckpt["backbone_state"])
        if attention is not None:
            if ckpt["attention_state"] is None:
                raise ConfigurationError("checkpoint has no attention parameters")
            attention.load_state_dict(ckpt["attention_state"])
        optimizer.load_state_dict(ckpt["optimizer_state"])
        torch.set_rng_state(ckpt["torch_rng"])
        stream_rng.setstate(ckpt["stream_rng"])
        aug_rng.bit_generator.state = ckpt["aug_rng"]
        start_epoch = ckpt["epoch"] + 1
        epoch_losses = list(ckpt["epoch_losses"])
        epoch_accuracies = list(ckpt["epoch_accuracies"])

    ecfg = EpisodeConfig(cfg.n_way, cfg.k_shot, cfg.n_query, phase="meta_train")
    stream = episode_stream(
        ds_p,
        ecfg,
        cfg.episodes_per_epoch,
        cfg.epochs,
        seed=stream_seed,
        _rng=stream_rng,
        _start_epoch=start_epoch,
    )

    started = time.perf_counter()
    last_epoch = start_epoch - 1
    stage = plan[0]
    losses_this_epoch: list[float] = []
    accs_this_epoch: list[float] = []

    backbone.train()
    if attention is not None:
        attention.train()

    for item in stream:
        if item.epoch != last_epoch:
            last_epoch = item.epoch
            stage = _stage_for(plan, item.epoch)

        query = (
            curriculum.augment_query(item.data.query, stage, aug_rng)
            if stage.noise_fraction > 0
            else list(item.data.query)
        )
        loss, _, accuracy = _forward_episode(model, item.data, query)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(item.epoch, item.episode, value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses_this_epoch.append(value)
        accs_this_epoch.append(accuracy)

        if item.episode == cfg.episodes_per_epoch:
            epoch_losses.append(float(np.mean(losses_this_epoch)))
            epoch_accuracies.append(float(np.mean(accs_this_epoch)))
            losses_this_epoch.clear()
            accs_this_epoch.clear()
            completed = item.epoch
            if (
                checkpoint_path is not None
                and checkpoint_every is not None
                and completed % checkpoint_every == 0
            ):
                save_checkpoint(
                    checkpoint_path, model, optimizer, completed,
                    epoch_losses, epoch_accuracies, stream_rng, aug_rng,
                )
            if stop_after_epoch is not None and completed >= stop_after_epoch:
                break

    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path, model, optimizer, len(epoch_losses),
            epoch_losses, epoch_accuracies, stream_rng, aug_rng,
        )
    train_seconds = time.perf_counter() - started

    test_accuracy, test_ci95 = evaluate(
        model, ds_p, cfg, cfg.n_test_episodes, already_preprocessed=True
    )
    report = RunReport(
        epoch_losses=epoch_losses,
        epoch_accuracies=epoch_accuracies,
        test_accuracy=test_accuracy,
        test_ci95=test_ci95,
        train_seconds=train_seconds,
        config=config_to_dict(cfg),
        stage_table=stage_table_rows(plan),
    )
    return model, report


def evaluate(
    model: TrainedModel,
    ds: GestureDataset,
    cfg: TrainConfig,
    n_test_episodes: int,
    *,
    already_preprocessed: bool = False,
) -> tuple[float, float]:
    """Mean query accuracy over clean meta-test episodes, with 95% CI."""
    if n_test_episodes < 1:
        raise ConfigurationError("n_test_episodes must be >= 1")
    ds_p = ds if already_preprocessed else _maybe_preprocess(ds, cfg)
    if not ds_p.test_labels:
        raise EpisodeError("dataset has no meta-test labels")
    ecfg = EpisodeConfig(cfg.n_way, cfg.k_shot, cfg.n_query, phase="meta_test")
    eval_seed = int(
        np.random.SeedSequence([cfg.seed, _EVAL_SEED_TAG]).generate_state(1)[0]
    )
    was_training = model.backbone.training
    model.backbone.eval()
    if model.attention is not None:
        model.attention.eval()
    accuracies = []
    try:
        with torch.no_grad():
            for item in episode_stream(ds_p, ecfg, n_test_episodes, 1, seed=eval_seed):
                _, _, accuracy = _forward_episode(model, item.data, list(item.data.query))
                accuracies.append(accuracy)
    finally:
        model.backbone.train(was_training)
        if model.attention is not None:
            model.attention.train(was_training)
    mean = float(np.mean(accuracies))
    ci95 = (
        float(1.96 * np.std(accuracies, ddof=1) / math.sqrt(len(accuracies)))
        if len(accuracies) > 1
        else 0.0
    )
    return mean, ci95


@dataclass(frozen=True)
class AblationRow:
    mode: str
    seed: int
    accuracy: dict[int, float]  # k_shot -> meta-test accuracy
    ci95: dict[int, float]
    train_seconds: float
    reports: dict[int, RunReport]


def run_ablation(
    ds: GestureDataset,
    base_cfg: TrainConfig,
    modes: Sequence[str],
    seeds: Sequence[int],
    shots: Sequence[int] = (1, 5),
) -> list[AblationRow]:
    """One row per (mode, seed): each row trains and tests every shot count."""
    if not modes:
        raise ConfigurationError("modes must be non-empty")
    if not seeds:
        raise ConfigurationError("seeds must be non-empty")
    for mode in modes:
        if mode not in MODES:
            raise ConfigurationError(f"unknown ablation mode {mode!r}")
    ds_p = _maybe_preprocess(ds, base_cfg)
    rows = []
    for mode in sorted(set(modes), key=MODES.index):
        for seed in seeds:
            accuracy: dict[int, float] = {}
            ci95: dict[int, float] = {}
            reports: dict[int, RunReport] = {}
            seconds = 0.0
            for shot in shots:
                cfg = replace(
                    base_cfg,
                    ablation_mode=mode,
                    seed=seed,
                    k_shot=shot,
                    preprocess=False,
                )
                _, report = train(ds_p, cfg)
                accuracy[shot] = report.test_accuracy
                ci95[shot] = report.test_ci95
                reports[shot] = report
                seconds += report.train_seconds
            rows.append(
                AblationRow(
                    mode=mode,
                    seed=seed,
                    accuracy=accuracy,
                    ci95=ci95,
                    train_seconds=seconds,
                    reports=reports,
                )
            )
    return rows


def config_to_dict(cfg: TrainConfig) -> dict:
    data = asdict(cfg)
    data["conv_channels"] = list(cfg.conv_channels)
    data["attention_channels"] = list(cfg.attention_channels)
    return data


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    data["conv_channels"] = tuple(data["conv_channels"])
    data["attention_channels"] = tuple(data["attention_channels"])
    data["hampel"] = HampelConfig(**data["hampel"])
    data["dwt"] = DwtConfig(**data["dwt"])
    return TrainConfig(**data)


def _check_resume_compat(saved: dict, cfg: TrainConfig) -> None:
    saved_cfg = config_from_dict(saved)
    fixed = (
        "n_way", "k_shot", "n_query", "episodes_per_epoch", "learning_rate",
        "optimizer", "ablation_mode", "seed", "conv_channels", "embedding_dim",
        "downsample_factor", "attention_channels",
    )
    for name in fixed:
        if getattr(saved_cfg, name) != getattr(cfg, name):
            raise ConfigurationError(
                f"cannot resume: config field {name} changed "
                f"({getattr(saved_cfg, name)!r} -> {getattr(cfg, name)!r})"
            )
    if cfg.epochs < saved_cfg.epochs and cfg.epochs < 1:
        raise ConfigurationError("resume target epochs must be >= saved epochs")


def save_checkpoint(
    path,
    model: TrainedModel,
    optimizer: torch.optim.Optimizer,
    epoch: int,
    epoch_losses: list[float],
    epoch_accuracies: list[float],
    stream_rng: random.Random,
    aug_rng: np.random.Generator,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "train_config": config_to_dict(model.train_config),
        "backbone_config": asdict(model.backbone_config),
        "backbone_state": model.backbone.state_dict(),
        "attention_state": model.attention.state_dict() if model.attention else None,
        "optimizer_state": optimizer.state_dict(),
        "epoch": epoch,
        "epoch_losses": list(epoch_losses),
        "epoch_accuracies": list(epoch_accuracies),
        "torch_rng": torch.get_rng_state(),
        "stream_rng": stream_rng.getstate(),
        "aug_rng": aug_rng.bit_generator.state,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise FormatVersionError("checkpoint", version, CHECKPOINT_FORMAT_VERSION)
    return payload


def model_from_checkpoint(ckpt: dict) -> TrainedModel:
    """Rebuild a trained model (inference-ready) from a checkpoint payload."""
    cfg = config_from_dict(ckpt["train_config"])
    bb_data = dict(ckpt["backbone_config"])
    bb_data["input_shape"] = tuple(bb_data["input_shape"])
    bb_data["conv_channels"] = tuple(bb_data["conv_channels"])
    bb_cfg = BackboneConfig(**bb_data)
    backbone = Conv4Embedding(bb_cfg)
    backbone.load_state_dict(ckpt["backbone_state"])
    attention = None
    if ckpt["attention_state"] is not None:
        attention = FeatureAttention(cfg.attention_channels)
        attention.load_state_dict(ckpt["attention_state"])
    return TrainedModel(backbone, attention, cfg, bb_cfg)
