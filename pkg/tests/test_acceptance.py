"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines stream. The desk-scale training criteria (7 and 8) share one corpus
and one set of training runs via a module-scoped fixture.
"""
import math
import random
import time

import numpy as np
import pytest
import torch

import fewsense as fs
from fewsense.preprocess import MAD_SCALE, wavedec, waverec
from fewsense.protometric import (
    AttentionScores,
    ClassPrototype,
    attention_scores,
    classify,
    compute_prototypes,
    episode_loss,
    uniform_attention,
)
from fewsense.trainer import _maybe_preprocess

# desk-scale corpus and run shape shared by criteria 7 and 8
DESK_CORPUS = dict(
    n_classes=20, samples_per_class=30, seed=11, T=400, S=30, A=3,
    motion_bandwidth_hz=10.0, class_depth=0.4, measurement_noise=0.3,
    warp_fraction=0.05,
)
DESK_RUN = dict(
    n_way=5, k_shot=1, n_query=10, epochs=60, episodes_per_epoch=20,
    learning_rate=1e-3, conv_channels=(16, 16, 16, 16), embedding_dim=64,
    downsample_factor=8, n_test_episodes=200, preprocess=False,
)
DESK_SEEDS = (0, 1, 2, 3, 4)


def _passline(n, text):
    print(f"\nACCEPTANCE CRITERION {n}: PASS — {text}")


def test_criterion_1_snr_correspondence():
    started = time.perf_counter()
    assert fs.snr_db(0.1) == 20.0
    assert abs(fs.snr_db(0.2) - 13.98) <= 0.01

    rng = np.random.default_rng(1)
    amp = (1.0 + 0.4 * rng.random((2000, 30, 3))).astype(np.float32)
    rec = fs.CsiRecord(amplitude=amp, label=0, sample_rate_hz=500.0)
    for fraction in (0.1, 0.2, 0.3, 0.4, 0.5):
        noisy = fs.add_noise(rec, fraction, np.random.default_rng(42))
        added = noisy.amplitude.astype(np.float64) - rec.amplitude.astype(np.float64)
        measured = 10 * math.log10(rec.amplitude.var() / added.var())
        assert abs(measured - fs.snr_db(fraction)) < 0.5, fraction

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    _passline(1, f"snr_db(0.1)=20.0, snr_db(0.2)=13.98+/-0.01, empirical within 0.5 dB ({elapsed:.2f}s)")


def test_criterion_2_schedule_law(label_only_ds):
    started = time.perf_counter()
    schedule = fs.build_schedule(600)
    assert [s.noise_fraction for s in schedule] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    for i, stage in enumerate(schedule):
        assert stage.epoch_range == (i * 100 + 1, (i + 1) * 100)
    for epoch in (1, 100, 101, 150, 599, 600):
        stage = fs.stage_for_epoch(epoch, 600)
        assert stage.epoch_range[0] <= epoch <= stage.epoch_range[1]

    cfg = fs.EpisodeConfig(n_way=2, k_shot=1, n_query=1)
    count = sum(1 for _ in fs.episode_stream(label_only_ds, cfg, 100, 600, seed=0))
    assert count == 60_000

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    _passline(2, f"six 100-epoch stages at (0,.1,.2,.3,.4,.5); stream yields 60,000 episodes ({elapsed:.2f}s)")


def test_criterion_3_metric_core_oracles():
    started = time.perf_counter()
    torch.manual_seed(0)

    # prototypes vs scalar-loop mean, 1e-7
    emb = torch.randn(20, 8, dtype=torch.float64)
    labels = [i // 5 for i in range(20)]
    protos = compute_prototypes(emb, labels)
    for proto in protos:
        rows = [i for i, lab in enumerate(labels) if lab == proto.class_id]
        for j in range(8):
            acc = 0.0
            for r in rows:
                acc += float(emb[r, j])
            assert abs(float(proto.values[j]) - acc / len(rows)) < 1e-7

    # attended distance vs scalar-loop weighted sum, 1e-9
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = int(rng.integers(1, 12))
        q = torch.tensor(rng.normal(0, 3, d))
        p = ClassPrototype(0, torch.tensor(rng.normal(0, 3, d)))
        w = AttentionScores(0, torch.tensor(rng.uniform(0.1, 4, d)))
        got = float(fs.attended_distance(q, p, w))
        want = 0.0
        for j in range(d):
            want += float(w.weights[j]) * (float(q[j]) - float(p.values[j])) ** 2
        assert abs(got - want) < 1e-9

    # uniform attention reduces to plain logits, 1e-6
    protos = [ClassPrototype(c, torch.randn(6, dtype=torch.float64)) for c in range(4)]
    queries = torch.randn(30, 6, dtype=torch.float64)
    plain = classify(queries, protos)
    uniform = classify(queries, protos, uniform_attention(range(4), 6))
    assert torch.allclose(plain.scores, uniform.scores, atol=1e-6)

    # softmax rows sum to 1 within 1e-6
    atts = [AttentionScores(c, torch.rand(6, dtype=torch.float64) + 0.1) for c in range(4)]
    probs = classify(queries, protos, atts).probabilities
    assert torch.allclose(probs.sum(dim=1), torch.ones(30, dtype=torch.float64), atol=1e-6)

    # uniform distances give exactly 1/N
    same = [ClassPrototype(c, torch.zeros(2, dtype=torch.float64)) for c in range(5)]
    uniform_probs = classify(torch.ones(3, 2, dtype=torch.float64), same).probabilities
    assert (uniform_probs == 1.0 / 5.0).all()

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    _passline(3, f"prototype/distance/softmax oracles all within tolerance ({elapsed:.2f}s)")


def test_criterion_4_end_to_end_gradient():
    started = time.perf_counter()
    torch.manual_seed(5)
    cfg = fs.BackboneConfig(
        input_shape=(1, 16, 8), conv_channels=(4, 4, 4, 4),
        embedding_dim=8, downsample_factor=1,
    )
    backbone = fs.Conv4Embedding(cfg).double()
    attention = fs.FeatureAttention().double()
    backbone.train()
    attention.train()
    x = torch.rand(10, 1, 16, 8, dtype=torch.float64)
    class_ids = (5, 9)
    support_labels = [5, 5, 9, 9]
    query_labels = [5, 5, 5, 9, 9, 9]

    def loss_fn():
        emb = backbone(x)
        emb_s, emb_q = emb[:4], emb[4:]
        protos = compute_prototypes(emb_s, support_labels, class_ids=class_ids)
        atts = [
            attention_scores(emb_s[i * 2 : (i + 1) * 2], attention, c)
            for i, c in enumerate(class_ids)
        ]
        return episode_loss(classify(emb_q, protos, atts), query_labels)

    loss_fn().backward()
    backbone_params = list(backbone.parameters())
    params = backbone_params + list(attention.parameters())

    rng = np.random.default_rng(1)
    indices = []
    while len(indices) < 20:
        p = int(rng.integers(len(params)))
        if params[p].grad is None:
            continue
        indices.append((p, int(rng.integers(params[p].numel()))))
    indices.extend((len(backbone_params) + p, 0) for p in range(len(params) - len(backbone_params)))

    step = 1e-3
    checked = 0
    for p_idx, flat_idx in indices:
        flat = params[p_idx].view(-1)
        with torch.no_grad():
            original = flat[flat_idx].item()
            flat[flat_idx] = original + step
            up = float(loss_fn())
            flat[flat_idx] = original - step
            down = float(loss_fn())
            flat[flat_idx] = original
        numeric = (up - down) / (2 * step)
        analytic = params[p_idx].grad.view(-1)[flat_idx].item()
        assert abs(analytic - numeric) <= 1e-3 * max(1e-4, abs(analytic), abs(numeric))
        checked += 1

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    assert checked >= 20
    _passline(4, f"{checked} sampled parameters (attention included) match central differences ({elapsed:.2f}s)")


def test_criterion_5_sampler_laws(label_only_ds):
    started = time.perf_counter()
    ds = fs.split_labels(label_only_ds, 46, seed=0)
    # each label has one record in label_only_ds; build a richer one
    records = []
    for label in range(12):
        for j in range(8):
            records.append(
                fs.CsiRecord(
                    np.full((8, 1, 1), float(label * 10 + j), dtype=np.float32),
                    label=label, sample_rate_hz=2.0,
                )
            )
    ds = fs.GestureDataset(
        tuple(records), frozenset(range(12)),
        train_labels=frozenset(range(8)), test_labels=frozenset(range(8, 12)),
    )
    cfg = fs.EpisodeConfig(n_way=5, k_shot=2, n_query=3)
    rng = random.Random(17)
    for _ in range(1000):
        ep = fs.sample_episode(ds, cfg, rng)
        assert len(set(ep.class_ids)) == 5
        assert len(ep.support) == 10 and len(ep.query) == 15
        assert not {id(r) for r, _ in ep.support} & {id(r) for r, _ in ep.query}
        assert all(lab in ds.train_labels for _, lab in ep.support)
        assert all(lab in ds.train_labels for _, lab in ep.query)

    test_cfg = fs.EpisodeConfig(n_way=4, k_shot=1, n_query=2, phase="meta_test")
    for _ in range(200):
        ep = fs.sample_episode(ds, test_cfg, rng)
        assert set(ep.class_ids) <= ds.test_labels

    a = [i.data.class_ids for i in fs.episode_stream(ds, cfg, 50, 4, seed=23)]
    b = [i.data.class_ids for i in fs.episode_stream(ds, cfg, 50, 4, seed=23)]
    assert a == b

    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    _passline(5, f"1,000-episode count/disjointness/isolation laws and seed determinism ({elapsed:.2f}s)")


def test_criterion_6_preprocessing_laws():
    started = time.perf_counter()

    # Hampel: planted impulse removed, constant elsewhere
    series = np.array([5.0, 5.0, 5.0, 100.0, 5.0, 5.0, 5.0])
    out = fs.hampel_filter(series, fs.HampelConfig(window_half_width=3, n_sigmas=3.0))
    assert np.array_equal(out, np.full(7, 5.0))

    # Hampel: affine series unchanged, and equal to an independent scalar loop
    affine = 1.0 + 0.25 * np.arange(64)
    cfg = fs.HampelConfig(window_half_width=3, n_sigmas=3.0)
    got = fs.hampel_filter(affine, cfg)
    reference = affine.copy()
    for i in range(64):
        lo, hi = max(0, i - 3), min(64, i + 4)
        window = affine[lo:hi]
        med = np.median(window)
        mad = np.median(np.abs(window - med))
        if abs(affine[i] - med) > 3.0 * MAD_SCALE * mad:
            reference[i] = med
    assert np.array_equal(got, affine)
    assert np.array_equal(got, reference)

    # DWT: zero-threshold reconstruction within 1e-8
    rng = np.random.default_rng(0)
    for length in (100, 501, 2000):
        x = rng.standard_normal(length)
        dcfg = fs.DwtConfig()
        rebuilt = waverec(wavedec(x, dcfg), dcfg, length)
        assert np.max(np.abs(rebuilt - x)) < 1e-8

    # DWT denoising reduces RMSE on the 10 dB sinusoid fixture
    n = 1024
    clean = np.sin(2 * np.pi * 3 * np.arange(n) / n)
    sigma = clean.std() / 10 ** (10 / 20)
    noisy = clean + rng.normal(0, sigma, n)
    denoised = fs.dwt_denoise(noisy, fs.DwtConfig())
    rmse_in = float(np.sqrt(np.mean((noisy - clean) ** 2)))
    rmse_out = float(np.sqrt(np.mean((denoised - clean) ** 2)))
    assert rmse_out < rmse_in

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    _passline(6, f"Hampel and wavelet laws hold; RMSE {rmse_in:.4f} -> {rmse_out:.4f} at 10 dB ({elapsed:.2f}s)")


@pytest.fixture(scope="module")
def desk_runs():
    """Preprocess the shared desk corpus once, then train both ablation arms."""
    ds = fs.generate_synthetic(fs.SyntheticConfig(**DESK_CORPUS))
    ds = _maybe_preprocess(ds, fs.TrainConfig(preprocess=True))
    runs = {}
    for mode in ("proto", "proto_A_Bplus"):
        for seed in DESK_SEEDS:
            cfg = fs.TrainConfig(**DESK_RUN, ablation_mode=mode, seed=seed)
            started = time.perf_counter()
            _, report = fs.train(ds, cfg)
            runs[(mode, seed)] = (report, time.perf_counter() - started)
    return runs


def test_criterion_7_learning_smoke(desk_runs):
    report, elapsed = desk_runs[("proto", DESK_SEEDS[0])]
    assert len(report.epoch_losses) == 60
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert report.test_accuracy > 0.26
    assert elapsed < 15 * 60
    _passline(
        7,
        f"proto 60x20: loss {report.epoch_losses[0]:.3f} -> {report.epoch_losses[-1]:.3f}, "
        f"meta-test accuracy {report.test_accuracy:.3f} > 0.26 ({elapsed:.0f}s)",
    )


def test_criterion_8_ablation_direction(desk_runs):
    proto = [desk_runs[("proto", s)][0].test_accuracy for s in DESK_SEEDS]
    full = [desk_runs[("proto_A_Bplus", s)][0].test_accuracy for s in DESK_SEEDS]
    total = sum(elapsed for _, elapsed in desk_runs.values())
    assert len(proto) >= 5 and len(full) >= 5
    assert float(np.mean(full)) >= float(np.mean(proto))
    assert total < 2 * 3600
    _passline(
        8,
        f"mean accuracy proto_A_Bplus {np.mean(full):.4f} >= proto {np.mean(proto):.4f} "
        f"over {len(DESK_SEEDS)} seeds ({total:.0f}s total)",
    )
