import numpy as np
import pytest

from fewsense import GestureDataset, CsiRecord, SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_ds():
    """Small separable corpus: 8 classes x 8 samples, fast to embed."""
    cfg = SyntheticConfig(
        n_classes=8, samples_per_class=8, seed=3, T=160, S=8, A=2,
        window_seconds=4.0, n_train_labels=5,
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def label_only_ds():
    """62 one-record classes with minimal tensors, for split/sampler laws."""
    records = tuple(
        CsiRecord(
            amplitude=np.full((8, 1, 1), float(label + 1), dtype=np.float32),
            label=label,
            sample_rate_hz=2.0,
        )
        for label in range(62)
    )
    labels = frozenset(range(62))
    return GestureDataset(
        records=records, label_space=labels, train_labels=labels, test_labels=frozenset()
    )
