"""Shared fixtures: seeded synthetic benchmarks and trained models.

Training runs are expensive relative to the rest of the suite, so each
(completeness, noise) configuration is trained once per session and
shared read-only across tests.
"""

import pytest

from decollab.cbm import CbmTrainConfig, new_model, train_cbm
from decollab.dataio import SyntheticConfig, generate_synthetic

BENCH_SEED = 7


def bench_config(completeness: float, **overrides) -> SyntheticConfig:
    defaults = dict(
        n_classes=10,
        n_concepts=12,
        n_features=24,
        n_train=3000,
        n_val=600,
        n_test=1500,
        concept_noise=0.05,
        completeness=completeness,
        seed=BENCH_SEED,
    )
    defaults.update(overrides)
    return SyntheticConfig(**defaults)


def train_bench_model(bundle, seed: int = BENCH_SEED):
    model = new_model(
        bundle.n_features, bundle.n_concepts, bundle.n_classes, implicit_dim=16, hidden_units=64, seed=seed
    )
    config = CbmTrainConfig(seed=seed)
    return train_cbm(model, bundle, config)


@pytest.fixture(scope="session")
def bundle_kappa1():
    return generate_synthetic(bench_config(1.0))


@pytest.fixture(scope="session")
def bundle_kappa06():
    return generate_synthetic(bench_config(0.6))


@pytest.fixture(scope="session")
def bundle_kappa03():
    return generate_synthetic(bench_config(0.3))


@pytest.fixture(scope="session")
def model_kappa1(bundle_kappa1):
    model, history = train_bench_model(bundle_kappa1)
    return model


@pytest.fixture(scope="session")
def model_kappa06(bundle_kappa06):
    model, history = train_bench_model(bundle_kappa06)
    return model


@pytest.fixture(scope="session")
def model_kappa03(bundle_kappa03):
    model, history = train_bench_model(bundle_kappa03)
    return model
