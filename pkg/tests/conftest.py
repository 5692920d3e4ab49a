"""Shared fixtures: a tiny synthetic corpus and a short trained run."""

import pytest


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in str(report.nodeid):
        name = report.nodeid.split("::")[-1]
        print(f"\n[ACCEPTANCE] {name}: {'PASS' if report.passed else 'FAIL'}")

from hyperfake import datamodel as dm
from hyperfake.classifier import ClassifierConfig
from hyperfake.reconstruction import ReconConfig, freeze, init_reconstruction
from hyperfake.spectral import SpectralConfig
from hyperfake.training import TrainConfig, train

SMALL_RECON = ReconConfig(n_stages=1, feature_channels=16, n_heads=2, flexi_downsample=2)
SMALL_RES = (32, 32)


def small_configs(out_dir, epochs=6, seed=3):
    spectral = SpectralConfig(pool_size=4, attn_dim=8, head_count=1)
    classifier = ClassifierConfig(backbone="compact", recalib_reduction=4,
                                  input_resolution=SMALL_RES)
    trainc = TrainConfig(epochs=epochs, batch_size=4, seed=seed, eval_every=3,
                         checkpoint_dir=str(out_dir))
    return spectral, classifier, trainc


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = dm.synth_dataset(6, SMALL_RES, seed=21, out_dir=root)
    return manifest


@pytest.fixture(scope="session")
def frozen_recon():
    return freeze(init_reconstruction(SMALL_RECON, SMALL_RES, seed=9))


@pytest.fixture(scope="session")
def small_run(tmp_path_factory, tiny_corpus, frozen_recon):
    """A short but real training run shared across test modules."""
    out_dir = tmp_path_factory.mktemp("run")
    spectral, classifier, trainc = small_configs(out_dir)
    ckpt, history = train(tiny_corpus, frozen_recon, spectral, classifier, trainc)
    return {
        "manifest": tiny_corpus,
        "recon": frozen_recon,
        "checkpoint": ckpt,
        "history": history,
        "out_dir": out_dir,
        "configs": (spectral, classifier, trainc),
    }
