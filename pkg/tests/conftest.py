"""Shared fixtures for the acceptance suite.

The trained artifacts (corpus, range-predictor checkpoint, controller
variants) are session-scoped so the acceptance criteria share one training
run instead of retraining per test.
"""

import numpy as np
import pytest

from anableps import cbpn as cbpn_mod
from anableps.config import ExperimentConfig
from anableps.harness import cmd_gen_traces, cmd_train_abrn, load_corpus


@pytest.fixture(scope="session")
def acceptance_cfg(tmp_path_factory) -> ExperimentConfig:
    root = tmp_path_factory.mktemp("acceptance")
    cfg = ExperimentConfig()
    cfg.seed = 1
    cfg.data_dir = str(root / "data")
    cfg.out_dir = str(root / "out")
    return cfg


@pytest.fixture(scope="session")
def acceptance_corpus(acceptance_cfg):
    cmd_gen_traces(acceptance_cfg)
    return load_corpus(acceptance_cfg.data_dir)


@pytest.fixture(scope="session")
def trained_cbpn(acceptance_cfg, acceptance_corpus):
    """Two-phase range-predictor training on the train split.

    Returns everything criterion 8 needs: the model, its checkpoint path,
    the dataset with its split, and the baseline parameters captured
    between the two phases for the freeze check.
    """
    cfg = acceptance_cfg
    corpus = acceptance_corpus
    videos = [corpus.videos[n] for n in corpus.select("videos", "train")]
    ccfg = cfg.cbpn_config()
    dataset = cbpn_mod.build_cbpn_dataset(
        videos, cfg.encoder, ccfg, seed=cfg.seed,
        sessions_per_video=cfg.cbpn.sessions_per_video,
    )
    train_idx, val_idx = cbpn_mod.split_by_session(
        dataset, cfg.cbpn.val_fraction, seed=cfg.seed
    )
    model, _ = cbpn_mod.train_baseline(
        dataset,
        cbpn_mod.CbpnTrainConfig(
            epochs=cfg.cbpn.epochs_baseline, batch_size=cfg.cbpn.batch_size,
            lr=cfg.cbpn.lr, seed=cfg.seed,
        ),
        ccfg,
        indices=train_idx,
    )
    baseline_before = model.baseline_params().copy()
    model, _ = cbpn_mod.train_error(
        dataset,
        model,
        cbpn_mod.CbpnTrainConfig(
            epochs=cfg.cbpn.epochs_error, batch_size=cfg.cbpn.batch_size,
            lr=cfg.cbpn.lr, seed=cfg.seed + 1,
        ),
        indices=train_idx,
    )
    ckpt = f"{cfg.out_dir}/cbpn.json"
    import pathlib

    pathlib.Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    model.save(ckpt)
    return {
        "model": model,
        "checkpoint": ckpt,
        "dataset": dataset,
        "train_idx": train_idx,
        "val_idx": val_idx,
        "baseline_before": baseline_before,
    }


@pytest.fixture(scope="session")
def trained_actors(acceptance_cfg, acceptance_corpus, trained_cbpn):
    """The three controller variants trained with identical budgets."""
    cfg = acceptance_cfg
    actors = {}
    for ablation in ("full", "c", "s"):
        run_cfg = ExperimentConfig()
        run_cfg.seed = cfg.seed
        run_cfg.data_dir = cfg.data_dir
        run_cfg.out_dir = f"{cfg.out_dir}/abrn_{ablation}"
        run_cfg.ablation = ablation
        run_cfg.cbpn_checkpoint = trained_cbpn["checkpoint"]
        run_cfg.a3c.updates = 9000
        run_cfg.a3c.entropy_weight = 0.02
        run_cfg.a3c.workers = 1
        cmd_train_abrn(run_cfg)
        actors[ablation] = f"{run_cfg.out_dir}/actor.json"
    return actors
