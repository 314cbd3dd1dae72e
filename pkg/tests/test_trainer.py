import math

import numpy as np
import pytest
import torch

import glmc.trainer as trainer_mod
from glmc.longtail_data import LabeledDataset
from glmc.trainer import TrainingDiverged, cosine_lr, train, train_baseline_ce


def test_single_epoch_alpha_is_one(small_config, tiny_longtail):
    tr, te = tiny_longtail
    res = train(small_config(**{"train.epochs": 1}), tr, te, log_steps=False)
    assert [r["alpha"] for r in res.epochs] == [1.0]


def test_logged_alpha_and_lr_follow_formulas(small_config, tiny_longtail):
    tr, te = tiny_longtail
    cfg = small_config(**{"train.epochs": 4, "train.steps_per_epoch": 2, "train.lr": 0.2})
    res = train(cfg, tr, None, log_steps=True)
    for e, row in enumerate(res.epochs):
        assert row["alpha"] == 1 - (e / 4) ** 2
        assert row["lr"] == pytest.approx(0.2 * 0.5 * (1 + math.cos(math.pi * e / 4)))
    assert {r["alpha"] for r in res.steps if r["epoch"] == 2} == {0.75}
    alphas = [r["alpha"] for r in res.epochs]
    assert all(a > b for a, b in zip(alphas, alphas[1:]))


def test_cosine_lr_endpoints():
    assert cosine_lr(0.1, 0, 10) == 0.1
    assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0)


def test_same_seed_same_trace(small_config, tiny_longtail):
    tr, te = tiny_longtail
    cfg = small_config(**{"train.steps_per_epoch": 3, "train.prefetch": 2, "train.augment": True})
    a = train(cfg, tr, None)
    b = train(cfg, tr, None)
    assert a.steps == b.steps
    c = train(small_config(**{"train.steps_per_epoch": 3, "run.seed": 1}), tr, None)
    assert c.steps != a.steps


def test_divergence_guard(small_config, tiny_longtail, monkeypatch):
    tr, _ = tiny_longtail
    monkeypatch.setattr(trainer_mod, "consistency_loss",
                        lambda bundle: bundle.u_g.sum() * float("inf"))
    with pytest.raises(TrainingDiverged) as ei:
        train(small_config(), tr, None)
    assert ei.value.epoch == 0 and ei.value.step == 0


def test_both_views_share_one_encoder_pass(small_config, tiny_longtail):
    tr, _ = tiny_longtail
    seen = []
    orig = trainer_mod.build_network

    def spy(cfg, ds):
        net = orig(cfg, ds)
        net.encoder.register_forward_hook(lambda m, inp, out: seen.append(inp[0].shape[0]))
        return net
    trainer_mod.build_network = spy
    try:
        train(small_config(**{"train.epochs": 1, "train.steps_per_epoch": 2}), tr, None)
    finally:
        trainer_mod.build_network = orig
    assert seen == [32, 32]


def test_overfits_small_set(small_config):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 255, (64, 8, 8, 3), dtype=np.uint8)
    ds = LabeledDataset(images, np.arange(64) % 4, 4)
    cfg = small_config(**{"train.epochs": 200, "train.batch_size": 32, "train.lr": 0.1,
                          "train.weight_decay": 0.0, "rebalance.gamma": 0.0,
                          "mix.fixed_lambda": 1.0})
    res = train(cfg, ds, None, log_steps=False)
    assert res.epochs[-1]["total"] < 0.1


def test_baseline_uses_conventional_head(small_config, tiny_longtail):
    tr, te = tiny_longtail
    res = train_baseline_ce(small_config(**{"train.epochs": 1}), tr, te)
    assert res.head_mode == "balanced"
    assert all(r["l_cb"] == 0 and r["alpha"] == 1.0 for r in res.steps)
    assert 0.0 <= res.report.top1_overall <= 1.0


def test_run_dir_outputs(small_config, tiny_longtail, tmp_path):
    tr, te = tiny_longtail
    train(small_config(), tr, te, run_dir=str(tmp_path))
    for name in ("config.yaml", "metrics.csv", "steps.csv", "checkpoint_last.pt",
                 "checkpoint_best.pt", "eval_report.json", "manifest.json"):
        assert (tmp_path / name).exists(), name
    assert len((tmp_path / "metrics.csv").read_text().strip().splitlines()) == 3


def test_float64_training_and_evaluation(small_config, tiny_longtail):
    tr, te = tiny_longtail
    res = train(small_config(**{"train.epochs": 1, "train.steps_per_epoch": 2,
                                "train.dtype": "float64"}), tr, te)
    assert next(res.network.parameters()).dtype == torch.float64
    assert 0.0 <= res.report.top1_overall <= 1.0
