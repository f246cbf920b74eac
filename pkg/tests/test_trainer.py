import json

import numpy as np
import pytest
import torch

from multitab_wpf.augment import AugmentationConfig
from multitab_wpf.encoder import DFEncoder, EncoderConfig, load_checkpoint
from multitab_wpf.identify import IdentificationIndex
from multitab_wpf.losses import LossConfig
from multitab_wpf.synth import SynthConfig, generate_sessions, generate_single_tab
from multitab_wpf.trainer import (
    AugmentPlan,
    IdentifyConfig,
    TrainConfig,
    build_index,
    config_echo,
    embed_dataset,
    train,
    write_run,
)
from multitab_wpf.traces import Dataset, split_dataset

ENC = EncoderConfig.tiny(input_dim=256, embed_dim=16, block_channel_sizes=(4, 8, 8, 8))


@pytest.fixture(scope="module")
def small_split():
    cfg = SynthConfig(n_classes=6, traces_per_class=10, signature_length=12, max_tabs=2, seed=2)
    ds = generate_sessions(cfg, n_sessions=120)
    return split_dataset(ds, seed=0)


def _params(model):
    return {k: v.detach().clone() for k, v in model.named_parameters()}


def test_zero_learning_rate_keeps_weights(small_split):
    tr, va, _ = small_split
    res = train(tr, va, ENC, train_cfg=TrainConfig(epochs=1, learning_rate=0.0, seed=4))
    fresh = DFEncoder(ENC, seed=4)
    for k, v in _params(fresh).items():
        torch.testing.assert_close(dict(res.model.named_parameters())[k].detach(), v, rtol=0, atol=0)


def test_same_seed_identical_logs_and_weights(small_split):
    tr, va, _ = small_split
    cfg = TrainConfig(epochs=2, seed=1, learning_rate=3e-3)
    aug = AugmentPlan(AugmentationConfig(rng_seed=1), 20, 10)
    a = train(tr, va, ENC, train_cfg=cfg, augmentation=aug)
    b = train(tr, va, ENC, train_cfg=cfg, augmentation=aug)
    assert json.dumps(a.log, sort_keys=True) == json.dumps(b.log, sort_keys=True)
    for (ka, va_), (kb, vb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        assert ka == kb
        assert torch.equal(va_, vb)
    assert torch.equal(a.proxies.proxies, b.proxies.proxies)


def test_training_reduces_loss_and_moves_proxies(small_split):
    tr, va, _ = small_split
    cfg = TrainConfig(epochs=6, seed=0, learning_rate=3e-3)
    from multitab_wpf.losses import ProxySet

    initial = ProxySet(tr.n_classes, ENC.embed_dim, seed=0).proxies.detach()
    res = train(tr, va, ENC, train_cfg=cfg)
    epochs = [r for r in res.log if "epoch" in r]
    assert epochs[0]["epoch"] == 0
    assert epochs[-1]["loss"] < epochs[0]["loss"]
    assert all("proxy_loss" in r and "sample_loss" in r for r in epochs)
    assert not torch.equal(res.proxies.proxies.detach(), initial)
    assert "best_epoch" in res.log[-1]


def test_loss_modes_train(small_split):
    tr, va, _ = small_split
    for mode in ("proxy", "sample"):
        res = train(tr, va, ENC, train_cfg=TrainConfig(epochs=1, loss_mode=mode))
        assert res.log[1]["epoch"] == 1


def test_early_stop_after_patience(small_split):
    tr, va, _ = small_split
    cfg = TrainConfig(epochs=12, early_stop_patience=1, learning_rate=0.0, regenerate_augmentation=True)
    res = train(tr, va, ENC, train_cfg=cfg, augmentation=AugmentPlan(AugmentationConfig(), 10, 0))
    epochs = [r["epoch"] for r in res.log if "epoch" in r]
    best = res.log[-1]["best_epoch"]
    assert epochs[-1] == best + 1 < 12
    assert all(r["n_train"] == len(tr) + 10 for r in res.log if "epoch" in r)


def test_per_epoch_regeneration_changes_augmented_set(small_split):
    from multitab_wpf.trainer import _augmented

    tr, _, _ = small_split
    plan = AugmentPlan(AugmentationConfig(rng_seed=3), 10, 5)
    first, second = _augmented(tr, plan, 256, 0), _augmented(tr, plan, 256, 1)
    assert first.traces[:len(tr)] == second.traces[:len(tr)]
    assert first.traces[len(tr):] != second.traces[len(tr):]


def test_skips_batches_without_negative_pairs():
    cfg = SynthConfig(n_classes=2, traces_per_class=8, signature_length=8, max_tabs=2, seed=0)
    ds = generate_sessions(cfg, n_sessions=40)
    both = Dataset(tuple(t for t in ds if t.labels.sum() == 2), ds.class_catalog)
    res = train(both, both, ENC, train_cfg=TrainConfig(epochs=1, batch_size=4))
    assert res.log[1]["skipped_batches"] > 0


def test_catalog_mismatch_raises(small_split):
    tr, va, _ = small_split
    other = Dataset(va.traces, tuple(f"x{j}" for j in range(va.n_classes)))
    with pytest.raises(ValueError, match="catalog"):
        train(tr, other, ENC, train_cfg=TrainConfig(epochs=1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig(loss_mode="triplet")


def test_embed_dataset_contract(small_split):
    tr, _, _ = small_split
    model = DFEncoder(ENC, seed=0)
    emb, labels = embed_dataset(model, tr)
    assert emb.shape == (len(tr), 16)
    assert labels.shape == (len(tr), tr.n_classes)
    np.testing.assert_array_equal(emb, embed_dataset(model, tr)[0])
    empty = tr.with_traces([])
    e0, y0 = embed_dataset(model, empty)
    assert e0.shape == (0, 16) and len(y0) == 0


def test_build_index_filters_augmented(small_split):
    tr, va, _ = small_split
    res = train(tr, va, ENC, train_cfg=TrainConfig(epochs=1),
                augmentation=AugmentPlan(AugmentationConfig(), 15, 5))
    full = build_index(res.model, res.proxies, res.train_set)
    orig = build_index(res.model, res.proxies, res.train_set, IdentifyConfig(include_augmented=False))
    assert len(full.ref_embeddings) == len(tr) + 20
    assert len(orig.ref_embeddings) == len(tr)


def test_write_run_layout(tmp_path, small_split):
    tr, va, _ = small_split
    res = train(tr, va, ENC, train_cfg=TrainConfig(epochs=1))
    echo = config_echo(encoder=ENC, loss=LossConfig(), train=TrainConfig(epochs=1), augmentation=None)
    run = write_run(tmp_path / "run", res, echo)
    assert sorted(p.name for p in run.iterdir()) == ["best.ckpt", "config-echo.json", "index.npz", "log.ndjson"]
    model, proxies, extra = load_checkpoint(run / "best.ckpt")
    assert proxies.shape == (tr.n_classes, 16)
    assert json.loads(extra["config"]) == echo
    lines = (run / "log.ndjson").read_text().splitlines()
    assert len(lines) == len(res.log)
    assert IdentificationIndex.load(run / "index.npz").b == 40


def test_class_collapse_guard_small():
    cfg = SynthConfig(n_classes=6, traces_per_class=12, signature_length=12, max_tabs=1, noise_rate=0.0, seed=5)
    tr, va, te = split_dataset(generate_single_tab(cfg), seed=1)
    res = train(tr, va, ENC, train_cfg=TrainConfig(epochs=8, learning_rate=3e-3))
    p = res.proxies.proxies.detach().numpy()
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    sim = p @ p.T
    assert sim[~np.eye(len(p), dtype=bool)].mean() < 0.9
