"""Joint optimisation of encoder weights and class proxies."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .augment import AugmentationConfig, augment_dataset
from .encoder import DFEncoder, EncoderConfig, encode, save_checkpoint
from .evaluation import evaluate
from .identify import DEFAULT_NEIGHBORS, DEFAULT_TAU, DEFAULT_THETA, IdentificationIndex
from .losses import LOSS_MODES, LossConfig, NoPairsError, ProxySet, loss_terms
from .traces import Dataset

logger = logging.getLogger(__name__)

OPTIMIZERS = {"adam": torch.optim.Adam, "sgd": torch.optim.SGD, "adamw": torch.optim.AdamW}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    early_stop_patience: int = 0  # 0 disables early stopping
    loss_mode: str = "combined"
    regenerate_augmentation: bool = False
    validation_k: int = 5

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")


@dataclass(frozen=True)
class IdentifyConfig:
    b: int = DEFAULT_NEIGHBORS
    theta: float = DEFAULT_THETA
    tau: float = DEFAULT_TAU
    include_augmented: bool = True


@dataclass(frozen=True)
class AugmentPlan:
    """How many augmented traces to add to the training set."""

    config: AugmentationConfig = AugmentationConfig()
    n_merged: int = 0
    n_exchanged: int = 0


class TrainResult(NamedTuple):
    model: DFEncoder
    proxies: ProxySet
    log: list[dict]
    train_set: Dataset


def embed_dataset(model: DFEncoder, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings ``(N, d_o)`` and label matrix ``(N, C)``, in dataset order."""
    if len(dataset) == 0:
        return np.zeros((0, model.config.embed_dim), np.float32), dataset.label_matrix()
    return encode(model, dataset.model_inputs(model.config.input_dim)), dataset.label_matrix()


def build_index(model: DFEncoder, proxies, references: Dataset, ident: IdentifyConfig = IdentifyConfig()) -> IdentificationIndex:
    """Index over the trained proxies and the transformed reference traces."""
    if not ident.include_augmented:
        references = references.with_traces(t for t in references if t.origin == "original")
    emb, labels = embed_dataset(model, references)
    p = proxies.proxies if isinstance(proxies, ProxySet) else proxies
    return IdentificationIndex(
        proxies=p.detach().cpu().numpy().astype(np.float64),
        ref_embeddings=emb if len(emb) else None,
        ref_labels=labels if len(emb) else None,
        b=ident.b,
        theta=ident.theta,
        tau=ident.tau,
        class_catalog=references.class_catalog,
        unmonitored=references.unmonitored,
    )


def _augmented(dataset: Dataset, plan: AugmentPlan | None, d_i: int, epoch: int) -> Dataset:
    if plan is None or (plan.n_merged == 0 and plan.n_exchanged == 0):
        return dataset
    cfg = plan.config
    if epoch:
        cfg = AugmentationConfig(cfg.exchange_ratio, cfg.rng_seed + epoch, cfg.merge_pairing)
    return augment_dataset(dataset, cfg, plan.n_merged, plan.n_exchanged, d_i)


def _epoch_losses(model, proxies, x, y, loss_cfg, mode, batch_size, order=None, opt=None):
    """One pass over ``x``; trains when ``opt`` is given. Returns mean loss terms."""
    sums = {"loss": 0.0, "proxy_loss": 0.0, "sample_loss": 0.0}
    n_batches = skipped = 0
    order = torch.arange(len(x)) if order is None else order
    for start in range(0, len(x), batch_size):
        idx = order[start:start + batch_size]
        if len(idx) < 2:
            continue
        emb = model(x[idx])
        try:
            total, lp, ls = loss_terms(emb, y[idx], proxies.proxies, loss_cfg, mode)
        except NoPairsError as e:
            skipped += 1
            logger.warning("skipping batch at offset %d: %s", start, e)
            continue
        if opt is not None:
            opt.zero_grad()
            total.backward()
            opt.step()
        n_batches += 1
        sums["loss"] += total.item()
        sums["proxy_loss"] += lp.item() if lp is not None else 0.0
        sums["sample_loss"] += ls.item() if ls is not None else 0.0
    out = {k: v / max(n_batches, 1) for k, v in sums.items()}
    out["skipped_batches"] = skipped
    return out


def train(
    dataset_train: Dataset,
    dataset_val: Dataset,
    encoder_cfg: EncoderConfig = EncoderConfig(),
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    ident_cfg: IdentifyConfig = IdentifyConfig(),
    augmentation: AugmentPlan | None = None,
) -> TrainResult:
    """Train encoder and proxies with one optimizer.

    ``augmentation`` (optional) adds generated traces to the training set,
    once upfront or per epoch when ``train_cfg.regenerate_augmentation``.
    After each epoch the pipeline Recall@k on ``dataset_val`` is measured;
    the best epoch's weights and proxies are returned. The log holds an
    ``epoch 0`` record with the untrained losses followed by one record per
    epoch.
    """
    if dataset_train.class_catalog != dataset_val.class_catalog:
        raise ValueError("train and validation catalogs differ")
    d_i = encoder_cfg.input_dim
    mode = train_cfg.loss_mode
    log: list[dict] = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_cfg.seed)
        model = DFEncoder(encoder_cfg, seed=train_cfg.seed)
        proxies = ProxySet(dataset_train.n_classes, encoder_cfg.embed_dim, seed=train_cfg.seed)
        params = list(model.parameters()) + list(proxies.parameters())
        opt = OPTIMIZERS[train_cfg.optimizer](params, lr=train_cfg.learning_rate)
        shuffler = torch.Generator().manual_seed(train_cfg.seed)

        train_set = _augmented(dataset_train, augmentation, d_i, 0)
        x = torch.from_numpy(train_set.model_inputs(d_i))
        y = torch.from_numpy(train_set.label_matrix())

        model.eval()
        with torch.no_grad():
            rec = _epoch_losses(model, proxies, x, y, loss_cfg, mode, train_cfg.batch_size)
        log.append({"epoch": 0, **rec, "n_train": len(train_set)})

        best = (-1.0, 0, copy.deepcopy(model.state_dict()), proxies.proxies.detach().clone())
        for epoch in range(1, train_cfg.epochs + 1):
            if train_cfg.regenerate_augmentation and epoch > 1:
                train_set = _augmented(dataset_train, augmentation, d_i, epoch - 1)
                x = torch.from_numpy(train_set.model_inputs(d_i))
                y = torch.from_numpy(train_set.label_matrix())
            model.train()
            order = torch.randperm(len(x), generator=shuffler)
            rec = _epoch_losses(model, proxies, x, y, loss_cfg, mode, train_cfg.batch_size, order, opt)
            rec = {"epoch": epoch, **rec, "n_train": len(train_set)}
            score = None
            if len(dataset_val):
                index = build_index(model, proxies, train_set, ident_cfg)
                report = evaluate(
                    index, dataset_val, (train_cfg.validation_k,), (),
                    embed=lambda ds: embed_dataset(model, ds)[0],
                )
                score = report.recall[train_cfg.validation_k]
                rec[f"val_recall@{train_cfg.validation_k}"] = score
            log.append(rec)
            logger.info("epoch %d: %s", epoch, rec)
            if score is None or score > best[0]:
                best = (score if score is not None else -1.0, epoch,
                        copy.deepcopy(model.state_dict()), proxies.proxies.detach().clone())
            elif train_cfg.early_stop_patience and epoch - best[1] >= train_cfg.early_stop_patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best[1])
                break

    model.load_state_dict(best[2])
    with torch.no_grad():
        proxies.proxies.copy_(best[3])
    model.eval()
    log.append({"best_epoch": best[1], "best_val": best[0]})
    return TrainResult(model, proxies, log, train_set)


def write_run(run_dir, result: TrainResult, config_echo: dict, ident_cfg: IdentifyConfig = IdentifyConfig()) -> Path:
    """Write ``best.ckpt``, ``log.ndjson``, ``config-echo.json`` and ``index.npz``."""
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    save_checkpoint(run / "best.ckpt", result.model, result.proxies.proxies, extra={"config": json.dumps(config_echo, sort_keys=True)})
    with open(run / "log.ndjson", "w") as f:
        for rec in result.log:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(run / "config-echo.json", "w") as f:
        json.dump(config_echo, f, sort_keys=True, indent=2)
        f.write("\n")
    build_index(result.model, result.proxies, result.train_set, ident_cfg).save(run / "index.npz")
    return run


def config_echo(**configs) -> dict:
    """JSON-ready dict of dataclass configs."""
    out = {}
    for name, cfg in configs.items():
        if cfg is None:
            out[name] = None
        elif hasattr(cfg, "to_dict"):
            out[name] = cfg.to_dict()
        elif hasattr(cfg, "__dataclass_fields__"):
            out[name] = json.loads(json.dumps(asdict(cfg)))
        else:
            out[name] = cfg
    return out
