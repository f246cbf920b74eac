"""End-to-end runs: train, index, evaluate, and the ablation grid."""

from __future__ import annotations

import logging
from dataclasses import replace

from .encoder import EncoderConfig
from .evaluation import AP_KS, RECALL_KS, EvalReport, evaluate
from .losses import LossConfig
from .synth import raw_feature_baseline
from .trainer import AugmentPlan, IdentifyConfig, TrainConfig, TrainResult, build_index, embed_dataset, train
from .traces import Dataset

logger = logging.getLogger(__name__)

# ablation settings: (uses augmentation, loss mode); "raw" has no training
ABLATIONS = {
    "raw": None,
    "ft_combined": (False, "combined"),
    "da_ft_proxy": (True, "proxy"),
    "da_ft_sample": (True, "sample"),
    "da_ft_combined": (True, "combined"),
}


def run_pipeline(
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    encoder_cfg: EncoderConfig = EncoderConfig(),
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    ident_cfg: IdentifyConfig = IdentifyConfig(),
    augmentation: AugmentPlan | None = None,
    k_recall=RECALL_KS,
    k_ap=AP_KS,
    protocol: str = "closed",
) -> tuple[EvalReport, TrainResult]:
    result = train(train_set, val_set, encoder_cfg, loss_cfg, train_cfg, ident_cfg, augmentation)
    index = build_index(result.model, result.proxies, result.train_set, ident_cfg)
    report = evaluate(
        index, test_set, k_recall, k_ap, protocol,
        embed=lambda ds: embed_dataset(result.model, ds)[0],
    )
    return report, result


def run_ablation(
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig = LossConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    ident_cfg: IdentifyConfig = IdentifyConfig(),
    augmentation: AugmentPlan | None = None,
    settings=tuple(ABLATIONS),
    k_recall=RECALL_KS,
    k_ap=AP_KS,
    protocol: str = "closed",
) -> dict[str, EvalReport]:
    """Evaluate each ablation setting on the same split. Returns reports by name."""
    out = {}
    for name in settings:
        spec = ABLATIONS[name]
        logger.info("ablation setting %s", name)
        if spec is None:
            out[name] = raw_feature_baseline(
                train_set, test_set, ident_cfg.b, encoder_cfg.input_dim, k_recall, k_ap, protocol
            )
            continue
        use_da, mode = spec
        out[name], _ = run_pipeline(
            train_set, val_set, test_set, encoder_cfg, loss_cfg,
            replace(train_cfg, loss_mode=mode), ident_cfg,
            augmentation if use_da else None, k_recall, k_ap, protocol,
        )
    return out
