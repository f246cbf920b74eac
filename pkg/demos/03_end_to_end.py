"""Train on synthetic multi-tab sessions, evaluate, and compare with raw k-NN.

A small configuration that finishes in about a minute on one CPU core.
The acceptance suite runs the same pipeline at a larger scale.

Run: python demos/03_end_to_end.py
"""

import torch

from multitab_wpf import (
    AugmentationConfig,
    AugmentPlan,
    EncoderConfig,
    SynthConfig,
    TrainConfig,
    generate_sessions,
    raw_feature_baseline,
    run_pipeline,
    split_dataset,
)

torch.set_num_threads(1)

# 10 pages of 12 bursts, up to three tabs per session, a random setup preamble before each page.
synth = SynthConfig(n_classes=10, signature_length=12, noise_rate=0.1, max_tabs=3, preamble_max=60, seed=0)
train, val, test = split_dataset(generate_sessions(synth, n_sessions=1000), seed=0)
print(f"split: {len(train)} train / {len(val)} validation / {len(test)} test")

encoder = EncoderConfig.tiny(block_channel_sizes=(16, 32, 64, 64))  # d_i=512, d_o=32
plan = AugmentPlan(AugmentationConfig(rng_seed=0), n_merged=1500, n_exchanged=300)
report, result = run_pipeline(
    train, val, test, encoder,
    train_cfg=TrainConfig(epochs=20, learning_rate=3e-3, seed=0),
    augmentation=plan, k_recall=(1, 3, 5), k_ap=(1, 3),
)

for rec in result.log:
    if "epoch" in rec and rec["epoch"]:
        print(f"epoch {rec['epoch']:2d}  loss {rec['loss']:.3f}  val Recall@5 {rec['val_recall@5']:.3f}")
print("best:", result.log[-1])

raw = raw_feature_baseline(train, test, b=40, d_i=encoder.input_dim, k_recall=(1, 3, 5), k_ap=(1, 3))
print("\n            Recall@1  Recall@3  Recall@5  AP@3")
for name, r in (("raw k-NN", raw), ("trained", report)):
    print(f"{name:10s}  {r.recall[1]:8.3f}  {r.recall[3]:8.3f}  {r.recall[5]:8.3f}  {r.ap[3]:.3f}")
