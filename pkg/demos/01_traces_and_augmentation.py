"""Traces, merging and burst exchange on a handful of synthetic pages.

Run: python demos/01_traces_and_augmentation.py
"""

import numpy as np

from multitab_wpf import (
    AugmentationConfig,
    SynthConfig,
    Trace,
    augment_dataset,
    exchange_bursts,
    extract_bursts,
    generate_single_tab,
    merge_traces,
)

# Two hand-written traces. Directions are +1 (out) / -1 (in); times start at 0.
a = Trace([1, -1, -1, 1], [0.0, 0.1, 0.2, 0.3], [1, 0, 0])
b = Trace([1, 1, -1], [0.0, 0.15, 0.2], [0, 0, 1])

# Merging interleaves by time (ties keep a's packet first) and ORs the labels.
m = merge_traces(a, b, d_i=None)
print("merged directions:", m.directions.tolist())
print("merged times:     ", m.timestamps.tolist())
print("merged labels:    ", m.labels.tolist())

# Opening b two seconds later is a plain offset.
late = merge_traces(a, b, d_i=None, offset=2.0)
print("b opened at t=2:  ", late.directions.tolist())

# Bursts are maximal same-direction runs.
print("bursts of a:", extract_bursts(a.directions))

# Burst exchange swaps floor(n_bursts * ratio) bursts with their neighbours.
rng = np.random.default_rng(0)
page = generate_single_tab(SynthConfig(n_classes=2, traces_per_class=1, seed=1))[0]
swapped = exchange_bursts(page, AugmentationConfig(exchange_ratio=0.2), rng)
print(f"\npage with {len(extract_bursts(page.directions))} bursts")
before = [(x.direction, x.end - x.start) for x in extract_bursts(page.directions)]
after = [(x.direction, x.end - x.start) for x in extract_bursts(swapped.directions)]
print("burst (direction, size) before:", before)
print("burst (direction, size) after: ", after)
print("same packet count and timestamps:", len(swapped) == len(page),
      np.array_equal(swapped.timestamps, page.timestamps))

# A training set grows by merged and exchanged copies.
singles = generate_single_tab(SynthConfig(n_classes=5, traces_per_class=4, seed=2))
aug = augment_dataset(singles, AugmentationConfig(rng_seed=0), n_merged=10, n_exchanged=5, d_i=512)
origins = [t.origin for t in aug]
print("\naugmented set:", {o: origins.count(o) for o in sorted(set(origins))})
print("labels per merged trace:", sorted({int(t.labels.sum()) for t in aug if t.origin == "merged"}))
