"""Multi-tab trace augmentation.

Two generators:

* :func:`merge_traces` interleaves the packets of two traces by time and
  unions their labels, simulating a new webpage combination.
* :func:`exchange_bursts` swaps a small fraction of bursts with their
  successors, simulating packet-order jitter between concurrent circuits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .traces import DEFAULT_INPUT_DIM, Dataset, Trace

DEFAULT_EXCHANGE_RATIO = 0.05
MERGE_PAIRINGS = ("random", "exhaustive-sampled")


class Burst(NamedTuple):
    start: int
    end: int
    direction: int

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True)
class AugmentationConfig:
    exchange_ratio: float = DEFAULT_EXCHANGE_RATIO
    rng_seed: int = 0
    merge_pairing: str = "random"

    def __post_init__(self):
        if not 0.0 <= self.exchange_ratio <= 1.0:
            raise ValueError("exchange_ratio must lie in [0, 1]")
        if self.merge_pairing not in MERGE_PAIRINGS:
            raise ValueError(f"merge_pairing must be one of {MERGE_PAIRINGS}")


def merge_traces(a: Trace, b: Trace, d_i: int | None = DEFAULT_INPUT_DIM, offset: float = 0.0) -> Trace:
    """Time-ordered interleaving of two traces.

    On equal times the packet of ``a`` goes first. Once one trace is
    exhausted the rest of the other is appended. ``offset`` delays ``b``
    (used when composing sessions whose tabs open at different times).
    The result is truncated to ``d_i`` packets (``None`` keeps everything),
    re-zeroed to its first packet, and labelled with the union of both
    label sets.
    """
    if len(a) == 0 and len(b) == 0:
        raise ValueError("nothing to merge: both traces are empty")
    if len(a.labels) != len(b.labels):
        raise ValueError("label widths differ")
    ta = a.timestamps
    tb = b.timestamps + offset
    na, nb = len(ta), len(tb)
    # position of each packet in the output: packets of a precede
    # equal-time packets of b
    pos_a = np.arange(na) + np.searchsorted(tb, ta, side="left")
    pos_b = np.arange(nb) + np.searchsorted(ta, tb, side="right")
    n = na + nb
    dirs = np.empty(n, dtype=np.int8)
    times = np.empty(n, dtype=np.float64)
    dirs[pos_a], dirs[pos_b] = a.directions, b.directions
    times[pos_a], times[pos_b] = ta, tb
    if d_i is not None:
        dirs, times = dirs[:d_i], times[:d_i]
    if len(times):
        times = times - times[0]
    return Trace(dirs, times, a.labels | b.labels, origin="merged")


def extract_bursts(directions) -> list[Burst]:
    """Split a direction sequence into maximal same-direction runs."""
    d = np.asarray(directions)
    if d.size == 0:
        raise ValueError("directions must be non-empty")
    cuts = np.flatnonzero(d[1:] != d[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [len(d)]))
    return [Burst(int(s), int(e), int(d[s])) for s, e in zip(starts, ends)]


def n_exchanges(n_bursts: int, exchange_ratio: float) -> int:
    # the epsilon keeps e.g. 100 * 0.05 = 5.000000000000001 style products
    # from flooring one too low when they land just under an integer
    return int(math.floor(n_bursts * exchange_ratio + 1e-9))


def exchange_bursts(
    trace: Trace,
    config: AugmentationConfig,
    rng: np.random.Generator | None = None,
    selected=None,
) -> Trace:
    """Swap ``floor(n_bursts * exchange_ratio)`` sampled bursts with their successors.

    Selected bursts are processed in ascending original index; each swap
    moves the selected burst past whatever block currently follows it, so
    adjacent selections compose. The last burst swaps with its predecessor.
    ``selected`` forces the burst indices instead of sampling them.
    Timestamps stay in place: only the packet directions are reordered.
    """
    if len(trace) == 0:
        raise ValueError("trace must be non-empty")
    bursts = extract_bursts(trace.directions)
    if selected is None:
        rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
        k = n_exchanges(len(bursts), config.exchange_ratio)
        selected = rng.choice(len(bursts), size=k, replace=False) if k else []
    selected = sorted(int(s) for s in selected)
    if len(bursts) < 2 or not selected:
        return Trace(trace.directions, trace.timestamps, trace.labels, origin="exchanged")

    order = list(range(len(bursts)))  # order[p] = original burst at position p
    where = list(range(len(bursts)))  # where[i] = current position of burst i
    for i in selected:
        p = where[i]
        q = p + 1 if p + 1 < len(order) else p - 1
        order[p], order[q] = order[q], order[p]
        where[order[p]], where[order[q]] = p, q
    d = trace.directions
    dirs = np.concatenate([d[bursts[i].start:bursts[i].end] for i in order])
    return Trace(dirs, trace.timestamps, trace.labels, origin="exchanged")


def _pair_from_linear(k: int, n: int) -> tuple[int, int]:
    # k-th pair (i < j) of range(n) in row-major order
    i = int(n - 2 - math.floor(math.sqrt(-8 * k + 4 * n * (n - 1) - 7) / 2.0 - 0.5))
    j = int(k + i + 1 - n * (n - 1) // 2 + (n - i) * ((n - i) - 1) // 2)
    return i, j


def _merge_pairs(n: int, count: int, pairing: str, rng: np.random.Generator):
    if pairing == "random":
        for _ in range(count):
            i, j = rng.choice(n, size=2, replace=False)
            yield int(i), int(j)
        return
    total = n * (n - 1) // 2
    ks = rng.choice(total, size=count, replace=count > total)
    for k in ks:
        yield _pair_from_linear(int(k), n)


def augment_dataset(
    dataset: Dataset,
    config: AugmentationConfig,
    n_merged: int,
    n_exchanged: int,
    d_i: int | None = DEFAULT_INPUT_DIM,
) -> Dataset:
    """Original traces followed by ``n_merged`` merged and ``n_exchanged`` exchanged traces.

    Deterministic for a fixed ``config.rng_seed``.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if n_merged < 0 or n_exchanged < 0:
        raise ValueError("counts must be non-negative")
    if n_merged > 0 and len(dataset) < 2:
        raise ValueError("merging needs at least two traces")
    rng = np.random.default_rng(config.rng_seed)
    traces = list(dataset.traces)
    src = dataset.traces
    for i, j in _merge_pairs(len(src), n_merged, config.merge_pairing, rng):
        traces.append(merge_traces(src[i], src[j], d_i))
    for i in rng.integers(0, len(src), size=n_exchanged):
        traces.append(exchange_bursts(src[int(i)], config, rng))
    return dataset.with_traces(traces)
