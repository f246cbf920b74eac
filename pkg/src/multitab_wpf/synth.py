"""Synthetic webpage traffic for desk-scale experiments.

Each class gets a random template of alternating bursts. A single-tab trace
replays its class template with per-burst noise (resize or direction flip)
and random timing: packets inside a burst are close together, bursts are
separated by longer gaps. An optional class-independent preamble of
0..``preamble_max`` random packets (connection setup chatter) shifts the
page signature by a variable amount. Multi-tab sessions open 1..max_tabs distinct
pages at cumulative offsets drawn from ``gap_range`` and interleave their
packets by time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .augment import merge_traces
from .evaluation import AP_KS, RECALL_KS, EvalReport, evaluate
from .identify import DEFAULT_NEIGHBORS, IdentificationIndex
from .traces import DEFAULT_INPUT_DIM, Dataset, Trace


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 20
    traces_per_class: int = 20
    signature_length: int = 24
    noise_rate: float = 0.05
    burst_scale: int = 6
    seed: int = 0
    max_tabs: int = 3
    gap_range: tuple[float, float] = (3.0, 10.0)
    burst_gap: float = 0.3
    packet_gap: float = 0.002
    preamble_max: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gap_range", tuple(self.gap_range))
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        if not 1 <= self.max_tabs <= 5:
            raise ValueError("max_tabs must lie in 1..5")
        lo, hi = self.gap_range
        if not 0 <= lo <= hi:
            raise ValueError("gap_range must satisfy 0 <= low <= high")
        if self.signature_length < 1 or self.burst_scale < 1:
            raise ValueError("signature_length and burst_scale must be positive")
        if self.preamble_max < 0:
            raise ValueError("preamble_max must be >= 0")


def class_catalog(n_classes: int) -> tuple[str, ...]:
    return tuple(f"page{j:03d}" for j in range(n_classes))


def _templates(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for _ in range(cfg.n_classes):
        dirs = np.where(np.arange(cfg.signature_length) % 2 == 0, 1, -1)
        # incoming bursts carry page resources and run longer
        scale = np.where(dirs > 0, cfg.burst_scale / 2, cfg.burst_scale * 2)
        sizes = 1 + rng.poisson(scale)
        out.append((dirs, sizes))
    return out


def _render(dirs, sizes, cfg: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    dirs, sizes = dirs.copy(), sizes.copy()
    noisy = rng.random(len(dirs)) < cfg.noise_rate
    flip = rng.random(len(dirs)) < 0.5
    dirs[noisy & flip] *= -1
    resize = noisy & ~flip
    sizes[resize] = 1 + rng.poisson(cfg.burst_scale, size=int(resize.sum()))
    d = np.repeat(dirs, sizes)
    gaps = rng.exponential(cfg.packet_gap, size=len(d))
    starts = np.cumsum(sizes)[:-1]
    gaps[starts] += rng.exponential(cfg.burst_gap, size=len(starts))
    gaps[0] = 0.0
    t = np.cumsum(gaps)
    k = int(rng.integers(0, cfg.preamble_max + 1)) if cfg.preamble_max else 0
    if k == 0:
        return d, t
    pre_t = np.cumsum(rng.exponential(cfg.packet_gap * 5, size=k))
    pre_t -= pre_t[0]
    return np.concatenate([rng.choice([-1, 1], size=k), d]), np.concatenate([pre_t, t + pre_t[-1] + cfg.packet_gap * 5])


def generate_single_tab(config: SynthConfig) -> Dataset:
    """``traces_per_class`` single-label traces per class, class-major order."""
    rng = np.random.default_rng([config.seed, 0])
    templates = _templates(config, rng)
    traces = []
    for c, (dirs, sizes) in enumerate(templates):
        y = np.zeros(config.n_classes, dtype=np.uint8)
        y[c] = 1
        for _ in range(config.traces_per_class):
            d, t = _render(dirs, sizes, config, rng)
            traces.append(Trace(d, t, y))
    return Dataset(tuple(traces), class_catalog(config.n_classes))


def generate_multi_tab(config: SynthConfig, singles: Dataset, n_sessions: int | None = None) -> Dataset:
    """Compose multi-tab sessions from single-tab traces.

    Tab counts are uniform on ``1..max_tabs`` (capped by the class count);
    each tab is a different class. Default session count is ``len(singles)``.
    """
    if len(singles) == 0:
        raise ValueError("singles must be non-empty")
    rng = np.random.default_rng([config.seed, 1])
    by_class: dict[int, list[int]] = {}
    for i, tr in enumerate(singles.traces):
        for c in tr.label_indices:
            by_class.setdefault(int(c), []).append(i)
    classes = np.array(sorted(by_class))
    max_tabs = min(config.max_tabs, len(classes))
    lo, hi = config.gap_range
    n_sessions = len(singles) if n_sessions is None else n_sessions
    out = []
    for _ in range(n_sessions):
        n_tabs = int(rng.integers(1, max_tabs + 1))
        picked = rng.choice(classes, size=n_tabs, replace=False)
        pages = [singles.traces[int(rng.choice(by_class[int(c)]))] for c in picked]
        offsets = np.concatenate(([0.0], np.cumsum(rng.uniform(lo, hi, size=n_tabs - 1))))
        if n_tabs == 1:
            out.append(pages[0])
            continue
        merged = reduce(
            lambda acc, po: merge_traces(acc, po[0], d_i=None, offset=po[1]),
            zip(pages[1:], offsets[1:]),
            pages[0],
        )
        out.append(Trace(merged.directions, merged.timestamps, merged.labels))
    return singles.with_traces(out)


def generate_sessions(config: SynthConfig, n_sessions: int | None = None) -> Dataset:
    return generate_multi_tab(config, generate_single_tab(config), n_sessions)


def raw_feature_index(train: Dataset, b: int = DEFAULT_NEIGHBORS, d_i: int = DEFAULT_INPUT_DIM) -> IdentificationIndex:
    return IdentificationIndex(
        proxies=None,
        ref_embeddings=train.model_inputs(d_i),
        ref_labels=train.label_matrix(),
        b=b,
        theta=1.0,
        class_catalog=train.class_catalog,
        unmonitored=train.unmonitored,
    )


def raw_feature_baseline(
    train: Dataset,
    test: Dataset,
    b: int = DEFAULT_NEIGHBORS,
    d_i: int = DEFAULT_INPUT_DIM,
    k_recall=RECALL_KS,
    k_ap=AP_KS,
    protocol: str = "closed",
) -> EvalReport:
    """Sample k-NN over padded raw direction vectors, no feature transformation."""
    if tuple(train.class_catalog) != tuple(test.class_catalog):
        raise ValueError("train and test catalogs differ")
    index = raw_feature_index(train, b, d_i)
    return evaluate(index, test, k_recall, k_ap, protocol)
