import numpy as np
import pytest
from scipy import stats

from multitab_wpf.synth import (
    SynthConfig,
    generate_multi_tab,
    generate_sessions,
    generate_single_tab,
    raw_feature_baseline,
)
from multitab_wpf.traces import Dataset, Trace


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def test_noise_free_classes_are_identical():
    ds = generate_single_tab(SynthConfig(n_classes=4, traces_per_class=5, noise_rate=0.0))
    assert len(ds) == 20
    for c in range(4):
        members = [t for t in ds if t.label_indices.tolist() == [c]]
        assert len(members) == 5
        for t in members[1:]:
            np.testing.assert_array_equal(t.directions, members[0].directions)


def test_noise_free_classes_differ():
    ds = generate_single_tab(SynthConfig(n_classes=2, traces_per_class=1, noise_rate=0.0))
    assert edit_distance(ds[0].directions.tolist(), ds[1].directions.tolist()) > 0


def test_same_seed_same_data():
    cfg = SynthConfig(n_classes=5, traces_per_class=4, seed=3)
    assert generate_sessions(cfg) == generate_sessions(cfg)
    assert generate_sessions(cfg) != generate_sessions(SynthConfig(n_classes=5, traces_per_class=4, seed=4))


def test_noise_changes_traces():
    ds = generate_single_tab(SynthConfig(n_classes=2, traces_per_class=10, noise_rate=0.5))
    seqs = {t.directions.tobytes() for t in ds}
    assert len(seqs) > 2


def test_single_tab_traces_are_valid_and_single_labelled():
    ds = generate_single_tab(SynthConfig(n_classes=6, traces_per_class=3, noise_rate=0.1))
    for t in ds:
        assert t.problems() == []
        assert t.labels.sum() == 1


def test_max_tabs_one_relabels_singles():
    cfg = SynthConfig(n_classes=5, traces_per_class=4, max_tabs=1)
    singles = generate_single_tab(cfg)
    out = generate_multi_tab(cfg, singles)
    pool = {(t.directions.tobytes(), t.labels.tobytes()) for t in singles}
    assert all((t.directions.tobytes(), t.labels.tobytes()) in pool for t in out)


def test_sessions_are_valid_merges():
    cfg = SynthConfig(n_classes=8, traces_per_class=4, max_tabs=3, noise_rate=0.1)
    sessions = generate_sessions(cfg, n_sessions=200)
    counts = sessions.label_matrix().sum(axis=1)
    assert set(counts.tolist()) == {1, 2, 3}
    for t in sessions:
        assert t.problems() == []


def test_two_tab_sessions_keep_both_pages():
    cfg = SynthConfig(n_classes=4, traces_per_class=2, max_tabs=2, gap_range=(3.0, 3.0))
    singles = generate_single_tab(cfg)
    out = generate_multi_tab(cfg, singles, n_sessions=50)
    two = [t for t in out if t.labels.sum() == 2]
    assert two
    for t in two:
        lens = [len(s) for s in singles]
        assert len(t) >= 2 * min(lens)


def test_tab_counts_uniform_chi_square():
    cfg = SynthConfig(n_classes=10, traces_per_class=2, max_tabs=5, seed=1)
    singles = generate_single_tab(cfg)
    out = generate_multi_tab(cfg, singles, n_sessions=10_000)
    counts = np.bincount(out.label_matrix().sum(axis=1), minlength=6)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_classes=1)
    with pytest.raises(ValueError):
        SynthConfig(noise_rate=1.5)
    with pytest.raises(ValueError):
        SynthConfig(max_tabs=6)
    with pytest.raises(ValueError):
        SynthConfig(gap_range=(5.0, 3.0))


def test_raw_baseline_self_retrieval():
    cfg = SynthConfig(n_classes=6, traces_per_class=3, max_tabs=2, noise_rate=0.2)
    ds = generate_sessions(cfg, n_sessions=40)
    seen, uniq = set(), []
    for t in ds:
        key = t.directions.tobytes()
        if key not in seen:
            seen.add(key)
            uniq.append(t)
    ds = ds.with_traces(uniq)
    rep = raw_feature_baseline(ds, ds, b=1, d_i=2000, k_recall=(1, 2), k_ap=(1,))
    single = Dataset(tuple(t for t in ds if t.labels.sum() == 1), ds.class_catalog)
    if len(single):
        assert raw_feature_baseline(ds, single, b=1, d_i=2000, k_recall=(1,), k_ap=()).recall[1] == 1.0
    assert rep.recall[2] == 1.0


def test_raw_baseline_random_labels_near_chance():
    rng = np.random.default_rng(0)
    w = 20
    def rand_ds(n):
        traces = []
        for _ in range(n):
            y = np.zeros(w, dtype=np.uint8)
            y[rng.integers(w)] = 1
            d = rng.choice([-1, 1], size=64)
            traces.append(Trace(d, np.arange(64, dtype=float), y))
        return Dataset(tuple(traces), tuple(f"p{j}" for j in range(w)))
    rep = raw_feature_baseline(rand_ds(400), rand_ds(400), b=10, d_i=64, k_recall=(5,), k_ap=())
    p = 5 / w
    assert abs(rep.recall[5] - p) < 4 * np.sqrt(p * (1 - p) / 400)


def test_raw_baseline_catalog_mismatch():
    a = generate_sessions(SynthConfig(n_classes=3, traces_per_class=2), 5)
    b = generate_sessions(SynthConfig(n_classes=4, traces_per_class=2), 5)
    with pytest.raises(ValueError, match="catalog"):
        raw_feature_baseline(a, b)


def test_preamble_is_class_independent_prefix():
    base = SynthConfig(n_classes=3, traces_per_class=30, noise_rate=0.0, seed=7)
    plain = generate_single_tab(base)
    padded = generate_single_tab(SynthConfig(n_classes=3, traces_per_class=30, noise_rate=0.0, seed=7,
                                             preamble_max=40))
    lengths = set()
    for c in range(3):
        sig = plain[c * 30].directions
        for t in padded.traces[c * 30:(c + 1) * 30]:
            k = len(t) - len(sig)
            assert 0 <= k <= 40
            np.testing.assert_array_equal(t.directions[k:], sig)
            assert t.problems() == []
            lengths.add(k)
    assert len(lengths) > 10


def test_preamble_validation():
    with pytest.raises(ValueError):
        SynthConfig(preamble_max=-1)
