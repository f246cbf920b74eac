import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multitab_wpf.evaluation import (
    AP_KS,
    RECALL_KS,
    ap_at_k,
    batch_metrics,
    evaluate,
    precision_at_t,
    recall_at_k,
)
from multitab_wpf.identify import IdentificationIndex
from multitab_wpf.traces import Dataset, Trace

from oracles import ap_oracle, precision_oracle, recall_oracle


@st.composite
def truth_and_ranking(draw):
    w = draw(st.integers(1, 30))
    ranking = draw(st.permutations(list(range(w))))
    truth = draw(st.sets(st.integers(0, w - 1), min_size=1, max_size=w))
    return sorted(truth), list(ranking)


@pytest.mark.parametrize("truth, ranking, k, expected", [
    ({"A", "B"}, ["A", "C", "D", "E", "F", "B"], 5, 0.5),
    ({"A", "B"}, ["B", "A", "C"], 3, 1.0),
    ({"A"}, ["B", "C", "A"], 2, 0.0),
])
def test_recall_examples(truth, ranking, k, expected):
    assert recall_at_k(truth, ranking, k) == expected


@pytest.mark.parametrize("truth, ranking, t, expected", [
    ({"A"}, ["A", "B"], 1, 1.0),
    ({"A"}, ["B", "A"], 2, 0.5),
    ({"A", "B"}, ["A", "B", "C"], 2, 1.0),
])
def test_precision_examples(truth, ranking, t, expected):
    assert precision_at_t(truth, ranking, t) == expected


@pytest.mark.parametrize("truth, ranking, k, expected", [
    ({"A"}, ["A", "B"], 1, 1.0),
    ({"A"}, ["B", "A"], 2, 0.5),
    ({"A", "B"}, ["A", "B", "C"], 2, 1.0),
])
def test_ap_examples(truth, ranking, k, expected):
    assert ap_at_k(truth, ranking, k) == expected


def test_empty_truth_and_bad_k():
    with pytest.raises(ValueError):
        recall_at_k(set(), ["A"], 1)
    with pytest.raises(ValueError):
        ap_at_k(set(), ["A"], 1)
    with pytest.raises(ValueError):
        recall_at_k({"A"}, ["A"], 0)
    with pytest.raises(ValueError):
        precision_at_t({"A"}, ["A"], 0)


@settings(max_examples=300, deadline=None)
@given(truth_and_ranking(), st.integers(1, 35))
def test_metrics_match_oracle(tr, k):
    truth, ranking = tr
    assert recall_at_k(truth, ranking, k) == float(recall_oracle(truth, ranking, k))
    assert precision_at_t(truth, ranking, k) == float(precision_oracle(truth, ranking, k))
    assert ap_at_k(truth, ranking, k) == float(ap_oracle(truth, ranking, k))


@settings(max_examples=200, deadline=None)
@given(truth_and_ranking())
def test_metric_properties(tr):
    truth, ranking = tr
    recalls = [recall_at_k(truth, ranking, k) for k in range(1, len(ranking) + 2)]
    assert all(a <= b for a, b in zip(recalls, recalls[1:]))
    for k in range(1, 8):
        assert 0.0 <= ap_at_k(truth, ranking, k) <= 1.0
    if len(truth) == 1:
        assert ap_at_k(truth, ranking, 1) == precision_at_t(truth, ranking, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_metrics_match_scalar(seed):
    rng = np.random.default_rng(seed)
    n, w = 6, 12
    truth = (rng.random((n, w)) < 0.25).astype(np.uint8)
    truth[np.arange(n), rng.integers(0, w, size=n)] = 1
    rankings = np.stack([rng.permutation(w) for _ in range(n)])
    m = batch_metrics(truth, rankings, (1, 5, 20), (1, 3, 5))
    for i in range(n):
        y = np.flatnonzero(truth[i])
        for k in (1, 5, 20):
            assert m[f"recall@{k}"][i] == pytest.approx(recall_at_k(y, rankings[i], k), abs=1e-12)
        for k in (1, 3, 5):
            assert m[f"ap@{k}"][i] == pytest.approx(ap_at_k(y, rankings[i], k), abs=1e-12)


def _labelled(labels, width):
    traces = []
    for ys in labels:
        y = np.zeros(width, dtype=np.uint8)
        y[list(ys)] = 1
        traces.append(Trace([1, -1], [0.0, 0.1], y))
    return traces


def test_perfect_ranking_gives_all_ones():
    w = 4
    test = Dataset(tuple(_labelled([{0}, {1, 2}, {3}], w)), ("a", "b", "c", "d"))
    # one-hot embedding per class, sample embedded as the sum of its classes
    embed = lambda ds: ds.label_matrix().astype(float)
    idx = IdentificationIndex(proxies=np.eye(w), ref_embeddings=None, ref_labels=None,
                              b=w, class_catalog=test.class_catalog)
    rep = evaluate(idx, test, embed=embed)
    assert all(v == 1.0 for v in rep.recall.values())
    assert all(v == 1.0 for v in rep.ap.values())
    assert rep.n_samples == 3
    assert sorted(rep.recall) == list(RECALL_KS) and sorted(rep.ap) == list(AP_KS)


def test_random_ranking_recall_at_chance():
    w, n = 1000, 2000
    rng = np.random.default_rng(0)
    truth = np.zeros((n, w), dtype=np.uint8)
    truth[np.arange(n), rng.integers(0, w, size=n)] = 1
    rankings = np.stack([rng.permutation(w) for _ in range(n)])
    r5 = batch_metrics(truth, rankings, (5,), ())["recall@5"].mean()
    p = 5 / w
    assert abs(r5 - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_catalog_mismatch_raises():
    test = Dataset(tuple(_labelled([{0}], 2)), ("a", "b"))
    idx = IdentificationIndex(proxies=np.eye(3), ref_embeddings=None, ref_labels=None, b=1)
    with pytest.raises(ValueError, match="catalog"):
        evaluate(idx, test, embed=lambda ds: np.ones((len(ds), 3)))


def test_open_world_counts_sentinel_and_reports_monitored():
    cat = ("a", "b", "__unmonitored__")
    test = Dataset(tuple(_labelled([{0, 2}, {2}, {1}], 3)), cat, unmonitored="__unmonitored__")
    idx = IdentificationIndex(proxies=np.eye(3), ref_embeddings=None, ref_labels=None,
                              b=3, class_catalog=cat, unmonitored="__unmonitored__")
    rep = evaluate(idx, test, (1, 2), (1,), protocol="open",
                   embed=lambda ds: ds.label_matrix() + 1e-3)
    assert rep.recall[2] == 1.0
    assert rep.monitored_recall == {1: 1.0, 2: 1.0}
    closed = Dataset(test.traces, cat)
    with pytest.raises(ValueError, match="sentinel"):
        evaluate(idx, closed, protocol="open", embed=lambda ds: ds.label_matrix() + 1e-3)


def test_report_json_is_deterministic():
    test = Dataset(tuple(_labelled([{0}, {1}], 2)), ("a", "b"))
    idx = IdentificationIndex(proxies=np.eye(2), ref_embeddings=None, ref_labels=None,
                              b=2, class_catalog=test.class_catalog)
    a = evaluate(idx, test, embed=lambda ds: ds.label_matrix().astype(float))
    b = evaluate(idx, test, embed=lambda ds: ds.label_matrix().astype(float))
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["config"]["index"]["b"] == 2
    assert "Recall@5" in a.to_text()


def test_empty_test_set():
    test = Dataset((), ("a", "b"))
    idx = IdentificationIndex(proxies=np.eye(2), ref_embeddings=None, ref_labels=None,
                              b=2, class_catalog=test.class_catalog)
    assert evaluate(idx, test).n_samples == 0
