"""Multi-label ranking metrics and closed/open-world evaluation.

Per sample, with truth set ``y`` and ranked classes ``r``::

    Recall@k    = |y ∩ r[:k]| / |y|
    Precision@t = |y ∩ r[:t]| / t
    AP@k        = sum_{t=1..k} Precision@t * rel(t) / min(k, |y|)

where ``rel(t)`` is 1 when the class at rank ``t`` is a true label.

Reported values are means over samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .identify import IdentificationIndex, rank_classes, score_batch
from .traces import Dataset

RECALL_KS = (5, 10, 15, 20, 25, 30)
AP_KS = (1, 2, 3, 4, 5)
PROTOCOLS = ("closed", "open")

# Reference values from the original large-scale Tor evaluation; not
# reproducible on synthetic data.
REFERENCE_CLOSED_RECALL5 = 0.4899
REFERENCE_RAW_KNN_RECALL5 = 0.0155


def _truth(true_labels) -> set:
    y = set(true_labels)
    if not y:
        raise ValueError("true label set is empty")
    return y


def recall_at_k(true_labels, ranking: Sequence, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    y = _truth(true_labels)
    return len(y.intersection(list(ranking)[:k])) / len(y)


def precision_at_t(true_labels, ranking: Sequence, t: int) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    return len(set(true_labels).intersection(list(ranking)[:t])) / t


def ap_at_k(true_labels, ranking: Sequence, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    y = _truth(true_labels)
    ranking = list(ranking)
    # exact rational sum, rounded once
    total = Fraction(0)
    hits = 0
    for t in range(1, min(k, len(ranking)) + 1):
        if ranking[t - 1] in y:
            hits += 1
            total += Fraction(hits, t)
    return float(total / min(k, len(y)))


def batch_metrics(truth: np.ndarray, rankings: np.ndarray, recall_ks, ap_ks) -> dict[str, np.ndarray]:
    """Per-sample Recall@k and AP@k for a multi-hot truth matrix and ranked class indices.

    Vectorised equivalent of :func:`recall_at_k` / :func:`ap_at_k`.
    """
    truth = np.asarray(truth) != 0
    n_true = truth.sum(axis=1)
    if np.any(n_true == 0):
        raise ValueError("every sample needs at least one true label")
    hit = np.take_along_axis(truth, rankings, axis=1).astype(np.float64)
    cum = np.cumsum(hit, axis=1)
    prec = cum / np.arange(1, rankings.shape[1] + 1)
    out = {}
    for k in recall_ks:
        kk = min(k, rankings.shape[1])
        out[f"recall@{k}"] = cum[:, kk - 1] / n_true
    gated = np.cumsum(prec * hit, axis=1)
    for k in ap_ks:
        kk = min(k, rankings.shape[1])
        out[f"ap@{k}"] = gated[:, kk - 1] / np.minimum(k, n_true)
    return out


@dataclass
class EvalReport:
    recall: dict[int, float]
    ap: dict[int, float]
    n_samples: int
    protocol: str
    config: dict = field(default_factory=dict)
    monitored_recall: dict[int, float] | None = None

    def to_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "n_samples": self.n_samples,
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "ap": {str(k): v for k, v in sorted(self.ap.items())},
            "config": self.config,
        }
        if self.monitored_recall is not None:
            d["monitored_recall"] = {str(k): v for k, v in sorted(self.monitored_recall.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"protocol: {self.protocol}  samples: {self.n_samples}"]
        lines += [f"  Recall@{k:<3d} {v:.4f}" for k, v in sorted(self.recall.items())]
        lines += [f"  AP@{k:<7d} {v:.4f}" for k, v in sorted(self.ap.items())]
        if self.monitored_recall:
            lines += [f"  monitored Recall@{k:<3d} {v:.4f}" for k, v in sorted(self.monitored_recall.items())]
        return "\n".join(lines) + "\n"


def evaluate(
    index: IdentificationIndex,
    test: Dataset,
    k_recall: Sequence[int] = RECALL_KS,
    k_ap: Sequence[int] = AP_KS,
    protocol: str = "closed",
    embed: Callable[[Dataset], np.ndarray] | None = None,
    chunk: int = 1024,
) -> EvalReport:
    """Score every test trace against ``index`` and average the metrics.

    ``embed`` turns the dataset into vectors matching the index; without it
    the padded raw direction vectors are used. Under the open protocol the
    unmonitored sentinel counts as an ordinary label; ``monitored_recall``
    additionally reports recall with the sentinel removed from truth and
    ranking (samples with only the sentinel are skipped there).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    if tuple(test.class_catalog) != tuple(index.class_catalog):
        raise ValueError(
            f"catalog mismatch: test has {test.n_classes} classes, index has {index.n_classes}"
        )
    if protocol == "open" and test.unmonitored is None:
        raise ValueError("open-world evaluation needs an unmonitored sentinel class")
    config = {"index": index.config_echo(), "recall_k": list(k_recall), "ap_k": list(k_ap)}
    if len(test) == 0:
        return EvalReport({k: 0.0 for k in k_recall}, {k: 0.0 for k in k_ap}, 0, protocol, config)
    x = embed(test) if embed is not None else test.model_inputs(index.dim)
    truth = test.label_matrix()
    rankings = np.concatenate(
        [rank_classes(score_batch(x[i:i + chunk], index)) for i in range(0, len(x), chunk)]
    )
    m = batch_metrics(truth, rankings, k_recall, k_ap)
    report = EvalReport(
        recall={k: float(m[f"recall@{k}"].mean()) for k in k_recall},
        ap={k: float(m[f"ap@{k}"].mean()) for k in k_ap},
        n_samples=len(test),
        protocol=protocol,
        config=config,
    )
    if protocol == "open":
        s = test.n_classes - 1
        keep = truth[:, :s].any(axis=1)
        mon_rank = np.stack([r[r != s] for r in rankings[keep]]) if keep.any() else None
        if mon_rank is not None:
            mm = batch_metrics(truth[keep, :s], mon_rank, k_recall, ())
            report.monitored_recall = {k: float(mm[f"recall@{k}"].mean()) for k in k_recall}
    return report
