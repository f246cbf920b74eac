"""Dual k-NN webpage identification in the embedding space.

For a target embedding the ``b`` nearest proxies each give their class
``1 / cos_dis``; the ``b`` nearest reference samples each add
``1 / cos_dis`` to every class they are labelled with. The two score
vectors are combined as ``proxy + theta * sample``. Classes are ranked by
combined score, and the predicted label set is every class whose score,
divided by the maximum score, reaches ``tau``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import cosine_similarity

DEFAULT_NEIGHBORS = 40
DEFAULT_THETA = 2.0
DEFAULT_TAU = 0.3
DISTANCE_FLOOR = 1e-8
INDEX_FORMAT = "multitab-wpf-index"


def cosine_distance(u, v) -> float:
    """``1 - cos_sim(u, v)``, in ``[0, 2]``."""
    return 1.0 - cosine_similarity(u, v)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero vector in index")
    return x / n


def cosine_distances(targets: np.ndarray, refs_unit: np.ndarray) -> np.ndarray:
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cosine distance is undefined for a zero vector")
    return np.clip(1.0 - (t / n) @ refs_unit.T, 0.0, 2.0)


def nearest(dist: np.ndarray, b: int) -> np.ndarray:
    """Indices of the ``b`` smallest entries per row, nearest first, ties by index."""
    b = min(b, dist.shape[-1])
    return np.argsort(dist, axis=-1, kind="stable")[..., :b]


@dataclass(frozen=True, eq=False)
class IdentificationIndex:
    """Immutable retrieval index over proxies and transformed reference samples.

    Either side may be absent (``None``): a missing side contributes zero
    scores. The raw-feature baseline uses references only.
    """

    proxies: np.ndarray | None
    ref_embeddings: np.ndarray | None
    ref_labels: np.ndarray | None
    b: int = DEFAULT_NEIGHBORS
    theta: float = DEFAULT_THETA
    tau: float = DEFAULT_TAU
    class_catalog: tuple[str, ...] = ()
    unmonitored: str | None = None
    eps: float = DISTANCE_FLOOR
    _proxy_unit: np.ndarray | None = field(init=False, repr=False, default=None)
    _ref_unit: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.proxies is None and self.ref_embeddings is None:
            raise ValueError("index needs proxies or reference embeddings")
        n_classes = None
        if self.proxies is not None:
            p = np.array(self.proxies, dtype=np.float64)
            object.__setattr__(self, "proxies", p)
            object.__setattr__(self, "_proxy_unit", _unit_rows(p))
            n_classes = len(p)
        if self.ref_embeddings is not None:
            r = np.array(self.ref_embeddings, dtype=np.float64)
            y = np.array(self.ref_labels, dtype=np.uint8)
            if y.ndim != 2 or len(y) != len(r):
                raise ValueError("ref_labels must be (n_refs, n_classes)")
            if n_classes is not None and y.shape[1] != n_classes:
                raise ValueError("ref_labels width differs from the proxy count")
            if self.proxies is not None and r.shape[1] != self.proxies.shape[1]:
                raise ValueError("reference and proxy dimensions differ")
            object.__setattr__(self, "ref_embeddings", r)
            object.__setattr__(self, "ref_labels", y)
            object.__setattr__(self, "_ref_unit", _unit_rows(r))
            n_classes = y.shape[1]
        if not self.class_catalog:
            object.__setattr__(self, "class_catalog", tuple(str(j) for j in range(n_classes)))
        object.__setattr__(self, "class_catalog", tuple(self.class_catalog))
        if len(self.class_catalog) != n_classes:
            raise ValueError("class_catalog length differs from the class count")

    @property
    def n_classes(self) -> int:
        return len(self.class_catalog)

    @property
    def dim(self) -> int:
        src = self.proxies if self.proxies is not None else self.ref_embeddings
        return src.shape[1]

    def replace(self, **changes) -> "IdentificationIndex":
        kw = dict(
            proxies=self.proxies, ref_embeddings=self.ref_embeddings, ref_labels=self.ref_labels,
            b=self.b, theta=self.theta, tau=self.tau, class_catalog=self.class_catalog,
            unmonitored=self.unmonitored, eps=self.eps,
        )
        kw.update(changes)
        return IdentificationIndex(**kw)

    # -- snapshot -----------------------------------------------------------

    def config_echo(self) -> dict:
        return {
            "b": self.b, "theta": self.theta, "tau": self.tau, "eps": self.eps,
            "class_catalog": list(self.class_catalog), "unmonitored": self.unmonitored,
        }

    def save(self, path) -> None:
        arrays = {}
        if self.proxies is not None:
            arrays["proxies"] = self.proxies
        if self.ref_embeddings is not None:
            arrays["ref_embeddings"] = self.ref_embeddings
            arrays["ref_labels"] = self.ref_labels
        meta = {"format": INDEX_FORMAT, "version": 1, **self.config_echo()}
        with open(path, "wb") as f:
            np.savez(f, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "IdentificationIndex":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != INDEX_FORMAT:
                raise ValueError(f"{path}: not an index snapshot")
            return cls(
                proxies=z["proxies"] if "proxies" in z else None,
                ref_embeddings=z["ref_embeddings"] if "ref_embeddings" in z else None,
                ref_labels=z["ref_labels"] if "ref_labels" in z else None,
                b=meta["b"], theta=meta["theta"], tau=meta["tau"], eps=meta["eps"],
                class_catalog=tuple(meta["class_catalog"]), unmonitored=meta["unmonitored"],
            )


# -- scoring ----------------------------------------------------------------


def _check_targets(targets, index: IdentificationIndex) -> np.ndarray:
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if t.shape[1] != index.dim:
        raise ValueError(f"target dimension {t.shape[1]} != index dimension {index.dim}")
    return t


def proxy_scores_batch(targets, index: IdentificationIndex) -> np.ndarray:
    t = _check_targets(targets, index)
    out = np.zeros((len(t), index.n_classes))
    if index.proxies is None:
        return out
    dist = cosine_distances(t, index._proxy_unit)
    nn = nearest(dist, index.b)
    rows = np.arange(len(t))[:, None]
    out[rows, nn] = 1.0 / np.maximum(dist[rows, nn], index.eps)
    return out


def sample_scores_batch(targets, index: IdentificationIndex) -> np.ndarray:
    t = _check_targets(targets, index)
    out = np.zeros((len(t), index.n_classes))
    if index.ref_embeddings is None:
        return out
    dist = cosine_distances(t, index._ref_unit)
    nn = nearest(dist, index.b)
    rows = np.arange(len(t))[:, None]
    w = 1.0 / np.maximum(dist[rows, nn], index.eps)
    # (n, b) weights times (n, b, C) labels
    return np.einsum("nb,nbc->nc", w, index.ref_labels[nn].astype(np.float64))


def proxy_scores(target, index: IdentificationIndex) -> np.ndarray:
    """Per-class proxy k-NN scores for one target embedding."""
    return proxy_scores_batch(target, index)[0]


def sample_scores(target, index: IdentificationIndex) -> np.ndarray:
    """Per-class sample k-NN scores for one target embedding."""
    return sample_scores_batch(target, index)[0]


def rank_classes(scores: np.ndarray) -> np.ndarray:
    """Class indices by descending score, ties by ascending class index."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def decide(scores: np.ndarray, tau: float) -> np.ndarray:
    """Classes whose max-normalised score is at least ``tau``."""
    top = scores.max()
    if top <= 0:
        warnings.warn("all class scores are zero; predicting no labels", stacklevel=3)
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(scores / top >= tau)


def score_batch(targets, index: IdentificationIndex) -> np.ndarray:
    """Combined scores ``proxy + theta * sample`` for a batch of targets."""
    return proxy_scores_batch(targets, index) + index.theta * sample_scores_batch(targets, index)


def combine_and_decide(target, index: IdentificationIndex):
    """Returns ``(scores, predicted class indices, ranking)`` for one target."""
    scores = score_batch(target, index)[0]
    return scores, decide(scores, index.tau), rank_classes(scores)
