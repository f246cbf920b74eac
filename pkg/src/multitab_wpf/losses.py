"""Multi-label metric-learning losses.

The objective pulls each sample towards the proxies of its own webpages,
pushes it away from all other proxies, and additionally pushes apart
multi-label samples whose label sets are disjoint::

    L = L_proxy + beta * L_sample

All losses take a batch of embeddings ``(B, d_o)``, a multi-hot label
matrix ``(B, C)`` and, for the proxy term, a proxy matrix ``(C, d_o)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

NORM_EPS = 1e-8
DEFAULT_MARGIN = 0.1
DEFAULT_BETA = 4.5
LOSS_MODES = ("combined", "proxy", "sample")


class NoPairsError(ValueError):
    """A batch lacks the positive or negative proxy pairs the loss needs."""


@dataclass(frozen=True)
class LossConfig:
    margin: float = DEFAULT_MARGIN
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


class ProxySet(nn.Module):
    """One learnable ``d_o``-dimensional proxy per class.

    Proxies start as random unit vectors drawn from ``seed``.
    """

    def __init__(self, n_classes: int, embed_dim: int, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        p = torch.randn(n_classes, embed_dim, generator=g)
        self.proxies = nn.Parameter(p / p.norm(dim=1, keepdim=True))

    def forward(self) -> torch.Tensor:
        return self.proxies

    @property
    def n_classes(self) -> int:
        return self.proxies.shape[0]


def cosine_similarity(u, v) -> float:
    """Exact cosine similarity of two vectors; zero vectors are rejected."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(a: torch.Tensor, b: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Pairwise cosine similarities ``(len(a), len(b))`` with epsilon-guarded norms."""
    na = a.norm(dim=1, keepdim=True) + eps
    nb = b.norm(dim=1, keepdim=True) + eps
    return (a / na) @ (b / nb).T


def proxy_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    proxies: torch.Tensor,
    config: LossConfig = LossConfig(),
) -> torch.Tensor:
    """Mean positive-pair loss plus mean negative-pair loss.

    A sample/proxy pair is positive when the sample carries the proxy's
    label. Positive pairs cost ``1 - cos``; negative pairs cost
    ``max(cos - margin, 0)``. Each sum is divided by its own pair count.
    """
    pos = torch.as_tensor(labels).to(torch.bool)
    neg = ~pos
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise NoPairsError(f"batch has {n_pos} positive and {n_neg} negative proxy pairs")
    sim = cosine_matrix(embeddings, proxies)
    pos_loss = (1.0 - sim)[pos].sum() / n_pos
    neg_loss = torch.clamp(sim[neg] - config.margin, min=0.0).sum() / n_neg
    return pos_loss + neg_loss


def mine_irrelevant_pairs(labels) -> np.ndarray:
    """All pairs ``(i, j)``, ``i < j``, of multi-label samples with disjoint labels.

    Returns an int array of shape ``(n_pairs, 2)`` in row-major order.
    """
    y = np.asarray(labels.cpu() if isinstance(labels, torch.Tensor) else labels)
    y = (y != 0).astype(np.int64)
    if y.ndim != 2 or len(y) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    multi = y.sum(axis=1) > 1
    ok = (y @ y.T == 0) & multi[:, None] & multi[None, :]
    i, j = np.nonzero(np.triu(ok, k=1))
    return np.stack([i, j], axis=1).astype(np.int64)


def sample_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    config: LossConfig = LossConfig(),
) -> torch.Tensor:
    """Mean of ``max(cos - margin, 0)`` over mined irrelevant pairs (0 if none)."""
    pairs = mine_irrelevant_pairs(labels)
    if len(pairs) == 0:
        return embeddings.sum() * 0.0
    pairs = torch.from_numpy(pairs)
    e = embeddings / (embeddings.norm(dim=1, keepdim=True) + NORM_EPS)
    sim = (e[pairs[:, 0]] * e[pairs[:, 1]]).sum(dim=1)
    return torch.clamp(sim - config.margin, min=0.0).mean()


def combined_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    proxies: torch.Tensor,
    config: LossConfig = LossConfig(),
) -> torch.Tensor:
    return loss_terms(embeddings, labels, proxies, config)[0]


def loss_terms(embeddings, labels, proxies, config: LossConfig = LossConfig(), mode: str = "combined"):
    """``(total, proxy_term, sample_term)`` for a training ``mode``.

    ``mode`` is ``combined``, ``proxy`` (proxy term only) or ``sample``
    (sample term only, proxies unused).
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    if mode == "sample":
        ls = sample_loss(embeddings, labels, config)
        return ls, None, ls
    lp = proxy_loss(embeddings, labels, proxies, config)
    if mode == "proxy":
        return lp, lp, None
    ls = sample_loss(embeddings, labels, config)
    total = lp if config.beta == 0 else lp + config.beta * ls
    return total, lp, ls
