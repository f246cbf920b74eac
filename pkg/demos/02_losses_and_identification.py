"""Metric losses and the dual k-NN identifier on small hand-made embeddings.

Run: python demos/02_losses_and_identification.py
"""

import numpy as np
import torch

from multitab_wpf import (
    IdentificationIndex,
    LossConfig,
    ap_at_k,
    combine_and_decide,
    combined_loss,
    mine_irrelevant_pairs,
    proxy_loss,
    recall_at_k,
    sample_loss,
)

# Four samples over four classes; the last two are two-tab sessions with
# disjoint pages that nevertheless sit close together in embedding space.
labels = torch.tensor([[1, 0, 0, 0], [0, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1]])
emb = torch.tensor([[1.0, 0.1], [0.1, 1.0], [0.7, 0.7], [0.2, 1.0]], dtype=torch.float64, requires_grad=True)
proxies = torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], dtype=torch.float64,
                       requires_grad=True)

# Only multi-label samples with disjoint label sets form irrelevant pairs.
sessions = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 0]])
print("irrelevant pairs:", mine_irrelevant_pairs(sessions).tolist())

lp = proxy_loss(emb, labels, proxies)
ls = sample_loss(emb, labels)
total = combined_loss(emb, labels, proxies, LossConfig(beta=4.5))
print(f"proxy loss {lp.item():.4f}  sample loss {ls.item():.4f}  combined {total.item():.4f}")
total.backward()
print("gradient norms: embeddings", round(emb.grad.norm().item(), 4), "proxies", round(proxies.grad.norm().item(), 4))

# Identification: proxies vote by 1/cosine distance, references vote for their labels.
index = IdentificationIndex(
    proxies=proxies.detach().numpy(),
    ref_embeddings=emb.detach().numpy(),
    ref_labels=labels.numpy(),
    b=2, theta=2.0, tau=0.3,
    class_catalog=("news", "mail", "video", "maps"),
)
target = np.array([0.8, 0.6])
scores, predicted, ranking = combine_and_decide(target, index)
names = [index.class_catalog[j] for j in ranking]
print("\nscores:", {c: round(float(v), 2) for c, v in zip(index.class_catalog, scores)})
print("ranking:", names, " predicted:", [index.class_catalog[j] for j in predicted])

# Metrics over the ranking for a session that really visited news and mail.
truth = {"news", "mail"}
print("Recall@1", recall_at_k(truth, names, 1), " Recall@2", recall_at_k(truth, names, 2))
print("AP@2", ap_at_k(truth, names, 2), " AP@2 with {A} ranked second:", ap_at_k({"A"}, ["B", "A"], 2))
