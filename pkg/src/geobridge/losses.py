"""Cross-entropy, supervised contrastive loss over C+R categories, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import log_softmax_rows, softmax_rows

NORM_FLOOR = 1e-12


class ZeroNormEmbeddingError(ValueError):
    def __init__(self, index: int):
        super().__init__(f"embedding {index} has zero norm; cosine similarity undefined")
        self.index = index


class NonFiniteLossError(FloatingPointError):
    pass


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient wrt ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"expected {B} labels, got shape {labels.shape}")
    if B and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K - 1}]")
    logp = log_softmax_rows(logits)
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()
    grad = softmax_rows(logits)
    grad[rows, labels] -= 1.0
    return float(loss), grad / B


def assign_contrastive_categories(lc_labels, region_labels, n_classes: int, n_regions: int):
    """Categories for the stacked embeddings ``[z_inv_1..z_inv_B, z_spec_1..z_spec_B]``.

    Invariant embeddings take their land-cover class, specific ones take
    ``n_classes + region``, so the two kinds never share a category.
    """
    y = np.asarray(lc_labels, dtype=np.int64)
    r = np.asarray(region_labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"land-cover labels must lie in [0, {n_classes - 1}]")
    if r.size and (r.min() < 0 or r.max() >= n_regions):
        raise ValueError(f"region labels must lie in [0, {n_regions - 1}]")
    return np.concatenate([y, n_classes + r])


def supcon_loss(z: np.ndarray, categories: np.ndarray, temperature: float = 0.07,
                reduction: str = "sum", zero_norm: str = "error"):
    """Supervised contrastive loss over the rows of ``z`` with cosine similarity.

    Each row is an anchor; its positives are the other rows sharing its
    category.  Anchors without positives contribute nothing.  With
    ``reduction="sum"`` the anchor terms are summed; ``"mean"`` divides by the
    number of rows.  Returns ``(loss, grad_z)``.

    An all-zero row raises ``ZeroNormEmbeddingError`` unless
    ``zero_norm="floor"``, in which case it is treated as similarity 0 to
    everything and receives a zero gradient (ReLU + dropout outputs can be
    exactly zero during training).
    """
    z = np.asarray(z, dtype=np.float64)
    cat = np.asarray(categories)
    n = z.shape[0]
    if n < 2:
        raise ValueError("need at least two embeddings")
    if cat.shape != (n,):
        raise ValueError(f"expected {n} categories, got shape {cat.shape}")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    norms = np.sqrt((z * z).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size and zero_norm != "floor":
        raise ZeroNormEmbeddingError(int(zero[0]))
    norms = np.maximum(norms, NORM_FLOOR)
    u = z / norms[:, None]
    s = (u @ u.T) / temperature

    pos = (cat[:, None] == cat[None, :]).astype(np.float64)
    np.fill_diagonal(pos, 0.0)
    n_pos = pos.sum(axis=1)
    active = n_pos > 0
    safe_npos = np.where(active, n_pos, 1.0)

    # log-sum-exp over a != i
    s_off = s.copy()
    np.fill_diagonal(s_off, -np.inf)
    row_max = s_off.max(axis=1, keepdims=True)
    e = np.exp(s_off - row_max, out=s_off)
    denom = e.sum(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(denom[:, 0])

    # mean over positives of -log(exp(s_ip) / sum_a exp(s_ia)) = lse_i - mean_p s_ip
    per_anchor = lse - (pos * s).sum(axis=1) / safe_npos
    loss = np.where(active, per_anchor, 0.0).sum()

    # dL/ds_ij = softmax_i(j) - [j in P(i)]/|P(i)| for active anchors
    G = e / denom
    G -= pos / safe_npos[:, None]
    G[~active] = 0.0
    scale = 1.0
    if reduction == "mean":
        scale = 1.0 / n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    G *= scale
    grad_u = (G + G.T) @ u / temperature
    grad_z = (grad_u - u * (grad_u * u).sum(axis=1, keepdims=True)) / norms[:, None]
    grad_z[zero] = 0.0
    return float(loss * scale), grad_z


@dataclass
class LossWeights:
    lc: float = 1.0
    region: float = 1.0
    con: float = 1.0


@dataclass
class LossReport:
    l_lc: float
    l_region: float
    l_con: float
    total: float
    weights: LossWeights


def total_loss(lc_logits, region_logits, z_inv, z_spec, labels, regions, n_classes: int,
               n_regions: int, weights: LossWeights = LossWeights(), temperature: float = 0.07,
               use_region: bool = True, con_reduction: str = "sum", zero_norm: str = "floor"):
    """Weighted sum of the three losses and gradients wrt every model output.

    With ``use_region=False`` the region term is dropped and the contrastive
    batch holds only the invariant embeddings (categorised by class).
    ``region_logits`` and ``z_spec`` may then be None.

    Returns ``(LossReport, grads)`` where ``grads`` has keys
    ``lc_logits, region_logits, z_inv, z_spec`` (absent outputs map to None).
    """
    l_lc, g_lc = cross_entropy(lc_logits, labels)
    B = len(labels)
    if use_region:
        l_reg, g_reg = cross_entropy(region_logits, regions)
        cats = assign_contrastive_categories(labels, regions, n_classes, n_regions)
        z = np.concatenate([z_inv, z_spec], axis=0)
    else:
        l_reg, g_reg = 0.0, None
        cats = np.asarray(labels, dtype=np.int64)
        z = z_inv
    l_con, g_z = supcon_loss(z, cats, temperature, con_reduction, zero_norm)
    w = weights
    w_reg = w.region if use_region else 0.0
    total = w.lc * l_lc + w_reg * l_reg + w.con * l_con
    for name, val in (("l_lc", l_lc), ("l_region", l_reg), ("l_con", l_con)):
        if not np.isfinite(val):
            raise NonFiniteLossError(f"{name} is not finite ({val})")
    grads = {
        "lc_logits": w.lc * g_lc,
        "region_logits": None if g_reg is None else w_reg * g_reg,
        "z_inv": w.con * g_z[:B],
        "z_spec": w.con * g_z[B:] if use_region else None,
    }
    report = LossReport(l_lc, l_reg, l_con, float(total), LossWeights(w.lc, w_reg, w.con))
    return report, grads
