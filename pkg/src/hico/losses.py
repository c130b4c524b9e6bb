"""The hierarchical-consistency objective and its analytic gradients.

Two terms are combined:

* a temperature-scaled contrastive loss over the visually consistent pair
  of each video, with a negative pool that optionally extends to every
  clip in the batch except the anchor and its own topical clip, and
* a class-balanced focal loss on a pairwise same-video predictor fed with
  concatenated topical embeddings.

All gradients (visual embeddings, topical embeddings, predictor
parameters) are derived by hand and checked against the finite-difference
oracle in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelBundle, mlp_backward, mlp_forward
from .numerics import NORM_EPS, as_f64

# Predicted probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before
# entering the focal loss.
PROB_EPS = 1e-7

CONCAT_MODES = ("bidirectional", "unidirectional")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    focal_gamma: float = 0.5
    include_vk_negatives: bool = True
    concat_mode: str = "bidirectional"
    enable_vcl: bool = True
    enable_tcl: bool = True
    tp_include_topical: bool = True   # topical clips join the pairwise set
    exclude_self_pairs: bool = False  # ablation: drop (a, a) pairs

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        if self.focal_gamma < 0:
            raise ValueError("focal exponent must be nonnegative")
        if self.concat_mode not in CONCAT_MODES:
            raise ValueError(f"concat mode must be one of {CONCAT_MODES}")


@dataclass
class LabelMatrix:
    """Same-video labels for the active pairwise feature set."""

    matrix: np.ndarray   # (n, n) 0/1, symmetric, unit diagonal
    pairs: np.ndarray    # (P, 2) row indices of the active pair list
    labels: np.ndarray   # (P,) label per pair
    gamma1: int          # positive count in the active list
    gamma2: int          # negative count in the active list


@dataclass
class LossBundle:
    l_cl: float
    l_tp: float
    total: float
    d_z: np.ndarray
    d_t: np.ndarray
    d_phi: list[tuple[np.ndarray, np.ndarray]] | None


def _unit_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < NORM_EPS):
        raise ValueError("degenerate vector in cosine similarity")
    return z / norms[:, None], norms


def nt_xent_pair(i: int, j: int, z, pool, tau: float) -> float:
    """Contrastive loss of an ordered pair against an explicit pool.

    ``pool`` indexes the denominator terms; it must contain the positive
    ``j`` and must not contain the anchor ``i``.
    """
    z = as_f64(z)
    pool = list(pool)
    if i == j:
        raise ValueError("anchor and positive must be distinct")
    if i in pool:
        raise ValueError("pool must exclude the anchor")
    if j not in pool:
        raise ValueError("positive index missing from the pool")
    if len(pool) < 2:
        raise ValueError("pool must contain at least two entries")
    zhat, _ = _unit_rows(z)
    sims = zhat @ zhat[i]
    logits = sims[pool] / tau
    m = np.max(logits)
    lse = m + math.log(float(np.sum(np.exp(logits - m))))
    return float(lse - sims[j] / tau)


def _pair_slots(n_videos: int) -> list[tuple[int, int, int]]:
    # (anchor, positive, same-video topical) row triples per video.
    out = []
    for n in range(n_videos):
        i, j, k = 3 * n, 3 * n + 1, 3 * n + 2
        out.append((i, j, k))
        out.append((j, i, k))
    return out


def _pool_mask(rows: int, anchor: int, topical: int, include_vk: bool) -> np.ndarray:
    mask = np.ones(rows, dtype=bool)
    mask[anchor] = False
    if include_vk:
        mask[topical] = False      # drop only the anchor's own topical clip
    else:
        mask[2::3] = False         # classic two-view pool: no topical clips
    return mask


def vcl_loss(batch, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Symmetrized contrastive loss averaged over videos, with its gradient
    w.r.t. every visual embedding row."""
    n_videos = batch.n_videos
    if n_videos < 2:
        raise ValueError("contrastive loss needs >=2 videos")
    rows = 3 * n_videos
    zhat, norms = _unit_rows(batch.z)
    sims = zhat @ zhat.T
    weight = 1.0 / (2 * n_videos)
    total = 0.0
    dS = np.zeros_like(sims)
    for anchor, positive, topical in _pair_slots(n_videos):
        mask = _pool_mask(rows, anchor, topical, cfg.include_vk_negatives)
        logits = sims[anchor, mask] / cfg.tau
        m = float(np.max(logits))
        expd = np.exp(logits - m)
        lse = m + math.log(float(np.sum(expd)))
        total += weight * (lse - sims[anchor, positive] / cfg.tau)
        p = expd / float(np.sum(expd))
        dS[anchor, mask] += weight * p / cfg.tau
        dS[anchor, positive] -= weight / cfg.tau
    d_zhat = (dS + dS.T) @ zhat
    # back through row normalization: project out the radial component
    radial = np.sum(d_zhat * zhat, axis=1, keepdims=True)
    d_z = (d_zhat - radial * zhat) / norms[:, None]
    return float(total), d_z


def build_pair_set(t, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs (bidirectional) or one orientation per unordered
    pair (unidirectional), each with the concatenated feature t_a (+) t_b.

    Self-pairs appear in both modes.
    """
    t = as_f64(t)
    n = t.shape[0]
    if mode not in CONCAT_MODES:
        raise ValueError(f"concat mode must be one of {CONCAT_MODES}")
    if mode == "bidirectional":
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        pairs = np.stack([a.reshape(-1), b.reshape(-1)], axis=1)
    else:
        idx = np.triu_indices(n)
        pairs = np.stack([idx[0], idx[1]], axis=1)
    feats = np.concatenate([t[pairs[:, 0]], t[pairs[:, 1]]], axis=1)
    return pairs, feats


def topic_labels(
    video_ids, mode: str, exclude_self_pairs: bool = False
) -> LabelMatrix:
    """Same-video labels and class counts for the active pair list."""
    video_ids = np.asarray(video_ids)
    same = (video_ids[:, None] == video_ids[None, :]).astype(np.int64)
    pairs, _ = build_pair_set(np.zeros((video_ids.size, 1)), mode)
    if exclude_self_pairs:
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    labels = same[pairs[:, 0], pairs[:, 1]]
    gamma1 = int(np.sum(labels == 1))
    gamma2 = int(np.sum(labels == 0))
    return LabelMatrix(same, pairs, labels, gamma1, gamma2)


def focal(p: float, gamma: float) -> float:
    """Down-weighted cross-entropy of a correct-class probability."""
    if not 0.0 < p <= 1.0:
        raise ValueError("focal loss needs a probability in (0, 1]")
    if gamma < 0:
        raise ValueError("focal exponent must be nonnegative")
    return float((1.0 - p) ** gamma * -math.log(p))


def _focal_vec(p: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    # values and derivative d/dp of (1-p)^gamma * (-log p)
    logp = np.log(p)
    if gamma == 0.0:
        return -logp, -1.0 / p
    q = 1.0 - p
    vals = q**gamma * -logp
    deriv = gamma * q ** (gamma - 1.0) * logp - q**gamma / p
    return vals, deriv


def tp_loss(
    M, label_matrix: LabelMatrix, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    """Class-balanced focal loss over predicted same-video probabilities,
    with the gradient w.r.t. each prediction."""
    M = as_f64(M)
    if M.shape != label_matrix.labels.shape:
        raise ValueError("predictions do not match the active pair list")
    if label_matrix.gamma2 == 0:
        raise ValueError("need >=2 videos for negatives")
    if np.any(M <= 0.0) or np.any(M >= 1.0):
        raise ValueError("predictions must be clamped inside (0, 1)")
    pos = label_matrix.labels == 1
    gamma = cfg.focal_gamma
    dM = np.zeros_like(M)
    vals_pos, dpos = _focal_vec(M[pos], gamma)
    vals_neg, dneg = _focal_vec(1.0 - M[~pos], gamma)
    loss = float(np.sum(vals_pos)) / label_matrix.gamma1
    loss += float(np.sum(vals_neg)) / label_matrix.gamma2
    dM[pos] = dpos / label_matrix.gamma1
    dM[~pos] = -dneg / label_matrix.gamma2
    return loss, dM


def topical_forward(predictor, pair_feats) -> tuple[np.ndarray, tuple]:
    """Predicted same-video probabilities (sigmoid output clamped away from
    0 and 1) plus the cache needed for the backward pass."""
    raw, cache = mlp_forward(predictor.spec, predictor.params, pair_feats)
    raw = raw[:, 0]
    M = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    return M, cache


def topical_backward(
    predictor, cache, dM: np.ndarray, n_rows: int, pairs: np.ndarray, c_t: int
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Push prediction gradients through the predictor into its parameters
    and the topical embedding rows.

    The probability clamp is value-only: gradients pass straight through so
    a saturated predictor keeps a recovery signal instead of dying at the
    clamp boundary.
    """
    d_feats, phi_grads = mlp_backward(predictor.spec, predictor.params, cache, dM[:, None])
    d_t = np.zeros((n_rows, c_t))
    np.add.at(d_t, pairs[:, 0], d_feats[:, :c_t])
    np.add.at(d_t, pairs[:, 1], d_feats[:, c_t:])
    return d_t, phi_grads


def total_loss(batch, bundle: ModelBundle, cfg: LossConfig) -> LossBundle:
    """Compose the enabled loss terms and accumulate their gradients."""
    if not (cfg.enable_vcl or cfg.enable_tcl):
        raise ValueError("at least one loss term must be enabled")
    d_z = np.zeros_like(batch.z)
    d_t = np.zeros_like(batch.t)
    l_cl = 0.0
    l_tp = 0.0
    d_phi = None
    if cfg.enable_vcl:
        l_cl, d_z = vcl_loss(batch, cfg)
    if cfg.enable_tcl:
        if cfg.tp_include_topical:
            rows = np.arange(batch.z.shape[0])
        else:
            rows = np.flatnonzero(batch.slots != 2)
        t_rows = batch.t[rows]
        label_matrix = topic_labels(
            batch.video_ids[rows], cfg.concat_mode, cfg.exclude_self_pairs
        )
        pairs, feats = build_pair_set(t_rows, cfg.concat_mode)
        if cfg.exclude_self_pairs:
            keep = pairs[:, 0] != pairs[:, 1]
            pairs, feats = pairs[keep], feats[keep]
        M, cache = topical_forward(bundle.predictor, feats)
        l_tp, dM = tp_loss(M, label_matrix, cfg)
        d_sub, d_phi = topical_backward(
            bundle.predictor, cache, dM, rows.size, pairs, t_rows.shape[1]
        )
        d_t[rows] += d_sub
    total = l_cl + l_tp
    return LossBundle(l_cl, l_tp, total, d_z, d_t, d_phi)
