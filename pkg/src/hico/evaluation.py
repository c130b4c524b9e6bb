"""Frozen-representation evaluation: linear probing of topic labels and
nearest-neighbor retrieval with recall at k.

Per-video embeddings follow the retrieval protocol: ten uniformly spaced
clips per video, encoder + visual-head features averaged and then
L2-normalized.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ModelBundle, mlp_forward
from .numerics import NORM_EPS, Rng, as_f64, softmax
from .timeline import Clip, Corpus

RECALL_KS = (1, 5, 10, 20)


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict[int, float]
    confusion: np.ndarray  # rows true class, columns predicted


@dataclass
class RetrievalResult:
    recall_at: dict[int, float]


def embed_corpus(
    bundle: ModelBundle,
    corpus: Corpus,
    rng: Rng,
    clips_per_video: int = 10,
    clip_length: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-video averaged, unit-norm visual embeddings plus topic labels."""
    embeds, labels = [], []
    for t in corpus.timelines:
        half = clip_length / 2.0
        centers = np.linspace(half, t.duration - half, clips_per_video)
        rv = rng.split(("embed", t.id))
        X = np.stack([corpus.observe(Clip(t.id, float(c), clip_length), rv) for c in centers])
        F, _ = mlp_forward(bundle.encoder.spec, bundle.encoder.params, X)
        Z, _ = mlp_forward(bundle.visual_head.spec, bundle.visual_head.params, F)
        mean = Z.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < NORM_EPS:
            raise ValueError(f"degenerate embedding average for video {t.id}")
        embeds.append(mean / norm)
        labels.append(t.topic_id)
    return np.stack(embeds), np.array(labels)


def split_videos(corpus: Corpus, test_fraction: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test split, stratified per topic by generation
    order (videos are laid out topic-round-robin)."""
    stride = max(2, round(1.0 / test_fraction))
    idx = np.arange(len(corpus))
    rank = idx // corpus.k_topics
    test = idx[rank % stride == stride - 1]
    train = idx[rank % stride != stride - 1]
    return train, test


def linear_probe(
    train_embeds,
    train_labels,
    test_embeds,
    test_labels,
    l2: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 20_000,
    rng: Rng | None = None,
) -> ProbeResult:
    """Multinomial logistic regression fit by full-batch gradient descent.

    The objective is convex, so any init reaches the same optimum; a seeded
    rng only varies the starting point.
    """
    X = as_f64(train_embeds)
    y = np.asarray(train_labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("probe needs at least two classes in the training set")
    k = int(classes.max()) + 1
    n, d = X.shape
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1.0
    # gradient Lipschitz bound: softmax curvature <= 1/2, plus the ridge term
    lam_max = float(np.linalg.eigvalsh(X.T @ X)[-1])
    lr = 1.0 / (0.5 * lam_max / n + l2)
    W = np.zeros((k, d)) if rng is None else 0.01 * rng.normal(size=(k, d))
    b = np.zeros(k)
    for _ in range(max_iter):
        P = softmax(X @ W.T + b)
        R = (P - Y) / n
        gW = R.T @ X + l2 * W
        gb = R.sum(axis=0)
        gnorm = np.sqrt(float(np.sum(gW**2) + np.sum(gb**2)))
        if gnorm < tol:
            break
        W -= lr * gW
        b -= lr * gb
    Xt = as_f64(test_embeds)
    yt = np.asarray(test_labels)
    pred = np.argmax(Xt @ W.T + b, axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    for true, guess in zip(yt, pred):
        confusion[true, guess] += 1
    per_class = {}
    for c in np.unique(yt):
        mask = yt == c
        per_class[int(c)] = float(np.mean(pred[mask] == c))
    return ProbeResult(
        accuracy=float(np.mean(pred == yt)),
        per_class=per_class,
        confusion=confusion,
    )


def retrieve(
    query_embeds,
    query_labels,
    gallery_embeds,
    gallery_labels,
    ks: tuple[int, ...] = RECALL_KS,
) -> RetrievalResult:
    """Rank the gallery by cosine similarity per query; recall at k is the
    fraction of queries whose top k contains a same-label item.  Ties break
    toward the lower gallery index."""
    Q = as_f64(query_embeds)
    G = as_f64(gallery_embeds)
    if G.shape[0] == 0:
        raise ValueError("gallery must be nonempty")
    qn = np.linalg.norm(Q, axis=1, keepdims=True)
    gn = np.linalg.norm(G, axis=1, keepdims=True)
    if np.any(qn < NORM_EPS) or np.any(gn < NORM_EPS):
        raise ValueError("degenerate vector in cosine similarity")
    sims = (Q / qn) @ (G / gn).T
    order = np.argsort(-sims, axis=1, kind="stable")
    g_labels = np.asarray(gallery_labels)
    q_labels = np.asarray(query_labels)
    recall = {}
    for k in ks:
        top = g_labels[order[:, :k]]
        hits = np.any(top == q_labels[:, None], axis=1)
        recall[int(k)] = float(np.mean(hits))
    return RetrievalResult(recall_at=recall)


def write_results_csv(path, probe: ProbeResult, retrieval: RetrievalResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "k", "value"])
        writer.writerow(["probe_accuracy", "", repr(probe.accuracy)])
        for c in sorted(probe.per_class):
            writer.writerow(["probe_class_accuracy", c, repr(probe.per_class[c])])
        for k in sorted(retrieval.recall_at):
            writer.writerow(["recall", k, repr(retrieval.recall_at[k])])


def results_summary(probe: ProbeResult, retrieval: RetrievalResult) -> str:
    lines = [f"probe accuracy: {probe.accuracy:.4f}"]
    for k in sorted(retrieval.recall_at):
        lines.append(f"recall@{k}: {retrieval.recall_at[k]:.4f}")
    return "\n".join(lines) + "\n"
