"""Scores for recovered topic models.

Matched l1 error against a known word-topic matrix, document co-occurrence
coherence of each topic's top words, and the number of top words a topic
does not share with any other topic.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import SparseCorpus
from .recover import top_words

logger = logging.getLogger(__name__)

COHERENCE_EPSILON = 0.01


@dataclass
class EvalReport:
    """Evaluation results; any section that was not computed is None."""

    per_topic_l1: np.ndarray | None = None
    matching: np.ndarray | None = None
    uniform_baseline_l1: float | None = None
    coherence: np.ndarray | None = None
    unique_words: np.ndarray | None = None
    n_top: int | None = None
    timings: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {}
        if self.per_topic_l1 is not None:
            out["l1"] = {"per_topic": [float(x) for x in self.per_topic_l1],
                         "mean": float(np.mean(self.per_topic_l1)),
                         "baseline": self.uniform_baseline_l1,
                         "matching": [int(x) for x in self.matching]}
        if self.coherence is not None:
            out["coherence"] = {"per_topic": [float(x) for x in self.coherence],
                                "mean": float(np.mean(self.coherence)), "n_top": self.n_top}
        if self.unique_words is not None:
            out["unique_words"] = {"per_topic": [int(x) for x in self.unique_words],
                                   "mean": float(np.mean(self.unique_words)), "n_top": self.n_top}
        out["timings"] = {k: float(v) for k, v in self.timings.items()}
        out.update(self.extra)
        return out

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _check_pair(a_true, a_hat):
    a_true = np.asarray(a_true, dtype=float)
    a_hat = np.asarray(a_hat, dtype=float)
    if a_true.ndim != 2 or a_true.shape != a_hat.shape:
        raise ValueError(f"shape mismatch: {a_true.shape} vs {a_hat.shape}")
    return a_true, a_hat


def l1_cost_matrix(a_true, a_hat) -> np.ndarray:
    """``cost[i, j] = ||a_true[:, i] - a_hat[:, j]||_1``."""
    a_true, a_hat = _check_pair(a_true, a_hat)
    return np.abs(a_true[:, :, None] - a_hat[:, None, :]).sum(axis=0)


def l1_topic_error(a_true, a_hat):
    """Per-topic l1 error after the optimal one-to-one matching of topics.

    Returns
    -------
    per_topic : (K,) ndarray
        ``per_topic[k]`` is the distance from true topic ``k`` to its match.
    matching : (K,) ndarray of int
        ``matching[k]`` is the learned topic matched to true topic ``k``.
    """
    cost = l1_cost_matrix(a_true, a_hat)
    rows, cols = linear_sum_assignment(cost)
    matching = np.empty(cost.shape[0], dtype=np.int64)
    matching[rows] = cols
    return cost[np.arange(cost.shape[0]), matching], matching


def uniform_baseline(a_true) -> float:
    """Mean l1 distance of the true topics from the uniform distribution."""
    a_true = np.asarray(a_true, dtype=float)
    return float(np.abs(a_true - 1.0 / a_true.shape[0]).sum(axis=0).mean())


def coherence(a, corpus: SparseCorpus, n_top: int, epsilon: float = COHERENCE_EPSILON) -> np.ndarray:
    """Document co-occurrence coherence of each topic's ``n_top`` most probable words.

    For top words ``w_1..w_N`` (descending probability) the score is the sum
    over ``l < m`` of ``log((D(w_m, w_l) + epsilon) / D(w_l))``, where ``D``
    counts documents containing the word(s). A zero ``D(w_l)`` is replaced
    by ``epsilon``.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[0] != corpus.vocab_size:
        raise ValueError(f"a has {a.shape[0]} words but the corpus has {corpus.vocab_size}")
    if not 1 <= n_top <= a.shape[0]:
        raise ValueError(f"n_top must be in [1, {a.shape[0]}], got {n_top}")
    if corpus.num_docs == 0:
        raise ValueError("coherence needs a nonempty corpus")
    tops = top_words(a, n_top)
    present = (corpus.counts > 0).astype(np.int64).tocsc()
    scores = np.zeros(a.shape[1])
    for k, words in enumerate(tops):
        sub = present[:, words]
        joint = (sub.T @ sub).toarray().astype(float)
        df = np.diag(joint).copy()
        if (df == 0).any():
            logger.warning("topic %d: top words %s occur in no document; using epsilon as their "
                           "document frequency", k, words[df == 0].tolist())
            df[df == 0] = epsilon
        m, l = np.tril_indices(n_top, -1)
        scores[k] = np.log((joint[m, l] + epsilon) / df[l]).sum()
    return scores


def unique_words(a, n_top: int) -> np.ndarray:
    """Per topic, how many of its ``n_top`` top words are in no other topic's top set."""
    a = np.asarray(a, dtype=float)
    if not 1 <= n_top <= a.shape[0]:
        raise ValueError(f"n_top must be in [1, {a.shape[0]}], got {n_top}")
    tops = top_words(a, n_top)
    hits = np.zeros(a.shape[0], dtype=np.int64)
    for words in tops:
        hits[words] += 1
    return (hits[tops] == 1).sum(axis=1)


def evaluate(a_hat, a_true=None, corpus: SparseCorpus | None = None, n_top: int = 20,
             timings: dict | None = None) -> EvalReport:
    """Compute every score whose inputs are available."""
    a_hat = np.asarray(a_hat, dtype=float)
    n_top = min(n_top, a_hat.shape[0])
    report = EvalReport(n_top=n_top, timings=dict(timings or {}))
    if a_true is not None:
        report.per_topic_l1, report.matching = l1_topic_error(a_true, a_hat)
        report.uniform_baseline_l1 = uniform_baseline(a_true)
    if corpus is not None:
        report.coherence = coherence(a_hat, corpus, n_top)
    report.unique_words = unique_words(a_hat, n_top)
    return report
