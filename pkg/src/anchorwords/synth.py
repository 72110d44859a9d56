"""Semi-synthetic corpora drawn from a known word-topic matrix.

Each document draws topic proportions ``W_d`` from the prior, then
``doc_length`` tokens. Every document has its own random stream derived
from ``(seed, doc_index)``, so a corpus does not depend on the order or
batching in which documents are produced.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cooccur import Cooccurrence, save_matrix
from .corpus import SparseCorpus, write_uci_bag_of_words


@dataclass(frozen=True)
class DirichletPrior:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        if (alpha <= 0).any():
            raise ValueError("Dirichlet parameters must be positive")
        object.__setattr__(self, "alpha", alpha)

    @property
    def k(self):
        return self.alpha.size

    def sample(self, rng):
        w = rng.dirichlet(self.alpha)
        return w / w.sum()

    def describe(self):
        return {"prior": "dirichlet", "alpha": self.alpha.tolist()}


@dataclass(frozen=True)
class LogisticNormalPrior:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", _psd_factor(cov))

    @property
    def k(self):
        return self.mean.size

    def sample(self, rng):
        g = self.mean + self._factor @ rng.standard_normal(self.k)
        return _softmax(g)

    def describe(self):
        digest = hashlib.sha256(np.ascontiguousarray(self.mean).tobytes()
                                + np.ascontiguousarray(self.cov).tobytes()).hexdigest()
        return {"prior": "logistic_normal", "mean_cov_sha256": digest}


def _psd_factor(cov):
    """``L`` with ``L L^T = cov``; raises if ``cov`` is not symmetric PSD within 1e-10.

    Cholesky when ``cov`` is positive definite, so the factor (and a draw
    from fixed normals) varies continuously with ``cov``; an eigendecomposition
    otherwise.
    """
    if np.abs(cov - cov.T).max() > 1e-10:
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(cov)
    if w.size and w.min() < -1e-10:
        raise ValueError(f"covariance is not positive semidefinite (eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _softmax(g):
    e = np.exp(g - g.max())
    return e / e.sum()


def logistic_normal_draw(mean, cov, rng) -> np.ndarray:
    """``softmax(g)`` with ``g ~ Normal(mean, cov)``."""
    mean = np.asarray(mean, dtype=float)
    factor = _psd_factor(np.atleast_2d(np.asarray(cov, dtype=float)))
    return _softmax(mean + factor @ rng.standard_normal(mean.size))


@dataclass
class GeneratorSpec:
    a: np.ndarray
    num_docs: int
    doc_length: int
    prior: DirichletPrior | LogisticNormalPrior
    seed: int = 0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim != 2:
            raise ValueError("a must be a V x K matrix")
        if (self.a < 0).any() or np.abs(self.a.sum(axis=0) - 1.0).max() > 1e-9:
            raise ValueError("a must be column-stochastic")
        if self.doc_length < 2:
            raise ValueError(f"doc_length must be at least 2, got {self.doc_length}")
        if self.num_docs < 1:
            raise ValueError("num_docs must be positive")
        if self.prior.k != self.a.shape[1]:
            raise ValueError(f"prior has {self.prior.k} topics but a has {self.a.shape[1]}")

    def describe(self):
        meta = {"seed": self.seed, "num_docs": self.num_docs, "doc_length": self.doc_length,
                "vocab_size": self.a.shape[0], "num_topics": self.a.shape[1]}
        meta.update(self.prior.describe())
        return meta


def document_rng(seed: int, d: int) -> np.random.Generator:
    return np.random.default_rng([seed, d])


def generate_corpus(spec: GeneratorSpec, vocab=None):
    """Sample a corpus from ``spec``.

    Tokens are i.i.d. given ``W_d`` with distribution ``A W_d`` (the topic
    assignment marginalized out), so the per-document count vector is
    ``Multinomial(doc_length, A W_d)``.

    Returns
    -------
    corpus : SparseCorpus
    w_true : (K, M) ndarray
        The sampled topic proportions, one column per document.
    """
    v, k = spec.a.shape
    if vocab is None:
        vocab = [f"w{i}" for i in range(v)]
    w_true = np.empty((k, spec.num_docs))
    indptr = [0]
    indices, data = [], []
    for d in range(spec.num_docs):
        rng = document_rng(spec.seed, d)
        w = spec.prior.sample(rng)
        w_true[:, d] = w
        p = spec.a @ w
        p /= p.sum()
        counts = rng.multinomial(spec.doc_length, p)
        nz = np.flatnonzero(counts)
        indices.append(nz)
        data.append(counts[nz])
        indptr.append(indptr[-1] + nz.size)
    matrix = sp.csr_matrix((np.concatenate(data), np.concatenate(indices), np.asarray(indptr)),
                           shape=(spec.num_docs, v))
    return SparseCorpus(matrix, tuple(vocab)), w_true


def block_covariance(k: int, num_groups: int, rho: float) -> np.ndarray:
    """Unit-diagonal covariance with ``rho`` between topics of the same group.

    Topics are split into ``num_groups`` contiguous groups; when
    ``num_groups`` does not divide ``k`` the leading groups get one extra
    topic.
    """
    if not 1 <= num_groups <= k:
        raise ValueError(f"num_groups must be in [1, {k}], got {num_groups}")
    sizes = [k // num_groups + (g < k % num_groups) for g in range(num_groups)]
    labels = np.repeat(np.arange(num_groups), sizes)
    cov = np.where(labels[:, None] == labels[None, :], float(rho), 0.0)
    np.fill_diagonal(cov, 1.0)
    w = np.linalg.eigvalsh(cov)
    if w.min() < -1e-10:
        raise ValueError(f"rho={rho} makes the block covariance indefinite")
    return cov


def inject_anchor_words(a) -> np.ndarray:
    """Append one anchor word per topic with that topic's largest probability, then renormalize."""
    a = np.asarray(a, dtype=float)
    out = np.vstack((a, np.diag(a.max(axis=0))))
    return out / out.sum(axis=0)


def random_separable_topics(vocab_size: int, k: int, anchor_prob=0.05, concentration: float = 0.1,
                            overlap: float = 0.0, rng=None):
    """Random p-separable word-topic matrix.

    Each topic gets one anchor word (at a random row) holding ``anchor_prob``
    of its mass (a scalar, or a ``(low, high)`` range sampled per topic).
    The rest of topic ``t`` is ``(1 - overlap) B_t + overlap * mean(B_s, s != t)``
    over the non-anchor words, with ``B_t ~ Dirichlet(concentration)``;
    ``overlap > 0`` shares every word's mass across topics. Non-anchor words
    are positive in every topic.

    Returns
    -------
    a : (V, K) ndarray
    anchors : (K,) ndarray of int
        Row of each topic's anchor word.
    """
    rng = np.random.default_rng(rng)
    if vocab_size <= k:
        raise ValueError("need more words than topics")
    if not 0.0 <= overlap <= 1.0:
        raise ValueError("overlap must lie in [0, 1]")
    if np.ndim(anchor_prob) == 0:
        probs = np.full(k, float(anchor_prob))
    else:
        lo, hi = anchor_prob
        probs = rng.uniform(lo, hi, size=k)
    rows = rng.permutation(vocab_size)
    anchors, rest = rows[:k], np.sort(rows[k:])
    base = rng.dirichlet(np.full(rest.size, concentration), size=k).T
    # keep every non-anchor word strictly positive in every topic
    base = np.maximum(base, 1e-12)
    base /= base.sum(axis=0)
    if k > 1 and overlap > 0:
        others = (base.sum(axis=1, keepdims=True) - base) / (k - 1)
        base = (1.0 - overlap) * base + overlap * others
    a = np.zeros((vocab_size, k))
    a[rest] = base * (1.0 - probs)
    a[anchors, np.arange(k)] = probs
    return a, anchors


def dirichlet_second_moment(alpha) -> np.ndarray:
    """``E[W W^T]`` for ``W ~ Dirichlet(alpha)``."""
    alpha = np.asarray(alpha, dtype=float)
    a0 = alpha.sum()
    return (np.outer(alpha, alpha) + np.diag(alpha)) / (a0 * (a0 + 1.0))


def prior_second_moment(prior, num_samples: int = 200_000, seed: int = 0) -> np.ndarray:
    """Closed form for a Dirichlet; Monte Carlo estimate for a logistic normal."""
    if isinstance(prior, DirichletPrior):
        return dirichlet_second_moment(prior.alpha)
    rng = np.random.default_rng(seed)
    g = prior.mean + rng.standard_normal((num_samples, prior.k)) @ prior._factor.T
    g -= g.max(axis=1, keepdims=True)
    w = np.exp(g)
    w /= w.sum(axis=1, keepdims=True)
    return w.T @ w / num_samples


def exact_cooccurrence(a, r) -> Cooccurrence:
    """Infinite-data co-occurrence ``A R A^T`` (renormalized to sum to one)."""
    a = np.asarray(a, dtype=float)
    q = a @ np.asarray(r, dtype=float) @ a.T
    return Cooccurrence.from_matrix(0.5 * (q + q.T))


def write_synth_outputs(prefix: str | os.PathLike, spec: GeneratorSpec, corpus: SparseCorpus,
                        w_true=None) -> dict:
    """Write ``<prefix>.docword.txt``, ``.vocab.txt``, ``.meta.json`` and optionally ``.w_true.bin``."""
    prefix = os.fspath(prefix)
    paths = {"docword": prefix + ".docword.txt", "vocab": prefix + ".vocab.txt",
             "meta": prefix + ".meta.json"}
    write_uci_bag_of_words(corpus, paths["docword"], paths["vocab"])
    if w_true is not None:
        paths["w_true"] = prefix + ".w_true.bin"
        save_matrix(paths["w_true"], w_true)
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(spec.describe(), fh, indent=2, sort_keys=True)
    return paths
