"""Recover topics from the co-occurrence matrix given anchor words.

The ``kl`` and ``l2`` methods express each row of Q-bar as a convex
combination of the anchor rows. The weights are ``p(topic | word)``; Bayes' rule with the
word marginals turns them into ``p(word | topic)``. ``R`` then follows from
``Q = A R A^T`` by pseudo-inverse. The ``original`` method solves the system
by direct inversion on the anchor block of ``Q``.
"""
from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorSet
from .cooccur import Cooccurrence
from .simplex_solver import (DEFAULT_MAX_ITERS, DEFAULT_TOL, Divergence, KLObjective, L2Objective,
                             project_to_simplex, solve)

logger = logging.getLogger(__name__)

PINV_RCOND = 1e-10
ALPHA0_BOUNDS = (1e-4, 1e4)


class Method(str, enum.Enum):
    KL = "kl"
    L2 = "l2"
    ORIGINAL = "original"


@dataclass
class TopicModel:
    """Word-topic matrix ``a`` (V x K, column-stochastic), topic-topic ``r``, prior ``p_z``."""

    a: np.ndarray
    r: np.ndarray
    p_z: np.ndarray
    method: Method
    alpha0: float | None = None
    anchors: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def alpha(self):
        return None if self.alpha0 is None else self.alpha0 * self.p_z


@dataclass
class ConvexCoefficients:
    """Row ``i`` of ``c`` is ``p(topic | word i)``; solver diagnostics per word."""

    c: np.ndarray
    zero_rows: np.ndarray
    iterations: np.ndarray = field(repr=False)
    kkt_gaps: np.ndarray = field(repr=False)
    converged: np.ndarray = field(repr=False)


def _check_anchors(cooc: Cooccurrence, anchors: AnchorSet):
    s = np.asarray(anchors.indices)
    bad = np.intersect1d(s, cooc.zero_rows)
    if bad.size:
        raise ValueError(f"anchor word {bad[0]} has an all-zero co-occurrence row")
    if len(np.unique(s)) != s.size or s.min() < 0 or s.max() >= cooc.vocab_size:
        raise ValueError("anchor indices must be distinct valid word indices")
    return s


def recover_coefficients(cooc: Cooccurrence, anchors: AnchorSet,
                         divergence: Divergence | str = Divergence.KL, tol: float = DEFAULT_TOL,
                         max_iters: int = DEFAULT_MAX_ITERS, threads: int = 1) -> ConvexCoefficients:
    """Solve for ``C[i] = argmin_c d(Qbar[i], c @ Qbar[S])`` on the simplex, word by word.

    Words whose Q row is zero get the uniform row. Each word is an
    independent solve from the uniform starting point, so the result does
    not depend on ``threads``.
    """
    divergence = Divergence(divergence)
    s = _check_anchors(cooc, anchors)
    k = s.size
    v = cooc.vocab_size
    anchor_rows = cooc.q_bar[s]
    zero = np.zeros(v, dtype=bool)
    zero[cooc.zero_rows] = True

    if divergence is Divergence.L2:
        gram = np.ascontiguousarray(anchor_rows @ anchor_rows.T)
        cross = cooc.q_bar @ anchor_rows.T
        const = np.einsum("ij,ij->i", cooc.q_bar, cooc.q_bar)

        def objective(i):
            return L2Objective(gram, cross[i], const[i])
    else:
        design = np.ascontiguousarray(anchor_rows.T)

        def objective(i):
            return KLObjective(design, cooc.q_bar[i])

    c = np.full((v, k), 1.0 / k)
    iterations = np.zeros(v, dtype=np.int64)
    gaps = np.zeros(v)
    converged = np.ones(v, dtype=bool)
    words = np.flatnonzero(~zero)

    def work(chunk):
        for i in chunk:
            sol = solve(objective(i), k, tol=tol, max_iters=max_iters)
            c[i] = sol.x
            iterations[i] = sol.iterations
            gaps[i] = sol.kkt_gap
            converged[i] = sol.converged

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, np.array_split(words, threads * 4)))
    else:
        work(words)

    if words.size:
        logger.info("%s coefficients: %d words, median %d iterations, %d not converged",
                    divergence.value, words.size, int(np.median(iterations[words])),
                    int((~converged[words]).sum()))
    return ConvexCoefficients(c=c, zero_rows=np.flatnonzero(zero), iterations=iterations,
                              kkt_gaps=gaps, converged=converged)


def bayes_rule_topics(c, p_w):
    """``A[i, k] ∝ C[i, k] p_w[i]`` normalized per column; ``p_z[k]`` is the column mass.

    Returns
    -------
    a : (V, K) ndarray
    p_z : (K,) ndarray
    """
    c = c.c if isinstance(c, ConvexCoefficients) else np.asarray(c, dtype=float)
    p_w = np.asarray(p_w, dtype=float)
    if (p_w < 0).any():
        raise ValueError("word marginals must be nonnegative")
    a = c * p_w[:, None]
    p_z = a.sum(axis=0)
    dead = np.flatnonzero(p_z <= 0)
    if dead.size:
        raise ValueError(f"topic {dead[0]} received no probability mass (dead topic)")
    a /= p_z
    return a, p_z / p_z.sum()


def recover_r(a, q) -> np.ndarray:
    """Least-squares ``R = A^+ Q A^+T``, symmetrized."""
    a = np.asarray(a, dtype=float)
    sv = np.linalg.svd(a, compute_uv=False)
    if not sv[-1] > 1e-10:
        raise ValueError(f"word-topic matrix is rank deficient (smallest singular value {sv[-1]:.3g})")
    a_pinv = np.linalg.pinv(a, rcond=PINV_RCOND)
    r = a_pinv @ np.asarray(q, dtype=float) @ a_pinv.T
    return 0.5 * (r + r.T)


def original_recover_raw(q, anchor_indices):
    """Direct solve on the anchor block of ``Q``: ``(A, R, z)`` before any projection.

    ``Q[S] 1 = D R 1`` and ``Q[S, S] = D R D`` give ``z = 1 / diag(D)``,
    ``A^T = (Q[S, S] diag(z))^-1 Q[S]`` and ``R = diag(z) Q[S, S] diag(z)``.
    """
    q = np.asarray(q, dtype=float)
    s = np.asarray(anchor_indices)
    q_s = q[s]
    q_ss = q_s[:, s]
    p_s = q_s.sum(axis=1)
    cond = np.linalg.cond(q_ss)
    logger.info("anchor block condition number %.3g", cond)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise ValueError(f"anchor block Q[S,S] is singular (condition number {cond:.3g})")
    z = np.linalg.solve(q_ss, p_s)
    a_t = np.linalg.solve(q_ss * z[None, :], q_s)
    r = z[:, None] * q_ss * z[None, :]
    return a_t.T, r, z


def recover_original(cooc: Cooccurrence, anchors: AnchorSet) -> TopicModel:
    """Direct anchor-block inversion, followed by Euclidean projection of each column of A onto the simplex."""
    s = _check_anchors(cooc, anchors)
    a_raw, r, _ = original_recover_raw(cooc.q, s)
    if (a_raw < 0).any():
        logger.info("original recovery produced %d negative entries before projection",
                    int((a_raw < 0).sum()))
    a = np.column_stack([project_to_simplex(col) for col in a_raw.T])
    r = 0.5 * (r + r.T)
    p_z = project_to_simplex(r.sum(axis=1))
    return TopicModel(a=a, r=r, p_z=p_z, method=Method.ORIGINAL, anchors=s)


def estimate_dirichlet(p_z, r):
    """Dirichlet parameter ``alpha0 * p_z`` from off-diagonal second moments, or None.

    For a Dirichlet, ``R[k, l] = p_z[k] p_z[l] alpha0 / (alpha0 + 1)`` when
    ``k != l``; ``alpha0`` comes from the median of ``R[k, l] / (p_z[k] p_z[l])``.
    """
    p_z = np.asarray(p_z, dtype=float)
    r = np.asarray(r, dtype=float)
    if (p_z <= 0).any():
        raise ValueError("p_z must be strictly positive")
    k = p_z.size
    off = ~np.eye(k, dtype=bool)
    if not off.any():
        logger.warning("a single topic has no off-diagonal moments; alpha0 left unset")
        return None
    ratio = float(np.median((r / np.outer(p_z, p_z))[off]))
    if not 0.0 < ratio < 1.0:
        logger.warning("moment ratio %.6g outside (0, 1): not Dirichlet-consistent, alpha0 unset",
                       ratio)
        return None
    alpha0 = float(np.clip(ratio / (1.0 - ratio), *ALPHA0_BOUNDS))
    return alpha0 * p_z


def recover_topic_model(cooc: Cooccurrence, anchors: AnchorSet, method: Method | str = Method.KL,
                        tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                        threads: int = 1) -> TopicModel:
    """Convex-coefficient recovery (``kl``, ``l2``) or anchor-block inversion (``original``)."""
    method = Method(method)
    if method is Method.ORIGINAL:
        model = recover_original(cooc, anchors)
    else:
        coef = recover_coefficients(cooc, anchors, Divergence(method.value), tol=tol,
                                    max_iters=max_iters, threads=threads)
        a, p_z = bayes_rule_topics(coef, cooc.p_w)
        model = TopicModel(a=a, r=recover_r(a, cooc.q), p_z=p_z, method=method,
                           anchors=np.asarray(anchors.indices))
    if (model.p_z > 0).all():
        alpha = estimate_dirichlet(model.p_z, model.r)
        model.alpha0 = None if alpha is None else float(alpha.sum())
    return model


def write_topic_matrix(path: str | os.PathLike, a, vocab=None) -> None:
    """TSV: header ``word<TAB>topic_1...``, then one row per word."""
    a = np.asarray(a, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("word\t" + "\t".join(f"topic_{k + 1}" for k in range(a.shape[1])) + "\n")
        for i, row in enumerate(a):
            word = vocab[i] if vocab is not None else str(i)
            fh.write(word + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def read_topic_matrix(path: str | os.PathLike):
    """Inverse of :func:`write_topic_matrix`: ``(a, vocab)``."""
    words, rows = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            words.append(fields[0])
            rows.append([float(x) for x in fields[1:]])
    return np.asarray(rows, dtype=float).reshape(len(rows), len(header) - 1), words


def top_words(a, n_top: int) -> np.ndarray:
    """``(K, n_top)`` word indices by descending probability, ties to the lower index."""
    a = np.asarray(a, dtype=float)
    order = np.lexsort((np.arange(a.shape[0])[:, None].repeat(a.shape[1], 1), -a), axis=0)
    return order[:n_top].T


def write_topic_summary(path: str | os.PathLike, model: TopicModel, vocab=None,
                        n_top: int = 20) -> None:
    """Per topic: its prior mass and top words; the anchor word is starred."""
    tops = top_words(model.a, min(n_top, model.a.shape[0]))
    with open(path, "w", encoding="utf-8") as fh:
        for k, row in enumerate(tops):
            anchor = None if model.anchors is None else int(model.anchors[k])
            name = (lambda i: vocab[i] if vocab is not None else str(i))
            words = [("*" + name(i) + "*") if i == anchor else name(i) for i in row]
            if anchor is not None and anchor not in row:
                words.append(f"(anchor *{name(anchor)}*)")
            fh.write(f"topic_{k + 1}\t{model.p_z[k]:.6f}\t" + " ".join(words) + "\n")
