"""Word-word co-occurrence statistics.

For a document with count vector ``h`` and length ``n`` the contribution

    (h h^T - diag(h)) / (n (n - 1))

is an unbiased estimate of ``A W_d W_d^T A^T``: it averages the outer
products of all ordered pairs of distinct token positions. ``build_q``
averages these over documents and rescales so the entries sum to one.
"""
from __future__ import annotations

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import SparseCorpus

logger = logging.getLogger(__name__)

Q_MAGIC = b"ANCHRQ01"
MATRIX_MAGIC = b"ANCHRM01"


@dataclass(frozen=True, eq=False)
class Cooccurrence:
    """Joint word-pair distribution and its row-normalized form.

    Attributes
    ----------
    q : (V, V) ndarray
        Symmetric, nonnegative, sums to one.
    q_bar : (V, V) ndarray
        Rows of ``q`` divided by their sums; rows in ``zero_rows`` are zero.
    p_w : (V,) ndarray
        Row sums of ``q`` (word marginals).
    zero_rows : ndarray of int
        Sorted indices of words whose ``q`` row sums to zero.
    """

    q: np.ndarray
    q_bar: np.ndarray
    p_w: np.ndarray
    zero_rows: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.q.shape[0]

    @classmethod
    def from_matrix(cls, q) -> "Cooccurrence":
        """Wrap an existing (e.g. exact ``A R A^T``) joint matrix, normalizing its sum to one."""
        q = np.array(q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"q must be square, got shape {q.shape}")
        total = q.sum()
        if not total > 0:
            raise ValueError("q must have a positive sum")
        q /= total
        q_bar, p_w, zero_rows = row_normalize(q)
        return cls(q, q_bar, p_w, zero_rows)


def row_normalize(q):
    """Row-normalize a nonnegative matrix.

    Returns
    -------
    q_bar : ndarray
        ``q`` with every nonzero row divided by its sum; zero rows stay zero.
    p_w : ndarray
        The row sums.
    zero_rows : ndarray of int
        Indices of rows summing to zero.
    """
    q = np.asarray(q, dtype=float)
    if (q < 0).any():
        i, j = np.argwhere(q < 0)[0]
        raise ValueError(f"q has a negative entry at ({i}, {j}): {q[i, j]!r}")
    p_w = q.sum(axis=1)
    zero_rows = np.flatnonzero(p_w == 0)
    safe = np.where(p_w > 0, p_w, 1.0)
    q_bar = q / safe[:, None]
    return q_bar, p_w, zero_rows


def _chunk_sum(counts: sp.csr_matrix, lengths: np.ndarray) -> np.ndarray:
    denom = lengths * (lengths - 1.0)
    scaled = sp.diags(1.0 / np.sqrt(denom)) @ counts
    outer = (scaled.T @ scaled).toarray()
    # diagonal sum_d h(h - 1) / (n(n - 1)) directly, so count-1 words give exact zeros
    pairs = counts.copy()
    pairs.data = pairs.data * (pairs.data - 1.0)
    outer[np.diag_indices_from(outer)] = np.asarray(
        (sp.diags(1.0 / denom) @ pairs).sum(axis=0)).ravel()
    return outer


def cooccurrence_sum(corpus: SparseCorpus, deterministic: bool = True, threads: int = 1,
                     chunk_size: int = 4096) -> np.ndarray:
    """Unnormalized estimator ``(1/M) sum_d (H~_d H~_d^T - H^_d)``.

    Documents are reduced in chunks of ``chunk_size``; chunk partial sums are
    always added in chunk order, so the result does not depend on
    ``threads``. ``deterministic=True`` forces a single worker.
    """
    lengths = corpus.doc_lengths.astype(float)
    short = np.flatnonzero(lengths < 2)
    if short.size:
        raise ValueError(f"document {short[0]} has length {int(lengths[short[0]])} < 2; "
                         "filter short documents before building Q")
    counts = corpus.counts.astype(float)
    starts = range(0, corpus.num_docs, chunk_size)

    def work(start):
        stop = min(start + chunk_size, corpus.num_docs)
        return _chunk_sum(counts[start:stop], lengths[start:stop])

    total = np.zeros((corpus.vocab_size, corpus.vocab_size))
    if deterministic or threads <= 1:
        for start in starts:
            total += work(start)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(work, starts):
                total += part
    total /= corpus.num_docs
    # exact symmetry; the construction is symmetric up to rounding
    return 0.5 * (total + total.T)


def build_q(corpus: SparseCorpus, deterministic: bool = True, threads: int = 1) -> Cooccurrence:
    """Estimate the co-occurrence matrix of ``corpus`` and its row-normalized form."""
    raw = cooccurrence_sum(corpus, deterministic=deterministic, threads=threads)
    # entries are sums of nonnegative pair counts; clear rounding residue
    np.maximum(raw, 0.0, out=raw)
    cooc = Cooccurrence.from_matrix(raw)
    if cooc.zero_rows.size:
        logger.info("%d words never co-occur with another token in-sample", cooc.zero_rows.size)
    return cooc


def save_q(path: str | os.PathLike, cooc: Cooccurrence) -> None:
    """Binary layout: magic, u64 V, V*V little-endian f64 row-major, then V f64 ``p_w``."""
    v = cooc.vocab_size
    with open(path, "wb") as fh:
        fh.write(Q_MAGIC)
        fh.write(struct.pack("<Q", v))
        fh.write(np.ascontiguousarray(cooc.q, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cooc.p_w, dtype="<f8").tobytes())


def load_q(path: str | os.PathLike) -> Cooccurrence:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != Q_MAGIC:
            raise ValueError(f"{path}: not a Q matrix file (magic {magic!r})")
        (v,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read()
    expected = 8 * (v * v + v)
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes for V={v}, got {len(payload)}")
    q = np.frombuffer(payload, dtype="<f8", count=v * v).reshape(v, v).astype(float)
    q_bar, p_w, zero_rows = row_normalize(q)
    return Cooccurrence(q, q_bar, p_w, zero_rows)


def save_matrix(path: str | os.PathLike, matrix) -> None:
    """Generic dense matrix: magic, u64 rows, u64 cols, rows*cols little-endian f64."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", *matrix.shape))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def load_matrix(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a matrix file (magic {magic!r})")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        payload = fh.read()
    if len(payload) != 8 * rows * cols:
        raise ValueError(f"{path}: truncated matrix payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)
