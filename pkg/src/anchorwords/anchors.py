"""Anchor selection by greedy farthest-point-from-span search.

Phase 1 picks the point farthest from the origin, then repeatedly the point
farthest from the linear span of those already chosen. Phase 2 revisits
each of the K slots once, replacing it with the point farthest from the
span of the other K - 1. Distances are computed against an orthonormal
basis grown by Gram-Schmidt with one re-orthogonalization pass; residuals
of all points are kept and updated in place, so each step is O(V d).
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from .cooccur import Cooccurrence

logger = logging.getLogger(__name__)

DEFAULT_PROJECTION_DIM = 1000
DEFAULT_MIN_ANCHOR_DF = 10
# relative slack under which two distances count as tied
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Selected anchor words in final slot order.

    ``span_distances[i]`` is the distance from anchor ``i`` to the span of
    the other K - 1 anchors at the moment the cleanup pass settled slot
    ``i``. ``initial_indices`` and ``initial_distances`` record the greedy
    phase before cleanup.
    """

    indices: np.ndarray
    span_distances: np.ndarray
    projection_dim: int | None
    seed: int | None
    candidates: np.ndarray
    initial_indices: np.ndarray | None = None
    initial_distances: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, AnchorSet):
            return NotImplemented
        return (np.array_equal(self.indices, other.indices)
                and np.array_equal(self.span_distances, other.span_distances)
                and np.array_equal(self.candidates, other.candidates)
                and self.projection_dim == other.projection_dim and self.seed == other.seed)

    __hash__ = None


def random_projection(rows, target_dim: int, seed: int | None = 0, disabled: bool = False):
    """Multiply ``rows`` (n x V) by a V x ``target_dim`` Gaussian matrix scaled by 1/sqrt(dim).

    With ``disabled=True`` the rows are returned unchanged.
    """
    rows = np.asarray(rows, dtype=float)
    if disabled:
        return rows
    if target_dim < 1:
        raise ValueError(f"target_dim must be at least 1, got {target_dim}")
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((rows.shape[1], target_dim))
    proj /= np.sqrt(target_dim)
    return rows @ proj


def distance_to_span(point, orthonormal_basis) -> float:
    """``||x - sum_b <x, b> b||`` for an orthonormal list of vectors ``b``."""
    r = np.array(point, dtype=float)
    for b in orthonormal_basis:
        b = np.asarray(b, dtype=float)
        r -= (r @ b) * b
    return float(np.sqrt(r @ r))


def _argmax_lowest(values):
    """Position of the maximum, preferring the lowest position among near-ties."""
    top = values.max()
    return int(np.flatnonzero(values >= top * (1.0 - TIE_RTOL))[0])


def _orthonormalize(v, basis):
    """Gram-Schmidt of ``v`` against the columns of ``basis`` with one re-orthogonalization."""
    for _ in range(2):
        if basis.shape[1]:
            v = v - basis @ (basis.T @ v)
    norm = np.sqrt(v @ v)
    return v / norm, norm


def _split_span(coords, skip):
    """Split R^K around the columns of ``coords`` other than ``skip``.

    Returns an orthonormal basis (K x (K-1)) of their span and the unit
    vector orthogonal to it.
    """
    others = np.delete(coords, skip, axis=1)
    if others.shape[1] == 0:
        return np.zeros((coords.shape[0], 0)), np.eye(coords.shape[0])[:, 0]
    u, _, _ = np.linalg.svd(others, full_matrices=True)
    return u[:, :-1], u[:, -1]


def fast_anchor_words(points, k: int, candidates=None) -> AnchorSet:
    """Select ``k`` rows of ``points`` that approximate the vertices of their hull.

    Parameters
    ----------
    points : (n, d) array
        Row ``j`` is the point for word ``candidates[j]``.
    k : int
        Number of anchors.
    candidates : sequence of int, optional
        Word index of each row; defaults to ``range(n)``. Ties between
        equally distant points go to the lowest word index.

    Returns
    -------
    AnchorSet
        ``indices`` are word indices (not row positions).
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if candidates is None:
        candidates = np.arange(n)
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.shape != (n,):
        raise ValueError(f"{n} points but {candidates.size} candidate indices")
    if len(np.unique(candidates)) != n:
        raise ValueError("candidate indices must be distinct")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"cannot select {k} anchors from {n} candidates")
    order = np.argsort(candidates, kind="stable")
    candidates = candidates[order]
    points = points[order]

    norms = np.einsum("ij,ij->i", points, points)
    if not norms.max() > 0:
        raise ValueError("all candidate points are zero")

    # phase 1: residual[i] is points[i] minus its projection onto span(basis)
    residual = points.copy()
    basis = np.zeros((d, 0))
    chosen = []
    initial_distances = []
    for step in range(k):
        dist2 = np.einsum("ij,ij->i", residual, residual)
        j = _argmax_lowest(dist2)
        dist = np.sqrt(dist2[j])
        if not dist > 0:
            raise ValueError(f"points span only {step} dimensions; cannot select {k} anchors")
        q, _ = _orthonormalize(points[j], basis)
        residual -= np.outer(residual @ q, q)
        basis = np.column_stack((basis, q))
        chosen.append(j)
        initial_distances.append(dist)
    initial = candidates[chosen].copy()

    # phase 2: coords are the points in the basis of span(S), residual is the
    # component orthogonal to span(S); the span of S minus slot i is the
    # orthogonal complement of direction u inside span(S)
    coords = points @ basis
    final_distances = np.zeros(k)
    for i in range(k):
        keep, u = _split_span(coords[chosen].T, i)
        along = coords @ u
        dist2 = np.einsum("ij,ij->i", residual, residual) + along ** 2
        j = _argmax_lowest(dist2)
        dist = np.sqrt(dist2[j])
        if not dist > 0:
            raise ValueError("degenerate anchor configuration in cleanup")
        # new span: span(S minus slot i) plus the new point's orthogonal component
        basis_others = basis @ keep
        residual += np.outer(along, basis @ u)
        q, _ = _orthonormalize(points[j], basis_others)
        along_q = points @ q
        residual -= np.outer(residual @ q, q)
        basis = np.column_stack((basis_others, q))
        coords = np.column_stack((coords @ keep, along_q))
        chosen[i] = j
        final_distances[i] = dist

    if not len(set(chosen)) == k:
        raise ValueError("cleanup produced duplicate anchors")
    return AnchorSet(indices=candidates[chosen], span_distances=final_distances,
                     projection_dim=None, seed=None, candidates=candidates,
                     initial_indices=initial, initial_distances=np.asarray(initial_distances))


def slot_distances(points, rows) -> np.ndarray:
    """Distance of each selected row to the span of the other selected rows."""
    points = np.asarray(points, dtype=float)
    rows = list(rows)
    out = np.zeros(len(rows))
    for i, r in enumerate(rows):
        others = points[[s for s in rows if s != r]].T
        if others.shape[1]:
            basis, _ = np.linalg.qr(others)
            out[i] = distance_to_span(points[r], basis.T)
        else:
            out[i] = np.linalg.norm(points[r])
    return out


def anchor_candidates(cooc: Cooccurrence, doc_freq=None, min_df: int = DEFAULT_MIN_ANCHOR_DF):
    """Words eligible as anchors: nonzero Q rows and, if given, document frequency >= ``min_df``."""
    ok = np.ones(cooc.vocab_size, dtype=bool)
    ok[cooc.zero_rows] = False
    if doc_freq is not None:
        ok &= np.asarray(doc_freq) >= min_df
    return np.flatnonzero(ok)


def find_anchors(cooc: Cooccurrence, k: int, doc_freq=None,
                 min_df: int = DEFAULT_MIN_ANCHOR_DF,
                 projection_dim: int | None = DEFAULT_PROJECTION_DIM,
                 seed: int | None = 0) -> AnchorSet:
    """Run :func:`fast_anchor_words` on the (projected) rows of ``cooc.q_bar``.

    The random projection is skipped when ``projection_dim`` is None or not
    smaller than the vocabulary size.
    """
    candidates = anchor_candidates(cooc, doc_freq, min_df)
    if k > candidates.size:
        raise ValueError(f"only {candidates.size} anchor candidates for k={k}; "
                         "lower the anchor document-frequency cutoff")
    rows = cooc.q_bar[candidates]
    use_projection = projection_dim is not None and projection_dim < cooc.vocab_size
    points = random_projection(rows, projection_dim or cooc.vocab_size, seed,
                               disabled=not use_projection)
    result = fast_anchor_words(points, k, candidates)
    logger.info("selected %d anchors from %d candidates (projection %s)", k, candidates.size,
                projection_dim if use_projection else "off")
    return AnchorSet(indices=result.indices, span_distances=result.span_distances,
                     projection_dim=projection_dim if use_projection else None, seed=seed,
                     candidates=candidates, initial_indices=result.initial_indices,
                     initial_distances=result.initial_distances)


def write_anchors(path: str | os.PathLike, anchors: AnchorSet, vocab=None) -> None:
    """One line per anchor: ``rank<TAB>word_index<TAB>word<TAB>span_distance``."""
    with open(path, "w", encoding="utf-8") as fh:
        for rank, (w, dist) in enumerate(zip(anchors.indices, anchors.span_distances)):
            word = vocab[w] if vocab is not None else str(w)
            fh.write(f"{rank}\t{w}\t{word}\t{float(dist)!r}\n")


def read_anchors(path: str | os.PathLike) -> AnchorSet:
    indices, dists = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            if int(fields[0]) != len(indices):
                raise ValueError(f"{path}:{lineno}: ranks must be 0, 1, 2, ... in order")
            indices.append(int(fields[1]))
            dists.append(float(fields[3]))
    indices = np.asarray(indices, dtype=np.int64)
    return AnchorSet(indices=indices, span_distances=np.asarray(dists), projection_dim=None,
                     seed=None, candidates=np.sort(indices))
