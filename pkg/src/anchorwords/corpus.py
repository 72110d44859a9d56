"""Bag-of-words corpora in the UCI docword/vocab format.

Documents are held as rows of a CSR count matrix (documents x words). Word
indices are 0-based internally; the 1-based UCI convention is confined to
the reader and writer in this module.
"""
from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Invalid corpus contents."""


class ParseError(CorpusError):
    """Malformed docword stream. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class IndexOutOfRangeError(ParseError, IndexError):
    """A docID or wordID outside the declared header bounds."""


class VocabularyError(CorpusError):
    """Vocabulary inconsistent with the docword header."""


@dataclass(frozen=True, eq=False)
class SparseCorpus:
    """Immutable bag-of-words corpus.

    Attributes
    ----------
    counts : scipy.sparse.csr_matrix
        ``num_docs x vocab_size`` int64 count matrix with sorted indices and
        no stored zeros.
    vocab : tuple of str
        Word strings; ``vocab[i]`` names column ``i``.
    """

    counts: sp.csr_matrix
    vocab: tuple

    def __post_init__(self):
        counts = sp.csr_matrix(self.counts, dtype=np.int64)
        counts.sum_duplicates()
        counts.eliminate_zeros()
        counts.sort_indices()
        if counts.nnz and counts.data.min() <= 0:
            raise CorpusError("word counts must be strictly positive")
        vocab = tuple(self.vocab)
        if len(vocab) != counts.shape[1]:
            raise VocabularyError(
                f"vocabulary has {len(vocab)} entries but corpus has {counts.shape[1]} columns")
        if any(not w for w in vocab):
            raise VocabularyError("vocabulary contains an empty word")
        if len(set(vocab)) != len(vocab):
            raise VocabularyError("vocabulary words are not distinct")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "vocab", vocab)

    @property
    def num_docs(self) -> int:
        return self.counts.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[1]

    @property
    def doc_lengths(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel()

    @property
    def num_tokens(self) -> int:
        return int(self.counts.data.sum())

    def doc(self, d: int) -> list[tuple[int, int]]:
        """Document ``d`` as a sorted list of ``(word_index, count)``."""
        start, stop = self.counts.indptr[d], self.counts.indptr[d + 1]
        return list(zip(self.counts.indices[start:stop].tolist(),
                        self.counts.data[start:stop].tolist()))

    @property
    def docs(self) -> list[list[tuple[int, int]]]:
        return [self.doc(d) for d in range(self.num_docs)]

    def document_frequency(self) -> np.ndarray:
        """Number of documents containing each word at least once."""
        return np.bincount(self.counts.indices, minlength=self.vocab_size)

    def __eq__(self, other):
        if not isinstance(other, SparseCorpus):
            return NotImplemented
        if self.counts.shape != other.counts.shape or self.vocab != other.vocab:
            return False
        return (np.array_equal(self.counts.indptr, other.counts.indptr)
                and np.array_equal(self.counts.indices, other.counts.indices)
                and np.array_equal(self.counts.data, other.counts.data))

    __hash__ = None

    @classmethod
    def from_docs(cls, docs: Iterable[Iterable[tuple[int, int]]], vocab) -> "SparseCorpus":
        """Build from per-document ``(word_index, count)`` pairs; duplicates are summed."""
        rows, cols, vals = [], [], []
        num_docs = 0
        for d, doc in enumerate(docs):
            num_docs = d + 1
            for w, c in doc:
                rows.append(d)
                cols.append(w)
                vals.append(c)
        vocab = tuple(vocab)
        counts = sp.coo_matrix((np.asarray(vals, dtype=np.int64), (rows, cols)),
                               shape=(num_docs, len(vocab)))
        return cls(counts.tocsr(), vocab)


def _open_text(stream_or_path, mode="r"):
    if isinstance(stream_or_path, (str, os.PathLike)):
        return open(stream_or_path, mode, encoding="utf-8"), True
    return stream_or_path, False


def _read_header(lines, name):
    values = []
    lineno = 0
    for line in lines:
        lineno += 1
        text = line.strip()
        try:
            values.append(int(text))
        except ValueError:
            raise ParseError(f"expected integer {name[len(values)]} in header, got {text!r}",
                             lineno) from None
        if len(values) == 3:
            return values
    raise ParseError(f"header truncated: expected 3 lines (M, V, NNZ), got {len(values)}",
                     lineno + 1)


def _locate_bad_line(body_lines, first_lineno):
    for offset, line in enumerate(body_lines):
        fields = line.split()
        if len(fields) != 3:
            return first_lineno + offset, f"expected 'docID wordID count', got {line.strip()!r}"
        try:
            [int(f) for f in fields]
        except ValueError:
            return first_lineno + offset, f"non-integer field in {line.strip()!r}"
    return None, None


def parse_uci_bag_of_words(docword_stream: TextIO | str | os.PathLike,
                           vocab_stream: TextIO | str | os.PathLike) -> SparseCorpus:
    """Parse a UCI ``docword`` stream and its ``vocab`` stream.

    Duplicate ``(doc, word)`` entries are summed. Documents with no entries
    are kept as empty rows; use :func:`filter_short_documents` to drop them.

    Raises
    ------
    ParseError
        Malformed header or entry line, or a non-positive count.
    IndexOutOfRangeError
        ``docID > M`` or ``wordID > V`` (or either below 1).
    VocabularyError
        Vocabulary line count differs from ``V``.
    """
    fh, close = _open_text(docword_stream)
    try:
        lines = fh.read().splitlines()
    finally:
        if close:
            fh.close()

    num_docs, vocab_size, nnz = _read_header(lines[:3], ("M", "V", "NNZ"))
    if num_docs < 0 or vocab_size < 0 or nnz < 0:
        raise ParseError("header values must be nonnegative", 1)

    body = lines[3:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != nnz:
        raise ParseError(f"header declares NNZ={nnz} entries but found {len(body)}",
                         3 if len(body) < nnz else 4 + nnz)
    try:
        flat = np.array(" ".join(body).split(), dtype=np.int64)
        ok = flat.size == 3 * nnz
    except ValueError:
        ok = False
    if not ok:
        lineno, msg = _locate_bad_line(body, 4)
        raise ParseError(msg or "malformed entry lines", lineno)
    triples = flat.reshape(nnz, 3)
    doc_ids, word_ids, counts = triples[:, 0], triples[:, 1], triples[:, 2]

    for column, bound, label in ((doc_ids, num_docs, "docID"), (word_ids, vocab_size, "wordID")):
        bad = np.flatnonzero((column < 1) | (column > bound))
        if bad.size:
            i = bad[0]
            raise IndexOutOfRangeError(f"{label} {column[i]} outside [1, {bound}]", 4 + int(i))
    bad = np.flatnonzero(counts <= 0)
    if bad.size:
        i = bad[0]
        raise ParseError(f"count must be positive, got {counts[i]}", 4 + int(i))

    vh, close = _open_text(vocab_stream)
    try:
        vocab = vh.read().splitlines()
    finally:
        if close:
            vh.close()
    while vocab and not vocab[-1].strip():
        vocab.pop()
    vocab = [w.strip() for w in vocab]
    if len(vocab) != vocab_size:
        raise VocabularyError(f"vocabulary has {len(vocab)} lines but header declares V={vocab_size}")

    matrix = sp.coo_matrix((counts, (doc_ids - 1, word_ids - 1)),
                           shape=(num_docs, vocab_size)).tocsr()
    corpus = SparseCorpus(matrix, tuple(vocab))
    logger.info("parsed corpus: M=%d V=%d tokens=%d", corpus.num_docs, corpus.vocab_size,
                corpus.num_tokens)
    return corpus


def write_uci_bag_of_words(corpus: SparseCorpus, docword_stream, vocab_stream) -> None:
    """Write ``corpus`` in UCI format (1-based IDs, one entry per nonzero)."""
    counts = corpus.counts.tocoo()
    order = np.lexsort((counts.col, counts.row))
    buf = io.StringIO()
    buf.write(f"{corpus.num_docs}\n{corpus.vocab_size}\n{counts.nnz}\n")
    if counts.nnz:
        table = np.column_stack((counts.row[order] + 1, counts.col[order] + 1, counts.data[order]))
        np.savetxt(buf, table, fmt="%d")
    fh, close = _open_text(docword_stream, "w")
    try:
        fh.write(buf.getvalue())
    finally:
        if close:
            fh.close()
    vh, close = _open_text(vocab_stream, "w")
    try:
        vh.write("".join(w + "\n" for w in corpus.vocab))
    finally:
        if close:
            vh.close()


def prune_vocabulary(corpus: SparseCorpus, min_df: int = 1,
                     max_df_fraction: float = 1.0) -> tuple[SparseCorpus, dict[int, int]]:
    """Drop words by document frequency and reindex the survivors densely.

    A word is kept when ``min_df <= df <= max_df_fraction * M``. Surviving
    words keep their relative order.

    Returns
    -------
    corpus : SparseCorpus
    index_map : dict
        Old word index -> new word index, for surviving words only.
    """
    if not 0.0 < max_df_fraction <= 1.0:
        raise ValueError(f"max_df_fraction must lie in (0, 1], got {max_df_fraction}")
    df = corpus.document_frequency()
    keep = (df >= min_df) & (df <= max_df_fraction * corpus.num_docs)
    kept = np.flatnonzero(keep)
    if kept.size == 0:
        raise CorpusError("document frequency cutoffs removed every word")
    pruned = SparseCorpus(corpus.counts[:, kept], tuple(corpus.vocab[i] for i in kept))
    logger.info("pruned vocabulary %d -> %d words", corpus.vocab_size, kept.size)
    return pruned, {int(old): new for new, old in enumerate(kept)}


def filter_short_documents(corpus: SparseCorpus, min_length: int = 2) -> SparseCorpus:
    """Remove documents with fewer than ``min_length`` tokens."""
    if min_length < 2:
        raise ValueError(f"min_length must be at least 2, got {min_length}")
    keep = np.flatnonzero(corpus.doc_lengths >= min_length)
    if keep.size == 0:
        raise CorpusError(f"no document has at least {min_length} tokens")
    return SparseCorpus(corpus.counts[keep], corpus.vocab)
