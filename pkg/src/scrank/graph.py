"""Directed graphs over dense integer ids, edge-list ingestion and the
unreciprocated arc set.

Adjacency is stored in CSR form in both directions: ``out_ptr/out_idx`` for
successors and ``in_ptr/in_idx`` for predecessors. Neighbor lists are sorted,
so every per-node reduction walks neighbors in a fixed order.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class EdgeListError(ValueError):
    """Malformed edge-list input."""

    def __init__(self, path, lineno: int, line: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}, line {lineno}: expected '<src> <dst>', got {line.rstrip()!r}")


@dataclass(frozen=True)
class LoadStats:
    lines: int = 0
    arcs_read: int = 0
    duplicates_collapsed: int = 0
    self_loops_dropped: int = 0


def _csr(rows: np.ndarray, n: int) -> np.ndarray:
    counts = np.bincount(rows, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Immutable simple digraph on nodes ``0..n-1``.

    Build with :meth:`from_arcs` or :func:`load_edge_list`; the constructor
    trusts its arguments.
    """

    out_ptr: np.ndarray
    out_idx: np.ndarray
    in_ptr: np.ndarray
    in_idx: np.ndarray
    labels: tuple[str, ...]
    load_stats: LoadStats | None = field(default=None, compare=False)

    @classmethod
    def from_arcs(cls, src, dst, n: int | None = None,
                  labels: Sequence[str] | None = None) -> "DirectedGraph":
        """Build from parallel arc arrays, collapsing duplicates and dropping
        self-loops."""
        g, _, _ = _build(cls, np.asarray(src, dtype=np.int64),
                         np.asarray(dst, dtype=np.int64), n, labels)
        return g

    @property
    def n(self) -> int:
        return len(self.out_ptr) - 1

    @property
    def m(self) -> int:
        return len(self.out_idx)

    @cached_property
    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    def successors(self, v: int) -> np.ndarray:
        return self.out_idx[self.out_ptr[v]:self.out_ptr[v + 1]]

    def predecessors(self, v: int) -> np.ndarray:
        return self.in_idx[self.in_ptr[v]:self.in_ptr[v + 1]]

    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(src, dst)`` arrays in (src, dst) lexicographic order."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.out_degree())
        return src, self.out_idx.copy()

    def has_arc(self, u: int, v: int) -> bool:
        nb = self.successors(u)
        k = np.searchsorted(nb, v)
        return bool(k < len(nb) and nb[k] == v)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, m={self.m})"


class ArcSet(DirectedGraph):
    """The unreciprocated arcs of a graph, as a graph in its own right."""

    @cached_property
    def indeg(self) -> np.ndarray:
        return self.in_degree()

    @cached_property
    def outdeg(self) -> np.ndarray:
        return self.out_degree()


def _build(cls, src: np.ndarray, dst: np.ndarray, n: int | None,
           labels: Sequence[str] | None):
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same length")
    if n is None:
        n = len(labels) if labels is not None else (
            int(max(src.max(), dst.max())) + 1 if len(src) else 0)
    if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
        raise ValueError("arc endpoint out of range [0, n)")
    loops = src == dst
    n_loops = int(loops.sum())
    src, dst = src[~loops], dst[~loops]
    keys = np.unique(src * n + dst) if len(src) else np.empty(0, dtype=np.int64)
    n_dups = len(src) - len(keys)
    s, d = (keys // n, keys % n) if n else (keys, keys)
    out_ptr = _csr(s, n)
    out_idx = d.copy()
    order = np.lexsort((s, d))
    in_idx = s[order]
    in_ptr = _csr(d, n)
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    else:
        labels = tuple(labels)
        if len(labels) != n:
            raise ValueError(f"got {len(labels)} labels for {n} nodes")
    for a in (out_ptr, out_idx, in_ptr, in_idx):
        a.setflags(write=False)
    g = cls(out_ptr, out_idx, in_ptr, in_idx, labels)
    return g, n_dups, n_loops


def load_edge_list(path: str | os.PathLike) -> DirectedGraph:
    """Read a whitespace-separated ``src dst`` edge list.

    Lines starting with ``#`` and blank lines are skipped. Labels are
    arbitrary tokens, numbered in order of first appearance.
    """
    ids: dict[str, int] = {}
    src: list[int] = []
    dst: list[int] = []
    nlines = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            nlines += 1
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 2:
                raise EdgeListError(path, lineno, line)
            a = ids.setdefault(tok[0], len(ids))
            b = ids.setdefault(tok[1], len(ids))
            src.append(a)
            dst.append(b)
    g, dups, loops = _build(DirectedGraph, np.asarray(src, dtype=np.int64),
                            np.asarray(dst, dtype=np.int64), len(ids), list(ids))
    stats = LoadStats(nlines, len(src), dups, loops)
    if dups or loops:
        log.info("%s: collapsed %d duplicate arcs, dropped %d self-loops", path, dups, loops)
    object.__setattr__(g, "load_stats", stats)
    return g


def write_edge_list(g: DirectedGraph, path: str | os.PathLike,
                    header: Iterable[str] = ()) -> None:
    src, dst = g.arcs()
    lab = g.labels
    with open(path, "w", encoding="utf-8") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        for u, v in zip(src.tolist(), dst.tolist()):
            fh.write(f"{lab[u]} {lab[v]}\n")


def unreciprocated(g: DirectedGraph) -> ArcSet:
    """Arcs ``(u, v)`` of ``g`` whose reverse ``(v, u)`` is absent."""
    src, dst = g.arcs()
    n = g.n
    keys = src * n + dst  # sorted, since arcs() is lexicographic
    back = np.searchsorted(keys, dst * n + src)
    back = np.minimum(back, max(len(keys) - 1, 0))
    has_back = keys[back] == dst * n + src if len(keys) else np.zeros(0, dtype=bool)
    keep = ~has_back
    a, _, _ = _build(ArcSet, src[keep], dst[keep], n, g.labels)
    return a


@dataclass(frozen=True)
class DegreeStats:
    indeg: np.ndarray
    outdeg: np.ndarray
    max_in: int
    max_out: int
    mean_in: float
    mean_out: float
    hist_in: np.ndarray   # hist_in[k] = number of nodes with in-degree k
    hist_out: np.ndarray


def degree_stats(a: DirectedGraph) -> DegreeStats:
    indeg = a.in_degree()
    outdeg = a.out_degree()
    n = a.n
    return DegreeStats(
        indeg=indeg,
        outdeg=outdeg,
        max_in=int(indeg.max()) if n else 0,
        max_out=int(outdeg.max()) if n else 0,
        mean_in=float(indeg.mean()) if n else 0.0,
        mean_out=float(outdeg.mean()) if n else 0.0,
        hist_in=np.bincount(indeg),
        hist_out=np.bincount(outdeg),
    )


def reciprocated_pairs(g: DirectedGraph, a: ArcSet | None = None) -> int:
    if a is None:
        a = unreciprocated(g)
    return (g.m - a.m) // 2


def summary(g: DirectedGraph, a: ArcSet | None = None) -> str:
    """One-line record: node count, arc count, |A| and reciprocity."""
    if a is None:
        a = unreciprocated(g)
    recip = (g.m - a.m) / g.m if g.m else 0.0
    return f"n={g.n} m={g.m} unreciprocated={a.m} reciprocity={recip:.6f}"
