"""Network graphs, Metropolis combination matrices and their spectra."""

from __future__ import annotations

import io
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInput, InvalidParameter, ParseError

TOPOLOGY_KINDS = ("line", "cycle", "complete", "random", "explicit")


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..node_count-1``.

    Edges are stored once as ``(u, v)`` with ``u < v``; self-loops are implicit
    and never stored.
    """

    node_count: int
    edges: frozenset

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidParameter("graph needs at least one node")
        for u, v in self.edges:
            if not (0 <= u < v < self.node_count):
                raise InvalidParameter(f"bad edge ({u}, {v}) for {self.node_count} nodes")

    @classmethod
    def from_edges(cls, node_count, edges):
        normalized = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                continue
            normalized.add((min(u, v), max(u, v)))
        return cls(int(node_count), frozenset(normalized))

    def neighbors(self):
        """Adjacency lists, excluding the node itself."""
        nbrs = [[] for _ in range(self.node_count)]
        for u, v in sorted(self.edges):
            nbrs[u].append(v)
            nbrs[v].append(u)
        return nbrs

    def degrees(self):
        deg = np.zeros(self.node_count, dtype=int)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self):
        adj = np.zeros((self.node_count, self.node_count), dtype=bool)
        for u, v in self.edges:
            adj[u, v] = adj[v, u] = True
        return adj

    def components(self):
        """Connected components as sorted node lists (BFS)."""
        nbrs = self.neighbors()
        seen = np.zeros(self.node_count, dtype=bool)
        comps = []
        for start in range(self.node_count):
            if seen[start]:
                continue
            seen[start] = True
            queue, comp = deque([start]), []
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in nbrs[u]:
                    if not seen[v]:
                        seen[v] = True
                        queue.append(v)
            comps.append(sorted(comp))
        return comps

    def is_connected(self):
        return len(self.components()) == 1

    def to_edge_list(self):
        """Edge-list text: one ``"u v"`` pair per line, 0-indexed."""
        return "".join(f"{u} {v}\n" for u, v in sorted(self.edges))

    @classmethod
    def from_edge_list(cls, text, node_count=None):
        edges = []
        for lineno, line in enumerate(io.StringIO(text), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected two node indices", lineno)
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        if node_count is None:
            if not edges:
                raise InvalidInput("empty edge list needs an explicit node count")
            node_count = 1 + max(max(e) for e in edges)
        return cls.from_edges(node_count, edges)


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    """Symmetric doubly-stochastic weights ``a[l, k]`` on a graph."""

    entries: np.ndarray

    @property
    def size(self):
        return self.entries.shape[0]

    @cached_property
    def lambda2(self):
        return second_largest_eigenvalue(self)

    def validate(self, atol=1e-12):
        a = self.entries
        if not np.allclose(a, a.T, rtol=0, atol=atol):
            raise InvalidParameter("combination matrix is not symmetric")
        if np.any(a < -atol):
            raise InvalidParameter("combination matrix has negative entries")
        if not np.allclose(a.sum(axis=0), 1.0, rtol=0, atol=atol):
            raise InvalidParameter("combination matrix columns do not sum to one")
        if not np.allclose(a.sum(axis=1), 1.0, rtol=0, atol=atol):
            raise InvalidParameter("combination matrix rows do not sum to one")
        return self

    def to_csv(self):
        buf = io.StringIO()
        np.savetxt(buf, self.entries, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    def save_csv(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load_csv(cls, path):
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))


def _random_graph(K, p, rng):
    edges = set()
    # Upper-triangle coin flips in row-major order keep the draw order fixed.
    for u in range(K):
        flips = rng.random(K - u - 1) < p
        for offset in np.flatnonzero(flips):
            edges.add((u, u + 1 + int(offset)))
    g = Graph(K, frozenset(edges))
    comps = g.components()
    if len(comps) > 1:
        # Join components along a random tree: a random order of the
        # components, each attached to a uniformly chosen earlier one.
        order = rng.permutation(len(comps))
        for j in range(1, len(order)):
            a = comps[order[rng.integers(j)]]
            b = comps[order[j]]
            u = a[rng.integers(len(a))]
            v = b[rng.integers(len(b))]
            edges.add((min(u, v), max(u, v)))
        g = Graph(K, frozenset(edges))
    return g


def build_topology(kind, K, seed=0, p=None, edges=None):
    """Build a connected graph.

    Parameters
    ----------
    kind : str
        One of ``line``, ``cycle``, ``complete``, ``random``, ``explicit``.
    K : int
        Number of nodes.
    seed : int
        Seed for ``random`` graphs; other kinds ignore it.
    p : float
        Edge probability for ``random``.
    edges : iterable of pairs
        Edge list for ``explicit``.
    """
    if K is None or int(K) < 1:
        raise InvalidParameter("node count must be positive")
    K = int(K)
    if kind == "line":
        g = Graph.from_edges(K, [(k, k + 1) for k in range(K - 1)])
    elif kind == "cycle":
        pairs = [(k, k + 1) for k in range(K - 1)]
        if K > 2:
            pairs.append((K - 1, 0))
        g = Graph.from_edges(K, pairs)
    elif kind == "complete":
        g = Graph.from_edges(K, [(u, v) for u in range(K) for v in range(u + 1, K)])
    elif kind == "random":
        if p is None or not (0 < p <= 1):
            raise InvalidParameter("random topology needs 0 < p <= 1")
        g = _random_graph(K, float(p), np.random.default_rng(seed))
    elif kind == "explicit":
        if edges is None:
            raise InvalidParameter("explicit topology needs an edge list")
        g = Graph.from_edges(K, edges)
        if not g.is_connected():
            raise InvalidParameter("explicit edge list does not form a connected graph")
    else:
        raise InvalidParameter(f"unknown topology kind {kind!r}")
    return g


def metropolis_weights(g):
    """Metropolis rule with neighborhood sizes counted including the node."""
    if not g.is_connected():
        raise InvalidParameter("Metropolis weights need a connected graph")
    n = g.degrees() + 1
    K = g.node_count
    a = np.zeros((K, K))
    for u, v in g.edges:
        a[u, v] = a[v, u] = 1.0 / max(n[u], n[v])
    # Diagonal from column sums so each column sums to one; symmetry makes the
    # rows agree.
    a[np.diag_indices(K)] = 1.0 - a.sum(axis=0)
    return CombinationMatrix(a)


def _entries(A):
    return A.entries if isinstance(A, CombinationMatrix) else np.asarray(A, dtype=float)


def second_largest_eigenvalue(A):
    """Largest eigenvalue of ``A`` after removing the Perron eigenvalue 1."""
    a = _entries(A)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameter("expected a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise InvalidParameter("second_largest_eigenvalue needs a symmetric matrix")
    if a.shape[0] == 1:
        return 0.0
    eig = np.linalg.eigvalsh(a)
    return float(eig[-2])


def half_lifted(A):
    """``(I + A) / 2``; same sparsity plus the diagonal, spectrum in (0, 1]."""
    a = _entries(A)
    return CombinationMatrix((np.eye(a.shape[0]) + a) / 2.0)
