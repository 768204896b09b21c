"""Communication graphs for the distributed iteration.

The iteration only needs symmetric neighbor lists; positions are kept when
the graph came from a random geometric construction so it can be drawn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import ParameterError, rng_stream


class ConnectivityError(RuntimeError):
    """Could not produce a connected graph within the attempt budget."""

    def __init__(self, attempts: int):
        super().__init__(f"no connected geometric graph within {attempts} attempts")
        self.attempts = attempts


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected graph over n sensors with sorted adjacency lists."""

    n: int
    neighbors: tuple[tuple[int, ...], ...]
    positions: np.ndarray | None = None
    attempts: int = 1

    def __post_init__(self):
        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                raise ParameterError(f"node {i} lists itself as a neighbor")
            for j in nbrs:
                if not (0 <= j < self.n):
                    raise ParameterError(f"neighbor index {j} out of range")
                if i not in self.neighbors[j]:
                    raise ParameterError(f"adjacency not symmetric at edge ({i},{j})")

    @property
    def max_degree(self) -> int:
        return max((len(nb) for nb in self.neighbors), default=0)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, nbrs in enumerate(self.neighbors):
            a[i, list(nbrs)] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency_matrix()
        return np.diag(a.sum(axis=1)) - a

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nbrs in enumerate(self.neighbors) for j in nbrs if i < j]


def _neighbors_from_adjacency(adj: np.ndarray) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple(int(j) for j in np.nonzero(adj[i])[0]) for i in range(adj.shape[0]))


def is_connected(topo: NetworkTopology) -> bool:
    """Breadth-first search reachability from node 0."""
    if topo.n == 0:
        return True
    seen = [False] * topo.n
    seen[0] = True
    frontier = [0]
    count = 1
    while frontier:
        nxt = []
        for i in frontier:
            for j in topo.neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    count += 1
                    nxt.append(j)
        frontier = nxt
    return count == topo.n


def random_geometric_graph(n: int, radius: float, seed: int,
                           max_attempts: int = 1000) -> NetworkTopology:
    """Uniform positions on the unit square, edge iff distance strictly < radius.

    Resamples positions (fresh sub-stream per attempt) until the graph is
    connected; the attempt count is recorded on the result.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not (0.0 < radius <= math.sqrt(2.0)):
        raise ParameterError(f"radius must lie in (0, sqrt(2)], got {radius}")
    for attempt in range(1, max_attempts + 1):
        gen = rng_stream(seed, attempt)
        pos = gen.random((n, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist2 = (diff ** 2).sum(axis=2)
        adj = dist2 < radius * radius
        np.fill_diagonal(adj, False)
        topo = NetworkTopology(n=n, neighbors=_neighbors_from_adjacency(adj),
                               positions=pos, attempts=attempt)
        if is_connected(topo):
            return topo
    raise ConnectivityError(max_attempts)


def from_edge_list(n: int, edges: Iterable[Sequence[int]]) -> NetworkTopology:
    """Build a topology from (i, j) pairs.

    Symmetric closure is applied, self-loops and duplicates are dropped.
    Connectivity is reported by is_connected, not enforced here.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    adj = np.zeros((n, n), dtype=bool)
    for edge in edges:
        if len(edge) != 2:
            raise ParameterError(f"malformed edge {edge!r}")
        i, j = int(edge[0]), int(edge[1])
        if not (0 <= i < n and 0 <= j < n):
            raise ParameterError(f"edge ({i},{j}) endpoint out of range for n={n}")
        if i == j:
            continue
        adj[i, j] = adj[j, i] = True
    return NetworkTopology(n=n, neighbors=_neighbors_from_adjacency(adj))


def read_edge_list(path: str | Path, n: int) -> NetworkTopology:
    """Parse the text format: one `i j` pair per line, 0-indexed; # comments."""
    edges = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParameterError(f"{path}:{line_no}: expected 'i j', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return from_edge_list(n, edges)


def write_edge_list(topo: NetworkTopology, path: str | Path) -> None:
    lines = [f"{i} {j}" for i, j in topo.edges()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
