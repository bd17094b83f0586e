"""Pixel neighbourhood graphs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NeighborhoodGraph:
    """Undirected simple graph over ``num_sites`` pixels.

    ``adjacency[i]`` is the sorted tuple of neighbours of site ``i``.
    """

    num_sites: int
    adjacency: tuple[tuple[int, ...], ...]
    degrees: np.ndarray = field(init=False, repr=False, compare=False)
    # (num_sites, max(1, n_max)) neighbour table padded with ``num_sites``,
    # so callers can gather from a state array extended by one zero column.
    padded_neighbors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        deg = np.array([len(a) for a in self.adjacency], dtype=np.int64)
        deg.setflags(write=False)
        width = max(1, int(deg.max(initial=0)))
        pad = np.full((self.num_sites, width), self.num_sites, dtype=np.intp)
        for i, nbrs in enumerate(self.adjacency):
            pad[i, : len(nbrs)] = nbrs
        pad.setflags(write=False)
        object.__setattr__(self, "degrees", deg)
        object.__setattr__(self, "padded_neighbors", pad)

    @property
    def n_max(self) -> int:
        return int(self.degrees.max(initial=0))

    @property
    def n_min(self) -> int:
        return int(self.degrees.min())

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j]

    @property
    def num_edges(self) -> int:
        return int(self.degrees.sum()) // 2

    def neighbor_sum(self, x: np.ndarray, i: int) -> float:
        return float(sum(x[j] for j in self.adjacency[i]))

    def to_json(self) -> dict:
        return {"num_sites": self.num_sites, "edges": [list(e) for e in self.edges()]}


def build_custom_graph(edges: Iterable[tuple[int, int]], num_sites: int) -> NeighborhoodGraph:
    if num_sites < 1:
        raise GraphError(f"num_sites must be positive, got {num_sites}")
    nbrs: list[set[int]] = [set() for _ in range(num_sites)]
    for edge in edges:
        i, j = (int(v) for v in edge)
        if i == j:
            raise GraphError(f"self-loop at site {i}")
        if not (0 <= i < num_sites and 0 <= j < num_sites):
            raise GraphError(f"edge ({i}, {j}) has an endpoint outside [0, {num_sites})")
        nbrs[i].add(j)
        nbrs[j].add(i)
    return NeighborhoodGraph(num_sites, tuple(tuple(sorted(s)) for s in nbrs))


def build_grid_graph(width: int, height: int, scheme: str = "N4") -> NeighborhoodGraph:
    """Row-major ``width`` x ``height`` lattice, no wrap-around.

    ``scheme`` is ``"N4"`` (orthogonal neighbours) or ``"N8"`` (plus diagonals).
    """
    if width < 1 or height < 1:
        raise GraphError(f"invalid grid dimensions {width}x{height}")
    scheme = scheme.upper()
    if scheme == "N4":
        offsets = [(0, 1), (1, 0)]
    elif scheme == "N8":
        offsets = [(0, 1), (1, 0), (1, 1), (1, -1)]
    else:
        raise GraphError(f"unknown neighbourhood scheme {scheme!r}")
    edges = []
    for r in range(height):
        for c in range(width):
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < height and 0 <= cc < width:
                    edges.append((r * width + c, rr * width + cc))
    return build_custom_graph(edges, width * height)


def graph_from_json(doc: dict) -> NeighborhoodGraph:
    return build_custom_graph([tuple(e) for e in doc.get("edges", [])], int(doc["num_sites"]))


def load_graph(path: str | Path) -> NeighborhoodGraph:
    with open(path) as fh:
        return graph_from_json(json.load(fh))
