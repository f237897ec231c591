"""Seeded generation of Erdos-Renyi, Barabasi-Albert and 2d-grid graphs with edge weights."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np

from data import defaults
from utils.errors import InvalidArgument

logger = logging.getLogger(__name__)


class GraphFamily(str, Enum):
    ER = "ER"
    BA = "BA"
    GRID = "GRID"


def parse_family(name) -> GraphFamily:
    key = str(name).strip().upper()
    if key not in GraphFamily.__members__:
        raise InvalidArgument(f"unknown graph family {name!r}; expected er, ba or grid")
    return GraphFamily[key]


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected simple graph; edges are (u, v, w) with u < v, sorted."""

    n: int
    edges: tuple
    source: int

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgument(f"graph needs at least one node, got n={self.n}")
        if not 0 <= self.source < self.n:
            raise InvalidArgument(f"source {self.source} outside [0, {self.n})")
        seen = set()
        for u, v, w in self.edges:
            if not 0 <= u < v < self.n:
                raise InvalidArgument(f"edge ({u}, {v}) is not a u < v pair of node indices")
            if (u, v) in seen:
                raise InvalidArgument(f"duplicate edge ({u}, {v})")
            if not defaults.WEIGHT_LOW <= w <= defaults.WEIGHT_HIGH:
                raise InvalidArgument(f"edge ({u}, {v}) weight {w} outside [0.2, 1.0]")
            seen.add((u, v))

    def neighbours(self):
        """Adjacency lists as {node: [(neighbour, weight), ...]} sorted by neighbour index."""
        adj = {i: [] for i in range(self.n)}
        for u, v, w in self.edges:
            adj[u].append((v, w))
            adj[v].append((u, w))
        for i in adj:
            adj[i].sort()
        return adj

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_weighted_edges_from(self.edges)
        return g

    def relabel(self, perm):
        """Return the graph with node i renamed to perm[i]."""
        edges = []
        for u, v, w in self.edges:
            a, b = perm[u], perm[v]
            edges.append((min(a, b), max(a, b), w))
        return WeightedGraph(self.n, tuple(sorted(edges)), perm[self.source])


@dataclass(frozen=True)
class DatasetSpec:
    graph_family: GraphFamily
    n: int
    count: int
    master_seed: int
    ba_attachment: int = field(default=defaults.BA_ATTACHMENT)

    def __post_init__(self):
        if self.count < 1:
            raise InvalidArgument(f"dataset count must be >= 1, got {self.count}")
        if self.n < 2:
            raise InvalidArgument(f"dataset graphs need n >= 2, got {self.n}")
        if self.ba_attachment < 1:
            raise InvalidArgument(f"BA attachment must be >= 1, got {self.ba_attachment}")


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def derive_seed(master_seed, *labels) -> int:
    """Mix a master seed with a label path into an unsigned 64-bit seed."""
    text = "/".join([str(int(master_seed))] + [str(label) for label in labels])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def graph_rng(master_seed, index) -> np.random.Generator:
    """Per-graph stream; depends only on (master_seed, index)."""
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index)])
    return np.random.Generator(np.random.Philox(seq))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

def er_probability(n) -> float:
    if n < 2:
        raise InvalidArgument(f"er_probability needs n >= 2, got {n}")
    return min(math.log2(n) / n, 0.5)


def grid_shape(n):
    """Near-square r x c factorisation with r <= c; prime n gives the 1 x n path."""
    r = 1
    for i in range(1, math.isqrt(n) + 1):
        if n % i == 0:
            r = i
    return r, n // r


def _structure(spec: DatasetSpec, rng: np.random.Generator):
    n = spec.n
    nx_seed = int(rng.integers(0, 2**32))
    if spec.graph_family is GraphFamily.ER:
        g = nx.gnp_random_graph(n, er_probability(n), seed=nx_seed)
    elif spec.graph_family is GraphFamily.BA:
        m = min(spec.ba_attachment, n - 1)
        g = nx.barabasi_albert_graph(n, m, seed=nx_seed)
    else:
        r, c = grid_shape(n)
        if r == 1 and n > 3:
            logger.debug("GRID n=%d is prime; using the 1x%d path", n, n)
        g = nx.convert_node_labels_to_integers(nx.grid_2d_graph(r, c), ordering="sorted")
    return sorted((min(u, v), max(u, v)) for u, v in g.edges())


def generate_graph(spec: DatasetSpec, index: int) -> WeightedGraph:
    """Generate graph `index` of a dataset.

    Args:
        spec: the dataset description.
        index: position in the dataset, 0 <= index < spec.count.

    Returns:
        WeightedGraph with weights uniform in [0.2, 1.0] and a uniformly drawn source,
        fully determined by (spec.master_seed, index).
    """
    if not 0 <= index < spec.count:
        raise InvalidArgument(f"index {index} outside dataset of {spec.count} graphs")
    rng = graph_rng(spec.master_seed, index)
    pairs = _structure(spec, rng)
    weights = rng.uniform(defaults.WEIGHT_LOW, defaults.WEIGHT_HIGH, size=len(pairs))
    source = int(rng.integers(0, spec.n))
    edges = tuple((u, v, float(w)) for (u, v), w in zip(pairs, weights))
    return WeightedGraph(spec.n, edges, source)


def generate_dataset(spec: DatasetSpec):
    graphs = [generate_graph(spec, i) for i in range(spec.count)]
    logger.info(
        "generated %d %s graphs with %d nodes (seed %d)",
        spec.count, spec.graph_family.value, spec.n, spec.master_seed,
    )
    return graphs
