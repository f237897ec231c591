"""Algorithm registry: the nine traced algorithms and their per-algorithm constants."""

from enum import Enum

import math


class Framework(str, Enum):
    PARALLEL = "PARALLEL"
    SEQUENTIAL = "SEQUENTIAL"


class AlgorithmId(str, Enum):
    BFS_P = "BFS_P"
    BELLMAN_FORD_P = "BELLMAN_FORD_P"
    WIDEST_P = "WIDEST_P"
    RELIABLE_P = "RELIABLE_P"
    PRIM_S = "PRIM_S"
    DIJKSTRA_S = "DIJKSTRA_S"
    DFS_S = "DFS_S"
    WIDEST_S = "WIDEST_S"
    RELIABLE_S = "RELIABLE_S"

    @property
    def framework(self):
        return Framework.PARALLEL if self.value.endswith("_P") else Framework.SEQUENTIAL

    @property
    def is_sequential(self):
        return self.framework is Framework.SEQUENTIAL

    @property
    def spec(self):
        return ALGORITHMS[self]


# ---------------------------------------------------------------------------
# Per-algorithm constants
#
#   relax:        name of the relaxation rule in utils.trace_oracle
#   source_key:   key of the source after initialise_nodes ("n" = node count)
#   unreached:    numeric value the relaxation rules see for an UNREACHED key
#   pop:          "min" / "max" priority order (sequential only)
#   label:        display name used in reports and the dashboard
# ---------------------------------------------------------------------------

ALGORITHMS = {
    AlgorithmId.BFS_P: {
        "relax": "bfs",
        "source_key": 1.0,
        "unreached": 0.0,
        "pop": None,
        "label": "BFS",
    },
    AlgorithmId.BELLMAN_FORD_P: {
        "relax": "shortest",
        "source_key": 0.0,
        "unreached": math.inf,
        "pop": None,
        "label": "Bellman-Ford",
    },
    AlgorithmId.WIDEST_P: {
        "relax": "widest",
        # stands in for the infinite source width; every weight is <= 1.0
        "source_key": 1.0,
        "unreached": 0.0,
        "pop": None,
        "label": "Widest path (par.)",
    },
    AlgorithmId.RELIABLE_P: {
        "relax": "reliable",
        "source_key": 1.0,
        "unreached": 0.0,
        "pop": None,
        "label": "Most reliable (par.)",
    },
    AlgorithmId.PRIM_S: {
        "relax": "prim",
        "source_key": 0.0,
        "unreached": math.inf,
        "pop": "min",
        "label": "Prim",
    },
    AlgorithmId.DIJKSTRA_S: {
        "relax": "shortest",
        "source_key": 0.0,
        "unreached": math.inf,
        "pop": "min",
        "label": "Dijkstra",
    },
    AlgorithmId.DFS_S: {
        "relax": "dfs",
        "source_key": "n",
        "unreached": math.inf,
        "pop": "min",
        "label": "DFS",
    },
    AlgorithmId.WIDEST_S: {
        "relax": "widest",
        "source_key": 1.0,
        "unreached": 0.0,
        "pop": "max",
        "label": "Widest path (seq.)",
    },
    AlgorithmId.RELIABLE_S: {
        "relax": "reliable",
        "source_key": 1.0,
        "unreached": 0.0,
        "pop": "max",
        "label": "Most reliable (seq.)",
    },
}

# Default base algorithm for each target in transfer and multi-task runs.
BASE_FOR_TARGET = {
    AlgorithmId.DIJKSTRA_S: AlgorithmId.PRIM_S,
    AlgorithmId.RELIABLE_S: AlgorithmId.WIDEST_S,
    AlgorithmId.BELLMAN_FORD_P: AlgorithmId.BFS_P,
    AlgorithmId.RELIABLE_P: AlgorithmId.WIDEST_P,
}


def parse_algorithm(name):
    """Resolve a CLI/config spelling ("dijkstra_s", "DIJKSTRA_S", "Dijkstra") to an AlgorithmId."""
    from utils.errors import InvalidArgument

    key = str(name).strip().upper().replace("-", "_")
    if key in AlgorithmId.__members__:
        return AlgorithmId[key]
    for algo, spec in ALGORITHMS.items():
        if spec["label"].upper() == str(name).strip().upper():
            return algo
    raise InvalidArgument(f"unknown algorithm {name!r}; expected one of {', '.join(a.value for a in AlgorithmId)}")
