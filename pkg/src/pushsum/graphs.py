"""Time-varying directed communication graphs and benchmark round schedules.

An edge is a (receiver, sender) pair of 1-based agent ids: (i, j) means agent
j can transmit to agent i.  Edges inside a round are kept in lexicographic
(receiver, sender) order so that incidence-matrix columns and transcripts are
reproducible.  Schedules are immutable after construction and safe to share
across concurrent readers.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidEdgeError

APERIODIC = "aperiodic-explicit"


class EdgeSet:
    """Ordered, validated set of directed edges for a single round.

    The l-th edge (0-based) corresponds to the l-th column of the incidence
    matrix.  No self-loops, no duplicates, endpoints in 1..n_agents.
    """

    __slots__ = ("n_agents", "edges", "_members")

    def __init__(self, edges: Iterable[Sequence[int]], n_agents: int):
        n = int(n_agents)
        if n < 1:
            raise ConfigurationError(f"n_agents must be >= 1, got {n}")
        canon = []
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            if i == j:
                raise InvalidEdgeError(f"self edge ({i}, {j}) is not allowed")
            if not (1 <= i <= n) or not (1 <= j <= n):
                raise InvalidEdgeError(f"edge ({i}, {j}) has an endpoint outside 1..{n}")
            canon.append((i, j))
        canon.sort()
        for prev, cur in zip(canon, canon[1:]):
            if prev == cur:
                raise InvalidEdgeError(f"duplicate edge {cur}")
        self.n_agents = n
        self.edges: tuple[tuple[int, int], ...] = tuple(canon)
        self._members = frozenset(canon)

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def __contains__(self, edge) -> bool:
        return tuple(edge) in self._members

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeSet):
            return NotImplemented
        return self.n_agents == other.n_agents and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.n_agents, self.edges))

    def __repr__(self) -> str:
        return f"EdgeSet(n_agents={self.n_agents}, edges={list(self.edges)})"

    def out_neighbors(self, agent: int) -> tuple[int, ...]:
        """Agents that receive from `agent`, ascending."""
        return tuple(i for (i, j) in self.edges if j == agent)

    def in_neighbors(self, agent: int) -> tuple[int, ...]:
        """Agents that send to `agent`, ascending."""
        return tuple(sorted(j for (i, j) in self.edges if i == agent))

    def out_degree(self, agent: int) -> int:
        return sum(1 for (_, j) in self.edges if j == agent)

    def in_degree(self, agent: int) -> int:
        return sum(1 for (i, _) in self.edges if i == agent)

    def max_out_degree(self) -> int:
        counts = [0] * (self.n_agents + 1)
        for _, j in self.edges:
            counts[j] += 1
        return max(counts)


def incidence_matrix(edge_set: EdgeSet, n: int | None = None) -> np.ndarray:
    """N x E incidence matrix: column l has +1 at the receiver row and -1 at
    the sender row of the l-th edge; every column sums to zero."""
    n = edge_set.n_agents if n is None else int(n)
    for i, j in edge_set:
        if i > n or j > n:
            raise InvalidEdgeError(f"edge ({i}, {j}) has an endpoint outside 1..{n}")
    mat = np.zeros((n, len(edge_set)), dtype=np.int64)
    for l, (i, j) in enumerate(edge_set):
        mat[i - 1, l] = 1
        mat[j - 1, l] = -1
    return mat


class GraphSchedule:
    """Deterministic map from round index k >= 0 to an EdgeSet.

    A periodic schedule cycles through `rounds` with period == len(rounds).
    An aperiodic-explicit schedule plays `rounds` once as a prefix and then
    repeats the final edge set forever (the terminal cycle); its recurring
    edge set is that final set.
    """

    def __init__(self, n_agents: int, rounds: Sequence[EdgeSet], period: int | str,
                 name: str = "custom"):
        rounds = tuple(rounds)
        if not rounds:
            raise ConfigurationError("a schedule needs at least one round")
        n = int(n_agents)
        for es in rounds:
            if es.n_agents != n:
                raise ConfigurationError(
                    f"edge set built for n={es.n_agents} used in a schedule with n={n}")
        if period == APERIODIC:
            self.period: int | None = None
        else:
            p = int(period)
            if p != len(rounds):
                raise ConfigurationError(
                    f"period {p} does not match the {len(rounds)} supplied rounds")
            self.period = p
        self.n_agents = n
        self.rounds = rounds
        self.name = name

    @property
    def is_periodic(self) -> bool:
        return self.period is not None

    def pattern_index(self, k: int) -> int:
        """Index into `rounds` used for round k (the engine's cache key)."""
        if k < 0:
            raise ValueError(f"round index must be >= 0, got {k}")
        if self.period is not None:
            return k % self.period
        return min(k, len(self.rounds) - 1)

    def edges_at(self, k: int) -> EdgeSet:
        """Edge set for round k; a pure function of k."""
        return self.rounds[self.pattern_index(k)]

    def max_out_degree(self) -> int:
        return max(es.max_out_degree() for es in self.rounds)

    def to_dict(self) -> dict:
        return {
            "n": self.n_agents,
            "period": self.period if self.period is not None else APERIODIC,
            "rounds": [[list(e) for e in es] for es in self.rounds],
        }

    def __repr__(self) -> str:
        per = self.period if self.period is not None else APERIODIC
        return f"GraphSchedule(name={self.name!r}, n={self.n_agents}, period={per})"


def infinite_edge_set(schedule: GraphSchedule) -> EdgeSet:
    """Edges that recur at infinitely many rounds.

    For a periodic schedule this is the union over one period; for an
    aperiodic-explicit schedule it is the terminal (repeated) edge set.
    """
    if schedule.is_periodic:
        union = {e for es in schedule.rounds for e in es}
        return EdgeSet(sorted(union), schedule.n_agents)
    return schedule.rounds[-1]


@dataclass(frozen=True)
class ScheduleCheck:
    """Result of the connectivity / recurrence-window checks."""
    strongly_connected: bool
    t_bound: int | None


def _reachable(adj: list[list[int]], start: int, n: int) -> bool:
    seen = [False] * n
    seen[start] = True
    queue = deque([start])
    count = 1
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == n


def verify_assumptions(schedule: GraphSchedule) -> ScheduleCheck:
    """Check strong connectivity of the recurring edge set and find the
    smallest window length T such that every recurring edge appears in every
    window of T consecutive rounds (None if no such T exists)."""
    einf = infinite_edge_set(schedule)
    n = schedule.n_agents
    fwd: list[list[int]] = [[] for _ in range(n)]
    bwd: list[list[int]] = [[] for _ in range(n)]
    for i, j in einf:
        fwd[j - 1].append(i - 1)
        bwd[i - 1].append(j - 1)
    connected = n == 1 or (len(einf) > 0 and _reachable(fwd, 0, n) and _reachable(bwd, 0, n))

    required = set(einf)
    if schedule.is_periodic:
        max_t = schedule.period
        n_starts = schedule.period
    else:
        max_t = len(schedule.rounds) + 1
        n_starts = len(schedule.rounds) + 1
    t_bound = None
    for t in range(1, max_t + 1):
        ok = True
        for start in range(n_starts):
            window: set[tuple[int, int]] = set()
            for k in range(start, start + t):
                window.update(schedule.edges_at(k).edges)
            if not required <= window:
                ok = False
                break
        if ok:
            t_bound = t
            break
    return ScheduleCheck(strongly_connected=connected, t_bound=t_bound)


def ring_schedule(n: int) -> GraphSchedule:
    """Alternating ring on n agents, three out-neighbors per agent.

    On even rounds agent i sends to the next three agents around the ring;
    on odd rounds to the previous three (indices wrap modulo n, labels are
    1-based).
    """
    if n < 5:
        raise ConfigurationError(f"ring schedule needs n >= 5, got {n}")
    even = [((i + d - 1) % n + 1, i) for i in range(1, n + 1) for d in (1, 2, 3)]
    odd = [((i - d - 1) % n + 1, i) for i in range(1, n + 1) for d in (1, 2, 3)]
    return GraphSchedule(n, (EdgeSet(even, n), EdgeSet(odd, n)), period=2, name=f"ring{n}")


_ALTERNATING5_EVEN = ((2, 1), (3, 2), (4, 3), (5, 4), (1, 5))
_ALTERNATING5_ODD = ((3, 1), (4, 2), (5, 3), (1, 4), (2, 5))


def builtin_schedule(name: str, **params) -> GraphSchedule:
    """Construct a named benchmark schedule.

    "alternating5" is two interleaved directed 5-cycles (stride 1 on even
    rounds, stride 2 on odd rounds); "ring1000" is `ring_schedule(1000)`;
    "custom" takes explicit `n`, `rounds`, and `period` keyword arguments.
    """
    if name == "alternating5":
        return GraphSchedule(
            5,
            (EdgeSet(_ALTERNATING5_EVEN, 5), EdgeSet(_ALTERNATING5_ODD, 5)),
            period=2,
            name="alternating5",
        )
    if name == "ring1000":
        sched = ring_schedule(1000)
        sched.name = "ring1000"
        return sched
    if name == "custom":
        missing = {"n", "rounds", "period"} - params.keys()
        if missing:
            raise ConfigurationError(f"custom schedule missing parameters: {sorted(missing)}")
        n = int(params["n"])
        rounds = [EdgeSet(es, n) for es in params["rounds"]]
        return GraphSchedule(n, rounds, params["period"], name=params.get("name", "custom"))
    raise ConfigurationError(f"unknown schedule name {name!r}")


def load_schedule(source: str | Path | dict) -> GraphSchedule:
    """Load a schedule from a JSON file or an equivalent dict.

    Format: {"n": N, "period": p | "aperiodic-explicit",
             "rounds": [[[receiver, sender], ...], ...]} with 1-based ids.
    A {"name": ...} dict selects a builtin schedule instead.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            source = json.load(fh)
    if not isinstance(source, dict):
        raise ConfigurationError("schedule source must be a mapping or a path to one")
    if "name" in source and source["name"] != "custom":
        return builtin_schedule(source["name"])
    return builtin_schedule("custom", **{k: v for k, v in source.items() if k != "name"})
