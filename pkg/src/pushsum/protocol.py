"""Per-agent push-sum protocol logic.

Covers both variants: the conventional ratio protocol (mass and weight scaled
by the same coefficients every round) and the confidential variant, which
encodes initial values into fractional mass, transmits uniform-random mass
shares for the first K+1 rounds, and switches to weighted shares afterwards.

All functions here are pure given (state, inbox, rng draws); agents within a
round share no mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError
from .graphs import EdgeSet


@dataclass(frozen=True)
class ProtocolParams:
    """Global protocol constants known to every agent.

    n: agent count; [a, b]: public bounds on initial values; epsilon: lower
    bound of the open interval from which coupling weights are drawn; big_k:
    number of randomized rounds (rounds 0..big_k use uniform mass shares).
    """

    n: int
    a: float
    b: float
    epsilon: float = 0.05
    big_k: int = 10

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigurationError(f"n must be an integer >= 2, got {self.n!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ConfigurationError(f"bounds must satisfy a < b, got a={self.a}, b={self.b}")
        if not (0.0 < self.epsilon < 1.0):
            raise ConfigurationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not isinstance(self.big_k, int) or self.big_k < 0:
            raise ConfigurationError(f"big_k must be a non-negative integer, got {self.big_k!r}")

    def require_encoding(self) -> None:
        """The fractional encoding divides by n - 2, so it needs n >= 3."""
        if self.n < 3:
            raise ConfigurationError(
                f"the confidential encoding needs n >= 3 agents, got n={self.n}")


@dataclass(frozen=True)
class AgentState:
    """Mass/weight pair of one agent. The estimate is decoded on demand."""
    agent_id: int
    s: float
    w: float


@dataclass(frozen=True)
class RoundMessage:
    """One directed transmission for round `round`: sender -> receiver."""
    round: int
    sender: int
    receiver: int
    delta_s: float
    delta_w: float


def frac(x: float) -> float:
    """Fractional part x - floor(x), always in [0, 1)."""
    if not math.isfinite(x):
        raise ValueError(f"frac needs a finite input, got {x!r}")
    r = x - math.floor(x)
    return 0.0 if r >= 1.0 else r


def frac_array(x: np.ndarray) -> np.ndarray:
    """Vectorized fractional part; result strictly below 1 despite rounding."""
    r = x - np.floor(x)
    return np.where(r >= 1.0, 0.0, r)


def encode_initial(x0: float, params: ProtocolParams) -> float:
    """Map an initial value in [a, b] to the starting mass in [1/n^2, (n-1)/n^2]."""
    params.require_encoding()
    if not (params.a <= x0 <= params.b):
        raise ValueError(f"initial value {x0} outside the public bounds [{params.a}, {params.b}]")
    n = params.n
    return 1.0 / n**2 + (n - 2) * (x0 - params.a) / ((params.b - params.a) * n**2)


def decode_estimate(s: float, w: float, params: ProtocolParams) -> float:
    """Invert the fractional encoding of a mass/weight pair into an estimate.

    Exact inverse of `encode_initial` when w == 1 and the mass is a fresh
    encoding; during randomized rounds the result is decoded noise.
    """
    params.require_encoding()
    if not (w > 0.0):
        raise ValueError(f"weight must be positive, got {w}")
    n = params.n
    return (params.b - params.a) / (n - 2) * (n * frac(n * s / w) - 1.0) + params.a


def decode_estimates(s: np.ndarray, w: np.ndarray, params: ProtocolParams) -> np.ndarray:
    """Vectorized `decode_estimate` over state arrays."""
    n = params.n
    coef = (params.b - params.a) / (n - 2)
    return coef * (n * frac_array(n * s / w) - 1.0) + params.a


def gen_weights(rng, recipients: Iterable[int], epsilon: float) -> dict[int, float]:
    """Draw random coupling weights for `recipients` (out-neighbors plus self).

    Each weight lies strictly in (epsilon, 1) and the set sums to 1 within
    float rounding: with m recipients, draw m iid uniforms u and set
    p = epsilon + (1 - m*epsilon) * u / sum(u).  A single recipient gets
    exactly 1.0.  Keys are returned in ascending id order, which is also the
    order in which the uniforms are consumed from `rng`.
    """
    ids = sorted(int(r) for r in recipients)
    m = len(ids)
    if m == 0:
        raise ConfigurationError("weight generation needs at least one recipient")
    if len(set(ids)) != m:
        raise ConfigurationError(f"duplicate recipient ids: {ids}")
    if not (m * epsilon < 1.0):
        raise ConfigurationError(
            f"epsilon={epsilon} infeasible for {m} recipients (needs m*epsilon < 1)")
    u = rng.random(m)
    if m == 1:
        return {ids[0]: 1.0}
    ratio = u / u.sum()
    p = epsilon + (1.0 - m * epsilon) * ratio
    return {i: float(v) for i, v in zip(ids, p)}


def make_outgoing_confidential(
    state: AgentState,
    out_nbrs: Iterable[int],
    k: int,
    params: ProtocolParams,
    rng,
) -> tuple[list[RoundMessage], float, float]:
    """Produce one round of outgoing messages plus the retained self shares.

    Weight shares are p * w for every recipient in all rounds.  Mass shares
    are independent uniforms in [0, 1) while k <= big_k, with the self share
    frac(s - sum(sent)) absorbing the residue; afterwards they are p * s.
    Returns (messages ordered by receiver id, self_delta_s, self_delta_w).
    """
    out = sorted(int(j) for j in out_nbrs)
    me = state.agent_id
    if me in out:
        raise ValueError(f"agent {me} cannot be its own out-neighbor")
    weights = gen_weights(rng, out + [me], params.epsilon)
    self_dw = weights[me] * state.w
    msgs: list[RoundMessage] = []
    if k <= params.big_k:
        draws = rng.random(len(out))
        for j, ds in zip(out, draws):
            msgs.append(RoundMessage(round=k, sender=me, receiver=j,
                                     delta_s=float(ds), delta_w=weights[j] * state.w))
        self_ds = frac(state.s - float(np.sum(draws)))
    else:
        for j in out:
            msgs.append(RoundMessage(round=k, sender=me, receiver=j,
                                     delta_s=weights[j] * state.s,
                                     delta_w=weights[j] * state.w))
        self_ds = weights[me] * state.s
    return msgs, self_ds, self_dw


def apply_incoming_confidential(
    state: AgentState,
    inbox: Sequence[RoundMessage],
    self_delta_s: float,
    self_delta_w: float,
    k: int,
    params: ProtocolParams,
) -> AgentState:
    """Fold one round's inbox into the agent state.

    Mass shares are accumulated in ascending sender order, the self share is
    added last, and a single frac is applied while k <= big_k; weights are a
    plain sum in every round.
    """
    for msg in inbox:
        if msg.receiver != state.agent_id:
            raise ValueError(
                f"message addressed to {msg.receiver} in agent {state.agent_id}'s inbox")
    acc_s = 0.0
    acc_w = 0.0
    for msg in sorted(inbox, key=lambda m: m.sender):
        acc_s += msg.delta_s
        acc_w += msg.delta_w
    s_new = acc_s + self_delta_s
    if k <= params.big_k:
        s_new = frac(s_new)
    return AgentState(agent_id=state.agent_id, s=s_new, w=acc_w + self_delta_w)


def conventional_step(
    states: Sequence[AgentState],
    weight_matrix: np.ndarray,
    edge_set: EdgeSet | None = None,
) -> list[AgentState]:
    """One synchronous round of the conventional protocol: s' = P s, w' = P w.

    P must be column-stochastic; if `edge_set` is given, its off-diagonal
    nonzero pattern must be covered by the edges.
    """
    n = len(states)
    ids = [st.agent_id for st in states]
    if ids != list(range(1, n + 1)):
        raise ValueError(f"states must be ordered by agent id 1..{n}, got {ids}")
    P = np.asarray(weight_matrix, dtype=float)
    if P.shape != (n, n):
        raise ValueError(f"weight matrix shape {P.shape} does not match {n} agents")
    if np.any(P < 0.0):
        raise ValueError("weight matrix has negative entries")
    colsums = P.sum(axis=0)
    if np.any(np.abs(colsums - 1.0) > 1e-12):
        bad = int(np.argmax(np.abs(colsums - 1.0)))
        raise ValueError(f"column {bad + 1} sums to {colsums[bad]!r}, not 1")
    if edge_set is not None:
        for i in range(n):
            for j in range(n):
                if i != j and P[i, j] != 0.0 and (i + 1, j + 1) not in edge_set:
                    raise ValueError(f"nonzero weight on absent edge ({i + 1}, {j + 1})")
    s = P @ np.array([st.s for st in states])
    w = P @ np.array([st.w for st in states])
    return [AgentState(agent_id=i + 1, s=float(s[i]), w=float(w[i])) for i in range(n)]
