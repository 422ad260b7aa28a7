"""Deterministic synchronous-round simulation engine.

Every round proceeds in two phases: all agents build their outgoing shares
from their pre-round states, then all agents fold their inboxes.  Randomness
is materialized per round from a stream derived as
SeedSequence(entropy=seed, spawn_key=(0, round)) and consumed in a fixed
agent-major order (weight uniforms for agents 1..N, then mass uniforms for
agents 1..N), so transcripts are bit-reproducible regardless of how agent
computations would be scheduled.  The initial-value stream uses spawn_key
(1, 0).

The update arithmetic matches the per-agent operations in `protocol`
expression for expression; `tests/test_engine.py` checks bit-equality
against them on replayed draws.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AuditError, ConfigurationError, InsufficientRecordError
from .graphs import GraphSchedule, ScheduleCheck, load_schedule, verify_assumptions
from .protocol import (
    AgentState,
    ProtocolParams,
    RoundMessage,
    decode_estimates,
    encode_initial,
    frac_array,
)

UNIFORM_RANDOM = "uniform-random"
RECORD_FULL = "full"
RECORD_STATES = "states-only"
_FULL_RECORD_MAX_N = 50
_SHIFT_STREAM = (1, 0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete, reproducible description of one simulation run."""

    params: ProtocolParams
    schedule: GraphSchedule
    horizon: int
    seed: int
    initial_values: Sequence[float] | str = UNIFORM_RANDOM
    algorithm: str = "confidential"
    adversary_set: frozenset[int] = frozenset()
    stop_tolerance: float = 0.0
    record: str | None = None
    override_assumptions: bool = False
    name: str = "scenario"

    def resolved_record(self) -> str:
        if self.record is not None:
            return self.record
        return RECORD_FULL if self.params.n <= _FULL_RECORD_MAX_N else RECORD_STATES

    def validate(self) -> None:
        if self.algorithm not in ("confidential", "conventional"):
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.params.n != self.schedule.n_agents:
            raise ConfigurationError(
                f"params.n={self.params.n} but schedule has {self.schedule.n_agents} agents")
        if self.algorithm == "confidential":
            self.params.require_encoding()
        if not isinstance(self.horizon, int) or self.horizon < 1:
            raise ConfigurationError(f"horizon must be a positive integer, got {self.horizon!r}")
        if self.record not in (None, RECORD_FULL, RECORD_STATES):
            raise ConfigurationError(f"unknown record mode {self.record!r}")
        if self.stop_tolerance < 0.0:
            raise ConfigurationError("stop_tolerance must be >= 0 (0 disables early stop)")
        bad = [a for a in self.adversary_set if not (1 <= a <= self.params.n)]
        if bad:
            raise ConfigurationError(f"adversary ids outside 1..{self.params.n}: {sorted(bad)}")
        if self.algorithm == "confidential":
            worst = self.schedule.max_out_degree() + 1
            if not (worst * self.params.epsilon < 1.0):
                raise ConfigurationError(
                    f"epsilon={self.params.epsilon} infeasible: an agent has "
                    f"{worst - 1} out-neighbors (needs (d+1)*epsilon < 1)")

    def to_dict(self) -> dict:
        init = self.initial_values
        if not isinstance(init, str):
            init = [float(v) for v in init]
        return {
            "name": self.name,
            "algorithm": self.algorithm,
            "n": self.params.n,
            "a": self.params.a,
            "b": self.params.b,
            "epsilon": self.params.epsilon,
            "big_k": self.params.big_k,
            "schedule": self.schedule.name if self.schedule.name != "custom"
            else self.schedule.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
            "initial_values": init,
            "adversary_set": sorted(self.adversary_set),
            "stop_tolerance": self.stop_tolerance,
            "record": self.record,
            "override_assumptions": self.override_assumptions,
        }


def load_scenario(source: str | Path | dict, **overrides) -> ScenarioConfig:
    """Build a ScenarioConfig from a JSON file or dict (same container format
    as schedule files); keyword overrides replace individual fields."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            source = json.load(fh)
    if not isinstance(source, dict):
        raise ConfigurationError("scenario source must be a mapping or a path to one")
    data = dict(source)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        params = ProtocolParams(
            n=int(data["n"]), a=float(data["a"]), b=float(data["b"]),
            epsilon=float(data.get("epsilon", 0.05)), big_k=int(data.get("big_k", 10)))
        sched_spec = data["schedule"]
    except KeyError as exc:
        raise ConfigurationError(f"scenario is missing required field {exc}") from None
    if isinstance(sched_spec, GraphSchedule):
        schedule = sched_spec
    elif isinstance(sched_spec, str):
        schedule = load_schedule({"name": sched_spec})
    else:
        schedule = load_schedule(sched_spec)
    init = data.get("initial_values", UNIFORM_RANDOM)
    if not isinstance(init, str):
        init = tuple(float(v) for v in init)
    return ScenarioConfig(
        params=params,
        schedule=schedule,
        horizon=int(data.get("horizon", 200)),
        seed=int(data.get("seed", 0)),
        initial_values=init,
        algorithm=data.get("algorithm", "confidential"),
        adversary_set=frozenset(int(a) for a in data.get("adversary_set", ())),
        stop_tolerance=float(data.get("stop_tolerance", 0.0)),
        record=data.get("record"),
        override_assumptions=bool(data.get("override_assumptions", False)),
        name=data.get("name", "scenario"),
    )


def resolve_initial_values(config: ScenarioConfig) -> np.ndarray:
    """Materialize the initial value vector; deterministic in config.seed.

    "uniform-random" draws from the open interval (a+d, b-d) with
    d = 1e-9*(b-a) so boundary equality cannot occur.
    """
    p = config.params
    if isinstance(config.initial_values, str):
        if config.initial_values != UNIFORM_RANDOM:
            raise ConfigurationError(
                f"unknown initial_values selector {config.initial_values!r}")
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=_SHIFT_STREAM))
        delta = 1e-9 * (p.b - p.a)
        return rng.uniform(p.a + delta, p.b - delta, p.n)
    x = np.asarray(config.initial_values, dtype=float)
    if x.shape != (p.n,):
        raise ConfigurationError(f"expected {p.n} initial values, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("initial values must be finite")
    if np.any(x < p.a) or np.any(x > p.b):
        raise ConfigurationError(f"initial values must lie in [{p.a}, {p.b}]")
    return x


class _RoundPattern:
    """Precomputed index arrays for one distinct edge set of a schedule.

    Weight uniforms live in an agent-major batch: agent j's segment covers
    its recipients (out-neighbors plus self) in ascending id order.  Mass
    uniforms (randomized rounds only) use a second agent-major batch over
    out-neighbors.  Slot arrays map each edge to its sender's entry.
    """

    __slots__ = ("n", "n_edges", "recv", "send", "m", "woff", "wtotal", "stotal",
                 "wslot", "sslot", "selfslot", "out_deg", "uniform_p", "singleton_self")

    def __init__(self, edge_set, n: int):
        edges = edge_set.edges
        e = len(edges)
        self.n = n
        self.n_edges = e
        self.recv = np.fromiter((i - 1 for i, _ in edges), dtype=np.intp, count=e)
        self.send = np.fromiter((j - 1 for _, j in edges), dtype=np.intp, count=e)
        self.out_deg = np.bincount(self.send, minlength=n)
        self.m = self.out_deg + 1
        self.woff = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(self.m, out=self.woff[1:])
        soff = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(self.out_deg, out=soff[1:])
        self.wtotal = int(self.woff[-1])
        self.stotal = int(soff[-1])
        self.wslot = np.empty(e, dtype=np.intp)
        self.sslot = np.empty(e, dtype=np.intp)
        self.selfslot = np.empty(n, dtype=np.intp)
        outs: list[list[int]] = [[] for _ in range(n)]
        for i, j in edges:
            outs[j - 1].append(i - 1)
        rank_w = {}
        rank_s = {}
        for j in range(n):
            nbrs = sorted(outs[j])
            recips = sorted(nbrs + [j])
            self.selfslot[j] = self.woff[j] + recips.index(j)
            for pos, r in enumerate(recips):
                if r != j:
                    rank_w[(j, r)] = self.woff[j] + pos
            for pos, r in enumerate(nbrs):
                rank_s[(j, r)] = soff[j] + pos
        for l, (i, j) in enumerate(edges):
            self.wslot[l] = rank_w[(j - 1, i - 1)]
            self.sslot[l] = rank_s[(j - 1, i - 1)]
        self.uniform_p = np.repeat(1.0 / self.m, self.m)
        self.singleton_self = self.selfslot[self.out_deg == 0]


@dataclass
class Transcript:
    """Immutable record of one execution.

    State row r holds the states after r rounds (row 0 is the initial state);
    `errors[r]` is the estimation error of row r against the true mean.
    Message logs and realized weight matrices are present in "full" record
    mode only.
    """

    config: ScenarioConfig
    x0: np.ndarray
    ground_truth_mean: float
    s_hist: np.ndarray
    w_hist: np.ndarray
    errors: np.ndarray
    n_rounds: int
    record: str
    messages_by_round: list[list[RoundMessage]] | None
    weight_matrices: list[np.ndarray] | None
    schedule_check: ScheduleCheck | None = None
    invariant_violations: list = field(default_factory=list)

    @property
    def has_messages(self) -> bool:
        return self.messages_by_round is not None

    def estimates(self, k: int | None = None) -> np.ndarray:
        """Estimate vector after k rounds (default: after the last round)."""
        k = self.n_rounds if k is None else k
        s, w = self.s_hist[k], self.w_hist[k]
        if self.config.algorithm == "confidential":
            return decode_estimates(s, w, self.config.params)
        return s / w

    def states_after(self, k: int) -> list[AgentState]:
        """Post-round states as AgentState objects (k = 0 is the initial state)."""
        return [AgentState(agent_id=i + 1, s=float(self.s_hist[k, i]), w=float(self.w_hist[k, i]))
                for i in range(self.config.params.n)]

    def messages(self, k: int) -> list[RoundMessage]:
        if self.messages_by_round is None:
            raise InsufficientRecordError(
                "transcript was recorded states-only; message logs are unavailable")
        return self.messages_by_round[k]

    def weight_matrix(self, k: int) -> np.ndarray:
        if self.weight_matrices is None:
            raise InsufficientRecordError(
                "transcript was recorded states-only; weight matrices are unavailable")
        return self.weight_matrices[k]

    def final_error(self) -> float:
        return float(self.errors[self.n_rounds])


def _round_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, k)))


def run(config: ScenarioConfig) -> Transcript:
    """Execute the scenario and return its transcript.

    Raises ConfigurationError when the schedule fails the connectivity /
    recurrence checks (unless override_assumptions is set) and AuditError if
    the finished transcript violates a protocol invariant.
    """
    config.validate()
    check = verify_assumptions(config.schedule)
    if not config.override_assumptions:
        if not check.strongly_connected:
            raise ConfigurationError(
                "recurring edge set is not strongly connected; "
                "set override_assumptions to run anyway")
        if check.t_bound is None:
            raise ConfigurationError(
                "no recurrence window bound exists for this schedule; "
                "set override_assumptions to run anyway")

    p = config.params
    n = p.n
    confidential = config.algorithm == "confidential"
    record = config.resolved_record()
    x0 = resolve_initial_values(config)
    mean = float(np.mean(x0))

    if confidential:
        s = np.array([encode_initial(float(v), p) for v in x0])
    else:
        s = x0.copy()
    w = np.ones(n)

    horizon = config.horizon
    s_hist = np.empty((horizon + 1, n))
    w_hist = np.empty((horizon + 1, n))
    errors = np.empty(horizon + 1)
    s_hist[0], w_hist[0] = s, w
    errors[0] = _error_of(s, w, mean, config)
    messages: list[list[RoundMessage]] | None = [] if record == RECORD_FULL else None
    matrices: list[np.ndarray] | None = [] if record == RECORD_FULL else None

    patterns: dict[int, _RoundPattern] = {}
    eps = p.epsilon
    n_rounds = horizon
    for k in range(horizon):
        idx = config.schedule.pattern_index(k)
        pat = patterns.get(idx)
        if pat is None:
            pat = patterns[idx] = _RoundPattern(config.schedule.rounds[idx], n)

        if confidential:
            rng = _round_rng(config.seed, k)
            uw = rng.random(pat.wtotal)
            seg = np.add.reduceat(uw, pat.woff[:-1])
            ratio = uw / np.repeat(seg, pat.m)
            pvec = eps + np.repeat(1.0 - pat.m * eps, pat.m) * ratio
            if pat.singleton_self.size:
                pvec[pat.singleton_self] = 1.0
        else:
            pvec = pat.uniform_p

        dw_edges = pvec[pat.wslot] * w[pat.send]
        self_dw = pvec[pat.selfslot] * w
        if confidential and k <= p.big_k:
            us = rng.random(pat.stotal)
            ds_edges = us[pat.sslot]
            sent = np.bincount(pat.send, weights=ds_edges, minlength=n)
            self_ds = frac_array(s - sent)
        else:
            ds_edges = pvec[pat.wslot] * s[pat.send]
            self_ds = pvec[pat.selfslot] * s

        s_new = np.bincount(pat.recv, weights=ds_edges, minlength=n) + self_ds
        if confidential and k <= p.big_k:
            s_new = frac_array(s_new)
        w_new = np.bincount(pat.recv, weights=dw_edges, minlength=n) + self_dw

        if messages is not None:
            messages.append([
                RoundMessage(round=k, sender=int(pat.send[l]) + 1,
                             receiver=int(pat.recv[l]) + 1,
                             delta_s=float(ds_edges[l]), delta_w=float(dw_edges[l]))
                for l in range(pat.n_edges)
            ])
        if matrices is not None:
            P = np.zeros((n, n))
            P[pat.recv, pat.send] = pvec[pat.wslot]
            P[np.arange(n), np.arange(n)] = pvec[pat.selfslot]
            matrices.append(P)

        s, w = s_new, w_new
        s_hist[k + 1], w_hist[k + 1] = s, w
        errors[k + 1] = _error_of(s, w, mean, config)
        if config.stop_tolerance > 0.0 and errors[k + 1] < config.stop_tolerance:
            n_rounds = k + 1
            break

    transcript = Transcript(
        config=config,
        x0=x0,
        ground_truth_mean=mean,
        s_hist=s_hist[: n_rounds + 1].copy(),
        w_hist=w_hist[: n_rounds + 1].copy(),
        errors=errors[: n_rounds + 1].copy(),
        n_rounds=n_rounds,
        record=record,
        messages_by_round=messages,
        weight_matrices=matrices,
        schedule_check=check,
    )
    from .metrics import audit_transcript

    violations = audit_transcript(transcript)
    if violations:
        raise AuditError(
            f"run produced {len(violations)} invariant violation(s); first: {violations[0]}")
    return transcript


def _error_of(s: np.ndarray, w: np.ndarray, mean: float, config: ScenarioConfig) -> float:
    if config.algorithm == "confidential":
        est = decode_estimates(s, w, config.params)
    else:
        est = s / w
    return float(np.linalg.norm(est - mean))


def run_trials(config: ScenarioConfig, trials: int, seed_stride: int = 1) -> list[Transcript]:
    """Independent repetitions with seeds seed, seed+stride, seed+2*stride, ..."""
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    return [run(dataclasses.replace(config, seed=config.seed + t * seed_stride))
            for t in range(trials)]


def _fmt(x: float) -> str:
    return repr(float(x))


def error_csv_text(transcript: Transcript) -> str:
    lines = ["round,e"]
    lines.extend(f"{k},{_fmt(e)}" for k, e in enumerate(transcript.errors))
    return "\n".join(lines) + "\n"


def state_csv_text(transcript: Transcript) -> str:
    lines = ["round,agent,s,w,pi"]
    n = transcript.config.params.n
    for k in range(transcript.n_rounds + 1):
        est = transcript.estimates(k)
        s, w = transcript.s_hist[k], transcript.w_hist[k]
        for i in range(n):
            lines.append(f"{k},{i + 1},{_fmt(s[i])},{_fmt(w[i])},{_fmt(est[i])}")
    return "\n".join(lines) + "\n"


def message_log_text(transcript: Transcript) -> str:
    """Structured message log (JSON lines), the adversary module's exchange format."""
    if transcript.messages_by_round is None:
        raise InsufficientRecordError("states-only transcript has no message log")
    lines = []
    for per_round in transcript.messages_by_round:
        for m in per_round:
            lines.append(json.dumps({
                "round": m.round, "sender": m.sender, "receiver": m.receiver,
                "delta_s": m.delta_s, "delta_w": m.delta_w,
            }, sort_keys=True))
    return "\n".join(lines) + ("\n" if lines else "")
