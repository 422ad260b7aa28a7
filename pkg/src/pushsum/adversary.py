"""Colluding honest-but-curious adversaries.

The collusion set follows the protocol but pools everything it legitimately
sees: its own states, every message it sends or receives, and the public
constants (schedule, n, a, b, epsilon, big_k, and the all-ones initial
weights).  This module classifies targets structurally, mounts the two
reconstruction attacks, and runs an empirical indistinguishability test.

Why reconstruction works on a fully surrounded target: weights enter and
leave the target only through observed messages, so its weight trajectory
can be replayed from w(0) = 1.  Any post-randomization message then exposes
the mass/weight ratio, which combined with the replayed weight yields the
mass itself.  Rewinding the observed mass flux back to the end of the
randomized phase and taking one fractional part strips the accumulated
wrap-arounds, leaving the encoded initial mass, which decodes to the
initial value.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import ks_2samp

from .engine import ScenarioConfig, Transcript, resolve_initial_values, run
from .errors import AttackInfeasibleError, ConfigurationError, InsufficientRecordError
from .graphs import GraphSchedule
from .protocol import ProtocolParams, RoundMessage, frac

_SHIFTED_SEED_OFFSET = 2**32


@dataclass(frozen=True)
class PrivacyVerdict:
    """Structural classification of a target against a collusion set.

    "protected": some honest agent is an in- or out-neighbor of the target
    during the randomized phase (witness = (neighbor, round)).
    "vulnerable": every neighbor the target ever has belongs to the
    collusion set, so its initial value can be reconstructed exactly.
    "unknown": neither condition holds (an honest neighbor exists, but only
    after the randomized phase); no guarantee either way.
    """

    target: int
    verdict: str
    witness: tuple[int, int] | None = None


def privacy_condition(schedule: GraphSchedule, adversaries: Iterable[int], target: int,
                      params: ProtocolParams) -> PrivacyVerdict:
    """Classify `target` by scanning the schedule's neighbor structure."""
    adv = frozenset(int(a) for a in adversaries)
    target = int(target)
    if target in adv:
        raise ValueError(f"target {target} is in the adversary set")
    if not (1 <= target <= schedule.n_agents):
        raise ValueError(f"target {target} outside 1..{schedule.n_agents}")

    for k in range(params.big_k + 1):
        es = schedule.edges_at(k)
        honest = [l for l in set(es.in_neighbors(target)) | set(es.out_neighbors(target))
                  if l not in adv and l != target]
        if honest:
            return PrivacyVerdict(target=target, verdict="protected",
                                  witness=(min(honest), k))

    span = schedule.period if schedule.is_periodic else len(schedule.rounds)
    for k in range(max(span, params.big_k + 1)):
        es = schedule.edges_at(k)
        nbrs = set(es.in_neighbors(target)) | set(es.out_neighbors(target))
        if not nbrs <= adv:
            return PrivacyVerdict(target=target, verdict="unknown")
    return PrivacyVerdict(target=target, verdict="vulnerable")


@dataclass(frozen=True)
class AdversaryView:
    """Everything the collusion set can see in one execution.

    Contains only messages with an adversarial endpoint plus the adversaries'
    own state trajectories; self-retained shares of honest agents are never
    transmitted and therefore never appear here.
    """

    adversary_set: frozenset[int]
    schedule: GraphSchedule
    params: ProtocolParams
    algorithm: str
    n_rounds: int
    messages: tuple[RoundMessage, ...]
    own_s: Mapping[int, np.ndarray]
    own_w: Mapping[int, np.ndarray]


def observe(transcript: Transcript, adversaries: Iterable[int]) -> AdversaryView:
    """Filter a full transcript down to the collusion set's legitimate view."""
    adv = frozenset(int(a) for a in adversaries)
    n = transcript.config.params.n
    bad = [a for a in adv if not (1 <= a <= n)]
    if bad:
        raise ValueError(f"adversary ids outside 1..{n}: {sorted(bad)}")
    if not transcript.has_messages:
        raise InsufficientRecordError(
            "observe needs a transcript recorded with record='full'")
    seen = tuple(
        m
        for k in range(transcript.n_rounds)
        for m in transcript.messages(k)
        if m.sender in adv or m.receiver in adv
    )
    own_s = {a: transcript.s_hist[:, a - 1].copy() for a in sorted(adv)}
    own_w = {a: transcript.w_hist[:, a - 1].copy() for a in sorted(adv)}
    return AdversaryView(
        adversary_set=adv,
        schedule=transcript.config.schedule,
        params=transcript.config.params,
        algorithm=transcript.config.algorithm,
        n_rounds=transcript.n_rounds,
        messages=seen,
        own_s=own_s,
        own_w=own_w,
    )


def reconstruct_weight_series(view: AdversaryView, target: int) -> np.ndarray:
    """Replay the target's weight trajectory from observed weight flux.

    Valid whenever every neighbor of the target is adversarial: then each
    round's weight change equals observed incoming minus observed outgoing
    weight shares, starting from the public w(0) = 1.
    """
    w = np.ones(view.n_rounds + 1)
    flux = np.zeros(view.n_rounds)
    for m in view.messages:
        if m.receiver == target:
            flux[m.round] += m.delta_w
        elif m.sender == target:
            flux[m.round] -= m.delta_w
    np.cumsum(flux, out=flux)
    w[1:] += flux
    return w


def attack_reconstruct(view: AdversaryView, target: int) -> float:
    """Recover a fully surrounded target's initial value from the view."""
    target = int(target)
    if target in view.adversary_set:
        raise ValueError(f"target {target} is in the adversary set")
    if view.algorithm != "confidential":
        raise AttackInfeasibleError(
            "reconstruction attack applies to the confidential protocol; "
            "use attack_conventional for conventional runs")
    verdict = privacy_condition(view.schedule, view.adversary_set, target, view.params)
    if verdict.verdict != "vulnerable":
        raise AttackInfeasibleError(
            f"target {target} is {verdict.verdict}; reconstruction needs every "
            "neighbor adversarial")

    big_k = view.params.big_k
    outgoing = [m for m in view.messages if m.sender == target]
    post = [m for m in outgoing if m.round >= big_k + 1]
    if not post:
        raise AttackInfeasibleError(
            f"no outgoing message from target {target} after round {big_k} was observed; "
            "run the scenario longer")
    probe = min(post, key=lambda m: (m.round, m.receiver))
    k_probe = probe.round

    w_series = reconstruct_weight_series(view, target)
    s_probe = probe.delta_s / probe.delta_w * w_series[k_probe]

    net_s = np.zeros(view.n_rounds)
    for m in view.messages:
        if m.receiver == target:
            net_s[m.round] += m.delta_s
        elif m.sender == target:
            net_s[m.round] -= m.delta_s
    s_after_randomization = s_probe - float(np.sum(net_s[big_k + 1:k_probe]))
    s_initial = frac(s_after_randomization - float(np.sum(net_s[:big_k + 1])))

    p = view.params
    return (p.b - p.a) / (p.n - 2) * (p.n**2 * s_initial - 1.0) + p.a


def attack_conventional(view: AdversaryView, target: int) -> float:
    """Read a conventional target's initial value off any first-round message.

    At round 0 the weights are all one, so delta_s/delta_w cancels the
    coupling coefficient and returns the raw initial state.  Applied to a
    confidential run it returns an independent uniform draw divided by a
    weight share: noise carrying no information about the target.
    """
    target = int(target)
    if target in view.adversary_set:
        raise ValueError(f"target {target} is in the adversary set")
    first = [m for m in view.messages
             if m.sender == target and m.round == 0 and m.receiver in view.adversary_set]
    if not first:
        raise AttackInfeasibleError(
            f"target {target} sent no round-0 message to the adversary set")
    msg = min(first, key=lambda m: m.receiver)
    return msg.delta_s / msg.delta_w


@dataclass(frozen=True)
class IndistinguishabilityResult:
    passed: bool
    trials: int
    significance: float
    n_statistics: int
    rejections: int
    rejection_fraction: float
    max_allowed_rejections: int
    p_values: dict[str, float]


def _collect_statistics(transcript: Transcript, adv: frozenset[int],
                        last_stat_round: int) -> dict[str, float]:
    stats: dict[str, float] = {}
    for k in range(min(last_stat_round, transcript.n_rounds - 1) + 1):
        for m in transcript.messages(k):
            if m.sender in adv or m.receiver in adv:
                stats[f"ds[k={k}]{m.receiver}<-{m.sender}"] = m.delta_s
                stats[f"dw[k={k}]{m.receiver}<-{m.sender}"] = m.delta_w
    final = transcript.estimates()
    for j in sorted(adv):
        stats[f"pi_final[{j}]"] = float(final[j - 1])
    return stats


def indistinguishability_test(
    base: ScenarioConfig,
    target: int,
    partner: int,
    shift: float,
    trials: int,
    significance: float,
    seed_stride: int = 1,
) -> IndistinguishabilityResult:
    """Monte-Carlo check that the adversary's observations cannot tell apart
    two sum-preserving initial-value vectors.

    Runs `trials` independent simulations with the base initial values and
    `trials` more with the target's value raised by `shift` and the partner's
    lowered by the same amount.  Every adversary-incident mass and weight
    share through round big_k + 2, plus each adversary's final estimate, is
    a scalar statistic compared across the two populations with a two-sample
    Kolmogorov-Smirnov test.  With m statistics tested at level alpha the
    result passes iff at most max(1, ceil(2*alpha*m)) reject: under the null
    the rejection count is Binomial(m, alpha), and the doubled allowance
    keeps false alarms rare without hiding real leaks.
    """
    target, partner = int(target), int(partner)
    if not (0.0 < significance < 1.0):
        raise ValueError(f"significance must lie in (0, 1), got {significance}")
    if trials < 2:
        raise ValueError(f"trials must be >= 2, got {trials}")
    adv = base.adversary_set
    if not adv:
        raise ConfigurationError("indistinguishability test needs a non-empty adversary set")
    if target == partner or target in adv or partner in adv:
        raise ValueError(
            f"target {target} and partner {partner} must be distinct honest agents")
    p = base.params
    last_stat_round = p.big_k + 2
    if base.horizon <= last_stat_round:
        raise ConfigurationError(
            f"horizon {base.horizon} too short: statistics run through round {last_stat_round}")

    partner_adjacent = [
        k for k in range(p.big_k + 1)
        if partner in base.schedule.edges_at(k).in_neighbors(target)
        or partner in base.schedule.edges_at(k).out_neighbors(target)
    ]
    if not partner_adjacent:
        raise ValueError(
            f"partner {partner} is never a neighbor of target {target} during the "
            f"randomized phase (rounds 0..{p.big_k})")

    x_base = resolve_initial_values(base)
    x_shift = x_base.copy()
    x_shift[target - 1] += shift
    x_shift[partner - 1] -= shift
    for label, x in (("shifted", x_shift),):
        if np.any(x < p.a) or np.any(x > p.b):
            raise ValueError(
                f"{label} initial values leave [{p.a}, {p.b}]; reduce the shift")

    cfg_base = dataclasses.replace(
        base, initial_values=tuple(float(v) for v in x_base),
        record="full", stop_tolerance=0.0)
    cfg_shift = dataclasses.replace(cfg_base, initial_values=tuple(float(v) for v in x_shift))

    def sample(cfg: ScenarioConfig, seed0: int) -> dict[str, list[float]]:
        pooled: dict[str, list[float]] = {}
        for t in range(trials):
            tr = run(dataclasses.replace(cfg, seed=seed0 + t * seed_stride))
            for key, val in _collect_statistics(tr, adv, last_stat_round).items():
                pooled.setdefault(key, []).append(val)
        return pooled

    pool_a = sample(cfg_base, base.seed)
    pool_b = sample(cfg_shift, base.seed + _SHIFTED_SEED_OFFSET)
    if pool_a.keys() != pool_b.keys():
        raise RuntimeError("statistic sets diverged between populations")

    p_values: dict[str, float] = {}
    for key in sorted(pool_a):
        a, b = np.asarray(pool_a[key]), np.asarray(pool_b[key])
        if np.all(a == a[0]) and np.all(b == b[0]) and a[0] == b[0]:
            p_values[key] = 1.0
        else:
            p_values[key] = float(ks_2samp(a, b).pvalue)
    m = len(p_values)
    rejections = sum(1 for v in p_values.values() if v < significance)
    allowed = max(1, math.ceil(2.0 * significance * m))
    return IndistinguishabilityResult(
        passed=rejections <= allowed,
        trials=trials,
        significance=significance,
        n_statistics=m,
        rejections=rejections,
        rejection_fraction=rejections / m,
        max_allowed_rejections=allowed,
        p_values=p_values,
    )
