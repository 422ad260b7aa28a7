"""Convergence and conservation diagnostics.

Pure, stateless functions over immutable transcripts: estimation-error norm,
the worst-case geometric rate bound with its constant, empirical rate
estimation by log-linear fit, and a transcript-wide invariant audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import FitDegenerateError
from .graphs import verify_assumptions
from .protocol import frac

if TYPE_CHECKING:  # pragma: no cover
    from .engine import Transcript

CONVERGED_TOL = 1e-6
CONVERGED_PATIENCE = 5
FIT_FLOOR = 1e-10


def error_norm(estimates: Sequence[float], true_mean: float) -> float:
    """Euclidean norm of the estimate-vector deviation from the true mean."""
    est = np.asarray(estimates, dtype=float)
    return float(np.linalg.norm(est - true_mean))


@dataclass(frozen=True)
class RateBound:
    """Worst-case geometric rate and prefactor.

    gamma = (1 - eps^M)^(1/M) and c0 = 2*(1 + eps^-M)/(1 - eps^M) with
    M = t_bound*(n-1).  `vacuous` flags eps^M below machine epsilon, where
    gamma is indistinguishable from 1 in double precision.
    """

    gamma: float
    c0: float
    vacuous: bool


def theoretical_rate(epsilon: float, t_bound: int, n: int) -> RateBound:
    """Evaluate the rate bound in the log domain so tiny eps^M stays accurate."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not isinstance(t_bound, int) or t_bound < 1:
        raise ValueError(f"t_bound must be a positive integer, got {t_bound!r}")
    if not isinstance(n, int) or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n!r}")
    m = t_bound * (n - 1)
    log_em = m * math.log(epsilon)
    em = math.exp(log_em)
    gamma = math.exp(math.log1p(-em) / m)
    try:
        inv_em = math.exp(-log_em)
    except OverflowError:
        inv_em = math.inf
    denom = -math.expm1(log_em)
    c0 = 2.0 * (1.0 + inv_em) / denom if denom > 0.0 else math.inf
    return RateBound(gamma=gamma, c0=c0, vacuous=em < 2.0**-52)


def estimate_rate(error_series: Sequence[float], window_start: int, window_end: int) -> float:
    """Per-round decay factor from a least-squares fit of ln e(k) against k
    over rounds [window_start, window_end)."""
    e = np.asarray(error_series, dtype=float)
    if not (0 <= window_start < window_end <= len(e)):
        raise ValueError(
            f"window [{window_start}, {window_end}) invalid for a series of length {len(e)}")
    if window_end - window_start < 2:
        raise FitDegenerateError("rate fit needs at least two rounds in the window")
    win = e[window_start:window_end]
    if np.any(~np.isfinite(win)) or np.any(win <= 0.0):
        raise FitDegenerateError("rate fit window contains zero or non-finite errors")
    k = np.arange(window_start, window_end, dtype=float)
    slope = np.polyfit(k, np.log(win), 1)[0]
    return float(np.exp(slope))


def default_fit_window(error_series: Sequence[float], big_k: int) -> tuple[int, int]:
    """Window [big_k + 2, first round with e below the rounding-noise floor)."""
    e = np.asarray(error_series, dtype=float)
    start = big_k + 2
    below = np.nonzero(e < FIT_FLOOR)[0]
    end = int(below[0]) if below.size else len(e)
    return start, end


def fit_rate(transcript: "Transcript") -> float:
    """Empirical rate of a transcript over the default post-randomization window."""
    start, end = default_fit_window(transcript.errors, transcript.config.params.big_k)
    return estimate_rate(transcript.errors, start, end)


def converged_at(error_series: Sequence[float], tol: float = CONVERGED_TOL,
                 patience: int = CONVERGED_PATIENCE) -> int | None:
    """First round whose error stays below tol for `patience` consecutive rounds."""
    e = np.asarray(error_series, dtype=float)
    below = e < tol
    run_len = 0
    for k in range(len(e)):
        run_len = run_len + 1 if below[k] else 0
        if run_len == patience:
            return k - patience + 1
    return None


@dataclass(frozen=True)
class Violation:
    check: str
    round: int
    agent: int | None
    detail: str

    def __str__(self) -> str:
        where = f"round {self.round}" + (f", agent {self.agent}" if self.agent else "")
        return f"[{self.check}] {where}: {self.detail}"


def _circular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def audit_transcript(transcript: "Transcript", check_products: bool = False) -> list[Violation]:
    """Check the conservation laws and weight bounds on every recorded round.

    Confidential runs: the fractional part of the total mass is invariant
    through round big_k + 1 and the plain total is invariant afterwards.
    Conventional runs: the plain total is invariant throughout.  In all runs
    the weights sum to n and (once the schedule admits a recurrence window T)
    every weight from round 1 on stays at or above eps^(T*(n-1)).  Full
    transcripts additionally get per-column stochasticity checks of each
    realized weight matrix, and `check_products` verifies their running
    product stays column-stochastic.  Returns violations; never raises.
    """
    cfg = transcript.config
    n = cfg.params.n
    big_k = cfg.params.big_k
    tol = 1e-9 * n
    out: list[Violation] = []

    sum_s = transcript.s_hist.sum(axis=1)
    sum_w = transcript.w_hist.sum(axis=1)
    last = transcript.n_rounds

    if cfg.algorithm == "confidential":
        ref = frac(float(sum_s[0]))
        for k in range(0, min(big_k + 1, last) + 1):
            got = frac(float(sum_s[k]))
            if _circular_distance(got, ref) > tol:
                out.append(Violation("frac-mass-conservation", k, None,
                                     f"frac(sum s)={got!r}, expected {ref!r}"))
        if last >= big_k + 1:
            ref_total = float(sum_s[big_k + 1])
            for k in range(big_k + 1, last + 1):
                if abs(float(sum_s[k]) - ref_total) > tol:
                    out.append(Violation("mass-conservation", k, None,
                                         f"sum s={float(sum_s[k])!r}, expected {ref_total!r}"))
    else:
        ref_total = float(sum_s[0])
        for k in range(0, last + 1):
            if abs(float(sum_s[k]) - ref_total) > tol:
                out.append(Violation("mass-conservation", k, None,
                                     f"sum s={float(sum_s[k])!r}, expected {ref_total!r}"))

    for k in range(0, last + 1):
        if abs(float(sum_w[k]) - n) > tol:
            out.append(Violation("weight-sum", k, None,
                                 f"sum w={float(sum_w[k])!r}, expected {n}"))

    check = transcript.schedule_check or verify_assumptions(cfg.schedule)
    if check.t_bound is not None:
        log_bound = check.t_bound * (n - 1) * math.log(cfg.params.epsilon)
        bound = math.exp(log_bound) if log_bound > -745.0 else 0.0
        w = transcript.w_hist
        if bound > 0.0:
            bad_rounds, bad_agents = np.nonzero(w[1:] < bound)
            for k, i in zip(bad_rounds, bad_agents):
                out.append(Violation("weight-lower-bound", int(k) + 1, int(i) + 1,
                                     f"w={float(w[k + 1, i])!r} below bound {bound!r}"))
        else:
            bad_rounds, bad_agents = np.nonzero(w[1:] <= 0.0)
            for k, i in zip(bad_rounds, bad_agents):
                out.append(Violation("weight-lower-bound", int(k) + 1, int(i) + 1,
                                     f"w={float(w[k + 1, i])!r} not positive"))

    if transcript.weight_matrices is not None:
        for k, P in enumerate(transcript.weight_matrices):
            colsums = P.sum(axis=0)
            bad = np.nonzero(np.abs(colsums - 1.0) > 1e-12)[0]
            for j in bad:
                out.append(Violation("column-stochastic", k, int(j) + 1,
                                     f"column sum {float(colsums[j])!r}"))
        if check_products and transcript.weight_matrices:
            prod = np.eye(n)
            for k, P in enumerate(transcript.weight_matrices):
                prod = P @ prod
                colsums = prod.sum(axis=0)
                bad = np.nonzero(np.abs(colsums - 1.0) > 1e-10)[0]
                for j in bad:
                    out.append(Violation("transition-product", k, int(j) + 1,
                                         f"product column sum {float(colsums[j])!r}"))
    return out


def transition_product(transcript: "Transcript", k: int, t: int) -> np.ndarray:
    """Product P(k) ... P(t) of recorded weight matrices, k >= t."""
    if k < t:
        raise ValueError(f"need k >= t, got k={k}, t={t}")
    prod = transcript.weight_matrix(t)
    for l in range(t + 1, k + 1):
        prod = transcript.weight_matrix(l) @ prod
    return prod


@dataclass
class ConvergenceReport:
    """Bundled diagnostics for one transcript."""

    error_series: np.ndarray
    gamma_theoretical: float | None
    c0: float | None
    rate_bound_vacuous: bool
    gamma_hat: float | None
    converged_at: int | None
    invariant_violations: list[Violation] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "final_error": float(self.error_series[-1]),
            "rounds": len(self.error_series) - 1,
            "gamma_theoretical": self.gamma_theoretical,
            "c0": self.c0,
            "rate_bound_vacuous": self.rate_bound_vacuous,
            "gamma_hat": self.gamma_hat,
            "converged_at": self.converged_at,
            "invariant_violations": [str(v) for v in self.invariant_violations],
        }


def convergence_report(transcript: "Transcript") -> ConvergenceReport:
    """Compute the standard diagnostics bundle for a finished run."""
    cfg = transcript.config
    check = transcript.schedule_check or verify_assumptions(cfg.schedule)
    gamma_th = c0 = None
    vacuous = False
    if check.t_bound is not None:
        bound = theoretical_rate(cfg.params.epsilon, check.t_bound, cfg.params.n)
        gamma_th, c0, vacuous = bound.gamma, bound.c0, bound.vacuous
    try:
        gamma_hat = fit_rate(transcript)
    except (FitDegenerateError, ValueError):
        gamma_hat = None
    return ConvergenceReport(
        error_series=transcript.errors,
        gamma_theoretical=gamma_th,
        c0=c0,
        rate_bound_vacuous=vacuous,
        gamma_hat=gamma_hat,
        converged_at=converged_at(transcript.errors),
        invariant_violations=audit_transcript(transcript),
    )
