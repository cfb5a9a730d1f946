"""Importance-sampling estimators for rare population events.

Two proposals are used.  TiltOnly reweights the environment mixture by
m^lambda every generation and carries the exact per-step likelihood ratio;
it is efficient for upper deviations and for lower deviations at small n.
TwoPhase holds the population at its initial size for the first m
generations (environments biased by the single-offspring probability, each
individual forced to one child, exact path weight kept) and then switches
to a tilted phase; for m = round(take_off * n) the weighted indicator is an
unbiased estimate of the partial event {hold through m, Z_n <= e^{cn}},
whose decay rate matches the full event's.  TwoPhase with m = 0 is
TiltOnly exactly.

All estimators draw replica r from an independent counter-based stream, so
results are byte-identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .envmodel import EnvironmentLaw
from .errors import (
    COutOfRangeError,
    NoEventMassError,
    NoHoldingPossibleError,
    NotStronglySupercriticalError,
    ZeroEstimateError,
)
from .ratefn import limit_profile, log_mgf, lower_deviation_rate, tilt_parameter
from .results import EstimatorResult, Method
from .rng import STREAM_TILT, STREAM_TWO_PHASE, replica_stream
from .simulate import branch_step, chunk_ranges, run_chunked

HULL_CLAMP = 1e-9   # tilt targets pushed this fraction of the span inside the hull


@dataclass(frozen=True)
class TiltedLaw:
    """Environment mixture reweighted by m^lambda, offspring laws untouched."""

    base: EnvironmentLaw
    lam: float
    log_norm: float          # log E(m^lambda)
    weights: np.ndarray
    cum_weights: np.ndarray
    step_log_lr: np.ndarray  # per component: log_norm - lam * L_i

    @property
    def mean_log_mean(self) -> float:
        """Drift of the log-mean walk under the tilt."""
        return float(self.weights @ self.base.log_means_arr)


def tilt(env: EnvironmentLaw, lam: float) -> TiltedLaw:
    value, _, _ = log_mgf(env, lam)
    logw = np.log(env.weights_arr) + lam * env.log_means_arr - value
    w = np.exp(logw)
    w = w / w.sum()
    return TiltedLaw(
        base=env, lam=lam, log_norm=value, weights=w,
        cum_weights=np.cumsum(w), step_log_lr=value - lam * env.log_means_arr,
    )


def tilt_toward(env: EnvironmentLaw, drift: float) -> TiltedLaw:
    """Tilt whose mean log-mean is drift, clamped just inside the hull.

    Clamping keeps the root-find well posed for targets at or beyond the
    extreme log-means; the estimator stays unbiased under any lambda, the
    clamp only moves the proposal.
    """
    lo, hi = env.log_mean_min, env.log_mean_max
    span = hi - lo
    if span <= 0.0:
        return tilt(env, 0.0)
    target = min(max(drift, lo + HULL_CLAMP * span), hi - HULL_CLAMP * span)
    return tilt(env, tilt_parameter(env, target))


def _draw_index(cum: np.ndarray, rng: np.random.Generator) -> int:
    i = int(np.searchsorted(cum, rng.random(), side="right"))
    return min(i, cum.size - 1)


def _lower_tilt_target(env: EnvironmentLaw, c: float) -> float:
    """Proposal drift for a single-tilt lower-tail run.

    For c inside the hull the walk itself is steered to c.  Below the
    minimum log-mean no environment sequence has that drift; the event is
    carried by paths that hold early and then grow along the limit slope,
    so the tilt aims at that slope instead of a degenerate corner.
    """
    if c > env.log_mean_min or c <= 0.0:
        return c
    return lower_deviation_rate(env, c).slope


def _event_bound(n: int, c: float) -> float:
    # slack keeps integer populations on the right side when e^{cn} is an integer
    t = math.exp(c * n)
    return t + 1e-9 * max(1.0, t)


def _hold_tables(env: EnvironmentLaw, z0: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sampling cdf and per-step log likelihood ratio for held generations.

    Proposal weight for component i is q_i p1_i / E(p(1)); the true
    probability of (component i, every one of z0 individuals has exactly one
    child) is q_i p1_i^{z0}, so the ratio is E(p(1)) * p1_i^{z0-1}.
    """
    p1 = np.array([d.p1 for d in env.components])
    raw = env.weights_arr * p1
    total = raw.sum()
    cum = np.cumsum(raw / total)
    llr = np.full(p1.size, -math.inf)   # components without p1 mass are never drawn
    pos = p1 > 0.0
    llr[pos] = math.log(total) + (z0 - 1) * np.log(p1[pos])
    return cum, llr


def _is_chunk(args: tuple):
    """Run a replica range; returns per-replica weights and path statistics.

    Weights are indicator * exp(log likelihood ratio).  tau is the first
    generation the population exceeds pop_threshold (capped at n); gmat and
    sup are filled only when a capture grid is supplied.
    """
    (env, m, hold_cum, hold_llr, tl, n, z0, bound, side, pop_threshold,
     grid_idx, ref_at_k, seed, stream, start, stop) = args
    count = stop - start
    w = np.zeros(count)
    tau = np.full(count, n, dtype=np.int64)
    capture = grid_idx is not None
    gmat = np.zeros((count, len(grid_idx))) if capture else None
    sup = np.zeros(count)
    logz = np.zeros(n + 1)
    log_z0 = math.log(z0)
    for row, r in enumerate(range(start, stop)):
        rng = replica_stream(seed, stream + r)
        z = z0
        llr = 0.0
        logz[: m + 1] = log_z0
        for _ in range(m):
            i = _draw_index(hold_cum, rng)
            llr += hold_llr[i]
        tau_r = 0 if (pop_threshold is not None and z0 > pop_threshold) else n
        for k in range(m, n):
            i = _draw_index(tl.cum_weights, rng)
            z = branch_step(z, env.components[i], rng)
            llr += tl.step_log_lr[i]
            if pop_threshold is not None and tau_r == n and z > pop_threshold:
                tau_r = k + 1
            if capture:
                logz[k + 1] = math.log(z)
        tau[row] = tau_r
        hit = z <= bound if side == "lower" else z >= bound
        if hit:
            w[row] = math.exp(llr)
            if capture:
                path = logz / n
                gmat[row] = path[grid_idx]
                sup[row] = float(np.max(np.abs(path - ref_at_k)))
    return w, tau, gmat, sup


def _run_replicas(env, m, hold_cum, hold_llr, tl, n, z0, bound, side,
                  pop_threshold, grid_idx, ref_at_k, seed, stream,
                  replicas, workers):
    parts = chunk_ranges(replicas, max(1, workers))
    args = [
        (env, m, hold_cum, hold_llr, tl, n, z0, bound, side, pop_threshold,
         grid_idx, ref_at_k, seed, stream, lo, hi)
        for lo, hi in parts
    ]
    out = run_chunked(_is_chunk, [(a,) for a in args], workers)
    w = np.concatenate([o[0] for o in out])
    tau = np.concatenate([o[1] for o in out])
    if grid_idx is not None:
        gmat = np.concatenate([o[2] for o in out], axis=0)
        sup = np.concatenate([o[3] for o in out])
    else:
        gmat, sup = None, None
    return w, tau, gmat, sup


def _weights_result(w: np.ndarray, method: Method, n: int, c: float,
                    replicas: int, seed: int, lam: Optional[float],
                    hold_steps: int) -> EstimatorResult:
    est = float(w.mean())
    stderr = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else 0.0
    tot = float(w.sum())
    sq = float(w @ w)
    ess = tot * tot / sq if sq > 0.0 else 0.0
    return EstimatorResult(
        estimate=est, stderr=stderr, ess=ess, method=method, n=n, c=c,
        replicas=replicas, seed=seed, zero_mass=(tot == 0.0), tilt=lam,
        hold_steps=hold_steps,
    )


def _check_env(env: EnvironmentLaw) -> None:
    if not env.strongly_supercritical:
        raise NotStronglySupercriticalError(
            "deviation estimators need every component to give at least one offspring"
        )


def estimate_upper_tail(env: EnvironmentLaw, n: int, c: float, z0: int = 1,
                        replicas: int = 10_000, seed: int = 0,
                        workers: int = 1) -> EstimatorResult:
    """Unbiased tilted estimate of P(Z_n >= e^{cn}).

    The environment is tilted toward drift c (clamped into the hull for c
    at or beyond the top log-mean, where the estimate is honestly tiny or
    zero).
    """
    _check_env(env)
    if c <= env.mean_log_mean:
        raise COutOfRangeError(
            f"upper deviation needs c > {env.mean_log_mean:.6g}, got {c}"
        )
    tl = tilt_toward(env, c)
    t0 = math.exp(c * n)
    bound = t0 - 1e-9 * max(1.0, t0)
    w, _, _, _ = _run_replicas(
        env, 0, None, None, tl, n, z0, bound, "upper", None, None, None,
        seed, STREAM_TILT, replicas, workers,
    )
    return _weights_result(w, Method.TILT_ONLY, n, c, replicas, seed, tl.lam, 0)


@dataclass(frozen=True)
class LowerTailEstimate:
    """TiltOnly estimates the full event; TwoPhase the held partial event."""

    tilt_only: Optional[EstimatorResult]
    two_phase: Optional[EstimatorResult]
    take_off: Optional[float]   # hold fraction behind the TwoPhase split


def _two_phase_plan(env: EnvironmentLaw, n: int, c: float,
                    phase_fraction: Optional[float]) -> Tuple[int, Optional[float]]:
    """Hold length m and the fraction it came from."""
    if phase_fraction is not None:
        if not 0.0 <= phase_fraction <= 1.0:
            raise ValueError(f"phase_fraction={phase_fraction} outside [0, 1]")
        return int(round(phase_fraction * n)), phase_fraction
    if c <= 0.0:
        # threshold at or below the floor: the event forces holding throughout
        return n, 1.0
    frac = lower_deviation_rate(env, c).take_off
    return int(round(frac * n)), frac


def estimate_lower_tail(env: EnvironmentLaw, n: int, c: float, z0: int = 1,
                        replicas: int = 10_000, seed: int = 0, workers: int = 1,
                        phase_fraction: Optional[float] = None,
                        methods: Sequence[str] = ("tilt_only", "two_phase"),
                        ) -> LowerTailEstimate:
    """Estimate P(Z_n <= e^{cn}) from both proposals.

    tilt_only is unbiased for the full event.  two_phase is unbiased for
    the partial event that also holds the population for the first m
    generations; it is the one that survives at large n, and its estimate
    is a lower bound for the full probability with the same decay rate.
    c above the typical drift is rejected; c <= 0 is allowed and collapses
    to the pure holding event (the population cannot shrink).
    """
    _check_env(env)
    if c >= env.mean_log_mean:
        raise COutOfRangeError(
            f"lower deviation needs c < {env.mean_log_mean:.6g}, got {c}"
        )
    bound = _event_bound(n, c)
    tilt_res: Optional[EstimatorResult] = None
    phase_res: Optional[EstimatorResult] = None
    used_fraction: Optional[float] = None

    if bound < z0:
        # population never drops below z0: the event is empty, exactly
        zero = EstimatorResult(
            estimate=0.0, stderr=0.0, ess=0.0, method=Method.TWO_PHASE, n=n,
            c=c, replicas=replicas, seed=seed, zero_mass=True, tilt=None,
            hold_steps=n,
        )
        return LowerTailEstimate(tilt_only=None, two_phase=zero, take_off=1.0)

    if "tilt_only" in methods:
        tl = tilt_toward(env, _lower_tilt_target(env, c))
        w, _, _, _ = _run_replicas(
            env, 0, None, None, tl, n, z0, bound, "lower", None, None, None,
            seed, STREAM_TILT, replicas, workers,
        )
        tilt_res = _weights_result(w, Method.TILT_ONLY, n, c, replicas, seed,
                                   tl.lam, 0)

    if "two_phase" in methods:
        m, used_fraction = _two_phase_plan(env, n, c, phase_fraction)
        if env.mean_p1 == 0.0 and m > 0:
            if phase_fraction is not None and phase_fraction > 0.0:
                raise NoHoldingPossibleError(
                    "no component has single-offspring mass; holding impossible"
                )
            phase_res = None   # nothing to hold with; tilt_only covers this law
        else:
            hold_cum, hold_llr = (None, None) if m == 0 else _hold_tables(env, z0)
            resid = c * n / (n - m) if m < n else 0.0
            tl2 = tilt_toward(env, _lower_tilt_target(env, resid)) if m < n else tilt(env, 0.0)
            # m = 0 shares the TiltOnly stream so the reduction is exact
            stream = STREAM_TWO_PHASE if m > 0 else STREAM_TILT
            w, _, _, _ = _run_replicas(
                env, m, hold_cum, hold_llr, tl2, n, z0, bound, "lower", None,
                None, None, seed, stream, replicas, workers,
            )
            phase_res = _weights_result(
                w, Method.TWO_PHASE if m > 0 else Method.TILT_ONLY, n, c,
                replicas, seed, tl2.lam if m < n else None, m,
            )
    return LowerTailEstimate(tilt_only=tilt_res, two_phase=phase_res,
                             take_off=used_fraction)


def empirical_rate(result: EstimatorResult) -> Tuple[float, float]:
    """(-log estimate / n, delta-method stderr); zero estimates are an error."""
    if result.estimate <= 0.0:
        raise ZeroEstimateError(
            f"no event mass in {result.replicas} replicas at n={result.n}"
        )
    rate = -math.log(result.estimate) / result.n
    return rate, result.stderr / (result.estimate * result.n)


@dataclass(frozen=True)
class RatePoint:
    n: int
    c: float
    estimate: float
    rate: float
    rate_stderr: float
    ess: float
    method: Method
    zero_mass: bool


def rate_curve(env: EnvironmentLaw, c: float, n_list: Sequence[int],
               replicas: int = 10_000, seed: int = 0, side: str = "lower",
               z0: int = 1, workers: int = 1,
               phase_fraction: Optional[float] = None) -> list:
    """Empirical decay rates -log(estimate)/n over horizons.

    Lower side uses the TwoPhase proposal (TiltOnly when the law has no
    single-offspring mass), upper side TiltOnly.  A zero estimate is
    recorded with an infinite rate and the curve stops there.
    """
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    points = []
    for n in n_list:
        if side == "upper":
            res = estimate_upper_tail(env, n, c, z0=z0, replicas=replicas,
                                      seed=seed, workers=workers)
        else:
            both = estimate_lower_tail(
                env, n, c, z0=z0, replicas=replicas, seed=seed,
                workers=workers, phase_fraction=phase_fraction,
                methods=("two_phase",) if env.mean_p1 > 0.0 else ("tilt_only",),
            )
            res = both.two_phase if both.two_phase is not None else both.tilt_only
        if res.zero_mass:
            points.append(RatePoint(n, c, 0.0, math.inf, math.nan, 0.0,
                                    res.method, True))
            break
        rate, rse = empirical_rate(res)
        points.append(RatePoint(n, c, res.estimate, rate, rse, res.ess,
                                res.method, False))
    return points


def _ratio_stats(w: np.ndarray, g: np.ndarray) -> Tuple[float, float]:
    """Self-normalized mean of g and its delta-method standard error."""
    tot = w.sum()
    mean = float((w * g).sum() / tot)
    resid = w * (g - mean)
    se = float(np.sqrt((resid * resid).sum()) / tot)
    return mean, se


@dataclass(frozen=True)
class TakeOffResult:
    """Weighted law of tau/n given the population ends below e^{cn}."""

    mean_fraction: float
    stderr: float
    ess: float
    event_estimate: float
    fractions: np.ndarray    # tau/n on event replicas
    weights: np.ndarray      # matching normalized weights
    n: int
    c: float
    pop_threshold: int
    replicas: int
    seed: int
    method: Method


def take_off_statistics(env: EnvironmentLaw, n: int, c: float,
                        pop_threshold: int = 10, z0: int = 1,
                        replicas: int = 10_000, seed: int = 0,
                        workers: int = 1,
                        phase_fraction: Optional[float] = None,
                        method: str = "two_phase") -> TakeOffResult:
    """Conditional statistics of the first time Z exceeds pop_threshold.

    tau is capped at n.  Self-normalized under the chosen proposal, so the
    conditioning event is the proposal's event: the full lower event for
    tilt_only, the held partial event for two_phase.
    """
    _check_env(env)
    if c >= env.mean_log_mean:
        raise COutOfRangeError(
            f"lower deviation needs c < {env.mean_log_mean:.6g}, got {c}"
        )
    bound = _event_bound(n, c)
    m, lam, stream = 0, None, STREAM_TILT
    hold_cum = hold_llr = None
    if method == "two_phase" and env.mean_p1 > 0.0:
        m, _ = _two_phase_plan(env, n, c, phase_fraction)
        if m > 0:
            hold_cum, hold_llr = _hold_tables(env, z0)
            stream = STREAM_TWO_PHASE
    elif method not in ("two_phase", "tilt_only"):
        raise ValueError(f"unknown method {method!r}")
    resid = c * n / (n - m) if m < n else 0.0
    tl = tilt_toward(env, _lower_tilt_target(env, resid)) if m < n else tilt(env, 0.0)
    w, tau, _, _ = _run_replicas(
        env, m, hold_cum, hold_llr, tl, n, z0, bound, "lower", pop_threshold,
        None, None, seed, stream, replicas, workers,
    )
    tot = float(w.sum())
    if tot == 0.0:
        raise NoEventMassError(
            f"no replica of {replicas} reached the event at n={n}"
        )
    frac = tau / n
    mean, se = _ratio_stats(w, frac)
    ess = tot * tot / float(w @ w)
    on = w > 0.0
    return TakeOffResult(
        mean_fraction=mean, stderr=se, ess=ess, event_estimate=float(w.mean()),
        fractions=frac[on], weights=w[on] / tot, n=n, c=c,
        pop_threshold=pop_threshold, replicas=replicas, seed=seed,
        method=Method.TWO_PHASE if m > 0 else Method.TILT_ONLY,
    )


@dataclass(frozen=True)
class TrajectoryProfile:
    """Conditional growth profile on a time grid, against its straight limit."""

    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    reference: np.ndarray
    sup_distance: float
    sup_distance_stderr: float
    ess: float
    event_estimate: float
    n: int
    c: float
    replicas: int
    seed: int
    method: Method


def conditional_profile(env: EnvironmentLaw, n: int, c: float,
                        grid: Optional[Sequence[float]] = None,
                        side: str = "lower", z0: int = 1,
                        replicas: int = 10_000, seed: int = 0,
                        workers: int = 1,
                        phase_fraction: Optional[float] = None,
                        method: Optional[str] = None) -> TrajectoryProfile:
    """Self-normalized estimate of E[(1/n) log Z_{[tn]} | deviation event].

    The reference curve is the flat-then-linear limit for the lower side
    and the straight line c*t for the upper side; sup_distance is the
    weighted mean of each path's sup deviation from it over all n+1 steps.
    """
    _check_env(env)
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    if grid is None:
        grid_arr = np.arange(n + 1) / n
    else:
        grid_arr = np.asarray(list(grid), dtype=float)
        if grid_arr.size == 0 or grid_arr.min() < 0.0 or grid_arr.max() > 1.0:
            raise ValueError("grid must be a nonempty subset of [0, 1]")
    grid_idx = np.minimum(n, np.floor(grid_arr * n + 1e-9).astype(np.int64))
    steps = np.arange(n + 1) / n

    if side == "lower":
        if c >= env.mean_log_mean:
            raise COutOfRangeError(
                f"lower deviation needs c < {env.mean_log_mean:.6g}, got {c}"
            )
        ldr = lower_deviation_rate(env, c) if c > 0.0 else None
        if ldr is not None:
            ref_at_k = np.array([limit_profile(ldr, t) for t in steps])
            reference = np.array([limit_profile(ldr, t) for t in grid_arr])
        else:
            ref_at_k = np.zeros(n + 1)
            reference = np.zeros(grid_arr.size)
        if method is None:
            method = "two_phase" if env.mean_p1 > 0.0 else "tilt_only"
        m, lam_target, stream = 0, c, STREAM_TILT
        hold_cum = hold_llr = None
        if method == "two_phase" and env.mean_p1 > 0.0:
            m, _ = _two_phase_plan(env, n, c, phase_fraction)
            if m > 0:
                hold_cum, hold_llr = _hold_tables(env, z0)
                stream = STREAM_TWO_PHASE
                lam_target = c * n / (n - m) if m < n else 0.0
        elif method not in ("two_phase", "tilt_only"):
            raise ValueError(f"unknown method {method!r}")
        tl = tilt_toward(env, _lower_tilt_target(env, lam_target)) if m < n else tilt(env, 0.0)
        bound = _event_bound(n, c)
        used = Method.TWO_PHASE if m > 0 else Method.TILT_ONLY
    else:
        if c <= env.mean_log_mean:
            raise COutOfRangeError(
                f"upper deviation needs c > {env.mean_log_mean:.6g}, got {c}"
            )
        ref_at_k = c * steps
        reference = c * grid_arr
        m, stream = 0, STREAM_TILT
        hold_cum = hold_llr = None
        tl = tilt_toward(env, c)
        t0 = math.exp(c * n)
        bound = t0 - 1e-9 * max(1.0, t0)
        used = Method.TILT_ONLY

    w, _, gmat, sup = _run_replicas(
        env, m, hold_cum, hold_llr, tl, n, z0, bound, side, None, grid_idx,
        ref_at_k, seed, stream, replicas, workers,
    )
    tot = float(w.sum())
    if tot == 0.0:
        raise NoEventMassError(
            f"no replica of {replicas} reached the event at n={n}"
        )
    values = np.empty(grid_arr.size)
    stderr = np.empty(grid_arr.size)
    for j in range(grid_arr.size):
        values[j], stderr[j] = _ratio_stats(w, gmat[:, j])
    d_mean, d_se = _ratio_stats(w, sup)
    return TrajectoryProfile(
        grid=grid_arr, values=values, stderr=stderr, reference=reference,
        sup_distance=d_mean, sup_distance_stderr=d_se,
        ess=tot * tot / float(w @ w), event_estimate=float(w.mean()),
        n=n, c=c, replicas=replicas, seed=seed, method=used,
    )
