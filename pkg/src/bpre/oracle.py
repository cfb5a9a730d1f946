"""Exact desk-scale oracles.

Everything here is computed by enumeration or dynamic programming, never by
sampling, so simulator and estimator output can be checked against it.

The population DP keeps the exact pmf of Z_n on {0..cap} plus one overflow
bucket.  Truncation commutes with convolution on the kept coefficients, so
below-cap masses are exact; for laws that cannot shrink (no zero offspring
and no sub-unit support) the overflow bucket is absorbing and every event
{Z_n <= K} with K <= cap is exact regardless of how much mass overflowed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .envmodel import EnvironmentLaw, OffspringDistribution
from .errors import (
    BudgetExceededError,
    CapTooSmallError,
    NotStronglySupercriticalError,
    TooManyComponentsError,
)
from .ratefn import walk_atoms

COMPOSITION_BUDGET = 500_000
SEQUENCE_BUDGET = 4096      # environment sequences in the trajectory oracle
TRAJECTORY_N_MAX = 12


@dataclass(frozen=True)
class ExactDistribution:
    """Truncated exact law of Z_n: pmf on 0..cap plus overflow mass."""

    probs: np.ndarray
    overflow: float
    n: int
    z0: int
    cap: int
    nondecreasing: bool   # law cannot shrink: overflow is absorbing, below-cap exact

    def prob_eq(self, k: int) -> float:
        if 0 <= k <= self.cap:
            return float(self.probs[k])
        return 0.0

    def le_error_bound(self, k: int) -> float:
        """Worst-case error of prob_le(k) due to truncation."""
        if self.nondecreasing and k <= self.cap:
            return 0.0
        return self.overflow

    def prob_le(self, k: int, tol: Optional[float] = None) -> float:
        """P(Z_n <= k), exact up to le_error_bound(k).

        With tol given, raises CapTooSmall when the truncation error bound
        exceeds it.
        """
        if tol is not None and self.le_error_bound(k) > tol:
            raise CapTooSmallError(
                f"cap={self.cap} leaves error bound {self.le_error_bound(k):.3g} "
                f"> tol={tol:.3g} for P(Z_n <= {k})"
            )
        if k < 0:
            return 0.0
        return float(self.probs[: min(k, self.cap) + 1].sum())

    def prob_ge(self, k: int, tol: Optional[float] = None) -> float:
        """P(Z_n >= k) via the complement; same truncation caveats."""
        if tol is not None and self.le_error_bound(k - 1) > tol:
            raise CapTooSmallError(
                f"cap={self.cap} leaves error bound {self.le_error_bound(k - 1):.3g} "
                f"> tol={tol:.3g} for P(Z_n >= {k})"
            )
        return 1.0 - self.prob_le(k - 1)


def _pmf_poly(dist: OffspringDistribution) -> np.ndarray:
    f = np.zeros(dist.max_offspring + 1)
    for k, p in zip(dist.support, dist.probs):
        f[k] = p
    return f


def _compose(v: np.ndarray, f: np.ndarray, cap: int) -> np.ndarray:
    """Coefficients of V(F(s)) truncated at degree cap (Horner scheme).

    v[j] is the mass at population j; composing with the offspring pgf F
    yields the next generation's law.  Truncation only discards mass above
    cap: kept coefficients are exact.
    """
    nz = np.nonzero(v)[0]
    if nz.size == 0:
        return np.zeros(cap + 1)
    top = int(nz[-1])
    out = np.zeros(1)
    out[0] = v[top]
    for j in range(top - 1, -1, -1):
        out = np.convolve(out, f)
        if out.size > cap + 1:
            out = out[: cap + 1]
        out[0] += v[j]
    if out.size < cap + 1:
        out = np.pad(out, (0, cap + 1 - out.size))
    return out


def population_distribution(env: EnvironmentLaw, n: int, z0: int = 1,
                            cap: int = 1000) -> ExactDistribution:
    """Exact truncated law of Z_n started from z0.

    Work per generation is O(cap^2 * support) via truncated polynomial
    composition, done once per component and mixed by the weights.
    """
    if n < 0:
        raise ValueError(f"n={n} must be >= 0")
    if cap < z0:
        raise CapTooSmallError(f"cap={cap} below initial population z0={z0}")
    polys = [_pmf_poly(d) for d in env.components]
    v = np.zeros(cap + 1)
    v[z0] = 1.0
    overflow = 0.0
    for _ in range(n):
        new = np.zeros(cap + 1)
        for w, f in zip(env.weights, polys):
            new += w * _compose(v, f, cap)
        overflow += max(0.0, float(v.sum() - new.sum()))
        v = new
    nondecreasing = all(d.min_offspring >= 1 for d in env.components)
    return ExactDistribution(
        probs=v, overflow=overflow, n=n, z0=z0, cap=cap, nondecreasing=nondecreasing
    )


def _compositions(n: int, k: int) -> Iterator[Tuple[int, ...]]:
    if k == 1:
        yield (n,)
        return
    for i in range(n + 1):
        for rest in _compositions(n - i, k - 1):
            yield (i,) + rest


def walk_tail(env: EnvironmentLaw, n: int, c: float, side: str = "lower") -> float:
    """Exact P(S_n <= nc) (or >= for side="upper") by composition enumeration.

    The walk only sees the distinct log-mean atoms; n draws split into
    counts per atom with multinomial probabilities, C(n+k-1, k-1) terms in
    total.  Ties S = nc sit on the boundary and are included, with a 1e-9
    relative slack so float log-sums do not drop exact corners.
    """
    if side not in ("lower", "upper"):
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")
    if n < 1:
        raise ValueError(f"n={n} must be >= 1")
    atoms = walk_atoms(env)
    k = len(atoms)
    n_terms = math.comb(n + k - 1, k - 1)
    if n_terms > COMPOSITION_BUDGET or (k > 3 and n > 40):
        raise TooManyComponentsError(
            f"{k} atoms at n={n} needs {n_terms} compositions"
        )
    Ls = [a[0] for a in atoms]
    qs = [a[1] for a in atoms]
    target = n * c
    tol = 1e-9 * max(1.0, abs(target))
    total = 0.0
    for counts in _compositions(n, k):
        s = math.fsum(cnt * L for cnt, L in zip(counts, Ls))
        if side == "lower":
            if s > target + tol:
                continue
        else:
            if s < target - tol:
                continue
        coef = 1
        rem = n
        for cnt in counts:
            coef *= math.comb(rem, cnt)
            rem -= cnt
        prob = coef
        for cnt, q in zip(counts, qs):
            prob *= q ** cnt
        total += prob
    return min(1.0, total)


@dataclass(frozen=True)
class ConditionalTrajectoryResult:
    """Exact conditional growth profile given the population stays small.

    ``profile[k]`` is E[(1/n) log Z_k | Z_n <= threshold]; None when the
    event has probability zero.
    """

    probability: float
    threshold: int
    profile: Optional[np.ndarray]


def conditional_trajectory(env: EnvironmentLaw, n: int, c: float,
                           z0: int = 1, cap: Optional[int] = None
                           ) -> ConditionalTrajectoryResult:
    """Enumerate environment sequences exactly; population DP inside each.

    For every sequence a forward pass gives the law of Z_k and a backward
    pass the probability of ending below the threshold; their product is
    the joint mass, summed over sequences weighted by the sequence
    probability.  Requires a law that cannot shrink (log of an extinct
    population is undefined) and is hard-capped at n = 12.
    """
    if not env.strongly_supercritical:
        raise NotStronglySupercriticalError(
            "conditional trajectory oracle needs a no-extinction law"
        )
    if n > TRAJECTORY_N_MAX or env.k ** n > SEQUENCE_BUDGET:
        raise BudgetExceededError(
            f"{env.k}^{n} environment sequences exceed the enumeration budget"
        )
    threshold = int(math.floor(math.exp(c * n) + 1e-12))
    if threshold < z0:
        return ConditionalTrajectoryResult(0.0, threshold, None)
    if cap is None:
        cap = threshold
    elif cap < threshold:
        raise CapTooSmallError(f"cap={cap} below event threshold {threshold}")
    ecap = threshold  # states above the threshold can never re-enter the event
    if (ecap + 1) ** 2 * env.k > 4_000_000:
        raise BudgetExceededError(f"transition tables at cap={ecap} too large")

    # per-component transition matrix rows: z-fold convolution powers
    trans = []
    for d in env.components:
        f = _pmf_poly(d)
        rows = np.zeros((ecap + 1, ecap + 1))
        rows[0, 0] = 1.0
        row = np.zeros(1)
        row[0] = 1.0
        for z in range(1, ecap + 1):
            row = np.convolve(row, f)
            if row.size > ecap + 1:
                row = row[: ecap + 1]
            rows[z, : row.size] = row
        trans.append(rows)

    logs = np.zeros(ecap + 1)
    logs[1:] = np.log(np.arange(1, ecap + 1))
    num = np.zeros(n + 1)
    den = 0.0
    below = np.ones(ecap + 1)
    for seq in itertools.product(range(env.k), repeat=n):
        pseq = 1.0
        for i in seq:
            pseq *= env.weights[i]
        fwd = np.zeros((n + 1, ecap + 1))
        fwd[0, z0] = 1.0
        for k, i in enumerate(seq):
            fwd[k + 1] = fwd[k] @ trans[i]
        beta = below.copy()
        joint = np.empty(n + 1)
        joint[n] = fwd[n] @ beta
        contrib = np.empty(n + 1)
        contrib[n] = fwd[n] @ (beta * logs)
        for k in range(n - 1, -1, -1):
            beta = trans[seq[k]] @ beta
            joint[k] = fwd[k] @ beta
            contrib[k] = fwd[k] @ (beta * logs)
        num += pseq * contrib
        den += pseq * joint[0]
    if den <= 0.0:
        return ConditionalTrajectoryResult(0.0, threshold, None)
    return ConditionalTrajectoryResult(
        probability=den, threshold=threshold, profile=num / den / n
    )
