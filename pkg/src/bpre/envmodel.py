"""Finite offspring distributions and finite environment mixtures.

An offspring distribution is a finite pmf over non-negative integer counts.
An environment law is a finite weighted mixture of offspring distributions;
each generation of the population process draws one component i.i.d. and
every individual then reproduces according to it.  Restricting to finite
support keeps every moment finite and makes exact enumeration possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Tuple, Union

import numpy as np

from .errors import (
    DuplicateKeyError,
    MassNotOneError,
    NegativeProbError,
    WeightsNotOneError,
    ZeroMeanComponentError,
)

# Drift beyond REJECT_TOL is an input error; anything smaller is renormalized
# so that stored masses sum to 1 within SUM_TOL.
REJECT_TOL = 1e-9
SUM_TOL = 1e-12

PmfLike = Union[Mapping[int, float], Iterable[Tuple[int, float]]]


@dataclass(frozen=True, eq=False)
class OffspringDistribution:
    """Immutable finite pmf over offspring counts, with cached moments."""

    support: Tuple[int, ...]
    probs: Tuple[float, ...]
    mean: float
    second_moment: float
    variance: float
    p0: float
    p1: float

    def __post_init__(self):
        # numpy views used by the hot sampling paths
        object.__setattr__(self, "support_arr", np.array(self.support, dtype=np.int64))
        object.__setattr__(self, "probs_arr", np.array(self.probs, dtype=np.float64))

    @property
    def max_offspring(self) -> int:
        return self.support[-1]

    @property
    def min_offspring(self) -> int:
        return self.support[0]

    def prob(self, k: int) -> float:
        try:
            return self.probs[self.support.index(k)]
        except ValueError:
            return 0.0

    def pmf_dict(self) -> dict:
        return dict(zip(self.support, self.probs))

    def __repr__(self):
        body = ", ".join(f"{k}: {p:.6g}" for k, p in zip(self.support, self.probs))
        return f"OffspringDistribution({{{body}}})"


def build_offspring(pmf: PmfLike) -> OffspringDistribution:
    """Validate and freeze a pmf given as {count: prob} or (count, prob) pairs.

    Rejects negative masses, duplicate counts, and total mass further than
    1e-9 from 1; smaller drift is renormalized rather than rejected.
    """
    items = list(pmf.items()) if isinstance(pmf, Mapping) else list(pmf)
    if not items:
        raise MassNotOneError("empty pmf")
    seen = set()
    cleaned = []
    for k, p in items:
        k = int(k)
        if k < 0:
            raise NegativeProbError(f"offspring count {k} is negative")
        if p < 0:
            raise NegativeProbError(f"prob of count {k} is negative ({p})")
        if k in seen:
            raise DuplicateKeyError(f"count {k} appears twice")
        seen.add(k)
        cleaned.append((k, float(p)))
    total = math.fsum(p for _, p in cleaned)
    if abs(total - 1.0) > REJECT_TOL:
        raise MassNotOneError(f"pmf mass is {total!r}, not 1")
    cleaned.sort()
    support = tuple(k for k, _ in cleaned)
    probs = tuple(p / total for _, p in cleaned)
    assert abs(math.fsum(probs) - 1.0) <= SUM_TOL
    mean = math.fsum(k * p for k, p in zip(support, probs))
    m2 = math.fsum(k * k * p for k, p in zip(support, probs))
    var = max(0.0, m2 - mean * mean)
    lookup = dict(zip(support, probs))
    return OffspringDistribution(
        support=support,
        probs=probs,
        mean=mean,
        second_moment=m2,
        variance=var,
        p0=lookup.get(0, 0.0),
        p1=lookup.get(1, 0.0),
    )


@dataclass(frozen=True, eq=False)
class EnvironmentLaw:
    """Immutable finite mixture of offspring distributions.

    ``log_means[i]`` is the log of component i's mean offspring count; the
    partial sums of i.i.d. draws of these form the random walk that controls
    the conditional growth of the population.
    """

    weights: Tuple[float, ...]
    components: Tuple[OffspringDistribution, ...]
    log_means: Tuple[float, ...]
    mean_log_mean: float          # average log-mean, the typical growth rate
    mean_p1: float                # average single-offspring mass, cost of holding at 1
    log_mean_min: float
    log_mean_max: float
    strongly_supercritical: bool  # no component can produce zero offspring
    all_noncrit_below: bool       # every component mean <= 1: no growth possible
    max_mean: float
    max_second_moment: float

    def __post_init__(self):
        object.__setattr__(self, "weights_arr", np.array(self.weights, dtype=np.float64))
        object.__setattr__(self, "log_means_arr", np.array(self.log_means, dtype=np.float64))
        object.__setattr__(self, "cum_weights", np.cumsum(self.weights_arr))

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def hold_cost(self) -> float:
        """-log of the mean single-offspring mass; +inf when holding is impossible."""
        return -math.log(self.mean_p1) if self.mean_p1 > 0 else math.inf

    def __repr__(self):
        body = "; ".join(
            f"{w:.4g}*{d!r}" for w, d in zip(self.weights, self.components)
        )
        return f"EnvironmentLaw({body})"


def build_environment(components: Sequence[Tuple[float, PmfLike]]) -> EnvironmentLaw:
    """Build an environment law from (weight, pmf) pairs.

    Weights must be positive and sum to 1 within 1e-9 (renormalized below
    that).  Every component must have positive mean so its log-mean exists.
    """
    if not components:
        raise WeightsNotOneError("no components")
    ws = []
    dists = []
    for w, pmf in components:
        if w <= 0:
            raise WeightsNotOneError(f"component weight {w!r} is not positive")
        ws.append(float(w))
        dists.append(pmf if isinstance(pmf, OffspringDistribution) else build_offspring(pmf))
    total = math.fsum(ws)
    if abs(total - 1.0) > REJECT_TOL:
        raise WeightsNotOneError(f"weights sum to {total!r}, not 1")
    weights = tuple(w / total for w in ws)
    for d in dists:
        if d.mean <= 0:
            raise ZeroMeanComponentError(f"component {d!r} has zero mean")
    log_means = tuple(math.log(d.mean) for d in dists)
    lbar = math.fsum(w * L for w, L in zip(weights, log_means))
    mean_p1 = math.fsum(w * d.p1 for w, d in zip(weights, dists))
    return EnvironmentLaw(
        weights=weights,
        components=tuple(dists),
        log_means=log_means,
        mean_log_mean=lbar,
        mean_p1=mean_p1,
        log_mean_min=min(log_means),
        log_mean_max=max(log_means),
        strongly_supercritical=all(d.p0 == 0.0 for d in dists),
        all_noncrit_below=all(d.mean <= 1.0 for d in dists),
        max_mean=max(d.mean for d in dists),
        max_second_moment=max(d.second_moment for d in dists),
    )


# --- serialization -----------------------------------------------------
# Wire schema: {"environments": [{"weight": w, "pmf": {"k": prob}}]} with
# decimal-string integer keys in the pmf.

def environment_to_dict(env: EnvironmentLaw) -> dict:
    return {
        "environments": [
            {"weight": w, "pmf": {str(k): p for k, p in zip(d.support, d.probs)}}
            for w, d in zip(env.weights, env.components)
        ]
    }


def environment_from_dict(data: Mapping) -> EnvironmentLaw:
    try:
        entries = data["environments"]
    except (KeyError, TypeError):
        raise MassNotOneError("config lacks an 'environments' list")
    comps = []
    for entry in entries:
        pmf = {int(k): float(p) for k, p in entry["pmf"].items()}
        comps.append((float(entry["weight"]), pmf))
    return build_environment(comps)


def environment_to_json(env: EnvironmentLaw) -> str:
    return json.dumps(environment_to_dict(env), indent=2)


def environment_from_json(text: str) -> EnvironmentLaw:
    return environment_from_dict(json.loads(text))
