"""Population process simulator.

One generation: draw an environment component, then replace each of the z
individuals by an independent draw from that component.  The per-step work
is O(support size), independent of z, because only the multinomial
allocation of individuals over the support is sampled, never individuals
one by one.  Populations are plain Python ints so they can pass 2^63
without corrupting exact threshold predicates.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .envmodel import EnvironmentLaw, OffspringDistribution
from .results import EstimatorResult, Method
from .rng import STREAM_LINEAGE, STREAM_SIM, replica_stream

# Above this population the multinomial total would overflow numpy's int64;
# switch to a moment-matched normal draw of the total offspring count.  The
# distributional error is O(1/sqrt(z)) < 1e-9, orders of magnitude below
# any threshold resolution once z is this large.
EXACT_LIMIT = 1 << 62


@dataclass(frozen=True)
class SimConfig:
    env: EnvironmentLaw
    n: int
    z0: int = 1
    seed: int = 0
    replicas: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"horizon n={self.n} must be >= 1")
        if self.z0 < 1:
            raise ValueError(f"initial population z0={self.z0} must be >= 1")
        if self.replicas < 1:
            raise ValueError(f"replicas={self.replicas} must be >= 1")


@dataclass
class Trajectory:
    """One realized path: populations, environment indices, log-mean walk."""

    z: List[int]
    env_idx: List[int]
    s: List[float]

    @property
    def n(self) -> int:
        return len(self.env_idx)

    @property
    def final_z(self) -> int:
        return self.z[-1]

    @property
    def final_s(self) -> float:
        return self.s[-1]

    def take_off_step(self, threshold: int) -> Optional[int]:
        """First generation with population above threshold, None if never."""
        for k, zk in enumerate(self.z):
            if zk > threshold:
                return k
        return None


def draw_env_index(env: EnvironmentLaw, rng: np.random.Generator) -> int:
    u = rng.random()
    i = int(np.searchsorted(env.cum_weights, u, side="right"))
    return min(i, env.k - 1)


def branch_step(z: int, dist: OffspringDistribution, rng: np.random.Generator) -> int:
    """Total offspring of z individuals reproducing independently via dist."""
    if z < 0:
        raise ValueError(f"population {z} is negative")
    if z == 0:
        return 0
    if len(dist.support) == 1:
        return z * dist.support[0]
    if z <= EXACT_LIMIT:
        counts = rng.multinomial(int(z), dist.probs_arr)
        # the k-weighted sum can exceed int64, so accumulate in Python ints
        return sum(int(k) * int(c) for k, c in zip(dist.support, counts) if c)
    if z.bit_length() > 1000:
        # beyond float range; noise is ~2^-500 relative here, drop it
        scale = int(dist.mean * (1 << 60))
        out = (z * scale) >> 60
    else:
        zf = float(z)
        g = rng.standard_normal()
        out = int(round(zf * dist.mean + g * math.sqrt(zf * dist.variance)))
    lo = z * dist.min_offspring
    hi = z * dist.max_offspring
    return min(max(out, lo), hi)


def run(config: SimConfig, replica: int = 0) -> Trajectory:
    """Simulate one replica.  Fully determined by (seed, replica, config)."""
    env = config.env
    rng = replica_stream(config.seed, STREAM_SIM + replica)
    z = int(config.z0)
    s = 0.0
    zs = [z]
    ss = [0.0]
    idxs: List[int] = []
    check = env.strongly_supercritical
    for _ in range(config.n):
        i = draw_env_index(env, rng)
        z_new = branch_step(z, env.components[i], rng)
        if check:
            assert z_new >= z, "population decreased under a no-extinction law"
        z = z_new
        s += env.log_means[i]
        idxs.append(i)
        zs.append(z)
        ss.append(s)
    return Trajectory(z=zs, env_idx=idxs, s=ss)


# --- event predicates (picklable, reusable from the CLI) ---------------

@dataclass(frozen=True)
class PopulationAtMost:
    threshold: float

    def __call__(self, traj: Trajectory) -> bool:
        return traj.final_z <= self.threshold


@dataclass(frozen=True)
class PopulationAtLeast:
    threshold: float

    def __call__(self, traj: Trajectory) -> bool:
        return traj.final_z >= self.threshold


# --- batched execution -------------------------------------------------

def chunk_ranges(total: int, parts: int) -> List[Tuple[int, int]]:
    parts = max(1, min(parts, total))
    step = (total + parts - 1) // parts
    return [(lo, min(lo + step, total)) for lo in range(0, total, step)]


def run_chunked(worker: Callable, args_list: Sequence[tuple], workers: int) -> list:
    """Run worker(*args) per chunk, serially or in a process pool.

    Results come back in submission order, so any downstream reduction
    that walks them in order is independent of worker count.
    """
    if workers <= 1:
        return [worker(*args) for args in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, *args) for args in args_list]
        return [f.result() for f in futures]


def _naive_chunk(config: SimConfig, lo: int, hi: int, event) -> np.ndarray:
    hits = np.zeros(hi - lo, dtype=bool)
    for j, r in enumerate(range(lo, hi)):
        hits[j] = bool(event(run(config, replica=r)))
    return hits


def run_batch(config: SimConfig, event: Callable[[Trajectory], bool],
              workers: int = 1) -> EstimatorResult:
    """Naive Monte Carlo estimate of P(event) over config.replicas replicas.

    Replica r always uses the stream keyed by (seed, r), so the estimate is
    byte-identical for any worker count.
    """
    reps = config.replicas
    chunks = chunk_ranges(reps, workers if workers > 1 else 1)
    parts = run_chunked(_naive_chunk, [(config, lo, hi, event) for lo, hi in chunks],
                        workers)
    hits = np.concatenate(parts) if len(parts) > 1 else parts[0]
    k = int(hits.sum())
    p = k / reps
    stderr = math.sqrt(p * (1.0 - p) / reps)
    return EstimatorResult(
        estimate=p, stderr=stderr, ess=float(k), method=Method.NAIVE,
        n=config.n, c=math.nan, replicas=reps, seed=config.seed,
        zero_mass=(k == 0),
    )


def _final_chunk(config: SimConfig, lo: int, hi: int, threshold: Optional[int]):
    zs: List[int] = []
    ss = np.zeros(hi - lo)
    taus = np.zeros(hi - lo, dtype=np.int64)
    for j, r in enumerate(range(lo, hi)):
        traj = run(config, replica=r)
        zs.append(traj.final_z)
        ss[j] = traj.final_s
        if threshold is not None:
            tk = traj.take_off_step(threshold)
            taus[j] = config.n if tk is None else min(tk, config.n)
    return zs, ss, taus


def final_states(config: SimConfig, threshold: Optional[int] = None,
                 workers: int = 1) -> Tuple[List[int], np.ndarray, np.ndarray]:
    """Per-replica (final population, final walk value, capped take-off step).

    Take-off steps are n when the population never passes the threshold or
    when no threshold is given.
    """
    chunks = chunk_ranges(config.replicas, workers if workers > 1 else 1)
    parts = run_chunked(_final_chunk,
                        [(config, lo, hi, threshold) for lo, hi in chunks], workers)
    zs: List[int] = []
    for part_z, _, _ in parts:
        zs.extend(part_z)
    ss = np.concatenate([p[1] for p in parts])
    taus = np.concatenate([p[2] for p in parts])
    return zs, ss, taus


def random_lineage(env: EnvironmentLaw, n: int, seed: int = 0,
                   replica: int = 0) -> np.ndarray:
    """Offspring counts along one uniformly chosen line of descent.

    Each count is an independent draw from the weight-mixture pmf
    sum_i w_i * pmf_i: picking a uniform child makes the parent's count
    appear with its plain (unsized) probability.
    """
    support: dict = {}
    for w, d in zip(env.weights, env.components):
        for k, p in zip(d.support, d.probs):
            support[k] = support.get(k, 0.0) + w * p
    ks = np.array(sorted(support), dtype=np.int64)
    ps = np.array([support[k] for k in sorted(support)])
    ps = ps / ps.sum()
    rng = replica_stream(seed, STREAM_LINEAGE + replica)
    return rng.choice(ks, size=n, p=ps)
