import math

import pytest

from bpre import build_environment, population_distribution


def g2_law():
    return build_environment([(0.5, {1: 0.5, 2: 0.5}), (0.5, {2: 0.5, 4: 0.5})])


def two_mean_law():
    # calibrated so the two log-means are 1 and 2 up to float rounding
    e = math.e
    comp1 = {1: 0.7, 6: 2.8 - e, 7: e - 2.5}
    comp2 = {1: 0.1, 8: 8.2 - e * e, 9: e * e - 7.3}
    return build_environment([(0.5, comp1), (0.5, comp2)])


def subcrit_law():
    return build_environment([(0.5, {0: 0.5, 1: 0.5}), (0.5, {1: 1.0})])


@pytest.fixture
def g2():
    return g2_law()


@pytest.fixture
def fig_law():
    return two_mean_law()


@pytest.fixture
def subcrit():
    return subcrit_law()


@pytest.fixture
def dirac2():
    return build_environment([(1.0, {2: 1.0})])


@pytest.fixture
def no_hold():
    # strongly supercritical with no single-offspring mass anywhere
    return build_environment([(0.5, {2: 1.0}), (0.5, {3: 1.0})])


def event_threshold(n: int, c: float) -> int:
    return int(math.floor(math.exp(c * n) + 1e-12))


def exact_lower(env, n, c, z0=1, cap=None):
    k = event_threshold(n, c)
    if k < z0:
        return 0.0
    if cap is None:
        cap = max(k, z0)
    return population_distribution(env, n, z0=z0, cap=cap).prob_le(k)


def exact_mean_take_off(env, n, c, pop_threshold, z0=1):
    """Conditional mean of tau/n given the lower event, by exact enumeration.

    Populations never shrink here, so tau > j exactly when z[j] is still at or
    below the threshold, and E[tau; event] telescopes over j.
    """
    k = event_threshold(n, c)
    if k < z0:
        return None
    den = population_distribution(env, n, z0=z0, cap=k).prob_le(k)
    if den <= 0.0:
        return None
    num = 0.0
    for j in range(n):
        dj = population_distribution(env, j, z0=z0, cap=max(pop_threshold, z0))
        for z in range(z0, pop_threshold + 1):
            pz = dj.prob_eq(z)
            if pz > 0.0:
                num += pz * population_distribution(env, n - j, z0=z, cap=k).prob_le(k)
    return num / den / n
