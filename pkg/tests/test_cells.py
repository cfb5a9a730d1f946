import math

import numpy as np
import pytest
import scipy.stats

from bpre import (
    BudgetExceededError,
    CellTreeConfig,
    build_environment,
    build_offspring,
    expected_count_identity,
    population_distribution,
    simulate_cell_tree,
    uniform_leaf_counts,
)


def g2_laws():
    return build_offspring({1: 0.5, 2: 0.5}), build_offspring({2: 0.5, 4: 0.5})


def coupled_double(z, rng):
    return z, 2 * z


def test_frozen_single_parasite():
    one = build_offspring({1: 1.0})
    config = CellTreeConfig(n=5, law1=one, law2=one, c=0.5, seed=0, replicas=3)
    res = simulate_cell_tree(config)
    assert np.all(res.below == 2**5)
    assert np.all(res.above == 0)
    assert res.mean_below == 32.0 and res.stderr_below == 0.0


def test_one_split_deterministic():
    config = CellTreeConfig(
        n=1,
        law1=build_offspring({1: 1.0}),
        law2=build_offspring({2: 1.0}),
        c=0.5,
        seed=0,
        replicas=2,
    )
    # threshold e^{0.5} sits strictly between the two daughter loads
    res = simulate_cell_tree(config)
    assert np.all(res.below == 1)
    assert np.all(res.above == 1)


def test_sure_event_counts_everything():
    law1, law2 = g2_laws()
    c = math.log(4.0) + 0.1
    config = CellTreeConfig(n=4, law1=law1, law2=law2, c=c, seed=3, replicas=8)
    res = simulate_cell_tree(config)
    assert np.all(res.below == 2**4)
    report = expected_count_identity(config, result=res)
    assert report.probability == pytest.approx(1.0, abs=1e-12)
    assert report.expected == pytest.approx(2.0**4, abs=1e-9)
    assert report.z_score == 0.0


def test_below_above_partition():
    law1, law2 = g2_laws()
    config = CellTreeConfig(n=6, law1=law1, law2=law2, c=0.35, seed=3, replicas=5)
    res = simulate_cell_tree(config)
    # irrational threshold: no leaf load ties, the two counts tile the leaves
    assert np.all(res.below + res.above == 2**6)
    assert res.threshold == pytest.approx(math.exp(0.35 * 6))


def test_identity_matches_exact_marginal():
    law1, law2 = g2_laws()
    config = CellTreeConfig(n=8, law1=law1, law2=law2, c=0.4, seed=12, replicas=400)
    report = expected_count_identity(config, workers=4)
    assert report.probability == pytest.approx(0.012010430361483361, abs=1e-12)
    assert report.expected == pytest.approx(2.0**8 * report.probability, rel=1e-12)
    assert abs(report.z_score) <= 3.0


def test_joint_sampler_hook():
    law1, law2 = g2_laws()
    config = CellTreeConfig(n=3, law1=law1, law2=law2, c=math.log(3.0) / 3.0, seed=0, replicas=4)
    res = simulate_cell_tree(config, joint=coupled_double)
    # loads over three splits are 2^j with binomial multiplicity; threshold 3
    assert np.all(res.below == 4)
    assert np.all(res.above == 4)


def test_uniform_leaf_matches_marginal_law():
    law1, law2 = g2_laws()
    env = build_environment([(0.5, law1.pmf_dict()), (0.5, law2.pmf_dict())])
    n = 6
    config = CellTreeConfig(n=n, law1=law1, law2=law2, c=0.4, seed=21, replicas=4_000)
    counts = uniform_leaf_counts(config, workers=4)
    assert counts.shape == (4_000,)
    dist = population_distribution(env, n, z0=1, cap=4**n)
    values = [z for z in range(4**n + 1) if dist.prob_eq(z) > 0.0]
    probs = np.array([dist.prob_eq(z) for z in values])
    observed = np.array([int(np.sum(counts == z)) for z in values])
    # group low-expectation states so the chi-square approximation holds
    expected = probs * counts.size
    order = np.argsort(-expected)
    obs_b, exp_b = [], []
    acc_o = acc_e = 0.0
    for idx in order:
        acc_o += observed[idx]
        acc_e += expected[idx]
        if acc_e >= 8.0:
            obs_b.append(acc_o)
            exp_b.append(acc_e)
            acc_o = acc_e = 0.0
    obs_b[-1] += acc_o
    exp_b[-1] += acc_e
    stat = float(np.sum((np.array(obs_b) - np.array(exp_b)) ** 2 / np.array(exp_b)))
    pvalue = float(scipy.stats.chi2.sf(stat, df=len(obs_b) - 1))
    assert pvalue > 0.01


def test_worker_invariance():
    law1, law2 = g2_laws()
    config = CellTreeConfig(n=6, law1=law1, law2=law2, c=0.4, seed=9, replicas=60)
    a = simulate_cell_tree(config, workers=1)
    b = simulate_cell_tree(config, workers=6)
    assert np.array_equal(a.below, b.below)
    assert np.array_equal(a.above, b.above)


def test_config_validation():
    law1, law2 = g2_laws()
    with pytest.raises(BudgetExceededError):
        CellTreeConfig(n=21, law1=law1, law2=law2, c=0.4)
    with pytest.raises(ValueError):
        CellTreeConfig(n=0, law1=law1, law2=law2, c=0.4)
    with pytest.raises(ValueError):
        CellTreeConfig(n=3, law1=law1, law2=law2, c=0.4, replicas=0)
