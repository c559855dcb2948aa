import dataclasses

import numpy as np
import pytest

from nnfdet.errors import FormatError, InvalidArgumentError
from nnfdet.featpool import (
    LocalMean,
    NeighborDiff,
    Patch,
    PoolConfig,
    Sidf,
    Ssf,
    canonical_sidf,
    gen_pool,
    mirror_descriptor,
    pool_from_json,
    pool_to_json,
    validate_descriptor,
    validate_pool,
)


def small_cfg(**kw):
    base = dict(n_local_mean=10, n_neighbor_diff=10, n_sidf=10, n_ssf=10, seed=1)
    base.update(kw)
    return PoolConfig(**base)


def test_gen_pool_counts_and_validity():
    pool = gen_pool(small_cfg())
    assert len(pool) == 40
    assert pool.counts() == {"local_mean": 10, "neighbor_diff": 10, "sidf": 10, "ssf": 10}
    assert validate_pool(pool) == []


def test_gen_pool_deterministic():
    a = gen_pool(small_cfg())
    b = gen_pool(small_cfg())
    assert a.descriptors == b.descriptors
    assert pool_to_json(a) == pool_to_json(b)


def test_gen_pool_seed_changes_pool():
    a = gen_pool(small_cfg(seed=1))
    b = gen_pool(small_cfg(seed=2))
    assert a.descriptors != b.descriptors


def test_gen_pool_rejects_bad_geometry():
    with pytest.raises(InvalidArgumentError):
        gen_pool(small_cfg(n_local_mean=-1))
    with pytest.raises(InvalidArgumentError):
        gen_pool(small_cfg(max_square=100))
    with pytest.raises(InvalidArgumentError):
        gen_pool(PoolConfig(n_ssf=1, ssf_side_range=(40, 50)))


def test_large_pool_satisfies_all_invariants():
    pool = gen_pool(PoolConfig(n_local_mean=500, n_neighbor_diff=500,
                               n_sidf=500, n_ssf=500, seed=7))
    assert validate_pool(pool) == []
    # both template halves covered by SIDF thanks to mirrored copies
    sidfs = [d for d in pool.descriptors if isinstance(d, Sidf)]
    assert any(2 * d.a.x + d.a.w > pool.template_w for d in sidfs)
    assert any(2 * d.a.x + d.a.w <= pool.template_w for d in sidfs)


def test_sidf_interval_rule_in_canonical_orientation():
    pool = gen_pool(PoolConfig(n_local_mean=0, n_neighbor_diff=0,
                               n_sidf=300, n_ssf=0, seed=3))
    for d in pool.descriptors:
        c = canonical_sidf(d, pool.template_w)
        assert c.a.y == c.b.y and c.a.h == c.b.h
        assert c.a.x <= c.b.x <= pool.template_w - c.a.x - c.a.w


def test_ssf_subpatch_area_rule():
    pool = gen_pool(PoolConfig(n_local_mean=0, n_neighbor_diff=0,
                               n_sidf=0, n_ssf=200, seed=5))
    for d in pool.descriptors:
        assert isinstance(d, Ssf)
        assert d.channel in (0, 1, 2, 3)
        assert 6 <= d.a.w <= 12 and 6 <= d.a.h <= 12
        for s in d.subpatches:
            assert d.a.contains(s)
            assert 2 * s.area > d.a.area


def test_mirror_local_mean_reflection():
    d = LocalMean(1, Patch(0, 5, 4, 6))
    m = mirror_descriptor(d, 32)
    assert m.a == Patch(28, 5, 4, 6)


def test_mirror_swaps_orientation_channels():
    d = LocalMean(5, Patch(0, 0, 2, 2))  # orientation bin 1
    m = mirror_descriptor(d, 32)
    assert m.channel == 9  # bin 5
    assert mirror_descriptor(m, 32).channel == 5


def test_mirror_is_involution_on_random_pool():
    pool = gen_pool(PoolConfig(n_local_mean=50, n_neighbor_diff=50,
                               n_sidf=50, n_ssf=50, seed=11))
    for d in pool.descriptors:
        assert mirror_descriptor(mirror_descriptor(d, 32), 32) == d


def test_mirror_ssf_is_identity():
    pool = gen_pool(PoolConfig(n_local_mean=0, n_neighbor_diff=0,
                               n_sidf=0, n_ssf=5, seed=2))
    for d in pool.descriptors:
        assert mirror_descriptor(d, 32) is d


def test_validate_catches_violations():
    assert validate_descriptor(LocalMean(0, Patch(0, 0, 9, 2))) != []  # max square
    assert validate_descriptor(LocalMean(12, Patch(0, 0, 2, 2))) != []  # channel
    assert validate_descriptor(
        NeighborDiff(0, Patch(0, 0, 2, 2), Patch(3, 0, 2, 2), "h")) != []  # gap
    assert validate_descriptor(Sidf(0, Patch(2, 0, 4, 4), Patch(0, 0, 4, 4))) != []
    assert validate_descriptor(
        Ssf(5, Patch(0, 0, 8, 8), (Patch(0, 0, 7, 8),) * 3)) != []  # channel
    assert validate_descriptor(
        Ssf(0, Patch(0, 0, 8, 8), (Patch(0, 0, 4, 8),) * 3)) != []  # area rule


def test_pool_json_roundtrip():
    pool = gen_pool(small_cfg())
    text = pool_to_json(pool)
    again = pool_from_json(text)
    assert again.descriptors == pool.descriptors
    assert pool_to_json(again) == text


def test_pool_json_rejects_unknown_version():
    pool = gen_pool(small_cfg(n_local_mean=1, n_neighbor_diff=0, n_sidf=0, n_ssf=0))
    text = pool_to_json(pool).replace('"version":1', '"version":99')
    with pytest.raises(FormatError):
        pool_from_json(text)


def test_descriptors_are_immutable():
    d = LocalMean(0, Patch(0, 0, 2, 2))
    with pytest.raises(dataclasses.FrozenInstanceError):
        d.channel = 3
