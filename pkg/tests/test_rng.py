import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singsde import rng


# Random123 known-answer vectors for Philox-4x64-10
KAT = [
    ((0, 0, 0, 0), (0, 0),
     (0x16554d9eca36314c, 0xdb20fe9d672d0fdc, 0xd7e772cee186176b, 0x7e68b68aec7ba23b)),
    ((2**64 - 1,) * 4, (2**64 - 1,) * 2,
     (0x87b092c3013fe90b, 0x438c3c67be8d0224, 0x9cc7d7c69cd777b6, 0xa09caebf594f0ba0)),
    ((0x243f6a8885a308d3, 0x13198a2e03707344, 0xa4093822299f31d0, 0x082efa98ec4e6c89),
     (0x452821e638d01377, 0xbe5466cf34e90c6c),
     (0xa528f45403e61d95, 0x38c72dbd566e9788, 0xa5a1610e72fd18b5, 0x57bd43b5e52b7fe6)),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = rng.philox4x64(np.array([ctr], dtype=np.uint64),
                         np.array([key], dtype=np.uint64))
    assert tuple(int(v) for v in out[0]) == expected


def test_uniforms_range_and_shape():
    u = rng.uniforms(3, np.arange(50), rng.BROWNIAN, 0, 20, 3)
    assert u.shape == (20, 50, 3)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 0.02


def test_normals_moments():
    z = rng.normals(1, np.arange(2000), rng.BROWNIAN, 0, 10, 2).reshape(-1)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1) < 0.03


def test_streams_and_seeds_differ():
    a = rng.uniforms(1, [0], rng.BROWNIAN, 0, 4, 4)
    assert not np.array_equal(a, rng.uniforms(2, [0], rng.BROWNIAN, 0, 4, 4))
    assert not np.array_equal(a, rng.uniforms(1, [0], rng.AUX, 0, 4, 4))
    assert not np.array_equal(a, rng.uniforms(1, [1], rng.BROWNIAN, 0, 4, 4))


@given(st.integers(0, 2**63), st.integers(0, 30), st.integers(1, 20),
       st.integers(1, 7))
def test_step_ranges_are_slices_of_one_sequence(seed, start, n, width):
    paths = np.array([0, 5, 17])
    full = rng.uniforms(seed, paths, rng.BROWNIAN, 0, start + n, width)
    part = rng.uniforms(seed, paths, rng.BROWNIAN, start, n, width)
    assert np.array_equal(full[start:], part)


@given(st.integers(0, 2**32), st.lists(st.integers(0, 10**6), min_size=1,
                                       max_size=6, unique=True))
def test_paths_are_independent_of_batch(seed, ids):
    together = rng.normals(seed, ids, rng.BROWNIAN, 0, 3, 2)
    for j, p in enumerate(ids):
        alone = rng.normals(seed, [p], rng.BROWNIAN, 0, 3, 2)
        assert np.array_equal(alone[:, 0], together[:, j])


def test_path_streams_block_matches_normals():
    ps = rng.PathStreams(9, np.arange(4), 2)
    assert np.array_equal(ps.block(5, 3), rng.normals(9, np.arange(4),
                                                      rng.BROWNIAN, 5, 3, 2))
