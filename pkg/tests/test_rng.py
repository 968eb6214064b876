import numpy as np
import pytest

from bruq import rng

# Random123 known-answer vectors for philox4x32-10
KAT = [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    (
        (0xFFFFFFFF,) * 4,
        (0xFFFFFFFF, 0xFFFFFFFF),
        (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD),
    ),
    (
        (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
        (0xA4093822, 0x299F31D0),
        (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
    ),
]


@pytest.mark.parametrize("counter,key,expected", KAT)
def test_philox_known_answers(counter, key, expected):
    out = rng.philox4x32(np.array(counter, dtype=np.uint64).reshape(4, 1), key)
    assert tuple(int(v) for v in out[:, 0]) == expected


def test_uniforms_depend_only_on_counter():
    whole = rng.uniforms(42, np.arange(1000, dtype=np.uint64), step=3)
    pieces = np.concatenate(
        [rng.uniforms(42, np.arange(a, b, dtype=np.uint64), step=3) for a, b in [(0, 7), (7, 500), (500, 1000)]]
    )
    assert np.array_equal(whole, pieces)
    assert rng.uniform(42, 123, step=3) == whole[123]


def test_streams_steps_and_seeds_differ():
    idx = np.arange(100, dtype=np.uint64)
    a = rng.uniforms(1, idx, step=0)
    assert not np.array_equal(a, rng.uniforms(1, idx, step=1))
    assert not np.array_equal(a, rng.uniforms(2, idx, step=0))
    assert not np.array_equal(a, rng.uniforms(1, idx, step=0, stream=rng.STREAM_GUIDANCE))


def test_uniform_range_and_moments():
    u = rng.uniforms(7, np.arange(200_000, dtype=np.uint64))
    assert u.min() >= 0.0 and u.max() < 1.0
    # mean of U(0,1) has standard error sqrt(1/12/N)
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


def test_large_seed_and_index():
    u = rng.uniforms(2**64 - 1, np.array([2**40], dtype=np.uint64))
    assert 0.0 <= u[0] < 1.0
    with pytest.raises(ValueError):
        rng.uniforms(-1, [0])
