import numpy as np
import pytest
from scipy.special import ndtri

from sfde.rng import gaussian_block, norm_ppf, philox4x32, standard_normals, uniforms


# Known-answer vectors of the Random123 distribution (kat_vectors, philox4x32 10 rounds).
@pytest.mark.parametrize("ctr, key, expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(*ctr, *key)
    assert tuple(int(w) for w in out) == expected


def test_uniforms_strictly_inside_unit_interval():
    u = uniforms(1, np.arange(4)[:, None], np.arange(5000)[None, :], 0)
    assert u.min() > 0.0 and u.max() < 1.0


def test_norm_ppf_matches_scipy():
    rng = np.random.default_rng(0)
    u = np.concatenate([rng.uniform(size=20000), 10.0 ** -rng.uniform(1, 300, size=2000),
                        1 - 10.0 ** -rng.uniform(1, 15, size=2000), [0.5, 0.075, 0.925]])
    ours = norm_ppf(u)
    ref = ndtri(u)
    scale = np.maximum(np.abs(ref), 1e-300)
    assert np.max(np.abs(ours - ref) / scale) < 1e-14
    assert ours[-3] == 0.0


def test_norm_ppf_symmetry():
    # Dyadic u so that 1 - u is exact.
    u = np.arange(1, 2**19 + 1) / 2.0**20
    assert np.array_equal(norm_ppf(u), -norm_ppf(1 - u))


def test_compiled_block_matches_reference_route():
    seed, streams, n, m = 2**40 + 17, np.array([0, 5, 2**33 + 1], dtype=np.uint64), 300, 3
    fast = gaussian_block(seed, streams, n, m)
    ref = standard_normals(seed, streams[:, None, None], np.arange(n)[None, :, None],
                           np.arange(m)[None, None, :])
    assert np.array_equal(fast, ref)


def test_streams_do_not_depend_on_batch_composition():
    a = gaussian_block(9, [7], 64, 2)[0]
    b = gaussian_block(9, [3, 7, 11], 64, 2)[1]
    assert np.array_equal(a, b)
    assert not np.array_equal(gaussian_block(9, [3], 64, 2)[0], a)
    assert not np.array_equal(gaussian_block(10, [7], 64, 2)[0], a)


def test_block_moments():
    z = gaussian_block(123, np.arange(8), 1 << 17, 1).ravel()
    n = z.size
    assert abs(z.mean()) < 4 / np.sqrt(n)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / n)
    # Neighbouring steps are uncorrelated.
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 4 / np.sqrt(n)
