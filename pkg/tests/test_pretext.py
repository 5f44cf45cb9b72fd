import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cmtssl.errors import ConfigurationError, ShapeError
from cmtssl.pretext import (
    MaskingConfig,
    SpatialJigsawConfig,
    SpectralJigsawConfig,
    apply_spatial_permutation,
    apply_spectral_permutation,
    cube_rng,
    decode_permutation,
    inverse_permutation,
    mask_cube,
    patch_mask,
    permutation_target,
    spatial_jigsaw,
    spectral_jigsaw,
)

SPA = SpatialJigsawConfig()
SPE = SpectralJigsawConfig()


def test_target_layout():
    t = permutation_target([2, 0, 1]).reshape(3, 3)
    np.testing.assert_array_equal(t, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])


def test_spatial_slot_receives_original_patch():
    v = np.zeros((16, 16, 1))
    for idx, (r, c) in enumerate(itertools.product(range(2), range(2))):
        v[r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] = idx
    out = apply_spatial_permutation(v, [3, 2, 1, 0], SPA)
    assert out[0, 0, 0] == 3 and out[0, 8, 0] == 2 and out[8, 0, 0] == 1 and out[15, 15, 0] == 0


def test_spectral_blocks_move_whole():
    v = np.broadcast_to(np.arange(8.0), (2, 2, 8)).copy()
    out = apply_spectral_permutation(v, [1, 0, 3, 2], SPE)
    np.testing.assert_array_equal(out[0, 0], [2, 3, 0, 1, 6, 7, 4, 5])


def test_identity_permutation_is_noop(small_cube):
    np.testing.assert_array_equal(apply_spatial_permutation(small_cube, np.arange(4), SPA), small_cube)
    np.testing.assert_array_equal(apply_spectral_permutation(small_cube, np.arange(4), SPE), small_cube)


def test_round_trip_500_pairs():
    rng = np.random.default_rng(7)
    for i in range(500):
        cube = rng.normal(size=(16, 16, 8)).astype(np.float32)
        if i % 2:
            s = spatial_jigsaw(cube, SPA, rng)
            back = apply_spatial_permutation(s.shuffled, inverse_permutation(s.permutation), SPA)
        else:
            s = spectral_jigsaw(cube, SPE, rng)
            back = apply_spectral_permutation(s.shuffled, inverse_permutation(s.permutation), SPE)
        m = s.target.reshape(s.n, s.n)
        assert np.all(m.sum(0) == 1) and np.all(m.sum(1) == 1)
        assert np.array_equal(back, cube)


def test_spatial_grid_requires_divisibility():
    with pytest.raises(ConfigurationError):
        SPA.grid(20, 16)
    with pytest.raises(ConfigurationError):
        SPA.grid(8, 16)


def test_spectral_requires_divisible_bands():
    with pytest.raises(ConfigurationError):
        SPE.block_depth(103)
    with pytest.raises(ConfigurationError):
        SpectralJigsawConfig(5).block_depth(4)


def test_mask_count_default_geometry():
    cfg = MaskingConfig()
    assert cfg.total_patches(16, 16, 32) == 16
    assert cfg.n_masked(16, 16, 32) == 10


def test_mask_count_clamped():
    assert MaskingConfig(ratio=0.01).n_masked(16, 16, 32) == 1
    assert MaskingConfig(ratio=0.99).n_masked(16, 16, 32) == 15


def test_masking_500_seeds_exact_count_and_reassembly():
    cfg = MaskingConfig()
    cube = np.random.default_rng(3).normal(size=(16, 16, 32)).astype(np.float32)
    for seed in range(500):
        s = mask_cube(cube, cfg, np.random.default_rng(seed))
        assert len(s.patches) == 10 == len(set(s.patches.tolist()))
        assert s.mask.sum() == 10 * 8 * 8 * 8
        assert np.all(s.visible[s.mask] == 0)
        assert np.array_equal(s.reassemble(), cube)


def test_patch_mask_geometry():
    cfg = MaskingConfig()
    m = patch_mask((16, 16, 32), cfg, [0])
    assert m[:8, :8, :8].all() and m.sum() == 512
    # flat index order is (h, w, c) row-major: index 4 is the next spatial column
    m4 = patch_mask((16, 16, 32), cfg, [4])
    assert m4[:8, 8:16, :8].all() and m4.sum() == 512


def test_decode_recovers_clean_permutation():
    perm = np.array([2, 0, 3, 1])
    assert np.array_equal(decode_permutation(permutation_target(perm) * 10 - 5), perm)


def test_decode_greedy_agrees_with_exhaustive_on_dominant_matrices():
    rng = np.random.default_rng(11)
    for _ in range(50):
        perm = rng.permutation(4)
        scores = rng.normal(size=(4, 4)) * 0.3 + permutation_target(perm).reshape(4, 4) * 3
        _, best = oracles.best_assignment(scores)
        assert np.array_equal(decode_permutation(scores), best)


def test_decode_rejects_nonsquare():
    with pytest.raises(ShapeError):
        decode_permutation(np.zeros(5))


def test_cube_rng_keyed():
    a = cube_rng(0, 1, 2, 3).random()
    assert a == cube_rng(0, 1, 2, 3).random()
    assert a != cube_rng(0, 1, 2, 4).random()


@settings(max_examples=40, deadline=None)
@given(st.permutations(list(range(4))))
def test_inverse_property(perm):
    inv = inverse_permutation(perm)
    assert list(np.asarray(perm)[inv]) == [0, 1, 2, 3]
