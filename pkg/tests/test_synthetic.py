import numpy as np
import pytest

from cmtssl.difficulty import score_many
from cmtssl.errors import ConfigurationError
from cmtssl.synthetic import SyntheticSpec, generate_scene, random_prototypes


def test_shapes_and_labels():
    sc = generate_scene(SyntheticSpec(height=32, width=40, bands=12, num_classes=4, seed=1))
    assert sc.pixels.shape == (32, 40, 12)
    assert set(np.unique(sc.label_map)) == {0, 1, 2, 3}
    assert len(sc.wavelengths) == 12


def test_seed_reproducible():
    a = generate_scene(SyntheticSpec(height=16, width=16, bands=4, seed=3))
    b = generate_scene(SyntheticSpec(height=16, width=16, bands=4, seed=3))
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_amplitude_does_not_change_layout():
    a = generate_scene(SyntheticSpec(height=32, width=32, bands=8, texture_amplitude=0.0, seed=5))
    b = generate_scene(SyntheticSpec(height=32, width=32, bands=8, texture_amplitude=2.0, seed=5))
    np.testing.assert_array_equal(a.label_map, b.label_map)


def test_texture_raises_difficulty():
    scores = []
    for amp in (0.0, 0.5, 2.0):
        sc = generate_scene(SyntheticSpec(height=32, width=32, bands=8, texture_amplitude=amp, noise_std=0.02, seed=2))
        scores.append(score_many(sc.pixels[None].astype(np.float64))[0])
    assert scores[0] < scores[1] < scores[2]


def test_prototype_margin():
    p = random_prototypes(5, 16, np.random.default_rng(0), margin=1.0)
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    assert d[~np.eye(5, dtype=bool)].min() >= 1.0


def test_explicit_prototypes():
    protos = np.eye(3, 6) * 10
    sc = generate_scene(SyntheticSpec(height=16, width=16, bands=6, prototypes=protos, texture_amplitude=0,
                                      noise_std=0, seed=0))
    np.testing.assert_allclose(sc.pixels, protos[sc.label_map])


@pytest.mark.parametrize("kw", [dict(bands=0), dict(num_classes=0), dict(texture_amplitude=-1.0), dict(noise_std=-1.0)])
def test_invalid(kw):
    with pytest.raises(ConfigurationError):
        SyntheticSpec(**kw)


def test_bad_prototype_shape():
    with pytest.raises(ConfigurationError):
        generate_scene(SyntheticSpec(height=8, width=8, bands=4, prototypes=np.zeros((3, 5))))


@pytest.mark.slow
def test_fresh_model_learns_generated_scene():
    import time

    from cmtssl.config import RunConfig
    from cmtssl.experiment import load_data, run_strategy

    start = time.perf_counter()
    cfg = RunConfig({"synthetic": {"pretrain_scenes": 0}, "finetune": {"epochs": 60}})
    result = run_strategy(cfg, load_data(cfg), "scratch", 0)
    assert result.report.oa >= 0.9
    assert time.perf_counter() - start < 300
