import numpy as np
import pytest
import torch

from cmtssl.errors import ConfigurationError, FormatError, ShapeError
from cmtssl.model import (
    EncoderSpec,
    HeadSpec,
    build_model,
    default_heads,
    load_checkpoint,
    resolve_checkpoint,
    save_checkpoint,
)


def _model(bands=32, seed=0, **kw):
    enc = EncoderSpec(bands=bands, **kw)
    return build_model(enc, default_heads(enc), seed=seed)


def test_parameter_counts_frozen():
    assert _model(32).parameter_count() == 17320
    enc = EncoderSpec(bands=103)
    heads = [HeadSpec("spatial", (2, 2)), HeadSpec("mim")]
    assert build_model(enc, heads + [HeadSpec("spectral", (4,))]).parameter_count() == 18811


def test_budget_enforced():
    enc = EncoderSpec(widths=(64, 64, 64, 64))
    with pytest.raises(ConfigurationError):
        build_model(enc, default_heads(enc))
    assert build_model(enc, default_heads(enc), check_budget=False).parameter_count() > 25000


def test_output_shapes(small_cube):
    m = _model(8)
    x = torch.from_numpy(np.stack([small_cube, small_cube]))
    assert m.forward_spatial(x).shape == (2, 16)
    assert m.forward_spectral(x).shape == (2, 16)
    assert m.forward_mim(x).shape == (2, 16, 16, 8)
    seg = m.with_segmentation_head(3)
    assert seg.forward_segmentation(x).shape == (2, 16, 16, 3)


def test_wrong_input_shape():
    with pytest.raises(ShapeError):
        _model(8).forward_mim(torch.zeros(1, 16, 16, 9))


def test_invalid_specs():
    with pytest.raises(ConfigurationError):
        EncoderSpec(height=18)
    with pytest.raises(ConfigurationError):
        HeadSpec("colour")
    enc = EncoderSpec(bands=8)
    with pytest.raises(ConfigurationError):
        build_model(enc, [HeadSpec("spatial", (3, 3))])


def test_seeded_init_is_reproducible():
    a, b, c = _model(seed=1), _model(seed=1), _model(seed=2)
    for (_, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert torch.equal(pa, pb)
    assert not all(torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_fan_in_uniform_bounds():
    m = _model()
    for name, p in m.named_parameters():
        if name.endswith("bias"):
            assert torch.all(p == 0)
        else:
            fan_in = p[0].numel()
            assert float(p.detach().abs().max()) <= np.sqrt(6.0 / fan_in) + 1e-7


def test_segmentation_head_init_shared_between_runs():
    enc = EncoderSpec(bands=8)
    scratch = build_model(enc, [HeadSpec("segmentation", (3,))], seed=4)
    pretrained = _model(8, seed=4).with_segmentation_head(3, seed=4)
    for a, b in zip(scratch.heads["segmentation"].parameters(), pretrained.heads["segmentation"].parameters()):
        assert torch.equal(a, b)


def test_forward_pretext_matches_separate_calls(small_cube):
    m = _model(8)
    x = torch.from_numpy(np.stack([small_cube] * 2))
    out = m.forward_pretext(spa=x, spe=x * 2, vis=x * 0.5)
    torch.testing.assert_close(out["spatial"], m.forward_spatial(x))
    torch.testing.assert_close(out["spectral"], m.forward_spectral(x * 2))
    torch.testing.assert_close(out["mim"], m.forward_mim(x * 0.5))


def test_checkpoint_roundtrip(tmp_path, small_cube):
    m = _model(8, seed=3)
    path = save_checkpoint(m, tmp_path / "ck", config={"seed": 3}, extra={"stage": 1})
    assert path.suffix == ".npz"
    back, meta = load_checkpoint(tmp_path / "ck")
    assert meta["config"] == {"seed": 3} and meta["extra"]["stage"] == 1
    x = torch.from_numpy(small_cube[None])
    torch.testing.assert_close(back.forward_mim(x), m.forward_mim(x), rtol=0, atol=0)


def test_resolve_latest_stage(tmp_path):
    m = _model(8)
    for k in (1, 2, 10):
        save_checkpoint(m, tmp_path / f"stage-{k}")
    assert resolve_checkpoint(tmp_path).name == "stage-10.npz"
    with pytest.raises(FileNotFoundError):
        resolve_checkpoint(tmp_path / "nothing")


def test_bad_checkpoint(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, a=np.zeros(2))
    with pytest.raises(FormatError):
        load_checkpoint(p)
