import numpy as np
import pytest
import torch

from comgen.errors import ConfigurationError
from comgen.nnmodels import (
    OPERATORS,
    BroadcastDecoder,
    CompositionModel,
    CompositionOperator,
    ModelConfig,
    SupervisedModel,
    build_model,
    coordinate_grid,
    load_checkpoint,
    paper_profile,
    reduced_profile,
    save_checkpoint,
    tiny_profile,
)


def trace_shapes(seq, x):
    shapes = []
    for layer in seq:
        x = layer(x)
        if isinstance(layer, (torch.nn.Conv2d, torch.nn.ConvTranspose2d)):
            shapes.append(tuple(x.shape[1:]))
    return shapes, x


def test_dsprites_encoder_shapes():
    model = CompositionModel(paper_profile("dsprites"))
    shapes, _ = trace_shapes(model.encoder.net, torch.zeros(2, 1, 64, 64))
    assert [s[1] for s in shapes] == [32, 16, 8, 4, 2]
    assert shapes[-1][0] == 128
    assert model.cfg.flat_features == 512
    linears = [m for m in model.encoder.net if isinstance(m, torch.nn.Linear)]
    assert [(m.in_features, m.out_features) for m in linears] == [(512, 256), (256, 20)]
    code = model.encode(torch.zeros(2, 1, 64, 64))
    assert code.mean.shape == code.log_variance.shape == (2, 10)


def test_deconv_mirrors_encoder():
    model = CompositionModel(paper_profile("dsprites"))
    shapes, out = trace_shapes(model.decoder.net, torch.zeros(1, 10))
    assert [s[1] for s in shapes] == [4, 8, 16, 32, 64]
    assert out.shape == (1, 1, 64, 64)


def test_sbd_input_channels_and_coords():
    model = CompositionModel(paper_profile("sbd"))
    assert isinstance(model.decoder, BroadcastDecoder)
    first = model.decoder.net[0]
    assert first.in_channels == 12 and first.out_channels == 64 and first.kernel_size == (5, 5)
    b = model.decoder.broadcast(torch.ones(1, 10))
    assert b.shape == (1, 12, 64, 64)
    g = coordinate_grid(64)
    assert g.min() == -1 and g.max() == 1
    assert torch.equal(g[0, 5], torch.linspace(-1, 1, 64))
    assert model.decode(torch.zeros(1, 10)).shape == (1, 1, 64, 64)


@pytest.mark.parametrize("arch", ["dsprites", "mpi3d", "sbd"])
def test_reduced_profiles_round_trip_canvas(arch):
    cfg = reduced_profile(arch, channels=3)
    model = CompositionModel(cfg)
    x = torch.rand(2, 3, 32, 32)
    assert model.reconstruct(x).shape == x.shape
    assert cfg.conv[0][0] == paper_profile(arch).conv[0][0] // 2


def test_bad_geometry_is_config_error():
    with pytest.raises(ConfigurationError):
        ModelConfig(canvas=30)
    with pytest.raises(ConfigurationError):
        ModelConfig(operator="attention")
    with pytest.raises(ConfigurationError):
        CompositionModel(tiny_profile()).encode(torch.zeros(1, 1, 32, 32))


def zero_params(model):
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()


def test_zero_weights():
    model = CompositionModel(tiny_profile())
    zero_params(model)
    code = model.encode(torch.rand(3, 1, 16, 16))
    assert torch.all(code.mean == 0) and torch.all(code.log_variance == 0)
    assert torch.all(model.decode(torch.zeros(1, 10)) == 0.5)


def test_sample_deterministic_given_eps():
    model = CompositionModel(tiny_profile())
    x, eps = torch.rand(2, 1, 16, 16), torch.randn(2, 10)
    a, b = model.encode(x, eps), model.encode(x, eps)
    assert torch.equal(a.sample, b.sample)
    assert torch.allclose(a.sample, a.mean + torch.exp(0.5 * a.log_variance) * eps)


def test_interp_fixed_changes_one_coordinate():
    op = CompositionOperator("interp_fixed", 10, 5)
    assert sum(p.numel() for p in op.parameters()) == 0
    z_og, z_tr = torch.randn(1, 10), torch.randn(1, 10)
    q = torch.tensor([[0, 1, 0, 0, 0.0]])
    assert op.coefficients(z_og, z_tr, q).tolist() == [[0, 1, 0, 0, 0, 0, 0, 0, 0, 0]]
    out = op(z_og, z_tr, q)
    keep = torch.arange(10) != 1
    assert torch.equal(out[0, keep], z_og[0, keep]) and out[0, 1] == z_tr[0, 1]


def test_interp_endpoints():
    z_og, z_tr = torch.randn(4, 10), torch.randn(4, 10)
    interp = CompositionOperator.interpolate
    assert torch.equal(interp(z_og, z_tr, torch.zeros(10)), z_og)
    assert torch.equal(interp(z_og, z_tr, torch.ones(10)), z_tr)


def test_interp_learned_zero_gate_is_midpoint():
    op = CompositionOperator("interp_learned", 10, 3)
    zero_params(op)
    z_og, z_tr = torch.randn(2, 10), torch.randn(2, 10)
    q = torch.eye(3)[[0, 2]]
    assert torch.all(op.coefficients(z_og, z_tr, q) == 0.5)
    assert torch.allclose(op(z_og, z_tr, q), (z_og + z_tr) / 2)


@pytest.mark.parametrize("variant", OPERATORS)
def test_operators_interchangeable(variant):
    model = CompositionModel(tiny_profile(operator=variant))
    x = torch.rand(3, 1, 16, 16)
    out = model.forward_composition(x, x.flip(0), torch.eye(3)[[0, 1, 2]])
    assert [o.shape for o in out[:3]] == [x.shape] * 3


def test_query_must_be_one_hot():
    op = CompositionOperator("interp_fixed", 10, 3)
    with pytest.raises(ConfigurationError):
        op(torch.zeros(1, 10), torch.zeros(1, 10), torch.tensor([[1.0, 1.0, 0.0]]))
    with pytest.raises(ConfigurationError):
        op(torch.zeros(1, 10), torch.zeros(1, 10), torch.tensor([[1.0, 0.0]]))


def test_same_latents_give_same_output_image():
    model = CompositionModel(tiny_profile())
    x = torch.rand(2, 1, 16, 16)
    eps = torch.zeros(2, 2, 10)
    out, og, _, _, _ = model.forward_composition(x, x, torch.eye(3)[[1, 2]], eps)
    assert torch.equal(out, og)


def test_supervised_head():
    model = SupervisedModel(tiny_profile(n_factors=3))
    assert model(torch.rand(5, 1, 16, 16)).shape == (5, 3)


def test_init_is_seeded():
    a = CompositionModel(tiny_profile(seed=3)).state_dict()
    b = CompositionModel(tiny_profile(seed=3)).state_dict()
    c = CompositionModel(tiny_profile(seed=4)).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


@pytest.mark.parametrize("task,decoder", [("composition", "deconv"), ("composition", "sbd"), ("supervised", "deconv")])
def test_checkpoint_roundtrip(tmp_path, task, decoder):
    model = build_model(tiny_profile(decoder, operator="interp_learned"), task)
    save_checkpoint(model, tmp_path / "m", task, seed=0, epoch=7)
    back, manifest = load_checkpoint(tmp_path / "m")
    assert manifest["epoch"] == 7 and manifest["operator"] == "interp_learned"
    sa, sb = model.state_dict(), back.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    n = sum(v.numel() for v in sa.values())
    assert (tmp_path / "m.bin").stat().st_size == 8 * n
    x = torch.rand(2, 1, 16, 16)
    assert torch.equal(model.encode_mean(x), back.encode_mean(x))


def test_config_dict_roundtrip():
    cfg = reduced_profile("sbd", n_factors=5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert np.isfinite(cfg.flat_features)
