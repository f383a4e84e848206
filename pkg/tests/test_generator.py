import numpy as np
import pytest
import torch

from dfdnet.dictionary import build_dictionary
from dfdnet.errors import ConfigurationError, ShapeError
from dfdnet.features import toy_encoder
from dfdnet.generator import SFT, GeneratorConfig, build_generator, restore
from dfdnet.losses import LossWeights, reconstruction_loss
from dfdnet.synthetic import synthetic_faces


@pytest.fixture(scope="module")
def toy32():
    faces = synthetic_faces(6, seed=3, resolution=32)
    enc = toy_encoder(0, 32, dtype=torch.float64)
    return faces, enc, build_dictionary(faces, enc, k=2, seed=0)


def batch(faces):
    x = torch.from_numpy(np.stack([f[1] for f in faces])).permute(0, 3, 1, 2)
    return x, [f[2] for f in faces]


def central_difference_check(loss_fn, params, n_coords, rng, h=1e-6, rtol=1e-3):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    checked = 0
    for p, g in zip(params, grads):
        flat, gflat = p.data.view(-1), g.reshape(-1)
        for i in rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False):
            old = flat[i].item()
            flat[i] = old + h
            up = float(loss_fn().detach())
            flat[i] = old - h
            down = float(loss_fn().detach())
            flat[i] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - float(gflat[i])) <= rtol * max(abs(fd), 1e-4), (fd, float(gflat[i]))
            checked += 1
    return checked


def test_output_shape_and_range(faces64, encoder64, dict64):
    gen = build_generator(GeneratorConfig(resolution=64, dft_blocks=4), encoder64)
    x, lms = batch(faces64[:3])
    out = gen(x.float(), lms, dict64).detach()
    assert out.shape == (3, 3, 64, 64)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


@pytest.mark.parametrize("blocks,expected", [(0, ()), (2, (3, 4)), (4, (1, 2, 3, 4))])
def test_dft_block_placement(encoder64, blocks, expected):
    gen = build_generator(GeneratorConfig(resolution=64, dft_blocks=blocks), encoder64)
    assert gen.dft_scales == expected
    assert sorted(int(s) for s in gen.dft) == list(expected)


def test_seeded_construction_is_deterministic(encoder64):
    a = build_generator(GeneratorConfig(resolution=64, seed=5), encoder64)
    b = build_generator(GeneratorConfig(resolution=64, seed=5), encoder64)
    for (n, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(p, q), n


def test_encoder_not_a_parameter(encoder64):
    gen = build_generator(GeneratorConfig(resolution=64), encoder64)
    enc_ids = {id(p) for p in encoder64.parameters()}
    assert not enc_ids & {id(p) for p in gen.parameters()}
    assert not any(k.startswith("encoder") for k in gen.state_dict())


def test_config_errors(encoder64, dict64):
    with pytest.raises(ConfigurationError):
        GeneratorConfig(resolution=48).validate()
    with pytest.raises(ConfigurationError):
        GeneratorConfig(dft_blocks=3).validate()
    with pytest.raises(ConfigurationError):
        build_generator(GeneratorConfig(resolution=32), encoder64)
    gen = build_generator(GeneratorConfig(resolution=64), encoder64)
    x = torch.rand(1, 3, 64, 64)
    lm = [np.zeros((68, 2))]
    with pytest.raises(ConfigurationError):
        gen(x, lm, None)
    other = build_generator(GeneratorConfig(resolution=64), toy_encoder(9, 64))
    with pytest.raises(ConfigurationError, match="different encoder"):
        other(x, lm, dict64)


def test_dft0_runs_without_dictionary(encoder64):
    gen = build_generator(GeneratorConfig(resolution=64, dft_blocks=0), encoder64)
    assert gen(torch.rand(2, 3, 64, 64), [None, None]).shape == (2, 3, 64, 64)


def test_restore_diagnostics(faces64, encoder64, dict64):
    gen = build_generator(GeneratorConfig(resolution=64, dft_blocks=4), encoder64)
    _, img, lm = faces64[0]
    out = restore(img, lm, dict64, gen)
    assert out.image.shape == (1, 3, 64, 64)
    assert len(out.diagnostics) == 16
    assert all(0 <= d.k_star < 4 and 0 < d.mean_confidence < 1 for d in out.diagnostics)
    with pytest.raises(ShapeError):
        restore(img[:32, :32], lm, dict64, gen)


def test_sft_starts_near_identity():
    sft = SFT(4, 6)
    x, cond = torch.randn(2, 4, 8, 8), torch.randn(2, 6, 8, 8)
    assert torch.allclose(sft(x, cond), x, atol=0.05)
    with pytest.raises(ShapeError):
        sft(x, torch.randn(2, 6, 4, 4))


def test_sft_gradcheck():
    torch.manual_seed(1)
    sft = SFT(2, 3).double()
    for p in sft.parameters():
        p.data.normal_(0, 0.5)
    x = torch.randn(1, 2, 5, 5, dtype=torch.float64, requires_grad=True)
    cond = torch.randn(1, 3, 5, 5, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(sft, (x, cond), eps=1e-6, atol=1e-5)


@pytest.mark.parametrize("blocks", [0, 4])
def test_end_to_end_finite_differences(toy32, blocks):
    faces, enc, dset = toy32
    gen = build_generator(GeneratorConfig(resolution=32, dft_blocks=blocks, seed=2), enc)
    for p in gen.parameters():
        p.data.add_(torch.randn_like(p) * 0.05)
    x, lms = batch(faces[:2])
    y = x.flip(-1)
    weights = LossWeights()

    def loss_fn():
        return reconstruction_loss(gen(x, lms, dset), y, enc, weights)[0]

    params = [gen.head.weight, gen.bottleneck.weight, gen.sft["2"].scale[0].weight, gen.post_convs["1"].bias]
    if blocks:
        params.append(gen.dft["1"].confidence.conv1.weight)
    rng = np.random.default_rng(0)
    assert central_difference_check(loss_fn, params, 4, rng) >= 16


def test_training_step_leaves_encoder_unchanged(faces64, encoder64, dict64):
    gen = build_generator(GeneratorConfig(resolution=64, dft_blocks=4), encoder64)
    h = encoder64.content_hash()
    opt = torch.optim.Adam(gen.trainable_parameters(), lr=1e-3)
    x, lms = batch(faces64[:2])
    loss, _ = reconstruction_loss(gen(x.float(), lms, dict64), x.float(), encoder64, LossWeights())
    loss.backward()
    opt.step()
    assert encoder64.content_hash() == h
    assert all(p.grad is None for p in encoder64.parameters())
