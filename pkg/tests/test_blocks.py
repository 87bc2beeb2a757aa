import numpy as np
import pytest

from legonet import functional as F
from legonet.blocks import BlockSpec, DecoderStage, EncoderStage, SEBlock, Stem, SwinBlock, UXBlock
from legonet.tensor import ShapeError, Tensor, backward, grad_check

from conftest import weighted_sum


def zero_all(module):
    for p in module.parameters():
        p.data[...] = 0.0


# Several gradients here are exactly zero (key bias of attention, conv biases
# whose contribution is removed by standardization); central differences
# return ~1e-11 round-off for them, so those are judged on an absolute scale.
FLOOR = 1e-6


def _probe(module, args, components=12):
    worst = 0.0
    rng = np.random.default_rng(5)
    for t in list(args) + module.parameters():
        err = grad_check(lambda _: weighted_sum(module(*args)), t, max_components=components, rng=rng, floor=FLOOR)
        worst = max(worst, err)
    return worst


def test_se_block_gradcheck(rng):
    block = SEBlock(2, 4, rng)
    x = Tensor(rng.normal(size=(1, 2, 3, 3, 3)))
    assert _probe(block, [x]) < 1e-4


def _swin_case(rng):
    block = SwinBlock(4, 2, 2, rng)
    for a in block.attns:
        a.rel_pos_bias.data[...] = rng.normal(size=a.rel_pos_bias.shape) * 0.1
    return block, Tensor(rng.normal(size=(1, 4, 4, 4, 4)))


def test_swin_block_gradcheck(rng):
    block, x = _swin_case(rng)
    key_biases = {id(a.qkv.bias) for a in block.attns}
    worst = 0.0
    for t in [x] + [p for p in block.parameters() if id(p) not in key_biases]:
        worst = max(worst, grad_check(lambda _: weighted_sum(block(x)), t, max_components=8,
                                      rng=np.random.default_rng(5), floor=FLOOR))
    assert worst < 1e-4


def test_swin_qkv_bias_gradient(rng):
    """Softmax ignores a per-row constant, so the key bias gets exactly zero gradient."""
    block, x = _swin_case(rng)
    backward(weighted_sum(block(x)))
    for a in block.attns:
        g = a.qkv.bias.grad
        assert np.all(np.abs(g[4:8]) < 1e-13)
        assert np.min(np.abs(np.r_[g[:4], g[8:]])) > 1e-3
        block.zero_grad()
        # round-off of central differences on this probe is ~1e-9, far below the
        # nonzero components, so a 1e-4 floor only affects the zero key slice
        assert grad_check(lambda _: weighted_sum(block(x)), a.qkv.bias, floor=1e-4) < 1e-4


def test_ux_block_gradcheck(rng):
    # four channels: layer norm over two channels is nearly singular wherever they are close
    block = UXBlock(4, rng, kernel=3)
    x = Tensor(rng.normal(size=(1, 4, 3, 4, 3)))
    assert _probe(block, [x]) < 1e-4


def test_stem_gradcheck(rng):
    stem = Stem(1, 2, rng)
    x = Tensor(rng.normal(size=(1, 1, 4, 4, 4)))
    assert _probe(stem, [x], components=8) < 1e-4


def test_decoder_stage_gradcheck(rng):
    dec = DecoderStage(4, 2, rng)
    deep = Tensor(rng.normal(size=(1, 4, 2, 2, 2)))
    skip = Tensor(rng.normal(size=(1, 2, 4, 4, 4)))
    assert _probe(dec, [deep, skip], components=8) < 1e-4


def test_se_block_zero_branch_is_projection(rng):
    block = SEBlock(2, 4, rng, units=1)
    zero_all(block.convs[0])
    for n in block.norms:
        zero_all(n)
    x = Tensor(rng.normal(size=(1, 2, 3, 3, 3)))
    np.testing.assert_allclose(block(x).data, block.proj(x).data, atol=1e-15)


def test_se_block_identity_kernel_bypass_oracle(rng):
    c = 2
    block = SEBlock(c, c, rng, units=1)
    w = np.zeros((c, c, 3, 3, 3))
    for i in range(c):
        w[i, i, 1, 1, 1] = 1.0
    block.convs[0].weight.data[...] = w
    block.convs[0].bias.data[...] = 0.0
    norm = block.norms[0]
    norm.reduce_weight.data[...] = 1.0
    norm.gamma_weight.data[...] = 1e3
    norm.beta_weight.data[...] = 0.0
    x = rng.normal(size=(1, c, 3, 3, 3)) + 0.3
    expected = F.instance_standardize(Tensor(np.maximum(x, 0))).data + x
    np.testing.assert_allclose(block(Tensor(x)).data, expected, atol=1e-12)


@pytest.mark.parametrize("make", [lambda r: SwinBlock(4, 2, 2, r), lambda r: UXBlock(4, r, kernel=3)])
def test_zero_weights_give_pure_residual(make, rng):
    block = make(rng)
    for name, p in block.named_parameters():
        if "gamma" not in name:
            p.data[...] = 0.0
    x = rng.normal(size=(1, 4, 4, 4, 4))
    np.testing.assert_allclose(block(Tensor(x)).data, x, atol=1e-15)


def test_ux_block_transcription_oracle(rng):
    c = 2
    block = UXBlock(c, rng, pairs=1, kernel=3, expansion=1)
    for p in block.parameters():
        p.data[...] = 0.0
    block.norms[0].gamma.data[...] = 1.0
    block.norms[1].gamma.data[...] = 1.0
    block.dwcs[0].weight.data[:, 0, 1, 1, 1] = 1.0  # centred delta
    block.dcss[0].w1.data[...] = 1.0
    block.dcss[0].w2.data[...] = 1.0
    x = rng.normal(size=(1, c, 2, 3, 2))

    def ln(a):  # a is channels-last
        mu = a.mean(-1, keepdims=True)
        return (a - mu) / np.sqrt(a.var(-1, keepdims=True) + 1e-5)

    def gelu(a):
        from scipy.special import erf
        return 0.5 * a * (1 + erf(a / np.sqrt(2)))

    z = np.moveaxis(x, 1, -1)
    z = ln(z) + z
    z = gelu(ln(z)) + z
    np.testing.assert_allclose(block(Tensor(x)).data, np.moveaxis(z, -1, 1), atol=1e-12)


def test_stem_zero_weights_gives_constant(rng):
    stem = Stem(1, 2, rng)
    zero_all(stem)
    out = stem(Tensor(rng.normal(size=(1, 1, 4, 4, 4)))).data
    np.testing.assert_array_equal(out, 0.0)  # beta = tanh(0) = 0, then relu


def test_encoder_stage_shapes_and_zero_block(rng):
    for kind in ("SE", "Swin", "UX"):
        spec = BlockSpec(kind, 2, 4, 1, window=2, heads=1)
        stage = EncoderStage(spec, rng, ux_kernel=3)
        x = Tensor(rng.normal(size=(1, 2, 4, 4, 4)))
        assert stage(x).shape == (1, 4, 2, 2, 2)
        for name, p in stage.block.named_parameters():
            if "gamma" not in name:
                p.data[...] = 0.0
        np.testing.assert_allclose(stage(x).data, stage.down(x).data, atol=1e-15)
    with pytest.raises(ShapeError):
        stage(Tensor(np.zeros((1, 3, 4, 4, 4))))


def test_encoder_stage_odd_extent_pads(rng):
    stage = EncoderStage(BlockSpec("SE", 1, 2), rng)
    assert stage(Tensor(rng.normal(size=(1, 1, 5, 4, 3)))).shape == (1, 2, 3, 2, 2)


def test_decoder_stage_shape_contract_and_mismatch(rng):
    dec = DecoderStage(8, 4, rng)
    out = dec(Tensor(rng.normal(size=(1, 8, 3, 3, 3))), Tensor(rng.normal(size=(1, 4, 6, 6, 6))))
    assert out.shape == (1, 4, 6, 6, 6)
    with pytest.raises(ShapeError):
        dec(Tensor(np.zeros((1, 8, 3, 3, 3))), Tensor(np.zeros((1, 4, 8, 8, 8))))
    zero_all(dec)
    np.testing.assert_array_equal(dec(Tensor(np.ones((1, 8, 1, 1, 1))), Tensor(np.ones((1, 4, 2, 2, 2)))).data, 0.0)


def test_channel_mismatch_errors(rng):
    with pytest.raises(ShapeError):
        SwinBlock(4, 1, 2, rng)(Tensor(np.zeros((1, 2, 2, 2, 2))))
    with pytest.raises(ShapeError):
        UXBlock(4, rng)(Tensor(np.zeros((1, 2, 2, 2, 2))))
    with pytest.raises(ShapeError):
        Stem(1, 2, rng)(Tensor(np.zeros((1, 2, 4, 4, 4))))


def test_block_spec_validation():
    with pytest.raises(ValueError):
        BlockSpec("Conv", 1, 2)
    with pytest.raises(ValueError):
        BlockSpec("SE", 1, 2, depth_units=0)
