import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egeunet.analysis import gradcheck
from egeunet.gab import GAB, GabConfig, gab_forward, gab_params
from egeunet.tensor import ShapeError, Tape, Tensor, backward, tsum


def rng(seed=0):
    return np.random.default_rng(seed)


def inputs(c_low, c_high, h, seed=0, dtype=np.float64):
    r = rng(seed)
    low = Tensor(r.standard_normal((1, c_low, h, h)).astype(dtype))
    high = Tensor(r.standard_normal((1, c_high, h // 2, h // 2)).astype(dtype))
    mask = Tensor(r.uniform(0, 1, (1, 1, h // 2, h // 2)).astype(dtype))
    return low, high, mask


def test_shape_contract():
    m = GAB(GabConfig(24, 32), rng())
    low, high, mask = inputs(24, 32, 64, dtype=np.float32)
    assert gab_forward(low, high, mask, m).shape == (1, 24, 64, 64)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 12), st.booleans())
def test_output_size_equals_low_size(half, use_dilation):
    m = GAB(GabConfig(8, 16, use_dilation=use_dilation), rng(), dtype=np.float64)
    low, high, mask = inputs(8, 16, 2 * half)
    assert m(low, high, mask).shape == low.shape


def test_group_isolation_pre_fusion():
    m = GAB(GabConfig(16, 16), rng(1), dtype=np.float64)
    # make high-level group 3 (channels 8..11 after the channel-mapping DW) identically zero
    m.high_dw.pointwise.weight.data[8:12] = 0.0
    low, high, _ = inputs(16, 16, 8, seed=2)
    mask = Tensor(np.zeros((1, 1, 4, 4)))
    base = m.pre_fusion(low, high, mask)
    lz = low.data.copy()
    lz[:, 8:12] = 0.0
    out = m.pre_fusion(Tensor(lz), high, mask)
    assert not out[2].data.any()
    for g in (0, 1, 3):
        assert np.array_equal(out[g].data, base[g].data)


def test_rates_in_group_order():
    m = GAB(GabConfig(8, 16), rng())
    assert [g.dilation for g in m.groups] == [1, 2, 5, 7]
    assert [g.dilation for g in GAB(GabConfig(8, 16, use_dilation=False), rng()).groups] == [1, 1, 1, 1]


@pytest.mark.parametrize("group,rate", [(0, 1), (1, 2), (2, 5), (3, 7)])
def test_receptive_field_probe(group, rate):
    m = GAB(GabConfig(8, 16), rng(3), dtype=np.float64)
    low, high, mask = inputs(8, 16, 32, seed=4)
    base = m.pre_fusion(low, high, mask)[group].data
    ch = 2 * group  # first low-level channel of this group
    centre = 16

    def changed(offset):
        lz = low.data.copy()
        lz[0, ch, centre + offset, centre] += 1.0
        out = m.pre_fusion(Tensor(lz), high, mask)[group].data
        return np.abs(out[0, :, centre, centre] - base[0, :, centre, centre]).max() > 0

    assert changed(rate)
    assert not changed(rate + 1)


@pytest.mark.parametrize("c_low,c_high", [(8, 16), (24, 32), (48, 64)])
@pytest.mark.parametrize("kind", ["separable", "dense"])
def test_gab_params_matches_enumeration(c_low, c_high, kind):
    for use_mask in (True, False):
        cfg = GabConfig(c_low, c_high, use_mask=use_mask, group_conv=kind)
        m = GAB(cfg, rng())
        assert gab_params(cfg) == sum(p.size for _, p in m.named_parameters())


def test_mask_off_reduces_each_group_input_by_one():
    on, off = GabConfig(24, 32), GabConfig(24, 32, use_mask=False)
    assert on.group_in - off.group_in == 1
    q = on.group_out
    assert gab_params(on) - gab_params(off) == 4 * (9 + 1 + q)
    don, doff = GabConfig(24, 32, group_conv="dense"), GabConfig(24, 32, use_mask=False, group_conv="dense")
    assert gab_params(don) - gab_params(doff) == 4 * 9 * q


def test_fusion_weights_quadratic_in_c_low():
    a, b = GAB(GabConfig(8, 16), rng()), GAB(GabConfig(16, 16), rng())
    assert b.fuse.weight.size == 4 * a.fuse.weight.size


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mask_participates(seed):
    m = GAB(GabConfig(8, 16), rng(seed), dtype=np.float64)
    low, high, mask = inputs(8, 16, 8, seed=seed)
    mask.requires_grad = True
    with Tape() as tape:
        loss = tsum(m(low, high, mask))
    assert np.abs(backward(loss, tape)[mask]).max() > 0


def test_mask_validation():
    m = GAB(GabConfig(8, 16), rng(), dtype=np.float64)
    low, high, _ = inputs(8, 16, 8)
    with pytest.raises(ShapeError):
        m(low, high, Tensor(np.zeros((1, 2, 4, 4))))
    with pytest.raises(ShapeError):
        m(low, high, None)
    nomask = GAB(GabConfig(8, 16, use_mask=False), rng(), dtype=np.float64)
    assert nomask(low, high).shape == low.shape


def test_config_validation():
    with pytest.raises(ValueError):
        GabConfig(10, 16)
    with pytest.raises(ValueError):
        GabConfig(8, 16, dilation_rates=(1, 2, 3))


def test_gab_gradcheck_end_to_end():
    m = GAB(GabConfig(8, 16), rng(5), dtype=np.float64)
    low, high, mask = inputs(8, 16, 8, seed=6)
    for t in (low, high, mask):
        t.requires_grad = True
    params = m.parameters()
    res = gradcheck(lambda a, b, c, *p: m(a, b, c), [low, high, mask] + params)
    assert res.passed, res.line()
