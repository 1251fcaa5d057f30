import struct

import numpy as np
import pytest

from egeunet import checkpoint as ck
from egeunet.analysis import count_params
from egeunet.losses import deep_supervision_loss
from egeunet.model import DEFAULT_CHANNELS, ModelConfig, build, forward
from egeunet.tensor import ShapeError, Tape, Tensor, backward


@pytest.fixture(scope="module")
def model():
    return build(ModelConfig())


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).uniform(0, 1, (1, 3, 256, 256)).astype(np.float32)


def test_forward_shapes(model, image):
    final, aux = forward(model, image)
    assert final.shape == (1, 1, 256, 256)
    assert [a.shape for a in aux] == [(1, 1, s, s) for s in (128, 64, 32, 16, 8)]
    assert np.isfinite(final.data).all() and all(np.isfinite(a.data).all() for a in aux)


def test_forward_is_pure(model, image):
    a, _ = forward(model, image)
    b, _ = forward(model, image)
    assert a.data.tobytes() == b.data.tobytes()


def test_size_agnostic(model):
    final, aux = forward(model, np.zeros((2, 3, 64, 64), np.float32))
    assert final.shape == (2, 1, 64, 64)
    sizes = [final.shape[-1]] + [a.shape[-1] for a in aux]
    assert all(b * 2 == a for a, b in zip(sizes, sizes[1:]))


def test_input_validation(model):
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 1, 64, 64), np.float32))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 3, 48, 64), np.float32))


def test_param_count_band_and_determinism(model):
    n = count_params(model)
    assert 45_000 <= n <= 61_000
    assert count_params(build(ModelConfig())) == n


def test_same_seed_same_init():
    a, b = build(ModelConfig(seed=3)), build(ModelConfig(seed=3))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    c = build(ModelConfig(seed=4))
    assert any(pa.data.tobytes() != pc.data.tobytes() for pa, pc in zip(a.parameters(), c.parameters()))


def test_names_unique_and_stable(model):
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert names == [n for n, _ in build(ModelConfig(seed=9)).named_parameters()]
    assert all(p.name == n for n, p in model.named_parameters())


def test_stage_channels(model):
    x = Tensor(np.zeros((1, 3, 64, 64), np.float32))
    seen = []
    for i, block in enumerate(model.encoder):
        x = block(x)
        seen.append(x.shape[1])
        if i < 5:
            from egeunet.ops import maxpool2d

            x = maxpool2d(x)
    assert seen == list(DEFAULT_CHANNELS)
    assert type(model.encoder[2]).__name__ == "Conv2d" and type(model.encoder[3]).__name__ == "GHPA"
    assert len(model.bridges) == 5 and len(model.aux_heads) == 5


@pytest.mark.parametrize("bad", [dict(channels=(8, 16, 24, 32, 48)), dict(channels=(8, 16, 16, 32, 48, 64)),
                                 dict(channels=(8, 16, 24, 32, 48, 66)), dict(input_size=100),
                                 dict(dw_style="dense")])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        ModelConfig(**bad)


def test_every_parameter_receives_gradient():
    m = build(ModelConfig(seed=1))
    r = np.random.default_rng(2)
    x = Tensor(r.uniform(0, 1, (2, 3, 64, 64)).astype(np.float32))
    y = (r.random((2, 1, 64, 64)) > 0.5).astype(np.float32)
    with Tape() as tape:
        final, aux = m(x)
        loss = deep_supervision_loss([final] + aux, y)
    grads = backward(loss, tape, m.parameters())
    dead = [n for n, p in m.named_parameters() if not np.abs(grads[p]).max() > 0]
    assert not dead


# ------------------------------------------------------------------ checkpoints


def test_checkpoint_round_trip_bitwise(model, image, tmp_path):
    path = tmp_path / "m.egeu"
    ck.save_checkpoint(model, path)
    loaded = ck.load_checkpoint(path, ModelConfig())
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    a, _ = forward(model, image)
    b, _ = forward(loaded, image)
    assert a.data.tobytes() == b.data.tobytes()


def test_checkpoint_size_and_payload_count(model, tmp_path):
    path = tmp_path / "m.egeu"
    ck.save_checkpoint(model, path)
    records = ck.read_records(path)
    n = count_params(model)
    assert sum(a.size for _, a in records) == n
    table = sum(2 + len(name.encode()) + 1 + 4 * a.ndim for name, a in records)
    assert path.stat().st_size == 12 + table + 4 * n


def _dims_offset(buf, index):
    pos = 12
    for i in range(index + 1):
        (nl,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + nl].decode()
        pos += 2 + nl
        (nd,) = struct.unpack_from("<B", buf, pos)
        dims_at = pos + 1
        dims = struct.unpack_from(f"<{nd}I", buf, dims_at)
        pos = dims_at + 4 * nd + 4 * int(np.prod(dims))
    return name, dims_at, dims


def test_corrupt_shape_names_parameter(model, tmp_path):
    path = tmp_path / "m.egeu"
    ck.save_checkpoint(model, path)
    buf = bytearray(path.read_bytes())
    name, at, dims = _dims_offset(bytes(buf), 2)
    assert len(dims) == 4 and dims[0] % 2 == 0
    struct.pack_into("<2I", buf, at, dims[0] // 2, dims[1] * 2)  # same payload size, wrong shape
    path.write_bytes(bytes(buf))
    with pytest.raises(ck.ShapeMismatchError, match=name.replace(".", r"\.")):
        ck.load_checkpoint(path, ModelConfig())


def test_distinct_checkpoint_errors(model, tmp_path):
    good = ck.encode((n, p.data) for n, p in model.named_parameters())
    with pytest.raises(ck.MagicError):
        ck.decode(b"XXXX" + good[4:])
    with pytest.raises(ck.VersionError):
        ck.decode(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(ck.TruncatedError):
        ck.decode(good[:-3])
    path = tmp_path / "other.egeu"
    ck.save_checkpoint(build(ModelConfig(use_mask=False)), path)
    with pytest.raises(ck.ShapeMismatchError):
        ck.load_checkpoint(path, ModelConfig())


def test_encode_layout_is_little_endian():
    buf = ck.encode([("w", np.array([[1.0, 2.0]], np.float32))])
    assert buf[:4] == b"EGEU"
    assert buf[4:12] == struct.pack("<II", 1, 1)
    assert buf[12:] == struct.pack("<H", 1) + b"w" + struct.pack("<B2I", 2, 1, 2) + struct.pack("<2f", 1.0, 2.0)
