import numpy as np
import pytest

from gsbh import model as M
from gsbh.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from gsbh.errors import FormatError
from gsbh.optim import OptimizerState
from conftest import tiny_model_config


def _state(params, rng):
    st = OptimizerState(2e-4, 1e-3, 7, 70, step=5)
    for k, t in params.tensors.items():
        st.first_moment[k] = rng.standard_normal(t.shape)
        st.second_moment[k] = rng.random(t.shape)
    return st


def test_round_trip_is_exact(tmp_path, rng):
    params = M.init_params(tiny_model_config(use_gsb=False), 2)
    st = _state(params, rng)
    save_checkpoint(params, st, tmp_path / "a.gsbh")
    p2, st2 = load_checkpoint(tmp_path / "a.gsbh")
    assert p2.config == params.config
    assert list(p2.tensors) == list(params.tensors)
    for k in params.tensors:
        np.testing.assert_array_equal(p2[k].data, params[k].data)
        np.testing.assert_array_equal(st2.first_moment[k], st.first_moment[k])
        np.testing.assert_array_equal(st2.second_moment[k], st.second_moment[k])
    assert (st2.step, st2.base_lr, st2.weight_decay, st2.warmup_steps, st2.total_steps) == (5, 2e-4, 1e-3, 7, 70)
    assert checkpoint_bytes(p2, st2) == (tmp_path / "a.gsbh").read_bytes()


def test_without_optimizer_state():
    params = M.init_params(tiny_model_config(), 0)
    p2, st = parse_checkpoint(checkpoint_bytes(params))
    assert st is None and p2.count() == params.count()


def test_corruption_is_reported(rng):
    params = M.init_params(tiny_model_config(), 0)
    data = checkpoint_bytes(params, _state(params, rng))
    with pytest.raises(FormatError, match="magic"):
        parse_checkpoint(b"NOPE" + data[4:])
    with pytest.raises(FormatError, match="truncated") as info:
        parse_checkpoint(data[:len(data) // 2])
    assert info.value.offset is not None
    with pytest.raises(FormatError, match="trailing"):
        parse_checkpoint(data + b"x")


def test_missing_section_named():
    import struct
    params = M.init_params(tiny_model_config(), 0)
    data = checkpoint_bytes(params)
    # drop the first record (config.in_channels) and fix the count
    (count,) = struct.unpack_from("<Q", data, 8)
    pos = 16
    (nlen,) = struct.unpack_from("<I", data, pos)
    end = pos + 4 + nlen + 4 + 8  # scalar record: rank 0, one f64
    broken = data[:8] + struct.pack("<Q", count - 1) + data[end:]
    with pytest.raises(FormatError, match="config.in_channels"):
        parse_checkpoint(broken)
