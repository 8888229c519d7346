import math

import numpy as np
import pytest

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec import framing
from linerec.framing import (
    BlockSequence,
    add_positional_encoding,
    extract_blocks,
    reshape_block,
    sinusoid_table,
    unshape_block,
)


def volume(c=4, w=9, h=2, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-1, 1, (c, w, h)))


def test_block_count_exact_multiple():
    seq = extract_blocks(volume(w=9), 3)
    assert seq.count == 3
    assert seq.stacked.shape == (3, 4, 3, 2)


def test_block_count_with_padding():
    vol = volume(w=10)
    seq = extract_blocks(vol, 3)
    assert seq.count == 4
    last = seq.block(3)
    assert np.array_equal(last.data[:, 0, :], vol.data[:, 9, :])
    assert np.all(last.data[:, 1:, :] == 0.0)


def test_single_block_equals_volume():
    vol = volume(w=3)
    seq = extract_blocks(vol, 3)
    assert seq.count == 1
    assert np.array_equal(seq.block(0).data, vol.data)


def test_extract_blocks_rejects_bad_frame_length():
    with pytest.raises(ValueError):
        extract_blocks(volume(), 0)


def test_padding_prefix_stability():
    vol = volume(w=11)
    seq_full = extract_blocks(vol, 4)
    prefix = extract_blocks(Tensor(vol.data[:, :8, :]), 4)
    for t in range(2):
        assert np.array_equal(seq_full.block(t).data, prefix.block(t).data)


def test_extract_blocks_deterministic_and_shape_stable():
    vol = volume(w=10)
    a = extract_blocks(vol, 3)
    b = extract_blocks(vol, 3)
    assert a.stacked.shape == b.stacked.shape
    assert np.array_equal(a.stacked.data, b.stacked.data)


def test_positional_encoding_at_origin():
    table = sinusoid_table(8)
    block = Tensor(np.zeros((8, 2, 2)))
    out = add_positional_encoding(block, table)
    # position 0 gives sin 0 = 0, cos 0 = 1 alternating in both halves
    assert np.allclose(out.data[:4, 0, 0], [0.0, 1.0, 0.0, 1.0])
    assert np.allclose(out.data[4:, 0, 0], [0.0, 1.0, 0.0, 1.0])


def test_positional_encoding_width_index_one():
    table = sinusoid_table(8)
    block = Tensor(np.zeros((8, 2, 2)))
    out = add_positional_encoding(block, table)
    assert out.data[0, 1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)


def test_positional_encoding_is_additive():
    table = sinusoid_table(6)
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (6, 3, 4))
    enc_x = add_positional_encoding(Tensor(x), table).data
    enc_0 = add_positional_encoding(Tensor(np.zeros_like(x)), table).data
    assert np.allclose(enc_x - enc_0, x, atol=0)


def test_positional_encoding_rejects_odd_channels():
    with pytest.raises(ValueError):
        sinusoid_table(7)


def test_table_matches_scalar_evaluation():
    channels = 12
    table = sinusoid_table(channels, max_pos=64)
    for p in range(64):
        for j in range(channels // 2):
            i = j // 2
            angle = p * math.exp(2 * i * (-math.log(10000.0) / channels))
            want = math.sin(angle) if j % 2 == 0 else math.cos(angle)
            assert abs(table.table[p, j] - want) < 1e-12


def test_reshape_block_identity_case():
    block = Tensor(np.array([[[3.0]]]))
    out = reshape_block(block)
    assert out.shape == (1, 1)
    assert out.data[0, 0] == 3.0


def test_reshape_block_round_trip():
    rng = np.random.default_rng(9)
    block = Tensor(rng.uniform(-1, 1, (5, 3, 4)))
    flat = reshape_block(block)
    back = unshape_block(flat, 3, 4)
    assert np.array_equal(back.data, block.data)


def test_reshape_block_row_layout():
    # C=2, S=1, H=2: row h must hold the channel vector at (0, h)
    block = Tensor(np.array([[[1.0, 2.0]], [[10.0, 20.0]]]))
    flat = reshape_block(block)
    assert flat.data.tolist() == [[1.0, 10.0], [2.0, 20.0]]


def test_reshape_block_batched_matches_per_block():
    vol = volume(c=4, w=6, h=3, seed=2)
    seq = extract_blocks(vol, 3)
    batched = reshape_block(seq.stacked)
    for t in range(seq.count):
        single = reshape_block(seq.block(t))
        assert np.array_equal(batched.data[t], single.data)


def test_gradients_flow_through_framing():
    def f(x):
        seq = extract_blocks(x, 3)
        table = sinusoid_table(4)
        enc = add_positional_encoding(seq.stacked, table)
        return ad.tsum(ad.tanh(reshape_block(enc)))

    rng = np.random.default_rng(3)
    x = ad.parameter(rng.uniform(-1, 1, (4, 7, 2)))
    assert ad.gradcheck(f, x) < 1e-6
