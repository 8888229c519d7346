import numpy as np
import pytest

from linerec.ctc import greedy_decode
from linerec.dataio import Vocabulary
from linerec.model import (
    ModelConfig,
    attach_decoders,
    build_bundle,
    drop_branches,
    forward_infer,
    forward_train,
    load_bundle,
    save_bundle,
    attention_maps,
)


def small_config(**kw):
    base = dict(scales=(2, 3, 4), input_height=32,
                backbone_channels=(8, 12, 16), backbone_pools=(0, 1),
                max_keys=64)
    base.update(kw)
    return ModelConfig(**base)


def make_bundle(seed=1, **kw):
    return build_bundle(small_config(**kw), Vocabulary(list("abcde")), seed=seed)


def rand_image(width=48, height=32, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (height, width))


def test_sequence_lengths_per_scale():
    bundle = make_bundle()
    outs = forward_train(rand_image(48), bundle)  # feature width 48/4 = 12
    assert [outs[s].logits.shape[0] for s in (2, 3, 4)] == [6, 4, 3]
    assert all(outs[s].logits.shape[1] == 6 for s in (2, 3, 4))  # 5 symbols + blank


def test_sequence_lengths_are_ceil_w_over_s():
    bundle = make_bundle()
    for width in (40, 44, 52, 60):
        outs = forward_train(rand_image(width), bundle, train=False)
        feat_w = bundle.backbone.config.feature_width(width)
        for s in (2, 3, 4):
            assert outs[s].logits.shape[0] == -(-feat_w // s)


def test_single_scale_forward_matches_infer_logits():
    bundle = make_bundle(scales=(3,))
    img = rand_image(52, seed=3)
    outs = forward_train(img, bundle, train=False)
    decoded = greedy_decode(outs[3].logits, vocab=bundle.vocab)
    assert forward_infer(img, bundle).ids == decoded.ids


def test_branch_isolation_zeroing_other_scales():
    bundle = make_bundle(seed=5)
    img = rand_image(56, seed=6)
    before = forward_train(img, bundle, train=False)[3].logits.data.copy()
    for s in (2, 4):
        for t in bundle.branches[s].named(f"scale{s}").values():
            t.data[...] = 0.0
    after = forward_train(img, bundle, train=False)[3].logits.data
    assert np.array_equal(before, after)


def test_branch_isolation_dropping_other_scales():
    bundle = make_bundle(seed=7)
    img = rand_image(44, seed=8)
    want = forward_infer(img, bundle)
    drop_branches(bundle)
    assert sorted(bundle.branches) == [3]
    assert forward_infer(img, bundle).ids == want.ids


def test_infer_requires_scale_three_branch():
    bundle = make_bundle(scales=(2, 4))
    with pytest.raises(ValueError):
        forward_infer(rand_image(44), bundle)


def test_infer_deterministic():
    bundle = make_bundle(seed=9)
    img = rand_image(60, seed=10)
    a = forward_infer(img, bundle)
    b = forward_infer(img, bundle)
    assert a.ids == b.ids and a.text == b.text


def test_build_bundle_deterministic():
    a = make_bundle(seed=11)
    b = make_bundle(seed=11)
    pa, pb = a.named_parameters(), b.named_parameters()
    assert sorted(pa) == sorted(pb)
    for k in pa:
        assert np.array_equal(pa[k].data, pb[k].data)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    bundle = make_bundle(seed=12)
    attach_decoders(bundle, seed=12)
    # make running stats nontrivial before saving
    forward_train(rand_image(48, seed=13), bundle, train=True)
    path = tmp_path / "model.lrck"
    save_bundle(bundle, path, extra={"note": 1})
    loaded, extra = load_bundle(path)
    assert extra == {"note": 1}
    pa, pb = bundle.named_parameters(), loaded.named_parameters()
    assert sorted(pa) == sorted(pb)
    for k in pa:
        assert np.array_equal(pa[k].data, pb[k].data), k
    ba, bb = bundle.named_buffers(), loaded.named_buffers()
    for k in ba:
        assert np.array_equal(ba[k], bb[k]), k
    img = rand_image(52, seed=14)
    assert np.array_equal(forward_train(img, bundle, train=False)[3].logits.data,
                          forward_train(img, loaded, train=False)[3].logits.data)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.lrck"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_bundle(path)


def test_ablation_without_block_attention():
    bundle = make_bundle(use_block_attention=False)
    outs = forward_train(rand_image(48, seed=15), bundle, train=False)
    assert [outs[s].logits.shape[0] for s in (2, 3, 4)] == [6, 4, 3]
    assert outs[3].alpha_maps is None
    with pytest.raises(ValueError):
        attention_maps(rand_image(48, seed=15), bundle)


def test_ablation_without_context():
    bundle = make_bundle(use_context=False)
    outs = forward_train(rand_image(48, seed=16), bundle, train=False)
    assert outs[3].features.dim == 16  # channels only, no context concat
    assert outs[3].logits.shape[1] == 6


def test_attention_maps_shape():
    bundle = make_bundle(seed=17)
    maps, factor, feat_w = attention_maps(rand_image(48, seed=18), bundle)
    assert factor == 4
    assert feat_w == 12
    assert maps.shape == (4, 3, 8)  # T=ceil(12/3), S=3, H=32/4
    assert np.allclose(maps.reshape(4, -1).sum(axis=1), 1.0, atol=1e-9)


def test_shared_decoder_option():
    bundle = make_bundle(share_decoder=True)
    attach_decoders(bundle, seed=19)
    decs = [bundle.branches[s].decoder for s in (2, 3, 4)]
    assert decs[0] is decs[1] is decs[2]
    names = bundle.decoder_parameters()
    assert all(k.startswith("scale2.decoder.") for k in names)


def test_separate_decoders_by_default():
    bundle = make_bundle()
    attach_decoders(bundle, seed=20)
    assert bundle.branches[2].decoder is not bundle.branches[3].decoder
    names = bundle.decoder_parameters()
    assert any(k.startswith("scale3.decoder.") for k in names)


def test_default_config_full_size_forward():
    # the library default: 64-px input, five stages, 8x downsample, C=128
    bundle = build_bundle(ModelConfig(), Vocabulary(list("abcde")), seed=0)
    img = rand_image(width=96, height=64, seed=21)
    outs = forward_train(img, bundle, train=False)
    feat_w = bundle.backbone.config.feature_width(96)  # 12
    assert [outs[s].logits.shape[0] for s in (2, 3, 4)] == [
        -(-feat_w // 2), -(-feat_w // 3), -(-feat_w // 4)]
    assert outs[3].features.dim == 3 * 128
    assert forward_infer(img, bundle).ids is not None


def test_literal_scores_mode_runs_and_differs():
    img = rand_image(48, seed=22)
    soft = make_bundle(seed=23)
    logits_soft = forward_train(img, soft, train=False)[3].logits.data
    literal = make_bundle(seed=23, literal_scores=True)
    logits_literal = forward_train(img, literal, train=False)[3].logits.data
    assert logits_soft.shape == logits_literal.shape
    assert not np.allclose(logits_soft, logits_literal)


def test_global_sublayer_flag_changes_output():
    img = rand_image(48, seed=24)
    with_sub = make_bundle(seed=25)
    without = make_bundle(seed=25, global_sublayer=False)
    assert with_sub.branches[3].global_ctx is not None
    assert without.branches[3].global_ctx is None
    a = forward_train(img, with_sub, train=False)[3].logits.data
    b = forward_train(img, without, train=False)[3].logits.data
    assert a.shape == b.shape
