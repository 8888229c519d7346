"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line. Training-based criteria use a reduced
desk configuration (32-px input height, three backbone stages) so the whole
suite stays within its runtime budgets on one core; the checks themselves
are at full tolerance.
"""

import itertools
import time
from functools import lru_cache

import numpy as np
import pytest

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.ctc import (
    LabelSequence,
    brute_force_ctc,
    ctc_feasible,
    ctc_loss,
)
from linerec.dataio import TextLineDataset
from linerec.evaluation import EditCounts, accuracy_rate, edit_distance, evaluate_corpus
from linerec.model import ModelConfig, build_bundle, drop_branches, forward_train
from linerec.synth import SynthConfig, synth_generate
from linerec.training import TrainConfig, run_ablation, train_stage1, train_stage2


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPT {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def accept_model_config(scales=(3,)):
    return ModelConfig(scales=scales, input_height=32,
                       backbone_channels=(16, 32, 48), backbone_pools=(0, 1),
                       max_keys=64)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept_corpus")
    train_manifest, vocab = synth_generate(
        SynthConfig(num_samples=32, num_symbols=5, chars_min=2, chars_max=6,
                    canvas_height=32, seed=42), root)
    val_manifest, _ = synth_generate(
        SynthConfig(num_samples=16, num_symbols=5, chars_min=2, chars_max=6,
                    canvas_height=32, seed=43, split="val"), root)
    train = TextLineDataset(train_manifest, vocab, root, input_height=32)
    val = TextLineDataset(val_manifest, vocab, root, input_height=32)
    return train, val, vocab


def test_ctc_oracle_equivalence():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst = 0.0
    checked = 0
    while checked < 1000:
        t_len = int(rng.integers(1, 7))
        k = int(rng.integers(2, 5))
        n = int(rng.integers(0, 4))
        label = LabelSequence(ids=[int(rng.integers(1, k)) for _ in range(n)])
        if not ctc_feasible(label, t_len):
            continue
        logits = Tensor(rng.normal(0.0, 2.0, (t_len, k)))
        fast = ctc_loss(logits, label).item()
        slow = brute_force_ctc(logits, label)
        worst = max(worst, abs(fast - slow) / max(abs(slow), 1e-300))
        checked += 1
    elapsed = time.perf_counter() - started
    report("ctc-oracle-equivalence", worst < 1e-10 and elapsed < 30.0,
           f"{checked} instances, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_total_probability_conservation():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        t_len = int(rng.integers(1, 5))
        k = int(rng.integers(2, 4))
        logits = Tensor(rng.normal(0.0, 1.5, (t_len, k)))
        total = 0.0
        for n in range(t_len + 1):
            for ids in itertools.product(range(1, k), repeat=n):
                loss = brute_force_ctc(logits, LabelSequence(ids=list(ids)))
                if np.isfinite(loss):
                    total += np.exp(-loss)
        worst = max(worst, abs(total - 1.0))
    report("total-probability-conservation", worst < 1e-9,
           f"max |sum - 1| = {worst:.2e}")


def test_gradient_integrity():
    from linerec.attention import VisualSequence, forward_block_attention, init_block_attention
    from linerec.backbone import BatchNormState, batchnorm2d, conv2d
    from linerec.context import init_lstm, local_context
    from linerec.decoder import ce_loss as decoder_ce, init_decoder
    from linerec.context import IntegratedSequence
    from linerec.framing import extract_blocks, sinusoid_table

    started = time.perf_counter()
    rng = np.random.default_rng(11)
    errs = {}

    w = Tensor(rng.uniform(-0.5, 0.5, (2, 1, 3, 3)))
    b = Tensor(np.zeros(2))
    errs["conv_bn"] = ad.gradcheck(
        lambda x: ad.tsum(ad.tanh(batchnorm2d(conv2d(x, w, b),
                                              BatchNormState.create(2), True))),
        ad.parameter(rng.uniform(-1, 1, (1, 5, 4))))

    attn = init_block_attention(2, rng)
    table = sinusoid_table(2)

    def attn_fn(x):
        vis, _ = forward_block_attention(extract_blocks(x, 3), attn, table)
        return ad.tsum(ad.tanh(vis.matrix))

    errs["block_attention_2x3x2"] = ad.gradcheck(
        attn_fn, ad.parameter(rng.uniform(-1, 1, (2, 3, 2))))

    lstm = init_lstm(2, 2, rng)
    errs["lstm_3step"] = ad.gradcheck(
        lambda x: ad.tsum(local_context(VisualSequence(matrix=x, frame_length=3), lstm)),
        ad.parameter(rng.uniform(-1, 1, (3, 2))))

    dec = init_decoder(2, 3, rng, max_keys=8)
    target = LabelSequence(ids=[1, 2])
    errs["decoder_2step"] = ad.gradcheck(
        lambda v: decoder_ce(IntegratedSequence(matrix=v, dims=(2, 0, 0)), target, dec),
        ad.parameter(rng.uniform(-1, 1, (3, 2))))

    errs["ctc_loss"] = ad.gradcheck(
        lambda t: ctc_loss(t, LabelSequence(ids=[1, 2])),
        ad.parameter(rng.normal(0, 1, (4, 3))))

    elapsed = time.perf_counter() - started
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    report("gradient-integrity", worst < 1e-4 and elapsed < 120.0,
           f"{detail}; {elapsed:.1f}s")


def test_positional_encoding_exactness():
    import math

    from linerec.framing import sinusoid_table

    worst = 0.0
    for channels in (6, 32, 128):
        table = sinusoid_table(channels, max_pos=512)
        for p in range(512):
            for j in range(channels // 2):
                i = j // 2
                angle = p * math.exp(2 * i * (-math.log(10000.0) / channels))
                want = math.sin(angle) if j % 2 == 0 else math.cos(angle)
                worst = max(worst, abs(table.table[p, j] - want))
    report("positional-encoding-exactness", worst < 1e-12,
           f"max abs deviation {worst:.2e} over C in (6, 32, 128), p < 512")


def test_overfit_milestone(corpus):
    from linerec.training import MetricsLog

    train, _, vocab = corpus
    started = time.perf_counter()
    bundle = build_bundle(accept_model_config(), vocab, seed=42)
    log = MetricsLog()
    train_stage1(train, bundle,
                 TrainConfig(scales=(3,), lr=2e-3, lr_halve_epochs=(40,),
                             stage1_epochs=30, batch_size=2, seed=42),
                 metrics=log, val_data=train)
    elapsed = time.perf_counter() - started
    best = max(r.val_ar for r in log.rows)
    first = next((r.epoch for r in log.rows if r.val_ar >= 0.99), None)
    report("overfit-milestone", best >= 0.99 and elapsed < 600.0,
           f"AR {best:.4f} (>=0.99 at epoch {first}), {elapsed:.0f}s")


def test_joint_training_direction(corpus):
    train, val, vocab = corpus
    started = time.perf_counter()
    deltas = []
    ok = True
    for seed in (1, 2, 3):
        bundle = build_bundle(accept_model_config(), vocab, seed=seed)
        cfg = TrainConfig(scales=(3,), lr=2e-3, lr_halve_epochs=(17, 21),
                          stage1_epochs=16, stage2_epochs=8, batch_size=2, seed=seed)
        train_stage1(train, bundle, cfg)
        ar_ctc = evaluate_corpus(bundle, val).accuracy_rate
        train_stage2(train, bundle, cfg)
        ar_joint = evaluate_corpus(bundle, val).accuracy_rate
        deltas.append((seed, ar_ctc, ar_joint))
        ok = ok and ar_joint >= ar_ctc - 0.01
    elapsed = time.perf_counter() - started
    detail = "; ".join(f"seed {s}: {a:.3f} -> {b:.3f}" for s, a, b in deltas)
    report("joint-training-direction", ok, f"{detail}; {elapsed:.0f}s")


def test_multiscale_parity_and_isolation(corpus):
    train, _, vocab = corpus
    bundle = build_bundle(accept_model_config(scales=(2, 3, 4)), vocab, seed=4)
    train_stage1(train, bundle,
                 TrainConfig(scales=(2, 3, 4), lr=2e-3, stage1_epochs=2,
                             batch_size=4, seed=4))

    widths = (40, 47, 52, 61, 72)
    lengths_ok = True
    rng = np.random.default_rng(0)
    images = {w: rng.uniform(0, 1, (32, w)) for w in widths}
    for w, img in images.items():
        outs = forward_train(img, bundle, train=False)
        feat_w = bundle.backbone.config.feature_width(w)
        for s in (2, 3, 4):
            lengths_ok = lengths_ok and outs[s].logits.shape[0] == -(-feat_w // s)

    before = {w: forward_train(img, bundle, train=False)[3].logits.data.tobytes()
              for w, img in images.items()}
    drop_branches(bundle, keep=3)
    after = {}
    for w, img in images.items():
        outs = forward_train(img, bundle, train=False)
        after[w] = outs[3].logits.data.tobytes()
    identical = all(before[w] == after[w] for w in widths)
    report("multiscale-parity-isolation", lengths_ok and identical,
           f"lengths ceil(W/S) ok={lengths_ok}, "
           f"bit-identical after branch deletion={identical}")


def test_ablation_harness(corpus, tmp_path):
    train, val, vocab = corpus
    rows = run_ablation(train, val, accept_model_config(),
                        TrainConfig(scales=(3,), lr=2e-3, stage1_epochs=2,
                                    batch_size=4, seed=5),
                        report_path=tmp_path / "ablation.csv")
    grid = {(r.block_attention, r.context) for r in rows}
    complete = grid == {(True, True), (True, False), (False, True), (False, False)}
    finite = all(np.isfinite(r.accuracy_rate) for r in rows)
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    detail = "; ".join(
        f"attn={int(r.block_attention)} ctx={int(r.context)} AR {r.accuracy_rate:.3f}"
        for r in rows)
    report("ablation-harness", complete and finite and len(lines) == 5, detail)


@lru_cache(maxsize=None)
def _alignment_counts(ref: str, hyp: str) -> frozenset:
    if not ref and not hyp:
        return frozenset({(0, 0, 0)})
    out = set()
    if ref and hyp:
        bump = 0 if ref[0] == hyp[0] else 1
        for ns, ni, nd in _alignment_counts(ref[1:], hyp[1:]):
            out.add((ns + bump, ni, nd))
    if ref:
        for ns, ni, nd in _alignment_counts(ref[1:], hyp):
            out.add((ns, ni, nd + 1))
    if hyp:
        for ns, ni, nd in _alignment_counts(ref, hyp[1:]):
            out.add((ns, ni + 1, nd))
    return frozenset(out)


def test_metric_correctness():
    started = time.perf_counter()
    alphabet = "abc"
    strings = [""]
    for n in range(1, 6):
        strings.extend("".join(p) for p in itertools.product(alphabet, repeat=n))
    mismatches = 0
    for ref in strings:
        for hyp in strings:
            candidates = _alignment_counts(ref, hyp)
            best_cost = min(sum(c) for c in candidates)
            want = max((c for c in candidates if sum(c) == best_cost),
                       key=lambda c: c[0])
            got = edit_distance(ref, hyp)
            if (got.substitutions, got.insertions, got.deletions) != want:
                mismatches += 1
    arithmetic_ok = (accuracy_rate(100, EditCounts(3, 1, 2)) == 1 - 6 / 100
                     and accuracy_rate(2, EditCounts(1, 2, 0)) == 1 - 3 / 2)
    elapsed = time.perf_counter() - started
    report("metric-correctness", mismatches == 0 and arithmetic_ok,
           f"{len(strings) ** 2} pairs, {mismatches} mismatches, "
           f"arithmetic ok={arithmetic_ok}, {elapsed:.0f}s")


def test_train_determinism(tmp_path):
    from linerec.cli import main
    from linerec.config import write_config

    write_config(
        tmp_path / "exp.cfg",
        synth=SynthConfig(num_samples=8, num_symbols=3, chars_min=1, chars_max=3,
                          canvas_height=32, seed=12),
        model=accept_model_config(),
        train=TrainConfig(scales=(3,), lr=2e-3, stage1_epochs=2, stage2_epochs=1,
                          batch_size=4, seed=12),
    )
    assert main(["synth", "--out", str(tmp_path / "data"),
                 "--config", str(tmp_path / "exp.cfg")]) == 0
    for run in ("run_a", "run_b"):
        assert main(["train", "--data", str(tmp_path / "data"),
                     "--out", str(tmp_path / run),
                     "--config", str(tmp_path / "exp.cfg"), "--joint"]) == 0
    same_model = ((tmp_path / "run_a" / "model.lrck").read_bytes()
                  == (tmp_path / "run_b" / "model.lrck").read_bytes())
    same_metrics = ((tmp_path / "run_a" / "metrics.csv").read_bytes()
                    == (tmp_path / "run_b" / "metrics.csv").read_bytes())
    report("train-determinism", same_model and same_metrics,
           f"checkpoint bytes equal={same_model}, metrics bytes equal={same_metrics}")
