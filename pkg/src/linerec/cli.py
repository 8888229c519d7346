"""Command-line surface: synth / train / eval / infer / viz / selftest."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np


def _load_config(path):
    from linerec.config import load_config
    from linerec.model import ModelConfig
    from linerec.synth import SynthConfig
    from linerec.training import TrainConfig

    if path is None:
        return SynthConfig(), ModelConfig(), TrainConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return load_config(path)


def _load_dataset(data_dir, manifest_name, vocab, input_height):
    from linerec.dataio import DatasetManifest, TextLineDataset

    data_dir = Path(data_dir)
    manifest_path = data_dir / manifest_name
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    manifest = DatasetManifest.load(manifest_path)
    return TextLineDataset(manifest, vocab, data_dir, input_height)


def _require_vocab_match(bundle, vocab_path):
    from linerec.dataio import Vocabulary

    vocab = Vocabulary.load(vocab_path)
    if vocab.symbols != bundle.vocab.symbols:
        raise ValueError(
            f"vocabulary mismatch: checkpoint has {len(bundle.vocab.symbols)} symbols, "
            f"{vocab_path} has {len(vocab.symbols)}")
    return vocab


def cmd_synth(args) -> int:
    from linerec.synth import synth_generate

    synth_cfg, _, _ = _load_config(args.config)
    if args.num_samples is not None:
        synth_cfg = replace(synth_cfg, num_samples=args.num_samples)
    if args.seed is not None:
        synth_cfg = replace(synth_cfg, seed=args.seed)
    if args.split is not None:
        synth_cfg = replace(synth_cfg, split=args.split)
    manifest, vocab = synth_generate(synth_cfg, args.out)
    print(f"wrote {len(manifest)} samples ({synth_cfg.split}) to {args.out} "
          f"with {vocab.num_classes - 1} symbol classes")
    return 0


def cmd_train(args) -> int:
    from linerec.dataio import Vocabulary
    from linerec.model import build_bundle, save_bundle
    from linerec.training import MetricsLog, train_stage1, train_stage2

    _, model_cfg, train_cfg = _load_config(args.config)
    if args.frame_length:
        scales = tuple(sorted(set(args.frame_length)))
        model_cfg = replace(model_cfg, scales=scales)
        train_cfg = replace(train_cfg, scales=scales)
    for name in ("seed", "batch_size", "lr", "stage1_epochs", "stage2_epochs"):
        value = getattr(args, name)
        if value is not None:
            train_cfg = replace(train_cfg, **{name: value})

    data_dir = Path(args.data)
    vocab_path = data_dir / "vocabulary.txt"
    if not vocab_path.exists():
        raise FileNotFoundError(f"vocabulary not found: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    train_data = _load_dataset(data_dir, args.train_manifest, vocab, model_cfg.input_height)
    val_data = None
    if (data_dir / args.val_manifest).exists():
        val_data = _load_dataset(data_dir, args.val_manifest, vocab, model_cfg.input_height)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bundle = build_bundle(model_cfg, vocab, seed=train_cfg.seed)
    metrics = MetricsLog(out_dir / "metrics.csv")
    train_stage1(train_data, bundle, train_cfg, out_dir=out_dir,
                 val_data=val_data, metrics=metrics)
    if args.joint:
        train_stage2(train_data, bundle, train_cfg, out_dir=out_dir,
                     val_data=val_data, metrics=metrics)
    save_bundle(bundle, out_dir / "model.lrck",
                extra={"train_config": train_cfg.to_mapping()})
    last = metrics.rows[-1]
    print(f"finished: stage {last.stage}, ctc {last.loss_ctc:.4f}, "
          f"val_ar {last.val_ar:.4f}; model at {out_dir / 'model.lrck'}")
    return 0


def cmd_eval(args) -> int:
    from linerec.evaluation import evaluate_corpus
    from linerec.model import load_bundle

    bundle, _ = load_bundle(args.checkpoint)
    data_dir = Path(args.data)
    vocab = _require_vocab_match(bundle, data_dir / "vocabulary.txt")
    dataset = _load_dataset(data_dir, args.manifest, vocab, bundle.config.input_height)
    report = evaluate_corpus(bundle, dataset, csv_path=args.report)
    counts = report.counts
    print(f"AR {report.accuracy_rate:.4f} over {report.total_chars} chars "
          f"(sub {counts.substitutions}, ins {counts.insertions}, del {counts.deletions}; "
          f"{len(report.failures)} failures)")
    for pair, n in report.top_confusions(5):
        print(f"  confusion {pair[0]!r} -> {pair[1]!r}: {n}")
    return 0


def cmd_infer(args) -> int:
    from linerec.dataio import load_image
    from linerec.model import forward_infer, load_bundle

    bundle, _ = load_bundle(args.checkpoint)
    image = load_image(args.image, target_height=bundle.config.input_height)
    result = forward_infer(image, bundle)
    print(result.text)
    return 0


def cmd_viz(args) -> int:
    from linerec.dataio import load_image
    from linerec.model import load_bundle
    from linerec.visualize import export_attention_heatmaps

    bundle, _ = load_bundle(args.checkpoint)
    image = load_image(args.image, target_height=bundle.config.input_height)
    paths = export_attention_heatmaps(image, bundle, args.out, scale=args.scale)
    print(f"wrote {len(paths)} attention heatmaps to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    from linerec import autodiff as ad
    from linerec.attention import forward_block_attention, init_block_attention
    from linerec.backbone import BatchNormState, batchnorm2d, conv2d
    from linerec.context import init_lstm, local_context
    from linerec.attention import VisualSequence
    from linerec.ctc import LabelSequence, brute_force_ctc, ctc_feasible, ctc_loss
    from linerec.framing import extract_blocks, sinusoid_table

    rng = np.random.default_rng(0)
    worst = 0.0

    w = ad.Tensor(rng.uniform(-0.5, 0.5, (2, 1, 3, 3)))
    b = ad.Tensor(np.zeros(2))

    def conv_stage(x):
        return ad.tsum(ad.tanh(batchnorm2d(conv2d(x, w, b), BatchNormState.create(2), True)))

    err = ad.gradcheck(conv_stage, ad.parameter(rng.uniform(-1, 1, (1, 5, 4))))
    worst = max(worst, err)
    print(f"gradcheck conv+bn stage: {err:.3e}")

    attn = init_block_attention(2, rng)
    table = sinusoid_table(2)

    def attn_fn(x):
        vis, _ = forward_block_attention(extract_blocks(x, 3), attn, table)
        return ad.tsum(ad.tanh(vis.matrix))

    err = ad.gradcheck(attn_fn, ad.parameter(rng.uniform(-1, 1, (2, 3, 2))))
    worst = max(worst, err)
    print(f"gradcheck block attention: {err:.3e}")

    lstm = init_lstm(2, 2, rng)

    def lstm_fn(x):
        return ad.tsum(local_context(VisualSequence(matrix=x, frame_length=3), lstm))

    err = ad.gradcheck(lstm_fn, ad.parameter(rng.uniform(-1, 1, (3, 2))))
    worst = max(worst, err)
    print(f"gradcheck 3-step lstm: {err:.3e}")

    label = LabelSequence(ids=[1, 2])
    err = ad.gradcheck(lambda t: ctc_loss(t, label),
                       ad.parameter(rng.normal(0, 1, (4, 3))))
    worst = max(worst, err)
    print(f"gradcheck ctc loss: {err:.3e}")

    worst_ctc = 0.0
    checked = 0
    while checked < 100:
        t_len = int(rng.integers(1, 6))
        k = int(rng.integers(2, 4))
        n = int(rng.integers(0, 3))
        lab = LabelSequence(ids=[int(rng.integers(1, k)) for _ in range(n)])
        if not ctc_feasible(lab, t_len):
            continue
        logits = ad.Tensor(rng.normal(0, 2, (t_len, k)))
        fast = ctc_loss(logits, lab).item()
        slow = brute_force_ctc(logits, lab)
        worst_ctc = max(worst_ctc, abs(fast - slow) / max(1.0, abs(slow)))
        checked += 1
    print(f"ctc vs brute force over {checked} instances: {worst_ctc:.3e}")

    print(f"max gradcheck error: {worst:.3e}")
    if worst < 1e-4 and worst_ctc < 1e-10:
        print("selftest ok")
        return 0
    print("selftest FAILED")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linerec",
        description="text-line recognition: synthesize data, train, evaluate, "
                    "inspect attention")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic line corpus")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--split", help="split tag (train/val/test)")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run stage-1 (and with --joint stage-2) training")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for checkpoints/metrics")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--joint", action="store_true",
                   help="continue with joint CTC + cross-entropy training")
    p.add_argument("--frame-length", type=int, action="append",
                   help="frame length S; repeat for multi-scale training")
    p.add_argument("--train-manifest", default="train.tsv")
    p.add_argument("--val-manifest", default="val.tsv")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--stage1-epochs", type=int)
    p.add_argument("--stage2-epochs", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="report corpus accuracy for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", default="test.tsv")
    p.add_argument("--report", help="per-sample CSV output path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="recognize a single line image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("viz", help="export per-block attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, help="frame length to visualize")
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("selftest", help="gradient checks and CTC oracle comparison")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
