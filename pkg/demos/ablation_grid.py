"""Ablation grid: train with block attention and context individually
disabled and tabulate validation accuracy for the four combinations.

When block attention is off, the feature volume is height-pooled to one
row and window-averaged instead. When context is off, the classifier sees
the visual vectors alone. Directions on synthetic data are informational.

Run:  python demos/ablation_grid.py
"""

from pathlib import Path

from linerec.dataio import TextLineDataset
from linerec.model import ModelConfig
from linerec.synth import SynthConfig, synth_generate
from linerec.training import TrainConfig, run_ablation


def main():
    out = Path("demo_output/ablation")
    train_manifest, vocab = synth_generate(
        SynthConfig(num_samples=32, num_symbols=5, chars_min=2, chars_max=6,
                    canvas_height=32, seed=42), out / "data")
    val_manifest, _ = synth_generate(
        SynthConfig(num_samples=16, num_symbols=5, chars_min=2, chars_max=6,
                    canvas_height=32, seed=43, split="val"), out / "data")
    train_data = TextLineDataset(train_manifest, vocab, out / "data", input_height=32)
    val_data = TextLineDataset(val_manifest, vocab, out / "data", input_height=32)

    rows = run_ablation(
        train_data, val_data,
        ModelConfig(scales=(3,), input_height=32, backbone_channels=(16, 32, 48),
                    backbone_pools=(0, 1), max_keys=64),
        TrainConfig(scales=(3,), lr=2e-3, stage1_epochs=10, batch_size=2, seed=1),
        report_path=out / "ablation.csv")

    print(f"{'block attention':>16} {'context':>8} {'val AR':>8} {'seconds':>8}")
    for r in rows:
        print(f"{str(r.block_attention):>16} {str(r.context):>8} "
              f"{r.accuracy_rate:>8.4f} {r.seconds:>8.1f}")
    print(f"\nreport written to {out / 'ablation.csv'}")


if __name__ == "__main__":
    main()
