"""Generate a synthetic text-line corpus and preview the augmentations.

Writes PGM images plus manifest and vocabulary files into
demo_output/synthetic, then saves a few augmented variants of one line.

Run:  python demos/synthetic_lines.py
"""

from pathlib import Path

from linerec.dataio import load_image, write_pgm
from linerec.synth import SynthConfig, augment, synth_generate


def main():
    out = Path("demo_output/synthetic")
    cfg = SynthConfig(num_samples=12, num_symbols=5, chars_min=2, chars_max=6,
                      canvas_height=64, seed=42)
    manifest, vocab = synth_generate(cfg, out)
    print(f"wrote {len(manifest)} lines to {out}")
    print("vocabulary:", vocab.symbols)
    for e in manifest.entries[:5]:
        print(f"  {e.sample_id}: {e.label!r} -> {e.path}")

    first = manifest.entries[0]
    image = load_image(out / first.path)
    print(f"\naugmenting {first.sample_id} ({first.label!r}), shape {image.shape}")
    for seed in range(4):
        distorted = augment(image, seed=seed)
        path = out / f"augmented_{seed}.pgm"
        write_pgm(path, distorted)
        print(f"  seed {seed} -> {path}")
    print("the label never changes under augmentation; only pixels do")


if __name__ == "__main__":
    main()
