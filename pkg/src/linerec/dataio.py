"""Dataset files and image IO.

On-disk formats:
  - vocabulary: UTF-8, one symbol per line, line 0 reserved for `<blank>`
  - manifest:   UTF-8 TSV of image_path<TAB>label<TAB>id, `#` comments
  - images:     binary 8-bit PGM (P5), or grayscale PNG via Pillow

Images are normalized to [0, 1] and resized to a fixed height with the
aspect ratio preserved (bilinear).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
BLANK_SYMBOL = "<blank>"


class Vocabulary:
    """Symbol <-> class-id mapping with the blank fixed at index 0."""

    def __init__(self, symbols: list[str]):
        if any(s == BLANK_SYMBOL for s in symbols):
            raise ValueError("symbol list must not include the blank; it is implicit")
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self.symbols = [BLANK_SYMBOL] + list(symbols)
        self._index = {s: i for i, s in enumerate(self.symbols)}

    @property
    def num_classes(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as e:
            raise ValueError(f"character {e.args[0]!r} not in vocabulary") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            if not 0 < i < self.num_classes:
                raise ValueError(f"class id {i} not decodable")
            out.append(self.symbols[i])
        return "".join(out)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != BLANK_SYMBOL:
            raise ValueError(f"vocabulary file {path} must reserve line 0 for {BLANK_SYMBOL}")
        return cls(lines[1:])


@dataclass
class ManifestEntry:
    path: str
    label: str
    sample_id: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    split: str = "train"
    version: int = MANIFEST_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def validate(self, vocab: Vocabulary) -> None:
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise ValueError(f"duplicate sample id {e.sample_id}")
            seen.add(e.sample_id)
            vocab.encode(e.label)

    def save(self, path) -> None:
        lines = [f"# linerec-manifest v{self.version} split={self.split}"]
        for e in self.entries:
            lines.append(f"{e.path}\t{e.label}\t{e.sample_id}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        manifest = cls(entries=[], split="train")
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                m = re.search(r"split=(\S+)", line)
                if m:
                    manifest.split = m.group(1)
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"malformed manifest line: {line!r}")
            manifest.entries.append(ManifestEntry(*parts))
        return manifest


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [H, W] float image in [0, 1] as binary 8-bit PGM."""
    quant = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = quant.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary 8-bit PGM into a [H, W] float array in [0, 1]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(v) for v in fields)
    except ValueError:
        raise ValueError(f"{path}: corrupt PGM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if pixels.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with centered pixel coordinates."""
    in_h, in_w = image.shape
    ys = np.clip((np.arange(out_h) + 0.5) * in_h / out_h - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * in_w / out_w - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def load_image(path, target_height: int | None = None) -> np.ndarray:
    """Decode a PGM or grayscale PNG into [H, W] floats in [0, 1], optionally
    resized to `target_height` with the aspect ratio preserved."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
    elif path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as pil:
            img = np.asarray(pil.convert("L"), dtype=np.float64) / 255.0
    else:
        raise ValueError(f"unsupported image format: {path.suffix!r}")
    if target_height is not None and img.shape[0] != target_height:
        scale = target_height / img.shape[0]
        out_w = max(1, int(round(img.shape[1] * scale)))
        img = resize_bilinear(img, target_height, out_w)
    return img


def to_model_input(image: np.ndarray) -> np.ndarray:
    """[H, W] image -> [1, W, H] volume (channels, width, height)."""
    return np.ascontiguousarray(image.T)[None, :, :]


@dataclass
class Sample:
    image: np.ndarray  # [H, W] in [0, 1]
    label: str
    sample_id: str


class TextLineDataset:
    """Manifest-backed dataset; images load eagerly at a fixed height."""

    def __init__(self, manifest: DatasetManifest, vocab: Vocabulary,
                 root, input_height: int):
        manifest.validate(vocab)
        self.vocab = vocab
        self.input_height = input_height
        self.samples: list[Sample] = []
        root = Path(root)
        for e in manifest.entries:
            img = load_image(root / e.path, target_height=input_height)
            self.samples.append(Sample(image=img, label=e.label, sample_id=e.sample_id))

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def encoded_label(self, i: int) -> list[int]:
        return self.vocab.encode(self.samples[i].label)
