"""The recognition model: shared backbone plus parameter-disjoint per-scale
branches, its forward passes, and checkpoint serialization.

Training runs every configured frame length in parallel off one backbone
pass; inference keeps only the frame-length-3 branch and never touches the
auxiliary decoders. Branches are parameter-disjoint, so deleting or zeroing
the unused ones cannot change inference output.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor
from linerec.attention import (
    BlockAttentionParams,
    VisualSequence,
    forward_block_attention,
    init_block_attention,
)
from linerec.backbone import (
    BackboneConfig,
    BackboneParams,
    FeatureVolume,
    StageSpec,
    backbone_forward,
    init_backbone,
)
from linerec.context import (
    GlobalContextParams,
    IntegratedSequence,
    LstmParams,
    global_context,
    init_global_context,
    init_lstm,
    integrate,
    local_context,
)
from linerec.ctc import LabelSequence, greedy_decode
from linerec.decoder import DecoderParams, init_decoder
from linerec.dataio import Vocabulary, to_model_input
from linerec.framing import extract_blocks, sinusoid_table
from linerec.initializers import uniform_fan

CHECKPOINT_MAGIC = b"LRCK"
CHECKPOINT_VERSION = 1

INFER_SCALE = 3


@dataclass
class ModelConfig:
    """Architecture knobs; everything downstream is derived from these."""

    scales: tuple[int, ...] = (2, 3, 4)
    input_height: int = 64
    backbone_channels: tuple[int, ...] = (32, 64, 128, 128, 128)
    backbone_pools: tuple[int, ...] = (0, 1, 2)  # stage indices followed by 2x2 pools
    hidden_dim: int = 0          # 0 -> same as channel width
    literal_scores: bool = False
    global_sublayer: bool = True
    use_block_attention: bool = True
    use_context: bool = True
    share_decoder: bool = False
    max_keys: int = 256
    infer_scale: int = INFER_SCALE

    def backbone_config(self) -> BackboneConfig:
        stages = [StageSpec(c, pool=(i in self.backbone_pools))
                  for i, c in enumerate(self.backbone_channels)]
        return BackboneConfig(stages=stages, input_height=self.input_height)

    @property
    def channels(self) -> int:
        return self.backbone_channels[-1]

    @property
    def hidden(self) -> int:
        return self.hidden_dim or self.channels

    @property
    def feature_dim(self) -> int:
        if not self.use_context:
            return self.channels
        return 2 * self.channels + self.hidden

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["backbone_channels"] = list(self.backbone_channels)
        d["backbone_pools"] = list(self.backbone_pools)
        return d

    @classmethod
    def from_mapping(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("scales", "backbone_channels", "backbone_pools"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ScaleBranch:
    """Everything owned by one frame length: block attention, context,
    classifier head, and (after joint training starts) a decoder."""

    attn: BlockAttentionParams | None
    global_ctx: GlobalContextParams | None
    lstm: LstmParams | None
    cls_w: Tensor = None
    cls_b: Tensor = None
    decoder: DecoderParams | None = None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.attn is not None:
            out.update(self.attn.named(f"{prefix}.attn"))
        if self.global_ctx is not None:
            out.update(self.global_ctx.named(f"{prefix}.global"))
        if self.lstm is not None:
            out.update(self.lstm.named(f"{prefix}.lstm"))
        out[f"{prefix}.cls_w"] = self.cls_w
        out[f"{prefix}.cls_b"] = self.cls_b
        if self.decoder is not None:
            out.update(self.decoder.named(f"{prefix}.decoder"))
        return out


@dataclass
class ModelBundle:
    config: ModelConfig
    vocab: Vocabulary
    backbone: BackboneParams
    branches: dict[int, ScaleBranch]
    pos_table: object = None
    extra_arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.pos_table is None:
            self.pos_table = sinusoid_table(self.config.channels)

    @property
    def num_classes(self) -> int:
        return self.vocab.num_classes

    def named_parameters(self, include_decoder: bool = True) -> dict[str, Tensor]:
        out = dict(self.backbone.named())
        seen = {id(t) for t in out.values()}
        for s in sorted(self.branches):
            branch = self.branches[s]
            named = branch.named(f"scale{s}")
            if not include_decoder:
                named = {k: v for k, v in named.items() if ".decoder." not in k}
            for k, v in named.items():
                if id(v) in seen:  # shared decoders appear once
                    continue
                seen.add(id(v))
                out[k] = v
        return out

    def decoder_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        seen: set[int] = set()
        for s in sorted(self.branches):
            d = self.branches[s].decoder
            if d is None:
                continue
            for k, v in d.named(f"scale{s}.decoder").items():
                if id(v) in seen:
                    continue
                seen.add(id(v))
                out[k] = v
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return self.backbone.named_buffers()


def _init_branch(cfg: ModelConfig, num_classes: int,
                 rng: np.random.Generator) -> ScaleBranch:
    c = cfg.channels
    attn = init_block_attention(c, rng) if cfg.use_block_attention else None
    if cfg.use_context:
        g = init_global_context(c, rng) if cfg.global_sublayer else None
        # the plain-attention variant still needs LayerNorm-free params;
        # keep a GlobalContextParams only when the sublayer is enabled
        lstm = init_lstm(c, cfg.hidden, rng)
    else:
        g, lstm = None, None
    return ScaleBranch(
        attn=attn,
        global_ctx=g,
        lstm=lstm,
        cls_w=uniform_fan(rng, cfg.feature_dim, num_classes),
        cls_b=ad.parameter(np.zeros(num_classes)),
    )


def build_bundle(config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> ModelBundle:
    """Deterministically initialize a full bundle from one seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xB0))))
    backbone = init_backbone(config.backbone_config(), rng)
    branches = {}
    for s in config.scales:
        branches[s] = _init_branch(config, vocab.num_classes, rng)
    return ModelBundle(config=config, vocab=vocab, backbone=backbone, branches=branches)


def attach_decoders(bundle: ModelBundle, seed: int = 0) -> None:
    """Randomly initialize decoders on branches that lack one; with
    `share_decoder` every branch references a single parameter set."""
    cfg = bundle.config
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xDE))))
    shared: DecoderParams | None = None
    for s in sorted(bundle.branches):
        branch = bundle.branches[s]
        if branch.decoder is not None:
            shared = shared or branch.decoder if cfg.share_decoder else shared
            continue
        if cfg.share_decoder and shared is not None:
            branch.decoder = shared
            continue
        branch.decoder = init_decoder(cfg.feature_dim, bundle.num_classes, rng,
                                      hidden=cfg.hidden, max_keys=cfg.max_keys)
        if cfg.share_decoder:
            shared = branch.decoder


def _pooled_visual(volume: Tensor, frame_length: int) -> VisualSequence:
    """Block-attention ablation: average the height away, then average each
    width-S window into one vector."""
    c, w, h = volume.shape
    count = -(-w // frame_length)
    pad = count * frame_length - w
    flat = ad.mean(volume, axis=2)  # [C, W]
    if pad:
        flat = ad.concat([flat, Tensor(np.zeros((c, pad)))], axis=1)
    windows = ad.reshape(flat, (c, count, frame_length))
    pooled = ad.mean(windows, axis=2)  # [C, T]
    return VisualSequence(matrix=ad.transpose(pooled, (1, 0)), frame_length=frame_length)


@dataclass
class BranchOutput:
    logits: Tensor                  # [T, K] classifier scores incl. blank
    features: IntegratedSequence    # decoder input
    visual: VisualSequence
    alpha_maps: Tensor | None       # [T, S, H] block attention weights


def branch_forward(volume: FeatureVolume, branch: ScaleBranch, scale: int,
                   bundle: ModelBundle) -> BranchOutput:
    cfg = bundle.config
    alpha_maps = None
    if cfg.use_block_attention:
        blocks = extract_blocks(volume.data, scale)
        visual, alpha_maps = forward_block_attention(
            blocks, branch.attn, bundle.pos_table, literal_scores=cfg.literal_scores)
    else:
        visual = _pooled_visual(volume.data, scale)
    if cfg.use_context:
        scale_s = float(np.sqrt(cfg.channels))
        g = global_context(visual, scale_s, branch.global_ctx)
        loc = local_context(visual, branch.lstm)
        feats = integrate(visual.matrix, g, loc)
    else:
        feats = IntegratedSequence(matrix=visual.matrix, dims=(cfg.channels, 0, 0))
    logits = ad.add(ad.matmul(feats.matrix, branch.cls_w), branch.cls_b)
    return BranchOutput(logits=logits, features=feats, visual=visual,
                        alpha_maps=alpha_maps)


def forward_train(image: np.ndarray, bundle: ModelBundle,
                  train: bool = True) -> dict[int, BranchOutput]:
    """One shared backbone pass, then every configured scale branch.

    `image` is a [H, W] array in [0, 1] (or an already-laid-out [1, W, H]
    volume / Tensor).
    """
    x = _as_input_tensor(image)
    volume = backbone_forward(x, bundle.backbone, train=train)
    return {s: branch_forward(volume, bundle.branches[s], s, bundle)
            for s in sorted(bundle.branches)}


def _as_input_tensor(image) -> Tensor:
    if isinstance(image, Tensor):
        return image
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = to_model_input(arr)
    return Tensor(arr)


def forward_infer(image: np.ndarray, bundle: ModelBundle) -> LabelSequence:
    """Backbone -> inference branch -> greedy decode. Decoders never run."""
    s = bundle.config.infer_scale
    if s not in bundle.branches:
        raise ValueError(f"bundle has no frame-length-{s} branch; scales: "
                         f"{sorted(bundle.branches)}")
    x = _as_input_tensor(image)
    volume = backbone_forward(x, bundle.backbone, train=False)
    out = branch_forward(volume, bundle.branches[s], s, bundle)
    return greedy_decode(out.logits, vocab=bundle.vocab)


def attention_maps(image: np.ndarray, bundle: ModelBundle,
                   scale: int | None = None):
    """Per-block attention weights for visualization.

    Returns (maps [T, S, H], downsample factor, feature width before
    padding).
    """
    s = scale or bundle.config.infer_scale
    x = _as_input_tensor(image)
    volume = backbone_forward(x, bundle.backbone, train=False)
    out = branch_forward(volume, bundle.branches[s], s, bundle)
    if out.alpha_maps is None:
        raise ValueError("block attention is disabled in this bundle")
    return out.alpha_maps.data, volume.downsample_factor, volume.data.shape[1]


# ---------------------------------------------------------------------------
# checkpoint container: magic, version, json header, little-endian float64
# blobs in header order


def _header(bundle: ModelBundle, extra: dict | None,
            arrays: dict[str, np.ndarray] | None) -> dict:
    params = bundle.named_parameters()
    buffers = bundle.named_buffers()
    arrays = arrays or {}
    return {
        "format_version": CHECKPOINT_VERSION,
        "model_config": bundle.config.to_mapping(),
        "vocabulary": bundle.vocab.symbols[1:],
        "decoder_scales": sorted(s for s, b in bundle.branches.items()
                                 if b.decoder is not None),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in sorted(params)],
        "buffers": [{"name": n, "shape": list(buffers[n].shape)} for n in sorted(buffers)],
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in sorted(arrays)],
        "extra": extra or {},
    }


def save_bundle(bundle: ModelBundle, path, extra: dict | None = None,
                arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write the versioned container; `arrays` carries auxiliary state such
    as optimizer moments alongside the parameters."""
    header = _header(bundle, extra, arrays)
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    params = bundle.named_parameters()
    buffers = bundle.named_buffers()
    arrays = arrays or {}
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for entry in header["params"]:
            f.write(params[entry["name"]].data.astype("<f8").tobytes())
        for entry in header["buffers"]:
            f.write(buffers[entry["name"]].astype("<f8").tobytes())
        for entry in header["arrays"]:
            f.write(np.ascontiguousarray(arrays[entry["name"]]).astype("<f8").tobytes())


def load_bundle(path) -> tuple[ModelBundle, dict]:
    """Rebuild a bundle from a checkpoint; returns (bundle, extra header)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a linerec checkpoint")
        version = struct.unpack("<I", f.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(struct.unpack("<Q", f.read(8))[0]).decode("utf-8"))
        config = ModelConfig.from_mapping(header["model_config"])
        vocab = Vocabulary(header["vocabulary"])
        bundle = build_bundle(config, vocab, seed=0)
        shared = None
        for s in header["decoder_scales"]:
            if config.share_decoder and shared is not None:
                bundle.branches[s].decoder = shared
                continue
            attach_decoders_single(bundle, s)
            shared = bundle.branches[s].decoder
        params = bundle.named_parameters()
        buffers = bundle.named_buffers()
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params:
                raise ValueError(f"{path}: unknown parameter {name}")
            if params[name].shape != shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            raw = f.read(8 * int(np.prod(shape, dtype=np.int64)) if shape else 8)
            params[name].data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        for entry in header["buffers"]:
            name, shape = entry["name"], tuple(entry["shape"])
            raw = f.read(8 * int(np.prod(shape, dtype=np.int64)) if shape else 8)
            buffers[name][...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
        bundle.extra_arrays = {}
        for entry in header.get("arrays", []):
            name, shape = entry["name"], tuple(entry["shape"])
            raw = f.read(8 * int(np.prod(shape, dtype=np.int64)) if shape else 8)
            bundle.extra_arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return bundle, header.get("extra", {})


def attach_decoders_single(bundle: ModelBundle, scale: int, seed: int = 0) -> None:
    cfg = bundle.config
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xDE, scale))))
    bundle.branches[scale].decoder = init_decoder(
        cfg.feature_dim, bundle.num_classes, rng, hidden=cfg.hidden, max_keys=cfg.max_keys)


def drop_branches(bundle: ModelBundle, keep: int | None = None) -> None:
    """Delete every branch except `keep` (default: the inference scale)."""
    keep = keep or bundle.config.infer_scale
    for s in [s for s in bundle.branches if s != keep]:
        del bundle.branches[s]
    bundle.config.scales = (keep,)
