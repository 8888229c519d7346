"""Two-stage optimization: CTC-only warm-up, then joint CTC + cross-entropy
with the auxiliary decoders attached.

Stage 1 minimizes the mean over scale branches of the per-scale CTC loss.
Stage 2 minimizes lambda1 * mean(CTC) + lambda2 * mean(CE) over the main
parameters and the decoders together; the returned bundle still infers
through the main network only. Everything is driven by one seed: parameter
init, shuffling, and augmentation derive their streams from it, so runs are
bit-reproducible on one thread.
"""

from __future__ import annotations

import csv
import sys
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from linerec import autodiff as ad
from linerec.autodiff import Tensor, backward
from linerec.ctc import LabelSequence, ctc_loss
from linerec.dataio import TextLineDataset
from linerec.decoder import ce_loss
from linerec.model import (
    ModelBundle,
    ModelConfig,
    attach_decoders,
    build_bundle,
    forward_train,
    save_bundle,
)
from linerec.synth import augment


@dataclass
class TrainConfig:
    scales: tuple[int, ...] = (2, 3, 4)
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr: float = 1e-3
    lr_halve_epochs: tuple[int, ...] = ()
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    stage1_epochs: int = 60
    stage2_epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.scales:
            raise ValueError("at least one scale is required")

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        d["lr_halve_epochs"] = list(self.lr_halve_epochs)
        return d

    @classmethod
    def from_mapping(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("scales", "lr_halve_epochs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class Adam:
    """Adam with bias correction over a fixed name -> tensor mapping.

    A non-finite gradient aborts immediately, naming the parameter.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name in self.params:
            t = self.params[name]
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * (g * g)
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            t.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([float(self.step_count)])}
        for n in sorted(self.params):
            out[f"adam.m.{n}"] = self.m[n]
            out[f"adam.v.{n}"] = self.v[n]
        return out


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: Adam, lr: float) -> None:
    """Functional wrapper: install grads, then advance the optimizer."""
    for n, g in grads.items():
        params[n].grad = None if g is None else np.array(g)
    state.lr = lr
    state.step()


@dataclass
class EpochStats:
    epoch: int
    stage: int
    loss_ctc: float
    loss_ce: float
    val_ar: float
    skipped: int


class MetricsLog:
    """Append-only CSV: epoch, stage, loss_ctc, loss_ce, val_ar."""

    FIELDS = ["epoch", "stage", "loss_ctc", "loss_ce", "val_ar"]

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[EpochStats] = []
        if self.path and not self.path.exists():
            self.path.write_text(",".join(self.FIELDS) + "\n", encoding="utf-8")

    def append(self, stats: EpochStats) -> None:
        self.rows.append(stats)
        if self.path:
            with open(self.path, "a", newline="", encoding="utf-8") as f:
                csv.writer(f).writerow([
                    stats.epoch, stats.stage,
                    f"{stats.loss_ctc:.12g}", f"{stats.loss_ce:.12g}",
                    f"{stats.val_ar:.12g}"])


def _shuffle_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0x5F, stage))))


def _lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch; halves at each configured epoch.

    The epoch counter runs across both stages, so halvings scheduled past
    `stage1_epochs` take effect during joint training.
    """
    lr = config.lr
    for e in sorted(config.lr_halve_epochs):
        if epoch >= e:
            lr *= 0.5
    return lr


def _sample_losses(sample_image, label: LabelSequence, bundle: ModelBundle,
                   with_ce: bool):
    """Per-scale CTC (and optionally CE) losses for one sample; raises
    CtcInfeasibleError when any scale cannot emit the label."""
    outputs = forward_train(sample_image, bundle, train=True)
    ctc_terms, ce_terms = [], []
    for s in sorted(outputs):
        out = outputs[s]
        ctc_terms.append(ctc_loss(out.logits, label))
        if with_ce:
            ce_terms.append(ce_loss(out.features, label, bundle.branches[s].decoder))
    n = float(len(ctc_terms))
    ctc_mean = ctc_terms[0] * (1.0 / n)
    for t in ctc_terms[1:]:
        ctc_mean = ctc_mean + t * (1.0 / n)
    ce_mean = None
    if with_ce:
        ce_mean = ce_terms[0] * (1.0 / n)
        for t in ce_terms[1:]:
            ce_mean = ce_mean + t * (1.0 / n)
    return ctc_mean, ce_mean


def _check_feasible(label: LabelSequence, image_width, bundle: ModelBundle) -> bool:
    from linerec.ctc import min_frames

    cfg = bundle.config.backbone_config()
    w = cfg.feature_width(image_width)
    if w < 1:
        return False
    return all(-(-w // s) >= min_frames(label.ids) for s in bundle.branches)


def _run_stage(stage: int, data: TextLineDataset, bundle: ModelBundle,
               config: TrainConfig, epochs: int, joint: bool,
               out_dir=None, val_data: TextLineDataset | None = None,
               metrics: MetricsLog | None = None, epoch_offset: int = 0) -> ModelBundle:
    from linerec.evaluation import evaluate_corpus

    params = (bundle.named_parameters() if joint
              else bundle.named_parameters(include_decoder=False))
    opt = Adam(params, lr=config.lr, beta1=config.adam_beta1,
               beta2=config.adam_beta2, eps=config.adam_eps)
    rng = _shuffle_rng(config.seed, stage)
    aug_rng = _shuffle_rng(config.seed, stage + 100)
    metrics = metrics or MetricsLog()
    out_dir = Path(out_dir) if out_dir else None

    for epoch in range(1, epochs + 1):
        opt.lr = _lr_at(config, epoch_offset + epoch)
        order = rng.permutation(len(data))
        epoch_ctc, epoch_ce, n_seen, skipped = 0.0, 0.0, 0, 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            opt.zero_grad()
            used = 0
            pending = []
            for idx in batch:
                sample = data[int(idx)]
                label = LabelSequence(ids=data.encoded_label(int(idx)), text=sample.label)
                image = sample.image
                if config.augment:
                    image = augment(image, int(aug_rng.integers(0, 2 ** 31)))
                if not _check_feasible(label, image.shape[1], bundle):
                    skipped += 1
                    continue
                pending.append((image, label))
            if not pending:
                continue
            scale = 1.0 / len(pending)
            for image, label in pending:
                ctc_mean, ce_mean = _sample_losses(image, label, bundle, with_ce=joint)
                if joint:
                    total = (ctc_mean * config.lambda1 + ce_mean * config.lambda2) * scale
                    epoch_ce += ce_mean.item()
                else:
                    total = ctc_mean * scale
                backward(total)
                epoch_ctc += ctc_mean.item()
                used += 1
            n_seen += used
            opt.step()
        if skipped:
            print(f"warning: stage {stage} epoch {epoch}: skipped {skipped} "
                  f"sample(s) whose labels cannot fit their frame count",
                  file=sys.stderr)
        stats = EpochStats(
            epoch=epoch, stage=stage,
            loss_ctc=epoch_ctc / max(n_seen, 1),
            loss_ce=epoch_ce / max(n_seen, 1) if joint else 0.0,
            val_ar=(evaluate_corpus(bundle, val_data).accuracy_rate
                    if val_data is not None else float("nan")),
            skipped=skipped,
        )
        metrics.append(stats)
        if out_dir:
            save_bundle(bundle, out_dir / f"checkpoint_stage{stage}.lrck",
                        extra={"epoch": epoch, "stage": stage,
                               "train_config": config.to_mapping()},
                        arrays=opt.state_arrays())
    return bundle


def train_stage1(data: TextLineDataset, bundle: ModelBundle, config: TrainConfig,
                 out_dir=None, val_data: TextLineDataset | None = None,
                 metrics: MetricsLog | None = None) -> ModelBundle:
    """CTC-only optimization of the main network; decoders stay untouched."""
    if config.stage1_epochs < 1:
        raise ValueError("stage 1 needs at least one epoch")
    return _run_stage(1, data, bundle, config, config.stage1_epochs, joint=False,
                      out_dir=out_dir, val_data=val_data, metrics=metrics)


def train_stage2(data: TextLineDataset, bundle: ModelBundle, config: TrainConfig,
                 out_dir=None, val_data: TextLineDataset | None = None,
                 metrics: MetricsLog | None = None) -> ModelBundle:
    """Joint optimization of main network and decoders on
    lambda1 * CTC + lambda2 * CE; inference still uses the main path only.

    The learning-rate schedule continues from the end of stage 1.
    """
    attach_decoders(bundle, seed=config.seed)
    return _run_stage(2, data, bundle, config, config.stage2_epochs, joint=True,
                      out_dir=out_dir, val_data=val_data, metrics=metrics,
                      epoch_offset=config.stage1_epochs)


@dataclass
class AblationRow:
    block_attention: bool
    context: bool
    accuracy_rate: float
    epochs: int
    seconds: float


def run_ablation(train_data: TextLineDataset, val_data: TextLineDataset,
                 model_config: ModelConfig, train_config: TrainConfig,
                 report_path=None) -> list[AblationRow]:
    """Train the four on/off combinations of block attention and context and
    report validation accuracy for each (no ordering is asserted; synthetic
    direction is informational)."""
    from linerec.evaluation import evaluate_corpus
    from dataclasses import replace

    rows = []
    for use_attn, use_ctx in [(True, True), (True, False), (False, True), (False, False)]:
        cfg = replace(model_config, use_block_attention=use_attn, use_context=use_ctx)
        bundle = build_bundle(cfg, train_data.vocab, seed=train_config.seed)
        started = time.perf_counter()
        train_stage1(train_data, bundle, train_config)
        ar = evaluate_corpus(bundle, val_data).accuracy_rate
        rows.append(AblationRow(block_attention=use_attn, context=use_ctx,
                                accuracy_rate=ar, epochs=train_config.stage1_epochs,
                                seconds=time.perf_counter() - started))
    if report_path:
        with open(report_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["block_attention", "context", "val_ar", "epochs"])
            for r in rows:
                w.writerow([r.block_attention, r.context, f"{r.accuracy_rate:.6f}", r.epochs])
    return rows
