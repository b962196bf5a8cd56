"""Detector fine-tuning, cross-validation rotations and evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from ..backbone import backbone_manifest, build_backbone, save_checkpoint
from ..dataset import DatasetIndex, FoldSplit
from ..detect import CascadeMaskRCNN, DetectorConfig, detector_preset
from ..errors import ConfigError, NonFinite
from ..eval import cross_val_report, evaluate
from ..eval.report import EvalReport
from .audit import IdAudit
from .config import FinetuneConfig, to_dict
from .data import augment, collate, epoch_batches, prepare
from .determinism import seed_everything
from .init import InitMode, InitReport, apply_init, resolve_path
from .optim import AdamW, decay_groups
from .pretrain import backbone_config
from .schedule import cosine_warmup_lr


def detector_config(spec) -> DetectorConfig:
    if isinstance(spec, DetectorConfig):
        return spec
    if isinstance(spec, str):
        return detector_preset(spec)
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("preset", None)
        base = detector_preset(name) if name else DetectorConfig()
        merged = {**base.to_dict(), **{k: v for k, v in spec.items() if k not in ("rpn", "cascade")}}
        for sub in ("rpn", "cascade"):
            if sub in spec:
                merged[sub] = {**merged[sub], **spec[sub]}
        return DetectorConfig.from_dict(merged)
    raise ConfigError(f"cannot build a detector from {spec!r}")


def build_detector(cfg: FinetuneConfig) -> CascadeMaskRCNN:
    return CascadeMaskRCNN(build_backbone(backbone_config(cfg.backbone)), detector_config(cfg.detector))


def freeze_stages(model: CascadeMaskRCNN, n: int) -> None:
    """Stop gradients into the patch embedding and the first ``n - 1`` stages (plus stage ``n - 1``)."""
    if n <= 0:
        return
    bb = model.backbone
    modules = [bb.patch_embed] + [bb.layers[i] for i in range(n)] + [getattr(bb, f"norm{i}") for i in range(n)]
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(False)


@torch.no_grad()
def predict_records(model: CascadeMaskRCNN, records: Sequence, in_chans: int, with_masks: bool = True) -> dict:
    model.eval()
    out = {}
    for rec in records:
        batch = collate([rec], in_chans, with_targets=False)
        out[rec.image_id] = model.predict(batch.images, batch.sizes, with_masks)[0]
    return out


def evaluate_model(model, index: DatasetIndex, records: Mapping, ids: Sequence, in_chans: int) -> dict:
    sub = DatasetIndex([records[i] for i in ids], index.categories, index.image_root)
    dets = predict_records(model, sub.records, in_chans)
    return evaluate(dets, sub).summary()


@dataclass
class DetectorRun:
    model: CascadeMaskRCNN
    step_losses: list[float]
    components: list[dict]
    rows: list[dict]
    evals: dict  # split name -> metric summary after training
    init_report: InitReport
    checkpoint: Optional[Path] = None


def train_detector(index: DatasetIndex, train_ids: Sequence, eval_sets: Mapping[str, Sequence],
                   init: InitMode, cfg: FinetuneConfig, seed: int = 0, init_path: Optional[str] = None,
                   audit: Optional[IdAudit] = None, checkpoint_path: Optional[Path] = None,
                   val_split: Optional[str] = None, log: Optional[Callable[[str], None]] = None) -> DetectorRun:
    """Fine-tune one detector on ``train_ids``.

    ``val_split`` (a key of ``eval_sets``) is evaluated every ``eval_every``
    epochs; every eval set is evaluated once after training.
    """
    if not len(train_ids):
        raise ValueError("fine-tuning needs at least one training image")
    generator = seed_everything(seed)
    model = build_detector(cfg)
    init_report = apply_init(model.backbone, init, init_path, transfer=cfg.transfer)
    freeze_stages(model, cfg.freeze_stages)
    all_ids = list(dict.fromkeys(list(train_ids) + [i for ids in eval_sets.values() for i in ids]))
    records = prepare(index, all_ids, cfg.image_size)
    in_chans = model.backbone.config.in_chans
    oc = cfg.optim
    params, wds, _ = decay_groups(model, oc.weight_decay)
    opt = AdamW(params, oc.base_lr, (oc.beta1, oc.beta2), oc.eps, wds)
    n_batches = math.ceil(len(train_ids) / oc.batch_size)
    accum = oc.accum_steps or n_batches
    steps_per_epoch = math.ceil(n_batches / accum)
    total_steps = int(math.ceil(oc.total_epochs * steps_per_epoch))
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    step_losses, components, rows = [], [], []
    step, epoch = 0, 0
    while step < total_steps:
        model.train()
        batches = epoch_batches(train_ids, oc.batch_size, seed, epoch)
        epoch_losses = []
        for g0 in range(0, len(batches), accum):
            if step >= total_steps:
                break
            group = batches[g0: g0 + accum]
            opt.lr = cosine_warmup_lr(step, steps_per_epoch, oc)
            opt.zero_grad()
            comp: dict = {}
            for ids in group:
                if audit is not None:
                    audit.check(ids, "finetune")
                recs = [augment(records[i], seed, epoch, cfg.flip_prob, cfg.noise_sigma) for i in ids]
                batch = collate(recs, in_chans)
                losses = model.forward_train(batch.images, batch.targets, generator)
                total = sum(losses.values())
                if not torch.isfinite(total):
                    raise NonFinite(f"fine-tuning loss became {total.item()} at step {step}")
                (total / len(group)).backward()
                for k, v in losses.items():
                    comp[k] = comp.get(k, 0.0) + v.item() / len(group)
            opt.step()
            step_losses.append(float(sum(comp.values())))
            components.append(comp)
            epoch_losses.append(step_losses[-1])
            step += 1
        epoch += 1
        rows.append({"epoch": epoch, "split": "train", "loss": float(np.mean(epoch_losses))})
        if log:
            log(f"finetune {init} epoch {epoch} step {step}/{total_steps} loss {rows[-1]['loss']:.4f}")
        last = step >= total_steps
        if val_split and (epoch % cfg.eval_every == 0 or last) and eval_sets.get(val_split):
            m = evaluate_model(model, index, records, eval_sets[val_split], in_chans)
            rows.append({"epoch": epoch, "split": val_split, "AP_box": m["AP_box"], "AP_mask": m["AP_mask"]})
    evals = {}
    for name, ids in eval_sets.items():
        if ids:
            evals[name] = evaluate_model(model, index, records, ids, in_chans)
            rows.append({"epoch": epoch, "split": f"final_{name}", "AP_box": evals[name]["AP_box"],
                         "AP_mask": evals[name]["AP_mask"]})
    if checkpoint_path is not None:
        manifest = backbone_manifest(model.backbone.config, "detector", detector=model.cfg.to_dict(),
                                     finetune_config=to_dict(cfg), init=str(init), seed=seed, steps=step)
        save_checkpoint(checkpoint_path, model.state_dict(), manifest)
    return DetectorRun(model, step_losses, components, rows, evals, init_report, checkpoint_path)


@dataclass
class FinetuneResult:
    init: str
    rotations: list[dict] = field(default_factory=list)  # per validation fold: val and test metrics
    rows: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)  # mean over rotations of the test-fold metrics
    init_reports: list[dict] = field(default_factory=list)


def finetune(index: DatasetIndex, split: FoldSplit, init: InitMode, cfg: FinetuneConfig, seed: int = 0,
             self_checkpoints: Optional[Mapping[str, str]] = None, audit: Optional[IdAudit] = None,
             checkpoint_dir: Optional[Path] = None, log: Optional[Callable[[str], None]] = None) -> FinetuneResult:
    """Rotate the validation fold over the development folds; test on the fixed test fold each time."""
    path = resolve_path(init, self_checkpoints)
    result = FinetuneResult(str(init))
    for r in range(cfg.rotations):
        train_ids, val_ids = split.rotation(r)
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"{init.kind}_fold{r}.safetensors"
        t0 = time.perf_counter()
        run = train_detector(index, train_ids, {"val": val_ids, "test": split.test_ids}, init, cfg,
                             seed=seed * 10 + r, init_path=path, audit=audit, checkpoint_path=ckpt,
                             val_split="val", log=log)
        result.rotations.append({"fold": r, "val": run.evals.get("val"), "test": run.evals.get("test"),
                                 "final_loss": run.step_losses[-1] if run.step_losses else None,
                                 "wall_time_s": time.perf_counter() - t0})
        result.init_reports.append(run.init_report.to_json())
        for row in run.rows:
            result.rows.append({**row, "split": f"fold{r}_{row['split']}"})
    tests = [rot["test"] for rot in result.rotations if rot["test"]]
    result.metrics = cross_val_report(tests).mean if tests else {}
    return result


def repeated_runs(results: Sequence[FinetuneResult]) -> EvalReport:
    """One :class:`EvalReport` across seeded repetitions of :func:`finetune`."""
    return cross_val_report([r.metrics for r in results],
                            per_fold=[[rot["test"] for rot in r.rotations] for r in results])
