"""Pre-training and fine-tuning loops, schedules, optimizer and benchmarks."""

from .artifacts import RunDir, default_output_root, metrics_csv, stable_manifest
from .audit import IdAudit
from .benchmark import benchmark
from .config import FinetuneConfig, OptimConfig, PretrainConfig, from_dict, merge, pretrain_defaults, to_dict
from .finetune import DetectorRun, FinetuneResult, finetune, repeated_runs, train_detector
from .init import InitMode, InitReport, apply_init, map_external_name
from .optim import AdamState, AdamW, adamw_step, decay_groups
from .pretrain import PretrainResult, build_mim_model, pretrain
from .schedule import cosine_warmup_lr

__all__ = [
    "RunDir", "default_output_root", "metrics_csv", "stable_manifest", "IdAudit", "benchmark",
    "FinetuneConfig", "OptimConfig", "PretrainConfig", "from_dict", "merge", "pretrain_defaults",
    "to_dict", "DetectorRun", "FinetuneResult", "finetune", "repeated_runs", "train_detector",
    "InitMode", "InitReport", "apply_init", "map_external_name", "AdamState", "AdamW", "adamw_step",
    "decay_groups", "PretrainResult", "build_mim_model", "pretrain", "cosine_warmup_lr",
]
