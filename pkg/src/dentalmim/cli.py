"""Pipeline command line: datasets, pre-training, fine-tuning, evaluation and figures.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 data validation error, 4 an evaluation gate was not met.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .dataset import (AnnotationRecord, DatasetIndex, FoldSplit, dataset_stats, generate_fixture, load_annotations, load_image,
                      make_folds, write_fixture)
from .dataset.masks import decode
from .detect import Detection
from .errors import ConfigError, DentalMimError, ParseError, ValidationError
from .eval import ablation_csv, ablation_report, evaluate, init_table, init_table_csv, render_init_table
from .fdi import index_from_coco_id
from .mim import emit_reconstruction
from .runconfig import RunConfig, read_config_file, resolve, snapshot
from .train import IdAudit, RunDir, benchmark, default_output_root, finetune, pretrain, repeated_runs
from .train.init import InitMode
from .train.reconstruct import fresh_model, load_mim_model, reconstruct

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, EXIT_GATE = 0, 1, 2, 3, 4

log = logging.getLogger("dentalmim")


class GateFailed(DentalMimError):
    pass


def _image_size(text: str) -> list[int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return [w, h]


def _ratios(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated percentages, got {text!r}")
    return [v / 100.0 if v > 1 else v for v in vals]


# ---------------------------------------------------------------- configuration

def load_run_config(args, flag_map: dict) -> tuple[RunConfig, dict]:
    file_doc = read_config_file(args.config) if getattr(args, "config", None) else {}
    flags = {key: getattr(args, dest) for dest, key in flag_map.items() if hasattr(args, dest)}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        flags["output_dir"] = str(args.out)
    return resolve(file_doc, flags)


def run_dir_for(cfg: RunConfig, command: str) -> Path:
    return Path(cfg.output_dir) if cfg.output_dir else default_output_root() / command


def load_data(cfg: RunConfig) -> tuple[DatasetIndex, FoldSplit]:
    if not cfg.data.annotations:
        raise ConfigError("no dataset given (use --data or data.annotations in the config)")
    index = load_annotations(cfg.data.annotations)
    split = FoldSplit.load(cfg.data.split) if cfg.data.split else make_folds(index, cfg.data.split_seed)
    known = set(index.ids)
    if not set(split.test_ids) | set(split.development_ids) <= known:
        raise ValidationError("split references image ids absent from the dataset")
    return index, split


def begin(run: RunDir, command: str, cfg: RunConfig, sources: dict) -> None:
    run.write_json("resolved_config.json", {"config": snapshot(cfg), "sources": sources})


# ---------------------------------------------------------------- dataset

def cmd_dataset(args) -> int:
    if args.action == "fixture":
        index = generate_fixture(args.n, image_size=(args.width, args.height), seed=args.seed,
                                 min_teeth=args.min_teeth, max_teeth=args.max_teeth)
        path = write_fixture(index, args.out)
        print(f"wrote {len(index)} images and {path}")
        return EXIT_OK
    index = load_annotations(args.annotations, check_tightness=not args.no_tightness)
    if args.action == "validate":
        n = sum(len(r.instances) for r in index.records)
        print(f"ok: {len(index)} records, {n} instances")
    elif args.action == "stats":
        doc = dataset_stats(index).to_json()
        text = json.dumps(doc, sort_keys=True, indent=2)
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text)
    elif args.action == "split":
        split = make_folds(index, args.seed)
        if args.out:
            split.save(args.out)
        print("/".join(str(s) for s in split.sizes()))
    return EXIT_OK


# ---------------------------------------------------------------- pretrain

PRETRAIN_FLAGS = {"data": "data.annotations", "split": "data.split", "method": "pretrain.method",
                  "backbone": "pretrain.backbone", "image_size": "pretrain.image_size",
                  "epochs": "pretrain.optim.total_epochs", "mask_ratio": "pretrain.mask_ratio",
                  "lr": "pretrain.optim.base_lr", "batch_size": "pretrain.optim.batch_size"}


def run_pretrain(cfg: RunConfig, index, split, run: RunDir, method: Optional[str] = None,
                 audit: Optional[IdAudit] = None, tag: str = "") -> tuple[Path, list]:
    pcfg = cfg.pretrain if method is None else replace(cfg.pretrain, method=method)
    ckpt = run.file(f"pretrain_{pcfg.method}{tag}.safetensors")
    res = pretrain(index, split.development_ids, pcfg, cfg.seed, ckpt, audit, log.info)
    rows = [{"epoch": e + 1, "split": f"pretrain_{pcfg.method}{tag}", "loss": v}
            for e, v in enumerate(res.epoch_losses)]
    return ckpt, rows


def cmd_pretrain(args) -> int:
    cfg, sources = load_run_config(args, PRETRAIN_FLAGS)
    index, split = load_data(cfg)
    t0 = time.perf_counter()
    with RunDir(run_dir_for(cfg, "pretrain")) as run:
        begin(run, "pretrain", cfg, sources)
        split.save(run.file("split.json"))
        audit = IdAudit(split.test_ids)
        ckpt, rows = run_pretrain(cfg, index, split, run, audit=audit)
        run.write_metrics(rows)
        run.write_json("audit.json", audit.report())
        run.write_manifest("pretrain", snapshot(cfg), cfg.seed, time.perf_counter() - t0,
                           sources=sources, checkpoint=ckpt.name)
    print(f"checkpoint {ckpt}")
    return EXIT_OK


# ---------------------------------------------------------------- finetune

FINETUNE_FLAGS = {"data": "data.annotations", "split": "data.split", "backbone": "finetune.backbone",
                  "detector": "finetune.detector", "image_size": "finetune.image_size",
                  "epochs": "finetune.optim.total_epochs", "lr": "finetune.optim.base_lr",
                  "max_steps": "finetune.max_steps", "rotations": "finetune.rotations",
                  "repeats": "repeats", "pre_epochs": "pretrain.optim.total_epochs"}


def parse_inits(text: str, supervised: Optional[str] = None) -> list[InitMode]:
    items = ["random", "supervised", "simmim", "ummae"] if text == "all" else text.split(",")
    items = [t.strip() for t in items if t.strip()]
    if supervised:
        items = [f"supervised:{supervised}" if t == "supervised" else t for t in items]
    return [InitMode.parse(t) for t in items]


def cmd_finetune(args) -> int:
    cfg, sources = load_run_config(args, FINETUNE_FLAGS)
    modes = parse_inits(args.init, args.supervised)
    index, split = load_data(cfg)
    t0 = time.perf_counter()
    with RunDir(run_dir_for(cfg, "finetune")) as run:
        begin(run, "finetune", cfg, sources)
        split.save(run.file("split.json"))
        audit = IdAudit(split.test_ids)
        rows, self_ckpts = [], {}
        for m in modes:
            if m.path == "self" and m.kind not in self_ckpts:
                ckpt, prow = run_pretrain(cfg, index, split, run, m.kind, audit)
                self_ckpts[m.kind] = str(ckpt)
                rows += prow
        reports, details = {}, {}
        for m in modes:
            results = []
            for rep in range(cfg.repeats):
                res = finetune(index, split, m, cfg.finetune, cfg.seed + rep, self_ckpts, audit,
                               run.path / "checkpoints", log.info)
                results.append(res)
                rows += [{**r, "split": f"{m.kind}_run{rep}_{r['split']}"} for r in res.rows]
            reports[m.kind] = repeated_runs(results)
            details[m.kind] = {"report": reports[m.kind].to_json(),
                               "init": [r.init_reports for r in results]}
        table = init_table(reports)
        run.write_metrics(rows)
        run.write_json("report.json", {"table": table, "details": details})
        run.file("report.csv").write_text(init_table_csv(table))
        run.file("report.md").write_text(render_init_table(table))
        run.write_json("audit.json", audit.report())
        run.write_manifest("finetune", snapshot(cfg), cfg.seed, time.perf_counter() - t0, sources=sources,
                           inits=[str(m) for m in modes])
    print(render_init_table(table), end="")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def read_results(path, index: DatasetIndex) -> dict:
    try:
        rows = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(rows, list):
        raise ParseError(f"{path}: results must be a JSON list")
    dets: dict = {i: [] for i in index.ids}
    for k, r in enumerate(rows):
        try:
            x, y, w, h = r["bbox"]
            mask = decode(r["segmentation"]).astype(bool) if "segmentation" in r else None
            det = Detection((x, y, x + w, y + h), index_from_coco_id(int(r["category_id"])), float(r["score"]), mask)
            dets[r["image_id"]].append(det)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: result {k} is malformed ({exc})") from exc
    return dets


def cmd_eval(args) -> int:
    cfg, sources = load_run_config(args, {"min_ap_box": "eval.min_ap_box", "min_ap_mask": "eval.min_ap_mask"})
    index = load_annotations(args.gt)
    dets = read_results(args.results, index)
    with_masks = any(d.mask is not None for ds in dets.values() for d in ds) or not any(dets.values())
    metrics = evaluate(dets, index, with_masks)
    summary = metrics.summary()
    doc = {"summary": summary, "per_class_box": metrics.box.class_ap(),
           "per_class_mask": None if metrics.mask is None else metrics.mask.class_ap()}
    with RunDir(run_dir_for(cfg, "eval")) as run:
        begin(run, "eval", cfg, sources)
        run.write_json("eval.json", doc)
    print(json.dumps(summary, sort_keys=True))
    failures = []
    for key, gate in (("AP_box", cfg.eval.min_ap_box), ("AP_mask", cfg.eval.min_ap_mask)):
        if gate is not None and (summary[key] is None or summary[key] < gate):
            failures.append(f"{key}={summary[key]} < {gate}")
    if failures:
        raise GateFailed("; ".join(failures))
    return EXIT_OK


# ---------------------------------------------------------------- ablate

def cmd_ablate(args) -> int:
    flags = dict(FINETUNE_FLAGS)
    flags["pre_backbone"] = "pretrain.backbone"
    cfg, sources = load_run_config(args, flags)
    if len(args.ratios) < 2:
        raise ConfigError("an ablation needs at least two mask ratios")
    index, split = load_data(cfg)
    t0 = time.perf_counter()
    with RunDir(run_dir_for(cfg, "ablate")) as run:
        begin(run, "ablate", cfg, sources)
        audit = IdAudit(split.test_ids)
        results, rows = {}, []
        base = replace(cfg, pretrain=replace(cfg.pretrain, method="simmim"))
        for ratio in args.ratios:
            rcfg = replace(base, pretrain=replace(base.pretrain, mask_ratio=ratio))
            tag = f"_r{int(round(100 * ratio))}"
            ckpt, prow = run_pretrain(rcfg, index, split, run, audit=audit, tag=tag)
            rows += prow
            runs = [finetune(index, split, InitMode("simmim", str(ckpt)), cfg.finetune, cfg.seed + rep,
                             audit=audit, log=log.info) for rep in range(cfg.repeats)]
            results[(ratio, rcfg.pretrain.epochs)] = repeated_runs(runs)
        table = ablation_report(results)
        run.write_metrics(rows)
        run.file("ablation.csv").write_text(ablation_csv(table))
        run.write_json("ablation.json", {"rows": table})
        run.write_json("audit.json", audit.report())
        run.write_manifest("ablate", snapshot(cfg), cfg.seed, time.perf_counter() - t0, sources=sources,
                           ratios=args.ratios)
    print(ablation_csv(table), end="")
    return EXIT_OK


# ---------------------------------------------------------------- benchmark / reconstruct

def cmd_benchmark(args) -> int:
    cfg, sources = load_run_config(args, {"backbone": "pretrain.backbone", "image_size": "pretrain.image_size",
                                          "steps": "benchmark.steps", "batch_size": "benchmark.batch_size"})
    report = benchmark(cfg.pretrain, cfg.benchmark.steps, cfg.benchmark.batch_size, cfg.seed)
    with RunDir(run_dir_for(cfg, "benchmark")) as run:
        begin(run, "benchmark", cfg, sources)
        run.write_json("benchmark.json", report)
    print(json.dumps({"methods": {k: {"wall_time_s": v["wall_time_s"], "peak_memory_bytes": v["peak_memory_bytes"],
                                      "encoder_tokens": v["encoder_tokens"]} for k, v in report["methods"].items()},
                      "ratio": report["ratio"]}, sort_keys=True))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg, sources = load_run_config(args, {"method": "pretrain.method", "backbone": "pretrain.backbone",
                                          "mask_ratio": "pretrain.mask_ratio"})
    if args.checkpoint:
        model, pcfg = load_mim_model(args.checkpoint)
    else:
        pcfg = cfg.pretrain
        model = fresh_model(pcfg, cfg.seed)
    image = load_image(args.image)
    if image.ndim == 3:
        image = image.mean(axis=2)
    rec = AnnotationRecord(image_id=Path(args.image).stem, width=image.shape[1], height=image.shape[0], image=image)
    original, masked, recon = reconstruct(model, pcfg, rec, cfg.seed)
    with RunDir(run_dir_for(cfg, "reconstruct")) as run:
        begin(run, "reconstruct", cfg, sources)
        out = Path(args.output) if args.output else run.file(f"reconstruction_{pcfg.method}.png")
        w, h = emit_reconstruction(original, masked, recon, out)
    print(f"wrote {out} ({w}x{h})")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dentalmim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run config; flags override its values")
    common.add_argument("--seed", type=int, help="global seed (default 0)")
    common.add_argument("--out", help="run directory (default $DENTALMIM_OUTPUT_ROOT/<command>)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="COCO annotation file; images resolve next to it")
    data.add_argument("--split", help="saved fold split JSON (default: made from the data seed)")

    d = sub.add_parser("dataset", help="validate, summarize, split or synthesize datasets")
    dsub = d.add_subparsers(dest="action", required=True)
    for name, text in (("validate", "check every record against the annotation invariants"),
                       ("stats", "per-category instance counts"), ("split", "five-fold split sizes")):
        a = dsub.add_parser(name, help=text)
        a.add_argument("annotations", help="COCO annotation JSON")
        a.add_argument("--no-tightness", action="store_true", help="skip the bbox-vs-mask tightness check")
        if name == "split":
            a.add_argument("--seed", type=int, default=0, help="shuffle seed")
        if name in ("split", "stats"):
            a.add_argument("--out", help="write the result to this file")
    f = dsub.add_parser("fixture", help="write a synthetic panoramic dataset")
    f.add_argument("--n", type=int, required=True, help="number of images")
    f.add_argument("--seed", type=int, default=0, help="generator seed")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--width", type=int, default=256, help="image width in pixels")
    f.add_argument("--height", type=int, default=192, help="image height in pixels")
    f.add_argument("--min-teeth", type=int, default=4, help="fewest teeth per image")
    f.add_argument("--max-teeth", type=int, default=32, help="most teeth per image")
    d.set_defaults(func=cmd_dataset)

    a = sub.add_parser("pretrain", parents=[common, data], help="masked-image-modeling pre-training")
    a.add_argument("--method", choices=("simmim", "ummae"), help="pre-training method")
    a.add_argument("--backbone", help="backbone preset (swin_b, swin_t, toy, tiny)")
    a.add_argument("--image-size", type=_image_size, help="WIDTHxHEIGHT training size")
    a.add_argument("--epochs", type=int, help="pre-training epochs")
    a.add_argument("--mask-ratio", type=float, help="SimMIM mask ratio in [0, 1]")
    a.add_argument("--lr", type=float, help="base learning rate")
    a.add_argument("--batch-size", type=int, help="micro-batch size")
    a.set_defaults(func=cmd_pretrain)

    def finetune_flags(q):
        q.add_argument("--backbone", help="backbone preset")
        q.add_argument("--detector", help="detector preset (default, toy)")
        q.add_argument("--image-size", type=_image_size, help="WIDTHxHEIGHT training size")
        q.add_argument("--epochs", type=int, help="fine-tuning epochs")
        q.add_argument("--lr", type=float, help="base learning rate")
        q.add_argument("--max-steps", type=int, help="cap on optimizer steps per fold")
        q.add_argument("--rotations", type=int, help="validation-fold rotations (1-4)")
        q.add_argument("--repeats", type=int, help="seeded repetitions of the cross-validation")
        q.add_argument("--pre-epochs", type=int, help="epochs of any pre-training run by this command")

    a = sub.add_parser("finetune", parents=[common, data], help="fine-tune the detector")
    a.add_argument("--init", required=True,
                   help="comma list of random, supervised:PATH, simmim[:PATH], ummae[:PATH]; "
                        "simmim/ummae without a path pre-train on the development folds first; "
                        "'all' runs the four modes")
    a.add_argument("--supervised", help="external checkpoint for the supervised mode")
    finetune_flags(a)
    a.set_defaults(func=cmd_finetune)

    a = sub.add_parser("eval", parents=[common], help="COCO-style AP of a results file")
    a.add_argument("--gt", required=True, help="COCO ground-truth annotations")
    a.add_argument("--results", required=True, help="COCO results JSON")
    a.add_argument("--min-ap-box", type=float, help="fail (exit 4) below this box AP")
    a.add_argument("--min-ap-mask", type=float, help="fail (exit 4) below this mask AP")
    a.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", parents=[common, data], help="SimMIM mask-ratio sweep")
    a.add_argument("--ratios", type=_ratios, required=True, help="comma list, e.g. 10,20,30,40,50,60")
    a.add_argument("--pre-backbone", help="backbone preset for pre-training")
    finetune_flags(a)
    a.set_defaults(func=cmd_ablate)

    a = sub.add_parser("benchmark", parents=[common], help="time and memory of both pre-training methods")
    a.add_argument("--backbone", help="backbone preset")
    a.add_argument("--image-size", type=_image_size, help="WIDTHxHEIGHT workload size")
    a.add_argument("--steps", type=int, help="timed steps per method")
    a.add_argument("--batch-size", type=int, help="images per step")
    a.set_defaults(func=cmd_benchmark)

    a = sub.add_parser("reconstruct", parents=[common], help="three-panel masked reconstruction figure")
    a.add_argument("--method", choices=("simmim", "ummae"), help="pre-training method")
    a.add_argument("--image", required=True, help="input image file")
    a.add_argument("--checkpoint", help="pre-training checkpoint (default: untrained model)")
    a.add_argument("--backbone", help="backbone preset when no checkpoint is given")
    a.add_argument("--mask-ratio", type=float, help="SimMIM mask ratio in [0, 1]")
    a.add_argument("--output", help="PNG path (default: inside the run directory)")
    a.set_defaults(func=cmd_reconstruct)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, GateFailed):
        return EXIT_GATE
    if isinstance(exc, (ConfigError, ParseError, FileNotFoundError)):
        return EXIT_USAGE
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (DentalMimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except Exception as exc:  # anything unforeseen is a runtime failure, not a usage error
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
