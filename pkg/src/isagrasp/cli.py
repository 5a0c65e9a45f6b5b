"""Command-line pipeline: demo-synth | retarget | augment | refine | train |
eval | report.

Every subcommand takes --config (YAML, defaults used when omitted) and
--seed (overrides the config's master seed).  Stages communicate through
line-delimited JSON files; candidate rows carry their own seed-derivation
path so a staged run reproduces the single-process pipeline bitwise.

Exit codes: 0 success, 2 configuration error, 3 pipeline-stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .config import ConfigError, PipelineConfig, default_config, load_config
from .dataset import DatasetRecord, InstanceRef, read_records, write_records
from .geometry import Frame3, RigidTransform, UnitQuaternion
from .pipeline import (
    _STAGE_SOURCE_REFINE,
    _STAGE_TRANSFER_REFINE,
    EvalReport,
    closing_fingers,
    derive_seed,
    generate_dataset,
    hand_for,
    run_eval,
    synth_demo_set,
)
from .policy import TrainConfig, load_checkpoint, save_checkpoint, train
from .refine import refine
from .retarget import DemoRecord, retarget
from .shapes import TemplateShape, sample_instance
from .transfer import Grasp, build_context, transfer_grasp

log = logging.getLogger("isagrasp")


def _template_doc(t: TemplateShape) -> dict:
    return {"kind": t.kind, "dims": t.dims.tolist()}


def _template_from(doc: dict) -> TemplateShape:
    return TemplateShape(doc["kind"], np.array(doc["dims"]))


def _grasp_doc(g: Grasp) -> dict:
    return {"translation": g.pregrasp.translation.tolist(),
            "rotation_wxyz": list(g.pregrasp.rotation.as_array()),
            "fingers": g.fingers.tolist()}


def _grasp_from(doc: dict) -> Grasp:
    return Grasp(RigidTransform(np.array(doc["translation"]),
                                UnitQuaternion(*doc["rotation_wxyz"])),
                 np.array(doc["fingers"]))


def _write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def _read_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _load_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    return config


def cmd_demo_synth(args) -> int:
    config = _load_config(args)
    demos, skipped = synth_demo_set(config)
    rows = []
    for entry in demos:
        demo = entry["demo"]
        rows.append({
            "demo_id": entry["demo_id"],
            "template_index": entry["template_index"],
            "template": _template_doc(entry["template"]),
            "seed": entry["seed"],
            "fingertips": demo.human_fingertips.tolist(),
            "palm_origin": demo.human_palm.origin.tolist(),
            "palm_axes": demo.human_palm.axes.tolist(),
            "object_center": demo.object_center.tolist(),
        })
    _write_jsonl(args.out, rows)
    log.info("wrote %d demos (%d skipped) to %s", len(rows), skipped, args.out)
    return 0


def cmd_retarget(args) -> int:
    config = _load_config(args)
    desc = hand_for(config)
    rows = []
    for i, doc in enumerate(_read_jsonl(args.demos)):
        demo = DemoRecord(
            human_fingertips=np.array(doc["fingertips"]),
            human_palm=Frame3(np.array(doc["palm_origin"]), np.array(doc["palm_axes"])),
            object_pose=RigidTransform.identity(),
            object_center=np.array(doc["object_center"]),
        )
        res = retarget(desc, demo, config.retarget_weights, config.retarget_opts)
        template = _template_from(doc["template"])
        ti = int(doc["template_index"])
        source_ref = InstanceRef(
            kind=template.kind, dims=tuple(template.dims.tolist()),
            seed=derive_seed(config.master_seed, _STAGE_SOURCE_REFINE, ti),
            sigma=0.0, num_samples=config.shape_field.surface_samples)
        rows.append({
            "demo_id": doc["demo_id"],
            "stage": "source",
            "instance": dataclasses.asdict(source_ref),
            "grasp": _grasp_doc(Grasp(res.pose.base, closing_fingers(
                desc, res.pose.fingers, config.close_bias))),
            "objective": res.objective,
            "converged": res.converged,
            "refine_path": [_STAGE_SOURCE_REFINE, i + 1],
        })
    _write_jsonl(args.out, rows)
    log.info("retargeted %d demos to %s", len(rows), args.out)
    return 0


def cmd_augment(args) -> int:
    config = _load_config(args)
    sources = read_records(args.sources)
    sources = [r for r in sources if r.stage == "source"]
    rows = []
    for src_index, rec in enumerate(sources):
        source_inst = rec.instance.build()
        ctx = build_context(source_inst, rec.label,
                            n=config.augment.reference_points)
        template = rec.instance.template()
        for a in range(config.augment.per_source):
            target_seed = derive_seed(config.master_seed, 4, src_index, a)
            target_ref = InstanceRef(
                kind=template.kind, dims=tuple(template.dims.tolist()),
                seed=target_seed, sigma=config.shape_field.latent_sigma,
                num_samples=config.shape_field.surface_samples)
            target = target_ref.build()
            transferred = transfer_grasp(ctx, source_inst, target, rec.label)
            rows.append({
                "demo_id": rec.demo_id,
                "stage": "transfer",
                "instance": dataclasses.asdict(target_ref),
                "grasp": _grasp_doc(transferred),
                "refine_path": [_STAGE_TRANSFER_REFINE, src_index, a],
            })
    _write_jsonl(args.out, rows)
    log.info("transferred %d candidate grasps to %s", len(rows), args.out)
    return 0


def cmd_refine(args) -> int:
    config = _load_config(args)
    desc = hand_for(config)
    candidates = _read_jsonl(args.candidates)
    try:
        existing = read_records(args.dataset)
    except FileNotFoundError:
        existing = []
    record_id = len(existing)
    accepted = []
    attempted = 0
    from .pipeline import _make_record
    for doc in candidates:
        attempted += 1
        ref = InstanceRef(**{**doc["instance"],
                             "dims": tuple(doc["instance"]["dims"])})
        inst = ref.build()
        seed = derive_seed(config.master_seed, *doc["refine_path"])
        outcome = refine(desc, inst, _grasp_from(doc["grasp"]),
                         config.refine.perturbation, config.refine.draws,
                         config.refine.randomizations, seed=seed,
                         mass_range=config.refine.mass_range,
                         friction_range=config.refine.friction_range)
        if outcome.grasp is None:
            continue
        accepted.append(_make_record(record_id, config, inst, ref.sigma,
                                     outcome, seed, doc["demo_id"], doc["stage"]))
        record_id += 1
    write_records(args.dataset, accepted, append=bool(existing))
    rate = len(accepted) / attempted if attempted else None
    payload = {"attempted": attempted, "refined": len(accepted),
               "rate": rate, "dataset": args.dataset}
    if args.report:
        with open(args.report, "w") as fh:
            fh.write("refinement report\n")
            fh.write(f"attempted: {attempted}\n")
            fh.write(f"refined:   {len(accepted)}\n")
            fh.write(f"rate:      {'n/a' if rate is None else f'{rate:.4f}'}\n")
    print(json.dumps(payload))
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    records = read_records(args.dataset)
    if not records:
        raise RuntimeError(f"dataset {args.dataset} holds no records")
    dataset = [(r.features, r.label) for r in records]
    result = train(dataset, TrainConfig(
        batch=config.policy.batch,
        learning_rate=config.policy.learning_rate,
        epochs=config.policy.epochs,
        seed=config.master_seed,
    ))
    save_checkpoint(result.net, args.out)
    log.info("trained %d epochs on %d records; final loss %.4f; saved %s",
             config.policy.epochs, len(records), result.loss_curve[-1], args.out)
    print(json.dumps({"records": len(records),
                      "final_loss": result.loss_curve[-1],
                      "checkpoint": args.out}))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    net = load_checkpoint(args.model)
    report = run_eval(config, net)
    with open(args.out, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report.rows))
    return 0


def cmd_report(args) -> int:
    from .report import write_eval_report, write_refinement_report
    with open(args.eval) as fh:
        doc = json.load(fh)
    report = EvalReport(rows=doc["rows"], cases=doc["cases"],
                        num_instances=doc["num_instances"],
                        grid=tuple(tuple(g) for g in doc["grid"]))
    paths = write_eval_report(report, args.out_dir)
    if args.refinement:
        rates = {}
        for spec in args.refinement:
            name, path = spec.split("=", 1) if "=" in spec else ("refinement", spec)
            with open(path) as fh:
                payload = json.load(fh)
            rates[name] = payload.get("rate")
        paths.update(write_refinement_report(rates, args.out_dir))
    print(json.dumps(paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isagrasp",
        description="grasp dataset augmentation, verification, and policy training")
    parser.add_argument("--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline YAML (defaults when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")

    p = sub.add_parser("demo-synth", help="generate synthetic demonstrations")
    common(p)
    p.add_argument("--out", required=True, help="demos JSONL output")
    p.set_defaults(func=cmd_demo_synth)

    p = sub.add_parser("retarget", help="retarget demos to the robot hand")
    common(p)
    p.add_argument("--demos", required=True, help="demos JSONL input")
    p.add_argument("--out", required=True, help="candidate grasps JSONL output")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("augment", help="deform instances and transfer grasps")
    common(p)
    p.add_argument("--sources", required=True,
                   help="dataset JSONL holding refined source records")
    p.add_argument("--out", required=True, help="transfer candidates JSONL output")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("refine", help="rejection-sample candidates into the dataset")
    common(p)
    p.add_argument("--candidates", required=True, help="candidate grasps JSONL")
    p.add_argument("--dataset", required=True,
                   help="dataset JSONL (appended to when it exists)")
    p.add_argument("--report", help="write a plain-text refinement report here")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train", help="train the grasping policy")
    common(p)
    p.add_argument("--dataset", required=True, help="dataset JSONL input")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against baselines")
    common(p)
    p.add_argument("--model", required=True, help="checkpoint input path")
    p.add_argument("--out", required=True, help="evaluation report JSON output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render tables and figures from reports")
    common(p)
    p.add_argument("--eval", required=True, help="evaluation report JSON input")
    p.add_argument("--refinement", nargs="*", default=None,
                   help="optional name=path refinement JSON payloads")
    p.add_argument("--out-dir", required=True, help="directory for CSVs and PNGs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config_probe = args.config
        if config_probe:
            load_config(config_probe)  # fail fast with exit code 2
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pipeline-stage failure
        log.exception("stage failed")
        print(f"pipeline stage failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
