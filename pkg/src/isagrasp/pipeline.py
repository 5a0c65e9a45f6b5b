"""End-to-end orchestration: demos, retargeting, augmentation, refinement,
feature building, dataset emission, and evaluation.

All randomness fans out from the master seed through counter-based seed
derivation keyed on (stage, item indices), so stage outputs are bitwise
reproducible and independent of evaluation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import BaselineConfig, heuristic_grasp, random_grasp
from .config import PipelineConfig
from .dataset import DatasetRecord, InstanceRef
from .demos import DemoSpec, InfeasibleStyle, synth_demo
from .hand import HandDescription, default_description, load_description
from .policy import PolicyNet, build_features, evaluate
from .refine import refine
from .retarget import retarget
from .shapes import sample_instance
from .transfer import Grasp, build_context, transfer_grasp

log = logging.getLogger("isagrasp.pipeline")

# stage tags for counter-based seed derivation
_STAGE_DEMO = 1
_STAGE_SOURCE_REFINE = 3
_STAGE_AUGMENT = 4
_STAGE_TRANSFER_REFINE = 5
_STAGE_FEATURES = 6
_STAGE_EVAL = 7
_STAGE_BASELINE = 8


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed for a (stage, item...) counter path."""
    return int(np.random.default_rng(
        np.random.SeedSequence((master,) + tuple(path))).integers(0, 2**63 - 1))


def hand_for(config: PipelineConfig) -> HandDescription:
    if config.hand_file:
        return load_description(config.hand_file)
    return default_description()


def closing_fingers(desc: HandDescription, fingers, bias: float):
    """Deepen flexion targets so finger closing presses into the surface."""
    f = np.array(fingers, dtype=float)
    f[1::4] += bias
    f[2::4] += bias
    f[3::4] += bias
    return desc.clamp_joints(f)


@dataclass
class StageCounts:
    demos_in: int = 0
    demos_skipped: int = 0
    retargeted: int = 0
    sources_refined: int = 0
    transfers_attempted: int = 0
    transfers_refined: int = 0
    records_written: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class GenerationResult:
    records: tuple
    counts: StageCounts
    source_rate: Optional[float]
    transfer_rate: Optional[float]


def synth_demo_set(config: PipelineConfig):
    """Demonstrations for every template (styles cycled), with seeds."""
    demos = []
    skipped = 0
    for ti, template in enumerate(config.templates):
        for j in range(config.demos.per_template):
            style = config.demos.styles[j % len(config.demos.styles)]
            seed = derive_seed(config.master_seed, _STAGE_DEMO, ti, j)
            spec = DemoSpec(template, style, config.demos.jitter)
            try:
                demo = synth_demo(spec, seed)
            except InfeasibleStyle as exc:
                log.info("skipping %s on template %d: %s", style, ti, exc)
                skipped += 1
                continue
            demos.append({"demo_id": f"t{ti}-{style}-{j}", "template_index": ti,
                          "template": template, "demo": demo, "seed": seed})
    return demos, skipped


def generate_dataset(config: PipelineConfig,
                     desc: Optional[HandDescription] = None) -> GenerationResult:
    """Run the full augmentation pipeline and return dataset records.

    demos -> retarget -> refine sources -> sample deformed instances ->
    transfer grasps -> refine transfers -> build features -> records.
    """
    desc = desc or hand_for(config)
    counts = StageCounts()
    records: list[DatasetRecord] = []
    record_id = 0

    demo_entries, counts.demos_skipped = synth_demo_set(config)
    counts.demos_in = len(demo_entries)
    log.info("stage demos: %d generated, %d skipped",
             counts.demos_in, counts.demos_skipped)

    refined_sources = []
    for entry in demo_entries:
        ti = entry["template_index"]
        template = entry["template"]
        res = retarget(desc, entry["demo"], config.retarget_weights,
                       config.retarget_opts)
        counts.retargeted += 1
        source_inst = sample_instance(template, seed=derive_seed(
            config.master_seed, _STAGE_SOURCE_REFINE, ti), sigma=0.0,
            num_samples=config.shape_field.surface_samples)
        candidate = Grasp(res.pose.base,
                          closing_fingers(desc, res.pose.fingers, config.close_bias))
        refine_seed = derive_seed(config.master_seed, _STAGE_SOURCE_REFINE,
                                  counts.retargeted)
        outcome = refine(desc, source_inst, candidate,
                         config.refine.perturbation, config.refine.draws,
                         config.refine.randomizations, seed=refine_seed,
                         mass_range=config.refine.mass_range,
                         friction_range=config.refine.friction_range,
                         oracle=config.oracle)
        if outcome.grasp is None:
            log.info("source %s: refinement failed (objective %.2e)",
                     entry["demo_id"], res.objective)
            continue
        counts.sources_refined += 1
        refined_sources.append((entry, source_inst, outcome, refine_seed))
        records.append(_make_record(
            record_id, config, source_inst, 0.0, outcome, refine_seed,
            entry["demo_id"], "source"))
        record_id += 1
    counts.records_written = len(records)
    source_rate = (counts.sources_refined / counts.retargeted
                   if counts.retargeted else None)
    log.info("stage sources: %d/%d refined", counts.sources_refined,
             counts.retargeted)

    for src_index, (entry, source_inst, src_outcome, _) in enumerate(refined_sources):
        ti = entry["template_index"]
        template = entry["template"]
        ctx = build_context(source_inst, src_outcome.grasp,
                            n=config.augment.reference_points)
        for a in range(config.augment.per_source):
            target_seed = derive_seed(config.master_seed, _STAGE_AUGMENT,
                                      src_index, a)
            target = sample_instance(template, seed=target_seed,
                                     sigma=config.shape_field.latent_sigma,
                                     num_samples=config.shape_field.surface_samples)
            transferred = transfer_grasp(ctx, source_inst, target, src_outcome.grasp)
            counts.transfers_attempted += 1
            refine_seed = derive_seed(config.master_seed, _STAGE_TRANSFER_REFINE,
                                      src_index, a)
            outcome = refine(desc, target, transferred,
                             config.refine.perturbation, config.refine.draws,
                             config.refine.randomizations, seed=refine_seed,
                             mass_range=config.refine.mass_range,
                             friction_range=config.refine.friction_range,
                             oracle=config.oracle)
            if outcome.grasp is None:
                continue
            counts.transfers_refined += 1
            records.append(_make_record(
                record_id, config, target, config.shape_field.latent_sigma,
                outcome, refine_seed, entry["demo_id"], "transfer"))
            record_id += 1

    counts.records_written = len(records)
    transfer_rate = (counts.transfers_refined / counts.transfers_attempted
                     if counts.transfers_attempted else None)
    log.info("stage transfers: %d/%d refined; %d records total",
             counts.transfers_refined, counts.transfers_attempted,
             counts.records_written)
    return GenerationResult(records=tuple(records), counts=counts,
                            source_rate=source_rate, transfer_rate=transfer_rate)


def _make_record(record_id: int, config: PipelineConfig, inst, sigma: float,
                 outcome, refine_seed: int, demo_id: str, stage: str) -> DatasetRecord:
    feats = build_features(inst, seed=derive_seed(
        config.master_seed, _STAGE_FEATURES, record_id))
    return DatasetRecord(
        record_id=record_id,
        instance=InstanceRef.of(inst, sigma),
        features=feats,
        label=outcome.grasp,
        demo_id=demo_id,
        stage=stage,
        refine_seed=refine_seed,
        accepted_trial=outcome.accepted_trial,
        randomizations=config.refine.randomizations,
    )


def held_out_instances(config: PipelineConfig):
    """Fresh-latent instances disjoint from the training draws."""
    out = []
    for ti, template in enumerate(config.templates):
        for k in range(config.eval.held_out_per_template):
            seed = derive_seed(config.master_seed, _STAGE_EVAL, ti, k)
            out.append(sample_instance(template, seed=seed,
                                       sigma=config.shape_field.latent_sigma,
                                       num_samples=config.shape_field.surface_samples))
    return out


@dataclass(frozen=True)
class EvalReport:
    rows: dict               # method -> success rate
    cases: dict              # method -> per-case list
    num_instances: int
    grid: tuple

    def as_dict(self) -> dict:
        return {"rows": self.rows, "num_instances": self.num_instances,
                "grid": [list(g) for g in self.grid], "cases": self.cases}


def run_eval(config: PipelineConfig, net: PolicyNet,
             desc: Optional[HandDescription] = None) -> EvalReport:
    """Evaluate the trained policy against the Random and Heuristic baselines
    on held-out deformed instances over the mass/friction grid."""
    desc = desc or hand_for(config)
    instances = held_out_instances(config)
    if not instances:
        raise ValueError("held-out instance set is empty")
    seed = derive_seed(config.master_seed, _STAGE_EVAL, 0xE0)
    rows = {}
    cases = {}

    rate, case_list = evaluate(desc, net, instances, grid=config.eval.grid,
                               seed=seed)
    rows["policy"] = rate
    cases["policy"] = case_list

    bl_cfg = BaselineConfig()
    rate, case_list = evaluate(
        desc, net, instances, grid=config.eval.grid, seed=seed,
        grasp_override=lambda inst, i: random_grasp(
            inst, bl_cfg, seed=derive_seed(config.master_seed, _STAGE_BASELINE, i)))
    rows["random"] = rate
    cases["random"] = case_list

    rate, case_list = evaluate(
        desc, net, instances, grid=config.eval.grid, seed=seed,
        grasp_override=lambda inst, i: heuristic_grasp(inst, bl_cfg))
    rows["heuristic"] = rate
    cases["heuristic"] = case_list

    return EvalReport(rows=rows, cases=cases, num_instances=len(instances),
                      grid=config.eval.grid)
