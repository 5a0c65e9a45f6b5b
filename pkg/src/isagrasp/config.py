"""Pipeline configuration: one structured document holding every knob.

The YAML schema mirrors the dataclasses below; unknown keys anywhere in the
document are rejected so typos fail loudly.  `default_config()` is the desk
-scale setup used by the tests and the shipped example file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .refine import PerturbationRanges
from .retarget import RetargetOptions, RetargetWeights
from .shapes import TemplateShape
from .stability import OracleParams


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class DemoSettings:
    styles: tuple = ("pinch-top", "wrap-side", "tripod")
    jitter: float = 0.003
    per_template: int = 3


@dataclass(frozen=True)
class ShapeFieldSettings:
    latent_sigma: float = 0.002
    surface_samples: int = 4096


@dataclass(frozen=True)
class AugmentSettings:
    per_source: int = 20       # deformed instances per source grasp
    reference_points: int = 20


@dataclass(frozen=True)
class RefineSettings:
    perturbation: PerturbationRanges = field(default_factory=PerturbationRanges)
    draws: int = 50
    randomizations: int = 10
    mass_range: tuple = (0.05, 0.25)
    friction_range: tuple = (0.7, 1.0)


@dataclass(frozen=True)
class PolicySettings:
    points: int = 1024
    batch: int = 256
    learning_rate: float = 2e-4
    epochs: int = 300


@dataclass(frozen=True)
class EvalSettings:
    held_out_per_template: int = 3
    grid: tuple = ((0.05, 0.8), (0.1, 0.85), (0.15, 0.9), (0.2, 0.95), (0.25, 1.0))


def _default_templates():
    return (
        TemplateShape.sphere(0.045),
        TemplateShape.capsule(0.04, 0.032),
        TemplateShape.cylinder(0.045, 0.034),
        TemplateShape.rounded_box(0.035, 0.03, 0.045, 0.008),
    )


@dataclass(frozen=True)
class PipelineConfig:
    master_seed: int = 0
    hand_file: Optional[str] = None
    # flexion added to retargeted finger targets so that closing squeezes
    # through the surface instead of hovering at fingertip range
    close_bias: float = 0.4
    templates: tuple = field(default_factory=_default_templates)
    demos: DemoSettings = field(default_factory=DemoSettings)
    retarget_weights: RetargetWeights = field(default_factory=RetargetWeights)
    retarget_opts: RetargetOptions = field(default_factory=RetargetOptions)
    shape_field: ShapeFieldSettings = field(default_factory=ShapeFieldSettings)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    refine: RefineSettings = field(default_factory=RefineSettings)
    oracle: OracleParams = field(default_factory=OracleParams)
    policy: PolicySettings = field(default_factory=PolicySettings)
    eval: EvalSettings = field(default_factory=EvalSettings)


def default_config() -> PipelineConfig:
    return PipelineConfig()


def _require_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _number(section, key, where, default, minimum=None):
    value = section.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be a number")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}")
    return value


def _int(section, key, where, default, minimum=None):
    value = _number(section, key, where, default, minimum)
    if int(value) != value:
        raise ConfigError(f"{where}.{key} must be an integer")
    return int(value)


def _pair(section, key, where, default):
    value = section.get(key, default)
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError(f"{where}.{key} must be a [low, high] pair")
    return (float(value[0]), float(value[1]))


def _parse_templates(raw, where="templates"):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where} must be a non-empty list")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError(f"{where}[{i}] must be a mapping")
        _require_keys(item, {"kind", "dims"}, f"{where}[{i}]")
        try:
            out.append(TemplateShape(str(item["kind"]),
                                     np.array(item["dims"], dtype=float)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from exc
    return tuple(out)


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be a mapping")
    _require_keys(doc, {"master_seed", "hand_file", "close_bias", "templates",
                        "demos", "retarget", "shape_field", "augment", "refine",
                        "oracle", "policy", "eval"}, "config")
    base = default_config()

    master_seed = _int(doc, "master_seed", "config", base.master_seed, minimum=0)
    close_bias = _number(doc, "close_bias", "config", base.close_bias, minimum=0.0)
    hand_file = doc.get("hand_file")
    if hand_file is not None and not isinstance(hand_file, str):
        raise ConfigError("hand_file must be a path string or null")

    templates = (_parse_templates(doc["templates"]) if "templates" in doc
                 else base.templates)

    d = doc.get("demos", {})
    _require_keys(d, {"styles", "jitter", "per_template"}, "demos")
    styles = tuple(d.get("styles", base.demos.styles))
    demos = DemoSettings(
        styles=styles,
        jitter=_number(d, "jitter", "demos", base.demos.jitter, minimum=0.0),
        per_template=_int(d, "per_template", "demos", base.demos.per_template, minimum=1),
    )

    r = doc.get("retarget", {})
    _require_keys(r, {"weights", "restarts", "max_iters", "grad_tol",
                      "fd_step", "target_objective"}, "retarget")
    w = r.get("weights", {})
    _require_keys(w, {"w_g", "w_c", "w_r"}, "retarget.weights")
    try:
        weights = RetargetWeights(
            w_g=_number(w, "w_g", "retarget.weights", base.retarget_weights.w_g),
            w_c=_number(w, "w_c", "retarget.weights", base.retarget_weights.w_c),
            w_r=_number(w, "w_r", "retarget.weights", base.retarget_weights.w_r),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    opts = RetargetOptions(
        restarts=_int(r, "restarts", "retarget", base.retarget_opts.restarts, minimum=0),
        max_iters=_int(r, "max_iters", "retarget", base.retarget_opts.max_iters, minimum=1),
        grad_tol=_number(r, "grad_tol", "retarget", base.retarget_opts.grad_tol, minimum=0.0),
        fd_step=_number(r, "fd_step", "retarget", base.retarget_opts.fd_step, minimum=1e-12),
        target_objective=_number(r, "target_objective", "retarget",
                                 base.retarget_opts.target_objective),
    )

    s = doc.get("shape_field", {})
    _require_keys(s, {"latent_sigma", "surface_samples"}, "shape_field")
    shape_field = ShapeFieldSettings(
        latent_sigma=_number(s, "latent_sigma", "shape_field",
                             base.shape_field.latent_sigma, minimum=0.0),
        surface_samples=_int(s, "surface_samples", "shape_field",
                             base.shape_field.surface_samples, minimum=2048),
    )

    a = doc.get("augment", {})
    _require_keys(a, {"per_source", "reference_points"}, "augment")
    augment = AugmentSettings(
        per_source=_int(a, "per_source", "augment", base.augment.per_source, minimum=0),
        reference_points=_int(a, "reference_points", "augment",
                              base.augment.reference_points, minimum=1),
    )

    f = doc.get("refine", {})
    _require_keys(f, {"perturbation", "draws", "randomizations",
                      "mass_range", "friction_range"}, "refine")
    p = f.get("perturbation", {})
    _require_keys(p, {"dt", "dr", "df"}, "refine.perturbation")
    refine = RefineSettings(
        perturbation=PerturbationRanges(
            dt=_number(p, "dt", "refine.perturbation", 0.02, minimum=0.0),
            dr=_number(p, "dr", "refine.perturbation", 0.5, minimum=0.0),
            df=_number(p, "df", "refine.perturbation", 0.1, minimum=0.0),
        ),
        draws=_int(f, "draws", "refine", base.refine.draws, minimum=1),
        randomizations=_int(f, "randomizations", "refine",
                            base.refine.randomizations, minimum=1),
        mass_range=_pair(f, "mass_range", "refine", base.refine.mass_range),
        friction_range=_pair(f, "friction_range", "refine", base.refine.friction_range),
    )

    o = doc.get("oracle", {})
    _require_keys(o, {"f_max", "k_palm", "m_sides", "perturb_sigma",
                      "torsion_radius", "disturb_draws"}, "oracle")
    oracle = OracleParams(
        f_max=_number(o, "f_max", "oracle", base.oracle.f_max, minimum=0.0),
        k_palm=_number(o, "k_palm", "oracle", base.oracle.k_palm, minimum=0.0),
        m_sides=_int(o, "m_sides", "oracle", base.oracle.m_sides, minimum=3),
        perturb_sigma=_number(o, "perturb_sigma", "oracle",
                              base.oracle.perturb_sigma, minimum=0.0),
        torsion_radius=_number(o, "torsion_radius", "oracle",
                               base.oracle.torsion_radius, minimum=0.0),
        disturb_draws=_int(o, "disturb_draws", "oracle",
                           base.oracle.disturb_draws, minimum=1),
    )

    pol = doc.get("policy", {})
    _require_keys(pol, {"points", "batch", "learning_rate", "epochs"}, "policy")
    policy = PolicySettings(
        points=_int(pol, "points", "policy", base.policy.points, minimum=8),
        batch=_int(pol, "batch", "policy", base.policy.batch, minimum=1),
        learning_rate=_number(pol, "learning_rate", "policy",
                              base.policy.learning_rate, minimum=0.0),
        epochs=_int(pol, "epochs", "policy", base.policy.epochs, minimum=0),
    )

    e = doc.get("eval", {})
    _require_keys(e, {"held_out_per_template", "grid"}, "eval")
    grid_raw = e.get("grid", base.eval.grid)
    grid = tuple((float(m), float(mu)) for m, mu in grid_raw)
    evaluation = EvalSettings(
        held_out_per_template=_int(e, "held_out_per_template", "eval",
                                   base.eval.held_out_per_template, minimum=1),
        grid=grid,
    )

    return PipelineConfig(
        master_seed=master_seed,
        hand_file=hand_file,
        close_bias=close_bias,
        templates=templates,
        demos=demos,
        retarget_weights=weights,
        retarget_opts=opts,
        shape_field=shape_field,
        augment=augment,
        refine=refine,
        oracle=oracle,
        policy=policy,
        eval=evaluation,
    )


def load_config(path) -> PipelineConfig:
    with open(path, "r") as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    return config_from_dict(doc)
