"""Grasp dataset augmentation through implicit shape deformation.

A small number of demonstrated grasps is retargeted to a four-finger robot
hand, extrapolated to many deformed object instances through a latent
deformation field with dense correspondences, verified with a quasi-static
wrench-space oracle under randomized physics, and used to train a point-set
grasping policy.
"""

__version__ = "0.1.0"

from .baselines import BaselineConfig, heuristic_grasp, ppo_reward, random_grasp
from .config import ConfigError, PipelineConfig, default_config, load_config
from .dataset import DatasetRecord, InstanceRef, read_records, self_certify, write_records
from .demos import DemoSpec, InfeasibleStyle, synth_demo
from .geometry import Frame3, RigidTransform, UnitQuaternion, build_surface_frame, geodesic_distance
from .hand import HandDescription, HandPose, default_description, forward_kinematics, load_description
from .pipeline import GenerationResult, generate_dataset, held_out_instances, run_eval
from .policy import (
    PointFeatures,
    PolicyNet,
    PolicyOutput,
    TrainConfig,
    build_features,
    evaluate,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    train,
)
from .refine import PerturbationRanges, RefinementReport, batch_refine, perturb, refine
from .retarget import DemoRecord, RetargetOptions, RetargetWeights, cost_dc, cost_dg, cost_dr, retarget
from .shapes import (
    DeformationField,
    ShapeInstance,
    TemplateShape,
    deform,
    export_point_cloud,
    instance_sdf,
    sample_instance,
    template_sdf,
)
from .stability import (
    Contact,
    OracleParams,
    PhysicsParams,
    StabilityVerdict,
    close_fingers,
    force_closure_quality,
    lift_success,
)
from .transfer import Grasp, TransferContext, build_context, transfer_grasp

__all__ = [name for name in dir() if not name.startswith("_")]
