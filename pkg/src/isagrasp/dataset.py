"""Line-delimited dataset records and their self-certification.

Each record is one JSON object per line carrying everything needed to
rebuild its object instance bitwise (template, latent seed, sampling
parameters), the 1024x7 feature array as a base64 little-endian float64
block, the verified grasp label, and the provenance needed to replay the
randomization draws that accepted it.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import RigidTransform, UnitQuaternion
from .hand import HandDescription
from .policy import POINT_COUNT, PointFeatures
from .refine import physics_draw
from .shapes import ShapeInstance, TemplateShape, sample_instance
from .stability import OracleParams, lift_success
from .transfer import Grasp

FORMAT_VERSION = 1


@dataclass(frozen=True)
class InstanceRef:
    """Parameters sufficient to rebuild a ShapeInstance bitwise."""

    kind: str
    dims: tuple
    seed: int
    sigma: float
    num_samples: int

    def template(self) -> TemplateShape:
        return TemplateShape(self.kind, np.array(self.dims))

    def build(self) -> ShapeInstance:
        return sample_instance(self.template(), seed=self.seed,
                               sigma=self.sigma, num_samples=self.num_samples)

    @staticmethod
    def of(inst: ShapeInstance, sigma: float) -> "InstanceRef":
        return InstanceRef(kind=inst.template.kind,
                           dims=tuple(inst.template.dims.tolist()),
                           seed=inst.sample_seed, sigma=sigma,
                           num_samples=inst.num_samples)


@dataclass(frozen=True)
class DatasetRecord:
    record_id: int
    instance: InstanceRef
    features: PointFeatures
    label: Grasp
    demo_id: str
    stage: str                 # "source" or "transfer"
    refine_seed: int
    accepted_trial: int
    randomizations: int

    def to_json(self) -> str:
        feat = self.features
        blob = np.hstack([feat.points, feat.dots]).astype("<f8").tobytes()
        doc = {
            "version": FORMAT_VERSION,
            "record_id": self.record_id,
            "instance": asdict(self.instance),
            "features_b64": base64.b64encode(blob).decode("ascii"),
            "feature_center": feat.center.tolist(),
            "table_normal": feat.table_normal.tolist(),
            "label": {
                "translation": self.label.pregrasp.translation.tolist(),
                "rotation_wxyz": list(self.label.pregrasp.rotation.as_array()),
                "fingers": self.label.fingers.tolist(),
            },
            "provenance": {
                "demo_id": self.demo_id,
                "stage": self.stage,
                "refine_seed": self.refine_seed,
                "accepted_trial": self.accepted_trial,
                "randomizations": self.randomizations,
            },
        }
        return json.dumps(doc, separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> "DatasetRecord":
        doc = json.loads(line)
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported record version {doc.get('version')}")
        inst = InstanceRef(**doc["instance"])
        inst = InstanceRef(kind=inst.kind, dims=tuple(inst.dims), seed=inst.seed,
                           sigma=inst.sigma, num_samples=inst.num_samples)
        blob = base64.b64decode(doc["features_b64"])
        arr = np.frombuffer(blob, dtype="<f8").reshape(POINT_COUNT, 7)
        feats = PointFeatures(points=arr[:, :3], dots=arr[:, 3:],
                              center=np.array(doc["feature_center"]),
                              table_normal=np.array(doc["table_normal"]))
        lab = doc["label"]
        label = Grasp(
            RigidTransform(np.array(lab["translation"]),
                           UnitQuaternion(*lab["rotation_wxyz"])),
            np.array(lab["fingers"]),
        )
        prov = doc["provenance"]
        return DatasetRecord(
            record_id=int(doc["record_id"]),
            instance=inst,
            features=feats,
            label=label,
            demo_id=str(prov["demo_id"]),
            stage=str(prov["stage"]),
            refine_seed=int(prov["refine_seed"]),
            accepted_trial=int(prov["accepted_trial"]),
            randomizations=int(prov["randomizations"]),
        )


def write_records(path, records: Sequence[DatasetRecord], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path) -> list[DatasetRecord]:
    out = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DatasetRecord.from_json(line))
    return out


def self_certify(desc: HandDescription, record: DatasetRecord,
                 mass_range=(0.05, 0.25), friction_range=(0.7, 1.0),
                 oracle: OracleParams = OracleParams()) -> bool:
    """Rebuild the record's instance and replay its randomization draws.

    True iff the stored grasp label lifts successfully under every draw that
    originally accepted it: the dataset certifies itself from its own
    provenance fields.
    """
    inst = record.instance.build()
    for d in range(record.randomizations):
        params, disturb_seed = physics_draw(record.refine_seed,
                                            record.accepted_trial, d,
                                            mass_range=mass_range,
                                            friction_range=friction_range)
        if not lift_success(desc, inst, record.label, params,
                            seed=disturb_seed, oracle=oracle).success:
            return False
    return True
