"""Point-set grasping policy: features, network, loss, training, evaluation.

The network is a PointNet-style regressor: a shared per-point MLP
(7 -> 64 -> 128 -> 256, ReLU), an exact symmetric max-pool over points, and
three two-layer heads (256 -> 128 -> {3, 4, 16}) for pregrasp translation,
rotation quaternion, and final finger joints.  All parameters live in one
flat float64 vector with named slices; forward and reverse passes are
written directly in numpy.

Input features per point: centered position plus four alignment scalars
(N_o.N_t, N_o.N_f, N_o.N_p, N_f.N_t) built from the object normal, table
normal, and the hand's facing/pointing directions at observation time.
Translation targets are expressed relative to the cloud center.

Training augments each sample online with a random rotation about the table
normal.  The four dot-product channels are invariant under that rotation by
construction (all vectors co-rotate), so the augmentation rotates the
centered positions and transforms the labels covariantly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import RigidTransform, UnitQuaternion
from .hand import HandDescription
from .shapes import ShapeInstance
from .stability import PhysicsParams, lift_success
from .transfer import Grasp

POINT_COUNT = 1024
FEATURE_DIM = 7
MLP_DIMS = (FEATURE_DIM, 64, 128, 256)
HEAD_HIDDEN = 128
HEAD_DIMS = (("translation", 3), ("rotation", 4), ("fingers", 16))

# evaluation grid: five (mass, friction) pairs
EVAL_GRID = ((0.05, 0.8), (0.1, 0.85), (0.15, 0.9), (0.2, 0.95), (0.25, 1.0))

# canonical observation-time hand directions (top-down above the table)
CANONICAL_FACING = np.array([0.0, 0.0, -1.0])
CANONICAL_POINTING = np.array([1.0, 0.0, 0.0])
TABLE_NORMAL = np.array([0.0, 0.0, 1.0])

_ROT_CLAMP = 1e-7   # keeps the acos derivative finite near aligned rotations


def _param_slices():
    slices = []
    for i in range(len(MLP_DIMS) - 1):
        slices.append((f"mlp{i}.w", (MLP_DIMS[i], MLP_DIMS[i + 1])))
        slices.append((f"mlp{i}.b", (MLP_DIMS[i + 1],)))
    for name, out_dim in HEAD_DIMS:
        slices.append((f"head_{name}.w0", (MLP_DIMS[-1], HEAD_HIDDEN)))
        slices.append((f"head_{name}.b0", (HEAD_HIDDEN,)))
        slices.append((f"head_{name}.w1", (HEAD_HIDDEN, out_dim)))
        slices.append((f"head_{name}.b1", (out_dim,)))
    return tuple(slices)


PARAM_SLICES = _param_slices()
PARAM_COUNT = sum(int(np.prod(shape)) for _, shape in PARAM_SLICES)


class PolicyNet:
    """Flat parameter vector with named views; permutation-invariant forward."""

    def __init__(self, flat: Optional[np.ndarray] = None):
        if flat is None:
            flat = np.zeros(PARAM_COUNT)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (PARAM_COUNT,):
            raise ValueError(f"expected {PARAM_COUNT} parameters, got {flat.shape}")
        self.flat = flat
        self.views = {}
        offset = 0
        for name, shape in PARAM_SLICES:
            size = int(np.prod(shape))
            self.views[name] = self.flat[offset:offset + size].reshape(shape)
            offset += size

    @staticmethod
    def initialized(seed: int = 0) -> "PolicyNet":
        """He-initialized weights, zero biases, identity rotation bias."""
        net = PolicyNet()
        rng = np.random.default_rng(seed)
        for name, shape in PARAM_SLICES:
            if name.endswith(".w") or name.endswith(".w0") or name.endswith(".w1"):
                fan_in = shape[0]
                net.views[name][:] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        # keep the quaternion normalization well-defined from the start
        net.views["head_rotation.b1"][:] = [1.0, 0.0, 0.0, 0.0]
        return net

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.flat.copy())


@dataclass(frozen=True)
class PointFeatures:
    """Fixed-size point cloud with per-point alignment features."""

    points: np.ndarray        # (P, 3), centered
    dots: np.ndarray          # (P, 4) alignment scalars in [-1, 1]
    center: np.ndarray        # (3,) world offset subtracted from positions
    table_normal: np.ndarray  # (3,)

    def __post_init__(self):
        for name in ("points", "dots", "center", "table_normal"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.points.shape != (POINT_COUNT, 3) or self.dots.shape != (POINT_COUNT, 4):
            raise ValueError(f"point features must hold exactly {POINT_COUNT} points")

    def features(self) -> np.ndarray:
        return np.hstack([self.points, self.dots])


@dataclass(frozen=True)
class PolicyOutput:
    translation: np.ndarray     # world frame, meters
    rotation: UnitQuaternion
    fingers: np.ndarray         # 16 joint angles, radians


@dataclass(frozen=True)
class LossTerms:
    total: float
    translation_l1: float
    rotation_geodesic: float
    finger_l1: float


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 256
    learning_rate: float = 2e-4
    epochs: int = 300
    seed: int = 0
    augment_rotations: bool = True   # online rotation about the table normal
    lr_decay: float = 1.0            # per-epoch multiplier (1.0 = constant)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    chunk: int = 32            # forward/backward micro-batch for memory

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch size must be at least 1")


@dataclass(frozen=True)
class TrainResult:
    net: PolicyNet
    loss_curve: tuple


def farthest_point_indices(points: np.ndarray, count: int, start: int) -> np.ndarray:
    """Greedy farthest-point subsampling (squared-distance metric)."""
    n = points.shape[0]
    if count > n:
        raise ValueError("cannot sample more points than available")
    idx = np.empty(count, dtype=int)
    idx[0] = start
    d = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(d))
        idx[i] = nxt
        d = np.minimum(d, np.sum((points - points[nxt]) ** 2, axis=1))
    return idx


def build_features(inst: ShapeInstance, hand_facing=CANONICAL_FACING,
                   hand_pointing=CANONICAL_POINTING, table_normal=TABLE_NORMAL,
                   count: int = POINT_COUNT, seed: int = 0) -> PointFeatures:
    """Subsample the instance surface and attach alignment features.

    Farthest-point sampling with a seeded start point; positions are centered
    at the subsampled cloud's mean, which is also the reference for relative
    translation labels.
    """
    nf = np.asarray(hand_facing, dtype=float)
    npnt = np.asarray(hand_pointing, dtype=float)
    nt = np.asarray(table_normal, dtype=float)
    for v in (nf, npnt, nt):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("direction vectors must be unit length")
    rng = np.random.default_rng(seed)
    start = int(rng.integers(inst.num_samples))
    idx = farthest_point_indices(inst.points, count, start)
    pts = inst.points[idx]
    nrm = inst.normals[idx]
    center = pts.mean(axis=0)
    dots = np.column_stack([
        nrm @ nt,
        nrm @ nf,
        nrm @ npnt,
        np.full(count, float(nf @ nt)),
    ])
    return PointFeatures(points=pts - center, dots=dots, center=center,
                         table_normal=nt)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _forward(net: PolicyNet, feats: np.ndarray, want_cache: bool):
    """feats: (B, P, 7).  Returns (heads, cache)."""
    B, P, _ = feats.shape
    v = net.views
    x = feats.reshape(B * P, FEATURE_DIM)
    h1 = np.maximum(x @ v["mlp0.w"] + v["mlp0.b"], 0.0)
    h2 = np.maximum(h1 @ v["mlp1.w"] + v["mlp1.b"], 0.0)
    h3 = np.maximum(h2 @ v["mlp2.w"] + v["mlp2.b"], 0.0)
    per_point = h3.reshape(B, P, MLP_DIMS[-1])
    arg = np.argmax(per_point, axis=1)                      # (B, 256)
    pooled = np.take_along_axis(per_point, arg[:, None, :], axis=1)[:, 0, :]
    heads = {}
    head_cache = {}
    for name, _ in HEAD_DIMS:
        a0 = pooled @ v[f"head_{name}.w0"] + v[f"head_{name}.b0"]
        h = np.maximum(a0, 0.0)
        heads[name] = h @ v[f"head_{name}.w1"] + v[f"head_{name}.b1"]
        if want_cache:
            head_cache[name] = h
    cache = None
    if want_cache:
        cache = {"x": x, "h1": h1, "h2": h2, "h3": h3, "arg": arg,
                 "pooled": pooled, "heads_h": head_cache, "B": B, "P": P}
    return heads, cache


def _backward(net: PolicyNet, cache, d_heads) -> np.ndarray:
    """Gradient of the scalar loss w.r.t. the flat parameter vector.

    Exploits max-pool sparsity: upstream per-point gradients are nonzero only
    at the winner rows, so the MLP backward runs on B*256 gathered rows
    instead of all B*P points.
    """
    v = net.views
    grads = PolicyNet()
    g = grads.views
    B, P = cache["B"], cache["P"]
    C = MLP_DIMS[-1]
    d_pooled = np.zeros((B, C))
    for name, _ in HEAD_DIMS:
        dout = d_heads[name]                                # (B, out)
        h = cache["heads_h"][name]
        g[f"head_{name}.w1"][:] = h.T @ dout
        g[f"head_{name}.b1"][:] = dout.sum(axis=0)
        dh = dout @ v[f"head_{name}.w1"].T
        da0 = dh * (h > 0.0)
        g[f"head_{name}.w0"][:] = cache["pooled"].T @ da0
        g[f"head_{name}.b0"][:] = da0.sum(axis=0)
        d_pooled += da0 @ v[f"head_{name}.w0"].T

    # scatter pooled gradients to the winning rows, gathered per channel
    arg = cache["arg"]                                      # (B, C) point index
    rows = (np.arange(B)[:, None] * P + arg).ravel()        # (B*C,) into B*P
    cols = np.tile(np.arange(C), B)
    dh3_rows = np.zeros((B * C, C))
    dh3_rows[np.arange(B * C), cols] = d_pooled.ravel()

    uniq, inv = np.unique(rows, return_inverse=True)
    dh3_u = np.zeros((uniq.size, C))
    np.add.at(dh3_u, inv, dh3_rows)

    h3_u = cache["h3"][uniq]
    h2_u = cache["h2"][uniq]
    h1_u = cache["h1"][uniq]
    x_u = cache["x"][uniq]

    da3 = dh3_u * (h3_u > 0.0)
    g["mlp2.w"][:] = h2_u.T @ da3
    g["mlp2.b"][:] = da3.sum(axis=0)
    dh2 = da3 @ v["mlp2.w"].T
    da2 = dh2 * (h2_u > 0.0)
    g["mlp1.w"][:] = h1_u.T @ da2
    g["mlp1.b"][:] = da2.sum(axis=0)
    dh1 = da2 @ v["mlp1.w"].T
    da1 = dh1 * (h1_u > 0.0)
    g["mlp0.w"][:] = x_u.T @ da1
    g["mlp0.b"][:] = da1.sum(axis=0)
    return grads.flat


def _loss_and_head_grads(heads, labels_t, labels_q, labels_f):
    """Mean per-sample loss over the batch and gradients w.r.t. head outputs.

    labels_t: (B, 3) translations relative to the cloud center;
    labels_q: (B, 4) unit quaternions (w, x, y, z); labels_f: (B, 16).
    """
    B = labels_t.shape[0]
    t = heads["translation"]
    r = heads["rotation"]
    f = heads["fingers"]

    dt = t - labels_t
    trans_l1 = np.abs(dt).mean(axis=1)
    d_t = np.sign(dt) / (3.0 * B)

    norms = np.linalg.norm(r, axis=1, keepdims=True)
    q_hat = r / norms
    dots = np.sum(q_hat * labels_q, axis=1)
    u = np.abs(dots)
    u_fwd = np.minimum(u, 1.0)
    rot_geo = 2.0 * np.arccos(u_fwd)
    u_c = np.minimum(u, 1.0 - _ROT_CLAMP)
    du = -2.0 / np.sqrt(1.0 - u_c ** 2) / B
    d_qhat = du[:, None] * np.sign(dots)[:, None] * labels_q
    # back through the normalization: (I - q q^T) / |r|
    d_r = (d_qhat - q_hat * np.sum(d_qhat * q_hat, axis=1, keepdims=True)) / norms

    df = f - labels_f
    fing_l1 = np.abs(df).mean(axis=1)
    d_f = np.sign(df) / (16.0 * B)

    per_sample = trans_l1 + rot_geo + fing_l1
    loss = float(per_sample.mean())
    return loss, {"translation": d_t, "rotation": d_r, "fingers": d_f}, \
        (float(trans_l1.mean()), float(rot_geo.mean()), float(fing_l1.mean()))


def loss(output: PolicyOutput, label: Grasp) -> LossTerms:
    """Three-term loss: L1 translation, geodesic rotation, L1 fingers."""
    trans = float(np.abs(output.translation - label.pregrasp.translation).mean())
    u = min(abs(output.rotation.dot(label.pregrasp.rotation)), 1.0)
    rot = 2.0 * math.acos(u)
    fing = float(np.abs(output.fingers - label.fingers).mean())
    return LossTerms(total=trans + rot + fing, translation_l1=trans,
                     rotation_geodesic=rot, finger_l1=fing)


def predict(net: PolicyNet, features: PointFeatures) -> PolicyOutput:
    """Forward pass for one cloud; translation is de-centered to world."""
    heads, _ = _forward(net, features.features()[None], want_cache=False)
    t = heads["translation"][0] + features.center
    q = UnitQuaternion(*heads["rotation"][0])
    return PolicyOutput(translation=t, rotation=q, fingers=heads["fingers"][0].copy())


def batch_loss_and_grad(net: PolicyNet, feats: np.ndarray, labels_t, labels_q,
                        labels_f, chunk: int = 32):
    """Loss and flat-parameter gradient, accumulated over micro-batches."""
    B = feats.shape[0]
    total_grad = np.zeros(PARAM_COUNT)
    total_loss = 0.0
    terms = np.zeros(3)
    for lo in range(0, B, chunk):
        hi = min(lo + chunk, B)
        w = (hi - lo) / B
        heads, cache = _forward(net, feats[lo:hi], want_cache=True)
        chunk_loss, d_heads, chunk_terms = _loss_and_head_grads(
            heads, labels_t[lo:hi], labels_q[lo:hi], labels_f[lo:hi])
        total_grad += w * _backward(net, cache, d_heads)
        total_loss += w * chunk_loss
        terms += w * np.array(chunk_terms)
    return total_loss, total_grad, terms


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    return UnitQuaternion.from_axis_angle(axis * angle).to_matrix()


def train(dataset: Sequence[tuple[PointFeatures, Grasp]],
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minibatch Adam on the three-term loss with online rotation augmentation.

    Every sample is rotated about its table normal by a fresh uniform angle
    each epoch; positions and labels transform covariantly while the
    alignment channels are invariant.  Aborts with the offending slice name
    if the loss or any parameter goes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    net = PolicyNet.initialized(config.seed)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x7EA1)))

    base_feats = np.stack([f.features() for f, _ in dataset])
    centers = np.stack([f.center for f, _ in dataset])
    axes = np.stack([f.table_normal for f, _ in dataset])
    t_rel = np.stack([g.pregrasp.translation for _, g in dataset]) - centers
    quats = np.stack([g.pregrasp.rotation.as_array() for _, g in dataset])
    fingers = np.stack([g.fingers for _, g in dataset])

    m = np.zeros(PARAM_COUNT)
    v = np.zeros(PARAM_COUNT)
    step = 0
    curve = []
    n = len(dataset)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        angles = rng.uniform(0.0, 2.0 * math.pi, size=n)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, n, config.batch):
            sel = order[lo:lo + config.batch]
            if config.augment_rotations:
                feats = base_feats[sel].copy()
                lt = np.empty((sel.size, 3))
                lq = np.empty((sel.size, 4))
                for j, i in enumerate(sel):
                    R = _rotation_about(axes[i], angles[i])
                    feats[j, :, :3] = feats[j, :, :3] @ R.T
                    lt[j] = R @ t_rel[i]
                    q_aug = UnitQuaternion.from_matrix(R).compose(
                        UnitQuaternion(*quats[i]))
                    lq[j] = q_aug.as_array()
            else:
                feats = base_feats[sel]
                lt = t_rel[sel]
                lq = quats[sel]
            lf = fingers[sel]

            batch_value, grad, _ = batch_loss_and_grad(net, feats, lt, lq, lf,
                                                       chunk=config.chunk)
            if not math.isfinite(batch_value):
                raise RuntimeError(_first_bad_slice(net) or "loss became non-finite")
            step += 1
            if lr != 0.0:
                m = config.adam_beta1 * m + (1 - config.adam_beta1) * grad
                v = config.adam_beta2 * v + (1 - config.adam_beta2) * grad * grad
                m_hat = m / (1 - config.adam_beta1 ** step)
                v_hat = v / (1 - config.adam_beta2 ** step)
                net.flat -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
            if not np.all(np.isfinite(net.flat)):
                raise RuntimeError(f"non-finite parameters in slice "
                                   f"{_first_bad_slice(net)} at step {step}")
            epoch_loss += batch_value
            batches += 1
        curve.append(epoch_loss / batches)
        lr *= config.lr_decay
    return TrainResult(net=net, loss_curve=tuple(curve))


def _first_bad_slice(net: PolicyNet) -> Optional[str]:
    for name, _ in PARAM_SLICES:
        if not np.all(np.isfinite(net.views[name])):
            return name
    return None


def evaluate(desc: HandDescription, net: PolicyNet,
             instances: Sequence[ShapeInstance],
             grid=EVAL_GRID, seed: int = 0,
             grasp_override=None) -> tuple[float, list]:
    """Success rate of predicted grasps over the mass/friction grid.

    Each instance is evaluated once per grid pair: predict (or use the
    override callback), close fingers, then run the quasi-static lift check.
    Returns (success_rate, per-case records).
    """
    cases = []
    successes = 0
    for i, inst in enumerate(instances):
        feats = build_features(inst, seed=seed + 7919 * i)
        if grasp_override is None:
            out = predict(net, feats)
            grasp = Grasp(RigidTransform(out.translation, out.rotation),
                          desc.clamp_joints(out.fingers))
        else:
            grasp = grasp_override(inst, i)
        for j, (mass, mu) in enumerate(grid):
            verdict = lift_success(desc, inst, grasp, PhysicsParams(mass, mu),
                                   seed=int(np.random.default_rng(
                                       np.random.SeedSequence((seed, i, j))).integers(2**63)))
            successes += verdict.success
            cases.append({"instance": i, "mass": mass, "friction": mu,
                          "success": bool(verdict.success),
                          "reason": verdict.reason})
    rate = successes / max(len(instances) * len(grid), 1)
    return rate, cases


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, slice table, little-endian f64 arrays
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ISGPNET1"
CHECKPOINT_VERSION = 1


def save_checkpoint(net: PolicyNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(PARAM_SLICES)))
        for name, shape in PARAM_SLICES:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
        for name, _ in PARAM_SLICES:
            fh.write(net.views[name].astype("<f8").tobytes())


def load_checkpoint(path) -> PolicyNet:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a policy checkpoint (bad magic)")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        if count != len(PARAM_SLICES):
            raise ValueError("checkpoint slice table does not match this network")
        for name, shape in PARAM_SLICES:
            (name_len,) = struct.unpack("<H", fh.read(2))
            stored_name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            if stored_name != name or dims != shape:
                raise ValueError(f"checkpoint slice {stored_name}{dims} does not "
                                 f"match expected {name}{shape}")
        net = PolicyNet()
        for name, shape in PARAM_SLICES:
            size = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            net.views[name][:] = data
        return net
