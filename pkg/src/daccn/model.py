"""Miniature DaCCN: four-branch encoder with direction-aware blocks, four-stage
decoder with cumulative convolutions and sigmoid disparity heads, optional
pose head.
"""

from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, activation, concat, conv2d, reduce_mean, upsample_nearest2x
from .errors import CheckpointError, ConfigurationError, DimensionError
from .geometry import D_MAX, D_MIN, RigidTransform, axis_angle_to_matrix, depth_to_disparity
from .ops import (
    ConvBlock,
    CumulativeConvParams,
    DirectionScales,
    cumulative_convolution,
    direction_aware_block,
    scaled_size,
)

CHECKPOINT_FORMAT = "daccn-checkpoint"
CHECKPOINT_VERSION = 1
POSE_SCALE = 0.01
IMAGE_MEAN, IMAGE_STD = 0.45, 0.225  # input normalisation
HEAD_INIT_GAIN = 0.1
NUM_STAGES = 4


@dataclass
class ModelConfig:
    branch_channels: Tuple[int, int, int, int] = (16, 24, 32, 48)
    input_h: int = 96
    input_w: int = 160
    enable_dam: bool = True
    enable_cc: bool = True
    num_scales: int = 4
    d_min: float = D_MIN
    d_max: float = D_MAX
    pose_head: bool = False
    init_depth: float = 10.0  # depth the disparity heads predict at initialisation
    seed: int = 0

    def __post_init__(self):
        self.branch_channels = tuple(int(c) for c in self.branch_channels)
        if len(self.branch_channels) != NUM_STAGES or min(self.branch_channels) < 1:
            raise ConfigurationError("branch_channels must be 4 positive ints")
        if self.input_h % 16 or self.input_w % 16 or self.input_h < 16 or self.input_w < 16:
            raise ConfigurationError("input_h and input_w must be positive multiples of 16")
        if self.enable_dam and min(self.input_h, self.input_w) < 32:
            # the stride-16 branch must be at least 2x2 for the direction-aware resampling
            raise ConfigurationError("direction-aware branches need input_h, input_w >= 32")
        if self.num_scales != NUM_STAGES:
            raise ConfigurationError("the decoder has exactly 4 output scales")
        if not 0 < self.d_min < self.d_max:
            raise ConfigurationError("need 0 < d_min < d_max")
        if not self.d_min < self.init_depth < self.d_max:
            raise ConfigurationError("init_depth must lie inside (d_min, d_max)")


def layer_specs(cfg: ModelConfig) -> List[Tuple[str, int, int, int]]:
    """(name, c_in, c_out, kernel) for every conv, in initialisation order."""
    c = cfg.branch_channels
    # stride-2 layers use 4x4 kernels so even sizes halve exactly
    specs = [("enc.stem", 3, c[0], 4)]
    for b in range(NUM_STAGES):
        if b > 0:
            specs.append((f"enc.down{b}", c[b - 1], c[b], 4))
        specs.append((f"enc.b{b}.conv1", c[b], c[b], 3))
        specs.append((f"enc.b{b}.conv2", c[b], c[b], 3))
    for s in reversed(range(NUM_STAGES)):
        c_in = c[s] if s == NUM_STAGES - 1 else c[s + 1] + c[s]
        specs.append((f"dec.s{s}.fuse", c_in, c[s], 3))
        specs.append((f"dec.s{s}.cc", c[s], c[s], 3))
        specs.append((f"dec.s{s}.head", c[s], 1, 3))
    if cfg.pose_head:
        specs += [("pose.conv1", 6, 16, 4), ("pose.conv2", 16, 32, 4),
                  ("pose.conv3", 32, 32, 4), ("pose.out", 32, 6, 1)]
    return specs


def layer_param_counts(cfg: ModelConfig) -> Dict[str, int]:
    return {name: c_in * c_out * k * k + c_out for name, c_in, c_out, k in layer_specs(cfg)}


def parameter_count(cfg: ModelConfig) -> int:
    """Trainable scalars: conv weights and biases plus two scales per DaM branch."""
    return sum(layer_param_counts(cfg).values()) + (2 * NUM_STAGES if cfg.enable_dam else 0)


@dataclass
class DaCCNModel:
    cfg: ModelConfig
    weights: Dict[str, Tensor]
    biases: Dict[str, Tensor]
    scales: List[DirectionScales] = field(default_factory=list)

    # -- parameter views ------------------------------------------------
    def named_parameters(self) -> Dict[str, Tensor]:
        out = {}
        for name in self.weights:
            out[f"{name}.weight"] = self.weights[name]
            out[f"{name}.bias"] = self.biases[name]
        if self.cfg.enable_dam:
            for b, sc in enumerate(self.scales):
                out[f"enc.b{b}.log_sx"] = sc.log_sx
                out[f"enc.b{b}.log_sy"] = sc.log_sy
        return out

    def parameters(self) -> List[Tensor]:
        return [p for p in self.named_parameters().values() if p.requires_grad]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = self.named_parameters()
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for k, t in own.items():
            if t.shape != state[k].shape:
                raise CheckpointError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def learned_scales(self) -> List[Tuple[float, float]]:
        return [sc.values() for sc in self.scales]

    def freeze_scales(self) -> None:
        for sc in self.scales:
            sc.log_sx.requires_grad = False
            sc.log_sy.requires_grad = False

    # -- building blocks --------------------------------------------------
    def conv(self, name: str, x: Tensor, stride: int = 1, act: Optional[str] = "elu") -> Tensor:
        w = self.weights[name]
        y = conv2d(x, w, self.biases[name], stride=stride, padding=(w.shape[2] - 1) // 2)
        return activation(act, y) if act else y

    def block(self, b: int) -> ConvBlock:
        return ConvBlock(self.weights[f"enc.b{b}.conv1"], self.biases[f"enc.b{b}.conv1"],
                         self.weights[f"enc.b{b}.conv2"], self.biases[f"enc.b{b}.conv2"])

    def cc_params(self, s: int) -> CumulativeConvParams:
        return CumulativeConvParams(self.weights[f"dec.s{s}.cc"], self.biases[f"dec.s{s}.cc"])

    # -- forward passes ---------------------------------------------------
    def encode(self, images: Tensor) -> List[Tensor]:
        return encoder_forward(self, images)

    def decode(self, features: Sequence[Tensor]) -> List[Tensor]:
        return decoder_forward(self, features)

    def __call__(self, images: Tensor) -> List[Tensor]:
        return self.decode(self.encode(images))


def init_model(cfg: ModelConfig) -> DaCCNModel:
    """Seeded He-uniform weights, zero biases, unit scales."""
    rng = np.random.default_rng(cfg.seed)
    weights, biases = {}, {}
    for name, c_in, c_out, k in layer_specs(cfg):
        bound = np.sqrt(6.0 / (c_in * k * k))
        weights[name] = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)),
                               requires_grad=True, name=f"{name}.weight")
        biases[name] = Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")
    # heads start near init_depth so early warps stay inside the source frames
    disp0 = depth_to_disparity(cfg.init_depth, cfg.d_min, cfg.d_max)
    for s in range(NUM_STAGES):
        weights[f"dec.s{s}.head"].data *= HEAD_INIT_GAIN
        biases[f"dec.s{s}.head"].data[:] = np.log(disp0 / (1.0 - disp0))
    scales = [DirectionScales.unit(requires_grad=cfg.enable_dam) for _ in range(NUM_STAGES)]
    return DaCCNModel(cfg, weights, biases, scales)


def encoder_forward(model: DaCCNModel, images: Tensor) -> List[Tensor]:
    """Feature maps at strides 2, 4, 8, 16 with the configured branch widths."""
    cfg = model.cfg
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (cfg.input_h, cfg.input_w):
        raise DimensionError(
            f"expected [N,3,{cfg.input_h},{cfg.input_w}] images, got {images.shape}")
    feats = []
    x = model.conv("enc.stem", (images - IMAGE_MEAN) / IMAGE_STD, stride=2)
    for b in range(NUM_STAGES):
        if b > 0:
            x = model.conv(f"enc.down{b}", x, stride=2)
        block = model.block(b)
        x = direction_aware_block(x, model.scales[b], block) if cfg.enable_dam else block(x)
        feats.append(x)
    return feats


def decoder_forward(model: DaCCNModel, features: Sequence[Tensor]) -> List[Tensor]:
    """Disparity maps in (0, 1) at strides 16, 8, 4, 2 (finest last)."""
    disps = []
    x = None
    for s in reversed(range(NUM_STAGES)):
        skip = features[s]
        x = skip if x is None else concat([upsample_nearest2x(x), skip], axis=1)
        x = model.conv(f"dec.s{s}.fuse", x)
        if model.cfg.enable_cc:
            x = cumulative_convolution(x, model.cc_params(s))
        else:
            x = model.conv(f"dec.s{s}.cc", x)
        disps.append(model.conv(f"dec.s{s}.head", x, act="sigmoid"))
    return disps


def pose_forward(model: DaCCNModel, image_pair: Tensor) -> RigidTransform:
    """Relative pose target -> source from a [N,6,H,W] frame pair."""
    if "pose.out" not in model.weights:
        raise ConfigurationError("model was built without a pose head")
    x = model.conv("pose.conv1", (image_pair - IMAGE_MEAN) / IMAGE_STD, stride=2)
    x = model.conv("pose.conv2", x, stride=2)
    x = model.conv("pose.conv3", x, stride=2)
    x = model.conv("pose.out", x, act=None)
    out = reduce_mean(x, axis=(2, 3)) * POSE_SCALE  # [N, 6]
    rotation = axis_angle_to_matrix(out[:, 0:3])
    return RigidTransform(rotation, out[:, 3:6])


def forward_macs(cfg: ModelConfig, scales: Optional[Sequence[Tuple[float, float]]] = None) -> int:
    """Conv multiply-accumulates of one depth forward pass on one image.

    Direction-aware blocks are costed at their resampled size; ``scales``
    defaults to unit scales.
    """
    c = cfg.branch_channels
    h, w = cfg.input_h // 2, cfg.input_w // 2
    total = 3 * c[0] * 16 * h * w
    for b in range(NUM_STAGES):
        if b > 0:
            h, w = h // 2, w // 2
            total += c[b - 1] * c[b] * 16 * h * w
        sx, sy = scales[b] if (scales is not None and cfg.enable_dam) else (1.0, 1.0)
        total += 2 * c[b] * c[b] * 9 * scaled_size(sy, h) * scaled_size(sx, w)
    for s in reversed(range(NUM_STAGES)):
        hs, ws = cfg.input_h // 2 ** (s + 1), cfg.input_w // 2 ** (s + 1)
        c_in = c[s] if s == NUM_STAGES - 1 else c[s + 1] + c[s]
        total += (c_in * c[s] + c[s] * c[s] + c[s]) * 9 * hs * ws
    return total


# -- checkpoints -----------------------------------------------------------

def config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["branch_channels"] = list(d["branch_channels"])
    return d


def save_checkpoint(model: DaCCNModel, path) -> None:
    """Write a versioned ``.npz``: one float64 array per named parameter plus a
    JSON ``__meta__`` entry (format, version, model config).

    Entries are stored in sorted order with a fixed timestamp, so identical
    parameters give byte-identical files.
    """
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "model": config_to_dict(model.cfg)}
    arrays = model.state_dict()
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            arr = arrays[name]
            np.lib.format.write_array(buf, arr if arr.flags.c_contiguous else arr.copy(),
                                      allow_pickle=False)
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path, expected: Optional[ModelConfig] = None) -> DaCCNModel:
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError("checkpoint has no __meta__ entry")
    try:
        meta = json.loads(str(arrays.pop("__meta__")))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
    cfg = ModelConfig(**meta["model"])
    if expected is not None and config_to_dict(expected) != config_to_dict(cfg):
        raise CheckpointError("checkpoint model config does not match the requested config")
    model = init_model(cfg)
    model.load_state_dict(arrays)
    return model
