"""Self-supervised training loop, Adam, and held-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, concat, no_grad, resize_bilinear
from .errors import NumericError
from .geometry import RigidTransform, disparity_to_depth, warp_image
from .losses import LossConfig, photometric_loss, smoothness_loss, total_loss
from .metrics import MetricsReport, depth_metrics, mean_reports
from .model import DaCCNModel, init_model, pose_forward
from .synthdata import SceneSample


class Adam:
    """Adam with bias correction; parameters without a gradient are skipped."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Batch:
    target: np.ndarray  # [N,3,H,W]
    sources: List[np.ndarray]  # 2 x [N,3,H,W]
    poses: List[RigidTransform]  # 2 x batched target -> source
    K: object


def make_batch(samples: Sequence[SceneSample]) -> Batch:
    target = np.stack([s.target for s in samples])
    n_src = len(samples[0].sources)
    sources = [np.stack([s.sources[k] for s in samples]) for k in range(n_src)]
    poses = [RigidTransform.stack([s.poses[k] for s in samples]) for k in range(n_src)]
    return Batch(target, sources, poses, samples[0].K)


def batch_order(n_train: int, batch_size: int, iterations: int, seed: int) -> List[np.ndarray]:
    """Index batches from seeded per-epoch permutations."""
    rng = np.random.default_rng(seed)
    out, pool = [], np.empty(0, dtype=np.int64)
    while len(out) < iterations:
        if len(pool) < batch_size:
            pool = np.concatenate([pool, rng.permutation(n_train)])
        out.append(pool[:batch_size])
        pool = pool[batch_size:]
    return out


def area_downsample(image: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c, H, W = image.shape
    fy, fx = H // h, W // w
    return image.reshape(n, c, h, fy, w, fx).mean(axis=(3, 5))


@dataclass
class LossTerms:
    total: Tensor
    photometric: float
    smoothness: float


def compute_losses(model: DaCCNModel, batch: Batch, loss_cfg: LossConfig,
                   pose_mode: str = "ground_truth") -> LossTerms:
    """Four-scale self-supervised objective for one batch."""
    cfg = model.cfg
    H, W = cfg.input_h, cfg.input_w
    target = Tensor(batch.target)
    disps = model(target)
    for d in disps:
        if not np.all(np.isfinite(d.data)):
            raise NumericError(f"non-finite disparity; first non-finite tensor: {first_nonfinite(d)}")
    if pose_mode == "pose_head":
        poses = [pose_forward(model, concat([target, Tensor(src)], axis=1))
                 for src in batch.sources]
    else:
        poses = batch.poses
    lp_list, ls_list = [], []
    for disp in disps:
        full = disp if disp.shape[2:] == (H, W) else resize_bilinear(disp, H, W)
        depth = disparity_to_depth(full, cfg.d_min, cfg.d_max)
        synth = [warp_image(Tensor(src), depth, pose, batch.K)
                 for src, pose in zip(batch.sources, poses)]
        lp_list.append(photometric_loss(synth, target, loss_cfg))
        img = area_downsample(batch.target, disp.shape[2], disp.shape[3])
        ls_list.append(smoothness_loss(disp, img))
    total = total_loss(lp_list, ls_list, loss_cfg)
    n = float(len(lp_list))
    return LossTerms(total, sum(x.item() for x in lp_list) / n,
                     sum(x.item() for x in ls_list) / n)


def first_nonfinite(loss: Tensor) -> Optional[str]:
    """Describe the earliest-created tensor in the graph holding a non-finite value."""
    seen, stack, found = set(), [loss], []
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        order = t._node.order if t._node is not None else -1
        if not np.all(np.isfinite(t.data)):
            found.append((order, t))
        if t._node is not None:
            stack.extend(t._node.inputs)
    if not found:
        return None
    _, t = min(found, key=lambda pair: pair[0])
    label = t.name or t.op
    return f"{label} (op {t.op!r}, shape {t.shape})"


def check_finite(loss: Tensor, params: Sequence[Tensor], iteration: int) -> None:
    if not np.isfinite(loss.item()):
        where = first_nonfinite(loss) or "loss"
        raise NumericError(f"non-finite loss at iteration {iteration}; first non-finite tensor: {where}")
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient at iteration {iteration} in {p.name}")


def predict_depth(model: DaCCNModel, images: np.ndarray) -> np.ndarray:
    """Finest-head depth at full resolution, [N,1,H,W]."""
    cfg = model.cfg
    with no_grad():
        disp = model(Tensor(images))[-1]
        full = resize_bilinear(disp, cfg.input_h, cfg.input_w)
        return disparity_to_depth(full, cfg.d_min, cfg.d_max).data


def evaluate(model: DaCCNModel, samples: Sequence[SceneSample], median_scaling: bool = True,
             sq_rel_convention: str = "standard", batch_size: int = 4) -> MetricsReport:
    """Per-image metrics on ``samples`` averaged over images."""
    cfg = model.cfg
    reports = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        pred = predict_depth(model, np.stack([s.target for s in chunk]))
        for p, s in zip(pred, chunk):
            reports.append(depth_metrics(p, s.gt_depth, median_scaling=median_scaling,
                                         clamp=(cfg.d_min, cfg.d_max),
                                         sq_rel_convention=sq_rel_convention))
    return mean_reports(reports)


@dataclass
class TraceRow:
    iteration: int
    loss: float
    photometric: float
    smoothness: float


@dataclass
class TrainResult:
    model: DaCCNModel
    trace: List[TraceRow] = field(default_factory=list)
    report: Optional[MetricsReport] = None

    def window_means(self, window: int = 20) -> Tuple[float, float]:
        """Mean loss over the first and last ``window`` iterations."""
        losses = [r.loss for r in self.trace]
        w = max(1, min(window, len(losses) // 2 or 1))
        return float(np.mean(losses[:w])), float(np.mean(losses[-w:]))


def format_trace(trace: Sequence[TraceRow]) -> str:
    lines = ["iteration\tL\tL_p\tL_s"]
    lines += [f"{r.iteration}\t{r.loss!r}\t{r.photometric!r}\t{r.smoothness!r}" for r in trace]
    return "\n".join(lines) + "\n"


def train(run, train_samples: Sequence[SceneSample], val_samples: Sequence[SceneSample] = (),
          model: Optional[DaCCNModel] = None, log=None) -> TrainResult:
    """Run ``run.iterations`` optimisation steps; evaluate on ``val_samples``."""
    model = model if model is not None else init_model(run.model)
    params = model.parameters()
    opt = Adam(params, run.optimizer.lr, run.optimizer.beta1, run.optimizer.beta2,
               run.optimizer.eps)
    result = TrainResult(model)
    for it, idx in enumerate(batch_order(len(train_samples), run.batch_size,
                                         run.iterations, run.seed)):
        batch = make_batch([train_samples[i] for i in idx])
        opt.zero_grad()
        terms = compute_losses(model, batch, run.loss, run.pose_mode)
        if not np.isfinite(terms.total.item()):
            check_finite(terms.total, params, it)
        terms.total.backward()
        check_finite(terms.total, params, it)
        opt.step()
        row = TraceRow(it, terms.total.item(), terms.photometric, terms.smoothness)
        result.trace.append(row)
        if log is not None:
            log(row)
    if val_samples:
        result.report = evaluate(model, list(val_samples), run.median_scaling,
                                 run.sq_rel_convention)
    return result
