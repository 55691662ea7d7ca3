"""Procedural ray-cast scenes with exact depth and camera motion.

Scenes are a textured ground plane, axis-aligned boxes standing on it and a
far backdrop wall, lit by one directional light with Lambertian shading.
Camera frame: x right, y down, z forward; the target camera is the world
frame and the ground is the plane y = camera_height.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import ConfigurationError, GenerationError
from .geometry import CameraIntrinsics, RigidTransform, axis_angle_to_matrix, warp_image

_LIGHT = np.array([-0.4, -1.0, -0.5]) / np.linalg.norm([-0.4, -1.0, -0.5])
_MAX_RETRIES = 100


@dataclass
class SceneSpec:
    image_h: int = 96
    image_w: int = 160
    camera_height: float = 1.5
    num_boxes: Tuple[int, int] = (2, 6)
    box_width: Tuple[float, float] = (0.6, 1.8)
    box_height: Tuple[float, float] = (0.5, 1.5)
    box_depth: Tuple[float, float] = (1.0, 3.0)
    box_lateral: Tuple[float, float] = (-6.0, 6.0)
    box_distance: Tuple[float, float] = (6.0, 16.0)
    baseline: Tuple[float, float] = (0.2, 0.5)
    forward_motion: Tuple[float, float] = (0.0, 0.4)
    max_rotation: float = 0.01
    backdrop_distance: float = 24.0
    backdrop_slant: float = 0.2  # max |dZ/dX| of the backdrop plane
    backdrop_lean: Tuple[float, float] = (0.5, 1.0)  # range of dZ per metre of height
    texture_octaves: int = 3
    supersample: int = 2
    d_min: float = 0.1
    d_max: float = 100.0
    min_visible: float = 0.7
    max_photometric_error: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("num_boxes", "box_width", "box_height", "box_depth", "box_lateral",
                     "box_distance", "baseline", "forward_motion", "backdrop_lean"):
            setattr(self, name, tuple(getattr(self, name)))
        lo, hi = self.num_boxes
        if not 0 <= lo <= hi:
            raise ConfigurationError("num_boxes must be an ordered non-negative range")
        if self.image_h < 4 or self.image_w < 4:
            raise ConfigurationError("image must be at least 4x4")
        if self.box_distance[0] - self.box_depth[1] <= self.d_min + self.forward_motion[1]:
            raise ConfigurationError("boxes could reach the near plane")
        if not (0 <= self.backdrop_slant and 0 <= self.backdrop_lean[0] <= self.backdrop_lean[1]):
            raise ConfigurationError("backdrop slant and lean must be non-negative ranges")
        # nearest / farthest backdrop depth over the view (level camera)
        half_x = 0.5 / 0.58
        half_y = 0.5 / 1.92
        near = self.backdrop_distance / (1.0 + self.backdrop_slant * half_x)
        den = 1.0 - self.backdrop_lean[1] * half_y - self.backdrop_slant * half_x
        if den <= 0:
            raise ConfigurationError("backdrop slant/lean too steep for the field of view")
        far = (self.backdrop_distance + self.backdrop_lean[1] * self.camera_height) / den
        if not self.box_distance[1] + self.box_depth[1] < near or far >= self.d_max:
            raise ConfigurationError("backdrop must lie behind all boxes and within d_max")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.for_image(self.image_h, self.image_w)


@dataclass
class Surface:
    albedo: np.ndarray  # rgb
    freqs: np.ndarray  # [octaves]
    angles: np.ndarray
    phases: np.ndarray

    def texture(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        val = np.full(s.shape, 0.55)
        for k in range(len(self.freqs)):
            arg = 2 * np.pi * self.freqs[k] * (s * np.cos(self.angles[k]) + t * np.sin(self.angles[k]))
            val += 0.22 / (k + 1) * np.sin(arg + self.phases[k])
        return val


@dataclass
class Box:
    lo: np.ndarray  # [3] min corner
    hi: np.ndarray  # [3] max corner
    surface: Surface

    def record(self) -> Tuple[float, ...]:
        return tuple(np.concatenate([self.lo, self.hi]).round(12))


@dataclass
class Scene:
    camera_height: float
    backdrop_distance: float
    ground: Surface
    backdrop: Surface
    boxes: List[Box] = field(default_factory=list)
    # backdrop plane: Z = distance + slope_x * X + slope_y * (Y - camera_height)
    slope_x: float = 0.0
    slope_y: float = 0.0


@dataclass
class SceneSample:
    target: np.ndarray  # [3, H, W]
    sources: List[np.ndarray]  # 2 x [3, H, W]
    gt_depth: np.ndarray  # [1, H, W]
    poses: List[RigidTransform]  # target -> source
    K: CameraIntrinsics
    boxes: List[Tuple[float, ...]]
    seed: int


def _random_surface(rng: np.random.Generator, octaves: int, base_freq: float) -> Surface:
    return Surface(
        albedo=rng.uniform(0.35, 1.0, size=3),
        freqs=base_freq * 2.0 ** np.arange(octaves) * rng.uniform(0.8, 1.25, size=octaves),
        angles=rng.uniform(0, np.pi, size=octaves),
        phases=rng.uniform(0, 2 * np.pi, size=octaves),
    )


def _shade(surface: Surface, s, t, normal: np.ndarray) -> np.ndarray:
    lambert = 0.35 + 0.65 * max(0.0, float(normal @ _LIGHT))
    tex = np.clip(surface.texture(s, t), 0.0, 1.0)
    return surface.albedo[:, None] * (tex * lambert)[None, :]


def cast_rays(scene: Scene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit along each world-space ray. Returns (lambda [M], rgb [3, M])."""
    m = dirs.shape[0]
    best = np.full(m, np.inf)
    rgb = np.zeros((3, m))
    with np.errstate(divide="ignore", invalid="ignore"):
        # ground plane y = h, hit from above
        lam = np.where(dirs[:, 1] > 1e-12, (scene.camera_height - origin[1]) / dirs[:, 1], np.inf)
        hit = (lam > 0) & (lam < best)
        if hit.any():
            p = origin + lam[hit, None] * dirs[hit]
            rgb[:, hit] = _shade(scene.ground, p[:, 0], p[:, 2], np.array([0.0, -1.0, 0.0]))
            best[hit] = lam[hit]

        a, b = scene.slope_x, scene.slope_y
        den = dirs[:, 2] - a * dirs[:, 0] - b * dirs[:, 1]
        num = scene.backdrop_distance + a * origin[0] + b * (origin[1] - scene.camera_height) \
            - origin[2]
        lam = np.where(den > 1e-12, num / den, np.inf)
        hit = (lam > 0) & (lam < best)
        if hit.any():
            p = origin + lam[hit, None] * dirs[hit]
            normal = np.array([a, b, -1.0]) / np.sqrt(a * a + b * b + 1.0)
            rgb[:, hit] = _shade(scene.backdrop, p[:, 0], p[:, 1], normal)
            best[hit] = lam[hit]

        for box in scene.boxes:
            t1 = (box.lo - origin) / dirs
            t2 = (box.hi - origin) / dirs
            tmin = np.minimum(t1, t2)
            tmax = np.maximum(t1, t2)
            tmin = np.where(np.isnan(tmin), -np.inf, tmin)
            tmax = np.where(np.isnan(tmax), np.inf, tmax)
            near = tmin.max(axis=1)
            far = tmax.min(axis=1)
            axis = tmin.argmax(axis=1)
            hit = (near <= far) & (near > 0) & (near < best)
            if not hit.any():
                continue
            p = origin + near[hit, None] * dirs[hit]
            ax = axis[hit]
            sub = np.zeros((3, hit.sum()))
            for a in range(3):
                sel = ax == a
                if not sel.any():
                    continue
                # a single viewpoint sees at most one face per axis of a box
                normal = np.zeros(3)
                normal[a] = -np.sign(dirs[hit][sel, a][0])
                s_idx, t_idx = [(2, 1), (0, 2), (0, 1)][a]
                sub[:, sel] = _shade(box.surface, p[sel, s_idx], p[sel, t_idx], normal)
            rgb[:, hit] = sub
            best[hit] = near[hit]
    return best, rgb


def render(scene: Scene, pose: RigidTransform, K: CameraIntrinsics, h: int, w: int,
           supersample: int = 1):
    """Render the view of a camera with world->camera ``pose``.

    Returns (image [3,H,W] in [0,1], depth [H,W]) with depth along the camera
    z axis at pixel centers and color averaged over a supersample^2 grid.
    """
    r = np.asarray(pose.rotation.data)
    t = np.asarray(pose.translation.data)
    origin = -r.T @ t
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")

    def rays(dx, dy):
        cam = np.stack([(xs + dx - K.ox) / K.fx, (ys + dy - K.oy) / K.fy, np.ones_like(xs)], -1)
        return cam.reshape(-1, 3) @ r  # rows of R^T d

    lam, _ = cast_rays(scene, origin, rays(0.0, 0.0))
    depth = lam.reshape(h, w)  # camera-frame ray has z = 1, so lambda is depth
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    acc = np.zeros((3, h * w))
    for dy in offsets:
        for dx in offsets:
            _, rgb = cast_rays(scene, origin, rays(dx, dy))
            acc += rgb
    image = np.clip(acc / supersample ** 2, 0.0, 1.0).reshape(3, h, w)
    return image, depth


def _random_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    scene = Scene(
        camera_height=spec.camera_height,
        backdrop_distance=spec.backdrop_distance,
        ground=_random_surface(rng, spec.texture_octaves, 0.25),
        backdrop=_random_surface(rng, spec.texture_octaves, 0.08),
        slope_x=float(rng.uniform(-spec.backdrop_slant, spec.backdrop_slant)),
        slope_y=-float(rng.uniform(*spec.backdrop_lean)),
    )
    n_boxes = int(rng.integers(spec.num_boxes[0], spec.num_boxes[1] + 1))
    for _ in range(n_boxes):
        wd = rng.uniform(*spec.box_width)
        ht = rng.uniform(*spec.box_height)
        dp = rng.uniform(*spec.box_depth)
        cx = rng.uniform(*spec.box_lateral)
        z0 = rng.uniform(*spec.box_distance)
        lo = np.array([cx - wd / 2, spec.camera_height - ht, z0])
        hi = np.array([cx + wd / 2, spec.camera_height, z0 + dp])
        scene.boxes.append(Box(lo, hi, _random_surface(rng, spec.texture_octaves, 0.6)))
    return scene


def _random_pose(spec: SceneSpec, rng: np.random.Generator, side: float) -> RigidTransform:
    center = np.array([
        side * rng.uniform(*spec.baseline),
        rng.uniform(-0.05, 0.05),
        side * rng.uniform(*spec.forward_motion),
    ])
    omega = rng.uniform(-spec.max_rotation, spec.max_rotation, size=3)
    with no_grad():
        rot = axis_angle_to_matrix(Tensor(omega)).data
    return RigidTransform(Tensor(rot), Tensor(-rot @ center))


def photometric_self_check(sample: SceneSample):
    """(masked L1, visible fraction) per source when warping with ground truth."""
    results = []
    depth = Tensor(sample.gt_depth[None])
    target = sample.target[None]
    with no_grad():
        for src, pose in zip(sample.sources, sample.poses):
            synth, mask = warp_image(Tensor(src[None]), depth, pose, sample.K)
            m = mask.data
            frac = float(m.mean())
            err = float((np.abs(synth.data - target).mean(axis=1, keepdims=True) * m).sum()
                        / max(m.sum(), 1.0))
            results.append((err, frac))
    return results


def generate_scene(spec: SceneSpec) -> SceneSample:
    """Render one target frame, two displaced source frames and exact depth."""
    rng = np.random.default_rng(spec.seed)
    K = spec.intrinsics()
    h, w = spec.image_h, spec.image_w
    for _ in range(_MAX_RETRIES):
        scene = _random_scene(spec, rng)
        poses = [_random_pose(spec, rng, -1.0), _random_pose(spec, rng, 1.0)]
        target, depth = render(scene, RigidTransform.identity(), K, h, w, spec.supersample)
        if not np.all(np.isfinite(depth)) or depth.min() < spec.d_min or depth.max() > spec.d_max:
            continue
        sources = [render(scene, p, K, h, w, spec.supersample)[0] for p in poses]
        sample = SceneSample(target, sources, depth[None], poses, K,
                             [b.record() for b in scene.boxes], spec.seed)
        checks = photometric_self_check(sample)
        if all(err < spec.max_photometric_error and frac >= spec.min_visible
               for err, frac in checks):
            return sample
    raise GenerationError(f"no valid scene after {_MAX_RETRIES} placements (seed {spec.seed})")


def sample_seeds(count: int, seed: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def dataset(spec: SceneSpec, count: int, seed: int) -> Iterator[SceneSample]:
    """Yield ``count`` scenes with per-sample seeds derived from ``seed``."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    for s in sample_seeds(count, seed):
        yield generate_scene(dataclasses.replace(spec, seed=s))


def split(samples: Sequence[SceneSample]):
    """Even indices train, odd indices validate."""
    samples = list(samples)
    return samples[0::2], samples[1::2]
