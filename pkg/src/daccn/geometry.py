"""Pinhole camera model, rigid motion and differentiable view synthesis.

Pixel convention: pixel (row i, column j) has continuous coordinates
(x, y) = (j, i), i.e. integer values are pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, clip, concat, make_result, sample_pixels
from .autodiff.functional import snap_coords
from .errors import DomainError

Z_EPS = 1e-6
D_MIN = 0.1
D_MAX = 100.0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    ox: float
    oy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @classmethod
    def for_image(cls, h: int, w: int) -> "CameraIntrinsics":
        """Driving-camera intrinsics (normalised KITTI-like) for an h x w image."""
        return cls(fx=0.58 * w, fy=1.92 * h, ox=0.5 * w, oy=0.5 * h)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.ox], [0.0, self.fy, self.oy], [0.0, 0.0, 1.0]])

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.ox * sx, self.oy * sy)


# -- rotations ---------------------------------------------------------

def _skew(v: np.ndarray) -> np.ndarray:
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([np.stack([z, -w, y], -1),
                     np.stack([w, z, -x], -1),
                     np.stack([-y, x, z], -1)], -2)


_SKEW_BASIS = _skew(np.eye(3))  # [3, 3, 3]: d K / d v_i


def _rodrigues_coeffs(theta: np.ndarray):
    """A = sin t / t, B = (1 - cos t) / t^2 and their derivatives over t."""
    small = theta < 1e-4
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - np.cos(t)) / t**2)
    # (dA/dt)/t and (dB/dt)/t, so that dA/dv = that * v
    da = np.where(small, -1 / 3 + t2 / 30, (t * np.cos(t) - np.sin(t)) / t**3)
    db = np.where(small, -1 / 12 + t2 / 180, (t * np.sin(t) - 2 * (1 - np.cos(t))) / t**4)
    return a, b, da, db


def axis_angle_to_matrix(v: Tensor) -> Tensor:
    """Rodrigues map [..., 3] -> [..., 3, 3]; exact identity at v = 0."""
    v = as_tensor(v)
    vv = v.data
    theta = np.linalg.norm(vv, axis=-1)
    a, b, da, db = _rodrigues_coeffs(theta)
    k = _skew(vv)
    k2 = k @ k
    eye = np.eye(3)
    out = eye + a[..., None, None] * k + b[..., None, None] * k2

    def backward(g):
        gv = np.zeros(vv.shape)
        for i in range(3):
            ki = _SKEW_BASIS[i]
            dr = (da * vv[..., i])[..., None, None] * k + a[..., None, None] * ki \
                + (db * vv[..., i])[..., None, None] * k2 \
                + b[..., None, None] * (ki @ k + k @ ki)
            gv[..., i] = (g * dr).sum(axis=(-2, -1))
        return (gv,)

    return make_result(out, (v,), backward, "axis_angle_to_matrix")


@dataclass
class RigidTransform:
    """P' = R P + t. ``rotation`` is [3,3] or [N,3,3], ``translation`` [3] or [N,3]."""

    rotation: Tensor
    translation: Tensor

    @classmethod
    def identity(cls, batch: int = None) -> "RigidTransform":
        if batch is None:
            return cls(Tensor(np.eye(3)), Tensor(np.zeros(3)))
        return cls(Tensor(np.tile(np.eye(3), (batch, 1, 1))), Tensor(np.zeros((batch, 3))))

    @classmethod
    def from_axis_angle(cls, axis_angle, translation) -> "RigidTransform":
        return cls(axis_angle_to_matrix(as_tensor(axis_angle)), as_tensor(translation))

    @classmethod
    def stack(cls, transforms) -> "RigidTransform":
        r = np.stack([t.rotation.data for t in transforms])
        tr = np.stack([t.translation.data for t in transforms])
        return cls(Tensor(r), Tensor(tr))

    def inverse(self) -> "RigidTransform":
        r = np.swapaxes(self.rotation.data, -1, -2)
        t = -(r @ self.translation.data[..., None])[..., 0]
        return RigidTransform(Tensor(r), Tensor(t))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        r = self.rotation.data @ other.rotation.data
        t = (self.rotation.data @ other.translation.data[..., None])[..., 0] \
            + self.translation.data
        return RigidTransform(Tensor(r), Tensor(t))

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation.data
        rtr = np.swapaxes(r, -1, -2) @ r
        return bool(np.allclose(rtr, np.eye(3), atol=tol)
                    and np.allclose(np.linalg.det(r), 1.0, atol=tol))

    def apply(self, points: Tensor) -> Tensor:
        """Transform [N,3,M] points."""
        r, t = self.rotation, self.translation
        if r.ndim == 2:
            r = r.reshape(1, 3, 3)
            t = t.reshape(1, 3)
        return r @ points + t.reshape(t.shape[0], 3, 1)


# -- projection --------------------------------------------------------

def pixel_grid(h: int, w: int):
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    return xs, ys


def project(points: Tensor, K: CameraIntrinsics) -> Tensor:
    """Camera-frame XYZ [N,3,H,W] -> pixel coordinates [N,2,H,W]."""
    points = as_tensor(points)
    z = points[:, 2:3]
    if np.any(z.data <= Z_EPS):
        raise DomainError("project: point at or behind the camera (Z <= 1e-6)")
    x = points[:, 0:1] / z * K.fx + K.ox
    y = points[:, 1:2] / z * K.fy + K.oy
    return concat([x, y], axis=1)


def _rays(h: int, w: int, K: CameraIntrinsics) -> np.ndarray:
    xs, ys = pixel_grid(h, w)
    return np.stack([(xs - K.ox) / K.fx, (ys - K.oy) / K.fy, np.ones_like(xs)])


def backproject(depth: Tensor, K: CameraIntrinsics) -> Tensor:
    """Depth [N,1,H,W] -> camera-frame points [N,3,H,W]."""
    depth = as_tensor(depth)
    h, w = depth.shape[2:]
    return depth * Tensor(_rays(h, w, K)[None])


def warp_coords(depth: Tensor, T: RigidTransform, K: CameraIntrinsics):
    """Source-frame pixel coordinates [N,H,W,2] of every target pixel.

    Also returns the boolean validity array [N,1,H,W]: projected Z > 1e-6 and
    the coordinate inside the source frame.
    """
    n, _, h, w = depth.shape
    pts = backproject(depth, K).reshape(n, 3, h * w)
    moved = T.apply(pts)
    z = moved[:, 2:3]
    front = z.data > Z_EPS
    z = clip(z, lo=Z_EPS)
    u = moved[:, 0:1] / z * K.fx + K.ox
    v = moved[:, 1:2] / z * K.fy + K.oy
    coords = concat([u, v], axis=1).transpose(0, 2, 1).reshape(n, h, w, 2)
    su, sv = snap_coords(u.data), snap_coords(v.data)
    inside = (su >= 0) & (su <= w - 1) & (sv >= 0) & (sv <= h - 1)
    valid = (front & inside).reshape(n, 1, h, w)
    return coords, valid


def warp_image(source: Tensor, target_depth: Tensor, T: RigidTransform,
               K: CameraIntrinsics):
    """Synthesize the target view from ``source``.

    Returns ``(synthesized [N,C,H,W], valid_mask [N,1,H,W] of 0/1 floats)``.
    Invalid pixels are border-clamped samples and must be masked by callers.
    """
    source = as_tensor(source)
    coords, valid = warp_coords(as_tensor(target_depth), T, K)
    synth = sample_pixels(source, coords)
    return synth, Tensor(valid.astype(source.dtype))


def disparity_to_depth(disp: Tensor, d_min: float = D_MIN, d_max: float = D_MAX) -> Tensor:
    """depth = 1 / (1/d_max + disp * (1/d_min - 1/d_max)) for disp in (0, 1)."""
    disp = as_tensor(disp)
    if not 0 < d_min < d_max:
        raise DomainError("need 0 < d_min < d_max")
    if np.any(disp.data <= 0) or np.any(disp.data >= 1):
        raise DomainError("disparity must lie strictly inside (0, 1)")
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return 1.0 / (disp * (hi - lo) + lo)


def depth_to_disparity(depth: np.ndarray, d_min: float = D_MIN, d_max: float = D_MAX):
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return (1.0 / depth - lo) / (hi - lo)
