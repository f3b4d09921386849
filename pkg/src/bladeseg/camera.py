"""Pinhole camera description and perspective projection."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec

NEAR_PLANE = 0.05


@dataclass(frozen=True)
class CameraSpec:
    eye: tuple
    look_at: tuple
    up: tuple = (0.0, 0.0, 1.0)
    vertical_fov: float = 0.8
    image_width: int = 128
    image_height: int = 128

    def validate(self):
        eye = np.asarray(self.eye, dtype=np.float64)
        target = np.asarray(self.look_at, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        if eye.shape != (3,) or target.shape != (3,) or up.shape != (3,):
            raise InvalidSpec("eye", "eye, look_at and up must be 3-vectors")
        if not (np.all(np.isfinite(eye)) and np.all(np.isfinite(target))):
            raise InvalidSpec("eye", "non-finite coordinates")
        fwd = target - eye
        if np.linalg.norm(fwd) == 0.0:
            raise InvalidSpec("look_at", "look_at coincides with eye")
        if abs(np.linalg.norm(up) - 1.0) > 1e-6:
            raise InvalidSpec("up", "up must be a unit vector")
        if np.linalg.norm(np.cross(fwd, up)) <= 1e-9 * np.linalg.norm(fwd):
            raise InvalidSpec("up", "up is parallel to the viewing direction")
        if not 0.1 < self.vertical_fov < 2.8:
            raise InvalidSpec("vertical_fov", f"{self.vertical_fov} outside (0.1, 2.8)")
        for name in ("image_width", "image_height"):
            v = getattr(self, name)
            if int(v) != v or v < 16 or v % 2:
                raise InvalidSpec(name, f"must be an even integer >= 16, got {v}")
        return self

    @property
    def focal_px(self) -> float:
        return (self.image_height / 2.0) / np.tan(self.vertical_fov / 2.0)

    def basis(self):
        """Orthonormal (right, true_up, forward) rows of the view rotation."""
        eye = np.asarray(self.eye, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, fwd])

    def to_view(self, points):
        """World points (..., 3) to view coordinates (x right, y up, z depth)."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - np.asarray(self.eye, dtype=np.float64)) @ self.basis().T

    def view_to_screen(self, view):
        """View coordinates to (sx, sy) pixels; y grows downward.

        Only meaningful for z > 0.
        """
        f = self.focal_px
        z = view[..., 2]
        sx = self.image_width / 2.0 + f * view[..., 0] / z
        sy = self.image_height / 2.0 - f * view[..., 1] / z
        return sx, sy

    def ray_directions(self):
        """Unit world-space ray direction through every pixel centre, (H, W, 3)."""
        h, w = self.image_height, self.image_width
        f = self.focal_px
        xs = (np.arange(w) + 0.5 - w / 2.0) / f
        ys = -(np.arange(h) + 0.5 - h / 2.0) / f
        vx, vy = np.meshgrid(xs, ys)
        view = np.stack([vx, vy, np.ones_like(vx)], axis=-1)
        world = view @ self.basis()
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def to_dict(self):
        return {
            "eye": [float(v) for v in self.eye],
            "look_at": [float(v) for v in self.look_at],
            "up": [float(v) for v in self.up],
            "vertical_fov": float(self.vertical_fov),
            "image_width": int(self.image_width),
            "image_height": int(self.image_height),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            eye=tuple(d["eye"]),
            look_at=tuple(d["look_at"]),
            up=tuple(d["up"]),
            vertical_fov=d["vertical_fov"],
            image_width=d["image_width"],
            image_height=d["image_height"],
        )


def project(point, camera: CameraSpec):
    """Project a world point to continuous pixel coordinates.

    Returns ``(sx, sy, depth)`` where depth is the signed distance along the
    optical axis.  Points behind the eye come back with negative depth and
    their screen coordinates should not be trusted.
    """
    view = camera.to_view(np.asarray(point, dtype=np.float64))
    depth = float(view[2])
    if depth == 0.0:
        return float("nan"), float("nan"), 0.0
    sx, sy = camera.view_to_screen(view)
    return float(sx), float(sy), depth
