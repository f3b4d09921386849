"""Procedural wind-turbine geometry with labelled blade defects.

Blades are flat tapered quad strips built in a blade-local frame

    X  chord direction (leading edge at X = -0.3 * chord)
    Y  span distance from the blade root, 0 .. blade_length
    Z  surface normal

and moved to world space afterwards.  World space is z-up; the rotor sits
on top of the tower facing -x, so the default camera placement looks at the
rotor from the -x half-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum, IntEnum
from importlib import resources

import numpy as np

from .camera import CameraSpec
from .errors import InvalidConfig, InvalidSpec
from .seeding import derive_seed, rng_for

TWO_PI = 2.0 * math.pi
BLADE_PITCH = 0.35
LEADING_EDGE_OFFSET = 0.3
DEFECT_GRID = (128, 16)
PLAIN_GRID = (40, 6)
MIN_TRIANGLE_AREA = 1e-9


class DefectKind(str, Enum):
    NONE = "none"
    CRACK = "crack"
    EROSION = "erosion"
    DELAMINATION = "delamination"
    LIGHTNING = "lightning"


DEFECT_KINDS = (DefectKind.CRACK, DefectKind.EROSION, DefectKind.DELAMINATION, DefectKind.LIGHTNING)


class Label(IntEnum):
    STRUCTURE = 0
    DEFECT = 1


class Material(IntEnum):
    BLADE = 0
    TOWER = 1
    NACELLE = 2
    HUB = 3
    CRACK = 4
    EROSION = 5
    DELAMINATION = 6
    SCORCH = 7


class BackgroundMode(str, Enum):
    TERRAIN = "terrain"
    PANORAMA = "panorama"


@dataclass(frozen=True)
class TurbineSpec:
    tower_height: float = 376.5
    tower_base_radius: float = 6.0
    tower_top_radius: float = 3.2
    nacelle_dims: tuple = (16.0, 7.0, 7.0)
    hub_radius: float = 5.0
    blade_length: float = 95.0
    blade_root_chord: float = 8.0
    blade_tip_chord: float = 3.0
    rotor_phase: float = 0.0

    def validate(self):
        for name in ("tower_height", "tower_base_radius", "tower_top_radius",
                     "hub_radius", "blade_length", "blade_root_chord", "blade_tip_chord"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidSpec(name, f"must be a positive length, got {v}")
        if len(self.nacelle_dims) != 3 or not all(math.isfinite(v) and v > 0 for v in self.nacelle_dims):
            raise InvalidSpec("nacelle_dims", f"must be three positive lengths, got {self.nacelle_dims}")
        if self.blade_tip_chord > self.blade_root_chord:
            raise InvalidSpec("blade_tip_chord", "tip chord exceeds root chord")
        if not math.isfinite(self.rotor_phase):
            raise InvalidSpec("rotor_phase", "non-finite")
        return self

    @property
    def hub_center(self) -> np.ndarray:
        length, _, height = self.nacelle_dims
        x = -0.3 * length - 0.8 * self.hub_radius
        return np.array([x, 0.0, self.tower_height + height / 2.0])

    def blade_angles(self):
        return [self.rotor_phase + TWO_PI * i / 3.0 for i in range(3)]

    def chord_at(self, span):
        return self.blade_root_chord + (self.blade_tip_chord - self.blade_root_chord) * np.asarray(span)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["nacelle_dims"] = list(self.nacelle_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["nacelle_dims"] = tuple(d["nacelle_dims"])
        return cls(**d)


@dataclass(frozen=True)
class DefectSpec:
    kind: DefectKind = DefectKind.NONE
    blade_index: int = 0
    span_position: float = 0.5
    extent: float = 0.1
    severity: float = 0.5
    variant_seed: int = 0

    def validate(self):
        if not isinstance(self.kind, DefectKind):
            raise InvalidSpec("kind", f"unknown defect kind {self.kind!r}")
        if self.blade_index not in (0, 1, 2):
            raise InvalidSpec("blade_index", f"must be 0, 1 or 2, got {self.blade_index}")
        if not 0.0 <= self.span_position <= 1.0:
            raise InvalidSpec("span_position", f"{self.span_position} outside [0, 1]")
        if not 0.0 < self.extent <= 1.0:
            raise InvalidSpec("extent", f"{self.extent} outside (0, 1]")
        if not 0.0 < self.severity <= 1.0:
            raise InvalidSpec("severity", f"{self.severity} outside (0, 1]")
        if self.span_position + self.extent > 1.05 + 1e-12:
            raise InvalidSpec("extent", "span_position + extent exceeds 1.05")
        if not 0 <= int(self.variant_seed) < 2**64:
            raise InvalidSpec("variant_seed", "must be a 64-bit unsigned integer")
        return self

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "blade_index": self.blade_index,
            "span_position": self.span_position,
            "extent": self.extent,
            "severity": self.severity,
            "variant_seed": self.variant_seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kind"] = DefectKind(d["kind"])
        return cls(**d)


@dataclass(frozen=True)
class SceneSpec:
    turbine: TurbineSpec
    defect: DefectSpec
    camera: CameraSpec
    light_dir: tuple
    light_intensity: float
    ambient: float
    background_mode: BackgroundMode
    background_seed: int
    master_seed: int
    sample_index: int = 0

    def validate(self):
        self.turbine.validate()
        self.defect.validate()
        self.camera.validate()
        if abs(float(np.linalg.norm(self.light_dir)) - 1.0) > 1e-6:
            raise InvalidSpec("light_dir", "must have unit norm")
        if not 0.3 <= self.light_intensity <= 1.2:
            raise InvalidSpec("light_intensity", f"{self.light_intensity} outside [0.3, 1.2]")
        if not 0.1 <= self.ambient <= 0.5:
            raise InvalidSpec("ambient", f"{self.ambient} outside [0.1, 0.5]")
        if not isinstance(self.background_mode, BackgroundMode):
            raise InvalidSpec("background_mode", f"unknown mode {self.background_mode!r}")
        return self

    @property
    def grime_seed(self) -> int:
        return derive_seed(self.master_seed, self.sample_index, 0x6A)

    def to_dict(self):
        return {
            "turbine": self.turbine.to_dict(),
            "defect": self.defect.to_dict(),
            "camera": self.camera.to_dict(),
            "light_dir": [float(v) for v in self.light_dir],
            "light_intensity": self.light_intensity,
            "ambient": self.ambient,
            "background_mode": self.background_mode.value,
            "background_seed": self.background_seed,
            "master_seed": self.master_seed,
            "sample_index": self.sample_index,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            turbine=TurbineSpec.from_dict(d["turbine"]),
            defect=DefectSpec.from_dict(d["defect"]),
            camera=CameraSpec.from_dict(d["camera"]),
            light_dir=tuple(d["light_dir"]),
            light_intensity=d["light_intensity"],
            ambient=d["ambient"],
            background_mode=BackgroundMode(d["background_mode"]),
            background_seed=d["background_seed"],
            master_seed=d["master_seed"],
            sample_index=d.get("sample_index", 0),
        )


@dataclass
class LabeledMesh:
    """Triangle soup; every triangle owns its three vertices.

    ``span`` holds the blade span fraction of each vertex (NaN off-blade) so
    deformations can be applied after construction.
    """

    triangles: np.ndarray
    labels: np.ndarray
    materials: np.ndarray
    span: np.ndarray
    blade: np.ndarray
    blade_length: float = float("nan")

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3, 3)), np.zeros(0, np.uint8), np.zeros(0, np.uint8),
                   np.zeros((0, 3)), np.zeros(0, np.int8))

    @classmethod
    def from_triangles(cls, tris, material, label=Label.STRUCTURE):
        tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
        n = len(tris)
        return cls(tris, np.full(n, label, np.uint8), np.full(n, material, np.uint8),
                   np.full((n, 3), np.nan), np.full(n, -1, np.int8))

    @classmethod
    def concat(cls, meshes):
        meshes = [m for m in meshes if len(m)]
        if not meshes:
            return cls.empty()
        lengths = [m.blade_length for m in meshes if not math.isnan(m.blade_length)]
        return cls(
            np.concatenate([m.triangles for m in meshes]),
            np.concatenate([m.labels for m in meshes]),
            np.concatenate([m.materials for m in meshes]),
            np.concatenate([m.span for m in meshes]),
            np.concatenate([m.blade for m in meshes]),
            lengths[0] if lengths else float("nan"),
        )

    def __len__(self):
        return len(self.triangles)

    def copy(self):
        return LabeledMesh(self.triangles.copy(), self.labels.copy(), self.materials.copy(),
                           self.span.copy(), self.blade.copy(), self.blade_length)

    def areas(self):
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def defect_mask(self):
        return self.labels == Label.DEFECT


# ---------------------------------------------------------------- blade frame

def blade_frame(turbine: TurbineSpec, index: int):
    """Return (origin, rotation) mapping blade-local XYZ to world."""
    theta = turbine.blade_angles()[index]
    axis = np.array([0.0, math.cos(theta), math.sin(theta)])
    tangent = np.array([0.0, -math.sin(theta), math.cos(theta)])
    chord = math.cos(BLADE_PITCH) * tangent + math.sin(BLADE_PITCH) * np.array([1.0, 0.0, 0.0])
    normal = np.cross(chord, axis)
    origin = turbine.hub_center + turbine.hub_radius * axis
    return origin, np.stack([chord, axis, normal])


def blade_local_point(turbine: TurbineSpec, span, chord_frac):
    span = np.asarray(span, dtype=np.float64)
    c = turbine.chord_at(span)
    x = (np.asarray(chord_frac) - LEADING_EDGE_OFFSET) * c
    y = span * turbine.blade_length
    return np.stack(np.broadcast_arrays(x, y, np.zeros_like(x + y)), axis=-1)


def _bend_points(points, span, pivot, angle, twist, blade_length):
    """Bend/twist blade-local points whose span fraction exceeds ``pivot``.

    Twist grows linearly from zero at the pivot to ``twist`` at the tip and
    is applied about the span axis; the bend is a rigid rotation by ``angle``
    about the chord-direction axis through the pivot cross-section.
    """
    out = np.array(points, dtype=np.float64, copy=True)
    moved = np.asarray(span) > pivot
    if not np.any(moved) or (angle == 0.0 and twist == 0.0):
        return out, moved
    p = out[moved]
    s = np.asarray(span)[moved]
    if twist != 0.0 and pivot < 1.0:
        phi = twist * (s - pivot) / (1.0 - pivot)
        c, sn = np.cos(phi), np.sin(phi)
        x, z = p[:, 0].copy(), p[:, 2].copy()
        p[:, 0] = c * x + sn * z
        p[:, 2] = -sn * x + c * z
    if angle != 0.0:
        y0 = pivot * blade_length
        c, sn = math.cos(angle), math.sin(angle)
        dy, z = p[:, 1] - y0, p[:, 2].copy()
        p[:, 1] = y0 + c * dy - sn * z
        p[:, 2] = sn * dy + c * z
    out[moved] = p
    return out, moved


def apply_bend(mesh: LabeledMesh, pivot: float, angle: float, twist: float) -> LabeledMesh:
    """Bend and twist the span beyond ``pivot`` of a blade-local mesh.

    Triangles whose vertex-mean span lies past the pivot are relabelled as
    defect (delamination).  Triangle count is unchanged.
    """
    if abs(angle) > math.pi / 3 + 1e-12:
        raise InvalidSpec("angle", f"|{angle}| exceeds pi/3")
    if abs(twist) > math.pi / 4 + 1e-12:
        raise InvalidSpec("twist", f"|{twist}| exceeds pi/4")
    out = mesh.copy()
    flat_pts = out.triangles.reshape(-1, 3)
    flat_span = out.span.reshape(-1)
    bent, _ = _bend_points(flat_pts, np.where(np.isnan(flat_span), -np.inf, flat_span),
                           pivot, angle, twist, mesh.blade_length)
    out.triangles = bent.reshape(-1, 3, 3)
    # off-blade vertices carry NaN span; -inf keeps those triangles untouched
    deformed = np.mean(np.nan_to_num(out.span, nan=-np.inf), axis=1) > pivot
    out.labels[deformed] = Label.DEFECT
    out.materials[deformed] = Material.DELAMINATION
    return out


# ---------------------------------------------------------------- defect cells

_STRUCT, _DEFECT, _REMOVED = 0, 1, 2


def _polyline_distance(px, py, xs, ys):
    best = np.full(px.shape, np.inf)
    for i in range(len(xs) - 1):
        ax, ay, bx, by = xs[i], ys[i], xs[i + 1], ys[i + 1]
        dx, dy = bx - ax, by - ay
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        best = np.minimum(best, np.hypot(px - ax - t * dx, py - ay - t * dy))
    return best


def _ensure_nonempty(state, target, fallback_ij):
    if not np.any(state == target):
        state[fallback_ij] = target


def _classify_cells(turbine, defect, ns, nu):
    """Per-cell state (structure/defect/removed) plus the crack recess depth."""
    state = np.zeros((ns, nu), np.int8)
    length = turbine.blade_length
    s_c = (np.arange(ns) + 0.5) / ns
    u_c = (np.arange(nu) + 0.5) / nu
    S, U = np.meshgrid(s_c, u_c, indexing="ij")
    chord = turbine.chord_at(S)
    y = S * length                       # span distance
    x = U * chord                        # distance from leading edge
    rng = rng_for(defect.variant_seed)
    sev, ext = defect.severity, defect.extent
    recess = 0.0

    def cell_at(span, u):
        return (min(ns - 1, max(0, int(span * ns))), min(nu - 1, max(0, int(u * nu))))

    if defect.kind is DefectKind.CRACK:
        sc = min(defect.span_position + ext / 2.0, 1.0)
        u0 = rng.uniform(0.0, 0.15)
        u1 = min(1.0, u0 + 0.45 + 0.5 * sev)
        nodes = np.linspace(u0, u1, 7)
        drift = rng.choice([-1.0, 1.0]) * ext * length * 0.5
        ys = sc * length + drift * (nodes - nodes.mean()) / (u1 - u0)
        ys = ys + rng.uniform(-0.5, 0.5, size=7) * (0.6 + sev)
        ys = np.clip(ys, 0.0, length)
        xs = nodes * float(turbine.chord_at(sc))
        width = 0.6 + 0.9 * sev
        reach = max(width / 2.0, 0.5 * length / ns)
        state[_polyline_distance(x, y, xs, ys) < reach] = _DEFECT
        _ensure_nonempty(state, _DEFECT, cell_at(sc, (u0 + u1) / 2))
        recess = 0.1 + 0.2 * sev

    elif defect.kind is DefectKind.EROSION:
        s0 = defect.span_position
        s1 = min(1.0, s0 + ext)
        n_notch = 3 + int(rng.integers(0, 4))
        centers = np.sort(rng.uniform(s0, s1, size=n_notch)) * length
        half = (s1 - s0) * length / n_notch * rng.uniform(0.5, 1.0, size=n_notch)
        depth_frac = (0.08 + 0.22 * sev) * rng.uniform(0.6, 1.0, size=n_notch)
        notch = np.zeros_like(y)
        for c0, hw, df in zip(centers, half, depth_frac):
            notch = np.maximum(notch, df * chord * np.clip(1.0 - np.abs(y - c0) / hw, 0.0, None))
        rim = 0.5 + 0.7 * sev
        inside = (S >= s0) & (S <= s1)
        state[inside & (x < notch + rim)] = _DEFECT
        state[inside & (x < notch)] = _REMOVED
        _ensure_nonempty(state, _DEFECT, cell_at((s0 + s1) / 2, 0.0))

    elif defect.kind is DefectKind.LIGHTNING:
        sc = min(defect.span_position + ext / 2.0, 1.0)
        uc = rng.uniform(0.3, 0.65)
        c_here = float(turbine.chord_at(sc))
        cx, cy = uc * c_here, sc * length
        r_hole = (0.12 + 0.18 * sev) * c_here
        r_scorch = r_hole * (1.6 + 0.8 * sev) + ext * length * 0.15
        harm = rng.uniform(-1.0, 1.0, size=(5, 2))
        ang = np.arctan2(y - cy, x - cx)
        wobble = sum(harm[k, 0] * np.cos((k + 2) * ang) + harm[k, 1] * np.sin((k + 2) * ang)
                     for k in range(5)) * 0.06
        r = np.hypot(x - cx, y - cy)
        state[r < r_scorch * (1.0 + wobble)] = _DEFECT
        state[r < r_hole] = _REMOVED
        _ensure_nonempty(state, _DEFECT, cell_at(sc + r_hole / length * 1.2, uc))

    return state, recess


def delamination_params(defect: DefectSpec):
    """(bend angle, twist) realised for a delamination defect."""
    rng = rng_for(derive_seed(defect.variant_seed, 0xDE1))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    angle = sign * (0.15 + 0.55 * defect.severity)
    twist = rng.uniform(-1.0, 1.0) * 0.5 * defect.severity * (math.pi / 4)
    return angle, twist


def _blade_local_mesh(turbine, defect, grid):
    ns, nu = grid
    length = turbine.blade_length
    s = np.linspace(0.0, 1.0, ns + 1)
    u = np.linspace(0.0, 1.0, nu + 1)
    S, U = np.meshgrid(s, u, indexing="ij")
    verts = blade_local_point(turbine, S, U)                 # (ns+1, nu+1, 3)

    if defect.kind in (DefectKind.CRACK, DefectKind.EROSION, DefectKind.LIGHTNING):
        state, recess = _classify_cells(turbine, defect, ns, nu)
    else:
        state, recess = np.zeros((ns, nu), np.int8), 0.0

    i, m = np.nonzero(state != _REMOVED)
    v00, v10 = verts[i, m], verts[i + 1, m]
    v11, v01 = verts[i + 1, m + 1], verts[i, m + 1]
    sp00, sp10 = S[i, m], S[i + 1, m]
    sp11, sp01 = S[i + 1, m + 1], S[i, m + 1]
    tris = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    span = np.concatenate([np.stack([sp00, sp10, sp11], 1), np.stack([sp00, sp11, sp01], 1)])
    cell_state = np.concatenate([state[i, m], state[i, m]])
    labels = (cell_state == _DEFECT).astype(np.uint8)
    defect_material = {
        DefectKind.CRACK: Material.CRACK,
        DefectKind.EROSION: Material.EROSION,
        DefectKind.LIGHTNING: Material.SCORCH,
    }.get(defect.kind, Material.BLADE)
    materials = np.where(labels == 1, defect_material, Material.BLADE).astype(np.uint8)

    if recess > 0.0:
        tris[labels == 1, :, 2] -= recess
        walls = _recess_walls(state, verts, S, recess)
        if len(walls[0]):
            tris = np.concatenate([tris, walls[0]])
            span = np.concatenate([span, walls[1]])
            labels = np.concatenate([labels, np.ones(len(walls[0]), np.uint8)])
            materials = np.concatenate([materials, np.full(len(walls[0]), defect_material, np.uint8)])

    mesh = LabeledMesh(tris, labels, materials, span, np.zeros(len(tris), np.int8), length)
    if defect.kind is DefectKind.DELAMINATION:
        angle, twist = delamination_params(defect)
        mesh = apply_bend(mesh, defect.span_position, angle, twist)
    return mesh


def _recess_walls(state, verts, S, depth):
    """Side walls joining recessed defect cells to neighbouring surface cells."""
    ns, nu = state.shape
    tris, spans = [], []
    down = np.array([0.0, 0.0, -depth])
    for i, m in zip(*np.nonzero(state == _DEFECT)):
        # each entry: neighbour cell, shared edge endpoints (grid indices)
        for (ni, nm), (a, b) in (
            ((i - 1, m), ((i, m), (i, m + 1))),
            ((i + 1, m), ((i + 1, m), (i + 1, m + 1))),
            ((i, m - 1), ((i, m), (i + 1, m))),
            ((i, m + 1), ((i, m + 1), (i + 1, m + 1))),
        ):
            if not (0 <= ni < ns and 0 <= nm < nu) or state[ni, nm] != _STRUCT:
                continue
            p0, p1 = verts[a], verts[b]
            q0, q1 = p0 + down, p1 + down
            tris.append([p0, p1, q1])
            tris.append([p0, q1, q0])
            sa, sb = S[a], S[b]
            spans.append([sa, sb, sb])
            spans.append([sa, sb, sa])
    if not tris:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    return np.asarray(tris), np.asarray(spans)


def _to_world(mesh: LabeledMesh, origin, rotation, blade_index):
    out = mesh.copy()
    out.triangles = mesh.triangles @ rotation + origin
    out.blade[:] = blade_index
    return out


def _tower(turbine, segments=20):
    ang = np.linspace(0.0, TWO_PI, segments + 1)
    rb, rt, h = turbine.tower_base_radius, turbine.tower_top_radius, turbine.tower_height
    tris = []
    for a0, a1 in zip(ang[:-1], ang[1:]):
        b0 = [rb * math.cos(a0), rb * math.sin(a0), 0.0]
        b1 = [rb * math.cos(a1), rb * math.sin(a1), 0.0]
        t0 = [rt * math.cos(a0), rt * math.sin(a0), h]
        t1 = [rt * math.cos(a1), rt * math.sin(a1), h]
        tris += [[b0, b1, t1], [b0, t1, t0]]
    return LabeledMesh.from_triangles(tris, Material.TOWER)


def _box(lo, hi):
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    c = np.array([[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
                  [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]])
    faces = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
    tris = []
    for a, b, cc, d in faces:
        tris += [[c[a], c[b], c[cc]], [c[a], c[cc], c[d]]]
    return tris


def _nacelle_and_hub(turbine, segments=16):
    length, width, height = turbine.nacelle_dims
    top = turbine.tower_height
    nacelle = LabeledMesh.from_triangles(
        _box((-0.3 * length, -width / 2, top), (0.7 * length, width / 2, top + height)),
        Material.NACELLE)
    hc = turbine.hub_center
    r = turbine.hub_radius
    nose = hc + np.array([-1.5 * r, 0.0, 0.0])
    back = hc + np.array([0.6 * r, 0.0, 0.0])
    ang = np.linspace(0.0, TWO_PI, segments + 1)
    rim = np.stack([np.full_like(ang, hc[0]), hc[1] + r * np.cos(ang), hc[2] + r * np.sin(ang)], axis=1)
    tris = []
    for p, q in zip(rim[:-1], rim[1:]):
        tris += [[nose, p, q], [back, q, p]]
    hub = LabeledMesh.from_triangles(tris, Material.HUB)
    return LabeledMesh.concat([nacelle, hub])


def build_mesh(turbine: TurbineSpec, defect: DefectSpec) -> LabeledMesh:
    """Assemble the full labelled turbine mesh for one (turbine, defect) pair."""
    turbine.validate()
    defect.validate()
    parts = [_tower(turbine), _nacelle_and_hub(turbine)]
    for b in range(3):
        if b == defect.blade_index and defect.kind is not DefectKind.NONE:
            local = _blade_local_mesh(turbine, defect, DEFECT_GRID)
        else:
            local = _blade_local_mesh(turbine, DefectSpec(), PLAIN_GRID)
        origin, rot = blade_frame(turbine, b)
        parts.append(_to_world(local, origin, rot, b))
    return LabeledMesh.concat(parts)


def defect_anchor(turbine: TurbineSpec, defect: DefectSpec) -> np.ndarray:
    """World-space point the camera should aim at for this defect."""
    kind = defect.kind
    if kind is DefectKind.EROSION:
        span, u = defect.span_position + min(defect.extent, 1.0 - defect.span_position) / 2.0, 0.05
    elif kind is DefectKind.DELAMINATION:
        span, u = (defect.span_position + 1.0) / 2.0, LEADING_EDGE_OFFSET
    else:
        span, u = min(defect.span_position + defect.extent / 2.0, 1.0), 0.45
    local = blade_local_point(turbine, span, u)[None, :]
    if kind is DefectKind.DELAMINATION:
        angle, twist = delamination_params(defect)
        local, _ = _bend_points(local, np.array([span]), defect.span_position, angle, twist,
                                turbine.blade_length)
    origin, rot = blade_frame(turbine, defect.blade_index)
    return local[0] @ rot + origin


# ---------------------------------------------------------------- presets

def load_presets():
    """The shipped library of 40 defect variants (10 per kind)."""
    text = resources.files("bladeseg").joinpath("data/presets.txt").read_text(encoding="utf-8")
    return parse_presets(text)


def parse_presets(text):
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise InvalidConfig(f"preset line {lineno}: expected 6 columns, got {len(parts)}")
        kind, blade, span, extent, sev, seed = parts
        out.append(DefectSpec(DefectKind(kind), int(blade), float(span), float(extent),
                              float(sev), int(seed)).validate())
    return out


def format_presets(presets):
    lines = ["# kind blade_index span_position extent severity variant_seed"]
    for p in presets:
        lines.append(f"{p.kind.value:<13} {p.blade_index} {p.span_position:.3f} "
                     f"{p.extent:.3f} {p.severity:.3f} {p.variant_seed}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- sampling

def _uniform_mix():
    return {k.value: 0.25 for k in DEFECT_KINDS} | {DefectKind.NONE.value: 0.0}


@dataclass
class GenerationConfig:
    width: int = 128
    height: int = 128
    camera_distance: tuple = (18.0, 34.0)
    camera_elevation: tuple = (-0.35, 0.45)
    camera_azimuth: tuple = (-0.9, 0.9)
    vertical_fov: tuple = (0.6, 0.9)
    look_at_jitter: float = 1.5
    light_elevation: tuple = (0.2, 1.3)
    light_intensity: tuple = (0.55, 1.1)
    ambient: tuple = (0.2, 0.4)
    terrain_probability: float = 0.5
    defect_mix: dict = field(default_factory=_uniform_mix)

    def validate(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if int(v) != v or v < 16 or v % 2:
                raise InvalidConfig(f"{name} must be an even integer >= 16, got {v}")
        ranges = {
            "camera_distance": (0.0, math.inf),
            "camera_elevation": (-math.pi / 2, math.pi / 2),
            "camera_azimuth": (-math.pi, math.pi),
            "vertical_fov": (0.1, 2.8),
            "light_elevation": (-math.pi / 2, math.pi / 2),
            "light_intensity": (0.3, 1.2),
            "ambient": (0.1, 0.5),
        }
        for name, (lo_lim, hi_lim) in ranges.items():
            r = getattr(self, name)
            if len(r) != 2:
                raise InvalidConfig(f"{name} must be a [low, high] pair")
            lo, hi = r
            if not lo <= hi:
                raise InvalidConfig(f"{name} range is empty or inverted: {list(r)}")
            if lo < lo_lim or hi > hi_lim:
                raise InvalidConfig(f"{name} range {list(r)} outside [{lo_lim}, {hi_lim}]")
        if self.camera_distance[0] <= 0:
            raise InvalidConfig("camera_distance must be positive")
        if self.vertical_fov[0] <= 0.1 or self.vertical_fov[1] >= 2.8:
            raise InvalidConfig("vertical_fov must lie strictly inside (0.1, 2.8)")
        if not 0.0 <= self.terrain_probability <= 1.0:
            raise InvalidConfig("terrain_probability must be in [0, 1]")
        if self.look_at_jitter < 0:
            raise InvalidConfig("look_at_jitter must be non-negative")
        total = 0.0
        for key, w in self.defect_mix.items():
            try:
                DefectKind(key)
            except ValueError:
                raise InvalidConfig(f"defect_mix: unknown kind {key!r}") from None
            if w < 0:
                raise InvalidConfig(f"defect_mix: negative weight for {key}")
            total += w
        if abs(total - 1.0) > 1e-9:
            raise InvalidConfig(f"defect_mix weights sum to {total}, expected 1")
        return self

    def mix_items(self):
        return [(k, float(self.defect_mix.get(k.value, 0.0))) for k in (DefectKind.NONE, *DEFECT_KINDS)]

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        return {k: (list(v) if isinstance(v, tuple) else dict(v) if isinstance(v, dict) else v)
                for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfig(f"unknown generation keys: {', '.join(unknown)}")
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        if "defect_mix" in d:
            d["defect_mix"] = {DefectKind.NONE.value: 0.0} | dict(d["defect_mix"])
        return cls(**d)


def _pick_kind(u, items):
    acc = 0.0
    last = None
    for kind, w in items:
        if w <= 0:
            continue
        acc += w
        last = kind
        if u < acc:
            return kind
    return last


def sample_scene(master_seed: int, index: int, gen_config: GenerationConfig | None = None,
                 presets=None) -> SceneSpec:
    """Draw the randomized scene for dataset sample ``index``.

    The sample seed mixes ``master_seed`` and ``index`` only, so samples can
    be produced in any order or in parallel.
    """
    cfg = (gen_config or GenerationConfig()).validate()
    presets = presets if presets is not None else load_presets()
    seed = derive_seed(master_seed, index)
    rng = rng_for(seed)

    turbine = TurbineSpec(rotor_phase=float(rng.uniform(0.0, TWO_PI / 3)))
    kind = _pick_kind(rng.random(), cfg.mix_items())
    pick = int(rng.integers(0, 1 << 30))
    if kind is DefectKind.NONE:
        defect = DefectSpec(DefectKind.NONE, blade_index=pick % 3,
                            span_position=float(rng.uniform(0.2, 0.9)), extent=0.1)
    else:
        pool = [p for p in presets if p.kind is kind]
        defect = pool[pick % len(pool)]

    target = defect_anchor(turbine, defect) + rng.normal(0.0, 1.0, size=3) * cfg.look_at_jitter
    az = rng.uniform(*cfg.camera_azimuth)
    el = rng.uniform(*cfg.camera_elevation)
    dist = rng.uniform(*cfg.camera_distance)
    fov = rng.uniform(*cfg.vertical_fov)
    offset = np.array([-math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    eye = target + dist * offset
    camera = CameraSpec(tuple(float(v) for v in eye), tuple(float(v) for v in target),
                        (0.0, 0.0, 1.0), float(fov), cfg.width, cfg.height)

    l_el = rng.uniform(*cfg.light_elevation)
    # sun kept on the camera's side of the blade most of the time
    l_az = math.atan2(offset[1], offset[0]) + rng.uniform(-1.4, 1.4)
    light = np.array([math.cos(l_el) * math.cos(l_az), math.cos(l_el) * math.sin(l_az), math.sin(l_el)])
    light /= np.linalg.norm(light)
    intensity = float(rng.uniform(*cfg.light_intensity))
    ambient = float(rng.uniform(*cfg.ambient))
    mode = BackgroundMode.TERRAIN if rng.random() < cfg.terrain_probability else BackgroundMode.PANORAMA

    return SceneSpec(
        turbine=turbine,
        defect=defect,
        camera=camera,
        light_dir=tuple(float(v) for v in light),
        light_intensity=intensity,
        ambient=ambient,
        background_mode=mode,
        background_seed=derive_seed(seed, 0xB6),
        master_seed=int(master_seed),
        sample_index=int(index),
    ).validate()


def with_camera(scene: SceneSpec, **changes) -> SceneSpec:
    return replace(scene, camera=replace(scene.camera, **changes))
