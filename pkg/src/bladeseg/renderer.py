"""CPU rasterizer: RGB frame, binary defect mask and depth from one pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import NEAR_PLANE, CameraSpec, project
from .kernels.raster import rasterize_triangles
from .scene import BackgroundMode, Label, LabeledMesh, Material, SceneSpec
from .seeding import MASK64, splitmix64, splitmix64_array, unit_floats

__all__ = ["CameraSpec", "RenderOutput", "project", "rasterize", "render_id_buffer",
           "synth_background", "render_scene"]

ALBEDO = np.zeros((len(Material), 3))
ALBEDO[Material.BLADE] = (0.88, 0.89, 0.90)
ALBEDO[Material.TOWER] = (0.82, 0.83, 0.84)
ALBEDO[Material.NACELLE] = (0.78, 0.80, 0.83)
ALBEDO[Material.HUB] = (0.80, 0.81, 0.83)
ALBEDO[Material.CRACK] = (0.10, 0.09, 0.08)
ALBEDO[Material.EROSION] = (0.62, 0.46, 0.30)
ALBEDO[Material.DELAMINATION] = (0.86, 0.72, 0.42)
ALBEDO[Material.SCORCH] = (0.16, 0.12, 0.10)

GRIME_STRENGTH = 0.15


@dataclass
class RenderOutput:
    rgb: np.ndarray     # (H, W, 3) uint8
    mask: np.ndarray    # (H, W) uint8, 0 or 255
    depth: np.ndarray   # (H, W) float64, +inf where no geometry


# ---------------------------------------------------------------- noise

def value_noise(x, y, seed):
    """Smooth lattice value noise in [0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xf, yf = np.floor(x), np.floor(y)
    tx, ty = x - xf, y - yf
    tx = tx * tx * (3.0 - 2.0 * tx)
    ty = ty * ty * (3.0 - 2.0 * ty)
    xi = xf.astype(np.int64).astype(np.uint64)
    yi = yf.astype(np.int64).astype(np.uint64)
    s = np.uint64(splitmix64(seed & MASK64))
    one = np.uint64(1)

    def corner(a, b):
        h = splitmix64_array((a * np.uint64(0x9E3779B1)) ^ splitmix64_array(b ^ s))
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    c00, c10 = corner(xi, yi), corner(xi + one, yi)
    c01, c11 = corner(xi, yi + one), corner(xi + one, yi + one)
    top = c00 + (c10 - c00) * tx
    bottom = c01 + (c11 - c01) * tx
    return top + (bottom - top) * ty


def fbm(x, y, seed, octaves=4):
    total = np.zeros(np.broadcast(x, y).shape)
    amp, norm = 1.0, 0.0
    for k in range(octaves):
        total += amp * value_noise(x * (2 ** k), y * (2 ** k), seed + 7919 * k)
        norm += amp
        amp *= 0.5
    return total / norm


def _lerp(a, b, t):
    t = np.asarray(t)[..., None]
    return np.asarray(a, dtype=np.float64) + (np.asarray(b, dtype=np.float64) - a) * t


# ---------------------------------------------------------------- backgrounds

def _sky(dirs, seed, zenith, horizon):
    up = np.clip(dirs[..., 2], 0.0, 1.0)
    color = _lerp(horizon, zenith, up ** 0.6)
    # clouds painted on a dome: project the direction onto a plane overhead
    denom = np.maximum(dirs[..., 2], 0.05)
    cx, cy = dirs[..., 0] / denom, dirs[..., 1] / denom
    cloud = np.clip((fbm(cx * 1.6, cy * 1.6, seed + 11, 5) - 0.5) * 2.6, 0.0, 1.0)
    cloud *= np.clip(up * 6.0, 0.0, 1.0)
    return _lerp(color, (236.0, 238.0, 242.0), cloud * 0.85)


def _terrain(camera: CameraSpec, seed: int):
    dirs = camera.ray_directions()
    eye = np.asarray(camera.eye, dtype=np.float64)
    sky = _sky(dirs, seed, zenith=(72.0, 118.0, 196.0), horizon=(196.0, 212.0, 228.0))
    dz = dirs[..., 2]
    ground = (dz < 0.0) & (eye[2] > 0.0)
    out = sky
    if np.any(ground):
        t = np.where(ground, eye[2] / np.where(ground, -dz, 1.0), 0.0)
        gx = eye[0] + t * dirs[..., 0]
        gy = eye[1] + t * dirs[..., 1]
        grass = _lerp((62.0, 112.0, 42.0), (112.0, 146.0, 62.0), fbm(gx / 55.0, gy / 55.0, seed + 1))
        dry = fbm(gx / 160.0, gy / 160.0, seed + 2, 3)
        grass = _lerp(grass, (138.0, 128.0, 84.0), np.clip((dry - 0.58) * 5.0, 0.0, 1.0))
        trees = fbm(gx / 18.0, gy / 18.0, seed + 3, 3)
        grass = _lerp(grass, (34.0, 66.0, 36.0), np.clip((trees - 0.66) * 8.0, 0.0, 1.0))
        rng = np.random.default_rng(seed & MASK64)
        a, b, wob = rng.uniform(-0.6, 0.6), rng.uniform(-60.0, 60.0), rng.uniform(15.0, 40.0)
        road_dist = np.abs(gy - (a * gx + b + wob * np.sin(gx / 90.0))) / np.sqrt(1.0 + a * a)
        mud = _lerp((122.0, 96.0, 66.0), (96.0, 76.0, 54.0), value_noise(gx / 4.0, gy / 4.0, seed + 4))
        grass = _lerp(grass, mud, np.clip((7.0 - road_dist) / 2.0, 0.0, 1.0))
        fog = 1.0 - np.exp(-t / 2500.0)
        grass = _lerp(grass, (190.0, 204.0, 214.0), fog * 0.8)
        out = np.where(ground[..., None], grass, sky)
    return out


def _panorama(camera: CameraSpec, seed: int):
    dirs = camera.ray_directions()
    phi = np.arctan2(dirs[..., 1], dirs[..., 0])
    psi = np.arcsin(np.clip(dirs[..., 2], -1.0, 1.0))
    sky = _sky(dirs, seed, zenith=(58.0, 96.0, 170.0), horizon=(214.0, 200.0, 184.0))
    # seamless in azimuth: sample the noise on a circle
    cx, cy = np.cos(phi) * 3.0, np.sin(phi) * 3.0
    ridge = 0.04 + 0.16 * fbm(cx, cy, seed + 21, 5)
    rock_shade = fbm(cx * 4.0, psi * 12.0 + cy * 4.0, seed + 22, 4)
    mountain = _lerp((84.0, 92.0, 112.0), (132.0, 138.0, 150.0), rock_shade)
    snow = np.clip((psi - ridge * 0.75) * 40.0, 0.0, 1.0)
    mountain = _lerp(mountain, (226.0, 230.0, 236.0), snow * (ridge > 0.14))
    below = np.clip(-psi, 0.0, None)
    # ground features stretch towards the horizon like a plane seen in perspective
    gx = np.cos(phi) / np.maximum(below, 0.02)
    gy = np.sin(phi) / np.maximum(below, 0.02)
    wave = fbm(gx * 0.8, gy * 0.8, seed + 23, 4)
    water = _lerp((34.0, 74.0, 98.0), (70.0, 118.0, 132.0), wave)
    shore = fbm(gx * 0.12, gy * 0.12, seed + 24, 3) > 0.55
    land = _lerp((88.0, 110.0, 58.0), (124.0, 116.0, 80.0), fbm(gx * 0.6, gy * 0.6, seed + 25, 3))
    ground = np.where(shore[..., None], land, water)
    out = np.where((psi < ridge)[..., None], mountain, sky)
    return np.where((psi < 0.0)[..., None], ground, out)


def synth_background(mode: BackgroundMode, seed: int, camera: CameraSpec) -> np.ndarray:
    """Procedural backdrop as an (H, W, 3) uint8 image.

    ``TERRAIN`` casts each pixel ray onto a textured ground plane (z = 0)
    under a sky dome, so the horizon follows camera pitch.  ``PANORAMA`` is
    indexed purely by ray direction, like an environment cube map.
    """
    camera.validate()
    mode = BackgroundMode(mode)
    if mode is BackgroundMode.TERRAIN:
        img = _terrain(camera, seed)
    else:
        img = _panorama(camera, seed)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- geometry prep

def triangle_colors(mesh: LabeledMesh, scene: SceneSpec) -> np.ndarray:
    """Flat Lambert colour per triangle, lit from both sides."""
    if not len(mesh):
        return np.zeros((0, 3), np.uint8)
    tris = mesh.triangles
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.where(norm > 0, norm, 1.0)
    to_eye = np.asarray(scene.camera.eye) - tris.mean(axis=1)
    n *= np.where(np.einsum("ij,ij->i", n, to_eye) < 0, -1.0, 1.0)[:, None]
    lambert = np.maximum(0.0, n @ np.asarray(scene.light_dir, dtype=np.float64))
    shade = scene.ambient + scene.light_intensity * lambert
    grime = 1.0 - GRIME_STRENGTH * unit_floats(scene.grime_seed, np.arange(len(mesh)))
    albedo = ALBEDO[mesh.materials] * grime[:, None]
    return np.clip(np.rint(255.0 * albedo * shade[:, None]), 0, 255).astype(np.uint8)


def _clip_polygon(poly, near):
    out = []
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        a_in, b_in = a[2] >= near, b[2] >= near
        if a_in:
            out.append(a)
        if a_in != b_in:
            t = (near - a[2]) / (b[2] - a[2])
            p = a + t * (b - a)
            p[2] = near
            out.append(p)
    return out


def clip_near(view_tris, near=NEAR_PLANE):
    """Clip view-space triangles to z >= near.

    Returns clipped triangles and, for each, the index of its source triangle;
    output stays sorted by source index so depth-tie order is preserved.
    """
    front = view_tris[:, :, 2] >= near
    count = front.sum(axis=1)
    whole = np.nonzero(count == 3)[0]
    partial = np.nonzero((count > 0) & (count < 3))[0]
    if not len(partial):
        return view_tris[whole], whole
    pieces, src = [view_tris[whole]], [whole]
    for t in partial:
        poly = _clip_polygon(list(view_tris[t]), near)
        fan = [[poly[0], poly[k], poly[k + 1]] for k in range(1, len(poly) - 1)]
        pieces.append(np.asarray(fan).reshape(-1, 3, 3))
        src.append(np.full(len(fan), t))
    tris, idx = np.concatenate(pieces), np.concatenate(src)
    order = np.argsort(idx, kind="stable")
    return tris[order], idx[order]


def screen_triangles(mesh: LabeledMesh, camera: CameraSpec):
    """Project a mesh: (sx, sy, inv_z, source_index), each (K, 3) / (K,)."""
    if not len(mesh):
        empty = np.zeros((0, 3))
        return empty, empty, empty, np.zeros(0, np.int64)
    view = camera.to_view(mesh.triangles)
    view, src = clip_near(view)
    sx, sy = camera.view_to_screen(view)
    return sx, sy, 1.0 / view[..., 2], src


# ---------------------------------------------------------------- passes

def rasterize(mesh: LabeledMesh, scene: SceneSpec, background=None) -> RenderOutput:
    """Render colour, mask and depth in a single z-buffered pass."""
    cam = scene.camera
    h, w = cam.image_height, cam.image_width
    if background is None:
        background = synth_background(scene.background_mode, scene.background_seed, cam)
    rgb = np.array(background, dtype=np.uint8, copy=True)
    mask = np.zeros((h, w), np.uint8)
    depth = np.full((h, w), np.inf)
    sx, sy, inv_z, src = screen_triangles(mesh, cam)
    if len(src):
        colors = triangle_colors(mesh, scene)[src]
        labels = mesh.labels[src]
        rasterize_triangles(np.ascontiguousarray(sx), np.ascontiguousarray(sy),
                            np.ascontiguousarray(inv_z), np.ascontiguousarray(colors),
                            np.ascontiguousarray(labels), rgb, mask, depth)
    return RenderOutput(rgb, mask, depth)


def render_id_buffer(mesh: LabeledMesh, camera: CameraSpec):
    """Second, separately coded pass recording the z-winning triangle index.

    Used to audit the colour pass: the defect mask must equal the set of
    pixels whose winner carries the defect label.  Returns (ids, depth) with
    -1 / +inf where nothing is drawn.
    """
    h, w = camera.image_height, camera.image_width
    ids = np.full((h, w), -1, np.int64)
    depth = np.full((h, w), np.inf)
    sx, sy, inv_z, src = screen_triangles(mesh, camera)
    cy = np.arange(h, dtype=np.float64)[:, None] + 0.5
    cx = np.arange(w, dtype=np.float64)[None, :] + 0.5
    for k in range(len(src)):
        xs, ys, zs = [float(v) for v in sx[k]], [float(v) for v in sy[k]], [float(v) for v in inv_z[k]]
        signed = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (ys[1] - ys[0]) * (xs[2] - xs[0])
        if signed == 0.0 or not np.isfinite(signed):
            continue
        order = (0, 1, 2) if signed > 0 else (0, 2, 1)
        xs, ys, zs = [xs[o] for o in order], [ys[o] for o in order], [zs[o] for o in order]
        area = abs(signed)
        lo_x, hi_x = min(xs), max(xs)
        lo_y, hi_y = min(ys), max(ys)
        cols = (cx[0] >= lo_x) & (cx[0] <= hi_x)
        rows = (cy[:, 0] >= lo_y) & (cy[:, 0] <= hi_y)
        if not cols.any() or not rows.any():
            continue
        r0, r1 = np.nonzero(rows)[0][[0, -1]]
        c0, c1 = np.nonzero(cols)[0][[0, -1]]
        px, py = cx[:, c0:c1 + 1], cy[r0:r1 + 1]
        covered = np.ones((r1 - r0 + 1, c1 - c0 + 1), bool)
        weights = []
        for a, b in ((1, 2), (2, 0), (0, 1)):
            e = (xs[b] - xs[a]) * (py - ys[a]) - (ys[b] - ys[a]) * (px - xs[a])
            dy, dx = ys[b] - ys[a], xs[b] - xs[a]
            owns_zero = dy < 0.0 or (dy == 0.0 and dx > 0.0)
            covered &= (e > 0.0) | ((e == 0.0) & owns_zero)
            weights.append(e)
        if not covered.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            d = area / (weights[0] * zs[0] + weights[1] * zs[1] + weights[2] * zs[2])
        box = (slice(r0, r1 + 1), slice(c0, c1 + 1))
        win = covered & (d < depth[box])
        depth[box][win] = d[win]
        ids[box][win] = src[k]
    return ids, depth


def render_scene(scene: SceneSpec, mesh: LabeledMesh | None = None) -> RenderOutput:
    from .scene import build_mesh

    if mesh is None:
        mesh = build_mesh(scene.turbine, scene.defect)
    return rasterize(mesh, scene)


def defect_winner_mask(mesh: LabeledMesh, ids: np.ndarray) -> np.ndarray:
    out = np.zeros(ids.shape, np.uint8)
    hit = ids >= 0
    out[hit] = np.where(mesh.labels[ids[hit]] == Label.DEFECT, 255, 0)
    return out
