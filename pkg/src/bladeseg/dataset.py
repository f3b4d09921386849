"""On-disk dataset: binary PPM/PGM pairs plus a JSON-lines manifest.

Layout under ``out_dir``::

    img/<id>.ppm        P6, maxval 255
    mask/<id>.pgm       P5, maxval 255; 0 = background, 255 = defect
    manifest.jsonl      header line, then one record per sample, id order
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import GENERATOR_VERSION
from .errors import InvalidK, MalformedHeader, TruncatedPayload
from .renderer import rasterize
from .scene import DefectKind, GenerationConfig, SceneSpec, build_mesh, load_presets, sample_scene

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
ID_WIDTH = 5


# ---------------------------------------------------------------- PNM

def _header(magic, width, height):
    return f"{magic}\n{width} {height}\n255\n".encode("ascii")


def write_image_ppm(rgb) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise ValueError(f"expected an H x W x 3 image, got shape {rgb.shape}")
    return _header("P6", rgb.shape[1], rgb.shape[0]) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def write_mask_pgm(mask) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"expected an H x W mask, got shape {mask.shape}")
    if not np.all((mask == 0) | (mask == 255)):
        raise ValueError("mask values must be 0 or 255")
    return _header("P5", mask.shape[1], mask.shape[0]) + np.ascontiguousarray(mask, dtype=np.uint8).tobytes()


def _parse_pnm(data: bytes, magic: bytes):
    if data[:2] != magic:
        raise MalformedHeader(f"expected magic {magic!r}, got {data[:2]!r}")
    fields_, pos = [], 2
    while len(fields_) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token:
            raise MalformedHeader("header ended early")
        if not token.isdigit():
            raise MalformedHeader(f"non-numeric header field {token!r}")
        fields_.append(int(token))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedHeader("missing whitespace after maxval")
    width, height, maxval = fields_
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad dimensions {width} x {height}")
    if maxval != 255:
        raise MalformedHeader(f"only maxval 255 is supported, got {maxval}")
    return width, height, pos + 1


def read_image_ppm(data: bytes) -> np.ndarray:
    width, height, start = _parse_pnm(data, b"P6")
    need = width * height * 3
    if len(data) - start < need:
        raise TruncatedPayload(f"P6 {width}x{height} needs {need} bytes, got {len(data) - start}")
    return np.frombuffer(data, np.uint8, count=need, offset=start).reshape(height, width, 3).copy()


def read_mask_pgm(data: bytes) -> np.ndarray:
    width, height, start = _parse_pnm(data, b"P5")
    need = width * height
    if len(data) - start < need:
        raise TruncatedPayload(f"P5 {width}x{height} needs {need} bytes, got {len(data) - start}")
    return np.frombuffer(data, np.uint8, count=need, offset=start).reshape(height, width).copy()


# ---------------------------------------------------------------- manifest

@dataclass
class SampleRecord:
    id: str
    image_path: str
    mask_path: str
    defect_kind: DefectKind
    scene: SceneSpec

    def to_json(self):
        return {
            "id": self.id,
            "image_path": self.image_path,
            "mask_path": self.mask_path,
            "defect_kind": self.defect_kind.value,
            "scene": self.scene.to_dict(),
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["id"], d["image_path"], d["mask_path"], DefectKind(d["defect_kind"]),
                   SceneSpec.from_dict(d["scene"]))


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    master_seed: int = 0
    generator_version: str = GENERATOR_VERSION
    image_width: int = 128
    image_height: int = 128

    @property
    def ids(self):
        return [r.id for r in self.records]

    def by_id(self):
        return {r.id: r for r in self.records}

    def kind_counts(self):
        counts = {}
        for r in self.records:
            counts[r.defect_kind.value] = counts.get(r.defect_kind.value, 0) + 1
        return counts

    def dumps(self) -> str:
        header = {
            "manifest": "bladeseg",
            "generator_version": self.generator_version,
            "master_seed": self.master_seed,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "count": len(self.records),
        }
        lines = [json.dumps(header, separators=(",", ":"))]
        lines += [json.dumps(r.to_json(), separators=(",", ":")) for r in self.records]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Manifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty manifest")
        header = json.loads(lines[0])
        if header.get("manifest") != "bladeseg":
            raise ValueError("first manifest line is not a bladeseg header")
        records = [SampleRecord.from_json(json.loads(ln)) for ln in lines[1:]]
        if len(records) != header["count"]:
            raise ValueError(f"manifest header says {header['count']} records, found {len(records)}")
        return cls(records, header["master_seed"], header["generator_version"],
                   header["image_width"], header["image_height"])

    def save(self, out_dir):
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def load_manifest(data_dir) -> Manifest:
    path = Path(data_dir) / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
    return Manifest.loads(text)


def load_sample(data_dir, record: SampleRecord):
    """(rgb uint8 H x W x 3, mask uint8 H x W) for one record."""
    root = Path(data_dir)
    try:
        rgb = read_image_ppm((root / record.image_path).read_bytes())
        mask = read_mask_pgm((root / record.mask_path).read_bytes())
    except OSError as exc:
        raise OSError(f"cannot read sample {record.id} under {root}: {exc}") from exc
    return rgb, mask


# ---------------------------------------------------------------- generation

def sample_id(index: int, count: int) -> str:
    return str(index).zfill(max(ID_WIDTH, len(str(count - 1))))


def render_sample(scene: SceneSpec):
    out = rasterize(build_mesh(scene.turbine, scene.defect), scene)
    return out.rgb, out.mask


def generate_dataset(gen_config: GenerationConfig | None, count: int = 642, master_seed: int = 0,
                     out_dir=".", threads: int = 1) -> Manifest:
    """Render ``count`` samples into ``out_dir`` and write the manifest.

    Samples are independent (seeded by (master_seed, index)); with
    ``threads > 1`` they render concurrently but the manifest is assembled in
    index order, so the output tree does not depend on scheduling.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    cfg = (gen_config or GenerationConfig()).validate()
    root = Path(out_dir)
    try:
        (root / "img").mkdir(parents=True, exist_ok=True)
        (root / "mask").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directories under {root}: {exc}") from exc
    presets = load_presets()

    def one(index):
        scene = sample_scene(master_seed, index, cfg, presets)
        rgb, mask = render_sample(scene)
        sid = sample_id(index, count)
        rec = SampleRecord(sid, f"img/{sid}.ppm", f"mask/{sid}.pgm", scene.defect.kind, scene)
        try:
            (root / rec.image_path).write_bytes(write_image_ppm(rgb))
            (root / rec.mask_path).write_bytes(write_mask_pgm(mask))
        except OSError as exc:
            raise OSError(f"cannot write sample {sid} under {root}: {exc}") from exc
        return rec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(count)))
    else:
        records = [one(i) for i in range(count)]
    manifest = Manifest(records, master_seed, GENERATOR_VERSION, cfg.width, cfg.height)
    manifest.save(root)
    log.info("wrote %d samples to %s", count, root)
    return manifest


# ---------------------------------------------------------------- partitions

def _shuffled_ids(ids, seed):
    ids = sorted(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    return [ids[i] for i in order]


def _ids_of(manifest_or_ids):
    return manifest_or_ids.ids if isinstance(manifest_or_ids, Manifest) else list(manifest_or_ids)


def split(manifest, train_fraction: float = 0.75, seed: int = 0):
    """Shuffled train/test partition; train gets floor(fraction * N) ids."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ids = _shuffled_ids(_ids_of(manifest), seed)
    n_train = math.floor(train_fraction * len(ids))
    return ids[:n_train], ids[n_train:]


def kfold(manifest, k: int = 5, seed: int = 0):
    """k disjoint folds covering all ids; the first N mod k folds get one extra."""
    ids = _shuffled_ids(_ids_of(manifest), seed)
    n = len(ids)
    if k < 2 or k > n:
        raise InvalidK(f"k must satisfy 2 <= k <= N={n}, got {k}")
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(ids[start:start + size])
        start += size
    return folds
