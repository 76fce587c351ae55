"""Synthetic paired-modality scenes with controllable complementarity.

Modality A is a visible-like render (objects over a shaded, noisy
background); modality B is a thermal-like render (bright objects over a
dark background). Each object is visible in A, in B, or in both. With
complementarity ``p`` an object is single-modality with probability ``p``,
split evenly between A-only and B-only.

Every random draw for sample ``i`` comes from a counter-based Philox stream
keyed by ``(seed, i)``, so samples can be generated in any order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, CorruptionError
from .tensor import tensor_from_bytes, tensor_to_bytes

CLASS_NAMES = ("square", "disk", "cross")
VISIBILITY = ("a", "b", "both")
SAMPLE_MAGIC = b"SDS1"


@dataclass
class GenConfig:
    image_size: int = 64
    min_objects: int = 1
    max_objects: int = 4
    num_classes: int = 3
    complementarity: float = 0.5
    noise: float = 0.05
    min_size: int = 8
    max_size: int = 20
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if not 0.0 <= self.complementarity <= 1.0:
            raise ConfigError(f"complementarity must lie in [0, 1], got {self.complementarity}")
        if not 1 <= self.num_classes <= len(CLASS_NAMES):
            raise ConfigError(f"num_classes must lie in 1..{len(CLASS_NAMES)}, got {self.num_classes}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if not 2 <= self.min_size <= self.max_size <= self.image_size:
            raise ConfigError("need 2 <= min_size <= max_size <= image_size")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")


@dataclass
class GroundTruth:
    cls: int
    box: tuple               # (x_min, y_min, x_max, y_max), pixel edges
    visibility: str          # "a", "b" or "both"


@dataclass
class SceneSample:
    index: int
    img_a: np.ndarray        # (1, H, W)
    img_b: np.ndarray
    objects: list = field(default_factory=list)
    dropped: int = 0         # objects abandoned after failed placement

    @property
    def boxes(self):
        return [(o.cls, o.box) for o in self.objects]


def sample_rng(seed, index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def shape_mask(cls, size):
    """Boolean ``size x size`` footprint of a class's shape."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    if cls == 0:
        return np.ones((size, size), dtype=bool)
    if cls == 1:
        r = size / 2.0
        return (xx - r) ** 2 + (yy - r) ** 2 <= r * r
    bar = max(size // 3, 1)
    lo = (size - bar) // 2
    m = np.zeros((size, size), dtype=bool)
    m[lo:lo + bar, :] = True
    m[:, lo:lo + bar] = True
    return m


def _place(rng, cfg, sizes):
    """Non-overlapping top-left corners (1 px gap) for each size, or ``None`` on failure."""
    placed = []
    for s in sizes:
        for _ in range(cfg.max_retries):
            x = int(rng.integers(0, cfg.image_size - s + 1))
            y = int(rng.integers(0, cfg.image_size - s + 1))
            if all(x + s + 1 <= px or px + ps + 1 <= x or y + s + 1 <= py or py + ps + 1 <= y
                   for px, py, ps in placed):
                placed.append((x, y, s))
                break
        else:
            return None
    return placed


def _background_a(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    gx, gy, ph = rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(0, 2 * np.pi)
    return 0.3 + gx * xx + gy * yy + 0.05 * np.sin(2 * np.pi * 3 * xx + ph)


def generate_scene(cfg, index):
    """Render sample ``index``; a pure function of ``(cfg, index)``."""
    rng = sample_rng(cfg.seed, index)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    classes = rng.integers(0, cfg.num_classes, size=n_obj)
    sizes = rng.integers(cfg.min_size, cfg.max_size + 1, size=n_obj)
    placed = _place(rng, cfg, sizes)
    dropped = 0
    while placed is None:
        n_obj -= 1
        dropped += 1
        classes, sizes = classes[:n_obj], sizes[:n_obj]
        placed = _place(rng, cfg, sizes) if n_obj else []

    size = cfg.image_size
    img_a = _background_a(rng, size)
    img_b = np.zeros((size, size))
    objects = []
    for cls, (x, y, s) in zip(classes, placed):
        u = rng.random()
        if u < cfg.complementarity:
            vis = "a" if rng.random() < 0.5 else "b"
        else:
            vis = "both"
        level_a = rng.uniform(0.7, 1.0)
        level_b = rng.uniform(0.6, 1.0)
        mask = shape_mask(int(cls), int(s))
        if vis in ("a", "both"):
            img_a[y:y + s, x:x + s][mask] = level_a
        if vis in ("b", "both"):
            img_b[y:y + s, x:x + s][mask] = level_b
        objects.append(GroundTruth(int(cls), (float(x), float(y), float(x + s), float(y + s)), vis))
    img_a = img_a + cfg.noise * rng.standard_normal((size, size))
    img_b = img_b + cfg.noise * rng.standard_normal((size, size))
    # keep values exactly representable in the f32 file format
    img_a = img_a.astype(np.float32).astype(np.float64)[None]
    img_b = img_b.astype(np.float32).astype(np.float64)[None]
    return SceneSample(index, img_a, img_b, objects, dropped)


# on-disk format --------------------------------------------------------------

def sample_to_bytes(sample):
    return (SAMPLE_MAGIC + struct.pack("<II", sample.index, 2)
            + tensor_to_bytes(sample.img_a) + tensor_to_bytes(sample.img_b))


def sample_from_bytes(data, index=None):
    try:
        if data[:4] != SAMPLE_MAGIC:
            raise CorruptionError("bad sample magic")
        idx, count = struct.unpack_from("<II", data, 4)
        if count != 2:
            raise CorruptionError(f"expected 2 tensors, header says {count}")
        img_a, off = tensor_from_bytes(data, 12)
        img_b, off = tensor_from_bytes(data, off)
        if off != len(data):
            raise CorruptionError("trailing bytes after sample tensors")
    except (CorruptionError, struct.error) as exc:
        raise CorruptionError(f"sample {index}: {exc}", index=index) from None
    return idx, img_a, img_b


def _stats(samples):
    per_class = {str(c): 0 for c in range(len(CLASS_NAMES))}
    per_vis = {v: 0 for v in VISIBILITY}
    for s in samples:
        for o in s.objects:
            per_class[str(o.cls)] += 1
            per_vis[o.visibility] += 1
    return {"objects": sum(per_vis.values()), "per_class": per_class, "per_visibility": per_vis,
            "dropped": sum(s.dropped for s in samples)}


def write_dataset(cfg, count, directory, start=0):
    """Write samples ``start .. start+count-1``; the manifest is written last."""
    os.makedirs(directory, exist_ok=True)
    samples = [generate_scene(cfg, start + i) for i in range(count)]
    entries = []
    for s in samples:
        name = f"sample_{s.index:06d}.bin"
        data = sample_to_bytes(s)
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(data)
        entries.append({"index": s.index, "file": name, "sha256": hashlib.sha256(data).hexdigest(),
                        "objects": len(s.objects), "dropped": s.dropped})
    with open(os.path.join(directory, "annotations.jsonl"), "w") as fh:
        for s in samples:
            for o in s.objects:
                x0, y0, x1, y1 = o.box
                fh.write(json.dumps({"index": s.index, "class": o.cls, "x_min": x0, "y_min": y0,
                                     "x_max": x1, "y_max": y1, "visibility": o.visibility},
                                    sort_keys=True) + "\n")
    manifest = {"format": "seadate-dataset", "version": 1, "config": asdict(cfg), "count": count,
                "start": start, "samples": entries, "stats": _stats(samples)}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return Dataset(directory, manifest, samples)


class Dataset:
    def __init__(self, directory, manifest, samples):
        self.directory = directory
        self.manifest = manifest
        self.samples = samples

    @property
    def config(self):
        return GenConfig(**self.manifest["config"])

    @property
    def num_classes(self):
        return self.manifest["config"]["num_classes"]

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def checksums(self):
        return [e["sha256"] for e in self.manifest["samples"]]


def load_dataset(directory):
    """Load and verify a dataset directory written by :func:`write_dataset`."""
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise CorruptionError(f"no manifest.json in {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    entries = manifest["samples"]
    if len(entries) != manifest["count"]:
        raise CorruptionError(f"manifest lists {len(entries)} samples but count is {manifest['count']}")
    annotations = {}
    with open(os.path.join(directory, "annotations.jsonl")) as fh:
        for line in fh:
            if line.strip():
                a = json.loads(line)
                annotations.setdefault(a["index"], []).append(
                    GroundTruth(a["class"], (a["x_min"], a["y_min"], a["x_max"], a["y_max"]), a["visibility"]))
    samples = []
    for e in entries:
        fpath = os.path.join(directory, e["file"])
        try:
            with open(fpath, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise CorruptionError(f"sample {e['index']}: cannot read {fpath}: {exc}", index=e["index"]) from None
        if hashlib.sha256(data).hexdigest() != e["sha256"]:
            raise CorruptionError(f"sample {e['index']}: checksum mismatch in {e['file']}", index=e["index"])
        idx, img_a, img_b = sample_from_bytes(data, index=e["index"])
        objs = annotations.get(idx, [])
        if len(objs) != e["objects"]:
            raise CorruptionError(f"sample {idx}: {len(objs)} annotations, manifest says {e['objects']}", index=idx)
        samples.append(SceneSample(idx, img_a, img_b, objs, e.get("dropped", 0)))
    return Dataset(directory, manifest, samples)
