"""Dataset plumbing: manifests, fold splits, episode sampling and the
synthetic shape-family generator.

Synthetic classes are shape families with class-specific hue bands on muted
textured backgrounds. Each image also contains distractor shapes from other
classes (drawn in their own hue bands, never in the mask), so a useful
prototype has to be class-discriminative rather than a foreground detector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import ArgumentError, ParseError, SamplingError
from .pnm import read_image_ppm, read_mask_pgm, write_image_ppm, write_mask_pgm
from .resample import resize_image_bilinear, resize_mask_nearest

MANIFEST_VERSION = 1

SHAPE_NAMES = ("disk", "square", "triangle", "ring", "cross", "bar", "lshape", "diamond")


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    mask_path: Path
    class_id: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: dict[int, str]

    def by_class(self) -> dict[int, list[ManifestEntry]]:
        grouped: dict[int, list[ManifestEntry]] = {}
        for e in self.entries:
            grouped.setdefault(e.class_id, []).append(e)
        return grouped

    def n_classes(self) -> int:
        return len(self.class_names)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    doc = {
        "version": MANIFEST_VERSION,
        "classes": {str(c): n for c, n in sorted(manifest.class_names.items())},
        "entries": [
            {
                "image": str(e.image_path.relative_to(path.parent)),
                "mask": str(e.mask_path.relative_to(path.parent)),
                "class": e.class_id,
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}", offset=e.pos) from e
    if doc.get("version") != MANIFEST_VERSION:
        raise ParseError(f"{path}: unsupported manifest version {doc.get('version')}")
    class_names = {int(c): str(n) for c, n in doc.get("classes", {}).items()}
    if sorted(class_names) != list(range(len(class_names))):
        raise ParseError(f"{path}: class ids must be dense from 0, got {sorted(class_names)}")
    entries = []
    for rec in doc.get("entries", []):
        entry = ManifestEntry(
            image_path=path.parent / rec["image"],
            mask_path=path.parent / rec["mask"],
            class_id=int(rec["class"]),
        )
        if entry.class_id not in class_names:
            raise ParseError(f"{path}: entry references unknown class {entry.class_id}")
        for p in (entry.image_path, entry.mask_path):
            if not p.exists():
                raise ParseError(f"{path}: referenced file does not exist: {p}")
        entries.append(entry)
    return DatasetManifest(entries=entries, class_names=class_names)


def exclude_classes(manifest: DatasetManifest, banned: set[int]) -> DatasetManifest:
    """Drop entries of the banned classes; class names stay intact."""
    return DatasetManifest(
        entries=[e for e in manifest.entries if e.class_id not in banned],
        class_names=dict(manifest.class_names),
    )


# -- fold protocol -----------------------------------------------------------

@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    n_folds: int = 4

    def __post_init__(self):
        if not 0 <= self.fold_id < self.n_folds:
            raise ArgumentError(f"fold_id {self.fold_id} out of range for {self.n_folds} folds")


def fold_split(n_classes: int, fold: FoldSpec) -> tuple[list[int], list[int]]:
    """Contiguous-block split into (train class ids, test class ids)."""
    if n_classes % fold.n_folds != 0:
        raise ArgumentError(f"{n_classes} classes not divisible into {fold.n_folds} folds")
    per = n_classes // fold.n_folds
    test = list(range(fold.fold_id * per, (fold.fold_id + 1) * per))
    train = [c for c in range(n_classes) if c not in set(test)]
    return train, test


# -- episodes ------------------------------------------------------------------

@dataclass
class Episode:
    support: list[tuple[Tensor, Tensor]]  # k pairs of (image (3,S,S), mask (1,S,S))
    query_image: Tensor
    query_mask: Tensor  # (1,S,S) at model resolution
    class_id: int
    support_paths: list[str] = field(default_factory=list)
    query_path: str = ""
    query_mask_full: np.ndarray | None = None  # native-resolution ground truth


def _episode_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & ((1 << 64) - 1))))


def sample_episode(
    manifest: DatasetManifest, class_ids: list[int], k: int, rng_seed: int, side: int
) -> Episode:
    """Uniformly pick a class, then k support images and one distinct query."""
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if not class_ids:
        raise ArgumentError("no classes to sample from")
    rng = _episode_rng(rng_seed)
    grouped = manifest.by_class()
    ordered = sorted(class_ids)
    class_id = int(ordered[rng.integers(len(ordered))])
    pool = grouped.get(class_id, [])
    if len(pool) < k + 1:
        raise SamplingError(
            f"class {class_id} ({manifest.class_names.get(class_id, '?')}) has {len(pool)} images, needs {k + 1}"
        )
    picks = rng.choice(len(pool), size=k + 1, replace=False)

    def load(entry: ManifestEntry) -> tuple[Tensor, Tensor, np.ndarray]:
        image = read_image_ppm(entry.image_path)
        mask = read_mask_pgm(entry.mask_path)
        if mask.sum() == 0:
            raise SamplingError(f"mask has no foreground pixels: {entry.mask_path}")
        return (
            Tensor(resize_image_bilinear(image, side)),
            Tensor(resize_mask_nearest(mask, side)[None]),
            mask,
        )

    support = []
    support_paths = []
    for idx in picks[:k]:
        img, msk, _ = load(pool[idx])
        support.append((img, msk))
        support_paths.append(str(pool[idx].image_path))
    q_entry = pool[picks[k]]
    q_img, q_msk, q_full = load(q_entry)
    return Episode(
        support=support,
        query_image=q_img,
        query_mask=q_msk,
        class_id=class_id,
        support_paths=support_paths,
        query_path=str(q_entry.image_path),
        query_mask_full=q_full,
    )


# -- synthetic dataset ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 8
    imgs_per_class: int = 40
    side: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_classes <= len(SHAPE_NAMES):
            raise ArgumentError(f"n_classes must be in 1..{len(SHAPE_NAMES)}, got {self.n_classes}")
        if self.imgs_per_class < 1 or self.side < 16:
            raise ArgumentError("need imgs_per_class >= 1 and side >= 16")


FG_FRACTION_MIN = 0.02
FG_FRACTION_MAX = 0.60


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    out = np.zeros((3,) + np.shape(h))
    for idx, (r, g, b) in enumerate(table):
        sel = i == idx
        out[0] = np.where(sel, r, out[0])
        out[1] = np.where(sel, g, out[1])
        out[2] = np.where(sel, b, out[2])
    return out


def _shape_mask(kind: str, side: int, cx: float, cy: float, r: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = np.cos(theta) * dx + np.sin(theta) * dy
    v = -np.sin(theta) * dx + np.cos(theta) * dy
    if kind == "disk":
        return dx * dx + dy * dy <= r * r
    if kind == "square":
        return np.maximum(np.abs(u), np.abs(v)) <= 0.85 * r
    if kind == "triangle":
        return (np.abs(u) <= 0.55 * (v + r)) & (v <= 0.7 * r)
    if kind == "ring":
        d2 = dx * dx + dy * dy
        return ((0.55 * r) ** 2 <= d2) & (d2 <= r * r)
    if kind == "cross":
        return ((np.abs(u) <= 0.33 * r) & (np.abs(v) <= r)) | ((np.abs(v) <= 0.33 * r) & (np.abs(u) <= r))
    if kind == "bar":
        return (np.abs(u) <= r) & (np.abs(v) <= 0.35 * r)
    if kind == "lshape":
        vertical = (u >= -r) & (u <= -0.25 * r) & (np.abs(v) <= r)
        bottom = (np.abs(u) <= r) & (v >= 0.25 * r) & (v <= r)
        return vertical | bottom
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= r
    raise ArgumentError(f"unknown shape kind {kind!r}")


def _class_color(rng: np.random.Generator, class_id: int, n_classes: int) -> np.ndarray:
    hue = (class_id + 0.5) / n_classes + rng.uniform(-0.035, 0.035)
    sat = rng.uniform(0.6, 0.95)
    val = rng.uniform(0.6, 0.95)
    return _hsv_to_rgb(np.float64(hue), np.float64(sat), np.float64(val))


def _paint(image: np.ndarray, region: np.ndarray, color: np.ndarray, rng: np.random.Generator) -> None:
    noise = rng.normal(0.0, 0.02, size=(3, int(region.sum())))
    image[:, region] = np.clip(color[:, None] + noise, 0.0, 1.0)


def _render_image(rng: np.random.Generator, cfg: SynthConfig, class_id: int) -> tuple[np.ndarray, np.ndarray]:
    side = cfg.side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / side

    base = rng.uniform(0.25, 0.7)
    image = np.full((3, side, side), base)
    for _ in range(2):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        image += rng.uniform(0.03, 0.09) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)[None]
    image += rng.uniform(-0.05, 0.05, size=(3, 1, 1))  # mild color cast
    image += rng.normal(0.0, 0.02, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    others = [c for c in range(cfg.n_classes) if c != class_id]
    for _ in range(int(rng.integers(1, 4))):
        d_class = int(rng.choice(others)) if others else class_id
        r = rng.uniform(0.08, 0.14) * side
        cx, cy = rng.uniform(r + 1, side - r - 1, size=2)
        theta = rng.uniform(0, 2 * np.pi)
        region = _shape_mask(SHAPE_NAMES[d_class], side, cx, cy, r, theta)
        _paint(image, region, _class_color(rng, d_class, cfg.n_classes), rng)

    kind = SHAPE_NAMES[class_id]
    lo, hi = FG_FRACTION_MIN, FG_FRACTION_MAX
    for _ in range(64):
        r = rng.uniform(0.11, 0.22) * side
        cx, cy = rng.uniform(r + 1, side - r - 1, size=2)
        theta = rng.uniform(0, 2 * np.pi) if kind == "bar" else rng.uniform(-0.3, 0.3)
        region = _shape_mask(kind, side, cx, cy, r, theta)
        frac = region.mean()
        if lo <= frac <= hi:
            break
    else:
        raise SamplingError(f"could not place a {kind} within foreground bounds")
    _paint(image, region, _class_color(rng, class_id, cfg.n_classes), rng)
    return image, region.astype(np.float64)


def synth_generate(out_dir: str | Path, cfg: SynthConfig) -> DatasetManifest:
    """Write PPM/PGM pairs plus manifest.json; byte-deterministic in the seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for class_id in range(cfg.n_classes):
        for idx in range(cfg.imgs_per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, class_id, idx])))
            image, mask = _render_image(rng, cfg, class_id)
            image_path = out / f"class{class_id}_img{idx:03d}.ppm"
            mask_path = out / f"class{class_id}_img{idx:03d}_mask.pgm"
            write_image_ppm(image_path, image)
            write_mask_pgm(mask_path, mask)
            entries.append(ManifestEntry(image_path=image_path, mask_path=mask_path, class_id=class_id))
    manifest = DatasetManifest(
        entries=entries, class_names={c: SHAPE_NAMES[c] for c in range(cfg.n_classes)}
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest
