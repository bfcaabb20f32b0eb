"""RGB-D ingestion, hole filling, degradation, patching and synthetic scenes."""
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .imaging import ColorImage, DepthMap, bicubic_resample
from .network import SCALES

DEPTH_SUFFIX = "_depth"
MANIFEST_NAME = "manifest.txt"
RAW_DEPTH_MAX = 65535


@dataclass(frozen=True, eq=False)
class RgbdPair:
    color: ColorImage
    depth: DepthMap
    source_id: str = ""

    def __post_init__(self):
        if self.color.shape != self.depth.shape:
            raise ValueError(f"{self.source_id}: color {self.color.shape} and depth "
                             f"{self.depth.shape} are not registered")

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True, eq=False)
class SrSample:
    lr_depth: DepthMap
    hr_color: ColorImage
    hr_depth_gt: DepthMap
    scale: int
    source_id: str = ""

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale {self.scale} not in {SCALES}")
        if self.hr_color.shape != self.hr_depth_gt.shape:
            raise ValueError("ground truth and color dims differ")
        lh, lw = self.lr_depth.shape
        if (lh * self.scale, lw * self.scale) != self.hr_depth_gt.shape:
            raise ValueError(f"HR {self.hr_depth_gt.shape} != {self.scale} x LR {self.lr_depth.shape}")


@dataclass(frozen=True, eq=False)
class PatchSet:
    patches: list
    patch_size: int
    stride: int
    augmented: bool = False

    def __post_init__(self):
        for p in self.patches:
            if p.shape != (self.patch_size, self.patch_size):
                raise ValueError(f"patch {p.source_id} has shape {p.shape}")

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)


# --- PNG I/O ------------------------------------------------------------

def save_rgbd(pair, color_path, depth_path):
    rgb = np.round(pair.color.values * 255.0).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(color_path)
    raw = np.round(pair.depth.values * RAW_DEPTH_MAX).astype(np.uint16)
    raw[~pair.depth.valid_mask] = 0
    Image.fromarray(raw).save(depth_path)


def save_depth_png(depth, path):
    values = getattr(depth, "values", depth)
    raw = np.round(np.clip(values, 0.0, 1.0) * RAW_DEPTH_MAX).astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_depth_png(path, raw_max=RAW_DEPTH_MAX):
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read depth file {path}: {exc}") from exc
    if raw.ndim != 2:
        raise ValueError(f"{path}: depth PNG must be single-channel, got shape {raw.shape}")
    raw = raw.astype(np.float64)
    mask = raw > 0
    return DepthMap(np.clip(raw / raw_max, 0.0, 1.0), mask, unit_scale=float(raw_max))


def read_color_png(path):
    try:
        with Image.open(path) as im:
            rgb = np.array(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read color file {path}: {exc}") from exc
    return ColorImage(rgb.astype(np.float64) / 255.0)


def load_rgbd(color_path, depth_path, raw_max=RAW_DEPTH_MAX):
    """Load an 8-bit RGB / 16-bit depth PNG pair; zero depth is marked invalid."""
    color = read_color_png(color_path)
    depth = read_depth_png(depth_path, raw_max)
    if color.shape != depth.shape:
        raise ValueError(f"{color_path} is {color.shape} but {depth_path} is {depth.shape}")
    stem = os.path.splitext(os.path.basename(color_path))[0]
    return RgbdPair(color, depth, stem)


def discover_pairs(directory):
    """``(stem, color_path, depth_path)`` triples, sorted by stem.

    Uses ``manifest.txt`` (``color,depth`` per line, relative to the
    directory) when present, else matches ``<stem>.png`` with
    ``<stem>_depth.png``.
    """
    manifest = os.path.join(directory, MANIFEST_NAME)
    out = []
    if os.path.exists(manifest):
        with open(manifest) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [s.strip() for s in line.split(",")]
                if len(parts) != 2:
                    raise ValueError(f"{manifest}:{lineno}: expected 'color,depth'")
                c, d = (p if os.path.isabs(p) else os.path.join(directory, p) for p in parts)
                out.append((os.path.splitext(os.path.basename(c))[0], c, d))
    else:
        for name in os.listdir(directory):
            stem, ext = os.path.splitext(name)
            if ext.lower() != ".png" or stem.endswith(DEPTH_SUFFIX):
                continue
            depth = os.path.join(directory, stem + DEPTH_SUFFIX + ext)
            if os.path.exists(depth):
                out.append((stem, os.path.join(directory, name), depth))
    return sorted(out)


def load_directory(directory):
    return [load_rgbd(c, d) for _, c, d in discover_pairs(directory)]


def write_pairs(pairs, directory):
    """Write pairs as ``<id>.png`` / ``<id>_depth.png`` plus a manifest."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for pair in pairs:
        cname = f"{pair.source_id}.png"
        dname = f"{pair.source_id}{DEPTH_SUFFIX}.png"
        save_rgbd(pair, os.path.join(directory, cname), os.path.join(directory, dname))
        lines.append(f"{cname},{dname}\n")
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        fh.writelines(lines)


# --- preprocessing ------------------------------------------------------

def _box3(values, weights):
    pv = np.pad(values * weights, 1)
    pw = np.pad(weights, 1)
    h, w = values.shape
    s = sum(pv[i:i + h, j:j + w] for i in range(3) for j in range(3))
    n = sum(pw[i:i + h, j:j + w] for i in range(3) for j in range(3))
    return s, n


def complete_depth(d):
    """Fill invalid pixels by masked 3x3 mean diffusion, then smooth the fill once.

    Measured pixels are never modified.
    """
    mask = d.valid_mask
    if mask.all():
        return d
    if not mask.any():
        raise ValueError("cannot complete a depth map with no valid pixels")
    values = np.where(mask, d.values, 0.0)
    filled = mask.copy()
    while not filled.all():
        s, n = _box3(values, filled.astype(np.float64))
        front = (~filled) & (n > 0)
        values[front] = s[front] / n[front]
        filled |= front
    s, n = _box3(values, np.ones_like(values))
    hole = ~mask
    values[hole] = s[hole] / n[hole]
    return DepthMap(values, np.ones_like(mask), d.unit_scale)


def make_sr_sample(pair, scale):
    """Bicubic-degrade the ground truth by ``scale``."""
    if scale not in SCALES:
        raise ValueError(f"scale {scale} not in {SCALES}")
    h, w = pair.shape
    if h % scale or w % scale:
        raise ValueError(f"{pair.source_id}: {h}x{w} is not divisible by scale {scale}")
    gt = pair.depth
    lr = np.clip(bicubic_resample(gt.values, h // scale, w // scale), 0.0, 1.0)
    return SrSample(DepthMap(lr, unit_scale=gt.unit_scale), pair.color, gt, scale, pair.source_id)


def patch_count(h, w, size, stride):
    return ((h - size) // stride + 1) * ((w - size) // stride + 1)


def extract_patches(pair, size=128, stride=32):
    h, w = pair.shape
    if h < size or w < size:
        raise ValueError(f"{pair.source_id}: {h}x{w} is smaller than patch size {size}")
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            sl = (slice(r, r + size), slice(c, c + size))
            depth = DepthMap(pair.depth.values[sl], pair.depth.valid_mask[sl], pair.depth.unit_scale)
            out.append(RgbdPair(ColorImage(pair.color.values[sl]), depth,
                                f"{pair.source_id}_r{r}c{c}"))
    return PatchSet(out, size, stride)


def rotate90(pair):
    """Quarter turn: ``out[r, c] = in[W - 1 - c, r]``."""
    if pair.shape[0] != pair.shape[1]:
        raise ValueError(f"rotation needs a square patch, got {pair.shape}")
    depth = DepthMap(np.rot90(pair.depth.values, -1), np.rot90(pair.depth.valid_mask, -1),
                     pair.depth.unit_scale)
    return RgbdPair(ColorImage(np.rot90(pair.color.values, -1)), depth, pair.source_id + "_rot90")


def augment_rot90(pair):
    return [pair, rotate90(pair)]


def augment_patchset(ps):
    out = [q for p in ps for q in augment_rot90(p)]
    return PatchSet(out, ps.patch_size, ps.stride, augmented=True)


# --- synthetic scenes ---------------------------------------------------

def _distinct_colors(rng, n, min_gap=0.25):
    colors = []
    while len(colors) < n:
        c = rng.uniform(0.1, 0.9, 3)
        if all(np.abs(c - o).max() >= min_gap for o in colors):
            colors.append(c)
    return np.array(colors)


def _convex_polygon_mask(rng, h, w, yy, xx):
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    n = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.15, 0.4, n) * min(h, w)
    py, px = cy + radii * np.sin(angles), cx + radii * np.cos(angles)
    inside = np.ones((h, w), dtype=bool)
    for k in range(n):
        y0, x0, y1, x1 = py[k], px[k], py[(k + 1) % n], px[(k + 1) % n]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside


def _scene_labels(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    labels = np.zeros((h, w), dtype=np.int64)
    n_regions = int(rng.integers(3, 9))
    for k in range(1, n_regions):
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h - h // 4), rng.integers(0, w - w // 4)
            hh, ww = rng.integers(h // 6, h // 2 + 1), rng.integers(w // 6, w // 2 + 1)
            region = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        else:
            region = _convex_polygon_mask(rng, h, w, yy, xx)
        labels[region] = k
    return labels, n_regions


def synth_scene(seed, h=64, w=64, texture=0.02):
    """Deterministic piecewise-planar scene whose color edges follow its depth edges.

    Region 0 is the background; 2-7 more axis-aligned rectangles and
    convex polygons are painted over it.  Each region gets a distinct base
    depth, a mild planar slope and a distinct albedo; the color image
    adds low-amplitude texture noise.
    """
    if h < 64 or w < 64:
        raise ValueError(f"synthetic scenes need h, w >= 64, got {h}x{w}")
    rng = np.random.default_rng(seed)
    labels, n = _scene_labels(rng, h, w)
    bases = rng.permutation(np.linspace(0.2, 0.8, n))
    slopes = rng.uniform(-0.05, 0.05, (n, 2))
    albedo = _distinct_colors(rng, n)
    yy, xx = np.mgrid[0:h, 0:w]
    ny, nx = yy / h - 0.5, xx / w - 0.5
    depth = bases[labels] + slopes[labels, 0] * ny + slopes[labels, 1] * nx
    color = albedo[labels] + rng.normal(0.0, texture, (h, w, 3))
    pair = RgbdPair(ColorImage(np.clip(color, 0.0, 1.0)),
                    DepthMap(np.clip(depth, 0.0, 1.0), unit_scale=float(RAW_DEPTH_MAX)),
                    f"synth{seed:05d}")
    return pair


def synth_scene_labels(seed, h=64, w=64):
    """The region label map :func:`synth_scene` paints for ``seed``."""
    rng = np.random.default_rng(seed)
    return _scene_labels(rng, h, w)[0]
