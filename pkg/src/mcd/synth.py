"""
Synthetic AS-OCT-like corpus with ground truth for every stage.

Each sample is a dark elliptical chamber ringed by a bright anterior-segment
band (thin above, thick below) on a mid-dark background. Cells are smooth
Gaussian spots planted inside the chamber; noise is sharp-edged speckle
clusters (1-4 px) scattered both inside the chamber and outside the eye,
plus short horizontal streaks outside it. Streaks inside the chamber are
off by default: pixel-level speckle is the noise that competes with cells.
Noise never lands in the 10x10 neighbourhood of a cell.

Cell brightness is set relative to the Otsu level of the cell-free
rendering, so "dim" cells (just under that level) can be planted on
purpose to exercise threshold relaxation.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import AnnotationRecord, ground_truth, read_annotations, write_annotations
from .imagecore import histogram
from .imageio import read_gray, read_mask, write_gray, write_mask
from .mirp import otsu_threshold

DIRS = ("images", "masks_ac", "masks_segment", "annotations")
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class SynthConfig:
    width: int = 800
    height: int = 730
    background: float = 35.0
    background_sigma: float = 6.0
    chamber_intensity: float = 22.0
    chamber_sigma: float = 5.0
    # chamber centre and semi-axes as fractions of width / height
    chamber_center: tuple = (0.5, 0.45)
    chamber_axes: tuple = (0.33, 0.21)
    geometry_jitter: float = 0.06
    cornea_thickness: int = 28
    iris_thickness: int = 60
    side_thickness: int = 30
    band_intensity: float = 170.0
    band_sigma: float = 16.0
    cell_count: tuple = (3, 12)
    cell_sigma: tuple = (0.55, 1.5)
    # peak brightness as multiples of the Otsu level
    cell_peak: tuple = (1.15, 1.9)
    dim_fraction: float = 0.0
    dim_peak: tuple = (0.93, 0.98)
    cell_margin: int = 14
    cell_spacing: int = 14
    speckle_inside: tuple = (8, 20)
    streak_inside: tuple = (0, 0)
    speckle_outside: tuple = (40, 90)
    streak_outside: tuple = (5, 15)
    speckle_size: tuple = (1, 4)
    streak_length: tuple = (4, 10)
    noise_peak: tuple = (0.85, 1.9)
    noise_clearance: int = 9
    box_w: int = 10
    box_h: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("synthetic images must be at least 64x64")
        lo, hi = self.cell_count
        if not 0 <= lo <= hi:
            raise ValueError("cell_count must be an ordered non-negative range")
        if not 0 <= self.dim_fraction <= 1:
            raise ValueError("dim_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        """Build from string or native values; tuples may be given as ``"a,b"``."""
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown synth setting {key!r}")
            default = fields[key].default
            if isinstance(default, tuple):
                items = raw.split(",") if isinstance(raw, str) else list(raw)
                kind = type(default[0])
                kwargs[key] = tuple(kind(float(v)) if kind is int else kind(v) for v in items)
            elif isinstance(default, int):
                kwargs[key] = int(float(raw))
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


@dataclass
class SynthSample:
    image_id: str
    image: np.ndarray
    ac_mask_gt: np.ndarray
    segment_mask_gt: np.ndarray
    cells_gt: AnnotationRecord
    noise_points: list = field(default_factory=list)
    # per cell: (x, y, sigma, peak, dim)
    cells: list = field(default_factory=list)


def _ellipse(shape, cx, cy, ax, ay):
    ys, xs = np.ogrid[:shape[0], :shape[1]]
    return ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 <= 1.0


def _range(rng, pair):
    lo, hi = pair
    if isinstance(lo, int) and isinstance(hi, int):
        return int(rng.integers(lo, hi + 1))
    return float(rng.uniform(lo, hi))


def _inside_ellipse(x, y, cx, cy, ax, ay):
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 <= 1.0


def generate_one(cfg: SynthConfig, index: int) -> SynthSample:
    rng = np.random.default_rng([cfg.seed, index])
    H, W = cfg.height, cfg.width
    jit = lambda: 1.0 + rng.uniform(-cfg.geometry_jitter, cfg.geometry_jitter)  # noqa: E731
    cx = cfg.chamber_center[0] * W * jit()
    cy = cfg.chamber_center[1] * H * jit()
    ax = cfg.chamber_axes[0] * W * jit()
    ay = cfg.chamber_axes[1] * H * jit()

    chamber = _ellipse((H, W), cx, cy, ax, ay)
    half = (cfg.cornea_thickness + cfg.iris_thickness) / 2
    outer = _ellipse((H, W), cx, cy + (cfg.iris_thickness - cfg.cornea_thickness) / 2,
                     ax + cfg.side_thickness, ay + half)
    band = outer & ~chamber

    img = cfg.background + rng.normal(0, cfg.background_sigma, (H, W))
    band_level = cfg.band_intensity + rng.uniform(-15, 15)
    img[band] = band_level + rng.normal(0, cfg.band_sigma, int(band.sum()))
    img[chamber] = cfg.chamber_intensity + rng.normal(0, cfg.chamber_sigma, int(chamber.sum()))
    # cell positions first, so noise can keep clear of them
    n_cells = _range(rng, cfg.cell_count)
    iax, iay = ax - cfg.cell_margin, ay - cfg.cell_margin
    if n_cells and (iax <= 0 or iay <= 0 or math.pi * iax * iay / cfg.cell_spacing ** 2 < 2 * n_cells):
        raise ValueError(f"cannot place {n_cells} cells in a chamber of {ax:.0f}x{ay:.0f} px")
    centres = []
    tries = 0
    while len(centres) < n_cells:
        tries += 1
        if tries > 20000:
            raise ValueError(f"cell placement failed for sample {index}")
        x = rng.uniform(cx - iax, cx + iax)
        y = rng.uniform(cy - iay, cy + iay)
        if not _inside_ellipse(x, y, cx, cy, iax, iay):
            continue
        if any(max(abs(x - u), abs(y - v)) < cfg.cell_spacing for u, v in centres):
            continue
        centres.append((x, y))

    # noise geometry; brightness is a multiple of the reference level
    noise = []  # (pixels, level multiplier, per-pixel jitter)
    noise_points = []

    def clear_of_cells(px, py):
        return all(max(abs(px - u), abs(py - v)) > cfg.noise_clearance for u, v in centres)

    def place(region, count, kind):
        ys_r, xs_r = np.nonzero(region)
        for _ in range(count):
            k = int(rng.integers(xs_r.size))
            px, py = int(xs_r[k]), int(ys_r[k])
            mult = _range(rng, cfg.noise_peak)
            if kind == "speckle":
                pts = [(px, py)]
                for _ in range(_range(rng, cfg.speckle_size) - 1):
                    bx, by = pts[int(rng.integers(len(pts)))]
                    dx, dy = rng.integers(-1, 2, size=2)
                    pts.append((bx + int(dx), by + int(dy)))
            else:
                length = _range(rng, cfg.streak_length)
                rows = 2 if rng.random() < 0.3 else 1
                pts = [(px + i, py + j) for i in range(length) for j in range(rows)]
            pts = sorted({(u, v) for u, v in pts if 0 <= u < W and 0 <= v < H and region[v, u]})
            if not pts or not all(clear_of_cells(u, v) for u, v in pts):
                continue
            noise.append((np.array(pts), mult, rng.normal(0, 4, len(pts))))
            noise_points.append((px, py))

    inner_region = _ellipse((H, W), cx, cy, ax - 4, ay - 4)
    outside = ~outer
    place(inner_region, _range(rng, cfg.speckle_inside), "speckle")
    place(inner_region, _range(rng, cfg.streak_inside), "streak")
    place(outside, _range(rng, cfg.speckle_outside), "speckle")
    place(outside, _range(rng, cfg.streak_outside), "streak")

    def with_noise(level):
        out = img.copy()
        for pts, mult, jitter in noise:
            us, vs = pts[:, 0], pts[:, 1]
            out[vs, us] = np.maximum(out[vs, us], level * mult + jitter)
        return out

    def otsu_of(arr):
        return otsu_threshold(histogram(np.clip(np.rint(arr), 0, 255).astype(np.uint8)))

    # settle the reference level of the noisy, cell-free rendering
    t_ref = otsu_of(img)
    for _ in range(8):
        t_next = otsu_of(with_noise(t_ref))
        if t_next == t_ref:
            break
        t_ref = t_next
    img = with_noise(t_ref)

    cells = []
    r = 5
    for x, y in centres:
        sigma = _range(rng, cfg.cell_sigma)
        dim = bool(rng.random() < cfg.dim_fraction)
        peak = min(250.0, t_ref * _range(rng, cfg.dim_peak if dim else cfg.cell_peak))
        x0, y0 = int(round(x)), int(round(y))
        ys, xs = np.mgrid[y0 - r:y0 + r + 1, x0 - r:x0 + r + 1]
        prof = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * sigma ** 2))
        prof /= prof.max()
        patch = img[y0 - r:y0 + r + 1, x0 - r:x0 + r + 1]
        spot = cfg.chamber_intensity + (peak - cfg.chamber_intensity) * prof
        img[y0 - r:y0 + r + 1, x0 - r:x0 + r + 1] = np.maximum(patch, spot)
        cells.append((x, y, sigma, peak, dim))

    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    image_id = f"synth_{index:04d}"
    clicks = [(int(math.floor(c[0] + 0.5)), int(math.floor(c[1] + 0.5))) for c in cells]
    gt = ground_truth(image_id, clicks, W, H, cfg.box_w, cfg.box_h)
    return SynthSample(image_id, image, chamber, band, gt, noise_points, cells)


def generate(cfg: SynthConfig = SynthConfig(), n: int = 1, start: int = 0) -> list[SynthSample]:
    if n < 1:
        raise ValueError("need at least one sample")
    return [generate_one(cfg, start + i) for i in range(n)]


def write_corpus(out_dir, samples, cfg: SynthConfig) -> Path:
    out = Path(out_dir)
    for d in DIRS:
        (out / d).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_gray(out / "images" / f"{s.image_id}.png", s.image)
        write_mask(out / "masks_ac" / f"{s.image_id}.png", s.ac_mask_gt)
        write_mask(out / "masks_segment" / f"{s.image_id}.png", s.segment_mask_gt)
        write_annotations(out / "annotations" / f"{s.image_id}.csv", [s.cells_gt])
    manifest = {"ids": [s.image_id for s in samples], "config": cfg.to_dict()}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


@dataclass
class Corpus:
    """Lazy view of a corpus directory."""

    root: Path
    ids: list

    @classmethod
    def open(cls, root) -> "Corpus":
        root = Path(root)
        manifest = root / MANIFEST
        if manifest.exists():
            ids = json.loads(manifest.read_text(encoding="utf-8"))["ids"]
        else:
            ids = sorted(p.stem for p in (root / "images").glob("*.png"))
        return cls(root, list(ids))

    def image(self, image_id):
        return read_gray(self.root / "images" / f"{image_id}.png")

    def ac_mask(self, image_id):
        return read_mask(self.root / "masks_ac" / f"{image_id}.png")

    def annotations(self) -> dict:
        return {r.image_id: r for r in read_annotations(self.root / "annotations")}
