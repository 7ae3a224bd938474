"""Synthetic crowd sequences with coherent groups and look-alike targets.

Scenes place small colored disks in near-rigid group formations that drift
across a textured background.  Groups get evenly spread headings, so scenes
with an even group count contain directly opposing flows.  A small palette
makes distinct targets share colors, which is the ambiguity the tracker's
context terms are meant to resolve.  All randomness flows from one seed, so
a config reproduces its frames byte for byte.

Frames are 8-bit RGB rasters; sequences are stored as binary PPM files plus
a ground-truth CSV of per-frame positions and group ids.
"""

from __future__ import annotations

import colorsys
import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SceneConfig",
    "GroundTruth",
    "generate_scene",
    "render_frame",
    "make_palette",
    "write_ppm",
    "read_ppm",
    "save_scene",
    "load_frames",
    "standard_scene_config",
]

WOBBLE_CLIP = 2.0
MAX_PLACEMENT_ATTEMPTS = 100_000


@dataclass(frozen=True)
class SceneConfig:
    n_targets: int
    n_frames: int
    frame_size: tuple[int, int] = (320, 320)
    target_radius: float = 3.0
    n_groups: int = 4
    palette_size: int = 4
    velocity_range: tuple[float, float] = (1.8, 2.6)
    noise_sigma: float = 4.0
    seed: int = 0
    formation_spacing: float | None = None
    formation_jitter: float = 0.2

    def __post_init__(self) -> None:
        if self.n_targets < 1 or self.n_frames < 1:
            raise ValueError("target and frame counts must be >= 1")
        if self.n_groups < 1 or self.palette_size < 1:
            raise ValueError("group and palette counts must be >= 1")
        if self.n_groups > self.n_targets:
            raise ValueError(
                f"{self.n_groups} groups need at least that many targets, "
                f"got {self.n_targets}"
            )
        if self.target_radius < 1:
            raise ValueError(f"target radius must be >= 1, got {self.target_radius}")
        lo, hi = self.velocity_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad velocity range ({lo}, {hi})")
        if self.noise_sigma < 0 or self.formation_jitter < 0:
            raise ValueError("noise levels must be non-negative")
        if min(self.frame_size) < 8:
            raise ValueError(f"frame size {self.frame_size} is too small")

    @property
    def target_size(self) -> float:
        """Rendered target diameter in pixels."""
        return 2 * self.target_radius

    @property
    def spacing(self) -> float:
        if self.formation_spacing is not None:
            return self.formation_spacing
        return 2.5 * self.target_size


@dataclass
class GroundTruth:
    """Per-frame target positions and group labels; frames are 1-based."""

    frame: np.ndarray
    target_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    group_id: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.frame)
        for name in ("target_id", "x", "y", "group_id"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"ground-truth column {name} has wrong length")

    @property
    def n_frames(self) -> int:
        return int(self.frame.max()) if len(self.frame) else 0

    def positions_at(self, frame: int) -> np.ndarray:
        """(n, 2) positions in ``frame``, ordered by target id."""
        mask = self.frame == frame
        order = np.argsort(self.target_id[mask], kind="stable")
        return np.column_stack([self.x[mask][order], self.y[mask][order]])

    def groups_at(self, frame: int) -> np.ndarray:
        mask = self.frame == frame
        order = np.argsort(self.target_id[mask], kind="stable")
        return self.group_id[mask][order]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "target_id", "x", "y", "group_id"])
            for f, t, x, y, g in zip(
                self.frame, self.target_id, self.x, self.y, self.group_id
            ):
                writer.writerow([int(f), int(t), f"{x:.2f}", f"{y:.2f}", int(g)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "GroundTruth":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["frame", "target_id", "x", "y", "group_id"]:
                raise ValueError(f"unexpected ground-truth header {header}")
            for row in reader:
                rows.append(row)
        if not rows:
            raise ValueError(f"{path} contains no ground-truth rows")
        cols = list(zip(*rows))
        return cls(
            frame=np.array([int(v) for v in cols[0]]),
            target_id=np.array([int(v) for v in cols[1]]),
            x=np.array([float(v) for v in cols[2]]),
            y=np.array([float(v) for v in cols[3]]),
            group_id=np.array([int(v) for v in cols[4]]),
        )


def make_palette(size: int) -> np.ndarray:
    """Evenly spaced hues as (size, 3) uint8 RGB."""
    colors = []
    for i in range(size):
        r, g, b = colorsys.hsv_to_rgb(i / size, 0.8, 0.9)
        colors.append((round(255 * r), round(255 * g), round(255 * b)))
    return np.array(colors, dtype=np.uint8)


def _formation_offsets(count: int, spacing: float, angle: float) -> np.ndarray:
    """Near-square grid of member offsets, rotated and centered."""
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    raw = []
    for i in range(count):
        r, c = divmod(i, cols)
        raw.append((c * spacing, r * spacing))
    raw = np.asarray(raw, dtype=float)
    raw -= raw.mean(axis=0)
    ca, sa = math.cos(angle), math.sin(angle)
    rot = np.array([[ca, -sa], [sa, ca]])
    return raw @ rot.T


def _group_sizes(n_targets: int, n_groups: int) -> list[int]:
    base, extra = divmod(n_targets, n_groups)
    return [base + (1 if g < extra else 0) for g in range(n_groups)]


def render_frame(
    positions: np.ndarray,
    colors: np.ndarray,
    cfg: SceneConfig,
    background: np.ndarray | None = None,
) -> np.ndarray:
    """Composite anti-aliased disks over a background, in target-id order.

    Coverage at a pixel is clip(radius + 0.5 - distance, 0, 1); disks drawn
    later blend over earlier ones, so the higher id wins where they overlap.
    Returns a float array in [0, 255]; quantization happens at save time.
    """
    width, height = cfg.frame_size
    if background is None:
        frame = np.full((height, width, 3), 120.0)
    else:
        frame = background.astype(float).copy()
    r = cfg.target_radius
    pad = int(math.ceil(r + 1))
    for (px, py), color in zip(np.atleast_2d(positions), np.atleast_2d(colors)):
        x_lo = max(int(math.floor(px)) - pad, 0)
        x_hi = min(int(math.ceil(px)) + pad + 1, width)
        y_lo = max(int(math.floor(py)) - pad, 0)
        y_hi = min(int(math.ceil(py)) + pad + 1, height)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        ys, xs = np.mgrid[y_lo:y_hi, x_lo:x_hi]
        dist = np.sqrt((xs - px) ** 2 + (ys - py) ** 2)
        alpha = np.clip(r + 0.5 - dist, 0.0, 1.0)[:, :, None]
        region = frame[y_lo:y_hi, x_lo:x_hi]
        frame[y_lo:y_hi, x_lo:x_hi] = alpha * color + (1 - alpha) * region
    return frame


def _quantize(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round(frame), 0, 255).astype(np.uint8)


def _place_groups(
    cfg: SceneConfig, offsets: list[np.ndarray], margin: float, rng
) -> list[np.ndarray]:
    """Rejection-sample group centers so no two members start overlapping."""
    width, height = cfg.frame_size
    lo_x, hi_x = margin, width - 1 - margin
    lo_y, hi_y = margin, height - 1 - margin
    if lo_x >= hi_x or lo_y >= hi_y:
        raise ValueError(
            f"frame {cfg.frame_size} cannot fit a formation needing "
            f"{margin:.1f}px of border margin"
        )
    min_gap = 2 * cfg.target_radius + 1
    centers: list[np.ndarray] = []
    placed: list[np.ndarray] = []
    attempts = 0
    for off in offsets:
        while True:
            attempts += 1
            if attempts > MAX_PLACEMENT_ATTEMPTS:
                raise ValueError(
                    f"could not place {cfg.n_targets} targets in "
                    f"{cfg.frame_size} after {MAX_PLACEMENT_ATTEMPTS} attempts; "
                    "the scene is too dense"
                )
            center = np.array(
                [rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)]
            )
            members = center + off
            ok = True
            for prev in placed:
                gaps = np.sqrt(
                    ((members[:, None, :] - prev[None, :, :]) ** 2).sum(axis=2)
                )
                if gaps.min() < min_gap:
                    ok = False
                    break
            if ok:
                centers.append(center)
                placed.append(members)
                break
    return centers


def generate_scene(cfg: SceneConfig) -> tuple[list[np.ndarray], GroundTruth]:
    """Simulate and render a full sequence.

    Each group keeps a shared velocity; headings spread evenly over the
    circle from a random base angle.  Groups reflect off the frame border
    as a unit, which preserves member velocity agreement through the
    bounce.  Members add a small clipped random-walk wobble around their
    formation slot.
    """
    rng = np.random.default_rng(cfg.seed)
    width, height = cfg.frame_size
    sizes = _group_sizes(cfg.n_targets, cfg.n_groups)

    offsets = []
    for count in sizes:
        angle = rng.uniform(0, 2 * math.pi)
        offsets.append(_formation_offsets(count, cfg.spacing, angle))

    extent = max(np.abs(off).max() if len(off) else 0.0 for off in offsets)
    margin = extent + cfg.target_radius + WOBBLE_CLIP + 1
    centers = _place_groups(cfg, offsets, margin, rng)

    base_angle = rng.uniform(0, 2 * math.pi)
    velocities = []
    for g in range(cfg.n_groups):
        theta = base_angle + 2 * math.pi * g / cfg.n_groups
        speed = rng.uniform(*cfg.velocity_range)
        velocities.append(speed * np.array([math.cos(theta), math.sin(theta)]))

    palette = make_palette(cfg.palette_size)
    colors = palette[np.arange(cfg.n_targets) % cfg.palette_size]
    group_of = np.repeat(np.arange(cfg.n_groups), sizes)

    texture = rng.normal(0.0, 8.0, size=(height, width, 3))
    background = np.clip(120.0 + texture, 0, 255)

    wobble = [np.zeros((count, 2)) for count in sizes]
    lo = np.array([margin, margin])
    hi = np.array([width - 1 - margin, height - 1 - margin])

    frames: list[np.ndarray] = []
    rec_frame, rec_target, rec_x, rec_y, rec_group = [], [], [], [], []
    for t in range(1, cfg.n_frames + 1):
        if t > 1:
            for g in range(cfg.n_groups):
                centers[g] = centers[g] + velocities[g]
                for axis in range(2):
                    while True:
                        c = centers[g][axis]
                        if c < lo[axis]:
                            centers[g][axis] = 2 * lo[axis] - c
                            velocities[g][axis] = -velocities[g][axis]
                        elif c > hi[axis]:
                            centers[g][axis] = 2 * hi[axis] - c
                            velocities[g][axis] = -velocities[g][axis]
                        else:
                            break
                if cfg.formation_jitter > 0:
                    step = rng.normal(
                        0.0, cfg.formation_jitter, size=wobble[g].shape
                    )
                    wobble[g] = np.clip(wobble[g] + step, -WOBBLE_CLIP, WOBBLE_CLIP)

        positions = np.concatenate(
            [centers[g] + offsets[g] + wobble[g] for g in range(cfg.n_groups)]
        )
        raster = render_frame(positions, colors, cfg, background)
        if cfg.noise_sigma > 0:
            raster = raster + rng.normal(0.0, cfg.noise_sigma, size=raster.shape)
        frames.append(_quantize(raster))

        rec_frame.extend([t] * cfg.n_targets)
        rec_target.extend(range(cfg.n_targets))
        rec_x.extend(positions[:, 0])
        rec_y.extend(positions[:, 1])
        rec_group.extend(group_of)

    truth = GroundTruth(
        frame=np.array(rec_frame),
        target_id=np.array(rec_target),
        x=np.array(rec_x),
        y=np.array(rec_y),
        group_id=np.array(rec_group),
    )
    return frames, truth


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Store an (H, W, 3) uint8 frame as binary PPM."""
    if frame.dtype != np.uint8 or frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 frame, got {frame.dtype} "
                         f"{frame.shape}")
    height, width = frame.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    match = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if match is None:
        raise ValueError(f"{path} is not a binary PPM file")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported, maxval={maxval}")
    pixels = np.frombuffer(data[match.end():], dtype=np.uint8)
    if pixels.size != width * height * 3:
        raise ValueError(
            f"{path}: expected {width * height * 3} pixel bytes, got {pixels.size}"
        )
    return pixels.reshape(height, width, 3)


def save_scene(
    out_dir: str | Path, frames: list[np.ndarray], truth: GroundTruth
) -> None:
    """Write frame_%06d.ppm files (1-based) and gt.csv into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        write_ppm(out / f"frame_{i:06d}.ppm", frame)
    truth.to_csv(out / "gt.csv")


def load_frames(frame_dir: str | Path) -> list[np.ndarray]:
    """Read every frame_*.ppm in a directory, in frame order."""
    paths = sorted(Path(frame_dir).glob("frame_*.ppm"))
    if not paths:
        raise ValueError(f"no frame_*.ppm files found in {frame_dir}")
    return [read_ppm(p) for p in paths]


def standard_scene_config(
    n_frames: int = 200, seed: int = 7, **overrides
) -> SceneConfig:
    """The benchmark scene: 100 targets in 4 opposing groups, 4 colors."""
    params = dict(
        n_targets=100,
        n_frames=n_frames,
        frame_size=(320, 320),
        target_radius=3.0,
        n_groups=4,
        palette_size=4,
        seed=seed,
    )
    params.update(overrides)
    return SceneConfig(**params)
