"""Dataset ingestion, pseudo-label emission, and a synthetic-scene generator
with analytic ground truth for desk-scale verification.

Canonical on-disk layout per video::

    <root>/<video_id>/
        frames/<%06d>.png       grayscale or RGB frame images
        timeline.csv            header: frame,phase,step,is_key
        key_masks/<%06d>.png    8-bit label rasters for key frames (255 = void)
        gt_masks/               optional, full ground truth (synthetic scenes)
        flows/<a>_to_<b>.flo    optional precomputed flow files
        probs/<%06d>.prb        optional probability maps
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import VOID_ID, ConfidenceMap, FlowField, FrameTimeline, LabelMask, PseudoLabel, validate_timeline
from .flow import FlowParams, compose_flows, estimate_flow, load_flow, save_flow
from .fuse import ProbMap, load_probmap


class DatasetError(ValueError):
    """Raised when a dataset layout fails validation; message lists every problem."""


def _frame_name(f: int) -> str:
    return f"{f:06d}.png"


def load_mask(path, kind: str = "semantic",
              class_of_instance=None) -> LabelMask:
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.uint8)
    return LabelMask(arr.shape[1], arr.shape[0], arr, kind=kind,
                     class_of_instance=class_of_instance)


def save_mask(mask: LabelMask, path) -> None:
    Image.fromarray(np.asarray(mask.data), mode="L").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode in ("L", "I;16"):
        return np.asarray(img.convert("L"), dtype=np.uint8)
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def read_timeline(path, video_id: str, fps: float) -> FrameTimeline:
    frames, keys, phase_of, step_of = [], set(), {}, {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"frame", "phase", "step", "is_key"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DatasetError(f"{path}: timeline header must contain {sorted(required)}")
        for i, row in enumerate(reader):
            try:
                f = int(row["frame"])
                phase_of[f] = int(row["phase"])
                step_of[f] = int(row["step"])
                if int(row["is_key"]):
                    keys.add(f)
            except (TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: malformed timeline row {i + 2}: {row}") from exc
            frames.append(f)
    return FrameTimeline(video_id, fps, tuple(frames), frozenset(keys), phase_of, step_of)


def write_timeline(t: FrameTimeline, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "phase", "step", "is_key"])
        for f in t.frames:
            writer.writerow([f, t.phase_of[f], t.step_of[f], int(f in t.key_frames)])


@dataclass
class VideoData:
    video_id: str
    root: Path
    timeline: FrameTimeline
    frame_paths: dict[int, Path]
    key_masks: dict[int, LabelMask]
    flow_dir: Optional[Path] = None
    prob_dir: Optional[Path] = None
    gt_mask_dir: Optional[Path] = None

    def load_frame(self, f: int) -> np.ndarray:
        return load_image(self.frame_paths[f])

    def load_prob(self, f: int) -> Optional[ProbMap]:
        if self.prob_dir is None:
            return None
        path = self.prob_dir / f"{f:06d}.prb"
        return load_probmap(path) if path.exists() else None


def load_dataset(root, fps: float = 30.0) -> list[VideoData]:
    """Load and validate every video directory under ``root``.

    Raises DatasetError listing all violations with their paths.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    videos = []
    problems = []
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        tl_path = vdir / "timeline.csv"
        if not tl_path.exists():
            problems.append(f"{vdir}: missing timeline.csv")
            continue
        timeline = read_timeline(tl_path, vdir.name, fps)
        problems.extend(f"{tl_path}: {v}" for v in validate_timeline(timeline))
        frame_paths = {}
        for f in timeline.frames:
            p = vdir / "frames" / _frame_name(f)
            if not p.exists():
                problems.append(f"{p}: missing frame image")
            frame_paths[f] = p
        key_masks = {}
        for k in sorted(timeline.key_frames):
            p = vdir / "key_masks" / _frame_name(k)
            if not p.exists():
                problems.append(f"{vdir}: key frame {k} has no mask file {p}")
                continue
            key_masks[k] = load_mask(p)
        # masks must match frame dimensions
        for k, m in key_masks.items():
            fp = frame_paths.get(k)
            if fp is not None and fp.exists():
                img = load_image(fp)
                if img.shape[:2] != (m.height, m.width):
                    problems.append(
                        f"{vdir}: frame {k} size {img.shape[:2]} != mask size {(m.height, m.width)}")
        flow_dir = vdir / "flows"
        prob_dir = vdir / "probs"
        gt_dir = vdir / "gt_masks"
        videos.append(VideoData(
            vdir.name, vdir, timeline, frame_paths, key_masks,
            flow_dir if flow_dir.is_dir() else None,
            prob_dir if prob_dir.is_dir() else None,
            gt_dir if gt_dir.is_dir() else None,
        ))
    if problems:
        raise DatasetError("dataset validation failed:\n" + "\n".join(problems))
    return videos


# ---------------------------------------------------------------------------
# flow sources


class FileFlowSource:
    """Flow provider over a directory of ``<a>_to_<b>.flo`` files.

    Falls back to chaining single-step files when a direct pair file is
    absent.
    """

    def __init__(self, flow_dir):
        self.flow_dir = Path(flow_dir)

    def _path(self, a: int, b: int) -> Path:
        return self.flow_dir / f"{a:06d}_to_{b:06d}.flo"

    def __call__(self, a: int, b: int) -> FlowField:
        direct = self._path(a, b)
        if direct.exists():
            return load_flow(direct, direction=(a, b))
        step = 1 if b > a else -1
        acc = None
        for s in range(a, b, step):
            p = self._path(s, s + step)
            if not p.exists():
                raise FileNotFoundError(
                    f"flow unavailable for pair ({a}, {b}): neither {direct} nor {p} exists")
            hop = load_flow(p, direction=(s, s + step))
            acc = hop if acc is None else compose_flows(acc, hop)[0]
        return acc


class EstimatorFlowSource:
    """Flow provider that runs the built-in estimator over frame images, with
    a per-pair cache so forward/backward requests do not recompute."""

    def __init__(self, frame_loader: Callable[[int], np.ndarray],
                 params: FlowParams | None = None):
        self.frame_loader = frame_loader
        self.params = params or FlowParams()
        self._cache: dict[tuple[int, int], FlowField] = {}

    def __call__(self, a: int, b: int) -> FlowField:
        key = (a, b)
        if key not in self._cache:
            self._cache[key] = estimate_flow(
                self.frame_loader(a), self.frame_loader(b), self.params, direction=key)
        return self._cache[key]


# ---------------------------------------------------------------------------
# pseudo-label emission


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_pseudo_labels(out_dir, labels: dict[int, PseudoLabel],
                        params_echo: Optional[dict] = None) -> dict:
    """Emit one mask raster + JSON sidecar per frame plus a digest manifest.

    Output is deterministic: identical inputs give byte-identical files and
    manifest (sha256 digests).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in sorted(labels):
        pl = labels[f]
        mask_path = out_dir / _frame_name(f)
        save_mask(pl.mask, mask_path)
        sidecar = {
            "frame": f,
            "source_key_frame": pl.source_key_frame,
            "hop_distance": pl.hop_distance,
            "loss_weight": pl.loss_weight,
            "mean_confidence": float(np.mean(pl.confidence.c)),
            "params": params_echo or {},
        }
        side_path = out_dir / f"{f:06d}.json"
        side_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
        entries.append({"frame": f,
                        "mask": mask_path.name, "mask_sha256": _sha256(mask_path),
                        "sidecar": side_path.name, "sidecar_sha256": _sha256(side_path)})
    manifest = {"files": entries, "params": params_echo or {}}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest


def load_pseudo_labels(out_dir) -> dict[int, PseudoLabel]:
    """Inverse of write_pseudo_labels (confidence restored as its stored mean)."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    labels = {}
    for entry in manifest["files"]:
        side = json.loads((out_dir / entry["sidecar"]).read_text())
        mask = load_mask(out_dir / entry["mask"])
        conf = ConfidenceMap.full(mask.width, mask.height, side["mean_confidence"])
        labels[side["frame"]] = PseudoLabel(
            mask, conf, side["loss_weight"], side["source_key_frame"], side["hop_distance"])
    return labels


# ---------------------------------------------------------------------------
# synthetic scenes with analytic ground truth


@dataclass(frozen=True)
class MovingShape:
    kind: str                      # "disk" | "rect"
    class_id: int
    center: tuple[float, float]    # (x, y) at frame 0
    size: tuple[float, float]      # (radius, _) for disk; (w, h) for rect
    velocity: tuple[float, float] = (0.0, 0.0)  # px per frame

    def center_at(self, t: int) -> tuple[float, float]:
        return (self.center[0] + t * self.velocity[0],
                self.center[1] + t * self.velocity[1])

    def contains(self, xx: np.ndarray, yy: np.ndarray, t: int) -> np.ndarray:
        cx, cy = self.center_at(t)
        if self.kind == "disk":
            r = self.size[0]
            return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        if self.kind == "rect":
            w, h = self.size
            return (np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)
        raise ValueError(f"unknown shape kind {self.kind!r}")

    def bounds_at(self, t: int) -> tuple[float, float, float, float]:
        cx, cy = self.center_at(t)
        if self.kind == "disk":
            r = self.size[0]
            return cx - r, cy - r, cx + r, cy + r
        w, h = self.size
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


@dataclass(frozen=True)
class SynthScene:
    width: int = 64
    height: int = 64
    n_frames: int = 31
    key_period: int = 30
    shapes: tuple[MovingShape, ...] = ()
    background_velocity: tuple[float, float] = (0.0, 0.0)
    background_label: Optional[int] = None  # None = void background
    fps: float = 30.0
    seed: int = 0
    n_steps: int = 3

    def __post_init__(self):
        for s in self.shapes:
            for t in range(self.n_frames):
                x0, y0, x1, y1 = s.bounds_at(t)
                if x0 < 0 or y0 < 0 or x1 > self.width - 1 or y1 > self.height - 1:
                    raise ValueError(
                        f"shape {s.kind}/{s.class_id} leaves canvas at frame {t}")

    def timeline(self) -> FrameTimeline:
        frames = tuple(range(self.n_frames))
        keys = frozenset(f for f in frames if f % self.key_period == 0)
        step_of = {f: min(f * self.n_steps // max(self.n_frames, 1), self.n_steps - 1)
                   for f in frames}
        phase_of = {f: step_of[f] // 2 for f in frames}
        return FrameTimeline("synth", self.fps, frames, keys, phase_of, step_of)

    def mask_at(self, t: int) -> LabelMask:
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        bg = VOID_ID if self.background_label is None else self.background_label
        data = np.full((self.height, self.width), bg, dtype=np.uint8)
        for s in self.shapes:  # later shapes draw on top
            data[s.contains(xx, yy, t)] = s.class_id
        return LabelMask(self.width, self.height, data)

    def flow_between(self, a: int, b: int) -> FlowField:
        """Analytic displacement field a->b: topmost shape velocity inside
        shapes (membership at frame a), background velocity elsewhere."""
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        dt = b - a
        fx = np.full((self.height, self.width), self.background_velocity[0] * dt,
                     dtype=np.float32)
        fy = np.full((self.height, self.width), self.background_velocity[1] * dt,
                     dtype=np.float32)
        for s in self.shapes:
            inside = s.contains(xx, yy, a)
            fx[inside] = s.velocity[0] * dt
            fy[inside] = s.velocity[1] * dt
        return FlowField(self.width, self.height, fx, fy, (a, b))

    def image_at(self, t: int) -> np.ndarray:
        """Grayscale frame: translating textured background with textured
        shapes drawn on top; textures ride with their owners so the analytic
        flow matches image motion."""
        rng = np.random.default_rng(self.seed)
        vx, vy = self.background_velocity
        pad_x = int(abs(vx) * self.n_frames) + 2
        pad_y = int(abs(vy) * self.n_frames) + 2
        shape_big = (self.height + 2 * pad_y, self.width + 2 * pad_x)
        # two noise scales so coarse pyramid levels still carry gradients
        fine = ndimage.gaussian_filter(rng.uniform(0, 1, shape_big), 1.2)
        coarse = ndimage.gaussian_filter(rng.uniform(0, 1, shape_big), 5.0)
        big = fine / max(np.ptp(fine), 1e-9) + coarse / max(np.ptp(coarse), 1e-9)
        big = (big - big.min()) / max(np.ptp(big), 1e-9) * 160 + 40
        # background crop offset moves opposite the apparent image motion
        ox = int(round(pad_x - vx * t))
        oy = int(round(pad_y - vy * t))
        img = big[oy:oy + self.height, ox:ox + self.width].copy()
        yy, xx = np.mgrid[0:self.height, 0:self.width]
        for idx, s in enumerate(self.shapes):
            srng = np.random.default_rng(self.seed + 1000 + idx)
            tex = ndimage.gaussian_filter(
                srng.uniform(0, 1, (2 * self.height, 2 * self.width)), 1.0)
            tex = (tex - tex.min()) / max(np.ptp(tex), 1e-9) * 120 + 100 + 30 * (idx % 2)
            inside = s.contains(xx, yy, t)
            cx, cy = s.center_at(t)
            ty = np.clip(np.rint(yy - cy).astype(int) + self.height, 0, 2 * self.height - 1)
            tx = np.clip(np.rint(xx - cx).astype(int) + self.width, 0, 2 * self.width - 1)
            img[inside] = tex[ty[inside], tx[inside]]
        return np.clip(img, 0, 255).astype(np.uint8)


@dataclass
class SynthResult:
    scene: SynthScene
    timeline: FrameTimeline
    gt_masks: dict[int, LabelMask]
    root: Optional[Path] = None


def generate_synth(scene: SynthScene, out_dir=None) -> SynthResult:
    """Materialize a synthetic scene: frames, ground-truth masks for every
    frame, key-frame masks, adjacent-pair analytic flow files (both
    directions), and the timeline CSV.  Returns the oracle masks either way;
    ``out_dir=None`` skips emission."""
    timeline = scene.timeline()
    gt = {f: scene.mask_at(f) for f in timeline.frames}
    result = SynthResult(scene, timeline, gt)
    if out_dir is None:
        return result
    root = Path(out_dir) / "synth"
    for sub in ("frames", "gt_masks", "key_masks", "flows"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_timeline(timeline, root / "timeline.csv")
    for f in timeline.frames:
        Image.fromarray(scene.image_at(f), mode="L").save(root / "frames" / _frame_name(f))
        save_mask(gt[f], root / "gt_masks" / _frame_name(f))
        if f in timeline.key_frames:
            save_mask(gt[f], root / "key_masks" / _frame_name(f))
    for a, b in zip(timeline.frames, timeline.frames[1:]):
        save_flow(scene.flow_between(a, b), root / "flows" / f"{a:06d}_to_{b:06d}.flo")
        save_flow(scene.flow_between(b, a), root / "flows" / f"{b:06d}_to_{a:06d}.flo")
    result.root = root
    return result
