"""Shared data types and index conventions for the label-interpolation pipeline.

Coordinate convention: a pixel position (u, v) means (column, row) with the
origin at the top-left corner.  All rasters are stored row-major, indexed as
``array[v, u]``.  Displacement fields store the x-component (columns) in
``fx`` and the y-component (rows) in ``fy``.

All types are immutable after construction (backing numpy arrays are marked
read-only), so instances can be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

VOID_ID = 255


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FrameTimeline:
    """Per-video frame index set with key-frame marks and workflow labels.

    ``phase_of`` and ``step_of`` must cover every frame: long-term workflow
    labels exist for all frames, while spatial masks exist only on
    ``key_frames``.
    """

    video_id: str
    fps: float
    frames: tuple[int, ...]
    key_frames: frozenset[int]
    phase_of: Mapping[int, int]
    step_of: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))
        object.__setattr__(self, "key_frames", frozenset(int(f) for f in self.key_frames))
        object.__setattr__(self, "phase_of", dict(self.phase_of))
        object.__setattr__(self, "step_of", dict(self.step_of))

    def time_of(self, frame: int) -> float:
        """Timestamp in seconds of a frame index."""
        return frame / self.fps


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel class/instance raster with a reserved void value.

    ``void_id`` (255) means "no supervision here"; it is excluded from losses
    and metrics downstream.  For ``kind == "instance"`` every non-void pixel
    value is an instance id mapped to its class by ``class_of_instance``.
    """

    width: int
    height: int
    data: np.ndarray
    kind: str = "semantic"  # "semantic" | "instance"
    void_id: int = VOID_ID
    class_of_instance: Optional[Mapping[int, int]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.uint8)
        if data.shape != (self.height, self.width):
            raise ValueError(
                f"mask data shape {data.shape} != (height={self.height}, width={self.width})"
            )
        if self.kind not in ("semantic", "instance"):
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == "instance":
            mapping = dict(self.class_of_instance or {})
            present = set(np.unique(data).tolist()) - {self.void_id}
            missing = present - set(mapping)
            if missing:
                raise ValueError(f"instance ids without class mapping: {sorted(missing)}")
            object.__setattr__(self, "class_of_instance", mapping)
        object.__setattr__(self, "data", _freeze(data))

    def label_ids(self) -> list[int]:
        """Non-void ids present in the raster."""
        return [int(i) for i in np.unique(self.data) if i != self.void_id]

    def class_raster(self) -> np.ndarray:
        """Per-pixel class ids (identity for semantic masks)."""
        if self.kind == "semantic":
            return self.data
        out = np.full_like(self.data, self.void_id)
        for inst, cls in self.class_of_instance.items():
            out[self.data == inst] = cls
        return out

    def with_data(self, data: np.ndarray) -> "LabelMask":
        return LabelMask(self.width, self.height, data, self.kind,
                         self.void_id, self.class_of_instance)


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement map with a declared direction.

    ``direction`` is the ordered pair (source frame index, target frame
    index); ``fx``/``fy`` move source coordinates toward the target:
    (u', v') = (u + fx[v, u], v + fy[v, u]).
    """

    width: int
    height: int
    fx: np.ndarray
    fy: np.ndarray
    direction: tuple[int, int]

    def __post_init__(self):
        fx = np.asarray(self.fx, dtype=np.float32)
        fy = np.asarray(self.fy, dtype=np.float32)
        if fx.shape != (self.height, self.width) or fy.shape != (self.height, self.width):
            raise ValueError("fx/fy dimensions do not match declared width/height")
        if not (np.isfinite(fx).all() and np.isfinite(fy).all()):
            raise ValueError("flow field contains non-finite displacements")
        object.__setattr__(self, "fx", _freeze(fx))
        object.__setattr__(self, "fy", _freeze(fy))
        object.__setattr__(self, "direction", (int(self.direction[0]), int(self.direction[1])))


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel reliability in [0, 1]."""

    width: int
    height: int
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float32)
        if c.shape != (self.height, self.width):
            raise ValueError("confidence dimensions do not match declared width/height")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ValueError("confidence values outside [0, 1]")
        object.__setattr__(self, "c", _freeze(c))

    @classmethod
    def full(cls, width: int, height: int, value: float = 1.0) -> "ConfidenceMap":
        return cls(width, height, np.full((height, width), value, dtype=np.float32))


@dataclass(frozen=True)
class PseudoLabel:
    """Fused mask + confidence + loss weight + provenance."""

    mask: LabelMask
    confidence: ConfidenceMap
    loss_weight: float
    source_key_frame: int
    hop_distance: int

    def __post_init__(self):
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be non-negative")
        if self.hop_distance < 0:
            raise ValueError("hop_distance must be non-negative")
        if self.hop_distance == 0 and self.loss_weight != 1.0:
            raise ValueError("key frames (hop 0) must carry loss weight 1.0")


@dataclass(frozen=True)
class Detection:
    """A scored box (optionally with a mask) for instance-level evaluation."""

    frame: int
    box: tuple[float, float, float, float]  # x_min, y_min, x_max, y_max
    class_id: int
    score: float = 1.0
    mask: Optional[LabelMask] = None

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate box {self.box}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class AnticipationSeries:
    """Per-frame remaining time (seconds) until a step class begins.

    Values are clipped to [0, horizon]; 0 exactly on frames where the step is
    active.
    """

    class_id: int
    horizon_h: float
    values: np.ndarray

    def __post_init__(self):
        if self.horizon_h <= 0:
            raise ValueError("horizon must be positive")
        v = np.asarray(self.values, dtype=np.float64)
        if v.size and (v.min() < 0 or v.max() > self.horizon_h):
            raise ValueError("remaining-time values outside [0, horizon]")
        object.__setattr__(self, "values", _freeze(v))


def validate_timeline(t: FrameTimeline) -> list[str]:
    """Check all FrameTimeline invariants; returns a list of violations.

    Diagnostics are returned rather than raised so callers can report every
    problem in one pass.
    """
    violations = []
    if t.fps <= 0:
        violations.append(f"fps must be positive, got {t.fps}")
    frames = t.frames
    for a, b in zip(frames, frames[1:]):
        if b <= a:
            violations.append(f"frames not strictly increasing at {a} -> {b}")
    frame_set = set(frames)
    for f in frames:
        if f < 0:
            violations.append(f"frame {f}: negative index")
    for k in sorted(t.key_frames):
        if k not in frame_set:
            violations.append(f"key frame {k} not in frames")
    for f in frames:
        if f not in t.phase_of:
            violations.append(f"frame {f}: missing phase")
        if f not in t.step_of:
            violations.append(f"frame {f}: missing step")
    return violations


def nearest_key_frame(t: FrameTimeline, f: int) -> tuple[int, int]:
    """Return (key frame, signed distance key->f) for the closest key frame.

    Ties between two equidistant key frames break toward the earlier one, so
    the result is deterministic.
    """
    if not t.key_frames:
        raise ValueError("timeline has no key frames")
    if f not in set(t.frames):
        raise ValueError(f"frame {f} not in timeline")
    best = min(t.key_frames, key=lambda k: (abs(f - k), k))
    return best, f - best
