"""Confidence-gated fusion of warped labels with segmentation probabilities,
plus morphological refinement and pseudo-label emission.

The fusion rule table, evaluated per pixel with a = warped label,
s = argmax class of the probability map, m = max probability:

  (i)   a != void and a == s            -> keep a, confidence max(c_flow, m)
  (ii)  c_flow >= tau_flow              -> keep a (flow trusted)
  (iii) m >= tau_seg                    -> take s (prediction trusted)
  (iv)  otherwise                       -> void, confidence 0

Low-confidence regions therefore fall through to void rather than guessing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ConfidenceMap, FrameTimeline, LabelMask, PseudoLabel

PRB_MAGIC = b"PRB1"

DEFAULT_PSEUDO_WEIGHT = 0.03


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class probability raster (C planes, normalized per pixel)."""

    width: int
    height: int
    classes: int
    p: np.ndarray  # (C, H, W) float32

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float32)
        if p.shape != (self.classes, self.height, self.width):
            raise ValueError(
                f"prob shape {p.shape} != ({self.classes}, {self.height}, {self.width})")
        if p.size:
            if p.min() < 0:
                raise ValueError("probabilities must be non-negative")
            sums = p.sum(axis=0)
            if abs(float(sums.min()) - 1.0) > 1e-4 or abs(float(sums.max()) - 1.0) > 1e-4:
                raise ValueError("per-pixel probabilities must sum to 1 (tol 1e-4)")
        p = np.ascontiguousarray(p)
        p.flags.writeable = False
        object.__setattr__(self, "p", p)


@dataclass(frozen=True)
class FusionParams:
    tau_flow: float = 0.7        # flow-confidence threshold
    tau_seg: float = 0.9         # prediction-certainty threshold
    min_component_px: int = 64
    morph_radius: int = 1

    def __post_init__(self):
        if not (0.0 <= self.tau_flow <= 1.0 and 0.0 <= self.tau_seg <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")
        if self.min_component_px < 0 or self.morph_radius < 0:
            raise ValueError("min_component_px and morph_radius must be >= 0")


def fuse(warped: LabelMask, c_flow: ConfidenceMap, prob: ProbMap | None,
         params: FusionParams | None = None) -> tuple[LabelMask, ConfidenceMap]:
    """Apply the four-rule fusion table; ``prob=None`` degenerates to
    flow-gating alone (rule iii never fires)."""
    params = params or FusionParams()
    h, w = warped.height, warped.width
    if (c_flow.width, c_flow.height) != (w, h):
        raise ValueError("confidence dimensions differ from mask")
    if prob is not None and (prob.width, prob.height) != (w, h):
        raise ValueError("probability-map dimensions differ from mask")

    a = warped.data
    cls_a = warped.class_raster()
    if prob is not None:
        s = np.argmax(prob.p, axis=0).astype(np.uint8)
        m = np.max(prob.p, axis=0).astype(np.float32)
        present = set(np.unique(cls_a).tolist()) - {warped.void_id}
        outside = present - set(range(prob.classes))
        if outside:
            raise ValueError(f"warped class ids outside prob class space: {sorted(outside)}")
    else:
        s = np.zeros((h, w), dtype=np.uint8)
        m = np.zeros((h, w), dtype=np.float32)

    if prob is None:
        agree = np.zeros((h, w), dtype=bool)
    else:
        agree = (a != warped.void_id) & (cls_a == s)
    flow_ok = c_flow.c >= params.tau_flow
    seg_ok = m >= params.tau_seg

    out = np.full((h, w), warped.void_id, dtype=np.uint8)
    conf = np.zeros((h, w), dtype=np.float32)

    rule4 = ~(agree | flow_ok | seg_ok)
    rule3 = seg_ok & ~(agree | flow_ok)
    rule2 = flow_ok & ~agree
    # rule i: agreement
    out[agree] = a[agree]
    conf[agree] = np.maximum(c_flow.c, m)[agree]
    # rule ii: trusted flow keeps the warped label (possibly void)
    out[rule2] = a[rule2]
    conf[rule2] = c_flow.c[rule2]
    # rule iii: trusted prediction takes the argmax class; for instance masks
    # there is no warped instance to re-attach, so the pixel stays void
    if warped.kind == "semantic":
        out[rule3] = s[rule3]
        conf[rule3] = m[rule3]
    # rule iv: conservative void (initialization)

    conf[out == warped.void_id] = 0.0
    fused = warped.with_data(out)
    return fused, ConfidenceMap(w, h, conf)


def _disk(radius: int) -> np.ndarray:
    # Chebyshev disk (box): keeps solid axis-aligned rectangles fixed under
    # opening/closing, which a Euclidean disk would corner-clip
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


_EIGHT = np.ones((3, 3), dtype=bool)


def refine(mask: LabelMask, params: FusionParams | None = None) -> LabelMask:
    """Morphological cleanup: per label, binary opening then closing with a
    disk of ``morph_radius``; 8-connected components below
    ``min_component_px`` become void.

    Overlaps created by closing are resolved deterministically: a pixel keeps
    its original label when that label still covers it, otherwise the label
    with the larger original area (lower id on ties) wins.
    """
    params = params or FusionParams()
    se = _disk(params.morph_radius)
    labels = mask.label_ids()
    areas = {lid: int(np.count_nonzero(mask.data == lid)) for lid in labels}
    out = np.full_like(mask.data, mask.void_id)
    claimed_original = np.zeros(mask.data.shape, dtype=bool)
    # larger-original-area labels claim contested pixels first
    order = sorted(labels, key=lambda lid: (-areas[lid], lid))
    refined = {}
    for lid in order:
        binary = mask.data == lid
        if params.morph_radius > 0:
            binary = ndimage.binary_opening(binary, structure=se)
            binary = ndimage.binary_closing(binary, structure=se)
        if params.min_component_px > 0 and binary.any():
            comp, n = ndimage.label(binary, structure=_EIGHT)
            sizes = ndimage.sum_labels(binary, comp, index=np.arange(1, n + 1))
            small = np.flatnonzero(sizes < params.min_component_px) + 1
            if small.size:
                binary &= ~np.isin(comp, small)
        refined[lid] = binary
    # pass 1: pixels keep their own surviving label
    for lid in order:
        own = refined[lid] & (mask.data == lid)
        out[own] = lid
        claimed_original |= own
    # pass 2: expansion into previously unlabeled/other pixels, priority order
    for lid in order:
        grab = refined[lid] & ~claimed_original & (out == mask.void_id)
        out[grab] = lid
    return mask.with_data(out)


def emit_pseudo_label(fused: LabelMask, conf: ConfidenceMap, t: FrameTimeline,
                      frame: int, source_key: int, hop: int,
                      pseudo_weight: float = DEFAULT_PSEUDO_WEIGHT) -> PseudoLabel:
    """Attach provenance and the loss-weight dichotomy: key frames carry
    weight 1.0, interpolated frames the configured pseudo weight (0.03 by
    default)."""
    if frame not in set(t.frames):
        raise ValueError(f"frame {frame} not in timeline")
    weight = 1.0 if frame in t.key_frames else pseudo_weight
    return PseudoLabel(fused, conf, weight, source_key, hop)


def save_probmap(p: ProbMap, path) -> None:
    """Write a planar probability-map file: magic "PRB1", int32 LE height,
    width, classes, then C row-major float32 planes."""
    with open(path, "wb") as fh:
        fh.write(PRB_MAGIC)
        fh.write(struct.pack("<iii", p.height, p.width, p.classes))
        fh.write(np.ascontiguousarray(p.p, dtype="<f4").tobytes())


def load_probmap(path) -> ProbMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PRB_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    h, w, c = struct.unpack_from("<iii", raw, 4)
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated payload ({len(raw)} bytes, want {expected})")
    planes = np.frombuffer(raw, dtype="<f4", offset=16).reshape(c, h, w)
    return ProbMap(w, h, c, planes)
