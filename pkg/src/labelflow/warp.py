"""Mask transfer from key frames to target frames through displacement fields.

Labels at a target frame t are gathered by *backward* warping: each target
pixel samples the source (key-frame) mask through the t->k field with
nearest-neighbor lookup.  This avoids the holes and collisions of forward
splatting; callers that only have the k->t field obtain the reverse field by
estimating with swapped arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import ndimage

from .core import ConfidenceMap, FlowField, FrameTimeline, LabelMask, nearest_key_frame
from .flow import ConsistencyParams, compose_flows, forward_backward_check


@dataclass(frozen=True)
class PropagationConfig:
    max_hop: int = 15           # half the 30-frame key gap of 1 fps keys at 30 fps
    mode: str = "direct"        # "direct" | "chained"
    consistency: ConsistencyParams = field(default_factory=ConsistencyParams)

    def __post_init__(self):
        if self.max_hop < 1:
            raise ValueError("max_hop must be >= 1")
        if self.mode not in ("direct", "chained"):
            raise ValueError(f"unknown propagation mode {self.mode!r}")


@dataclass(frozen=True)
class Provenance:
    source_key_frame: int
    hop_distance: int
    uncovered: bool = False


# flow source: callable (frame_a, frame_b) -> FlowField with direction a->b
FlowSource = Callable[[int, int], FlowField]


def warp_mask(mask_k: LabelMask, f_tk: FlowField,
              conf: ConfidenceMap) -> tuple[LabelMask, ConfidenceMap]:
    """Warp a source (key-frame) mask onto the target frame of ``f_tk``.

    out(q) = mask_k(round(q + F_tk(q))); lookups outside the source raster
    produce void with confidence 0.  Output confidence never exceeds the
    input confidence.
    """
    if (mask_k.width, mask_k.height) != (f_tk.width, f_tk.height):
        raise ValueError("mask and flow dimensions differ")
    if (conf.width, conf.height) != (f_tk.width, f_tk.height):
        raise ValueError("confidence and flow dimensions differ")
    h, w = f_tk.height, f_tk.width
    yy, xx = np.mgrid[0:h, 0:w]
    xs = np.rint(xx + f_tk.fx).astype(np.int64)
    ys = np.rint(yy + f_tk.fy).astype(np.int64)
    inb = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out = np.full((h, w), mask_k.void_id, dtype=np.uint8)
    out[inb] = mask_k.data[ys[inb], xs[inb]]
    c_out = np.where(inb, conf.c, 0.0).astype(np.float32)
    return mask_k.with_data(out), ConfidenceMap(w, h, c_out)


def _hop_path(t: int, k: int) -> list[int]:
    step = 1 if k > t else -1
    return list(range(t, k + step, step)) if t != k else [t]


def _sample_conf(c: np.ndarray, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    h, w = c.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    xq, yq = xx + fx, yy + fy
    s = ndimage.map_coordinates(c, [yq, xq], order=1, mode="nearest")
    inb = (xq >= 0) & (xq <= w - 1) & (yq >= 0) & (yq <= h - 1)
    return np.where(inb, s, 0.0).astype(np.float32)


def _flow_and_confidence(t: int, k: int, get_flow: FlowSource,
                         cfg: PropagationConfig) -> tuple[FlowField, ConfidenceMap]:
    """Build the t->k field and its confidence, directly or hop-by-hop."""
    if cfg.mode == "direct":
        f_tk = get_flow(t, k)
        f_kt = get_flow(k, t)
        conf = forward_backward_check(f_tk, f_kt, cfg.consistency).confidence
        return f_tk, conf
    path = _hop_path(t, k)
    f_acc: FlowField | None = None
    c_acc: np.ndarray | None = None
    for a, b in zip(path, path[1:]):
        f_ab = get_flow(a, b)
        f_ba = get_flow(b, a)
        c_hop = forward_backward_check(f_ab, f_ba, cfg.consistency).confidence.c
        if f_acc is None:
            f_acc, c_acc = f_ab, c_hop
        else:
            # sample the hop confidence where the accumulated flow lands,
            # then attenuate multiplicatively
            c_acc = c_acc * _sample_conf(c_hop, f_acc.fx, f_acc.fy)
            f_acc, _ = compose_flows(f_acc, f_ab)
    return f_acc, ConfidenceMap(f_acc.width, f_acc.height, np.clip(c_acc, 0.0, 1.0))


def propagate_labels(
    t: FrameTimeline,
    masks: Mapping[int, LabelMask],
    flow_source: FlowSource,
    cfg: PropagationConfig | None = None,
) -> dict[int, tuple[LabelMask, ConfidenceMap, Provenance]]:
    """Propagate key-frame masks along the timeline.

    Each non-key frame within ``cfg.max_hop`` of a key frame receives a mask
    warped from its nearest key frame (earlier-frame tie rule); frames beyond
    the hop budget get an all-void mask flagged uncovered.  Key frames pass
    through with confidence 1.
    """
    cfg = cfg or PropagationConfig()
    missing = sorted(set(t.key_frames) - set(masks))
    if missing:
        raise ValueError(f"missing masks for key frames {missing}")
    out: dict[int, tuple[LabelMask, ConfidenceMap, Provenance]] = {}
    template = masks[next(iter(sorted(t.key_frames)))]
    for f in t.frames:
        if f in t.key_frames:
            m = masks[f]
            out[f] = (m, ConfidenceMap.full(m.width, m.height, 1.0), Provenance(f, 0))
            continue
        k, signed = nearest_key_frame(t, f)
        hop = abs(signed)
        if hop > cfg.max_hop:
            void = template.with_data(
                np.full((template.height, template.width), template.void_id, np.uint8))
            out[f] = (void, ConfidenceMap.full(template.width, template.height, 0.0),
                      Provenance(k, hop, uncovered=True))
            continue
        f_tk, conf = _flow_and_confidence(f, k, flow_source, cfg)
        warped, c = warp_mask(masks[k], f_tk, conf)
        out[f] = (warped, c, Provenance(k, hop))
    return out
