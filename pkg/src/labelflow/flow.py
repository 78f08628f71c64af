"""Classical dense optical flow: estimation, composition, consistency, file IO.

Horn-Schunck (variational, pyramidal with warping) and pyramidal Lucas-Kanade
stand in for a learned estimator; externally computed flow enters through the
Middlebury-compatible file format (see ``load_flow``/``save_flow``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import ConfidenceMap, FlowField

FLO_MAGIC = 202021.25

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FlowParams:
    method: str = "horn_schunck"  # "horn_schunck" | "pyramidal_lk"
    smoothness_alpha: float = 15.0
    iterations: int = 200
    pyramid_levels: int = 4
    pyramid_scale: float = 0.5
    window: int = 7
    warps_per_level: int = 3

    def __post_init__(self):
        if self.method not in ("horn_schunck", "pyramidal_lk"):
            raise ValueError(f"unknown flow method {self.method!r}")
        if self.iterations < 1 or self.pyramid_levels < 1:
            raise ValueError("iterations and pyramid_levels must be >= 1")
        if not (0.0 < self.pyramid_scale < 1.0):
            raise ValueError("pyramid_scale must be in (0, 1)")
        if self.smoothness_alpha <= 0:
            raise ValueError("smoothness_alpha must be positive")


@dataclass(frozen=True)
class ConsistencyParams:
    alpha: float = 0.01   # relative tolerance coefficient
    beta: float = 0.5     # absolute tolerance, px^2
    sigma: float = 1.0    # soft-confidence scale, px

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class FlowDiagnostics:
    """Side-channel output of estimate_flow: warnings + finest-level energy trace."""

    warnings: list[str] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an HxWx3 (or HxW) image to float32 grayscale via fixed luma weights."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[..., 0] + g * img[..., 1] + b * img[..., 2]
    raise ValueError(f"cannot convert image of shape {img.shape} to grayscale")


def _bilinear(grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample with edge clamping; callers handle out-of-bounds policy."""
    return ndimage.map_coordinates(grid, [y, x], order=1, mode="nearest")


def _warp_image(img: np.ndarray, fx: np.ndarray, fy: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    return _bilinear(img, xx + fx, yy + fy)


def _hs_energy(ix, iy, it, u, v, alpha):
    """Discrete Horn-Schunck energy: linearized data term plus alpha^2 times
    the sum of squared 4-neighbor differences of (u, v)."""
    data = ix * u + iy * v + it
    smooth = (np.sum((u[:, 1:] - u[:, :-1]) ** 2) + np.sum((u[1:, :] - u[:-1, :]) ** 2)
              + np.sum((v[:, 1:] - v[:, :-1]) ** 2) + np.sum((v[1:, :] - v[:-1, :]) ** 2))
    return float(np.sum(data ** 2) + alpha ** 2 * smooth)


def _neighbor_sum(a: np.ndarray) -> np.ndarray:
    s = np.zeros_like(a)
    s[:, 1:] += a[:, :-1]
    s[:, :-1] += a[:, 1:]
    s[1:, :] += a[:-1, :]
    s[:-1, :] += a[1:, :]
    return s


def _hs_sweeps(i1, i2, u, v, alpha, iterations, track_energy=False):
    """Red-black Gauss-Seidel relaxation of the linearized Horn-Schunck
    energy around the current flow.

    Each half-sweep jointly minimizes the energy over one checkerboard color
    (an exact per-pixel 2x2 solve), so the energy is non-increasing by
    construction.
    """
    i2w = _warp_image(i2, u, v) if (u.any() or v.any()) else i2
    iavg = 0.5 * (i1 + i2w)
    iy, ix = np.gradient(iavg)
    it = i2w - i1  # residual after warping; sweeps solve for the increment
    h, w = i1.shape
    n_nb = _neighbor_sum(np.ones((h, w), dtype=i1.dtype))
    a2 = alpha ** 2
    diag_u = ix * ix + a2 * n_nb
    diag_v = iy * iy + a2 * n_nb
    cross = ix * iy
    det = diag_u * diag_v - cross * cross
    yy, xx = np.mgrid[0:h, 0:w]
    colors = [(yy + xx) % 2 == 0, (yy + xx) % 2 == 1]
    du = np.zeros_like(u)
    dv = np.zeros_like(v)
    energies = []
    for _ in range(iterations):
        for color in colors:
            su = _neighbor_sum(du)
            sv = _neighbor_sum(dv)
            rhs_u = a2 * su - ix * it
            rhs_v = a2 * sv - iy * it
            nu = (diag_v * rhs_u - cross * rhs_v) / det
            nv = (diag_u * rhs_v - cross * rhs_u) / det
            du = np.where(color, nu, du)
            dv = np.where(color, nv, dv)
        if track_energy:
            energies.append(_hs_energy(ix, iy, it, du, dv, alpha))
    return u + du, v + dv, energies


def _downscale(img: np.ndarray, scale: float) -> np.ndarray:
    smoothed = ndimage.gaussian_filter(img, sigma=1.0 / scale * 0.5)
    h = max(int(round(img.shape[0] * scale)), 4)
    w = max(int(round(img.shape[1] * scale)), 4)
    return ndimage.zoom(smoothed, (h / img.shape[0], w / img.shape[1]), order=1)


def _upscale_flow(u, v, shape, factor_x, factor_y):
    zy = shape[0] / u.shape[0]
    zx = shape[1] / u.shape[1]
    return (ndimage.zoom(u, (zy, zx), order=1) * factor_x,
            ndimage.zoom(v, (zy, zx), order=1) * factor_y)


def _lk_step(i1, i2w, window):
    iy, ix = np.gradient(0.5 * (i1 + i2w))
    it = i2w - i1
    size = 2 * window + 1
    s = lambda a: ndimage.uniform_filter(a, size=size, mode="nearest")
    sxx, sxy, syy = s(ix * ix), s(ix * iy), s(iy * iy)
    sxt, syt = s(ix * it), s(iy * it)
    det = sxx * syy - sxy * sxy
    ok = det > 1e-6
    du = np.where(ok, (-syy * sxt + sxy * syt) / np.where(ok, det, 1.0), 0.0)
    dv = np.where(ok, (sxy * sxt - sxx * syt) / np.where(ok, det, 1.0), 0.0)
    return du, dv


def estimate_flow(i_a: np.ndarray, i_b: np.ndarray, p: FlowParams | None = None,
                  direction: tuple[int, int] = (0, 1),
                  diagnostics: FlowDiagnostics | None = None) -> FlowField:
    """Estimate the dense displacement field from frame a to frame b.

    Coarse-to-fine with warping; identical images yield the exact zero field
    and constant-intensity pairs yield the zero field plus an
    ``under_constrained`` warning in ``diagnostics``.
    """
    p = p or FlowParams()
    # float64 internally so the tracked solver energy is monotone to rounding
    i1 = to_grayscale(i_a).astype(np.float64)
    i2 = to_grayscale(i_b).astype(np.float64)
    if i1.shape != i2.shape:
        raise ValueError(f"image dimensions differ: {i1.shape} vs {i2.shape}")
    h, w = i1.shape
    if h < 8 or w < 8:
        raise ValueError("images must be at least 8x8")

    if np.ptp(i1) < 1e-6 and np.ptp(i2) < 1e-6:
        if diagnostics is not None:
            diagnostics.warnings.append("under_constrained: constant-intensity pair")
        zero = np.zeros((h, w), dtype=np.float32)
        return FlowField(w, h, zero, zero.copy(), direction)

    # build pyramids (level 0 = finest)
    p1, p2 = [i1], [i2]
    for _ in range(p.pyramid_levels - 1):
        if min(p1[-1].shape) * p.pyramid_scale < 8:
            break
        p1.append(_downscale(p1[-1], p.pyramid_scale))
        p2.append(_downscale(p2[-1], p.pyramid_scale))

    u = np.zeros_like(p1[-1])
    v = np.zeros_like(p1[-1])
    for level in range(len(p1) - 1, -1, -1):
        a, b = p1[level], p2[level]
        if u.shape != a.shape:
            fy_fac = a.shape[0] / u.shape[0]
            fx_fac = a.shape[1] / u.shape[1]
            u, v = _upscale_flow(u, v, a.shape, fx_fac, fy_fac)
        for warp_idx in range(p.warps_per_level):
            track = (diagnostics is not None and level == 0
                     and warp_idx == p.warps_per_level - 1)
            if p.method == "horn_schunck":
                u, v, energies = _hs_sweeps(a, b, u, v, p.smoothness_alpha,
                                            p.iterations, track_energy=track)
                if track:
                    diagnostics.energies = energies
            else:
                # shrink the window on coarse levels; smooth the field between
                # steps to keep the warping iteration stable
                win = min(p.window, max(2, min(a.shape) // 4))
                i2w = _warp_image(b, u, v) if (u.any() or v.any()) else b
                du, dv = _lk_step(a, i2w, win)
                u = ndimage.gaussian_filter(u + du, 1.0)
                v = ndimage.gaussian_filter(v + dv, 1.0)
    return FlowField(w, h, u, v, direction)


@dataclass
class ConsistencyResult:
    confidence: ConfidenceMap
    valid: np.ndarray        # hard forward-backward validity, bool
    discrepancy: np.ndarray  # d(q) in px; inf where mapped point leaves the image
    in_bounds: np.ndarray    # bool, mapped point inside the image


def forward_backward_check(f_ab: FlowField, f_ba: FlowField,
                           p: ConsistencyParams | None = None) -> ConsistencyResult:
    """Forward-backward consistency of a flow pair (a->b, b->a).

    Per pixel q in frame a: d(q) = ||F_ab(q) + F_ba(q + F_ab(q))|| with F_ba
    sampled bilinearly.  Hard validity holds when
    d^2 <= alpha * (||F_ab(q)||^2 + ||F_ba(q')||^2) + beta.  Soft confidence is
    exp(-d^2 / sigma^2); pixels mapping outside the image get confidence 0
    (occlusion / out-of-view cue).
    """
    p = p or ConsistencyParams()
    if (f_ab.width, f_ab.height) != (f_ba.width, f_ba.height):
        raise ValueError("flow dimensions differ")
    if f_ab.direction != (f_ba.direction[1], f_ba.direction[0]):
        raise ValueError(
            f"directions are not mutual inverses: {f_ab.direction} vs {f_ba.direction}")
    h, w = f_ab.height, f_ab.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    xq = xx + f_ab.fx
    yq = yy + f_ab.fy
    in_bounds = (xq >= 0) & (xq <= w - 1) & (yq >= 0) & (yq <= h - 1)
    bx = _bilinear(f_ba.fx, xq, yq)
    by = _bilinear(f_ba.fy, xq, yq)
    dx = f_ab.fx + bx
    dy = f_ab.fy + by
    d2 = dx * dx + dy * dy
    mag2 = f_ab.fx ** 2 + f_ab.fy ** 2 + bx ** 2 + by ** 2
    valid = (d2 <= p.alpha * mag2 + p.beta) & in_bounds
    c = np.exp(-d2 / (p.sigma ** 2)).astype(np.float32)
    c[~in_bounds] = 0.0
    d = np.sqrt(d2)
    d[~in_bounds] = np.inf
    return ConsistencyResult(ConfidenceMap(w, h, c), valid, d, in_bounds)


def forward_backward_confidence(f_ab: FlowField, f_ba: FlowField,
                                p: ConsistencyParams | None = None) -> ConfidenceMap:
    return forward_backward_check(f_ab, f_ba, p).confidence


def compose_flows(f_ab: FlowField, f_bc: FlowField) -> tuple[FlowField, np.ndarray]:
    """Chain a->b with b->c: F_ac(q) = F_ab(q) + F_bc(q + F_ab(q)).

    F_bc is sampled bilinearly; out-of-bounds samples clamp to the edge and
    are flagged False in the returned validity mask.
    """
    if (f_ab.width, f_ab.height) != (f_bc.width, f_bc.height):
        raise ValueError("flow dimensions differ")
    if f_ab.direction[1] != f_bc.direction[0]:
        raise ValueError(
            f"non-chainable directions: {f_ab.direction} then {f_bc.direction}")
    h, w = f_ab.height, f_ab.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    xq = xx + f_ab.fx
    yq = yy + f_ab.fy
    valid = (xq >= 0) & (xq <= w - 1) & (yq >= 0) & (yq <= h - 1)
    fx = f_ab.fx + _bilinear(f_bc.fx, xq, yq)
    fy = f_ab.fy + _bilinear(f_bc.fy, xq, yq)
    return FlowField(w, h, fx, fy, (f_ab.direction[0], f_bc.direction[1])), valid


def save_flow(f: FlowField, path) -> None:
    """Write a Middlebury-compatible flow file (magic, width, height, interleaved fx/fy)."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", f.width, f.height))
        interleaved = np.empty((f.height, f.width, 2), dtype="<f4")
        interleaved[..., 0] = f.fx
        interleaved[..., 1] = f.fy
        fh.write(interleaved.tobytes())


def load_flow(path, direction: tuple[int, int] = (0, 1)) -> FlowField:
    """Read a Middlebury-compatible flow file; bit-exact inverse of save_flow."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated flow file header")
    (magic,) = struct.unpack_from("<f", raw, 0)
    if magic != np.float32(FLO_MAGIC):
        raise ValueError(f"{path}: bad magic {magic!r}")
    w, h = struct.unpack_from("<ii", raw, 4)
    if w <= 0 or h <= 0:
        raise ValueError(f"{path}: bad dimensions {w}x{h}")
    expected = 12 + 8 * w * h
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated payload ({len(raw)} bytes, want {expected})")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    if not np.isfinite(data).all():
        raise ValueError(f"{path}: non-finite flow values")
    return FlowField(w, h, data[..., 0], data[..., 1], direction)
