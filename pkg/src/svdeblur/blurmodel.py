"""Sparse spatially-variant blur operators.

Each output pixel gets one row: the average over the exposure of the sharp
reference image sampled (bilinearly) along the pixel's trajectory.  Rows are
gathered, not scattered, so a row whose samples all stay inside the image
sums to exactly one.  Samples or bilinear taps that leave the image are
dropped without renormalizing the row.

Images are ``(height, width, channels)`` float arrays; inside the operator
pixels are flattened in row-major order, ``index = y * width + x``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvariantViolation, MissingSegment
from .geometry import CameraModel, PlanePatch, apply_homography, blur_homography, forward_homography

DEFAULT_SAMPLES = 70
# pixels per work unit when assembling or applying operators
CHUNK = 4096


@dataclass(frozen=True)
class BlurSpec:
    """Exposure as a fraction of the frame interval, and the quadrature size."""

    duty_cycle: float = 1.0
    samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        if not 0.0 < self.duty_cycle <= 1.0:
            raise InvariantViolation(f"duty_cycle must lie in (0, 1], got {self.duty_cycle}")
        if int(self.samples) != self.samples or self.samples < 1:
            raise InvariantViolation(f"samples must be a positive integer, got {self.samples}")
        object.__setattr__(self, "samples", int(self.samples))

    def sample_times(self) -> np.ndarray:
        """Midpoint-rule sample times, in frame intervals relative to t0."""
        k = np.arange(self.samples)
        return self.duty_cycle * (-0.5 + (k + 0.5) / self.samples)


@dataclass
class FlowField:
    """Per-pixel 2D displacements (px per frame interval), ``(H, W, 2)`` each."""

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=float)
        self.backward = np.asarray(self.backward, dtype=float)
        if self.forward.shape != self.backward.shape or self.forward.shape[-1:] != (2,):
            raise DimensionMismatch("forward and backward flow must both be (H, W, 2)")
        if not (np.all(np.isfinite(self.forward)) and np.all(np.isfinite(self.backward))):
            raise InvariantViolation("flow contains non-finite values")

    @property
    def height(self) -> int:
        return self.forward.shape[0]

    @property
    def width(self) -> int:
        return self.forward.shape[1]

    @classmethod
    def constant(cls, width, height, forward, backward=None) -> FlowField:
        fwd = np.broadcast_to(np.asarray(forward, dtype=float), (height, width, 2)).copy()
        bwd = -fwd if backward is None else np.broadcast_to(
            np.asarray(backward, dtype=float), (height, width, 2)).copy()
        return cls(fwd, bwd)


def as_image(image, name="image") -> np.ndarray:
    """Return ``image`` as a float ``(H, W, C)`` array (2D input gets C = 1)."""
    a = np.asarray(image, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise DimensionMismatch(f"{name} must be (H, W), (H, W, 1) or (H, W, 3), got {a.shape}")
    return a


def check_intensities(image, name="image"):
    a = as_image(image, name)
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0:
        raise InvariantViolation(f"{name} intensities must lie in [0, 1]")
    return a


class BlurOperator:
    """Row-stacked sparse blur matrix for a ``width x height`` image.

    ``complete[i]`` records whether every time sample of row ``i`` landed
    inside the image, i.e. whether the row is expected to sum to one.
    """

    def __init__(self, matrix, width: int, height: int, complete=None):
        matrix = sp.csr_matrix(matrix)
        n = width * height
        if matrix.shape != (n, n):
            raise DimensionMismatch(f"matrix shape {matrix.shape} does not fit a {width}x{height} image")
        self.matrix = matrix
        self.width = int(width)
        self.height = int(height)
        if complete is None:
            complete = np.ones(n, dtype=bool)
        self.complete = np.asarray(complete, dtype=bool).reshape(n)
        self._transpose = None

    @classmethod
    def identity(cls, width, height) -> BlurOperator:
        return cls(sp.identity(width * height, format="csr"), width, height)

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def transpose_matrix(self) -> sp.csr_matrix:
        if self._transpose is None:
            self._transpose = self.matrix.T.tocsr()
        return self._transpose

    def row(self, x: int, y: int):
        """``(indices, weights)`` of the row for pixel ``(x, y)``."""
        i = y * self.width + x
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[lo:hi].copy(), self.matrix.data[lo:hi].copy()

    def row_image(self, x: int, y: int) -> np.ndarray:
        """The row for pixel ``(x, y)`` laid out as a dense ``(H, W)`` array."""
        idx, w = self.row(x, y)
        out = np.zeros(self.n_pixels)
        out[idx] = w
        return out.reshape(self.height, self.width)

    def matvec(self, X, workers: int = 1, transpose: bool = False) -> np.ndarray:
        """Multiply ``(n_pixels, C)`` data by the matrix (or its transpose).

        Work is split into fixed row blocks; each output row is reduced in
        index order, so the result does not depend on ``workers``.
        """
        M = self.transpose_matrix if transpose else self.matrix
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n_pixels:
            raise DimensionMismatch(f"expected {self.n_pixels} rows, got {X.shape[0]}")
        if workers <= 1 or self.n_pixels <= CHUNK:
            return np.asarray(M @ X)
        bounds = range(0, self.n_pixels, CHUNK)
        out = np.empty((self.n_pixels,) + X.shape[1:])

        def block(lo):
            out[lo:lo + CHUNK] = M[lo:lo + CHUNK] @ X

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(block, bounds))
        return out


def _check_dims(op: BlurOperator, image) -> np.ndarray:
    a = as_image(image)
    if a.shape[:2] != (op.height, op.width):
        raise DimensionMismatch(
            f"image is {a.shape[1]}x{a.shape[0]}, operator expects {op.width}x{op.height}")
    return a


def apply_blur(op: BlurOperator, image, workers: int = 1) -> np.ndarray:
    """Forward blur ``A I`` per channel.  No clamping."""
    a = _check_dims(op, image)
    C = a.shape[2]
    return op.matvec(a.reshape(-1, C), workers).reshape(a.shape)


def apply_blur_transpose(op: BlurOperator, image, workers: int = 1) -> np.ndarray:
    """Adjoint ``A^T v`` per channel."""
    a = _check_dims(op, image)
    C = a.shape[2]
    return op.matvec(a.reshape(-1, C), workers, transpose=True).reshape(a.shape)


# row construction -------------------------------------------------------------

def _stamp_rows(u, v, ok, width, height):
    """Bilinear taps of sample positions ``u, v`` (shape ``(P, S)``).

    Returns per-tap arrays ``(local_row, column, weight)`` in pixel-major,
    sample-major, tap-major order together with the per-row completeness
    flags.  Invalid samples (``ok`` false) contribute nothing.
    """
    P, S = u.shape
    inside = ok & (u >= 0.0) & (u <= width - 1) & (v >= 0.0) & (v <= height - 1)
    complete = inside.all(axis=1)
    # keep NaN/inf away from floor()
    u = np.where(ok, u, -2.0)
    v = np.where(ok, v, -2.0)
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    share = 1.0 / S
    taps_x = np.stack([x0, x0 + 1, x0, x0 + 1], axis=-1)
    taps_y = np.stack([y0, y0, y0 + 1, y0 + 1], axis=-1)
    taps_w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1) * share
    keep = (
        ok[..., None]
        & (taps_w > 0.0)
        & (taps_x >= 0) & (taps_x < width)
        & (taps_y >= 0) & (taps_y < height)
    )
    local = np.broadcast_to(np.arange(P)[:, None, None], keep.shape)
    return local[keep], (taps_y * width + taps_x)[keep], taps_w[keep], complete


def _merge_rows(local, cols, weights, n_rows, n_cols):
    """Sum duplicate (row, column) taps; return CSR pieces sorted by column.

    Duplicates are summed left to right in their original order, which only
    depends on the row itself, never on which other rows share the chunk.
    """
    keys = local.astype(np.int64) * n_cols + cols
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    weights = weights[order]
    if keys.size:
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        sums = np.add.reduceat(weights, starts)
        uniq = keys[starts]
    else:
        sums = np.zeros(0)
        uniq = keys
    rows = uniq // n_cols
    counts = np.bincount(rows, minlength=n_rows)
    return counts, (uniq % n_cols).astype(np.int32), sums


def _homography_stack(camera, patch, spec) -> np.ndarray:
    return np.stack([blur_homography(camera, patch, t) for t in spec.sample_times()])


def _homography_samples(Hs, xs, ys):
    """Sample positions for pixels ``xs, ys`` under per-pixel stacks ``Hs`` (P, S, 3, 3)."""
    x = xs[:, None]
    y = ys[:, None]
    w = Hs[..., 2, 0] * x + Hs[..., 2, 1] * y + Hs[..., 2, 2]
    ok = w > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (Hs[..., 0, 0] * x + Hs[..., 0, 1] * y + Hs[..., 0, 2]) / w
        v = (Hs[..., 1, 0] * x + Hs[..., 1, 1] * y + Hs[..., 1, 2]) / w
    ok &= np.isfinite(u) & np.isfinite(v)
    return u, v, ok


def _flow_samples(fwd, bwd, xs, ys, spec):
    s = spec.sample_times()
    after = s > 0.0
    step = np.abs(s)[None, :]
    dx = np.where(after[None, :], fwd[:, 0:1], bwd[:, 0:1])
    dy = np.where(after[None, :], fwd[:, 1:2], bwd[:, 1:2])
    u = xs[:, None] + step * dx
    v = ys[:, None] + step * dy
    return u, v, np.ones(u.shape, dtype=bool)


def _sorted_row(u, v, ok, width, height):
    local, cols, w, _ = _stamp_rows(u, v, ok, width, height)
    _, idx, sums = _merge_rows(local, cols, w, 1, width * height)
    return idx, sums


def _check_pixel(x, y, width, height):
    if not (0 <= x < width and 0 <= y < height):
        raise ValueError(f"pixel ({x}, {y}) outside a {width}x{height} image")


def homography_blur_row(x, y, camera: CameraModel, patch: PlanePatch, spec: BlurSpec,
                        width: int, height: int):
    """Blur row of pixel ``(x, y)`` induced by the patch's homographies.

    Returns ``(indices, weights)`` sorted by pixel index.
    """
    _check_pixel(x, y, width, height)
    Hs = _homography_stack(camera, patch, spec)[None]
    u, v, ok = _homography_samples(Hs, np.array([float(x)]), np.array([float(y)]))
    return _sorted_row(u, v, ok, width, height)


def flow_blur_row(x, y, flow: FlowField, spec: BlurSpec):
    """Blur row of pixel ``(x, y)`` from straight-line forward/backward displacements."""
    _check_pixel(x, y, flow.width, flow.height)
    u, v, ok = _flow_samples(flow.forward[y, x][None], flow.backward[y, x][None],
                             np.array([float(x)]), np.array([float(y)]), spec)
    return _sorted_row(u, v, ok, flow.width, flow.height)


def _assemble(width, height, sampler, workers):
    n = width * height
    starts = list(range(0, n, CHUNK))

    def chunk(lo):
        hi = min(lo + CHUNK, n)
        idx = np.arange(lo, hi)
        u, v, ok = sampler(idx)
        local, cols, w, complete = _stamp_rows(u, v, ok, width, height)
        counts, c, s = _merge_rows(local, cols, w, hi - lo, n)
        return counts, c, s, complete

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(lo) for lo in starts]
    counts = np.concatenate([p[0] for p in parts])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.concatenate([p[1] for p in parts])
    data = np.concatenate([p[2] for p in parts])
    complete = np.concatenate([p[3] for p in parts])
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    return BlurOperator(matrix, width, height, complete)


def _patch_lookup(patches) -> dict:
    if isinstance(patches, Mapping):
        return dict(patches)
    return {p.segment_id: p for p in patches}


def assemble_operator(camera: CameraModel, patches: Sequence[PlanePatch] | Mapping[int, PlanePatch],
                      segmentation, spec: BlurSpec, workers: int = 1) -> BlurOperator:
    """Homography-induced operator: each pixel uses its own segment's patch."""
    seg = np.asarray(segmentation)
    if seg.ndim != 2:
        raise DimensionMismatch("segmentation must be a 2D label map")
    height, width = seg.shape
    lookup = _patch_lookup(patches)
    labels = np.unique(seg)
    for label in labels:
        if int(label) not in lookup:
            raise MissingSegment(int(label))
    stacks = np.stack([_homography_stack(camera, lookup[int(l)], spec) for l in labels])
    which = np.searchsorted(labels, seg.ravel())
    xs_all = np.tile(np.arange(width, dtype=float), height)
    ys_all = np.repeat(np.arange(height, dtype=float), width)

    def sampler(idx):
        return _homography_samples(stacks[which[idx]], xs_all[idx], ys_all[idx])

    return _assemble(width, height, sampler, workers)


def homography_flow(camera: CameraModel, patches, segmentation) -> FlowField:
    """Endpoint displacements over one frame interval implied by the patches.

    ``forward`` is where each pixel's surface point is one frame later,
    ``backward`` one frame earlier, both relative to the pixel.  Points that
    would pass behind the camera get zero displacement.
    """
    seg = np.asarray(segmentation)
    if seg.ndim != 2:
        raise DimensionMismatch("segmentation must be a 2D label map")
    lookup = _patch_lookup(patches)
    height, width = seg.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    fwd = np.zeros((height, width, 2))
    bwd = np.zeros_like(fwd)
    for label in np.unique(seg):
        if int(label) not in lookup:
            raise MissingSegment(int(label))
        sel = seg == label
        for t, out in ((1.0, fwd), (-1.0, bwd)):
            u, v, w = apply_homography(forward_homography(camera, lookup[int(label)], t), xs[sel], ys[sel])
            ok = w > 0
            out[sel, 0] = np.where(ok, u - xs[sel], 0.0)
            out[sel, 1] = np.where(ok, v - ys[sel], 0.0)
    return FlowField(fwd, bwd)


def assemble_flow_operator(flow: FlowField, spec: BlurSpec, workers: int = 1) -> BlurOperator:
    """Operator from 2D displacement fields (straight, constant-velocity trajectories)."""
    width, height = flow.width, flow.height
    fwd = flow.forward.reshape(-1, 2)
    bwd = flow.backward.reshape(-1, 2)
    xs_all = np.tile(np.arange(width, dtype=float), height)
    ys_all = np.repeat(np.arange(height, dtype=float), width)

    def sampler(idx):
        return _flow_samples(fwd[idx], bwd[idx], xs_all[idx], ys_all[idx], spec)

    return _assemble(width, height, sampler, workers)


def homography_kernel_samples(x, y, camera: CameraModel, patch: PlanePatch, spec: BlurSpec):
    """Reference-image positions ``(S, 2)`` sampled by the row of pixel ``(x, y)``.

    Samples behind the camera come back as NaN.
    """
    Hs = _homography_stack(camera, patch, spec)[None]
    u, v, ok = _homography_samples(Hs, np.array([float(x)]), np.array([float(y)]))
    pts = np.stack([u[0], v[0]], axis=-1)
    pts[~ok[0]] = np.nan
    return pts


def flow_kernel_samples(x, y, flow: FlowField, spec: BlurSpec):
    """Positions ``(S, 2)`` sampled by the straight-line flow row of pixel ``(x, y)``."""
    u, v, _ = _flow_samples(flow.forward[y, x][None], flow.backward[y, x][None],
                            np.array([float(x)]), np.array([float(y)]), spec)
    return np.stack([u[0], v[0]], axis=-1)
