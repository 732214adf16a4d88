"""Synthetic ground truth: layered planar scenes under known rigid motions.

A scene is a stack of textured planes seen by the reference camera.  Each
layer's texture is painted in reference-image coordinates at ``t0`` (with a
margin so content can move into view) and moves with its patch.  Blur is
produced the way a renderer would do it: many sharp sub-frames across the
exposure, each composited front to back, averaged.  This is deliberately
independent of :mod:`svdeblur.blurmodel` (finer time sampling, forward
compositing instead of gathered rows).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .blurmodel import BlurSpec, FlowField, homography_flow
from .errors import InvariantViolation
from .geometry import (
    CameraModel,
    PlanePatch,
    RigidMotion,
    apply_homography,
    blur_homography,
    se3_log,
)

RENDER_SAMPLES = 200
MARGIN = 48


@dataclass
class Layer:
    """A textured plane.

    ``texture`` is ``(H + 2m, W + 2m, 3)`` where ``m = margin``: texture pixel
    ``(x + m, y + m)`` is what the reference camera sees at pixel ``(x, y)``
    at ``t0``.  ``support`` (same height/width as the texture) marks where
    the plane exists; ``None`` means everywhere.
    """

    texture: np.ndarray
    patch: PlanePatch
    support: np.ndarray | None = None
    margin: int = MARGIN

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=float)
        if self.texture.ndim != 3 or self.texture.shape[2] != 3:
            raise InvariantViolation("layer texture must be (H, W, 3)")
        if self.texture.min() < 0.0 or self.texture.max() > 1.0:
            raise InvariantViolation("layer texture intensities must lie in [0, 1]")
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=bool)
            if self.support.shape != self.texture.shape[:2]:
                raise InvariantViolation("layer support must match the texture size")


@dataclass
class SceneSpec:
    """Layers are ordered front to back; the first covering layer wins."""

    name: str
    camera: CameraModel
    width: int
    height: int
    layers: list[Layer]
    spec: BlurSpec = field(default_factory=BlurSpec)
    render_samples: int = RENDER_SAMPLES
    noise_sigma: float = 0.0
    noise_seed: int = 0
    description: str = ""

    def __post_init__(self):
        if not self.layers:
            raise InvariantViolation("a scene needs at least one layer")
        ids = [layer.patch.segment_id for layer in self.layers]
        if len(set(ids)) != len(ids):
            raise InvariantViolation("layer segment ids must be unique")
        for layer in self.layers:
            m = layer.margin
            if layer.texture.shape[:2] != (self.height + 2 * m, self.width + 2 * m):
                raise InvariantViolation(f"layer {layer.patch.segment_id}: texture does not fit the image")
        if self.render_samples < 1:
            raise InvariantViolation("render_samples must be positive")

    @property
    def patches(self) -> list[PlanePatch]:
        return [layer.patch for layer in self.layers]

    @property
    def fronto_parallel(self) -> bool:
        """True when every layer is a fronto-parallel plane translating within itself."""
        for layer in self.layers:
            n = layer.patch.normal
            tw = layer.patch.motion
            if n[0] != 0.0 or n[1] != 0.0 or tw.theta != 0.0 or tw.linear[2] != 0.0:
                return False
        return True


def _bilinear(arr, u, v):
    """Sample ``arr`` (H, W, ...) at float positions, clamping at the border."""
    H, W = arr.shape[:2]
    u = np.clip(u, 0.0, W - 1.0)
    v = np.clip(v, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(u).astype(np.int64), W - 2)
    y0 = np.minimum(np.floor(v).astype(np.int64), H - 2)
    fx = u - x0
    fy = v - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return ((1 - fx) * (1 - fy) * arr[y0, x0] + fx * (1 - fy) * arr[y0, x0 + 1]
            + (1 - fx) * fy * arr[y0 + 1, x0] + fx * fy * arr[y0 + 1, x0 + 1])


def _grid(scene):
    ys, xs = np.mgrid[0:scene.height, 0:scene.width].astype(float)
    return xs, ys


def render_subframe(scene: SceneSpec, t: float, with_color: bool = True):
    """Sharp view at ``t0 + t``: ``(image, labels)``; label -1 where nothing is visible."""
    xs, ys = _grid(scene)
    labels = np.full((scene.height, scene.width), -1, dtype=np.int64)
    image = np.zeros((scene.height, scene.width, 3)) if with_color else None
    open_ = np.ones(labels.shape, dtype=bool)
    for layer in scene.layers:
        H = blur_homography(scene.camera, layer.patch, t)
        u, v, w = apply_homography(H, xs, ys)
        m = layer.margin
        tu, tv = u + m, v + m
        th, tw_ = layer.texture.shape[:2]
        cover = open_ & (w > 0) & (tu >= 0) & (tu <= tw_ - 1) & (tv >= 0) & (tv <= th - 1)
        if layer.support is not None:
            cover &= _bilinear(layer.support.astype(float), tu, tv) >= 0.5
        labels[cover] = layer.patch.segment_id
        if with_color:
            image[cover] = _bilinear(layer.texture, tu[cover], tv[cover])
        open_ &= ~cover
        if not open_.any():
            break
    return image, labels


class Rendering(NamedTuple):
    blurred: np.ndarray
    sharp: np.ndarray
    labels: np.ndarray
    mixed: np.ndarray


def _render_times(scene):
    return BlurSpec(scene.spec.duty_cycle, scene.render_samples).sample_times()


def render(scene: SceneSpec, workers: int = 1, with_color: bool = True) -> Rendering:
    """Average ``render_samples`` sub-frames; also track layer changes per pixel."""
    sharp, labels0 = render_subframe(scene, 0.0, with_color)
    times = _render_times(scene)
    acc = np.zeros_like(sharp) if with_color else None
    mixed = np.zeros(labels0.shape, dtype=bool)

    def job(t):
        return render_subframe(scene, t, with_color)

    batch = max(1, 4 * workers)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for lo in range(0, len(times), batch):
            chunk = times[lo:lo + batch]
            frames = pool.map(job, chunk) if pool else map(job, chunk)
            # accumulate strictly in time order
            for img, lab in frames:
                if with_color:
                    acc += img - sharp
                mixed |= lab != labels0
    finally:
        if pool:
            pool.shutdown()
    # summing offsets from t0 keeps a static scene bit-exact
    blurred = sharp + acc / len(times) if with_color else None
    return Rendering(blurred, sharp, labels0, mixed)


def add_noise(scene: SceneSpec, image) -> np.ndarray:
    """Additive Gaussian noise of ``scene.noise_sigma`` (seeded), clamped to [0, 1]."""
    if scene.noise_sigma <= 0:
        return image
    rng = np.random.default_rng(scene.noise_seed)
    return np.clip(image + rng.normal(0.0, scene.noise_sigma, image.shape), 0.0, 1.0)


def render_blurred(scene: SceneSpec, workers: int = 1):
    """``(blurred, sharp_reference)`` with optional additive Gaussian noise."""
    r = render(scene, workers)
    return add_noise(scene, r.blurred), r.sharp


class Sidecar(NamedTuple):
    segmentation: np.ndarray
    patches: list
    occlusion: np.ndarray
    flow: FlowField


def exact_flow(scene: SceneSpec, segmentation) -> FlowField:
    """Endpoint displacement over one frame interval, forward and backward."""
    return homography_flow(scene.camera, scene.patches, segmentation)


def ground_truth_sidecar(scene: SceneSpec, workers: int = 1, rendering: Rendering | None = None) -> Sidecar:
    """Segmentation at t0, patches, occlusion mask and exact 2D displacements.

    The occlusion mask holds every pixel whose front-most layer changes during
    the exposure.
    """
    if rendering is None:
        rendering = render(scene, workers, with_color=False)
    seg = rendering.labels
    return Sidecar(seg, scene.patches, rendering.mixed.copy(), exact_flow(scene, seg))


# textures ------------------------------------------------------------------

def _normalize(a, lo=0.05, hi=0.95):
    a = a - a.min()
    return lo + (hi - lo) * a / max(a.max(), 1e-12)


def filtered_noise(height, width, seed, scales=(1.0, 2.5, 6.0, 14.0), scale=1.0):
    """Colored multi-scale Gaussian-filtered noise."""
    rng = np.random.default_rng(seed)
    out = np.zeros((height, width, 3))
    mix = rng.uniform(0.3, 1.0, size=(3, 3))
    for s in scales:
        base = ndimage.gaussian_filter(rng.normal(size=(height, width, 3)), (s * scale, s * scale, 0))
        base /= base.std()
        out += (s ** 0.5) * (base @ mix.T)
    return _normalize(out)


def checkerboard(height, width, seed, cell=12, scale=1.0):
    """Checkerboard with randomly colored cells and slightly soft edges."""
    rng = np.random.default_rng(seed)
    cell = max(2, int(round(cell * scale)))
    ny, nx = height // cell + 2, width // cell + 2
    colors = rng.uniform(0.1, 0.9, size=(ny, nx, 3))
    parity = (np.add.outer(np.arange(ny), np.arange(nx)) % 2)[..., None]
    colors = np.where(parity == 1, colors * 0.4, 0.5 + colors * 0.5)
    yy, xx = np.mgrid[0:height, 0:width]
    img = colors[yy // cell, xx // cell]
    return np.clip(ndimage.gaussian_filter(img, (0.7, 0.7, 0)), 0.0, 1.0)


def text_texture(height, width, seed, scale=1.0):
    """Pseudo-text: rows of random glyph strings on a light, slightly noisy page."""
    from PIL import Image, ImageDraw, ImageFont

    rng = np.random.default_rng(seed)
    page = Image.new("RGB", (width, height), (235, 228, 215))
    draw = ImageDraw.Draw(page)
    size = max(6, int(round(11 * scale)))
    font = ImageFont.load_default(size=size)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    for y in range(2, height, size + 1):
        x = 2 + int(rng.integers(0, 8))
        while x < width:
            word = "".join(rng.choice(list(letters), size=int(rng.integers(2, 8))))
            color = tuple(int(c) for c in rng.integers(0, 120, size=3))
            draw.text((x, y), word, fill=color, font=font)
            x += int(draw.textlength(word, font=font)) + size // 2
    img = np.asarray(page, dtype=float) / 255.0
    img = ndimage.gaussian_filter(img, (0.5, 0.5, 0))
    return np.clip(img + 0.03 * filtered_noise(height, width, seed + 1, scale=scale), 0.0, 1.0)


def dead_leaves(height, width, seed, n_shapes=None, r_min=3.0, r_max=None, scale=1.0):
    """Occluding disks with power-law radii: sharp edges at all scales, like natural images."""
    from PIL import Image, ImageDraw

    rng = np.random.default_rng(seed)
    ss = 3  # supersampling factor for antialiased edges
    r_min = r_min * scale
    r_max = r_max or max(height, width) / 6.0
    n_shapes = n_shapes or int(height * width / (100 * scale * scale))
    page = Image.new("RGB", (width * ss, height * ss), tuple(int(c) for c in rng.integers(60, 200, size=3)))
    draw = ImageDraw.Draw(page)
    # inverse-cube radius density, sampled by inverting its CDF
    u = rng.uniform(size=n_shapes)
    radii = (r_min ** -2 - u * (r_min ** -2 - r_max ** -2)) ** -0.5
    for r in np.sort(radii)[::-1]:
        cx, cy = rng.uniform(-r, width + r), rng.uniform(-r, height + r)
        gray = np.clip(rng.normal(128, 40), 20, 235)
        color = tuple(int(np.clip(gray + c, 0, 255)) for c in rng.normal(0, 20, size=3))
        box = [(cx - r) * ss, (cy - r) * ss, (cx + r) * ss, (cy + r) * ss]
        if rng.uniform() < 0.3:
            draw.rectangle(box, fill=color)
        else:
            draw.ellipse(box, fill=color)
    page = page.resize((width, height), Image.Resampling.BOX)
    img = np.asarray(page, dtype=float) / 255.0
    return np.clip(img, 0.0, 1.0)


TEXTURES = {"noise": filtered_noise, "checker": checkerboard, "text": text_texture, "leaves": dead_leaves}


def make_texture(kind, height, width, seed, scale=1.0):
    """Texture of the given kind; ``scale`` enlarges its features (1 suits 128 px images)."""
    return TEXTURES[kind](height, width, seed, scale=scale)


# standard suite -----------------------------------------------------------

DEPTH = 10.0


def default_camera(size) -> CameraModel:
    return CameraModel.pinhole(float(size), (size - 1) / 2.0, (size - 1) / 2.0)


def _px_to_world(camera, px, py, depth):
    K = camera.intrinsics
    return np.array([(px - K[0, 2]) * depth / K[0, 0], (py - K[1, 2]) * depth / K[1, 1], depth])


def planar_scene(name, motion: RigidMotion, size=128, texture="noise", seed=0, depth=DEPTH,
                 normal=None, spec=None, description="") -> SceneSpec:
    """One textured plane (fronto-parallel at ``depth`` unless ``normal`` is given)."""
    cam = default_camera(size)
    n = np.array([0.0, 0.0, 1.0 / depth]) if normal is None else np.asarray(normal, dtype=float)
    tex = make_texture(texture, size + 2 * MARGIN, size + 2 * MARGIN, seed, size / 128.0)
    patch = PlanePatch(n, se3_log(motion), 0)
    return SceneSpec(name, cam, size, size, [Layer(tex, patch)], spec or BlurSpec(),
                     description=description)


def _rect_support(size, x0, y0, x1, y1):
    s = np.zeros((size + 2 * MARGIN, size + 2 * MARGIN), dtype=bool)
    s[MARGIN + y0:MARGIN + y1, MARGIN + x0:MARGIN + x1] = True
    return s


def _planar_motions(size):
    """Per-frame motions of the plane relative to the camera.

    Rotations are about the camera center (camera yaw/pitch/roll), so pixel
    displacements scale with the image; blur lengths are roughly 4-8 px at
    128 px.
    """
    k = size / 128.0
    px = DEPTH / size  # world units per pixel at the plane
    o = np.zeros(3)
    deg = math.radians
    return {
        "upward": RigidMotion(np.eye(3), [0.0, -6.0 * k * px, 0.0]),
        "forward": RigidMotion(np.eye(3), [0.0, 0.0, -0.9]),
        "forward+yaw": RigidMotion.about_point(o, [0.0, deg(1.5), 0.0], [0.0, 0.0, -0.7]),
        "forward+roll": RigidMotion.about_point(o, [0.0, 0.0, deg(3.0)], [0.0, 0.0, -0.6]),
        "yaw": RigidMotion.about_point(o, [0.0, deg(2.5), 0.0]),
        "lateral+pitch": RigidMotion.about_point(o, [deg(2.0), 0.0, 0.0], [5.0 * k * px, 0.0, 0.0]),
    }


PLANAR_TEXTURES = {
    "upward": ("leaves", 11),
    "forward": ("leaves", 12),
    "forward+yaw": ("leaves", 13),
    "forward+roll": ("leaves", 14),
    "yaw": ("checker", 15),
    "lateral+pitch": ("leaves", 16),
}


def squares_scene(size=128) -> SceneSpec:
    """Two squares translating in front of a slowly panning textured wall."""
    cam = default_camera(size)
    k = size / 128.0
    big = size + 2 * MARGIN
    wall_depth, sq_depth = 14.0, 8.0
    wall_px = wall_depth / size
    wall = Layer(make_texture("leaves", big, big, 21, k),
                 PlanePatch([0, 0, 1 / wall_depth],
                            se3_log(RigidMotion(np.eye(3), [-5 * k * wall_px, 2 * k * wall_px, 0])), 0))
    px = sq_depth / size
    a = int(24 * k), int(28 * k), int(64 * k), int(68 * k)
    b = int(70 * k), int(60 * k), int(110 * k), int(104 * k)
    sq1 = Layer(make_texture("checker", big, big, 22, k),
                PlanePatch([0, 0, 1 / sq_depth], se3_log(RigidMotion(np.eye(3), [5 * k * px, 1 * k * px, 0])), 1),
                _rect_support(size, *a))
    sq2 = Layer(make_texture("leaves", big, big, 23, k),
                PlanePatch([0, 0, 1 / sq_depth], se3_log(RigidMotion(np.eye(3), [-2 * k * px, -5 * k * px, 0])), 2),
                _rect_support(size, *b))
    return SceneSpec("squares", cam, size, size, [sq1, sq2, wall],
                     description="two fronto-parallel squares translating over a panning wall")


def triplane_scene(size=128) -> SceneSpec:
    """Three planes with different 3D motions and orientations."""
    cam = default_camera(size)
    k = size / 128.0
    big = size + 2 * MARGIN
    back = Layer(make_texture("leaves", big, big, 31, k),
                 PlanePatch([0.0, 0.0, 1 / 15.0], se3_log(RigidMotion.about_point(
                     [0, 0, 15.0], [0, 0, math.radians(1.5)], [0, 0, -0.6])), 0))
    c1 = _px_to_world(cam, 38 * k, 44 * k, 9.0)
    n1 = np.array([0.3, 0.0, 1.0])
    n1 = n1 / (n1 @ c1)
    left = Layer(make_texture("checker", big, big, 32, k),
                 PlanePatch(n1, se3_log(RigidMotion.about_point(
                     c1, [0, math.radians(7.0), math.radians(3.0)], [0.25, 0, -0.3])), 1),
                 _rect_support(size, int(10 * k), int(14 * k), int(66 * k), int(74 * k)))
    c2 = _px_to_world(cam, 90 * k, 86 * k, 8.0)
    n2 = np.array([0.0, -0.25, 1.0])
    n2 = n2 / (n2 @ c2)
    right = Layer(make_texture("leaves", big, big, 33, k),
                  PlanePatch(n2, se3_log(RigidMotion.about_point(
                      c2, [math.radians(5.0), 0, math.radians(-4.0)], [-0.1, -0.2, -0.5])), 2),
                  _rect_support(size, int(64 * k), int(60 * k), int(118 * k), int(114 * k)))
    return SceneSpec("triplane", cam, size, size, [right, left, back],
                     description="three tilted planes with independent rotations and translations")


PLANAR_NAMES = tuple(_planar_motions(128))
OCCLUSION_NAMES = ("squares", "triplane")
SUITE_NAMES = PLANAR_NAMES + OCCLUSION_NAMES


def make_scene(name: str, size: int = 128) -> SceneSpec:
    if name in PLANAR_NAMES:
        kind, seed = PLANAR_TEXTURES[name]
        return planar_scene(name, _planar_motions(size)[name], size, kind, seed,
                            description=f"planar texture, {name} motion")
    if name == "squares":
        return squares_scene(size)
    if name == "triplane":
        return triplane_scene(size)
    raise KeyError(f"unknown scene {name!r}; choose from {', '.join(SUITE_NAMES)}")


def standard_suite(size: int = 128) -> list[SceneSpec]:
    """Six single-plane motions and two multi-layer occlusion scenes."""
    return [make_scene(name, size) for name in SUITE_NAMES]
