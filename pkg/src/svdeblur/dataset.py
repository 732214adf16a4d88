"""On-disk dataset layout and the file formats it uses.

A dataset directory holds::

    blurred.png        8- or 16-bit RGB
    reference.png      optional sharp ground truth
    segmentation.pgm   16-bit segment labels
    occlusion.pgm      binary mask (nonzero = occluded / motion boundary)
    patches.sdv        camera and per-segment plane + motion, see below
    flow.pfm           optional 2D displacements (forward x, y, backward x, y)

``patches.sdv`` is a header line ``sdv1`` followed by a JSON document::

    {"camera": {"K": [9 reals], "duty_cycle": 1.0, "center": [3 reals], "samples": 70},
     "segments": [{"id": 0, "normal": [3 reals],
                   "motion": {"rotation": [9 reals, row-major], "translation": [3 reals]}}]}

``center`` and ``samples`` are optional.  Motions are stored as matrices and
converted to twists on load.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np

from .blurmodel import BlurSpec, FlowField
from .errors import DimensionMismatch, InvariantViolation, MissingSegment, ParseError
from .geometry import CameraModel, PlanePatch, RigidMotion, se3_exp, se3_log

SIDECAR_HEADER = "sdv1"

BLURRED = "blurred.png"
REFERENCE = "reference.png"
SEGMENTATION = "segmentation.pgm"
OCCLUSION = "occlusion.pgm"
SIDECAR = "patches.sdv"
FLOW = "flow.pfm"


# images ---------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as float RGB in [0, 1]."""
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ParseError(path, "pixels", "not a readable image")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ParseError(path, "pixels", f"unsupported sample type {raw.dtype}")
    if raw.ndim == 2:
        raw = np.repeat(raw[..., None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[..., :3]
    return raw[..., ::-1].astype(float) / scale


def save_image(path, image, bits: int = 16):
    """Write float RGB (or gray) in [0, 1] as PNG; values are clamped and rounded."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    a = np.asarray(image, dtype=float)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    maxv = 255 if bits == 8 else 65535
    q = np.round(np.clip(a, 0.0, 1.0) * maxv).astype(np.uint8 if bits == 8 else np.uint16)
    if q.ndim == 3:
        q = np.ascontiguousarray(q[..., ::-1])
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")


def load_pgm(path) -> np.ndarray:
    """Single-channel 8- or 16-bit PGM as an integer array."""
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.ndim != 2:
        raise ParseError(path, "pixels", "not a single-channel PGM")
    return raw


def save_pgm(path, values, bits: int = 16):
    a = np.asarray(values)
    maxv = 255 if bits == 8 else 65535
    if a.min(initial=0) < 0 or a.max(initial=0) > maxv:
        raise InvariantViolation(f"PGM values must lie in [0, {maxv}]")
    if not cv2.imwrite(str(path), a.astype(np.uint8 if bits == 8 else np.uint16)):
        raise OSError(f"could not write {path}")


# flow -----------------------------------------------------------------------

FLOW_HEADER = b"PF4"


def save_flow(path, flow: FlowField):
    """PFM-style: ``PF4``, ``W H``, ``-1.0`` (little endian), rows bottom to top."""
    data = np.concatenate([flow.forward, flow.backward], axis=2).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(FLOW_HEADER + b"\n")
        fh.write(f"{flow.width} {flow.height}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1]).tobytes())


def load_flow(path) -> FlowField:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != FLOW_HEADER:
            raise ParseError(path, "header", f"expected {FLOW_HEADER.decode()}, got {header[:16]!r}")
        try:
            width, height = (int(v) for v in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise ParseError(path, "dimensions", str(exc)) from None
        dtype = "<f4" if scale < 0 else ">f4"
        body = fh.read()
    expected = width * height * 4 * 4
    if len(body) != expected:
        raise ParseError(path, "data", f"expected {expected} bytes, got {len(body)}")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width, 4)[::-1].astype(float)
    if not np.all(np.isfinite(data)):
        raise InvariantViolation(f"{path}: flow contains non-finite values")
    return FlowField(data[..., :2], data[..., 2:])


# sidecar --------------------------------------------------------------------

def _reals(path, field, value, n):
    if not isinstance(value, list) or len(value) != n:
        raise ParseError(path, field, f"expected a list of {n} numbers")
    try:
        out = np.array([float(v) for v in value])
    except (TypeError, ValueError):
        raise ParseError(path, field, "entries must be numbers") from None
    if not np.all(np.isfinite(out)):
        raise ParseError(path, field, "entries must be finite")
    return out


def _get(path, obj, key, field):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(path, field, "missing")
    return obj[key]


def sidecar_text(camera: CameraModel, spec: BlurSpec, patches) -> str:
    doc = {
        "camera": {
            "K": camera.intrinsics.ravel().tolist(),
            "duty_cycle": spec.duty_cycle,
            "samples": spec.samples,
            "center": camera.center.tolist(),
        },
        "segments": [],
    }
    for patch in sorted(patches, key=lambda p: p.segment_id):
        m = se3_exp(patch.motion)
        doc["segments"].append({
            "id": int(patch.segment_id),
            "normal": patch.normal.tolist(),
            "motion": {"rotation": m.rotation.ravel().tolist(), "translation": m.translation.tolist()},
        })
    return SIDECAR_HEADER + "\n" + json.dumps(doc, indent=1) + "\n"


def parse_sidecar(text: str, path="<sidecar>"):
    """``(camera, spec, patches)`` from sidecar text."""
    header, _, body = text.partition("\n")
    if header.strip() != SIDECAR_HEADER:
        raise ParseError(path, "header", f"expected {SIDECAR_HEADER!r}")
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(path, "body", str(exc)) from None
    cam = _get(path, doc, "camera", "camera")
    K = _reals(path, "camera.K", _get(path, cam, "K", "camera.K"), 9).reshape(3, 3)
    duty = _get(path, cam, "duty_cycle", "camera.duty_cycle")
    if not isinstance(duty, (int, float)) or isinstance(duty, bool):
        raise ParseError(path, "camera.duty_cycle", "must be a number")
    center = _reals(path, "camera.center", cam["center"], 3) if "center" in cam else np.zeros(3)
    samples = cam.get("samples", BlurSpec().samples)
    if not isinstance(samples, int) or isinstance(samples, bool):
        raise ParseError(path, "camera.samples", "must be an integer")
    camera = CameraModel(K, center)
    spec = BlurSpec(float(duty), samples)

    segments = _get(path, doc, "segments", "segments")
    if not isinstance(segments, list):
        raise ParseError(path, "segments", "must be a list")
    patches = []
    seen = set()
    for i, seg in enumerate(segments):
        where = f"segments[{i}]"
        sid = _get(path, seg, "id", where + ".id")
        if not isinstance(sid, int) or isinstance(sid, bool) or sid < 0:
            raise ParseError(path, where + ".id", "must be a non-negative integer")
        if sid in seen:
            raise InvariantViolation(f"{path}: duplicate segment id {sid}")
        seen.add(sid)
        normal = _reals(path, where + ".normal", _get(path, seg, "normal", where + ".normal"), 3)
        motion = _get(path, seg, "motion", where + ".motion")
        R = _reals(path, where + ".motion.rotation",
                   _get(path, motion, "rotation", where + ".motion.rotation"), 9).reshape(3, 3)
        T = _reals(path, where + ".motion.translation",
                   _get(path, motion, "translation", where + ".motion.translation"), 3)
        try:
            patches.append(PlanePatch(normal, se3_log(RigidMotion(R, T)), sid))
        except InvariantViolation as exc:
            raise type(exc)(f"{path}: {where}: {exc}") from None
    return camera, spec, patches


# dataset --------------------------------------------------------------------

class Dataset(NamedTuple):
    blurred: np.ndarray
    segmentation: np.ndarray
    patches: list
    camera: CameraModel
    spec: BlurSpec
    occlusion: np.ndarray
    flow: FlowField | None = None
    reference: np.ndarray | None = None

    @property
    def shape(self):
        return self.blurred.shape[:2]


def validate(ds: Dataset):
    """Check the layout invariants; raises on the first violation."""
    H, W = ds.shape
    if ds.segmentation.shape != (H, W):
        raise DimensionMismatch(f"segmentation is {ds.segmentation.shape}, image is {(H, W)}")
    if ds.occlusion.shape != (H, W):
        raise DimensionMismatch(f"occlusion mask is {ds.occlusion.shape}, image is {(H, W)}")
    if ds.reference is not None and ds.reference.shape != ds.blurred.shape:
        raise DimensionMismatch("reference and blurred images differ in size")
    if ds.flow is not None and (ds.flow.height, ds.flow.width) != (H, W):
        raise DimensionMismatch("flow field does not match the image")
    ids = {p.segment_id for p in ds.patches}
    for label in np.unique(ds.segmentation):
        if int(label) not in ids:
            raise MissingSegment(int(label))


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise ParseError(root, "directory", "does not exist")
    for name in (BLURRED, SEGMENTATION, OCCLUSION, SIDECAR):
        if not (root / name).is_file():
            raise ParseError(root / name, "file", "missing")
    blurred = load_image(root / BLURRED)
    reference = load_image(root / REFERENCE) if (root / REFERENCE).is_file() else None
    segmentation = load_pgm(root / SEGMENTATION).astype(np.int64)
    occlusion = load_pgm(root / OCCLUSION) > 0
    camera, spec, patches = parse_sidecar((root / SIDECAR).read_text(), root / SIDECAR)
    flow = load_flow(root / FLOW) if (root / FLOW).is_file() else None
    ds = Dataset(blurred, segmentation, patches, camera, spec, occlusion, flow, reference)
    validate(ds)
    return ds


def save_dataset(path, ds: Dataset, bits: int = 16):
    validate(ds)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_image(root / BLURRED, ds.blurred, bits)
    if ds.reference is not None:
        save_image(root / REFERENCE, ds.reference, bits)
    save_pgm(root / SEGMENTATION, ds.segmentation, 16)
    save_pgm(root / OCCLUSION, np.where(ds.occlusion, 255, 0), 8)
    (root / SIDECAR).write_text(sidecar_text(ds.camera, ds.spec, ds.patches))
    if ds.flow is not None:
        save_flow(root / FLOW, ds.flow)
