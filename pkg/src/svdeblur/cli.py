"""Command line entry point: ``svdeblur <command> ...``.

Commands print ``key=value`` lines on stdout so their output is easy to
grep or parse; errors go to stderr with a nonzero exit status (2 for usage
errors).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import blurmodel, dataset, metrics, solver, synth
from .errors import DeblurError
from .geometry import RigidMotion


def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what} must be {n} comma-separated numbers")
    return vals


def _vec3(text):
    return _floats(text, 3, "vector")


def _pixel(text):
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pixel must look like x,y, got {text!r}") from None
    return x, y


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError("must be positive")
        return v
    return parse


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.4f}"
    return str(v)


def _emit(**fields):
    print(" ".join(f"{k}={_fmt(v)}" for k, v in fields.items()), flush=True)


# commands -------------------------------------------------------------------

def cmd_synth(args):
    if args.scene:
        scene = synth.make_scene(args.scene, args.size)
    else:
        motion = RigidMotion.about_point([0.0, 0.0, 0.0], np.radians(args.rotation), args.translation)
        scene = synth.planar_scene("custom", motion, args.size, args.texture, args.seed, args.depth)
    if args.noise:
        scene.noise_sigma = args.noise
        scene.noise_seed = args.seed
    t0 = time.perf_counter()
    rendering = synth.render(scene, args.workers)
    blurred, sharp = synth.add_noise(scene, rendering.blurred), rendering.sharp
    side = synth.ground_truth_sidecar(scene, rendering=rendering)
    ds = dataset.Dataset(blurred, side.segmentation, side.patches, scene.camera, scene.spec,
                         side.occlusion, side.flow, sharp)
    dataset.save_dataset(args.out, ds, args.bits)
    _emit(scene=scene.name, width=scene.width, height=scene.height, layers=len(scene.layers),
          mixed_pixels=int(rendering.mixed.sum()), seconds=time.perf_counter() - t0)


def cmd_blur(args):
    ds = dataset.load_dataset(args.dataset)
    sharp = dataset.load_image(args.sharp)
    if sharp.shape != ds.blurred.shape:
        raise DeblurError(f"sharp image is {sharp.shape[:2]}, dataset is {ds.shape}")
    op = blurmodel.assemble_operator(ds.camera, ds.patches, ds.segmentation, ds.spec, args.workers)
    out = blurmodel.apply_blur(op, sharp, args.workers)
    dataset.save_image(args.out, out, args.bits)
    _emit(out=args.out, nnz=op.matrix.nnz, complete_rows=int(op.complete.sum()))


def build_operator(ds: dataset.Dataset, kernel: str, workers: int = 1):
    if kernel == "homography":
        return blurmodel.assemble_operator(ds.camera, ds.patches, ds.segmentation, ds.spec, workers)
    if kernel == "gt-flow":
        flow = blurmodel.homography_flow(ds.camera, ds.patches, ds.segmentation)
        return blurmodel.assemble_flow_operator(flow, ds.spec, workers)
    if kernel == "flow":
        if ds.flow is None:
            raise DeblurError(f"--kernel flow needs {dataset.FLOW} in the dataset")
        return blurmodel.assemble_flow_operator(ds.flow, ds.spec, workers)
    raise ValueError(kernel)


def cmd_deblur(args):
    ds = dataset.load_dataset(args.dataset)
    out = Path(args.out or args.dataset)
    out.mkdir(parents=True, exist_ok=True)
    cfg = solver.SolverConfig(alpha=args.alpha, outer_iterations=args.outer, cg_iterations=args.cg,
                              n_samples=ds.spec.samples)
    t0 = time.perf_counter()
    op = build_operator(ds, args.kernel, args.workers)
    trace = []
    image, weights = solver.deblur(ds.blurred, op, ds.occlusion, cfg, not args.no_boundary_weights,
                                   args.workers, trace)
    elapsed = time.perf_counter() - t0
    dataset.save_image(out / "deblurred.png", image, args.bits)
    dataset.save_image(out / "weights.png", weights, args.bits)
    with open(out / "trace.txt", "w") as fh:
        for record in trace:
            fh.write(record.format() + "\n")
    if args.report:
        from .plotting import deblur_report
        deblur_report(out / "report.png", ds.blurred, image, weights, trace, ds.reference)
    fields = dict(kernel=args.kernel, boundary_weights=int(not args.no_boundary_weights),
                  final_energy=trace[-1].energy, final_dw=trace[-1].weight_change, seconds=elapsed)
    if ds.reference is not None:
        fields.update(psnr_blurred=metrics.psnr(ds.reference, ds.blurred),
                      psnr=metrics.psnr(ds.reference, image), ssim=metrics.ssim(ds.reference, image))
    _emit(**fields)


def cmd_eval(args):
    ref = dataset.load_image(args.reference)
    img = dataset.load_image(args.image)
    p, s = metrics.psnr(ref, img), metrics.ssim(ref, img)
    _emit(psnr=p, ssim=s)
    if args.figure:
        from .plotting import comparison_figure
        comparison_figure(args.figure, ref, img, p, s)


def cmd_kernel_dump(args):
    ds = dataset.load_dataset(args.dataset)
    H, W = ds.shape
    for x, y in args.pixel:
        if not (0 <= x < W and 0 <= y < H):
            raise DeblurError(f"pixel {x},{y} lies outside the {W}x{H} image")
    op = build_operator(ds, args.kernel, args.workers)
    canvas = np.zeros((H, W))
    for x, y in args.pixel:
        row = op.row_image(x, y)
        canvas = np.maximum(canvas, row / row.max() if row.max() > 0 else row)
    out = Path(args.out)
    if out.suffix.lower() == ".pgm":
        dataset.save_pgm(out, np.round(canvas * 65535), 16)
    else:
        dataset.save_image(out, canvas, 16)
    if args.figure:
        from .plotting import kernel_figure
        lookup = {p.segment_id: p for p in ds.patches}
        samples = None
        if args.kernel == "homography":
            samples = [blurmodel.homography_kernel_samples(x, y, ds.camera, lookup[int(ds.segmentation[y, x])],
                                                           ds.spec) for x, y in args.pixel]
        kernel_figure(args.figure, ds.blurred, canvas, args.pixel, samples)
    for x, y in args.pixel:
        idx, w = op.row(x, y)
        _emit(pixel=f"{x},{y}", taps=len(idx), mass=float(w.sum()))


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svdeblur", description="Spatially-variant motion deblurring from scene flow.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scene into a dataset directory")
    s.add_argument("out", help="output dataset directory")
    s.add_argument("--scene", choices=synth.SUITE_NAMES, help="standard suite scene (default: custom plane)")
    s.add_argument("--size", type=_positive(int), default=128)
    s.add_argument("--rotation", type=_vec3, default=[0.0, 0.0, 0.0],
                   help="custom plane: rotation vector in degrees about the camera center, per frame")
    s.add_argument("--translation", type=_vec3, default=[0.0, 0.0, -0.8],
                   help="custom plane: translation per frame (plane depth units)")
    s.add_argument("--depth", type=_positive(float), default=synth.DEPTH)
    s.add_argument("--texture", choices=sorted(synth.TEXTURES), default="leaves")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0, help="additive Gaussian noise sigma")
    s.add_argument("--bits", type=int, choices=(8, 16), default=16)
    s.add_argument("--workers", type=_positive(int), default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("blur", help="blur a sharp image with a dataset's homography operator")
    s.add_argument("dataset")
    s.add_argument("sharp")
    s.add_argument("out")
    s.add_argument("--bits", type=int, choices=(8, 16), default=16)
    s.add_argument("--workers", type=_positive(int), default=1)
    s.set_defaults(func=cmd_blur)

    s = sub.add_parser("deblur", help="deblur a dataset's blurred frame")
    s.add_argument("dataset")
    s.add_argument("--out", help="output directory (default: the dataset directory)")
    s.add_argument("--kernel", choices=("homography", "flow", "gt-flow"), default="homography")
    s.add_argument("--no-boundary-weights", action="store_true", help="keep data weights at one")
    s.add_argument("--alpha", type=_positive(float), default=solver.SolverConfig.alpha)
    s.add_argument("--outer", type=_positive(int), default=solver.SolverConfig.outer_iterations)
    s.add_argument("--cg", type=_positive(int), default=solver.SolverConfig.cg_iterations)
    s.add_argument("--report", action="store_true", help="also write report.png")
    s.add_argument("--bits", type=int, choices=(8, 16), default=16)
    s.add_argument("--workers", type=_positive(int), default=1)
    s.set_defaults(func=cmd_deblur)

    s = sub.add_parser("eval", help="PSNR and SSIM of an image against a reference")
    s.add_argument("reference")
    s.add_argument("image")
    s.add_argument("--figure", help="write a comparison figure here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("kernel-dump", help="write blur rows of selected pixels as an image")
    s.add_argument("dataset")
    s.add_argument("--pixel", type=_pixel, action="append", required=True, help="x,y (repeatable)")
    s.add_argument("--kernel", choices=("homography", "flow", "gt-flow"), default="homography")
    s.add_argument("--out", default="kernels.png", help=".png or .pgm")
    s.add_argument("--figure", help="write an overlay figure here")
    s.add_argument("--workers", type=_positive(int), default=1)
    s.set_defaults(func=cmd_kernel_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (DeblurError, OSError, KeyError, ValueError) as exc:
        print(f"svdeblur {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
