"""Command-line interface: calibrate, build, render, interp, denoise, serve.

Subcommands compose through files only: `calibrate` writes a calibration
JSON, `build` turns a manifest plus calibration into a binary model,
`render`/`interp`/`denoise` consume manifests or models, `serve` exposes a
model over HTTP.  Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as fio
from .calibrate import CalibConfig, CalibrationDivergence, calibrate, regauge_to_coords, write_history_csv
from .construct import construct_fdl
from .lfmodel import ShiftParams
from .pipeline import PipelineConfig, denoise, interpolate_views
from .render import RenderRequest, aperture_spectrum, render
from .serve import serve_forever


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._user_exit(message))

    def _user_exit(self, message):
        print(f"error: {message}", file=sys.stderr)
        return 1


def _add_common_calib_flags(p):
    p.add_argument("-n", "--layers", type=int, default=30, help="number of layers")
    p.add_argument("--batch", type=int, default=4096, help="frequencies per iteration")
    p.add_argument("--alpha", type=float, default=0.2, help="descent step size")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="regularization weight")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--d-min", type=float, default=-2.0)
    p.add_argument("--d-max", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)


def _calib_config(args, grid_dims=None) -> CalibConfig:
    kw = {}
    if args.lam is not None:
        kw["lam"] = args.lam
    return CalibConfig(
        n_layers=args.layers, batch_size=args.batch, step=args.alpha,
        max_iters=args.max_iters, d_min=args.d_min, d_max=args.d_max,
        seed=args.seed, grid_dims=grid_dims, **kw,
    )


def _manifest_grid(path):
    import json

    try:
        doc = json.loads(Path(path).read_text())
        g = doc.get("grid")
        return tuple(g) if g else None
    except Exception:
        return None


def cmd_calibrate(args) -> int:
    views = fio.load_lightfield(args.manifest)
    config = _calib_config(args, grid_dims=_manifest_grid(args.manifest))
    result = calibrate(views, config)
    # express the estimate in the manifest's coordinate units so later
    # render/interp targets mean what the user expects
    shifts = regauge_to_coords(result.shift_params, views.u, views.v)
    fio.save_calibration(args.output, shifts.u, shifts.v, shifts.d, meta={
        "iterations": len(result.history),
        "objective": result.history[-1].objective if result.history else None,
        "converged": result.converged,
    })
    if args.history:
        write_history_csv(result.history, args.history)
    print(f"calibrated {views.num_views} views, {config.n_layers} layers "
          f"in {len(result.history)} iterations -> {args.output}")
    return 0


def cmd_build(args) -> int:
    views = fio.load_lightfield(args.manifest, to_linear=args.linear)
    if args.calib:
        shifts = fio.load_calibration(args.calib)
    else:
        if args.disparities is None:
            raise fio.ManifestError("provide --calib or an explicit --disparities list")
        d = np.array([float(x) for x in args.disparities.split(",")])
        shifts = ShiftParams.factored(views.u, views.v, np.sort(d))
    model = construct_fdl(views, shifts, lam=args.lam, pad_margin=args.pad)
    fio.save_model(args.output, model)
    print(f"built model: {model.num_layers} layers, {model.width}x{model.height}"
          f"+{model.pad_margin}px pad, lambda={model.lambda_used:.3e} -> {args.output}")
    return 0


def _aperture_from_args(args):
    name = args.aperture
    if name == "pinhole":
        return aperture_spectrum("pinhole")
    if name == "disk":
        return aperture_spectrum("disk", diameter=args.aperture_size, pad_factor=args.pad_factor)
    if name == "square":
        return aperture_spectrum("square", side=args.aperture_size, pad_factor=args.pad_factor)
    raise fio.ManifestError(f"unknown aperture name {name!r}")


def cmd_render(args) -> int:
    model = fio.load_model(args.model)
    req = RenderRequest(
        u=args.u, v=args.v, s=args.s, f=args.f,
        aperture=_aperture_from_args(args),
        gamma_mode="linear-process" if args.linear else "as-stored",
    )
    img = render(model, req)
    fio.save_image(args.out, img, bit_depth=args.bits)
    print(f"rendered u={args.u} v={args.v} s={args.s} f={args.f} -> {args.out}")
    return 0


def _load_or_calibrate_shifts(args, views):
    if args.calib:
        return fio.load_calibration(args.calib)
    return None


def cmd_interp(args) -> int:
    views = fio.load_lightfield(args.manifest)
    targets = []
    for spec in args.at:
        try:
            u, v = (float(x) for x in spec.split(","))
        except ValueError:
            raise fio.ManifestError(f"malformed --at {spec!r}; expected U,V") from None
        targets.append((u, v))
    if not targets:
        raise fio.ManifestError("no target coordinates given (use --at U,V)")
    config = PipelineConfig(n_layers=args.layers, lam=args.lam,
                            known_shifts=_load_or_calibrate_shifts(args, views),
                            seed=args.seed)
    sink: dict = {}
    out = interpolate_views(views, targets, config, report_sink=sink)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for j, (u, v) in enumerate(targets):
        fio.save_image(outdir / f"view_{j:03d}_u{u:+.3f}_v{v:+.3f}.png", out.images[j])
    if args.report:
        import json

        Path(args.report).write_text(json.dumps(sink, indent=2))
    flagged = sum(sink.get("extrapolated", []))
    note = f" ({flagged} extrapolated)" if flagged else ""
    print(f"interpolated {len(targets)} views{note} -> {outdir}")
    return 0


def cmd_denoise(args) -> int:
    views = fio.load_lightfield(args.manifest)
    config = PipelineConfig(n_layers=args.layers, lam=args.lam,
                            known_shifts=_load_or_calibrate_shifts(args, views),
                            seed=args.seed)
    out, report = denoise(views, config, relaxed=args.relaxed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for j in range(out.num_views):
        fio.save_image(outdir / f"denoised_{j:03d}.png", out.images[j])
    if args.report:
        report.write_json(args.report)
    print(f"denoised {out.num_views} views (mean self-PSNR {report.mean_psnr:.2f} dB) -> {outdir}")
    return 0


def cmd_serve(args) -> int:
    model = fio.load_model(args.model)
    viewer = args.viewer
    if viewer is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend"
        viewer = bundled if (bundled / "index.html").is_file() else None
    serve_forever(model, port=args.port, threads=args.threads, viewer_dir=viewer)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("calibrate", help="estimate view positions and disparities")
    pc.add_argument("manifest")
    pc.add_argument("-o", "--output", required=True)
    pc.add_argument("--history", help="write per-iteration history CSV")
    _add_common_calib_flags(pc)
    pc.set_defaults(func=cmd_calibrate)

    pb = sub.add_parser("build", help="construct the layer model")
    pb.add_argument("manifest")
    pb.add_argument("--calib", help="calibration JSON from `fdl calibrate`")
    pb.add_argument("--disparities", help="comma-separated layer disparities (with manifest coords)")
    pb.add_argument("-o", "--output", required=True)
    pb.add_argument("--lambda", dest="lam", type=float, default=None)
    pb.add_argument("--pad", type=int, default=None, help="spatial zero-pad margin in pixels")
    pb.add_argument("--linear", action="store_true", help="decode to linear light before building")
    pb.set_defaults(func=cmd_build)

    pr = sub.add_parser("render", help="render a view from a model")
    pr.add_argument("model")
    pr.add_argument("--u", type=float, default=0.0)
    pr.add_argument("--v", type=float, default=0.0)
    pr.add_argument("--s", type=float, default=0.0)
    pr.add_argument("--f", type=float, default=0.0)
    pr.add_argument("--aperture", default="disk", help="pinhole | disk | square")
    pr.add_argument("--aperture-size", type=float, default=1.0)
    pr.add_argument("--pad-factor", type=int, default=4)
    pr.add_argument("--out", required=True)
    pr.add_argument("--bits", type=int, default=8, choices=(8, 16))
    pr.add_argument("--linear", action="store_true",
                    help="model is linear light; re-encode output to sRGB")
    pr.set_defaults(func=cmd_render)

    pi = sub.add_parser("interp", help="interpolate/extrapolate views")
    pi.add_argument("manifest")
    pi.add_argument("--at", action="append", default=[], metavar="U,V")
    pi.add_argument("--calib")
    pi.add_argument("-o", "--output", required=True)
    pi.add_argument("--layers", type=int, default=30)
    pi.add_argument("--lambda", dest="lam", type=float, default=None)
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("--report")
    pi.set_defaults(func=cmd_interp)

    pd = sub.add_parser("denoise", help="re-render the inputs through the model")
    pd.add_argument("manifest")
    pd.add_argument("--relaxed", action="store_true",
                    help="refine per-(view,layer) shifts without the rank-1 constraint")
    pd.add_argument("--calib")
    pd.add_argument("-o", "--output", required=True)
    pd.add_argument("--layers", type=int, default=30)
    pd.add_argument("--lambda", dest="lam", type=float, default=None)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--report")
    pd.set_defaults(func=cmd_denoise)

    ps = sub.add_parser("serve", help="HTTP render service")
    ps.add_argument("model")
    ps.add_argument("--port", type=int, default=8080)
    ps.add_argument("--threads", type=int, default=None)
    ps.add_argument("--viewer", help="directory with the viewer bundle")
    ps.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return args.func(args)
    except (fio.ManifestError, fio.ModelFormatError, CalibrationDivergence, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
