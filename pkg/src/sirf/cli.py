"""Command-line front end: ``sirf <command> [options]``.

Commands: simulate, fuse, register, denoise, metrics, sweep, bench.

Every command accepts ``--config FILE``, a key=value file whose keys are the
long option names (dashes or underscores). Keys at the top of the file apply
to all commands, keys under a ``[command]`` header only to that command, and
flags given on the command line win over both.

Exit status is 0 on success, 2 on usage errors (bad options, images whose
sizes do not fit together) and 1 on runtime errors.
"""

import argparse
import configparser
import csv
import datetime
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from sirf import __version__
from sirf.io import load_image, rgb_view, save_image
from sirf.metrics import evaluate
from sirf.registration import RegistrationConfig, register, translation_sweep
from sirf.resample import TransformParams
from sirf.simulate import piecewise_constant_scene, simulate
from sirf.solver import SolverConfig, sirf_fuse
from sirf.tensor import replicate_pan
from sirf.vtv import vtv_denoise

log = logging.getLogger("sirf")

THREADS_ENV = "SIRF_NUM_THREADS"
BENCH_COLUMNS = ("size", "pixels", "iterations", "total_seconds", "seconds_per_iteration")


class UsageError(Exception):
    """Bad command-line input; maps to exit status 2."""


# --- argument parsing -----------------------------------------------------


def _floats(text):
    try:
        return [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common(p):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--reference-mode", action="store_true",
                   help="force single-threaded numerical kernels for bit-reproducible output")
    p.add_argument("--manifest", help="write a JSON run manifest here")
    p.add_argument("-v", "--verbose", action="store_true")


def _solver_options(p):
    p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="regularisation weight (default 0.1)")
    p.add_argument("--max-outer", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-3, help="relative-change stopping tolerance")
    p.add_argument("--inner-iters", type=int, default=3, help="dual iterations per prox step")
    p.add_argument("--no-momentum", dest="momentum", action="store_false")
    p.add_argument("--plain-decimation", dest="antialias", action="store_false",
                   help="decimate without the antialiasing prefilter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sirf", description="Pan-sharpening by joint registration and fusion.")
    parser.add_argument("--version", action="version", version=f"sirf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="make a low-resolution MS / pan pair from a ground truth")
    _common(p)
    p.add_argument("--gt", help="ground-truth image; a random piecewise-constant scene if omitted")
    p.add_argument("--size", type=_ints, default=[128, 128], help="scene rows,cols when generating")
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--shapes", type=int, default=12, help="number of shapes in a generated scene")
    p.add_argument("--scale", type=int, default=4, help="resolution ratio c")
    p.add_argument("--weights", type=_floats, help="pan weights, one per band (default uniform)")
    p.add_argument("--shift", type=_floats, help="true pan translation tx,ty in pixels")
    p.add_argument("--plain-decimation", dest="antialias", action="store_false")
    p.add_argument("--out-ms", required=True)
    p.add_argument("--out-pan", required=True)
    p.add_argument("--out-gt", help="also write the ground truth (useful for generated scenes)")

    p = sub.add_parser("fuse", help="fuse a multispectral image with a pan image")
    _common(p)
    p.add_argument("--ms", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--scale", type=int, help="resolution ratio c; checked against the image sizes")
    _solver_options(p)
    p.add_argument("--register", action=argparse.BooleanOptionalAction, default=True,
                   help="estimate the pan transform during fusion (default on)")
    p.add_argument("--reg-first-k", type=int, default=3, help="register during the first K iterations")
    p.add_argument("--kind", choices=("translation", "affine"), default="translation")
    p.add_argument("--levels", type=int, help="pyramid levels for registration")
    p.add_argument("--armijo", type=float, help="sufficient-decrease constant of the registration line search")
    p.add_argument("--rgb", type=_ints, default=[0, 1, 2], help="band indices written to PNG output")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="per-iteration CSV trace")

    p = sub.add_parser("register", help="estimate the transform taking the pan image onto an image")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--kind", choices=("translation", "affine"), default="translation")
    p.add_argument("--levels", type=int)
    p.add_argument("--inner-iters", type=int, default=3)
    p.add_argument("--armijo", type=float, help="sufficient-decrease constant (default 0.1)")
    p.add_argument("--init", type=_floats, help="initial parameters (2 for translation, 6 for affine)")
    p.add_argument("--out", help="JSON result (printed to stdout if omitted)")

    p = sub.add_parser("denoise", help="vector total-variation denoising, optionally guided by a pan image")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--pan", help="guide image; plain VTV denoising without it")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="quality metrics of a fused image against ground truth")
    _common(p)
    p.add_argument("--fused", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pan", help="pan image for FCC (default: band mean of the truth)")
    p.add_argument("--scale", type=float, default=4.0)
    p.add_argument("--peak", type=float, default=255.0)
    p.add_argument("--out", help=".json or .csv report (JSON to stdout if omitted)")

    p = sub.add_parser("sweep", help="registration energy over integer translations")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--pan", required=True)
    p.add_argument("--range", dest="shift_range", type=_ints, default=[-6, 6], help="min,max shift")
    p.add_argument("--axis", choices=("x", "y"), default="x")
    p.add_argument("--remap", choices=("none", "gamma", "log", "invert"), default="none",
                   help="monotone intensity remap applied to the pan first")
    p.add_argument("--out", help="CSV of shift,energy")

    p = sub.add_parser("bench", help="per-iteration fusion time against image size")
    _common(p)
    p.add_argument("--sizes", type=_ints, default=[128, 256, 384, 512])
    p.add_argument("--iters", type=int, default=10, help="outer iterations timed per size")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out", help="timings CSV (stdout if omitted)")
    return parser


def read_config(path, command) -> dict:
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, default_section="__all__")
    cp.optionxform = lambda k: k.strip().replace("-", "_")
    try:
        cp.read_string("[__all__]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    values = dict(cp.defaults())
    if cp.has_section(command):
        values.update({k: cp.get(command, k) for k in cp.options(command)})
    return values


def _apply_config(sub_parser, values, path):
    actions = {a.dest: a for a in sub_parser._actions}
    aliases = {"lambda": "lam"}
    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key, key)
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            raise UsageError(f"{path}: unknown option {key!r}")
        if action.nargs == 0:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise UsageError(f"{path}: {key} needs a boolean, got {raw!r}")
            value = low in ("true", "yes", "1", "on")
            # store_false flags keep the positive meaning of the destination
            defaults[dest] = value
        else:
            defaults[dest] = action.type(raw) if action.type else raw
            if action.choices and defaults[dest] not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
    sub_parser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub_parser = parser._subparsers._group_actions[0].choices[args.command]
        try:
            values = read_config(args.config, args.command)
            _apply_config(sub_parser, values, args.config)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
        except OSError as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        args = parser.parse_args(argv)
    return args


# --- helpers --------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class Run:
    """Collects inputs, outputs and settings of one command for the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.started = _now()
        self.inputs = {}
        self.outputs = {}
        self.extra = {}

    def read(self, role, path):
        if path is None:
            return None
        self.inputs[role] = str(path)
        return load_image(path)

    def wrote(self, role, path):
        self.outputs[role] = str(path)

    def manifest(self) -> dict:
        settings = {k: v for k, v in vars(self.args).items() if k not in ("manifest", "verbose")}
        return {
            "tool": "sirf",
            "version": __version__,
            "command": self.args.command,
            "argv": self.argv,
            "settings": settings,
            "seed": self.args.seed,
            "reference_mode": self.args.reference_mode,
            "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in self.inputs.items()},
            "outputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in self.outputs.items()},
            "started": self.started,
            "finished": _now(),
            **self.extra,
        }

    def finish(self):
        if self.args.manifest:
            Path(self.args.manifest).write_text(json.dumps(self.manifest(), indent=2, default=str) + "\n")


def _thread_limit(args):
    if args.reference_mode:
        return threadpool_limits(limits=1)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return threadpool_limits(limits=n)
    return nullcontext()


def _write_image(x, path, rgb=(0, 1, 2)):
    if Path(path).suffix.lower() == ".png":
        x = rgb_view(x, rgb)
    save_image(x, path)


def _write_json(obj, path=None):
    text = json.dumps(obj, indent=2, default=str) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _shape_str(x) -> str:
    return "x".join(str(v) for v in x.shape)


# --- commands -------------------------------------------------------------


def cmd_simulate(args, run):
    if args.gt:
        gt = run.read("gt", args.gt)
    else:
        if len(args.size) != 2:
            raise UsageError(f"--size needs rows,cols, got {args.size}")
        gt = piecewise_constant_scene(args.size[0], args.size[1], args.bands, args.shapes, seed=args.seed)
    m, n = gt.shape[1:]
    if args.scale < 1 or m % args.scale or n % args.scale:
        raise UsageError(f"ground truth {m}x{n} is not divisible by scale {args.scale}")
    theta = None
    if args.shift is not None:
        if len(args.shift) != 2:
            raise UsageError(f"--shift needs tx,ty, got {args.shift}")
        theta = TransformParams.translation(*args.shift)
    try:
        ms, pan = simulate(gt, args.scale, args.weights, theta, args.antialias)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    save_image(ms, args.out_ms)
    run.wrote("ms", args.out_ms)
    save_image(pan, args.out_pan)
    run.wrote("pan", args.out_pan)
    if args.out_gt:
        save_image(gt, args.out_gt)
        run.wrote("gt", args.out_gt)
    run.extra["theta_true"] = theta.to_dict() if theta else None
    log.info("ms %s, pan %s", _shape_str(ms), _shape_str(pan))


def _fit_inputs(ms, pan, scale):
    if pan.shape[0] != 1:
        raise UsageError(f"pan image must have one band, got shape {_shape_str(pan)}")
    m, n = pan.shape[1:]
    mm, mn = ms.shape[1:]
    c = m // mm if mm else 0
    if c < 1 or m != c * mm or n != c * mn or (scale is not None and scale != c):
        want = f"scale {scale}" if scale is not None else "an integer scale"
        raise UsageError(f"multispectral shape {_shape_str(ms)} and pan shape {_shape_str(pan)} do not fit {want}")
    return c


def cmd_fuse(args, run):
    ms = run.read("ms", args.ms)
    pan = run.read("pan", args.pan)
    c = _fit_inputs(ms, pan, args.scale)
    reg = replace(SolverConfig().registration, kind=args.kind, pyramid_levels=args.levels)
    if args.armijo is not None:
        reg = replace(reg, armijo=args.armijo)
    try:
        cfg = SolverConfig(
            lam=args.lam, max_outer=args.max_outer, tol=args.tol, inner_denoise_iters=args.inner_iters,
            reg_enabled=args.register, reg_first_k=min(args.reg_first_k, args.max_outer),
            momentum=args.momentum, antialias=args.antialias, registration=reg,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    x, theta, trace = sirf_fuse(ms, pan, cfg)
    _write_image(x, args.out, args.rgb)
    run.wrote("fused", args.out)
    if args.trace:
        trace.to_csv(args.trace)
        run.wrote("trace", args.trace)
    run.extra.update(scale=c, lam=args.lam, theta=theta.to_dict(), iterations=len(trace),
                     final_objective=trace.rows[-1]["objective"])
    log.info("%d iterations, theta=%s", len(trace), theta.theta)


def cmd_register(args, run):
    x = run.read("image", args.image)
    pan = run.read("pan", args.pan)
    if pan.shape[0] != 1 or pan.shape[1:] != x.shape[1:]:
        raise UsageError(f"image shape {_shape_str(x)} and pan shape {_shape_str(pan)} must share rows and cols")
    theta0 = None
    if args.init is not None:
        try:
            theta0 = TransformParams(args.kind, tuple(args.init))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    cfg = RegistrationConfig(kind=args.kind, pyramid_levels=args.levels, inner_iters=args.inner_iters)
    if args.armijo is not None:
        cfg = replace(cfg, armijo=args.armijo)
    theta, trace = register(x, pan, theta0, cfg)
    result = {"theta": theta.to_dict(), "accepted_steps": len(trace), "trace": trace.rows}
    _write_json(result, args.out)
    if args.out:
        run.wrote("result", args.out)
    run.extra["theta"] = theta.to_dict()


def cmd_denoise(args, run):
    y = run.read("image", args.image)
    if args.pan:
        pan = run.read("pan", args.pan)
        if pan.shape[0] != 1 or pan.shape[1:] != y.shape[1:]:
            raise UsageError(f"image shape {_shape_str(y)} and pan shape {_shape_str(pan)} must share rows and cols")
        ref = replicate_pan(pan, y.shape[0])
    else:
        ref = np.zeros_like(y)
    x, _ = vtv_denoise(y, ref, args.lam, args.iters)
    save_image(x, args.out)
    run.wrote("denoised", args.out)


def cmd_metrics(args, run):
    x = run.read("fused", args.fused)
    g = run.read("truth", args.truth)
    pan = run.read("pan", args.pan)
    if x.shape != g.shape:
        raise UsageError(f"fused shape {_shape_str(x)} and truth shape {_shape_str(g)} differ")
    if pan is not None and pan.shape[1:] != g.shape[1:]:
        raise UsageError(f"pan shape {_shape_str(pan)} does not match truth shape {_shape_str(g)}")
    report = evaluate(x, g, pan, args.scale, args.peak)
    if args.out and Path(args.out).suffix.lower() == ".csv":
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(report.csv_rows())
    else:
        _write_json(report.to_dict(), args.out)
    if args.out:
        run.wrote("report", args.out)
    run.extra["metrics"] = report.to_dict()


REMAPS = {
    "none": lambda p: p,
    "gamma": lambda p: 255.0 * (np.clip(p, 0, None) / max(float(p.max()), 1e-12)) ** 2.2,
    "log": lambda p: np.log1p(np.clip(p, 0, None)),
    "invert": lambda p: float(p.max()) - p,
}


def cmd_sweep(args, run):
    x = run.read("image", args.image)
    pan = run.read("pan", args.pan)
    if pan.shape[0] != 1 or pan.shape[1:] != x.shape[1:]:
        raise UsageError(f"image shape {_shape_str(x)} and pan shape {_shape_str(pan)} must share rows and cols")
    if len(args.shift_range) != 2 or args.shift_range[0] > args.shift_range[1]:
        raise UsageError(f"--range needs min,max with min <= max, got {args.shift_range}")
    shifts = np.arange(args.shift_range[0], args.shift_range[1] + 1)
    energy = translation_sweep(x, REMAPS[args.remap](pan), shifts, args.axis)
    best = int(shifts[int(np.argmin(energy))])
    rows = [("shift", "energy")] + [(int(s), repr(float(e))) for s, e in zip(shifts, energy)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        run.wrote("sweep", args.out)
    else:
        csv.writer(sys.stdout).writerows(rows)
    print(f"argmin {args.axis} = {best}", file=sys.stderr)
    run.extra["argmin"] = best


def bench_rows(sizes, iters, scale=4, seed=0):
    """Time ``iters`` outer iterations per square size; one row per size.

    ``seconds_per_iteration`` is the median over the timed iterations.
    """
    rows = []
    for size in sizes:
        if size % scale:
            raise UsageError(f"bench size {size} is not divisible by scale {scale}")
        gt = piecewise_constant_scene(size, size, 4, seed=seed)
        ms, pan = simulate(gt, scale)
        cfg = SolverConfig(max_outer=iters, tol=0.0, reg_enabled=False, reg_first_k=0)
        t0 = time.perf_counter()
        _, _, trace = sirf_fuse(ms, pan, cfg)
        total = time.perf_counter() - t0
        stamps = [0.0] + trace.column("seconds")
        per_iter = float(np.median(np.diff(stamps)))
        rows.append({"size": size, "pixels": size * size, "iterations": len(trace),
                     "total_seconds": total, "seconds_per_iteration": per_iter})
        log.info("size %d: %.4f s per iteration", size, per_iter)
    return rows


def cmd_bench(args, run):
    if args.iters < 1:
        raise UsageError("--iters must be at least 1")
    rows = bench_rows(args.sizes, args.iters, args.scale, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    if args.out:
        run.wrote("timings", args.out)
    run.extra["timings"] = rows


COMMANDS = {
    "simulate": cmd_simulate, "fuse": cmd_fuse, "register": cmd_register, "denoise": cmd_denoise,
    "metrics": cmd_metrics, "sweep": cmd_sweep, "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return 0 if exc.code in (0, None) else 2
    except UsageError as exc:
        print(f"sirf: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    np.random.seed(args.seed)
    run = Run(args, argv)
    try:
        with _thread_limit(args):
            COMMANDS[args.command](args, run)
        run.finish()
    except UsageError as exc:
        print(f"sirf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        log.debug("traceback", exc_info=True)
        print(f"sirf {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
