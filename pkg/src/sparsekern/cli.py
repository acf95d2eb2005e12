"""Command-line interface: voxelize, bench, erf, train-toy, inspect.

Conventions: data goes to stdout, diagnostics to stderr. Exit code 0 on
success, 2 on usage/validation/format errors, 1 on internal errors. All
randomness flows from --seed; with identical flags and seeds every
subcommand produces byte-identical output apart from measured latencies.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import bench as bench_mod
from .conv import PlainConvLayer, SwpConvLayer, read_spwt, write_spwt
from .core import (
    SceneSpec,
    load_points_csv,
    random_scene,
    read_spvx,
    voxelize,
    write_spvx,
)
from .errors import SparsekernError
from .net import (
    Block,
    Net,
    SUBMANIFOLD,
    build_kmaps,
    erf_compute,
    make_desk_net,
    train_step,
    write_erf_csv,
    write_erf_pgm,
)
from .rng import SplitMix64


def _parse_floats(text: str, what: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be comma-separated numbers")


def _parse_ints(text: str, what: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be comma-separated integers")


def _kernel_list(text: str) -> List[int]:
    return _parse_ints(text, "--kernels")


def _mode_list(text: str) -> List[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    for m in modes:
        if m not in (bench_mod.PLAIN, bench_mod.SWP):
            raise argparse.ArgumentTypeError(f"unknown mode {m!r} (use plain,swp)")
    return modes


def _extent_arg(text: str):
    vals = _parse_ints(text, "--extent")
    if len(vals) == 2:
        lo, hi = vals
        return ((lo, hi), (lo, hi), (lo, hi))
    if len(vals) == 6:
        return ((vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5]))
    raise argparse.ArgumentTypeError("--extent takes lo,hi or x0,x1,y0,y1,z0,z1")


def _range_arg(text: str):
    vals = _parse_floats(text, "--range")
    if len(vals) == 2:
        lo, hi = vals
        return ((lo, hi), (lo, hi), (lo, hi))
    if len(vals) == 6:
        return ((vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5]))
    raise argparse.ArgumentTypeError("--range takes lo,hi or x0,x1,y0,y1,z0,z1")


def _voxel_size_arg(text: str):
    vals = _parse_floats(text, "--voxel-size")
    if len(vals) == 1:
        return (vals[0],) * 3
    if len(vals) == 3:
        return tuple(vals)
    raise argparse.ArgumentTypeError("--voxel-size takes one value or three")


def _target_arg(text: str):
    vals = _parse_ints(text, "--target")
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("--target takes x,y,z,channel")
    return vals


def _apply_threads(args) -> None:
    """Cap engine parallelism; the shipped kernels are sequential anyway."""
    n = args.threads
    if n is None:
        env = os.environ.get("SPARSEKERN_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise SparsekernError(f"SPARSEKERN_THREADS must be an integer, got {env!r}")
    if n is None:
        return
    if n < 1:
        raise SparsekernError(f"--threads must be >= 1, got {n}")
    import numba

    numba.set_num_threads(min(n, numba.get_num_threads()))


def cmd_voxelize(args) -> int:
    size = args.voxel_size
    if any(v <= 0 for v in size):
        raise SparsekernError(f"--voxel-size must be positive, got {size}")
    vrange = args.range
    if any(hi <= lo for lo, hi in vrange):
        raise SparsekernError(f"--range must be non-degenerate, got {vrange}")
    points, feats = load_points_csv(args.input)
    tensor = voxelize(points, feats, size, vrange)
    write_spvx(tensor, args.output)
    cells = 1
    for (lo, hi), s in zip(vrange, size):
        cells *= max(1, int(np.ceil((hi - lo) / s)))
    print(f"n_voxels={tensor.n_voxels}")
    print(f"channels={tensor.channels}")
    print(f"occupancy={tensor.n_voxels / cells:.6g}")
    return 0


def cmd_bench(args) -> int:
    spec = SceneSpec(args.voxels, args.extent, args.channels, args.seed)
    config = bench_mod.BenchConfig(
        kernels=args.kernels,
        modes=args.mode,
        scene=spec,
        c_in=args.channels,
        c_out=args.channels,
        warmup=args.warmup,
        repeats=args.repeats,
        include_map=args.include_map,
    )
    rows = bench_mod.bench_run(config)
    sys.stdout.write(bench_mod.rows_to_csv(rows))
    return 0


def _net_from_spwt(path) -> Net:
    layers = read_spwt(path)
    return Net([Block(layer, SUBMANIFOLD) for layer in layers])


def cmd_erf(args) -> int:
    net = _net_from_spwt(args.model)
    scene = read_spvx(args.scene)
    x, y, z, channel = args.target
    result = erf_compute(net, scene, (x, y, z), channel)
    csv_path = args.out_prefix + ".csv"
    pgm_path = args.out_prefix + ".pgm"
    write_erf_csv(result, csv_path)
    write_erf_pgm(result, pgm_path, args.axis)
    nonzero = int(np.count_nonzero(result.values))
    print(f"target=({x},{y},{z}) channel={channel}")
    print(f"support={nonzero}/{len(result.values)}")
    print(f"all_zero={str(result.all_zero).lower()}")
    print(f"wrote {csv_path} and {pgm_path}")
    return 0


def cmd_train_toy(args) -> int:
    if args.steps < 0:
        raise SparsekernError(f"--steps must be >= 0, got {args.steps}")
    if args.lr < 0:
        raise SparsekernError(f"--lr must be >= 0, got {args.lr}")
    if args.classes < 2:
        raise SparsekernError(f"--classes must be >= 2, got {args.classes}")
    spec = SceneSpec(args.voxels, args.extent, args.channels, args.seed)
    scene = random_scene(spec, dtype=np.float64)
    # planted linear rule: labels = argmax of a fixed random projection,
    # so the loss is genuinely reducible by a small net
    rng = SplitMix64(args.seed + 1)
    proj = rng.symmetric_array(args.channels * args.classes).reshape(
        args.channels, args.classes
    )
    labels = np.argmax(scene.features @ proj, axis=1)
    net = make_desk_net(
        args.variant,
        in_channels=args.channels,
        kernel_size=args.kernel,
        n_classes=args.classes,
        seed=args.seed,
        dtype=np.float64,
    )
    kmaps = build_kmaps(net, scene)
    print("step,loss")
    for step in range(args.steps):
        net, loss = train_step(net, scene, labels, args.lr, kmaps)
        print(f"{step},{loss:.12g}")
    _, final_loss = train_step(net, scene, labels, 0.0, kmaps)
    print(f"{args.steps},{final_loss:.12g}")
    if args.save_model:
        path = args.save_model + ".spwt"
        write_spwt([b.layer for b in net.blocks], path)
        print(f"saved model to {path}", file=sys.stderr)
    return 0


def cmd_inspect(args) -> int:
    with open(args.file, "rb") as fh:
        magic = fh.read(6)
    if magic == b"SPVX1\n":
        tensor = read_spvx(args.file)
        print("format=SPVX version=1")
        print(f"n_voxels={tensor.n_voxels}")
        print(f"channels={tensor.channels}")
        print(f"dtype={tensor.features.dtype}")
        lo = tensor.coords.min(axis=0)
        hi = tensor.coords.max(axis=0)
        print(f"bbox=({lo[0]},{lo[1]},{lo[2]})..({hi[0]},{hi[1]},{hi[2]})")
        print("invariants=ok")  # unique + canonical order enforced by the reader
        return 0
    if magic == b"SPWT1\n":
        layers = read_spwt(args.file)
        print(f"format=SPWT version=1 records={len(layers)}")
        for i, layer in enumerate(layers):
            kind = "swp" if isinstance(layer, SwpConvLayer) else "plain"
            print(
                f"layer{i}: kind={kind} kernel={layer.pattern.size} "
                f"c_in={layer.c_in} c_out={layer.c_out} "
                f"dtype={layer.weights.dtype} params={layer.param_count}"
            )
        print("invariants=ok")
        return 0
    from .errors import FormatError

    raise FormatError("unrecognised magic", 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsekern",
        description="Sparse 3D convolution engine: voxelization, benchmarks, "
        "receptive-field analysis, and toy training.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap engine parallelism (falls back to SPARSEKERN_THREADS; the "
        "built-in kernels are sequential and deterministic regardless)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", parents=[common], help="CSV point cloud -> SPVX tensor")
    p.add_argument("input", help="CSV with header and x,y,z,f1,...,fC rows")
    p.add_argument("output", help="output .spvx path")
    p.add_argument("--voxel-size", type=_voxel_size_arg, required=True)
    p.add_argument("--range", type=_range_arg, required=True,
                   help="half-open per-axis range: lo,hi or x0,x1,y0,y1,z0,z1")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser(
        "bench",
        parents=[common],
        help="latency/params/macs benchmark, CSV to stdout",
        description="Benchmarks one forward pass per kernel size and mode on a "
        "randomly scattered scene. The timed region excludes rulebook "
        "construction unless --include-map is given (a layer is benchmarked "
        "given its input). Latencies are machine-specific; compare orderings "
        "and ratios, not absolute milliseconds.",
    )
    p.add_argument("--kernels", type=_kernel_list,
                   default=[3, 5, 7, 9, 11, 13, 15, 17],
                   help="comma-separated odd kernel sizes (default 3,5,...,17)")
    p.add_argument("--mode", type=_mode_list, default=[bench_mod.PLAIN, bench_mod.SWP],
                   help="comma-separated subset of plain,swp")
    p.add_argument("--voxels", type=int, default=bench_mod.DEFAULT_VOXELS)
    p.add_argument("--extent", type=_extent_arg, default=bench_mod.DEFAULT_EXTENT,
                   help="inclusive coordinate range (default 0,199 per axis, "
                   "about 1%% occupancy at 80000 voxels)")
    p.add_argument("--channels", type=int, default=bench_mod.DEFAULT_CHANNELS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--include-map", action="store_true",
                   help="include rulebook construction in the timed region")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("erf", parents=[common],
                       help="effective receptive field of one output feature")
    p.add_argument("model", help=".spwt checkpoint; records stack into a submanifold net")
    p.add_argument("scene", help=".spvx input tensor")
    p.add_argument("out_prefix", help="writes <prefix>.csv and <prefix>.pgm")
    p.add_argument("--target", type=_target_arg, required=True, help="x,y,z,channel")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z",
                   help="projection axis for the PGM (default z)")
    p.set_defaults(func=cmd_erf)

    p = sub.add_parser("train-toy", parents=[common],
                       help="toy training loop; loss curve CSV to stdout")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--voxels", type=int, default=64)
    p.add_argument("--extent", type=_extent_arg, default=((0, 7), (0, 7), (0, 7)))
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--variant", choices=("plain", "swp"), default="swp")
    p.add_argument("--kernel", type=int, default=None,
                   help="kernel size of the variant blocks (default 7 swp / 3 plain)")
    p.add_argument("--save-model", default=None, metavar="PREFIX",
                   help="also write the trained layers to PREFIX.spwt")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("inspect", parents=[common],
                       help="print SPVX/SPWT headers and invariant checks")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except (SparsekernError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
