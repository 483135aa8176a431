"""``dpc`` command line: register, eval, train, gradcheck, gen.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as dio
from .datagen import PairSpec, gen2d, gen3d, manifest_row, read_manifest, write_manifest
from .errors import ConfigError, DataError, DPCError
from .grid import Grid, Grid2, Pose7, apply_pose2, voxelize
from .metrics import DEFAULT_THRESHOLDS_2D, DEFAULT_THRESHOLDS_3D, evaluate
from .pipeline import SolverConfig, forward2, forward3, register2, register3

log = logging.getLogger("dpc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- shared options

def _solver_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("solver")
    g.add_argument("--bandwidth", type=int, default=32, help="voxel grid half-side B for point clouds (default 32)")
    g.add_argument("--extent", type=float, default=2.0, help="side of the voxelized cube in metres (default 2)")
    g.add_argument("--checkpoint", type=Path, help="trained FilterStack (.dpcw); classical mode if omitted")
    g.add_argument("--eps", type=float, default=1e-8, help="whitening floor relative to mean |G2|^2")
    g.add_argument("--xi-r", type=float, default=10.0, help="rotation temperature")
    g.add_argument("--xi-mu", type=float, default=10.0, help="scale temperature")
    g.add_argument("--xi-t", type=float, default=10.0, help="translation temperature")
    g.add_argument("--window", type=int, default=4,
                   help="half-width of the expectation window in bins; negative for a global expectation")
    return p


def _common_flags(seed=0):
    # a fresh parent per subcommand: argparse shares parent actions, so set_defaults would leak
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes for batch work")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def solver_config(args):
    return SolverConfig(eps=args.eps, xi_r=args.xi_r, xi_mu=args.xi_mu, xi_t=args.xi_t,
                        window=None if args.window < 0 else args.window,
                        bandwidth=args.bandwidth, extent=args.extent)


def _stack(args):
    return dio.load_checkpoint(args.checkpoint) if args.checkpoint else None


def _require(path):
    if not Path(path).exists():
        raise DataError(f"{path}: no such file")
    return Path(path)


def load_input(path, dims, cfg):
    """Image, grid or point cloud from ``path`` as a grid ready for registration."""
    path = _require(path)
    suffix = path.suffix.lower()
    if dims == 2:
        return dio.load_image(path)
    if suffix == ".dpcg":
        g = dio.load_grid(path, cfg.extent)
        if g.ndim != 3:
            raise DataError(f"{path}: expected a 3D grid")
        return g
    return voxelize(dio.load_cloud(path), cfg.bandwidth, cfg.extent)


# ---------------------------------------------------------------- dumps

def _dump_map(path, arr):
    arr = np.asarray(arr, float)
    if arr.ndim == 2:
        dio.save_image(path.with_suffix(".pgm"), arr, normalize=True)
    if arr.ndim in (2, 3) and len(set(arr.shape)) == 1 and arr.shape[0] % 2 == 0:
        dio.save_grid(path.with_suffix(".dpcg"), arr)
    else:
        np.savetxt(path.with_suffix(".csv"), arr.reshape(arr.shape[0], -1), delimiter=",", fmt="%.9g")


def dump(dump_dir, g1, g2, pose, out):
    dump_dir.mkdir(parents=True, exist_ok=True)
    for stage, d in out.items():
        _dump_map(dump_dir / f"{stage}_corr", d["map"].value)
    if isinstance(g1, Grid2):
        comp = apply_pose2(g2, pose.inverse())
        dio.save_image(dump_dir / "compensated.pgm", comp.data, normalize=True)
        dio.save_image(dump_dir / "overlay.pgm", 0.5 * (g1.data + comp.data), normalize=True)


# ---------------------------------------------------------------- register

def _register_one(task):
    src, tgt, dims, cfg, ckpt, dump_dir = task
    stack = dio.load_checkpoint(ckpt) if ckpt else None
    g1, g2 = load_input(src, dims, cfg), load_input(tgt, dims, cfg)
    if dims == 2:
        res = register2(g1, g2, stack, cfg)
        pose = res.pose
        line = dio.format_record(pose)
    else:
        res = register3(g1, g2, stack, cfg)
        pose = res.pose.to_unit("m", g1.voxel_size)
        line = dio.format_record(pose, res.peaks)
    if dump_dir is not None:
        fwd = forward2 if dims == 2 else forward3
        _, out, _ = fwd(g1.data, g2.data, stack, cfg)
        dump(Path(dump_dir), g1, g2, res.pose, out)
    return line


def _manifest_tasks(manifest, dims, cfg, ckpt, dump_dir):
    rows = read_manifest(_require(manifest))
    base = Path(manifest).parent
    tasks = []
    for r in rows:
        d = Path(dump_dir) / str(r["pair_id"]) if dump_dir else None
        tasks.append((base / r["source_path"], base / r["target_path"], dims, cfg, ckpt, d))
    return tasks


def run_tasks(tasks, jobs):
    """Apply ``_register_one`` to every task; output order follows input order."""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_register_one, tasks))
    return [_register_one(t) for t in tasks]


def cmd_register(args):
    dims = 2 if args.dims == "2d" else 3
    cfg = solver_config(args)
    if args.checkpoint:
        _require(args.checkpoint)
    if args.manifest:
        if args.source or args.target:
            raise ConfigError("give either --manifest or SOURCE TARGET, not both")
        tasks = _manifest_tasks(args.manifest, dims, cfg, args.checkpoint, args.dump_dir)
    else:
        if not (args.source and args.target):
            raise ConfigError("SOURCE and TARGET are required without --manifest")
        tasks = [(args.source, args.target, dims, cfg, args.checkpoint, args.dump_dir)]
    lines = run_tasks(tasks, args.jobs)
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args):
    rows = read_manifest(_require(args.manifest))
    truths = [r["pose"] for r in rows]
    ests = dio.read_records(_require(args.results))
    three_d = bool(truths) and isinstance(truths[0], Pose7)
    thresholds = dict(DEFAULT_THRESHOLDS_3D if three_d else DEFAULT_THRESHOLDS_2D)
    for key in thresholds:
        val = getattr(args, f"tau_{key}")
        if val is not None:
            thresholds[key] = val
    m = evaluate(ests, truths, thresholds, range(args.sweep))
    for ln in m.lines():
        print(ln)
    print("sweep tau " + " ".join(str(t) for t in range(args.sweep)))
    for k, curve in m.sweep.items():
        print(f"sweep {k} " + " ".join(f"{v:.1f}" for v in curve))
    if args.per_pair:
        with open(args.per_pair, "w", newline="") as fh:
            keys = list(m.per_pair[0]) if m.per_pair else []
            w = csv.writer(fh)
            w.writerow(["pair_id", *keys])
            for r, e in zip(rows, m.per_pair):
                w.writerow([r["pair_id"], *(f"{e[k]:.9g}" for k in keys)])
    return EXIT_OK


# ---------------------------------------------------------------- train

def load_pairs(manifest, cfg):
    rows = read_manifest(_require(manifest))
    if not rows:
        raise DataError(f"{manifest}: no pairs")
    base = Path(manifest).parent
    dims = 3 if isinstance(rows[0]["pose"], Pose7) else 2
    pairs = []
    for r in rows:
        g1 = load_input(base / r["source_path"], dims, cfg)
        g2 = load_input(base / r["target_path"], dims, cfg)
        pose = r["pose"]
        if dims == 3:
            pose = pose.to_unit("cells", g1.voxel_size)
        pairs.append((g1.data, g2.data, pose))
    return pairs, dims


def cmd_train(args):
    from .autodiff.filters import FilterStack
    from .autodiff.train import TrainConfig, train

    cfg = solver_config(args)
    tcfg = TrainConfig(lr=args.lr, steps=args.steps, seed=args.seed, sigma=args.sigma,
                       optimizer=args.optimizer, decay=args.decay, decay_every=args.decay_every, solver=cfg)
    pairs, dims = load_pairs(args.manifest, cfg)
    stack = _stack(args) or FilterStack(dims, args.layers, args.kernel, xi=args.xi_r, seed=args.seed)

    def progress(step, loss):
        if step % max(1, args.log_every) == 0:
            log.info("step %d loss %.6g", step, loss)

    res = train(pairs, tcfg, stack, callback=progress)
    dio.save_checkpoint(args.out, res.stack)
    if args.curve:
        res.write_curve(args.curve)
    print(f"steps={len(res.curve)} final_loss={res.curve[-1][1]:.6g}" if res.curve else "steps=0")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args):
    from .autodiff.gradcheck import gradcheck

    rep = gradcheck(B=args.B, stage=args.stage, seed=args.seed, h=args.h, n_probe=args.probes)
    for ln in rep.lines():
        print(ln)
    return EXIT_OK if rep.passed(args.tol) else EXIT_NUMERICAL


# ---------------------------------------------------------------- gen

def cmd_gen(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = PairSpec(dims=args.dims, side=args.side,
                    t_max=args.t_max if args.t_max is not None else (50.0 if args.dims == 2 else 0.25),
                    mu_range=(args.mu_min, args.mu_max), blur_sigma=args.blur, outlier_rate=args.outlier_rate,
                    crop=args.crop, extent=args.extent,
                    object_radius=args.object_radius if args.object_radius is not None else
                    (50.0 if args.dims == 2 else 0.35 * args.extent))
    rows = []
    for i in range(args.n):
        seed = args.seed + i
        pid = f"{i:05d}"
        s = spec.with_seed(seed)
        if args.dims == 2:
            src, tgt, pose = gen2d(s)
            names = (f"{pid}_src.pgm", f"{pid}_tgt.pgm")
            dio.save_image(out / names[0], src.data)
            dio.save_image(out / names[1], tgt.data)
        else:
            src, tgt, pose = gen3d(s)
            names = (f"{pid}_src.xyz", f"{pid}_tgt.xyz")
            dio.save_cloud(out / names[0], src)
            dio.save_cloud(out / names[1], tgt)
        rows.append(manifest_row(pid, names[0], names[1], pose, seed))
    write_manifest(out / "manifest.csv", rows, args.dims)
    print(out / "manifest.csv")
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser():
    solver = _solver_flags()
    p = _Parser(prog="dpc", description="Differentiable phase correlation registration.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("register", parents=[solver, _common_flags()], help="register one pair or a manifest of pairs")
    r.add_argument("dims", choices=("2d", "3d"))
    r.add_argument("source", nargs="?", type=Path)
    r.add_argument("target", nargs="?", type=Path)
    r.add_argument("--manifest", type=Path, help="register every row of a dataset manifest")
    r.add_argument("--out", type=Path, help="write result records here instead of stdout")
    r.add_argument("--dump-dir", type=Path, help="write correlation maps and overlays here")
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("eval", parents=[_common_flags()], help="score result records against a manifest")
    e.add_argument("manifest", type=Path)
    e.add_argument("results", type=Path)
    for key, unit in (("x", "px"), ("y", "px"), ("r", "deg"), ("mu", ""), ("t", "m")):
        e.add_argument(f"--tau-{key}", type=float, help=f"accuracy threshold for {key} {unit}".rstrip())
    e.add_argument("--sweep", type=int, default=20, help="integer thresholds 0..N-1 for the accuracy curves")
    e.add_argument("--per-pair", type=Path, help="CSV of per-pair errors")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("train", parents=[solver, _common_flags()], help="fit a FilterStack on a manifest")
    t.add_argument("manifest", type=Path)
    t.add_argument("--out", type=Path, required=True, help="checkpoint path (.dpcw)")
    t.add_argument("--curve", type=Path, help="loss curve CSV")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--sigma", type=float, default=1.0, help="KLD target std in bins")
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--decay", type=float, default=1.0)
    t.add_argument("--decay-every", type=int, default=500)
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--kernel", type=int, default=5)
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", parents=[_common_flags(seed=7)], help="finite-difference check of the analytic gradients")
    g.add_argument("--B", type=int, default=4)
    g.add_argument("--stage", choices=("rotation", "scale", "translation", "rot_scale"), default="rotation")
    g.add_argument("--h", type=float, default=1e-3)
    g.add_argument("--probes", type=int, default=64)
    g.add_argument("--tol", type=float, default=1e-3)
    g.set_defaults(func=cmd_gradcheck)

    n = sub.add_parser("gen", parents=[_common_flags()], help="write a synthetic dataset and manifest")
    n.add_argument("--dims", type=int, choices=(2, 3), default=2)
    n.add_argument("--n", type=int, default=10)
    n.add_argument("--out", type=Path, required=True)
    n.add_argument("--side", type=int, default=256)
    n.add_argument("--t-max", type=float)
    n.add_argument("--mu-min", type=float, default=0.8)
    n.add_argument("--mu-max", type=float, default=1.2)
    n.add_argument("--blur", type=float, default=0.0)
    n.add_argument("--outlier-rate", type=float, default=0.0)
    n.add_argument("--crop", type=float, default=0.0)
    n.add_argument("--extent", type=float, default=2.0)
    n.add_argument("--object-radius", type=float)
    n.set_defaults(func=cmd_gen)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except DPCError as e:
        print(f"dpc: error: {e}", file=sys.stderr)
        return e.exit_code
    except (FloatingPointError, OverflowError) as e:
        print(f"dpc: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"dpc: error: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
