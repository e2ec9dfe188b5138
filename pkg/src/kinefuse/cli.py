"""Command-line interface: ``kinefuse <command> [options]``.

Every command reads the run configuration (``--config``, default the shipped
one) with ``--set section.key=value`` overrides, prints a console table and,
with ``--report PATH``, writes the structured JSON report. Written files
contain no timings or paths, so a rerun with the same configuration produces
byte-identical output.

Exit codes: 0 success, 1 a check or acceptance condition failed, 2 usage
error, 3 bad configuration, 4 I/O failure, 5 malformed dataset or
checkpoint, 6 any other computation error.
"""
import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from . import checks
from . import config as cfgmod
from . import metrics
from .errors import ConfigError, DatasetError, KinefuseError
from .fusion import ada
from .synth import generate_sequence, read_dataset, write_dataset

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_DATA = 5
EXIT_COMPUTE = 6

log = logging.getLogger("kinefuse")


# ---------------------------------------------------------------------------
# shared helpers

def _parse_set(items):
    out = {}
    for item in items or ():
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(text)
        except json.JSONDecodeError:
            out[key.strip()] = text
    return out


def _load_config(args, extra=None):
    cfg = cfgmod.load_config(args.config)
    overrides = _parse_set(args.set)
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    return cfgmod.apply_overrides(cfg, overrides) if overrides else cfg


def _generate(cfg, seeds):
    tree, rest = cfg.load_skeleton()
    return [generate_sequence(tree, rest, cfg.data.n_frames, noise=cfg.noise, motion=cfg.motion, seed=s,
                              random_calibration=cfg.data.random_calibration) for s in seeds]


def _datasets(cfg, paths, seeds):
    """Datasets from files if given, else generated from the config seeds."""
    if paths:
        return [read_dataset(p) for p in paths]
    return _generate(cfg, seeds)


def _sensors(text):
    if text is None:
        return None
    text = text.strip()
    return () if text in ("", "none") else tuple(int(s) for s in text.split(","))


def _write_json(path, doc):
    if path is None:
        return
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _finite(value):
    """JSON has no infinity; thresholds of ``inf`` are written as the string ``"inf"``."""
    return "inf" if isinstance(value, float) and math.isinf(value) else value


def _emit(text):
    sys.stdout.write(text + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    cfg = _load_config(args, {"data.n_frames": args.frames})
    if args.all:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        jobs = [("train", s) for s in cfg.data.train_seeds] + [("test", s) for s in cfg.data.test_seeds]
        rows = []
        for split, seed in jobs:
            ds = _generate(cfg, [seed])[0]
            path = out / f"{split}_{seed}.jsonl"
            write_dataset(ds, path)
            rows.append([split, seed, len(ds), path.name])
        _emit(metrics.format_table(["split", "seed", "frames", "file"], rows))
        return EXIT_OK
    seed = cfg.data.test_seeds[0] if args.seed is None else args.seed
    ds = _generate(cfg, [seed])[0]
    write_dataset(ds, args.out)
    _emit(metrics.format_table(["seed", "frames", "sensors", "file"],
                               [[seed, len(ds), list(ds.sensors), Path(args.out).name]]))
    return EXIT_OK


def cmd_fuse(args):
    cfg = _load_config(args, {"fusion.theta_t": args.theta})
    ds = read_dataset(args.input)
    sensors = _sensors(args.sensors)
    model = None
    if args.method == "ada":
        if args.model is None:
            raise ConfigError("--method ada needs --model CHECKPOINT")
        model = ada.load_model(args.model)
    theta = cfg.fusion.theta_t
    pose, replaced = metrics.fuse_dataset(ds, args.method, theta, sensors, model, cfg.fusion.screen_against,
                                          cfg.backend)
    note = {"method": args.method, "theta_t": _finite(theta),
            "sensors": None if sensors is None else list(sensors)}
    write_dataset(ds.with_estimate(pose, note), args.output)
    rows = [[args.method, theta, len(ds), "-" if replaced is None else int(replaced.sum())]]
    _emit(metrics.format_table(["method", "theta", "frames", "replaced"], rows))
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args, {"fusion.epochs": args.epochs, "fusion.seed": args.seed,
                              "fusion.architecture": args.architecture})
    tree, rest = cfg.load_skeleton()
    train = _datasets(cfg, args.train, cfg.data.train_seeds)
    val = _datasets(cfg, args.val, cfg.data.test_seeds) if (args.val or not args.train) else None
    sensors = _sensors(args.sensors)
    model, history = ada.train_ada(train, tree, rest, cfg.fusion, val_sets=val, sensors=sensors)
    ada.save_model(model, args.out)
    _write_json(args.report, {"format": "kinefuse-training", "version": 1,
                              "config": cfg.to_dict(), "history": history})
    header = ["epoch", "train_loss", "train_mpjpe"] + (["val_mpjpe"] if val else [])
    rows = [[h["epoch"], h["train_loss"], h["train_mpjpe"]] + ([h["val_mpjpe"]] if val else []) for h in history]
    _emit(metrics.format_table(header, rows))
    return EXIT_OK


def cmd_eval(args):
    _load_config(args)
    pred = read_dataset(args.pred)
    ref = pred if args.gt is None else read_dataset(args.gt)
    target = ref.gt_pose if args.reference == "gt" else ref.vis_pose
    echo = {"estimate": pred.provenance.get("estimate"), "reference": args.reference,
            "seed": pred.provenance.get("seed")}
    report = metrics.mpjpe(pred.vis_pose, target, pred.tree, config=echo)
    _write_json(args.report, report.to_dict())
    _emit(metrics.report_table(report))
    return EXIT_OK


def _sweep_echo(cfg, paths):
    return {"data": "files" if paths else {"seeds": list(cfg.data.test_seeds), "n_frames": cfg.data.n_frames},
            "noise": cfg.to_dict()["noise"], "theta_grid": list(cfg.sweep.theta_grid)}


def cmd_sweep_theta(args):
    cfg = _load_config(args)
    if args.grid:
        cfg = cfgmod.apply_overrides(cfg, {"sweep.theta_grid": [float(t) for t in args.grid.split(",")]})
    data = _datasets(cfg, args.data, cfg.data.test_seeds)
    out = metrics.sweep_theta(data, args.method, cfg.sweep.theta_grid, screen_against=cfg.fusion.screen_against)
    doc = {"format": "kinefuse-sweep-theta", "version": 1, "method": args.method,
           "rows": [{**r, "theta": _finite(r["theta"])} for r in out["rows"]],
           "best": out["best"], "config": _sweep_echo(cfg, args.data)}
    _write_json(args.report, doc)
    rows = [[r["theta"], r["mpjpe"], r["imu_related"], r["others"], r["replaced"]] for r in out["rows"]]
    _emit(metrics.format_table(["theta", "mpjpe", "imu_related", "others", "replaced"], rows))
    if out["best"] is not None:
        _emit(f"best theta {out['best']['theta']:.2f}: MPJPE {out['best']['mpjpe']:.2f} mm")
    return EXIT_OK


def cmd_sweep_imus(args):
    cfg = _load_config(args, {"fusion.theta_t": args.theta})
    data = _datasets(cfg, args.data, cfg.data.test_seeds)
    out = metrics.sweep_imu_subsets(data, cfg.sweep.subsets, cfg.fusion.theta_t, cfg.fusion.screen_against,
                                    cfg.backend)
    doc = {"format": "kinefuse-sweep-imus", "version": 1, **out,
           "note": "upper vs lower ordering is data dependent and reported, not asserted",
           "config": _sweep_echo(cfg, args.data)}
    doc["theta_t"] = _finite(doc["theta_t"])
    _write_json(args.report, doc)
    rows = [[r["subset"], r["sensors"], r["mpjpe"], r["imu_related"], r["others"]] for r in out["rows"]]
    _emit(metrics.format_table(["subset", "sensors", "mpjpe", "imu_related", "others"], rows))
    return EXIT_OK


def _suite_output(args, result):
    seconds = result.pop("seconds", None)
    _write_json(args.report, result)
    rows = [[k, v] for k, v in result.items() if k not in ("suite", "passed")]
    _emit(metrics.format_table(["quantity", "value"], rows, floatfmt="{:.3e}"))
    timing = "" if seconds is None else f" in {seconds:.2f} s"
    _emit(f"{result['suite']}: {'PASS' if result['passed'] else 'FAIL'}{timing}")
    return EXIT_OK if result["passed"] else EXIT_CHECK_FAILED


def cmd_gradcheck(args):
    cfg = _load_config(args)
    tree, rest = cfg.load_skeleton()
    return _suite_output(args, checks.gradcheck_suite(tree, rest, args.seed, args.n, cfg.backend))


def cmd_roundtrip(args):
    cfg = _load_config(args)
    tree, rest = cfg.load_skeleton()
    return _suite_output(args, checks.roundtrip_suite(tree, rest, args.seed, args.n, cfg.backend))


# ---------------------------------------------------------------------------
# parser

def _common(p, report=True):
    p.add_argument("--config", help="run configuration JSON (default: the shipped config)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value, e.g. fusion.theta_t=0.3 (repeatable; JSON values)")
    p.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend for FK/IK")
    if report:
        p.add_argument("--report", help="write the structured JSON report here")


def build_parser():
    parser = argparse.ArgumentParser(prog="kinefuse", description="IMU-vision pose fusion in kinematic space")
    parser.add_argument("--version", action="version", version=f"kinefuse {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate synthetic datasets")
    _common(p, report=False)
    p.add_argument("out", help="dataset file (or directory with --all)")
    p.add_argument("--seed", type=int, help="sequence seed (default: first test seed)")
    p.add_argument("--frames", type=int, help="frames per sequence (overrides data.n_frames)")
    p.add_argument("--all", action="store_true", help="write every train and test sequence of the config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fuse", help="fuse vision and IMU in a dataset, write the fused estimate")
    _common(p, report=False)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", choices=("none", "naive", "kine", "ada"), default="kine")
    p.add_argument("--theta", type=cfgmod.parse_theta, help="screening threshold in radians (or inf)")
    p.add_argument("--sensors", help="comma-separated sensor ids (default: all)")
    p.add_argument("--model", help="AdaFuse checkpoint for --method ada")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", help="train the AdaFuse module")
    _common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--train", nargs="+", help="training dataset files (default: generated from config)")
    p.add_argument("--val", nargs="+", help="validation dataset files (default: config test seeds)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--architecture", choices=ada.ARCHITECTURES)
    p.add_argument("--sensors", help="comma-separated sensor ids (default: all)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MPJPE report of a dataset's estimate")
    _common(p)
    p.add_argument("pred", help="dataset whose estimate (vis_pose) is evaluated")
    p.add_argument("gt", nargs="?", help="dataset holding the reference (default: pred itself)")
    p.add_argument("--reference", choices=("gt", "estimate"), default="gt",
                   help="compare against the reference file's ground truth or its estimate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-theta", help="MPJPE over a grid of screening thresholds")
    _common(p)
    p.add_argument("--method", choices=("naive", "kine"), default="kine")
    p.add_argument("--grid", help="comma-separated thresholds in radians (default: sweep.theta_grid)")
    p.add_argument("--data", nargs="+", help="dataset files (default: config test seeds)")
    p.set_defaults(func=cmd_sweep_theta)

    p = sub.add_parser("sweep-imus", help="KineFuse MPJPE per IMU subset")
    _common(p)
    p.add_argument("--theta", type=cfgmod.parse_theta)
    p.add_argument("--data", nargs="+", help="dataset files (default: config test seeds)")
    p.set_defaults(func=cmd_sweep_imus)

    p = sub.add_parser("gradcheck", help="finite-difference checks of FK and the AdaFuse loss")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="random configurations")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("roundtrip", help="FK/IK exactness checks")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000, help="random poses")
    p.set_defaults(func=cmd_roundtrip)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DatasetError as exc:
        log.error("data format error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (KinefuseError, ValueError) as exc:
        log.error("error: %s", exc)
        return EXIT_COMPUTE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
