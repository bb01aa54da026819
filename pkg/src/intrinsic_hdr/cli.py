"""Batch command line: simulate, train, reconstruct, evaluate, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
failure. Failures print one line to stderr of the form
``intrinsic-hdr: error[<kind>]: <reason>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import codecs, evaluation, gradcheck, intrinsic, isp, training
from .image import ImageError
from .models import ROLES, CheckpointError, build, read_checkpoint, write_checkpoint

PROG = "intrinsic-hdr"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CKPT_NAMES = {role: f"{role}.ckpt" for role in ROLES}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    if not lo <= hi:
        raise argparse.ArgumentTypeError(f"range {text!r} has lo > hi")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Intrinsic-domain HDR reconstruction toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic dataset")
    p.add_argument("--seeds", type=int, help="number of scenes")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--t-range", type=_pair, default=isp.EXPOSURE_RANGE, help="exposure range in stops, 'lo,hi'")
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0, help="seed for exposure sampling")
    p.add_argument("--first-scene", type=int, default=0)

    p = sub.add_parser("train", help="train one network role")
    p.add_argument("--role", choices=ROLES)
    p.add_argument("--data", type=Path, help="dataset directory written by simulate")
    p.add_argument("--steps", type=int, default=training.TrainConfig.steps)
    p.add_argument("--lr", type=float, default=training.TrainConfig.learning_rate)
    p.add_argument("--batch", type=int, default=training.TrainConfig.batch)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", type=Path, help="output checkpoint file")
    p.add_argument("--upstream", type=Path, help="directory with shading.ckpt and albedo.ckpt (refinement only)")

    p = sub.add_parser("reconstruct", help="run the three-stage pipeline on one LDR image")
    p.add_argument("--ldr", type=Path, help="8-bit PNG input")
    p.add_argument("--ckpts", type=Path, help="directory with shading/albedo/refinement .ckpt files")
    p.add_argument("--out", help="output path prefix")
    p.add_argument("--shading", type=Path, help="LDR shading PFM; without it a max-channel proxy is used")
    p.add_argument("--gamma", type=float, default=2.2, help="CRF gamma used to linearise the input")

    p = sub.add_parser("evaluate", help="score a reconstruction against a reference")
    p.add_argument("--pred", type=Path, help="prediction (.pfm or .hdr)")
    p.add_argument("--gt", type=Path, help="reference (.pfm or .hdr)")
    p.add_argument("--report", type=Path, help="JSON report path; a .csv sibling is written too")
    p.add_argument("--id", dest="image_id", help="image identifier (default: prediction file name)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    p.add_argument("--seed", type=int, help="check a single seed instead of 0..19")

    for p in sub.choices.values():
        p.add_argument("--config", type=Path, help="JSON object of flat option overrides")
    return parser


REQUIRED = {
    "simulate": ("seeds", "out"),
    "train": ("role", "data", "ckpt"),
    "reconstruct": ("ldr", "ckpts", "out"),
    "evaluate": ("pred", "gt", "report"),
    "gradcheck": (),
}


def _apply_config(parser, argv: list[str]) -> argparse.Namespace:
    """Parse, then re-parse with config-file values as defaults so flags win."""
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("missing command; choose one of " + ", ".join(REQUIRED))
    if args.config is None:
        return args
    try:
        doc = json.loads(args.config.read_text())
    except FileNotFoundError:
        raise DataError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config {args.config}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise DataError(f"config {args.config}: expected a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    unknown = sorted(k for k in (key.replace("-", "_") for key in doc) if k not in actions)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    defaults = {}
    for key, value in doc.items():
        action = actions[key.replace("-", "_")]
        if action.type is not None and value is not None:
            try:
                value = action.type(value if not isinstance(value, list) else ",".join(map(str, value)))
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key}: {value!r} not in {list(action.choices)}")
        defaults[action.dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(args) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {' '.join(missing)}")


def _need_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")


def _need_parent(path: Path) -> None:
    parent = path.parent if path.parent != Path("") else Path(".")
    if not parent.is_dir():
        raise DataError(f"output directory does not exist: {parent}")


# --- simulate -----------------------------------------------------------------


def scene_files(index: int) -> dict[str, str]:
    stem = f"scene_{index:05d}"
    return {
        "hdr": f"{stem}_hdr.pfm",
        "albedo": f"{stem}_albedo.pfm",
        "shading": f"{stem}_shading.pfm",
        "ldr_shading": f"{stem}_ldr_shading.pfm",
        "ldr": f"{stem}_ldr.png",
    }


def cmd_simulate(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.bits != 8:
        raise UsageError(f"--bits {args.bits}: only 8-bit LDR output is supported (PNG)")
    if args.size < 16 or args.size % 4:
        raise UsageError(f"--size {args.size}: need a multiple of 4, at least 16")
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    records = []
    for i in range(args.seeds):
        index = args.first_scene + i
        t = isp.sample_exposure(rng, args.t_range)
        params = isp.IspParams(t, args.gamma, args.bits)
        scene = isp.generate_scene(index, args.size, args.size)
        ldr, ldr_linear = isp.simulate_ldr(scene, params)
        _, shading_ldr = isp.oracle_ldr_decomposition(scene, params, ldr_linear)
        files = scene_files(index)
        codecs.write_pfm(out / files["hdr"], scene.hdr_gt)
        codecs.write_pfm(out / files["albedo"], scene.albedo_gt)
        codecs.write_pfm(out / files["shading"], scene.shading_gt)
        codecs.write_pfm(out / files["ldr_shading"], shading_ldr)
        codecs.write_png(out / files["ldr"], ldr)
        records.append(
            {
                "id": f"scene_{index:05d}",
                "scene_seed": index,
                "exposure_stops": t,
                "gamma": args.gamma,
                "bit_depth": args.bits,
                "size": args.size,
                "files": files,
            }
        )
    codecs.write_manifest(out / "manifest.jsonl", records)
    print(f"simulated {len(records)} scenes into {out}")
    return EXIT_OK


# --- train --------------------------------------------------------------------


def load_samples(data: Path) -> list[training.Sample]:
    """Rebuild training samples from a simulate output directory."""
    manifest = data / "manifest.jsonl"
    _need_file(manifest, "manifest")
    records = codecs.read_manifest(manifest)
    if not records:
        raise DataError(f"{manifest}: no records")
    samples = []
    for rec in records:
        try:
            files, t, gamma = rec["files"], float(rec["exposure_stops"]), float(rec["gamma"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{manifest}: malformed record {rec.get('id', '?')!r}") from None
        for path in files.values():
            _need_file(data / path, "dataset file")
        ldr = codecs.read_png(data / files["ldr"])
        ldr_linear = isp.linearize(ldr, gamma)
        shading_ldr = codecs.read_pfm(data / files["ldr_shading"]).astype(np.float64)
        albedo_ldr = np.clip(ldr_linear / np.maximum(shading_ldr, intrinsic.EPS), 0.0, 1.0)
        exposure = 2.0**t
        samples.append(
            training.sample_from_arrays(
                ldr_linear,
                albedo_ldr,
                shading_ldr,
                hdr=exposure * codecs.read_pfm(data / files["hdr"]).astype(np.float64),
                albedo=codecs.read_pfm(data / files["albedo"]).astype(np.float64),
                shading=exposure * codecs.read_pfm(data / files["shading"]).astype(np.float64),
                exposure_stops=t,
                seed=int(rec.get("scene_seed", 0)),
            )
        )
    return samples


def _load_upstream(directory: Path):
    nets = {}
    for role in ("shading", "albedo"):
        path = directory / CKPT_NAMES[role]
        _need_file(path, f"{role} checkpoint")
        nets[role] = read_checkpoint(path)
        if nets[role].role != role:
            raise DataError(f"{path}: holds a {nets[role].role} network, expected {role}")
    return nets


def cmd_train(args) -> int:
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    if args.role == "refinement" and args.upstream is None:
        raise UsageError("train --role refinement needs --upstream DIR with shading.ckpt and albedo.ckpt")
    _need_parent(args.ckpt)
    upstream = _load_upstream(args.upstream) if args.role == "refinement" else None
    samples = load_samples(args.data)
    if upstream is not None:
        samples = training.attach_upstream(samples, upstream["shading"], upstream["albedo"])
    try:
        cfg = training.TrainConfig(learning_rate=args.lr, steps=args.steps, batch=args.batch, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    net = build(args.role, args.seed)
    try:
        net, curve = training.train(net, samples, cfg)
    except training.TrainingError as exc:
        raise NumericalError(str(exc)) from None
    write_checkpoint(net, args.ckpt)
    curve_path = args.ckpt.with_suffix(".loss.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "lr", "loss"])
        for step, value in enumerate(curve):
            writer.writerow([step, repr(training.cosine_lr(step, cfg.steps, cfg.learning_rate)), repr(value)])
    final = f"{curve[-1]:.6g}" if curve else "n/a"
    print(f"trained {args.role} for {cfg.steps} steps, final loss {final}; wrote {args.ckpt} and {curve_path}")
    return EXIT_OK


# --- reconstruct --------------------------------------------------------------


def proxy_shading(ldr_linear: np.ndarray) -> np.ndarray:
    """Crude LDR shading when no decomposition is supplied: the brightest channel."""
    return ldr_linear.max(axis=2, keepdims=True)


def cmd_reconstruct(args) -> int:
    _need_file(args.ldr, "LDR image")
    nets = {}
    for role in ROLES:
        path = args.ckpts / CKPT_NAMES[role]
        _need_file(path, f"{role} checkpoint")
        nets[role] = read_checkpoint(path)
        if nets[role].role != role:
            raise DataError(f"{path}: holds a {nets[role].role} network, expected {role}")
    prefix = Path(args.out)
    _need_parent(prefix)
    ldr_linear = isp.linearize(codecs.read_png(args.ldr), args.gamma)
    if args.shading is not None:
        _need_file(args.shading, "shading map")
        shading_ldr = codecs.read_pfm(args.shading).astype(np.float64)
        if shading_ldr.shape != ldr_linear.shape[:2] + (1,):
            raise DataError(f"{args.shading}: shading is {shading_ldr.shape}, expected {ldr_linear.shape[:2] + (1,)}")
    else:
        shading_ldr = proxy_shading(ldr_linear)
    shading_ldr = np.clip(shading_ldr, 0.0, 1.0)
    albedo_ldr = np.clip(ldr_linear / np.maximum(shading_ldr, intrinsic.EPS), 0.0, 1.0)
    h, w = ldr_linear.shape[:2]
    if h % 4 or w % 4:
        raise DataError(f"{args.ldr}: dims {h}x{w} must be multiples of 4")
    chw = lambda a: np.asarray(a, dtype=np.float32).transpose(2, 0, 1)  # noqa: E731
    out = training.reconstruct(
        chw(ldr_linear),
        chw(intrinsic.shading_to_inverse(shading_ldr)),
        chw(albedo_ldr),
        chw(intrinsic.guidance_mask(ldr_linear)),
        training.Pipeline(nets["shading"], nets["albedo"], nets["refinement"]),
    )
    written = []
    for key, suffix in (
        ("inv_shading_hdr", "inv_shading"),
        ("albedo_hdr", "albedo"),
        ("hdr_intrinsic", "intrinsic"),
        ("hdr", "hdr"),
    ):
        img = out[key].transpose(1, 2, 0)
        if not np.all(np.isfinite(img)):
            raise NumericalError(f"non-finite values in {key}")
        path = Path(f"{prefix}_{suffix}.pfm")
        codecs.write_pfm(path, img)
        written.append(str(path))
    print("wrote " + " ".join(written))
    return EXIT_OK


# --- evaluate -----------------------------------------------------------------


def read_hdr_image(path: Path) -> np.ndarray:
    _need_file(path, "image")
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        img = codecs.read_pfm(path)
    elif suffix in (".hdr", ".rgbe", ".pic"):
        img = codecs.read_rgbe(path)
    else:
        raise DataError(f"{path}: unsupported extension {suffix!r}; use .pfm or .hdr")
    img = img.astype(np.float64)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img


def cmd_evaluate(args) -> int:
    pred, gt = read_hdr_image(args.pred), read_hdr_image(args.gt)
    _need_parent(args.report)
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch: {args.pred} is {pred.shape}, {args.gt} is {gt.shape}")
    if not (np.all(np.isfinite(pred)) and np.all(pred >= 0)):
        raise DataError(f"{args.pred}: values must be finite and nonnegative")
    try:
        report = evaluation.evaluate(pred, gt, args.image_id or args.pred.name)
    except evaluation.EvaluationError as exc:
        raise NumericalError(str(exc)) from None
    args.report.write_text(evaluation.reports_to_json([report]) + "\n")
    csv_path = args.report.with_suffix(".csv")
    csv_path.write_text(evaluation.reports_to_csv([report]))
    psnr = "inf" if np.isinf(report.pu21_psnr) else f"{report.pu21_psnr:.4f}"
    print(f"pu21_psnr {psnr} rmse {report.rmse_linear:.6g}; wrote {args.report} and {csv_path}")
    return EXIT_OK


# --- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    seeds = range(20) if args.seed is None else [args.seed]
    start = time.perf_counter()
    results = gradcheck.run_suite(seeds)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.name} seed={r.seed} max_rel_error={r.max_rel_error:.3e}")
    worst = max(results, key=lambda r: r.max_rel_error)
    print(
        f"gradcheck: {len(results) - len(failed)}/{len(results)} passed, worst {worst.name} "
        f"{worst.max_rel_error:.3e}, {time.perf_counter() - start:.1f}s"
    )
    if failed:
        raise NumericalError(f"gradcheck failed for {len(failed)} case(s)")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def _fail(kind: str, message: str, code: int) -> int:
    line = " ".join(str(message).split())
    print(f"{PROG}: error[{kind}]: {line}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        _require(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (DataError, codecs.CodecError, CheckpointError, ImageError, OSError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (NumericalError, training.TrainingError, evaluation.EvaluationError, FloatingPointError) as exc:
        return _fail("numerical", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
