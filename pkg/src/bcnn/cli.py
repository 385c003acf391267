"""Command-line surface: transform demos, equivariance audits, oracle
certification, benchmarks, dataset generation and training/eval runs.

Exit codes: 0 success, 1 validation/usage error, 2 internal error. Heavy
imports happen after thread-count setup so BCNN_THREADS can cap the BLAS
worker pool.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import subprocess
import sys
from pathlib import Path

_SUBCOMMANDS = (
    "decompose",
    "reconstruct",
    "rotate",
    "reflect",
    "audit",
    "certify",
    "train",
    "eval",
    "bench",
    "gen-data",
)


def _setup_threads() -> None:
    cap = os.environ.get("BCNN_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def repro_header(seed: int, precision: str, basis_spec=None) -> dict:
    from .basis import basis_hash

    return {
        "build_id": build_id(),
        "seed": seed,
        "precision": precision,
        "basis_hash": basis_hash(basis_spec) if basis_spec is not None else None,
    }


def _load_config(path: str | None) -> dict:
    """INI-style key=value file; a section header is optional."""
    if not path:
        return {}
    text = Path(path).read_text()
    if not text.lstrip().startswith("["):
        text = "[config]\n" + text
    parser = configparser.ConfigParser()
    parser.read_string(text)
    merged: dict[str, str] = {}
    for section in parser.sections():
        merged.update(dict(parser.items(section)))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="INI-style key=value defaults file")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out-dir", default=".")
    sub.add_argument("--precision", choices=("double", "single"), default="double")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcnn", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("decompose", help="image -> coefficients JSON + reconstruction PGM")
    p.add_argument("--image", required=True)
    p.add_argument("--filter-size", type=int, default=29)
    p.add_argument("--cutoff", choices=("full", "half"), default="full")
    _add_common(p)

    p = subs.add_parser("reconstruct", help="coefficients JSON -> PGM")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--filter-size", type=int, required=True)
    p.add_argument("--cutoff", choices=("full", "half"), default="full")
    _add_common(p)

    for name, help_text in (
        ("rotate", "rotate an image in coefficient space"),
        ("reflect", "mirror an image in coefficient space"),
    ):
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--image", required=True)
        if name == "rotate":
            p.add_argument("--angle", type=float, required=True, help="degrees")
        p.add_argument("--filter-size", type=int, default=29)
        p.add_argument("--cutoff", choices=("full", "half"), default="full")
        _add_common(p)

    p = subs.add_parser("audit", help="rotation/reflection invariance audit")
    p.add_argument("--group", choices=("so2", "o2", "conv"), default="so2")
    p.add_argument("--filter-sizes", default="5,9,13")
    p.add_argument("--angles", default="15,30,45,90", help="degrees")
    p.add_argument("--images", type=int, default=16)
    p.add_argument("--seeds", default=None, help="comma list; default = --seed")
    p.add_argument("--cutoff", choices=("full", "half"), default="full")
    p.add_argument("--svg", action="store_true", help="also emit an SVG chart")
    _add_common(p)

    p = subs.add_parser("certify", help="oracle-equivalence and symmetry suite")
    p.add_argument("--cases", type=int, default=100)
    _add_common(p)

    p = subs.add_parser("train", help="train a model on a generated dataset variant")
    p.add_argument("--dataset", default="mnist-rot",
                   choices=("mnist", "mnist-rot", "mnist-back", "mnist-rot-back"))
    p.add_argument("--regime", choices=("high", "inter", "low"), default="low")
    p.add_argument("--method", choices=("bcnn", "vanilla"), default="bcnn")
    p.add_argument("--group", choices=("so2", "o2"), default="so2")
    p.add_argument("--cutoff", choices=("full", "half"), default="half")
    p.add_argument("--multiscale", action="store_true")
    p.add_argument("--aug", choices=("none", "online-rotations", "rotations-reflections"),
                   default="none")
    p.add_argument("--lambda-width", default="1.0",
                   help='width multiplier, or "auto" to match the reference budget')
    p.add_argument("--train-count", type=int, default=None)
    p.add_argument("--test-count", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=None,
                   help="override the regime's epoch count")
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--normalize", action="store_true")
    _add_common(p)

    p = subs.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="mnist-rot",
                   choices=("mnist", "mnist-rot", "mnist-back", "mnist-rot-back"))
    p.add_argument("--test-count", type=int, default=2000)
    _add_common(p)

    p = subs.add_parser("bench", help="forward-cost scaling benchmark")
    p.add_argument("--filter-sizes", default="5,9,13,17")
    p.add_argument("--spatial", type=int, default=32)
    p.add_argument("--channels", default="8,8", help="c_in,c_out")
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--svg", action="store_true")
    _add_common(p)

    p = subs.add_parser("gen-data", help="materialize a dataset variant as IDX files")
    p.add_argument("--dataset", default="mnist-rot",
                   choices=("mnist", "mnist-rot", "mnist-back", "mnist-rot-back"))
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--split", choices=("train", "test"), default="train")
    _add_common(p)

    return parser


def _coerce(action: argparse.Action, value: str):
    """Config-file strings take the same types as their CLI flags."""
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if action.type is not None:
        return action.type(value)
    return value


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).split(",") if tok.strip()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).split(",") if tok.strip()]


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_image(path: str):
    from .data import pad_to_odd, read_pgm

    img = read_pgm(path)
    if img.shape[0] != img.shape[1]:
        raise ValueError("square images only")
    return pad_to_odd(img)


def _dataset_variant(tag: str, train: bool, seed: int, count: int | None):
    from .data import (
        compose_background,
        load_base_digits,
        load_texture,
        rotate_dataset,
        stratified_subsample,
    )

    ds, source = load_base_digits(train=train)
    if count is not None:
        count = min(count, len(ds))
        ds = stratified_subsample(ds, count, seed=seed + (0 if train else 1))
    if tag.endswith("-rot-back") or tag == "mnist-back":
        ds = compose_background(ds, load_texture(), seed=seed + 2)
    if "rot" in tag:
        ds = rotate_dataset(ds, seed=seed + 3 + (0 if train else 1))
    return ds, source


def cmd_decompose(args) -> int:
    import numpy as np

    from .basis import build_basis, build_transform_tensor, grid_coordinates
    from .data import write_pgm
    from .fbimage import coeffs_to_json, decompose, reconstruct

    img = _read_image(args.image)
    if args.filter_size != img.shape[0]:
        raise ValueError(
            f"--filter-size {args.filter_size} does not match padded image size {img.shape[0]}"
        )
    spec = build_basis(args.filter_size, args.cutoff)
    tensor = build_transform_tensor(spec)
    coeffs = decompose(img, spec, tensor)
    recon = reconstruct(coeffs, spec, tensor)
    out = _out_dir(args)
    stem = Path(args.image).stem
    (out / f"{stem}.coeffs.json").write_text(
        json.dumps(
            {"header": repro_header(args.seed, args.precision, spec),
             "coefficients": json.loads(coeffs_to_json(coeffs))},
            indent=2,
        )
    )
    write_pgm(out / f"{stem}.recon.pgm", np.clip(recon, 0.0, 1.0))
    x, y = grid_coordinates(img.shape[0])
    mask = np.hypot(x, y) <= 1.0
    rel = float(np.linalg.norm((recon - img) * mask) / (np.linalg.norm(img * mask) + 1e-300))
    print(f"relative_l2_on_disk {rel:.6e}")
    return 0


def cmd_reconstruct(args) -> int:
    import numpy as np

    from .basis import build_basis, build_transform_tensor
    from .data import write_pgm
    from .fbimage import coeffs_from_json, reconstruct

    spec = build_basis(args.filter_size, args.cutoff)
    doc = json.loads(Path(args.coeffs).read_text())
    records = doc["coefficients"] if isinstance(doc, dict) else doc
    coeffs = coeffs_from_json(json.dumps(records), spec)
    recon = reconstruct(coeffs, spec, build_transform_tensor(spec))
    out = _out_dir(args) / (Path(args.coeffs).stem.replace(".coeffs", "") + ".recon.pgm")
    write_pgm(out, np.clip(recon, 0.0, 1.0))
    print(out)
    return 0


def cmd_rotate(args) -> int:
    import numpy as np

    from .basis import build_basis, build_transform_tensor
    from .data import write_pgm
    from .fbimage import decompose, reconstruct, rotate_coeffs

    img = _read_image(args.image)
    spec = build_basis(img.shape[0], args.cutoff)
    tensor = build_transform_tensor(spec)
    rotated = reconstruct(
        rotate_coeffs(decompose(img, spec, tensor), math.radians(args.angle)),
        spec, tensor,
    )
    out = _out_dir(args) / f"{Path(args.image).stem}.rot{args.angle:g}.pgm"
    write_pgm(out, np.clip(rotated, 0.0, 1.0))
    print(out)
    return 0


def cmd_reflect(args) -> int:
    import numpy as np

    from .basis import build_basis, build_transform_tensor
    from .data import write_pgm
    from .fbimage import decompose, reconstruct, reflect_coeffs

    img = _read_image(args.image)
    spec = build_basis(img.shape[0], args.cutoff)
    tensor = build_transform_tensor(spec)
    mirrored = reconstruct(reflect_coeffs(decompose(img, spec, tensor)), spec, tensor)
    out = _out_dir(args) / f"{Path(args.image).stem}.reflected.pgm"
    write_pgm(out, np.clip(mirrored, 0.0, 1.0))
    print(out)
    return 0


def cmd_audit(args) -> int:
    from .basis import build_basis
    from .bench import audit_equivariance, svg_line_chart

    sizes = _int_list(args.filter_sizes)
    angles = _float_list(args.angles)
    seeds = _int_list(args.seeds) if args.seeds else [args.seed]
    report = audit_equivariance(
        args.group, sizes, angles, n_images=args.images, seeds=seeds, cutoff=args.cutoff
    )
    doc = {
        "header": repro_header(args.seed, args.precision,
                               build_basis(sizes[0], args.cutoff)),
        **report.to_dict(),
    }
    out = _out_dir(args) / f"audit_{args.group}.json"
    out.write_text(json.dumps(doc, indent=2))
    if args.svg:
        series = {}
        for angle in angles:
            by_size = report.mean_dev_by_size(angle)
            series[f"{angle:g} deg"] = [(s, max(v, 1e-18)) for s, v in sorted(by_size.items())]
        svg_line_chart(series, _out_dir(args) / f"audit_{args.group}.svg", log_y=True)
    print(out)
    if args.group in ("so2", "o2") and not report.exact_angle_ok():
        print("exact-angle invariance violated", file=sys.stderr)
        return 1
    return 0


def cmd_certify(args) -> int:
    from .basis import build_basis
    from .bench import certify

    summary = certify(seed=args.seed, cases=args.cases)
    summary["header"] = repro_header(args.seed, args.precision, build_basis(9, "full"))
    out = _out_dir(args) / "certify.json"
    out.write_text(json.dumps(summary, indent=2))
    for name, entry in summary["checks"].items():
        status = "pass" if entry["pass"] else "FAIL"
        print(f"{status} {name}: worst {entry['worst']:.3e} (tol {entry['tol']:.0e})")
    return 0 if summary["passed"] else 1


REGIME_COUNTS = {"high": 12000, "inter": 1200, "low": 120}


def cmd_train(args) -> int:
    import numpy as np

    from .data import dataset_manifest, make_augment_fn
    from .training import (
        TrainConfig,
        build_model,
        config_for_regime,
        count_params,
        evaluate,
        history_to_csv,
        save_checkpoint,
        train,
    )

    train_count = args.train_count or REGIME_COUNTS[args.regime]
    train_ds, source = _dataset_variant(args.dataset, True, args.seed, train_count)
    test_ds, _ = _dataset_variant(args.dataset, False, args.seed, args.test_count)

    lam = args.lambda_width if args.lambda_width == "auto" else float(args.lambda_width)
    overrides = dict(
        seed=args.seed,
        batch_size=args.batch_size,
        peak_lr=args.peak_lr,
        augmentation=args.aug,
        precision=args.precision,
        normalize=args.normalize,
        eval_every=args.eval_every,
        lambda_width=1.0 if lam == "auto" else lam,
    )
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
        overrides["warmup_epochs"] = (
            args.warmup_epochs if args.warmup_epochs is not None
            else max(1, args.epochs // 5)
        )
    elif args.warmup_epochs is not None:
        overrides["warmup_epochs"] = args.warmup_epochs
    config = config_for_regime(args.regime, **overrides)
    model = build_model(
        args.dataset, args.method, lam, group=args.group, cutoff=args.cutoff,
        multiscale=args.multiscale, seed=args.seed, dtype=config.dtype,
        normalize=args.normalize,
    )
    out = _out_dir(args)
    run_tag = f"{args.method}_{args.group}_{args.cutoff}_{args.dataset}_{args.regime}"
    print(f"training {run_tag}: {count_params(model)} parameters, "
          f"{len(train_ds)} train / {len(test_ds)} test images (source: {source})")
    history = train(
        model,
        train_ds.images,
        train_ds.labels,
        config,
        test_images=test_ds.images,
        test_labels=test_ds.labels,
        augment_fn=make_augment_fn(args.aug),
        log_fn=lambda row: print(
            f"epoch {row['epoch']:3d} loss {row['loss']:.4f} lr {row['lr']:.2e}"
            + (f" train {row['train_accuracy']:.3f}" if row["train_accuracy"] is not None else "")
            + (f" test {row['test_accuracy']:.3f}" if row["test_accuracy"] is not None else "")
        ),
    )
    arch = {
        "dataset": args.dataset, "method": args.method, "group": args.group,
        "cutoff": args.cutoff, "multiscale": args.multiscale,
        "lambda_width": lam if lam == "auto" else float(lam), "seed": args.seed,
        "normalize": args.normalize,
    }
    save_checkpoint(model, out / f"{run_tag}.bckp",
                    extra={"arch": arch, "header": repro_header(args.seed, args.precision)})
    history_to_csv(history, out / f"{run_tag}.history.csv",
                   header=repro_header(args.seed, args.precision))
    acc, per_class = evaluate(model, test_ds.images, test_ds.labels)
    (out / f"{run_tag}.manifest.json").write_text(
        json.dumps(
            {
                "header": repro_header(args.seed, args.precision),
                "dataset": json.loads(dataset_manifest(source, args.dataset, args.seed, train_ds)),
                "test_count": len(test_ds),
                "parameters": count_params(model),
                "test_accuracy": acc,
                "per_class_accuracy": per_class.tolist(),
            },
            indent=2,
        )
    )
    print(f"final test accuracy {acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .training import (
        build_model,
        evaluate,
        load_checkpoint,
        read_checkpoint_manifest,
    )

    # the architecture travels inside the checkpoint manifest
    arch = read_checkpoint_manifest(args.checkpoint)["extra"]["arch"]
    model = build_model(
        arch["dataset"], arch["method"], arch["lambda_width"],
        group=arch.get("group", "so2"), cutoff=arch.get("cutoff", "half"),
        multiscale=arch.get("multiscale", False), seed=arch.get("seed", 0),
        normalize=arch.get("normalize", False),
    )
    load_checkpoint(model, args.checkpoint)
    test_ds, source = _dataset_variant(args.dataset, False, args.seed, args.test_count)
    acc, per_class = evaluate(model, test_ds.images, test_ds.labels)
    doc = {
        "header": repro_header(args.seed, args.precision),
        "checkpoint": str(args.checkpoint),
        "dataset": args.dataset,
        "source": source,
        "accuracy": acc,
        "per_class_accuracy": per_class.tolist(),
    }
    out = _out_dir(args) / "eval.json"
    out.write_text(json.dumps(doc, indent=2))
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_bench(args) -> int:
    import csv

    from .bench import bench_forward, svg_line_chart

    c_in, c_out = _int_list(args.channels)
    result = bench_forward(
        _int_list(args.filter_sizes), args.spatial, c_in, c_out, args.repeats,
        seed=args.seed,
    )
    result["header"] = repro_header(args.seed, args.precision)
    out = _out_dir(args)
    with open(out / "bench.csv", "w", newline="") as fh:
        for key, value in result["header"].items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["filter_size", "n", "median_seconds", "min_seconds"])
        for row in result["rows"]:
            writer.writerow([row["filter_size"], row["n"],
                             row["median_seconds"], row["min_seconds"]])
    (out / "bench.json").write_text(json.dumps(result, indent=2))
    if args.svg:
        pts = [(r["n"], r["median_seconds"]) for r in result["rows"]]
        svg_line_chart({"median forward time": pts}, out / "bench.svg",
                       log_x=True, log_y=True)
    print(f"fitted_exponent {result['fitted_exponent']:.3f}")
    return 0


def cmd_gen_data(args) -> int:
    from .data import dataset_manifest, write_idx

    ds, source = _dataset_variant(
        args.dataset, args.split == "train", args.seed, args.count
    )
    out = _out_dir(args)
    prefix = f"{args.dataset}-{args.split}"
    write_idx(out / f"{prefix}-images-idx3-ubyte", out / f"{prefix}-labels-idx1-ubyte", ds)
    manifest = json.loads(dataset_manifest(source, args.dataset, args.seed, ds))
    manifest["header"] = repro_header(args.seed, args.precision)
    (out / f"{prefix}.manifest.json").write_text(json.dumps(manifest, indent=2))
    print(out / f"{prefix}-images-idx3-ubyte")
    return 0


_HANDLERS = {
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "rotate": cmd_rotate,
    "reflect": cmd_reflect,
    "audit": cmd_audit,
    "certify": cmd_certify,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    _setup_threads()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()

    # a --config file supplies defaults; explicit flags win
    config_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif tok.startswith("--config="):
            config_path = tok.split("=", 1)[1]
    try:
        defaults = _load_config(config_path)
    except (OSError, configparser.Error) as exc:
        print(f"bad config file: {exc}", file=sys.stderr)
        return 1

    try:
        if defaults and argv and argv[0] in _SUBCOMMANDS:
            for action in parser._subparsers._group_actions:
                if hasattr(action, "choices") and argv[0] in action.choices:
                    sub = action.choices[argv[0]]
                    coerced = {}
                    for sub_action in sub._actions:
                        if sub_action.dest in defaults:
                            coerced[sub_action.dest] = _coerce(
                                sub_action, defaults[sub_action.dest]
                            )
                    sub.set_defaults(**coerced)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        return _HANDLERS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
