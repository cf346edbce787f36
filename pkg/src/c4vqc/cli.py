"""Command line entry point: ``c4vqc <subcommand>`` (or ``python -m c4vqc``).

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .circuits import ARCHITECTURES, ModelSpec, build_model, init_params, load_checkpoint, model_forward, save_checkpoint
from .cnn import TABLE_CONFIGS, layers_from_table, shape_chain
from .data import augment_rotations, gen_tetrominoes, augment_noise, load_dataset, save_dataset
from .errors import C4Error, DataIOError, NumericalError
from .experiments import (
    build_datasets,
    compare_architectures,
    csv_text,
    merge_config,
    run_single,
    write_json,
    write_text,
)
from .symmetry import (
    build_group_rep,
    compose,
    compute_orbits,
    orbit_count,
    random_state,
    rotate_image,
    verify_equivariance,
)
from .statevector import run_circuit, rx
from .training import TrainConfig, as_arrays, evaluate, landscape_stats

log = logging.getLogger("c4vqc")


def _load_config(path) -> dict:
    if path is None:
        return merge_config(None)
    try:
        return merge_config(json.loads(Path(path).read_text(encoding="utf-8")))
    except OSError as exc:
        raise DataIOError("cannot read config", [path]) from exc


def _emit(doc, out) -> None:
    if out:
        write_json(out, doc)
    else:
        print(json.dumps(doc, indent=1, sort_keys=True))


# ---------------------------------------------------------------- subcommands


def cmd_generate_data(args) -> None:
    d = gen_tetrominoes(args.n)
    if args.rotations:
        d = augment_rotations(d)
    if args.copies:
        d = augment_noise(d, args.sigma, args.copies, args.seed)
    prov = {"generator": "tetromino", "n": args.n, "sigma": args.sigma, "copies": args.copies,
            "seed": args.seed, "rotations": args.rotations}
    path = save_dataset(args.out, d, prov)
    log.info("wrote %d images to %s", len(d), path)


def cmd_verify_symmetry(args) -> None:
    n = args.n
    table, rep = compute_orbits(n), build_group_rep(n)
    identity = list(range(n * n))
    g = rep.generator
    rng = np.random.default_rng(args.seed)
    enc_dev = 0.0
    for _ in range(args.images):
        x = rng.uniform(-math.pi, math.pi, (n, n))
        base = run_circuit([rx(k, v) for k, v in enumerate(x.ravel())], n * n)
        for k in range(4):
            rot = run_circuit([rx(q, v) for q, v in enumerate(rotate_image(x, k).ravel())], n * n)
            enc_dev = max(enc_dev, float(np.linalg.norm(rot.amplitudes - rep.act(base, k).amplitudes)))
    plan = build_model(ModelSpec("Equivariant", n, 1))
    theta = rng.uniform(0, 2 * math.pi, plan.n_params)
    ok, block_dev = verify_equivariance(plan.block(0), rep, params=theta, n_states=2, seed=args.seed)
    report = {
        "n": n,
        "generator": [int(v) for v in g],
        "generator_order_4": compose(compose(compose(g, g), g), g).tolist() == identity,
        "cube_is_inverse": rep.power(3).tolist() == np.argsort(g).tolist(),
        "orbit_count": table.n_orbits,
        "orbit_count_formula": orbit_count(n),
        "orbit_table": table.to_dict(),
        "encoding_max_deviation": enc_dev,
        "equivariant_block_passes": bool(ok),
        "equivariant_block_max_deviation": block_dev,
    }
    report["passed"] = bool(report["generator_order_4"] and report["cube_is_inverse"]
                            and report["orbit_count"] == report["orbit_count_formula"]
                            and enc_dev < 1e-10 and ok)
    _emit(report, args.out)


def _spec_from(args, cfg) -> ModelSpec:
    model = cfg["model"]
    return ModelSpec(args.arch, model.get("n", 4), args.n_layers,
                     random_orbit_seed=args.seed if args.arch == "NonEquivariant" else None,
                     rotation_axis=model.get("rotation_axis", "X"),
                     observable_orbits=model.get("observable_orbits", "random"))


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    spec = _spec_from(args, cfg)
    tc = TrainConfig.from_dict({**cfg["train"], "seed": args.seed,
                                **({"max_epochs": args.epochs} if args.epochs else {})})
    train_set, test_set = build_datasets(cfg["dataset"])
    record = run_single(spec, train_set, test_set, tc, cfg.get("cnn_pipeline"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not cfg.get("cnn_pipeline"):
        from .circuits import ModelParams

        save_checkpoint(out / "checkpoint.json", spec, ModelParams(record.params),
                        {"train": tc.to_dict(), "dataset": cfg["dataset"]})
    write_text(out / "history.csv", record.history.to_csv())
    write_json(out / "history.json", record.history.to_dict())
    write_json(out / "record.json", record.to_dict())
    log.info("final loss %.4f, train f1 %.3f, test f1 %.3f", record.final_loss,
             record.train_metrics.f1, record.test_metrics.f1)


def cmd_evaluate(args) -> None:
    spec, params, extra = load_checkpoint(args.checkpoint)
    train_cfg = TrainConfig.from_dict(extra.get("train", {}))
    if args.data:
        data = load_dataset(args.data)
    else:
        data = build_datasets(extra.get("dataset", {"kind": "tetromino"}))[1]
    x, y = as_arrays(data, train_cfg.feature_range)
    report, loss = evaluate(build_model(spec), params, x, y)
    _emit({**report.to_dict(), "loss": loss, "count": report.count}, args.out)


def cmd_landscape(args) -> None:
    d = gen_tetrominoes(4)
    item = d.items[args.point]
    lo, hi = args.feature_range
    x = lo + (hi - lo) * item.pixels.ravel() / 255.0
    results = {}
    for arch in args.arch or ARCHITECTURES:
        spec = ModelSpec(arch, 4, args.n_layers, random_orbit_seed=args.seed if arch == "NonEquivariant" else None)
        stats = landscape_stats(spec, x, item.label, args.samples, args.seed)
        results[arch] = stats.to_dict()
        log.info("%s: %s", arch, stats)
    _emit({"point": args.point, "label": item.label, "n_layers": args.n_layers, "stats": results}, args.out)


def cmd_compare(args) -> None:
    cfg = _load_config(args.config)
    records, rows = compare_architectures(
        cfg, args.out, args.workers,
        progress=lambda r: log.info("%s n_l=%d seed=%d %s", r.spec.architecture, r.spec.n_layers, r.seed,
                                    "ok" if r.ok else "FAILED"),
    )
    if any(not r.ok and "NumericalError" in (r.error or "") for r in records):
        raise NumericalError("at least one run hit a non-finite loss (recorded per run)")


def cmd_shapes(args) -> None:
    if args.table:
        c = TABLE_CONFIGS[args.table]
        side, channels, n_w, n_c, n_p = c["side"], c["channels"], c["n_w"], c["n_c"], c["n_p"]
    elif args.config:
        cfg = _load_config(args.config)
        c = cfg.get("cnn_pipeline") or {}
        side, channels = c.get("side", args.side), c.get("channels", args.channels)
        n_w, n_c, n_p = c["n_w"], c["n_c"], c.get("n_p")
    else:
        side, channels, n_w, n_c, n_p = args.side, args.channels, args.n_w, args.n_c, args.n_p
    chain = shape_chain(side, channels, layers_from_table(n_w, n_c, n_p))
    _emit({"chain": [{"side": s, "channels": ch} for s, ch in chain], "output": list(chain[-1])}, args.out)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c4vqc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="tetromino images (+ augmentation) -> manifest")
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--sigma", type=float, default=25.0)
    g.add_argument("--copies", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--rotations", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    v = sub.add_parser("verify-symmetry", help="orbit / U_g / equivariance checks -> JSON report")
    v.add_argument("--n", type=int, default=4)
    v.add_argument("--images", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify_symmetry)

    t = sub.add_parser("train", help="single run -> checkpoint + history CSV")
    t.add_argument("--config")
    t.add_argument("--arch", choices=ARCHITECTURES, default="Equivariant")
    t.add_argument("--n-layers", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="checkpoint + dataset -> metrics JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="manifest (default: the test split recorded in the checkpoint)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    lnd = sub.add_parser("landscape", help="loss/gradient statistics at random angles -> JSON")
    lnd.add_argument("--arch", action="append", choices=ARCHITECTURES)
    lnd.add_argument("--n-layers", type=int, default=5)
    lnd.add_argument("--samples", type=int, default=2000)
    lnd.add_argument("--seed", type=int, default=0)
    lnd.add_argument("--point", type=int, default=0, help="index into the base tetromino set")
    lnd.add_argument("--feature-range", type=float, nargs=2, default=(0.0, math.pi))
    lnd.add_argument("--out")
    lnd.set_defaults(func=cmd_landscape)

    c = sub.add_parser("compare", help="architecture sweep -> summary CSV and per-run JSON")
    c.add_argument("--config")
    c.add_argument("--workers", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("shapes", help="CNN shape chain -> JSON")
    s.add_argument("--table", choices=sorted(TABLE_CONFIGS))
    s.add_argument("--config")
    s.add_argument("--side", type=int, default=28)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--n-w", type=int, nargs="+", default=[11, 11, 3, 3])
    s.add_argument("--n-c", type=int, nargs="+", default=[10, 10, 10, 1])
    s.add_argument("--n-p", type=int, nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_shapes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (C4Error, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
