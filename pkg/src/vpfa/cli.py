"""Command-line pipeline: gen, stats, train, apply, eval, centroids, project.

Every subcommand writes its primary output to ``--out`` and drops a JSON
run manifest next to it (``<out>.manifest.json``) with the resolved flags,
inputs, outputs, and toolkit version, so any artifact can be reproduced
from its manifest alone.  Input files are never modified.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .embeddings import EmbeddingSet, load_set, save_set
from .errors import VpfaError
from .retrieval import (
    apply_panning,
    centroid_distances,
    compare_centroids,
    evaluate,
    project_2d,
)
from .stats import analyze_set
from .synthgen import SynthConfig, generate
from .trainer import TrainConfig, train
from .vpnet import NetConfig, load_params, parameter_count, save_params


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        args.handler(args)
    except (VpfaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _parse_rates(text: str) -> list[int]:
    try:
        rates = [int(r) for r in text.split(",") if r.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}, expected e.g. 2,3,4")
    if not rates:
        raise argparse.ArgumentTypeError("empty rate list")
    return rates


def _parse_alpha(text: str) -> tuple[int, float]:
    try:
        rate, value = text.split("=", 1)
        return int(rate), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shift magnitude {text!r}, expected R=V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpfa",
        description="Feature-space alignment toolkit for cross-resolution embeddings",
    )
    parser.add_argument("--version", action="version", version=f"vpfa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic cross-resolution set")
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--ids", type=int, default=200, help="number of identities")
    gen.add_argument("--per-res", type=int, default=10, help="samples per identity per resolution")
    gen.add_argument("--rates", type=_parse_rates, default=None, help="LR rates, e.g. 2,3,4")
    gen.add_argument(
        "--alpha", type=_parse_alpha, action="append", default=None, metavar="R=V",
        help="shift magnitude for rate R (repeatable; default: V equals R)",
    )
    gen.add_argument("--sigma-proto", type=float, default=0.08, help="identity prototype spread")
    gen.add_argument("--sigma-id", type=float, default=0.02, help="within-identity sample noise")
    gen.add_argument("--sigma-res", type=float, default=0.01, help="shift noise")
    gen.add_argument("--cameras", type=int, default=2)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument(
        "--direction-seed", type=int, default=None,
        help="seed the planted direction separately (to share it across sets)",
    )
    gen.add_argument("--out", required=True)
    gen.add_argument("--format", choices=("csv", "bin"), default="bin")
    gen.set_defaults(handler=_cmd_gen)

    stats = sub.add_parser("stats", help="resolution-direction statistics of a set")
    stats.add_argument("--data", required=True)
    stats.add_argument("--format", choices=("csv", "bin"), default="bin")
    stats.add_argument("--rates", type=_parse_rates, default=None)
    stats.add_argument("--cca-eps", type=float, default=1e-6)
    stats.add_argument("--cca-rows", choices=("per_sample", "identity_mean"), default="per_sample")
    stats.add_argument("--pearson-ids", type=int, default=50)
    stats.add_argument("--group-size", type=int, default=2)
    stats.add_argument("--seed", type=int, default=0)
    stats.add_argument("--out", required=True, help="text report path")
    stats.add_argument("--csv-prefix", default=None, help="also write one CSV per table")
    stats.set_defaults(handler=_cmd_stats)

    tr = sub.add_parser("train", help="train the panning network on a set")
    tr.add_argument("--data", required=True)
    tr.add_argument("--format", choices=("csv", "bin"), default="bin")
    tr.add_argument("--out", required=True, help="parameter file path")
    tr.add_argument("--log", default=None, help="loss log CSV (default: <out>.log.csv)")
    tr.add_argument("--hidden", type=int, default=2048)
    tr.add_argument("--epochs", type=int, default=120)
    tr.add_argument("--lr", type=float, default=2e-4)
    tr.add_argument("--wd", type=float, default=1e-5)
    tr.add_argument("--batch", type=int, default=32)
    tr.add_argument("--pairs", type=int, default=5000)
    tr.add_argument("--bootstrap-frac", type=float, default=0.5)
    tr.add_argument("--init-std", type=float, default=1e-3)
    tr.add_argument("--init-seed", type=int, default=0)
    tr.add_argument("--train-seed", type=int, default=0)
    tr.add_argument("--rates", type=_parse_rates, default=None,
                    help="restrict pairing to these LR rates (default: all)")
    tr.set_defaults(handler=_cmd_train)

    ap = sub.add_parser("apply", help="pan a set's features through trained parameters")
    ap.add_argument("--data", required=True)
    ap.add_argument("--format", choices=("csv", "bin"), default="bin")
    ap.add_argument("--params", required=True)
    ap.add_argument("--target", choices=("lr", "all"), default="lr")
    ap.add_argument("--out", required=True)
    ap.set_defaults(handler=_cmd_apply)

    ev = sub.add_parser("eval", help="rank LR queries against the HR gallery of a set")
    ev.add_argument("--data", required=True)
    ev.add_argument("--format", choices=("csv", "bin"), default="bin")
    ev.add_argument("--metric", choices=("cosine", "euclidean"), default="cosine")
    ev.add_argument("--no-camera-filter", action="store_true")
    ev.add_argument("--out", required=True, help="text report path")
    ev.add_argument("--csv", default=None, help="also write per-query AP table")
    ev.set_defaults(handler=_cmd_eval)

    ce = sub.add_parser("centroids", help="HR-LR centroid distances, optionally before/after panning")
    ce.add_argument("--data", required=True)
    ce.add_argument("--format", choices=("csv", "bin"), default="bin")
    ce.add_argument("--params", default=None, help="compare distances before vs after panning")
    ce.add_argument("--out", required=True, help="text report path")
    ce.add_argument("--csv", default=None, help="also write per-identity table")
    ce.set_defaults(handler=_cmd_centroids)

    pr = sub.add_parser("project", help="2-d principal-component coordinates as CSV")
    pr.add_argument("--data", action="append", required=True, help="input set (repeatable)")
    pr.add_argument("--format", choices=("csv", "bin"), default="bin")
    pr.add_argument("--ids", type=int, default=None, help="restrict to first N sorted identities")
    pr.add_argument("--out", required=True)
    pr.set_defaults(handler=_cmd_project)

    return parser


def _write_manifest(args: argparse.Namespace, inputs: list[str], outputs: list[str]) -> None:
    flags = {
        k: v for k, v in vars(args).items() if k != "handler" and not callable(v)
    }
    manifest = {
        "command": args.command,
        "toolkit_version": __version__,
        "flags": flags,
        "inputs": sorted(inputs),
        "outputs": outputs,
    }
    primary = Path(outputs[0])
    path = primary.with_name(primary.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _split_queries(eset: EmbeddingSet) -> tuple[EmbeddingSet, EmbeddingSet]:
    query = eset.partition(lambda r: r.resolution.is_lr)
    gallery = eset.partition(lambda r: r.resolution.is_hr)
    return query, gallery


def _cmd_gen(args: argparse.Namespace) -> None:
    alpha = dict(args.alpha or [])
    rates = args.rates or (sorted(alpha) if alpha else [2])
    for rate in rates:
        alpha.setdefault(rate, float(rate))
    cfg = SynthConfig(
        dim=args.dim,
        num_identities=args.ids,
        samples_per_res=args.per_res,
        id_spread=args.sigma_proto,
        sample_noise=args.sigma_id,
        shift_noise=args.sigma_res,
        shift_magnitude=alpha,
        cameras=args.cameras,
        rates=tuple(rates),
        seed=args.seed,
        direction_seed=args.direction_seed,
    )
    eset = generate(cfg)
    save_set(eset, args.out, args.format)
    _write_manifest(args, inputs=[], outputs=[args.out])
    print(f"wrote {len(eset)} records (dim {eset.dim}) to {args.out}")


def _cmd_stats(args: argparse.Namespace) -> None:
    eset = load_set(args.data, args.format)
    report = analyze_set(
        eset,
        rates=args.rates,
        cca_eps=args.cca_eps,
        cca_rows=args.cca_rows,
        num_identities=args.pearson_ids,
        group_size=args.group_size,
        seed=args.seed,
    )
    lines = [
        f"source: {args.data}",
        f"records: {len(eset)}",
        f"dim: {eset.dim}",
        f"identities: {len(eset.identities())}",
        f"cca_eps: {args.cca_eps:g}",
        f"cca_rows: {args.cca_rows}",
    ]
    for rate in sorted(report.split_cosine):
        sc = report.split_cosine[rate]
        cca = report.cca[rate]
        pe = report.pearson[rate]
        lines += [
            f"rate{rate}.split_cosine: {sc.cosine:.6f}",
            f"rate{rate}.split_half_sizes: {sc.half_sizes[0]}/{sc.half_sizes[1]}",
            f"rate{rate}.cca_cross: " + ",".join(f"{c:.6f}" for c in cca.cross_res),
            f"rate{rate}.cca_random: " + ",".join(f"{c:.6f}" for c in cca.random_baseline),
            f"rate{rate}.cca_pairs: {cca.rows}",
            f"rate{rate}.cca_components: {cca.components}",
            f"rate{rate}.pearson_mean_r: {pe.mean_r:.6f}",
            f"rate{rate}.pearson_std_r: {pe.std_r:.6f}",
            f"rate{rate}.pearson_prop_above: {pe.proportion_above:.6f}",
            f"rate{rate}.pearson_groups: {pe.group_count}",
        ]
    Path(args.out).write_text("\n".join(lines) + "\n")
    outputs = [args.out]
    if args.csv_prefix:
        outputs += _write_stats_csvs(args.csv_prefix, report)
    _write_manifest(args, inputs=[args.data], outputs=outputs)
    print("\n".join(lines))


def _write_stats_csvs(prefix: str, report) -> list[str]:
    split_path = f"{prefix}.split_cosine.csv"
    with open(split_path, "w") as fh:
        fh.write("rate,cosine,half1,half2\n")
        for rate, sc in sorted(report.split_cosine.items()):
            fh.write(f"{rate},{sc.cosine:.17g},{sc.half_sizes[0]},{sc.half_sizes[1]}\n")
    cca_path = f"{prefix}.cca.csv"
    with open(cca_path, "w") as fh:
        fh.write("rate,kind,r1,r2,r3\n")
        for rate, entry in sorted(report.cca.items()):
            cross = ",".join(f"{c:.17g}" for c in entry.cross_res)
            rand = ",".join(f"{c:.17g}" for c in entry.random_baseline)
            fh.write(f"{rate},cross,{cross}\n")
            fh.write(f"{rate},random,{rand}\n")
    pearson_path = f"{prefix}.pearson.csv"
    with open(pearson_path, "w") as fh:
        fh.write("rate,mean_r,std_r,proportion_above,groups\n")
        for rate, pe in sorted(report.pearson.items()):
            fh.write(
                f"{rate},{pe.mean_r:.17g},{pe.std_r:.17g},"
                f"{pe.proportion_above:.17g},{pe.group_count}\n"
            )
    return [split_path, cca_path, pearson_path]


def _cmd_train(args: argparse.Namespace) -> None:
    eset = load_set(args.data, args.format)
    net_cfg = NetConfig(
        dim=eset.dim, hidden=args.hidden, init_std=args.init_std, seed=args.init_seed
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.wd,
        batch_size=args.batch,
        num_pairs=args.pairs,
        seed=args.train_seed,
        bootstrap_fraction=args.bootstrap_frac,
    )
    params, log = train(eset, net_cfg, cfg, rates=args.rates)
    save_params(params, args.out)
    log_path = args.log or f"{args.out}.log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(log.epoch_loss, start=1):
            fh.write(f"{epoch},{loss:.17g}\n")
    _write_manifest(args, inputs=[args.data], outputs=[args.out, log_path])
    count = parameter_count(net_cfg.dim, net_cfg.hidden)
    print(f"trained {count} parameters (dim {net_cfg.dim}, hidden {net_cfg.hidden})")
    if log.epoch_loss:
        print(f"loss: first epoch {log.epoch_loss[0]:.6g}, last epoch {log.epoch_loss[-1]:.6g}")
    print(f"wall time: {log.wall_time:.2f}s; parameters written to {args.out}")


def _cmd_apply(args: argparse.Namespace) -> None:
    eset = load_set(args.data, args.format)
    params = load_params(args.params)
    out_set = apply_panning(params, eset, target=args.target)
    save_set(out_set, args.out, args.format)
    _write_manifest(args, inputs=[args.data, args.params], outputs=[args.out])
    print(f"panned {args.target} records of {args.data} -> {args.out}")


def _cmd_eval(args: argparse.Namespace) -> None:
    eset = load_set(args.data, args.format)
    query, gallery = _split_queries(eset)
    report = evaluate(
        query,
        gallery,
        metric=args.metric,
        cross_camera_filter=not args.no_camera_filter,
    )
    lines = [
        f"source: {args.data}",
        f"metric: {report.metric}",
        f"camera_filter: {'off' if args.no_camera_filter else 'on'}",
        f"num_queries: {report.num_queries}",
        f"num_skipped: {report.num_skipped}",
    ]
    for k in sorted(report.rank_k):
        lines.append(f"rank{k}: {report.rank_k[k]:.6f}")
    lines.append(f"map: {report.mean_ap:.6f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    outputs = [args.out]
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("query_index,identity,ap\n")
            for qi, identity, ap in report.per_query_ap:
                fh.write(f"{qi},{identity},{ap:.17g}\n")
        outputs.append(args.csv)
    _write_manifest(args, inputs=[args.data], outputs=outputs)
    print("\n".join(lines))


def _cmd_centroids(args: argparse.Namespace) -> None:
    eset = load_set(args.data, args.format)
    query, gallery = _split_queries(eset)
    lines = [f"source: {args.data}"]
    csv_rows = []
    if args.params:
        params = load_params(args.params)
        panned = apply_panning(params, eset, target="lr")
        panned_lr, _ = _split_queries(panned)
        report = compare_centroids(gallery, query, panned_lr)
        lines.append(f"identities: {len(report.per_identity)}")
        lines.append(f"mean_reduction: {report.mean_reduction:.6f}")
        for identity, row in sorted(report.per_identity.items()):
            lines.append(
                f"id{identity}: before {row.distance_before:.6f} "
                f"after {row.distance_after:.6f} reduction {row.reduction:.6f}"
            )
            csv_rows.append(
                f"{identity},{row.distance_before:.17g},"
                f"{row.distance_after:.17g},{row.reduction:.17g}"
            )
        csv_header = "identity,distance_before,distance_after,reduction"
    else:
        distances = centroid_distances(gallery, query)
        lines.append(f"identities: {len(distances)}")
        for identity, dist in sorted(distances.items()):
            lines.append(f"id{identity}: distance {dist:.6f}")
            csv_rows.append(f"{identity},{dist:.17g}")
        csv_header = "identity,distance"
    Path(args.out).write_text("\n".join(lines) + "\n")
    outputs = [args.out]
    if args.csv:
        Path(args.csv).write_text(csv_header + "\n" + "\n".join(csv_rows) + "\n")
        outputs.append(args.csv)
    _write_manifest(
        args,
        inputs=[args.data] + ([args.params] if args.params else []),
        outputs=outputs,
    )
    print("\n".join(lines[:8] + (["..."] if len(lines) > 8 else [])))


def _cmd_project(args: argparse.Namespace) -> None:
    sets = [load_set(path, args.format) for path in args.data]
    rows = project_2d(sets, num_identities=args.ids)
    with open(args.out, "w") as fh:
        fh.write("identity,resolution,x,y\n")
        for identity, resolution, x, y in rows:
            fh.write(f"{identity},{resolution},{x:.17g},{y:.17g}\n")
    _write_manifest(args, inputs=list(args.data), outputs=[args.out])
    print(f"wrote {len(rows)} projected points to {args.out}")
