"""``rmgd`` command line: train, extract, evaluate and report.

Every command reads one YAML config plus ``--set key=value`` overrides and
writes ``run_config.yaml`` (with the config hash) next to its outputs.

Exit status: 0 success, 2 config error, 3 data error, 4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import RunConfig, load_config
from .dataset_io import PairDataset, RawPatchSource, load_pair_list, load_patch_source, sample_training_pairs
from .descriptor import DescriptorModel
from .errors import ConfigError, DataError, RMGDError
from .match_eval import describe_ids, fpr_at_recall, results_table_csv, roc
from .pipeline import DescriptorCache, train_bits, train_weights

log = logging.getLogger("rmgd")


# ---------------------------------------------------------------- helpers

def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, out: Path) -> None:
    (out / "run_config.yaml").write_text(cfg.to_yaml())


def _source(args) -> RawPatchSource:
    return load_patch_source(args.data)


def _pairs(args, source: RawPatchSource) -> PairDataset:
    p = Path(args.pairs)
    if not p.is_file() and not p.is_absolute() and (Path(args.data) / p).is_file():
        p = Path(args.data) / p
    return load_pair_list(p, source)


def _model(path) -> DescriptorModel:
    if not Path(path).is_file():
        raise DataError(f"model file {path} does not exist")
    return DescriptorModel.load(path)


def _check_model(cfg: RunConfig, model: DescriptorModel) -> None:
    if (model.patch_size, model.divisions) != (cfg.patch_size, cfg.divisions):
        raise ConfigError(
            f"model was trained with patch_size={model.patch_size}, divisions={model.divisions}; "
            f"config has {cfg.patch_size}, {cfg.divisions}"
        )


def _group_labels(model: DescriptorModel) -> list:
    per_map = {}
    for g in model.groups:
        per_map[g.map] = per_map.get(g.map, 0) + 1
    return [g.map if per_map[g.map] == 1 else f"{g.map}[{g.start}:{g.start + g.len}]" for g in model.groups]


def _scored(cache: DescriptorCache, pairs: PairDataset, weights=None):
    sp = cache.score(pairs, weights)
    return sp, roc(sp)


# ---------------------------------------------------------------- commands

def cmd_train_bits(cfg: RunConfig, args) -> int:
    out = _out_dir(args.out)
    source = _source(args)
    pairs = _pairs(args, source)
    if cfg.train_matches is not None:
        pairs = sample_training_pairs(pairs, cfg.train_matches, cfg.pair_ratio, cfg.seed)
    log.info("training on %d pairs (%d matches) over %d patches", len(pairs), pairs.n_match,
             len(pairs.patch_ids()))
    res = train_bits(
        source, pairs, maps=cfg.maps, n_bits=cfg.n_bits, patch_size=cfg.patch_size,
        divisions=cfg.divisions, t_c=cfg.t_c, folds=cfg.folds, literal_eq2=cfg.literal_eq2,
        literal_phi_sign=cfg.literal_phi_sign, cycle_folds=cfg.cycle_folds,
        reweight_rejected=cfg.reweight_rejected, sigma=cfg.gaussian_sigma, kernel=cfg.gaussian_kernel,
        seed=cfg.seed, memory_cap=int(cfg.memory_cap_mb * 2**20), provenance=cfg.provenance(),
    )
    res.model.save(out / "model.json")
    for m, sel in res.selections.items():
        (out / f"selection_{m}.csv").write_text(sel.result.report_csv())
    _write_config(cfg, out)
    short = {m: len(s.candidate_ids) for m, s in res.selections.items() if len(s.candidate_ids) < cfg.n_bits}
    for m, k in short.items():
        print(f"warning: map {m} selected {k} of {cfg.n_bits} bits", file=sys.stderr)
    print(f"model,{out / 'model.json'}")
    print(f"bits,{res.model.n_bits}")
    return 0


def cmd_train_weights(cfg: RunConfig, args) -> int:
    out = _out_dir(args.out)
    model = _model(args.model)
    _check_model(cfg, model)
    source = _source(args)
    pairs = _pairs(args, source)
    if cfg.train_matches is not None:
        pairs = sample_training_pairs(pairs, cfg.train_matches, cfg.pair_ratio, cfg.seed)
    res = train_weights(
        model, source, pairs, regularizer=cfg.regularizer, subgroups=cfg.subgroups,
        allow_uneven_subgroups=cfg.allow_uneven_subgroups, mu1=cfg.mu1,
        mu2=cfg.mu2, gamma=cfg.gamma, budget=cfg.instance_budget, iterations=cfg.iterations,
        epochs=cfg.epochs, sigma=cfg.gaussian_sigma, kernel=cfg.gaussian_kernel, seed=cfg.seed,
    )
    trained = res.model
    trained.provenance = {**model.provenance, "weights": cfg.provenance()}
    trained.save(out / "model.json")
    if res.fit is not None:
        (out / "training_log.csv").write_text(res.fit.log_csv())
    _write_config(cfg, out)
    W = trained.effective_weights()
    print(f"model,{out / 'model.json'}")
    print(f"groups,{trained.n_groups}")
    print(f"active_groups,{int((W > 0).sum())}")
    return 0


def cmd_extract(cfg: RunConfig, args) -> int:
    model = _model(args.model)
    _check_model(cfg, model)
    source = _source(args)
    if args.ids is not None:
        if not Path(args.ids).is_file():
            raise DataError(f"id file {args.ids} does not exist")
        try:
            ids = np.array([int(t) for t in Path(args.ids).read_text().split()], dtype=np.int64)
        except ValueError:
            raise DataError(f"id file {args.ids} holds a non-integer entry") from None
    else:
        ids = np.arange(source.patch_count, dtype=np.int64)
    packed = describe_ids(ids, model, source, cfg.gaussian_sigma, cfg.gaussian_kernel)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_hex_dump(out, ids, packed)
    _write_config(cfg, out.parent)
    print(f"descriptors,{len(ids)}")
    return 0


def write_hex_dump(path, ids, packed) -> Path:
    """One line per patch: its id and the packed descriptor bytes in hex."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patch_id", "hex"])
        for i, row in zip(ids, packed):
            w.writerow([int(i), row.tobytes().hex()])
    return path


def read_hex_dump(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_hex_dump`: ``(ids, packed uint8 rows)``."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["patch_id", "hex"]:
        raise DataError(f"{path}: missing descriptor dump header")
    ids = np.array([int(r[0]) for r in rows[1:]], dtype=np.int64)
    packed = np.array([list(bytes.fromhex(r[1])) for r in rows[1:]], dtype=np.uint8)
    return ids, packed


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out_dir(args.out)
    model = _model(args.model)
    _check_model(cfg, model)
    source = _source(args)
    pairs = _pairs(args, source)
    cache = DescriptorCache.for_pairs(model, source, pairs, cfg.gaussian_sigma, cfg.gaussian_kernel)
    sp, curve = _scored(cache, pairs)
    fpr = fpr_at_recall(sp, cfg.recall)
    (out / "roc.csv").write_text(curve.to_csv())
    key = f"fpr_at_{round(cfg.recall * 100):d}"
    (out / "summary.csv").write_text(f"{key},{fpr!r}\n")
    summary = {
        key: fpr, "n_pairs": len(pairs), "n_match": pairs.n_match, "n_groups": model.n_groups,
        "active_groups": int((model.effective_weights() > 0).sum()), **cfg.provenance(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write_config(cfg, out)
    print(f"{key},{fpr!r}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    """Evaluate a model, its equal-weight variant and every single group; write tables and figures."""
    from . import plotting

    out = _out_dir(args.out)
    model = _model(args.model)
    _check_model(cfg, model)
    source = _source(args)
    pairs = _pairs(args, source)
    cache = DescriptorCache.for_pairs(model, source, pairs, cfg.gaussian_sigma, cfg.gaussian_kernel)
    layout = cache.layout
    labels = _group_labels(model)
    bits = [int(n) for n in layout.lengths]

    def bits_per_group(mask):
        vals = sorted({bits[i] for i in np.flatnonzero(mask)})
        return vals[0] if len(vals) == 1 else "/".join(map(str, vals))

    rows, curves, group_fpr = [], {}, {}
    for gi, label in enumerate(labels):
        W = np.zeros(model.n_groups)
        W[gi] = 1.0
        sp, curve = _scored(cache, pairs, W)
        group_fpr[label] = fpr_at_recall(sp, cfg.recall)
    ones = np.ones(model.n_groups)
    sp, curves["equal weights"] = _scored(cache, pairs, ones)
    combined = {"equal weights": fpr_at_recall(sp, cfg.recall)}
    rows.append(dict(train_set=args.train_set, test_set=args.test_set, n_groups=model.n_groups,
                     bits_per_group=bits_per_group(ones > 0), fpr95=combined["equal weights"]))
    if model.weights is not None:
        W = model.weights
        sp, curves["learned weights"] = _scored(cache, pairs, W)
        combined["learned weights"] = fpr_at_recall(sp, cfg.recall)
        rows.append(dict(train_set=args.train_set, test_set=args.test_set, n_groups=int((W > 0).sum()),
                         bits_per_group=bits_per_group(W > 0), fpr95=combined["learned weights"]))
    best = min(group_fpr, key=group_fpr.get)
    W = np.array([1.0 if lab == best else 0.0 for lab in labels])
    _, curves[f"best single ({best})"] = _scored(cache, pairs, W)

    (out / "results.csv").write_text(results_table_csv(rows))
    with (out / "group_fpr.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "bits", "weight", "fpr95"])
        for gi, label in enumerate(labels):
            w.writerow([label, bits[gi], repr(float(model.effective_weights()[gi])), repr(group_fpr[label])])
    plotting.plot_roc(curves, out / "roc.png", cfg.recall)
    plotting.plot_group_fpr(group_fpr, combined, out / "group_fpr.png")
    if model.weights is not None:
        plotting.plot_group_weights(model.weights, labels, out / "weights.png")
    _write_config(cfg, out)
    for name, v in combined.items():
        print(f"{name.replace(' ', '_')},{v!r}")
    print(f"best_single,{best},{group_fpr[best]!r}")
    return 0


def cmd_make_synthetic(cfg: RunConfig, args) -> int:
    from .synthetic import write_synthetic_dataset

    files = {}
    for entry in args.pairs:
        try:
            name, counts = entry.split("=")
            nm, nn = (int(v) for v in counts.split(":"))
        except ValueError:
            raise ConfigError(f"pair entry {entry!r} is not NAME=MATCHES:NONMATCHES") from None
        files[name] = (nm, nn)
    root = write_synthetic_dataset(args.out, args.points, args.views, files, seed=cfg.seed, jitter=args.jitter)
    print(f"dataset,{root}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmgd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--workers", type=int, help="thread pool size for numeric kernels")

    def data_args(p, pairs=True):
        p.add_argument("--data", required=True, help="dataset directory (info.txt and patch mosaics)")
        if pairs:
            p.add_argument("--pairs", required=True, help="pair file, absolute or relative to --data")

    p = sub.add_parser("train-bits", parents=[common], help="select region-pair bits per feature map")
    data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_bits)

    p = sub.add_parser("train-weights", parents=[common], help="learn group weights for a model")
    p.add_argument("--model", required=True, help="model JSON written by train-bits or train-weights")
    data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_weights)

    p = sub.add_parser("extract", parents=[common], help="dump hex descriptors of patches")
    p.add_argument("--model", required=True, help="model JSON written by train-bits or train-weights")
    data_args(p, pairs=False)
    p.add_argument("--ids", help="file of patch ids (default: every patch)")
    p.add_argument("--out", required=True, help="output CSV file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", parents=[common], help="ROC and FPR at the configured recall")
    p.add_argument("--model", required=True, help="model JSON written by train-bits or train-weights")
    data_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="results table and figures")
    p.add_argument("--model", required=True, help="model JSON written by train-bits or train-weights")
    data_args(p)
    p.add_argument("--train-set", default="train", help="name of the training set for the table")
    p.add_argument("--test-set", default="test", help="name of the test set for the table")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--points", type=int, default=200, help="number of 3-D points")
    p.add_argument("--views", type=int, default=3, help="patches per point")
    p.add_argument("--jitter", type=float, default=1.0, help="scale of the view perturbations")
    p.add_argument("--pairs", action="append", default=[], metavar="NAME=MATCHES:NONMATCHES",
                   help="pair file to write (repeatable)")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        cfg = load_config(args.config, overrides)
        with threadpool_limits(limits=cfg.workers):
            return args.func(cfg, args)
    except RMGDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError as exc:
        print(f"error: out of memory: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
