"""Command-line entry point: ``noteacher <command> --config PATH [--seed N] [--out DIR] [--quiet]``.

Commands: gen, sample, mismatch, train, eval, compare, dynamics.
Exit codes: 0 success, 1 config error, 2 data error, 3 runtime failure.
The default output root comes from ``$NOTEACHER_OUT`` when neither ``--out``
nor the config's ``out`` key is set.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import sys
from xml.sax.saxutils import escape

import numpy as np

from . import data as D
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DataError, NoTeacherError
from .metrics import evaluate, write_metrics_csv
from .models import load_checkpoint, save_checkpoint, spec_from_dict, spec_to_dict
from .trainer import Splits, Trainer, _predict, history_csv, read_history_csv
from .utils import atomic_write_text, read_json, stream, stream_seed, write_json

OUT_ENV = "NOTEACHER_OUT"
DEFAULT_OUT = "noteacher-out"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


class _Log:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr)


# -- shared plumbing ------------------------------------------------------------------


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.seeds = [args.seed]
    return cfg


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None) or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    return out


def load_dataset(cfg: ExperimentConfig) -> D.Dataset:
    dc = cfg.dataset
    if dc.synthetic is not None:
        s = dc.synthetic
        return D.gen_synthetic(
            stream_seed(cfg.seed, "dataset"),
            s["n"],
            s["K"],
            mode=s.get("mode", "multilabel"),
            structure=s.get("structure", "flat"),
            geometry=dc.geometry(),
        )
    opts = {k: v for k, v in dc.csv.items() if k != "path"}
    return D.ingest_csv(dc.csv["path"], D.CsvSchema(**opts))


def _holdout(cfg, ds):
    ts = cfg.dataset.test_size
    if ts >= ds.n:
        raise DataError(f"test_size {ts} leaves no pool out of {ds.n} samples")
    perm = stream(cfg.seed, "sampling").permutation(ds.n)
    return np.sort(perm[ts:]), np.sort(perm[:ts])


def budget_manifests(cfg, ds, run_seed):
    """Global-index split manifests, one per budget, for one run seed."""
    pool_idx, test_idx = _holdout(cfg, ds)
    pool = ds.subset(pool_idx)
    sub_seed = int(stream(run_seed, "sampling").integers(2**62))
    out = {}
    for split in D.realistic_sample(pool, cfg.sampling, sub_seed, cfg.dataset.label_names):
        m = split.to_manifest()
        for key in ("labeled_train", "val", "unlabeled", "draw_order"):
            m[key] = pool_idx[np.asarray(m[key], dtype=np.int64)].tolist()
        m.update(kind="budget", seed=run_seed, dataset_n=ds.n, test=test_idx.tolist())
        out[f"L{split.budget}"] = m
    return out


def mismatch_manifest(cfg, ds, run_seed):
    ms = D.build_mismatch(ds, cfg.mismatch, stream(run_seed, "sampling"))
    m = ms.to_manifest()
    m.update(kind="mismatch", seed=run_seed, dataset_n=ds.n, labeled_train=m.pop("labeled"))
    return {"mismatch": m}


def split_manifests(cfg, ds, run_seed):
    if cfg.splits_manifest:
        m = read_json(cfg.splits_manifest)
        tag = "mismatch" if m.get("kind") == "mismatch" else f"L{m['budget']}"
        return {tag: m}
    if cfg.mismatch is not None:
        return mismatch_manifest(cfg, ds, run_seed)
    if cfg.sampling is not None:
        return budget_manifests(cfg, ds, run_seed)
    raise ConfigError("config needs a 'sampling' or 'mismatch' section")


def splits_from_manifest(ds, m) -> Splits:
    if m.get("dataset_n", ds.n) != ds.n:
        raise DataError(f"manifest was written for {m['dataset_n']} samples, dataset has {ds.n}")
    idx = {k: np.asarray(m[k], dtype=np.int64) for k in ("labeled_train", "val", "unlabeled", "test")}
    return Splits(
        labeled=ds.subset(idx["labeled_train"]),
        val=ds.subset(idx["val"]),
        unlabeled=ds.subset(idx["unlabeled"], strip_labels=True),
        test=ds.subset(idx["test"]) if len(idx["test"]) else None,
    )


def _run_dir(out, method, tag, seed):
    return os.path.join(out, "runs", method, tag, f"seed-{seed}")


# -- commands -----------------------------------------------------------------------------


def cmd_gen(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    ds = load_dataset(cfg)
    path = os.path.join(out, "dataset.csv")
    D.export_csv(ds, path)
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    schema = D.default_schema(ds)
    write_json(
        os.path.join(out, "manifest.json"),
        {
            "seed": cfg.seed,
            "n": ds.n,
            "K": ds.K,
            "mode": ds.mode,
            "structure": ds.structure,
            "dataset": {"synthetic": cfg.dataset.synthetic, "csv": cfg.dataset.csv},
            "csv": "dataset.csv",
            "schema": {
                "label_columns": schema.label_columns,
                "mode": schema.mode,
                "id_column": schema.id_column,
                "bag_column": schema.bag_column,
                "feature_columns": schema.feature_columns,
            },
            "sha256": digest,
        },
    )
    args.log(f"wrote {ds.n} samples to {path}")
    return 0


def _write_manifests(args, need):
    cfg = _load(args)
    if need == "sampling" and cfg.sampling is None:
        raise ConfigError("config has no 'sampling' section")
    if need == "mismatch" and cfg.mismatch is None:
        raise ConfigError("config has no 'mismatch' section")
    out = _out_dir(args, cfg)
    ds = load_dataset(cfg)
    for s in cfg.seeds:
        manifests = budget_manifests(cfg, ds, s) if need == "sampling" else mismatch_manifest(cfg, ds, s)
        for tag, m in manifests.items():
            path = os.path.join(out, "splits", f"seed-{s}-{tag}.json")
            write_json(path, m)
            args.log(
                f"seed {s} {tag}: labeled {len(m['labeled_train'])}, val {len(m['val'])}, "
                f"unlabeled {len(m['unlabeled'])}, test {len(m['test'])}"
            )
    return 0


def cmd_sample(args):
    return _write_manifests(args, "sampling")


def cmd_mismatch(args):
    return _write_manifests(args, "mismatch")


def _evaluate_run(run_dir, ds, splits, history, networks, tau):
    arrays, meta = load_checkpoint(os.path.join(run_dir, "best.npz"))
    spec = spec_from_dict(meta["spec"])
    test = splits.test
    if test is None:
        raise DataError("no test split: set dataset.test_size or use a mismatch setup")
    post = _predict(spec, arrays, test)
    series = [(r["iter"], r["disagreement"]) for r in history]
    return evaluate(post, test.Y, ds.mode, tau, series)


def cmd_train(args):
    cfg = _load(args)
    if not cfg.methods:
        raise ConfigError("config lists no methods to train")
    out = _out_dir(args, cfg)
    ds = load_dataset(cfg)
    rows = []
    for seed in cfg.seeds:
        manifests = split_manifests(cfg, ds, seed)
        for tag, m in manifests.items():
            splits = splits_from_manifest(ds, m)
            if splits.test is None:
                raise ConfigError("training needs a test split: set dataset.test_size")
            for method in cfg.methods:
                tc = cfg.train_config(method, seed)
                run_dir = _run_dir(out, method, tag, seed)
                trainer = Trainer(tc, splits)
                run = trainer.run()
                atomic_write_text(os.path.join(run_dir, "history.csv"), history_csv(run.history, run.networks))
                save_checkpoint(
                    os.path.join(run_dir, "best.npz"),
                    run.best_params[run.best_network],
                    {"kind": "model", "spec": spec_to_dict(run.spec), "network": run.best_network},
                )
                trainer.save(os.path.join(run_dir, "last.npz"))
                report = _evaluate_run(run_dir, ds, splits, run.history, run.networks, tc.binarize_tau)
                info = {
                    "method": method,
                    "seed": seed,
                    "budget": tag,
                    "networks": list(run.networks),
                    "best_network": run.best_network,
                    "best_iter": run.best_iter,
                    "best_val_auroc": None if math.isinf(run.best_score) else run.best_score,
                    "iterations": trainer.iter,
                    "binarize_tau": tc.binarize_tau,
                    "config": tc.to_dict(),
                }
                write_json(os.path.join(run_dir, "run.json"), info)
                write_json(os.path.join(run_dir, "metrics.json"), report.to_dict())
                rows.append((f"{method}/{tag}/seed-{seed}", seed, tag, method, report))
                args.log(f"{method} {tag} seed {seed}: test AUROC {report.mean_auroc:.4f} ({trainer.iter} iters)")
    write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    return 0


def cmd_eval(args):
    cfg = _load(args)
    if not args.run:
        raise ConfigError("eval needs --run DIR")
    info_path = os.path.join(args.run, "run.json")
    if not os.path.isfile(info_path):
        raise DataError(f"not a run directory: {args.run}")
    info = read_json(info_path)
    ds = load_dataset(cfg)
    manifests = split_manifests(cfg, ds, info["seed"])
    if info["budget"] not in manifests:
        raise DataError(f"config does not produce split {info['budget']!r}")
    splits = splits_from_manifest(ds, manifests[info["budget"]])

    history = read_history_csv(os.path.join(args.run, "history.csv"))
    report = _evaluate_run(args.run, ds, splits, history, info["networks"], info["binarize_tau"])
    write_json(os.path.join(args.run, "eval.json"), report.to_dict())
    if not args.quiet:
        print(f"mean AUROC {report.mean_auroc:.6f}  mean AUPRC {report.mean_auprc:.6f}")
    return 0


def _fmt4(x):
    return "nan" if x is None or math.isnan(x) else f"{x:.4f}"


def cmd_compare(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    tags = cfg.budget_tags
    if cfg.splits_manifest:
        m = read_json(cfg.splits_manifest)
        tags = ["mismatch" if m.get("kind") == "mismatch" else f"L{m['budget']}"]
    missing, cells = [], {}
    for method in cfg.methods:
        for tag in tags:
            vals = []
            for seed in cfg.seeds:
                path = os.path.join(_run_dir(out, method, tag, seed), "metrics.json")
                if not os.path.isfile(path):
                    missing.append(os.path.dirname(path))
                    continue
                v = read_json(path)["mean_auroc"]
                vals.append(math.nan if v is None else float(v))
            cells[method, tag] = vals
    if missing:
        raise DataError("missing runs:\n  " + "\n  ".join(missing))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "budget", "n_seeds", "mean_auroc", "std_auroc"])
    table = {}
    for (method, tag), vals in cells.items():
        arr = np.asarray(vals)
        mean, std = float(arr.mean()), float(arr.std(ddof=0))
        table[method, tag] = (mean, std)
        w.writerow([method, tag, len(vals), repr(mean), repr(std)])
    atomic_write_text(os.path.join(out, "compare.csv"), buf.getvalue())

    header = ["method"] + tags
    body = [[m] + [f"{_fmt4(table[m, t][0])} ± {_fmt4(table[m, t][1])}" for t in tags] for m in cfg.methods]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip() for r in [header] + body]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    text = "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(out, "compare.txt"), text)
    if not args.quiet:
        print(text, end="")
    return 0


# -- dynamics -----------------------------------------------------------------------------


def _read_raw_history(run_dir):
    path = os.path.join(run_dir, "history.csv")
    if not os.path.isfile(path):
        raise DataError(f"no history.csv in {run_dir}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def dynamics_table(run_a, run_b, tau):
    """Header and string rows joining two run histories on iteration.

    Cells are copied from the source histories without reformatting.
    """
    infos = []
    for run in (run_a, run_b):
        p = os.path.join(run, "run.json")
        if not os.path.isfile(p):
            raise DataError(f"not a run directory: {run}")
        info = read_json(p)
        if not math.isclose(info["binarize_tau"], tau, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(
                f"run {run} counted disagreement at tau={info['binarize_tau']}, requested tau={tau}"
            )
        infos.append(info)
    names = [info["method"] for info in infos]
    if names[0] == names[1]:
        names = [f"{names[0]}-a", f"{names[1]}-b"]
    hists = [_read_raw_history(r) for r in (run_a, run_b)]
    by_iter = [{row["iter"]: row for row in h} for h in hists]
    iters = [row["iter"] for row in hists[0] if row["iter"] in by_iter[1]]
    header = ["iter"]
    for name, info in zip(names, infos):
        header += [f"{name}_{net}_auroc" for net in info["networks"]]
    header += [f"{name}_disagreement" for name in names]
    rows = []
    for it in iters:
        row = [it]
        for k, info in enumerate(infos):
            row += [by_iter[k][it][f"auroc_{net}"] for net in info["networks"]]
        row += [by_iter[k][it]["disagreement"] for k in range(2)]
        rows.append(row)
    return header, rows


PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def dual_axis_svg(x, left, right, left_label, right_label, x_label, title, width=760, height=420):
    """Line chart with a left axis for ``left`` series and a right axis for ``right`` series."""
    ml, mr, mt, mb = 70, 70, 40, 60
    pw, ph = width - ml - mr, height - mt - mb
    x = [float(v) for v in x]
    x0, x1 = (min(x), max(x)) if x else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0

    def span(series, floor=None):
        vals = [v for s in series.values() for v in s if not math.isnan(v)]
        lo = min(vals) if vals else 0.0
        hi = max(vals) if vals else 1.0
        if floor is not None:
            lo = min(lo, floor)
        if hi == lo:
            hi = lo + 1.0
        return lo, hi

    ly0, ly1 = span(left)
    ry0, ry1 = span(right, floor=0.0)

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v, lo, hi):
        return mt + ph - (v - lo) / (hi - lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>',
    ]
    out.append('<g class="axis axis-left">')
    for t in _ticks(ly0, ly1):
        y = py(t, ly0, ly1)
        out.append(f'<line x1="{ml - 5}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="#333"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11">{t:.3f}</text>')
    out.append(
        f'<text transform="translate(18,{mt + ph / 2:.1f}) rotate(-90)" text-anchor="middle" '
        f'font-size="13">{escape(left_label)}</text>'
    )
    out.append("</g>")
    out.append('<g class="axis axis-right">')
    for t in _ticks(ry0, ry1):
        y = py(t, ry0, ry1)
        out.append(f'<line x1="{ml + pw}" y1="{y:.2f}" x2="{ml + pw + 5}" y2="{y:.2f}" stroke="#333"/>')
        out.append(f'<text x="{ml + pw + 8}" y="{y + 4:.2f}" font-size="11">{t:.1f}</text>')
    out.append(
        f'<text transform="translate({width - 16},{mt + ph / 2:.1f}) rotate(90)" text-anchor="middle" '
        f'font-size="13">{escape(right_label)}</text>'
    )
    out.append("</g>")
    out.append('<g class="axis axis-x">')
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.2f}" y="{mt + ph + 18}" text-anchor="middle" font-size="11">{t:.0f}</text>')
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="13">{escape(x_label)}</text>'
    )
    out.append("</g>")

    legend_y = mt + 14
    for i, (side, series, lo, hi, dash) in enumerate(
        (("left", left, ly0, ly1, ""), ("right", right, ry0, ry1, ' stroke-dasharray="6 4"'))
    ):
        for j, (name, ys) in enumerate(series.items()):
            color = PALETTE[(j + i * len(left)) % len(PALETTE)]
            pts = " ".join(f"{px(a):.2f},{py(b, lo, hi):.2f}" for a, b in zip(x, ys) if not math.isnan(b))
            out.append(
                f'<polyline class="series" data-axis="{side}" data-name="{escape(name)}" points="{pts}" '
                f'fill="none" stroke="{color}" stroke-width="1.6"{dash}/>'
            )
            out.append(
                f'<text x="{ml + 10}" y="{legend_y}" font-size="11" fill="{color}">{escape(name)} ({side})</text>'
            )
            legend_y += 14
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_dynamics(args):
    if not args.run_a or not args.run_b:
        raise ConfigError("dynamics needs --run-a and --run-b")
    if args.tau is None:
        raise ConfigError("dynamics needs --tau")
    if not 0 < args.tau < 1:
        raise ConfigError(f"--tau must be in (0, 1), got {args.tau}")
    cfg = _load(args) if args.config else None
    out = _out_dir(args, cfg)
    header, rows = dynamics_table(args.run_a, args.run_b, args.tau)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(os.path.join(out, "dynamics.csv"), buf.getvalue())

    def num(v):
        return math.nan if v == "" else float(v)

    x = [num(r[0]) for r in rows]
    n_auroc = len(header) - 3
    left = {header[1 + j].removesuffix("_auroc"): [num(r[1 + j]) for r in rows] for j in range(n_auroc)}
    right = {header[-2 + j].removesuffix("_disagreement"): [num(r[-2 + j]) for r in rows] for j in range(2)}
    svg = dual_axis_svg(
        x, left, right, "validation AUROC", f"disagreement (tau={args.tau:g})", "iteration", "Training dynamics"
    )
    atomic_write_text(os.path.join(out, "dynamics.svg"), svg)
    args.log(f"wrote {len(rows)} rows to {os.path.join(out, 'dynamics.csv')}")
    return 0


# -- entry point ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file")
    common.add_argument("--seed", type=int, help="override the config seed (and seed list)")
    common.add_argument("--out", help=f"output directory (default: config 'out', ${OUT_ENV}, or ./{DEFAULT_OUT})")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    parser = _Parser(prog="noteacher", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, func, text in (
        ("gen", cmd_gen, "generate or ingest the dataset and write dataset.csv + manifest.json"),
        ("sample", cmd_sample, "write budget split manifests"),
        ("mismatch", cmd_mismatch, "write class-mismatch split manifests"),
        ("train", cmd_train, "train every configured method, budget and seed"),
        ("eval", cmd_eval, "re-evaluate a run's best checkpoint on its test split"),
        ("compare", cmd_compare, "aggregate test AUROC over seeds"),
        ("dynamics", cmd_dynamics, "join two run histories and plot AUROC against disagreement"),
    ):
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--run", help="run directory")
        if name == "dynamics":
            p.add_argument("--run-a", help="first run directory (e.g. a NoT run)")
            p.add_argument("--run-b", help="second run directory (e.g. an MT run)")
            p.add_argument("--tau", type=float, help="binarization threshold used for disagreement")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.log = _Log(args.quiet)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NoTeacherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # stable exit code for anything unexpected
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
