"""Command line front end.

``driftlab run <config>`` executes every (method, seed) pair from an INI
config and writes ``results/<method>/<seed>/{a_matrix.csv, record.json,
prototypes.json}``. ``driftlab plot <dir> --kind ...`` renders SVGs from
those files, and ``driftlab compare <dirs...>`` prints a markdown table
of A_k recomputed from the emitted CSVs alone.

Exit codes: 0 ok, 1 runtime failure, 2 config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, build_sequence, load_config
from .harness import (
    MethodConfig,
    RunRecord,
    avg_incremental_accuracy,
    run_sequence,
)
from .svgplot import confusion_figure, curves_figure, embedding_figure


def _safe_ak(record: RunRecord, k: int):
    try:
        return avg_incremental_accuracy(record, k)
    except ValueError:
        return None  # row never evaluated (single-phase methods)


def _ak_table(records: dict, n_tasks: int, n_seeds: int) -> str:
    lines = [f"A_k by method, mean over {n_seeds} seed(s)", ""]
    header = ["method".ljust(18)] + [f"A_{k}".rjust(8) for k in range(1, n_tasks + 1)]
    lines.append("".join(header))
    for label in sorted(records):
        cells = [label.ljust(18)]
        for k in range(1, n_tasks + 1):
            vals = [_safe_ak(r, k) for r in records[label].values()]
            vals = [v for v in vals if v is not None]
            cells.append((f"{np.mean(vals):.4f}" if vals else "-").rjust(8))
        lines.append("".join(cells))
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    out_root = Path(cfg.output_dir)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"config error: cannot create output_dir: {e}", file=sys.stderr)
        return 2

    sequences = {}
    records: dict = {}
    failed = 0
    for label, kwargs in cfg.methods:
        for seed in cfg.seeds:
            try:
                if seed not in sequences:
                    sequences[seed] = build_sequence(cfg.dataset, seed)
            except ConfigError as e:
                print(f"config error: {e}", file=sys.stderr)
                return 2
            seq, pretrain = sequences[seed]
            try:
                record = run_sequence(MethodConfig(seed=seed, **kwargs), seq,
                                      pretrain_data=pretrain)
            except Exception as e:  # isolate per (method, seed)
                failed += 1
                print(f"[fail] {label} seed {seed}: {e}", file=sys.stderr)
                continue
            run_dir = out_root / label / str(seed)
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "a_matrix.csv").write_text(record.a_matrix_csv())
            (run_dir / "record.json").write_text(record.to_json())
            (run_dir / "prototypes.json").write_text(record.book.to_json())
            records.setdefault(label, {})[seed] = record
            print(f"[done] {label} seed {seed} "
                  f"({record.wall_time:.1f}s) -> {run_dir}")

    if records:
        n_tasks = max(r.n_tasks for by_seed in records.values()
                      for r in by_seed.values())
        print()
        print(_ak_table(records, n_tasks, len(cfg.seeds)))
    return 1 if failed else 0


def _find_records(root: Path):
    """(label, seed, path) triples under a results root, or the root itself
    when it holds a single run."""
    if (root / "record.json").exists():
        rec = RunRecord.from_json((root / "record.json").read_text())
        return [(rec.method, str(rec.seed), root / "record.json")]
    hits = sorted(root.glob("*/*/record.json"))
    return [(p.parent.parent.name, p.parent.name, p) for p in hits]


def cmd_plot(args) -> int:
    root = Path(args.dir)
    found = _find_records(root)
    if not found:
        print(f"no record.json under {root}", file=sys.stderr)
        return 1
    plots = root / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    written = []

    if args.kind == "curves":
        by_label: dict = {}
        for label, seed, path in found:
            by_label.setdefault(label, []).append(
                RunRecord.from_json(path.read_text()))
        series = []
        for label in sorted(by_label):
            recs = by_label[label]
            pts = []
            for k in range(1, max(r.n_tasks for r in recs) + 1):
                vals = [_safe_ak(r, k) for r in recs]
                vals = [v for v in vals if v is not None]
                if vals:
                    pts.append((k, float(np.mean(vals))))
            if pts:
                series.append((label, pts))
        out = plots / "curves.svg"
        out.write_text(curves_figure(series, title=root.name))
        written.append(out)

    elif args.kind == "embedding":
        for label, seed, path in found:
            record = RunRecord.from_json(path.read_text())
            if not record.embed2d:
                print(f"{path}: no 2-d captures; embedding plots need "
                      "embedding_dim = 2", file=sys.stderr)
                return 1
            checkpoints = sorted(record.embed2d)
            if len(checkpoints) > 1:
                checkpoints = [k for k in checkpoints if k > 1]
            for k in checkpoints:
                out = plots / f"{label}_seed{seed}_embedding_task{k}.svg"
                out.write_text(embedding_figure(
                    record.embed2d[k],
                    title=f"{label} seed {seed}, after task {k}"))
                written.append(out)

    else:  # confusion
        for label, seed, path in found:
            record = RunRecord.from_json(path.read_text())
            for k in sorted(record.confusions):
                entry = record.confusions[k]
                out = plots / f"{label}_seed{seed}_confusion_task{k}.svg"
                out.write_text(confusion_figure(
                    entry["classes"], entry["counts"],
                    title=f"{label} seed {seed}, after task {k}"))
                written.append(out)

    for path in written:
        print(path)
    return 0


def _read_a_matrix(path: Path) -> dict:
    acc: dict = {}
    lines = path.read_text().strip().split("\n")
    if not lines or lines[0] != "k,j,accuracy":
        raise ValueError(f"{path}: not an a_matrix.csv")
    for line in lines[1:]:
        k, j, v = line.split(",")
        acc.setdefault(int(k), {})[int(j)] = float(v)
    return acc


def _csv_ak(acc: dict, k: int):
    row = acc.get(k, {})
    if any(j not in row for j in range(1, k + 1)):
        return None
    return sum(row[j] for j in range(1, k + 1)) / k


def cmd_compare(args) -> int:
    rows: dict = {}
    n_tasks = None
    for dirname in args.dirs:
        root = Path(dirname)
        hits = sorted(root.glob("*/*/a_matrix.csv"))
        if not hits:
            print(f"no a_matrix.csv under {root}", file=sys.stderr)
            return 1
        for path in hits:
            label, seed = path.parent.parent.name, path.parent.name
            if len(args.dirs) > 1:
                label = f"{root.name}:{label}"
            try:
                acc = _read_a_matrix(path)
            except ValueError as e:
                print(e, file=sys.stderr)
                return 1
            top = max(acc)
            if n_tasks is None:
                n_tasks = top
            elif top != n_tasks:
                print(f"inconsistent task counts: {path} has {top}, "
                      f"others have {n_tasks}", file=sys.stderr)
                return 1
            rows.setdefault(label, {})[seed] = acc

    ks = list(range(1, n_tasks + 1))
    out = ["| method | " + " | ".join(f"A_{k}" for k in ks) + " |",
           "| --- | " + " | ".join("---" for _ in ks) + " |"]
    for label in sorted(rows):
        cells = []
        for k in ks:
            vals = [_csv_ak(acc, k) for acc in rows[label].values()]
            vals = [v for v in vals if v is not None]
            if not vals:
                cells.append("-")
            else:
                cells.append(f"{np.mean(vals):.4f} ± {np.std(vals):.4f}")
        out.append(f"| {label} | " + " | ".join(cells) + " |")
    print("\n".join(out))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="class-incremental embedding experiments: run, plot, compare",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute all (method, seed) runs from a config")
    p_run.add_argument("config", help="path to an INI experiment config")

    p_plot = sub.add_parser("plot", help="render SVG figures from results")
    p_plot.add_argument("dir", help="results directory (from `driftlab run`)")
    p_plot.add_argument("--kind", required=True,
                        choices=("embedding", "curves", "confusion"))

    p_cmp = sub.add_parser("compare", help="markdown A_k table across results dirs")
    p_cmp.add_argument("dirs", nargs="+")

    args = parser.parse_args(argv)
    return {"run": cmd_run, "plot": cmd_plot, "compare": cmd_compare}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
