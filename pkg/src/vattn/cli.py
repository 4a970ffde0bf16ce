"""Command-line entry point: ``vattn <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure. Every
failure prints exactly one JSON object on stderr.
"""

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from vattn.errors import (
    DegenerateDataError,
    InvalidArgumentError,
    InvalidStateError,
    NumericalDomainError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    """Unreadable, missing or inconsistent input files."""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind, message, code, **extra):
    payload = {"error": kind, "message": str(message), "exit_code": code}
    payload.update(extra)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


# --- input helpers -----------------------------------------------------------------


def _load_data(directory, domain=None):
    from vattn.synthdomains import load_dataset

    try:
        train, test, names = load_dataset(directory)
    except (OSError, InvalidArgumentError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load dataset from {directory!r}: {exc}") from exc
    if domain is not None:
        if domain not in names:
            raise DataError(f"domain {domain!r} not in dataset (have {names})")
        lab = names.index(domain)
        train = [s for s in train if s.dataset_label == lab]
        test = [s for s in test if s.dataset_label == lab]
    return train, test, names


def _load_ckpt(path):
    from vattn.trainer import checkpoint

    try:
        return checkpoint.load(path)
    except (OSError, InvalidArgumentError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {path!r}: {exc}") from exc


def _config(args, **overrides):
    from vattn.trainer import load_config

    try:
        return load_config(getattr(args, "config", None), **overrides)
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from exc


def _write_labels(path, samples, labels):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample_id", "dataset_label", "cl_label"])
        for s, lab in zip(samples, labels):
            wr.writerow([s.sample_id, s.dataset_label, int(lab)])


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


# --- commands ----------------------------------------------------------------------


def cmd_gen(args):
    from vattn.synthdomains import default_presets, generate, save_dataset

    presets = default_presets(grid=(args.grid, args.grid), n_test=args.n_test)
    specs = presets[args.preset]
    train, test = generate(specs, args.seed)
    save_dataset(args.out, train, test, specs, args.seed)
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


def cmd_train(args):
    from vattn.report import format_table, write_report
    from vattn.trainer import checkpoint, train

    config = _config(args, mode=args.mode, seed=args.seed, epochs=args.epochs)
    tr, te, names = _load_data(args.data, args.domain)
    if config.mode == "it" and len({s.dataset_label for s in tr}) != 1:
        raise UsageError("--mode it needs single-domain data; pass --domain NAME")
    ck, report = train(config, tr, te, names)
    os.makedirs(args.out, exist_ok=True)
    checkpoint.save(ck, os.path.join(args.out, "checkpoint.vack"))
    write_report(args.out, report)
    print(format_table(report.per_domain))


def cmd_dkpnet(args):
    from vattn.report import format_table, write_report
    from vattn.trainer import checkpoint, run_dkpnet

    config = _config(args, cbar=args.cbar, k=args.k, seed=args.seed, epochs=args.epochs)
    tr, te, names = _load_data(args.data)
    ck1, ck2, report = run_dkpnet(config, tr, te, names)
    os.makedirs(args.out, exist_ok=True)
    checkpoint.save(ck1, os.path.join(args.out, "stage1.vack"))
    checkpoint.save(ck2, os.path.join(args.out, "stage2.vack"))
    write_report(args.out, report)
    _write_labels(os.path.join(args.out, "cl_labels.csv"), tr, ck2.state["cl_labels"])
    _write_rows(
        os.path.join(args.out, "contingency.csv"),
        ["dataset"] + [f"cl{j}" for j in range(config.cbar)],
        [[names[i]] + list(row) for i, row in enumerate(np.asarray(report.contingency).tolist())],
    )
    print(format_table(report.per_domain))
    if report.flags:
        print("flags: " + ", ".join(report.flags))


def cmd_cluster(args):
    from vattn.metrics import contingency_table
    from vattn.trainer.loop import cluster_samples, model_from_checkpoint

    ck = _load_ckpt(args.ckpt)
    model = model_from_checkpoint(ck)
    tr, _, names = _load_data(args.data)
    seed = ck.config.get("seed", 0) if args.seed is None else args.seed
    labels, _, _ = cluster_samples(model, tr, args.cbar, seed, args.backend)
    table = contingency_table([s.dataset_label for s in tr], labels, len(names), args.cbar)
    print(f"{'dataset':<10}" + "".join(f"{'cl' + str(j):>8}" for j in range(args.cbar)))
    for i, row in enumerate(table):
        print(f"{names[i]:<10}" + "".join(f"{v:>8}" for v in row))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_labels(os.path.join(args.out, "cl_labels.csv"), tr, labels)


def cmd_eval(args):
    from vattn.report import domain_csv, format_table
    from vattn.trainer import evaluate
    from vattn.trainer.loop import model_from_checkpoint

    ck = _load_ckpt(args.ckpt)
    model = model_from_checkpoint(ck)
    _, te, names = _load_data(args.data)
    trained_on = ck.state.get("trained_domains", names)
    present = {names.index(n) for n in trained_on if n in names}
    metrics = evaluate(model, [s for s in te if s.dataset_label in present], names)
    print(domain_csv(metrics) if args.csv else format_table(metrics))


def cmd_gradcheck(args):
    from vattn.gradsuite import TOLERANCE, run_suite

    results = run_suite(seed=args.seed)
    bad = []
    for name, r in results.items():
        ok = r["max_rel_error"] < TOLERANCE
        print(f"{'PASS' if ok else 'FAIL'} {name:<20} max_rel_error={r['max_rel_error']:.3e}"
              f" ({r['worst_param']})")
        if not ok:
            bad.append(name)
    if bad:
        raise NumericalDomainError(f"gradient check failed for {', '.join(bad)}", {"failed": bad})


def _report_files(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            found = sorted(glob.glob(os.path.join(p, "**", "report.json"), recursive=True))
            if not found:
                raise DataError(f"no report.json under {p!r}")
            files += found
        elif os.path.isfile(p):
            files.append(p)
        else:
            raise DataError(f"no such run directory or file: {p!r}")
    return files


def cmd_report(args):
    from vattn.report import aggregate, aggregate_csv, comparison_table, load_report

    reports = []
    for path in _report_files(args.runs):
        try:
            reports.append(load_report(path))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read report {path!r}: {exc}") from exc
    agg = aggregate(reports)
    text = aggregate_csv(agg)
    table = comparison_table(agg)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "aggregate.csv"), "w") as fh:
            fh.write(text)
        with open(os.path.join(args.out, "comparison.txt"), "w") as fh:
            fh.write(table + "\n")
    print(text, end="")
    print()
    print(table)


def cmd_sweep(args):
    from vattn.report import write_report
    from vattn.trainer import run_dkpnet

    base = _config(args, seed=args.seed, epochs=args.epochs)
    tr, te, names = _load_data(args.data)
    rows = []
    for v in args.values:
        cfg = dataclasses.replace(base, **{args.param: v})
        _, _, report = run_dkpnet(cfg, tr, te, names)
        write_report(os.path.join(args.out, f"{args.param}={v}"), report)
        for dom, m in report.per_domain.items():
            rows.append([cfg.cbar, cfg.k, dom, repr(m["mae"]), repr(m["mse"])])
            print(f"cbar={cfg.cbar} k={cfg.k} {dom:<8} MAE={m['mae']:.4f} MSE={m['mse']:.4f}")
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "sweep.csv"), ["cbar", "k", "domain", "mae", "mse"], rows)


# --- parser ------------------------------------------------------------------------


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    p = _Parser(prog="vattn", description="Domain-specific variational attention for counting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic multi-domain dataset")
    g.add_argument("--preset", choices=("three_joint", "four_joint"), default="three_joint")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", type=_positive, default=32)
    g.add_argument("--n-test", type=_positive, default=100)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train IT / JT / SE / VA")
    t.add_argument("--mode", choices=("it", "jt", "se", "va"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--domain", help="train and evaluate on this domain only (IT)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("dkpnet", help="two-stage VA -> clustering -> InVA run")
    d.add_argument("--data", required=True)
    d.add_argument("--cbar", type=_positive, default=3)
    d.add_argument("--k", type=_positive, default=3)
    d.add_argument("--config")
    d.add_argument("--seed", type=int)
    d.add_argument("--epochs", type=int)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dkpnet)

    c = sub.add_parser("cluster", help="cluster a checkpoint's gates into CL labels")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--cbar", type=_positive, default=3)
    c.add_argument("--backend", choices=("gmm", "kmeans"), default="gmm")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cluster)

    e = sub.add_parser("eval", help="per-domain MAE / MSE of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--csv", action="store_true")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    k.add_argument("--seed", type=int, default=3)
    k.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("report", help="aggregate runs into mean/std tables")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", help="dkpnet over a grid of cbar or k values")
    s.add_argument("--param", choices=("cbar", "k"), required=True)
    s.add_argument("--values", type=_positive, nargs="+", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (InvalidArgumentError, InvalidStateError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_USAGE)
    except (DataError, DegenerateDataError, FileNotFoundError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_DATA)
    except NumericalDomainError as exc:
        return _fail("NumericalDomainError", exc, EXIT_NUMERIC,
                     diagnostics=json.loads(json.dumps(exc.diagnostics, default=str)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
