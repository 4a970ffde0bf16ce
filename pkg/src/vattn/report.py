"""Run reports: JSON for tooling, CSV / aligned text for people.

Everything in a report is a deterministic function of (config, data, seed)
except the ``_header`` object (timestamp and wall-clock), which is always
written alone on line 2 of ``report.json``.
"""

import csv
import datetime as _dt
import io
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from vattn.metrics import mean_std

HEADER_KEY = "_header"


@dataclass
class RunReport:
    mode: str
    seed: int
    config: dict
    domains: list
    per_domain: dict  # name -> {"mae", "mse", "n"} on the test split
    init_per_domain: dict = field(default_factory=dict)
    loss_trace: dict = field(default_factory=dict)  # term -> per-epoch means
    eval_trace: list = field(default_factory=list)
    gate_silhouette: object = None
    cl_silhouette: object = None
    contingency: object = None  # dataset label x CL label
    cluster_sizes: object = None
    subdomain_cosines: object = None
    subdomain_counts: object = None
    subdomain_mean_offdiag: object = None
    stages: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self):
        d = asdict(self)
        d.pop("wall_clock")
        return _plain(d)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def report_json(report, timestamp=None):
    body = report.to_dict() if isinstance(report, RunReport) else _plain(report)
    header = {
        "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_clock_s": round(float(getattr(report, "wall_clock", 0.0)), 3),
    }
    text = json.dumps(body, indent=2, sort_keys=True)
    head = json.dumps(header, sort_keys=True)
    if text == "{}":
        return "{\n  " + json.dumps(HEADER_KEY) + ": " + head + "\n}\n"
    return "{\n  " + json.dumps(HEADER_KEY) + ": " + head + ",\n" + text[2:] + "\n"


def strip_header(text):
    """Drop the designated header line so two reports can be compared byte-for-byte."""
    lines = text.splitlines(keepends=True)
    return "".join(line for i, line in enumerate(lines) if i != 1)


def load_report(path):
    with open(path) as fh:
        d = json.load(fh)
    d.pop(HEADER_KEY, None)
    return d


def domain_csv(per_domain):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["domain", "mae", "mse", "n"])
    for name, m in per_domain.items():
        wr.writerow([name, repr(m["mae"]), repr(m["mse"]), m["n"]])
    return buf.getvalue()


def loss_csv(loss_trace):
    terms = sorted(loss_trace)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["epoch"] + terms)
    n = max((len(v) for v in loss_trace.values()), default=0)
    for e in range(n):
        wr.writerow([e] + [repr(loss_trace[t][e]) for t in terms])
    return buf.getvalue()


def write_report(directory, report, name="report"):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, f"{name}.json"), "w") as fh:
        fh.write(report_json(report))
    with open(os.path.join(directory, f"{name}_domains.csv"), "w") as fh:
        fh.write(domain_csv(report.per_domain))
    with open(os.path.join(directory, f"{name}_losses.csv"), "w") as fh:
        fh.write(loss_csv(report.loss_trace))


def format_table(per_domain):
    lines = [f"{'domain':<10}{'MAE':>12}{'MSE':>12}{'n':>6}"]
    for name, m in per_domain.items():
        lines.append(f"{name:<10}{m['mae']:>12.4f}{m['mse']:>12.4f}{m['n']:>6}")
    return "\n".join(lines)


# --- multi-run aggregation --------------------------------------------------------

METHOD_ORDER = ("IT", "JT", "SE", "VA", "InVA")


def method_rows(report):
    """Expand one report dict into ``(method, domain, mae, mse)`` rows."""
    mode = report["mode"]
    rows = []
    if mode == "dkpnet":
        for stage, method in (("stage1", "VA"), ("stage2", "InVA")):
            for dom, m in report["stages"][stage]["per_domain"].items():
                rows.append((method, dom, m["mae"], m["mse"]))
        return rows
    method = {"it": "IT", "jt": "JT", "se": "SE", "va": "VA", "inva": "InVA"}.get(mode, mode)
    for dom, m in report["per_domain"].items():
        rows.append((method, dom, m["mae"], m["mse"]))
    return rows


def aggregate(reports):
    """Mean and sample std over runs, keyed by ``(method, domain)``."""
    groups = {}
    for rep in reports:
        for method, dom, mae, mse in method_rows(rep):
            g = groups.setdefault((method, dom), {"mae": [], "mse": [], "seeds": []})
            g["mae"].append(mae)
            g["mse"].append(mse)
            g["seeds"].append(rep.get("seed"))
    out = {}
    for key, g in groups.items():
        mae_m, mae_s = mean_std(g["mae"])
        mse_m, mse_s = mean_std(g["mse"])
        out[key] = {
            "mae_mean": mae_m,
            "mae_std": mae_s,
            "mse_mean": mse_m,
            "mse_std": mse_s,
            "n_runs": len(g["mae"]),
        }
    return out


def _sorted_keys(agg):
    def rank(key):
        method, dom = key
        order = METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER)
        return (order, method, dom)

    return sorted(agg, key=rank)


def aggregate_csv(agg):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["method", "domain", "mae_mean", "mae_std", "mse_mean", "mse_std", "n_runs"])
    for key in _sorted_keys(agg):
        a = agg[key]
        wr.writerow(
            [key[0], key[1], repr(a["mae_mean"]), repr(a["mae_std"]),
             repr(a["mse_mean"]), repr(a["mse_std"]), a["n_runs"]]
        )
    return buf.getvalue()


def comparison_table(agg):
    """Methods as rows, domains as columns, cells ``MAE mean±std``."""
    methods, domains = [], []
    for method, dom in _sorted_keys(agg):
        if method not in methods:
            methods.append(method)
        if dom not in domains:
            domains.append(dom)
    lines = [f"{'method':<8}" + "".join(f"{d:>18}" for d in domains)]
    for method in methods:
        cells = []
        for d in domains:
            a = agg.get((method, d))
            cells.append(f"{a['mae_mean']:.3f}±{a['mae_std']:.3f}" if a else "-")
        lines.append(f"{method:<8}" + "".join(f"{c:>18}" for c in cells))
    return "\n".join(lines)
