"""Run-directory writers and comparison tables.

Determinism contract: ``metrics.jsonl``, ``summary.csv``, and
``config.resolved`` are byte-identical across re-runs with the same
(seed, config) — floats are serialized with ``repr`` so round-trips are
exact, keys are sorted, and line endings are fixed to ``\\n``.  Wall-clock
time and other inherently unstable facts go to ``run_info.json``, which is
excluded from that contract.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .engine import RunReport


def _fmt(value) -> str:
    """Stable scalar formatting: repr for floats, str otherwise."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def metrics_jsonl_bytes(report: RunReport) -> bytes:
    lines = [
        json.dumps(rec.to_jsonable(), sort_keys=True, separators=(",", ":"))
        for rec in report.steps
    ]
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


def summary_csv_bytes(report: RunReport) -> bytes:
    """Section/key/value summary covering the whole run.

    Sections: ``run`` (identity and totals), ``realtime`` (pre-adaptation
    accuracy per stream segment), ``post`` (final-model accuracy per
    evaluation set), ``extras`` (method-specific scalars, sorted by key).
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "key", "value"])
    w.writerow(["run", "method", report.method])
    w.writerow(["run", "seed", report.seed])
    w.writerow(["run", "config_hash", report.config_hash])
    w.writerow(["run", "n_steps", len(report.steps)])
    w.writerow(["run", "realized_budget", report.realized_budget])
    for name, acc in report.segment_accuracy.items():
        w.writerow(["realtime", name, _fmt(acc)])
    for name, acc in report.post_accuracy.items():
        w.writerow(["post", name, _fmt(acc)])
    for key in sorted(report.extras):
        value = report.extras[key]
        if isinstance(value, (int, float, str, bool)):
            w.writerow(["extras", key, _fmt(value)])
    return buf.getvalue().encode()


def write_run_dir(out_dir: str | Path, report: RunReport, resolved_config: dict) -> Path:
    """Write the standard run artifacts into ``out_dir`` (created if needed).

    ``metrics.jsonl`` — one JSON object per stream step;
    ``summary.csv``  — section,key,value rollup;
    ``config.resolved`` — the exact configuration the run used, as JSON;
    ``run_info.json`` — timing and environment facts (not byte-stable).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_bytes(metrics_jsonl_bytes(report))
    (out / "summary.csv").write_bytes(summary_csv_bytes(report))
    (out / "config.resolved").write_bytes(
        (json.dumps(resolved_config, sort_keys=True, indent=2) + "\n").encode())
    (out / "run_info.json").write_text(
        json.dumps({"wall_time_s": report.wall_time_s, "method": report.method,
                    "seed": report.seed}, indent=2) + "\n")
    return out


def load_summary(path: str | Path) -> dict[tuple[str, str], str]:
    """Parse a summary.csv back into {(section, key): value} (values as text)."""
    rows: dict[tuple[str, str], str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["section", "key", "value"]:
            raise ValueError(f"not a summary.csv: header {header!r}")
        for section, key, value in reader:
            rows[(section, key)] = value
    return rows


def render_comparison(reports: dict[str, RunReport], digits: int = 4) -> str:
    """Side-by-side text table of several runs on the same stream.

    Rows: realtime accuracy per segment (in stream order), realized label
    budget, then post-adaptation accuracy per evaluation set.  Columns are
    methods, in the order given.
    """
    methods = list(reports)
    seg_names: list[str] = []
    post_names: list[str] = []
    for rep in reports.values():
        for name in rep.segment_accuracy:
            if name not in seg_names:
                seg_names.append(name)
        for name in rep.post_accuracy:
            if name not in post_names:
                post_names.append(name)

    def cell(value) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.{digits}f}"
        return str(value)

    rows: list[tuple[str, list[str]]] = []
    for name in seg_names:
        rows.append((f"realtime {name}",
                     [cell(reports[m].segment_accuracy.get(name)) for m in methods]))
    rows.append(("labels used", [cell(reports[m].realized_budget) for m in methods]))
    for name in post_names:
        rows.append((f"post {name}",
                     [cell(reports[m].post_accuracy.get(name)) for m in methods]))

    label_w = max(len(r[0]) for r in rows) if rows else 8
    col_ws = [max(len(m), *(len(r[1][i]) for r in rows)) if rows else len(m)
              for i, m in enumerate(methods)]
    out = [" " * label_w + "  " + "  ".join(m.rjust(col_ws[i]) for i, m in enumerate(methods))]
    for label, cells in rows:
        out.append(label.ljust(label_w) + "  "
                   + "  ".join(c.rjust(col_ws[i]) for i, c in enumerate(cells)))
    return "\n".join(out)
