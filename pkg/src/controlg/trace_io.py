"""Canonical JSONL traces and CSV run summaries.

A trace file holds one ``header`` line (the fully resolved config), one
``block`` line per executed block and a closing ``summary`` line.  Every
line is canonical JSON: sorted keys, no whitespace, floats printed with 12
significant digits, so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Iterable

import numpy as np

FLOAT_FORMAT = ".12g"
VECTOR_FIELDS = ("f", "e", "I", "nu", "p", "losses", "L_tilde", "D", "N")
SENSING_FIELDS = ("RQ", "Conf", "lambda_star", "phi")


class TraceFormatError(ValueError):
    """A trace line failed to parse or validate; the message carries file:line."""


def _encode(obj) -> str:
    if isinstance(obj, dict):
        items = []
        for key in sorted(obj):
            if not isinstance(key, str):
                raise TypeError(f"trace keys must be strings, got {key!r}")
            items.append(json.dumps(key) + ":" + _encode(obj[key]))
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_encode(x) for x in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v} cannot be written to a trace")
        return format(v, FLOAT_FORMAT)
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialise {type(obj).__name__} into a trace")


def canonical_json(record) -> str:
    return _encode(record)


def write_trace(stream: IO[str], record: dict) -> None:
    """Append one canonical JSON line.  Nothing is written if encoding fails."""
    line = _encode(record)
    stream.write(line + "\n")


def schema() -> dict:
    """The JSON schema shipped with the package for trace lines."""
    return json.loads(resources.files("controlg").joinpath("trace_schema.json").read_text())


def validate_block(rec: dict, K: int, tol: float = 1e-9) -> None:
    for name in VECTOR_FIELDS:
        if len(rec[name]) != K:
            raise ValueError(f"{name} has length {len(rec[name])}, expected {K}")
    sensing = [name in rec for name in SENSING_FIELDS]
    if any(sensing) and not all(sensing):
        raise ValueError("sensing fields must appear together")
    for name in ("RQ", "Conf", "lambda_star"):
        if name in rec and len(rec[name]) != K:
            raise ValueError(f"{name} has length {len(rec[name])}, expected {K}")
    if abs(sum(rec["p"]) - 1.0) > tol:
        raise ValueError(f"p sums to {sum(rec['p'])}")
    if sum(rec["N"]) != rec["block"]:
        raise ValueError(f"N sums to {sum(rec['N'])} at block {rec['block']}")
    if not 0 <= rec["chosen_task"] < K:
        raise ValueError(f"chosen_task {rec['chosen_task']} out of range")


@dataclass
class Trace:
    path: str
    header: dict
    blocks: list[dict] = field(default_factory=list)
    summary: dict | None = None

    @property
    def K(self) -> int:
        return int(self.header["K"])


def read_trace(path: str | Path) -> Trace:
    path = str(path)
    header = None
    blocks: list[dict] = []
    summary = None
    last = (0, 0)
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            where = f"{path}:{lineno}"
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"{where}: malformed JSON ({exc.msg})") from None
            kind = rec.get("kind") if isinstance(rec, dict) else None
            if kind == "header":
                if header is not None:
                    raise TraceFormatError(f"{where}: second header")
                header = rec
            elif kind == "block":
                if header is None:
                    raise TraceFormatError(f"{where}: block record before header")
                try:
                    validate_block(rec, int(header["K"]))
                except (KeyError, TypeError, ValueError) as exc:
                    raise TraceFormatError(f"{where}: invalid block record ({exc})") from None
                stamp = (rec["epoch"], rec["block"])
                if stamp <= last:
                    raise TraceFormatError(f"{where}: (epoch, block) {stamp} not after {last}")
                last = stamp
                blocks.append(rec)
            elif kind == "summary":
                summary = rec
            else:
                raise TraceFormatError(f"{where}: unknown record kind {kind!r}")
    if header is None:
        raise TraceFormatError(f"{path}: no header record")
    return Trace(path, header, blocks, summary)


def drought_gaps(chosen: Iterable[int], K: int) -> np.ndarray:
    """Longest run of consecutive blocks in which each task was never chosen."""
    best = np.zeros(K, dtype=np.int64)
    since = np.zeros(K, dtype=np.int64)
    for k in chosen:
        since += 1
        since[k] = 0
        np.maximum(best, since, out=best)
    return best


def run_metrics(tr: Trace) -> dict:
    K = tr.K
    chosen = [b["chosen_task"] for b in tr.blocks]
    counts = np.bincount(chosen, minlength=K) if chosen else np.zeros(K, dtype=np.int64)
    max_disc = 0.0
    for b in tr.blocks:
        d = -np.asarray(b["e"], dtype=np.float64)
        d[b["chosen_task"]] += 1.0
        max_disc = max(max_disc, float(np.max(np.abs(d))))
    phis = [b["phi"] for b in tr.blocks if "phi" in b]
    final_losses = tr.blocks[-1]["losses"] if tr.blocks else []
    return {
        "policy": tr.header["policy"],
        "seed": int(tr.header["seed"]),
        "K": K,
        "blocks": len(tr.blocks),
        "counts": counts.tolist(),
        "final_losses": list(final_losses),
        "max_abs_discrepancy": max_disc,
        "max_gap": drought_gaps(chosen, K).tolist(),
        "final_phi": phis[-1] if phis else None,
        "diverged": bool(tr.summary and tr.summary.get("diverged")),
    }


REPORT_COLUMNS = [
    "row_type", "policy", "seed", "n_runs", "K", "blocks", "counts", "final_losses",
    "max_abs_discrepancy", "max_gap", "final_phi", "diverged",
    "median_max_abs_discrepancy", "iqr_max_abs_discrepancy",
    "median_final_loss_sum", "iqr_final_loss_sum", "median_max_gap", "iqr_max_gap",
]


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), FLOAT_FORMAT)


def _vec(v) -> str:
    return ";".join(_num(x) for x in v)


def _median_iqr(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return float(med), float(q3 - q1)


def collect_traces(inputs: Iterable[str | Path]) -> list[Path]:
    """Expand directories to their ``*.jsonl`` files, sorted by name."""
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.jsonl")))
        else:
            paths.append(p)
    return paths


def report(trace_paths: Iterable[str | Path]) -> str:
    """CSV with one row per run and aggregate (median, IQR) rows per policy."""
    runs = [run_metrics(read_trace(p)) for p in trace_paths]
    runs.sort(key=lambda r: (r["policy"], r["seed"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in runs:
        writer.writerow([
            "run", r["policy"], r["seed"], 1, r["K"], r["blocks"], _vec(r["counts"]), _vec(r["final_losses"]),
            _num(r["max_abs_discrepancy"]), _vec(r["max_gap"]), _num(r["final_phi"]), _num(r["diverged"]),
            "", "", "", "", "", "",
        ])
    for policy in sorted({r["policy"] for r in runs}):
        group = [r for r in runs if r["policy"] == policy]
        disc = _median_iqr([r["max_abs_discrepancy"] for r in group])
        loss = _median_iqr([sum(r["final_losses"]) for r in group])
        gap = _median_iqr([max(r["max_gap"]) if r["max_gap"] else 0 for r in group])
        writer.writerow([
            "aggregate", policy, "", len(group), "", "", "", "", "", "", "", _num(sum(r["diverged"] for r in group)),
            _num(disc[0]), _num(disc[1]), _num(loss[0]), _num(loss[1]), _num(gap[0]), _num(gap[1]),
        ])
    return buf.getvalue()
