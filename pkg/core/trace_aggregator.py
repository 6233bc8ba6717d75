import logging
import os

import numpy as np
import pandas as pd

from .optim import TraceRecord

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "grad_evals_over_N", "train_loss", "test_loss",
                 "optimality_gap", "grad_norm", "wall_time", "dist_sq_to_optimum"]
SUMMARY_COLUMNS = ["cell", "algorithm", "schedule", "batch_size", "status", "epochs",
                   "final_grad_evals_over_N", "final_train_loss", "final_test_loss",
                   "final_optimality_gap", "final_grad_norm", "trace_file", "best_tuned"]
FLOAT_FORMAT = "%.17g"


def write_trace(records, path, deterministic=True):
    """One row per epoch; wall_time is written as 0 in deterministic mode so reruns are byte-identical."""
    df = pd.DataFrame({
        "epoch": [r.epoch for r in records],
        "grad_evals_over_N": [r.grad_evals_over_N for r in records],
        "train_loss": [r.train_loss for r in records],
        "test_loss": [r.test_loss for r in records],
        "optimality_gap": [r.optimality_gap for r in records],
        "grad_norm": [r.full_grad_norm for r in records],
        "wall_time": [0.0 if deterministic else r.wall_time for r in records],
        "dist_sq_to_optimum": [r.dist_sq_to_optimum for r in records],
    }, columns=TRACE_COLUMNS)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_trace(path):
    return pd.read_csv(path)


def trace_records(df, n_samples):
    return [TraceRecord(int(row.epoch), float(row.grad_evals_over_N) * n_samples,
                        float(row.grad_evals_over_N), float(row.train_loss), float(row.test_loss),
                        float(row.optimality_gap), float(row.grad_norm), float(row.wall_time),
                        dist_sq_to_optimum=float(getattr(row, "dist_sq_to_optimum", np.nan)))
            for row in df.itertuples(index=False)]


def select_best(summary, by_batch_size=False):
    """
    Best-tuned cell per algorithm (per algorithm and batch size when asked):
    lowest final train loss among cells that finished, first row wins ties.
    """
    out = summary.copy()
    out["best_tuned"] = False
    ok = out[out["status"] == "ok"]
    if ok.empty:
        return out
    keys = ["algorithm", "batch_size"] if by_batch_size else ["algorithm"]
    for _, group in ok.groupby(keys, sort=True):
        vals = group["final_train_loss"].to_numpy(dtype=float)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        out.loc[group.index[int(np.argmin(vals))], "best_tuned"] = True
    return out


def combine_traces(out_dir, cells):
    """
    Fold the per-cell trace files into summary.csv.

    cells: manifest cell entries (name, algorithm, schedule, batch_size,
    status, trace_file). Failed cells stay in the table but never win.
    """
    rows = []
    for cell in cells:
        row = {"cell": cell["name"], "algorithm": cell["algorithm"], "schedule": cell["schedule"],
               "batch_size": cell["batch_size"], "status": cell["status"], "epochs": 0,
               "final_grad_evals_over_N": np.nan, "final_train_loss": np.nan,
               "final_test_loss": np.nan, "final_optimality_gap": np.nan,
               "final_grad_norm": np.nan, "trace_file": cell.get("trace_file") or ""}
        path = os.path.join(out_dir, row["trace_file"]) if row["trace_file"] else None
        if cell["status"] == "ok" and path and os.path.exists(path):
            df = read_trace(path)
            last = df.iloc[-1]
            row.update({"epochs": int(last["epoch"]),
                        "final_grad_evals_over_N": float(last["grad_evals_over_N"]),
                        "final_train_loss": float(last["train_loss"]),
                        "final_test_loss": float(last["test_loss"]),
                        "final_optimality_gap": float(last["optimality_gap"]),
                        "final_grad_norm": float(last["grad_norm"])})
        rows.append(row)

    summary = pd.DataFrame(rows, columns=[c for c in SUMMARY_COLUMNS if c != "best_tuned"])
    multi_batch = summary["batch_size"].nunique() > 1
    summary = select_best(summary, by_batch_size=multi_batch)[SUMMARY_COLUMNS]
    path = os.path.join(out_dir, "summary.csv")
    summary.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.info("[TraceAggregator] summary saved: %s (%d cells)", path, len(summary))
    return summary
