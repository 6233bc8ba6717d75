"""
Plot-ready CSVs from an artifact directory: one file per metric, long
format, x = gradient evaluations / N. Rendering is left to the caller.
"""
import logging
import os

import pandas as pd

from core.errors import ConfigError
from core.trace_aggregator import FLOAT_FORMAT, read_trace

log = logging.getLogger(__name__)

METRICS = ("train_loss", "test_loss", "optimality_gap", "grad_norm")
PLOT_COLUMNS = ["algorithm", "schedule", "batch_size", "best_tuned", "cell", "x", "y"]


def _frames(artifact_dir, summary, metric):
    for row in summary.itertuples(index=False):
        if row.status != "ok" or not isinstance(row.trace_file, str) or not row.trace_file:
            continue
        trace = read_trace(os.path.join(artifact_dir, row.trace_file))
        ys = trace[metric]
        if ys.isna().all():
            continue
        yield pd.DataFrame({"algorithm": row.algorithm, "schedule": row.schedule,
                            "batch_size": row.batch_size, "best_tuned": bool(row.best_tuned),
                            "cell": row.cell, "x": trace["grad_evals_over_N"], "y": ys},
                           columns=PLOT_COLUMNS)


def emit_plot_data(artifact_dir, metrics=METRICS):
    """Write plot_<metric>.csv for every metric that at least one cell recorded; returns the paths."""
    summary_path = os.path.join(artifact_dir, "summary.csv")
    if not os.path.exists(summary_path):
        raise ConfigError(f"no summary.csv in {artifact_dir}")
    summary = pd.read_csv(summary_path, keep_default_na=False, na_values=[""])
    written = []
    for metric in metrics:
        frames = list(_frames(artifact_dir, summary, metric))
        if not frames:
            log.info("[PlotData] %s not recorded by any cell, skipped", metric)
            continue
        path = os.path.join(artifact_dir, f"plot_{metric}.csv")
        pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    log.info("[PlotData] wrote %d files to %s", len(written), artifact_dir)
    return written
