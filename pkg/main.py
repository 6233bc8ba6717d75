import argparse
import logging
import os
import sys

from core.errors import ConfigError, ParseError, RsvrgError
from core.experiment import DEFAULT_OUT_DIR, load_config, run_experiment, verify_artifacts
from ui.plotdata import emit_plot_data

# -----------------------------
# Defaults (env vars)
# -----------------------------
LOG_LEVEL = os.getenv("RSVRG_LOG_LEVEL", "INFO")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ALL_CELLS_FAILED = 0, 1, 2, 3

log = logging.getLogger("rsvrg")


def parse_args(argv=None):
    ap = argparse.ArgumentParser(prog="rsvrg",
                                 description="Riemannian SVRG experiments on the Grassmann manifold")
    ap.add_argument("--log-level", type=str, default=LOG_LEVEL)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a YAML config")
    run.add_argument("config", type=str)
    run.add_argument("--out", type=str, default=None, help="artifact directory")
    run.add_argument("--workers", type=int, default=None, help="concurrent grid cells")
    run.add_argument("--seed", type=int, default=None)

    plot = sub.add_parser("plotdata", help="write plot_<metric>.csv files for an artifact directory")
    plot.add_argument("artifact_dir", type=str)

    ver = sub.add_parser("verify", help="run the statistical monitors on an artifact directory")
    ver.add_argument("artifact_dir", type=str)
    ver.add_argument("--pairs", type=int, default=200, help="random pairs for the Lipschitz estimate")
    ver.add_argument("--sigma", type=float, default=None,
                     help="Hessian lower bound near the optimum; enables the theoretical rate report")
    return ap.parse_args(argv)


def cmd_run(args):
    config = load_config(args.config)
    out_dir = args.out or config.out_dir or DEFAULT_OUT_DIR
    out_dir, summary, _ = run_experiment(config, out_dir=out_dir, workers=args.workers, seed=args.seed)
    ok = int((summary["status"] == "ok").sum())
    log.info("[Run] %d/%d cells finished, artifacts in %s", ok, len(summary), out_dir)
    return EXIT_OK if ok else EXIT_ALL_CELLS_FAILED


def cmd_plotdata(args):
    emit_plot_data(args.artifact_dir)
    return EXIT_OK


def cmd_verify(args):
    report = verify_artifacts(args.artifact_dir, n_pairs=args.pairs, sigma=args.sigma)
    return EXIT_OK if report["passed"] else EXIT_FAILED


COMMANDS = {"run": cmd_run, "plotdata": cmd_plotdata, "verify": cmd_verify}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError) as e:
        log.error("[Config] %s", e)
        return EXIT_CONFIG
    except RsvrgError as e:
        log.error("[%s] %s", args.command.capitalize(), e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
