"""Command-line entry points: ``simulate``, ``fit``, ``evaluate``, ``grid``.

Exit codes: 0 success, 2 data/parse error, 3 no convergence, 4 config
error.  Every stochastic subcommand takes an explicit ``--seed``.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import data_io, simulate
from ._fit_common import FitConfig
from .dataset import Dataset
from .densities import FAMILIES
from .evaluation import adjusted_rand_index, bad_point_report, partition_with_bad, rand_index
from .exceptions import ConfigError, ContamixError, DataError, FitFailureError
from .selection import sweep_G

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CONFIG = 4


@dataclass
class RunConfig:
    """Everything a ``fit`` run needs; mirrors the CLI flags."""

    family: str
    input_path: str
    output_path: str
    g_min: int
    g_max: Optional[int] = None
    label_col: Optional[str] = None
    bad_col: Optional[str] = None
    standardize: bool = False
    seed: int = 0
    n_starts: int = 4
    max_iter: int = 1000
    tol: float = 1e-6
    eta_max: float = 1000.0
    lambda_lo: float = 0.5
    init: str = "kmeans"
    n_qmc: int = 2048

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.g_min < 1:
            raise ConfigError("G must be >= 1")
        if self.g_max is not None and self.g_max < self.g_min:
            raise ConfigError("g_max must be >= g")

    def fit_config(self):
        return FitConfig(max_iter=self.max_iter, tol=self.tol, eta_max=self.eta_max,
                         lambda_lo=self.lambda_lo, n_starts=self.n_starts,
                         seed=self.seed, init=self.init, n_qmc=self.n_qmc)

    def echo(self):
        d = dict(vars(self))
        return d


def run_fit(config):
    """Load data, fit (sweeping G when requested), and write the result
    document.  Returns ``(exit_code, document_or_None)``."""
    data = data_io.load_csv(config.input_path, label_col=config.label_col,
                            bad_col=config.bad_col)
    scale_info = None
    if config.standardize:
        center = data.x.mean(axis=0)
        scale = data.x.std(axis=0, ddof=0)
        if np.any(scale == 0):
            raise DataError("constant column; cannot standardize")
        data = Dataset(x=(data.x - center) / scale, feature_names=data.feature_names,
                       labels=data.labels, bad_truth=data.bad_truth)
        scale_info = {"center": [float(v) for v in center],
                      "scale": [float(v) for v in scale]}

    g_values = [config.g_min] if config.g_max is None else list(
        range(config.g_min, config.g_max + 1))
    sweep = sweep_G(data, g_values, config.family, config.fit_config())
    fit = sweep.best

    ari = None
    if data.labels is not None:
        truth = data.truth_partition() if data.bad_truth is not None else data.labels
        predicted = partition_with_bad(fit.hard_labels, fit.bad_flags)
        ari = adjusted_rand_index(truth, predicted)

    doc = data_io.result_document(
        fit, config.family, sweep.best_G, config.echo(),
        bic_table=sweep.bic_table(), ari=ari, seed=config.seed,
        standardize=config.standardize)
    if scale_info is not None:
        doc["standardization"] = scale_info
    data_io.write_result_document(config.output_path, doc)
    return (EXIT_OK if fit.converged else EXIT_NO_CONVERGENCE), doc


def _cmd_simulate(args):
    scenario = simulate.table1_scenario(args.family, seed=args.seed, n_bad=args.n_bad)
    if args.box_margin is not None:
        scenario = simulate.Scenario(
            family=scenario.family, components=scenario.components,
            n_bad=scenario.n_bad, box_margin=args.box_margin, seed=args.seed)
    data = simulate.scenario_dataset(scenario)
    data_io.write_csv(args.out, data)
    print(f"wrote {data.n} x {data.p} dataset to {args.out}")
    return EXIT_OK


def _cmd_fit(args):
    config = RunConfig(
        family=args.family, input_path=args.input, output_path=args.out,
        g_min=args.g, g_max=args.g_max, label_col=args.label_col,
        bad_col=args.bad_col, standardize=args.standardize, seed=args.seed,
        n_starts=args.n_starts, max_iter=args.max_iter, tol=args.tol,
        eta_max=args.eta_max, lambda_lo=args.lambda_lo, init=args.init,
        n_qmc=args.n_qmc)
    code, doc = run_fit(config)
    msg = (f"family={doc['family']} G={doc['chosen_g']} "
           f"bic={doc['bic']:.3f} converged={doc['converged']}")
    if "ari" in doc:
        msg += f" ari={doc['ari']:.4f}"
    print(msg)
    return code


def _cmd_evaluate(args):
    doc = data_io.read_result_document(args.result)
    data = data_io.load_csv(args.input, label_col=args.label_col, bad_col=args.bad_col)
    if data.labels is None:
        raise ConfigError("evaluate requires --label-col")
    truth = data.truth_partition() if data.bad_truth is not None else data.labels
    hard = np.asarray(doc["hard_labels"], dtype=int)
    bad = np.asarray(doc["bad_flags"], dtype=bool)
    if hard.shape[0] != data.n:
        raise DataError("result document and dataset row counts disagree")
    predicted = partition_with_bad(hard, bad)
    out = {
        "ari": adjusted_rand_index(truth, predicted),
        "rand": rand_index(truth, predicted),
        "n_flagged_bad": int(bad.sum()),
    }
    if data.bad_truth is not None:
        tp = int(np.sum(bad & data.bad_truth))
        out["bad_precision"] = tp / max(int(bad.sum()), 1)
        out["bad_recall"] = tp / max(int(data.bad_truth.sum()), 1)
    text = json.dumps(out, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_grid(args):
    doc = data_io.read_result_document(args.result)
    model = data_io.model_from_doc(doc["model"])
    table = data_io.export_density_grid(model, (args.dims[0], args.dims[1]),
                                        (args.lo, args.hi, args.steps))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("x_i,x_j,density\n")
        for row in table:
            fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r}\n")
    print(f"wrote {table.shape[0]} grid rows to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="contamix",
                                     description="Robust clustering with contaminated "
                                                 "SAL and skew-normal mixtures")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a benchmark dataset")
    sim.add_argument("--family", required=True, choices=FAMILIES)
    sim.add_argument("--seed", required=True, type=int)
    sim.add_argument("--n-bad", type=int, default=20)
    sim.add_argument("--box-margin", type=float, default=None)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit a contaminated mixture")
    fit.add_argument("--family", required=True, choices=FAMILIES)
    fit.add_argument("--input", required=True)
    fit.add_argument("--out", required=True)
    fit.add_argument("--g", required=True, type=int)
    fit.add_argument("--g-max", type=int, default=None)
    fit.add_argument("--label-col", default=None)
    fit.add_argument("--bad-col", default=None)
    fit.add_argument("--standardize", action="store_true")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--n-starts", type=int, default=4)
    fit.add_argument("--max-iter", type=int, default=1000)
    fit.add_argument("--tol", type=float, default=1e-6)
    fit.add_argument("--eta-max", type=float, default=1000.0)
    fit.add_argument("--lambda-lo", type=float, default=0.5)
    fit.add_argument("--init", default="kmeans",
                     choices=["kmeans", "random_partition", "labels"])
    fit.add_argument("--n-qmc", type=int, default=2048)
    fit.set_defaults(func=_cmd_fit)

    ev = sub.add_parser("evaluate", help="score a result document against labels")
    ev.add_argument("--result", required=True)
    ev.add_argument("--input", required=True)
    ev.add_argument("--label-col", required=True)
    ev.add_argument("--bad-col", default=None)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=_cmd_evaluate)

    grid = sub.add_parser("grid", help="export a density grid for contouring")
    grid.add_argument("--result", required=True)
    grid.add_argument("--dims", required=True, type=int, nargs=2)
    grid.add_argument("--lo", required=True, type=float)
    grid.add_argument("--hi", required=True, type=float)
    grid.add_argument("--steps", required=True, type=int)
    grid.add_argument("--out", required=True)
    grid.set_defaults(func=_cmd_grid)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FitFailureError as exc:
        report = {"failure": "no start converged", "reasons": exc.reasons}
        print(json.dumps(report, indent=1), file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (ConfigError, ContamixError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
