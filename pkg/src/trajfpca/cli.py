"""Command-line entry point: ``trajfpca <subcommand> [options]``.

Every subcommand echoes its resolved configuration as one JSON line on
standard error. With ``--output DIR`` results are written there (atomically);
otherwise the primary result goes to standard output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .evaluate import future_prediction_rmse, gof_compare
from .inference import covariance_permutation_test, mean_permutation_test, standardize_trajectories
from .io import DataError, cohort_csv, csv_text, dumps_json, ingest_csv, write_text_atomic
from .pace import FitConfig, FpcaModel, fit, predict_curves
from .simulate import simulate_groups, specs_from_dict

__all__ = ["RunConfig", "build_parser", "ingest_csv", "main"]


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on besides the input data."""

    command: str
    grid_points: int = 51
    fve_threshold: float = 0.95
    bandwidth_mean: str = "auto"
    bandwidth_cov: str = "auto"
    permutations: int = 1000
    folds: int = 5
    repeats: int = 100
    seed: int = 0
    input: Optional[str] = None
    output: Optional[str] = None
    group_col: str = "group"
    model: Optional[str] = None
    spec: Optional[str] = None

    def __post_init__(self):
        if self.permutations < 1:
            raise ValueError("--permutations must be at least 1")
        if self.repeats < 1:
            raise ValueError("--repeats must be at least 1")
        if self.folds < 2:
            raise ValueError("--folds must be at least 2")
        self.fit_config()

    def fit_config(self) -> FitConfig:
        return FitConfig(
            grid_points=self.grid_points,
            fve_threshold=self.fve_threshold,
            bandwidth_mean=self.bandwidth_mean,
            bandwidth_cov=self.bandwidth_cov,
            seed=self.seed,
        )

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        return cls(
            command=args.command,
            grid_points=args.grid_points,
            fve_threshold=args.fve,
            bandwidth_mean=args.bandwidth_mean,
            bandwidth_cov=args.bandwidth_cov,
            permutations=args.permutations,
            folds=args.folds,
            repeats=args.repeats,
            seed=args.seed,
            input=args.input,
            output=args.output,
            group_col=args.group_col,
            model=getattr(args, "model", None),
            spec=getattr(args, "spec", None),
        )


class Outputs:
    """Collects named output files; the first one is the primary result."""

    def __init__(self, directory: Optional[str]):
        self.directory = None if directory is None else Path(directory)
        self.files = []

    def add(self, name: str, text: str):
        self.files.append((name, text))

    def flush(self, stdout):
        if self.directory is None:
            stdout.write(self.files[0][1])
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        for name, text in self.files:
            write_text_atomic(self.directory / name, text)


def _load(cfg: RunConfig):
    if cfg.input is None:
        raise ValueError("--input is required")
    return ingest_csv(cfg.input, cfg.group_col)


def _require_groups(samples):
    labels = {s.group for s in samples}
    if None in labels or len(labels) < 2:
        raise ValueError("need at least 2 groups")


def _scores_rows(model: FpcaModel):
    for sid, group, xi in zip(model.subject_ids, model.groups, model.scores):
        yield [sid, "" if group is None else group] + [float(v) for v in xi]


def cmd_fit(cfg: RunConfig, out: Outputs):
    model = fit(_load(cfg), cfg.fit_config())
    t = model.grid.points
    k = range(1, model.K + 1)
    out.add("model.json", dumps_json(model.to_dict()))
    out.add("mean.csv", csv_text(["time", "mean"], zip(t.tolist(), model.mean.tolist())))
    out.add("eigenfunctions.csv", csv_text(["time"] + [f"phi{j}" for j in k], np.column_stack([t, model.eigenfunctions.T]).tolist()))
    out.add("scores.csv", csv_text(["id", "group"] + [f"xi{j}" for j in k], _scores_rows(model)))
    out.add("fve.csv", csv_text(["k", "eigenvalue", "fve"], ([j, float(v), float(f)] for j, v, f in zip(k, model.eigenvalues, model.fve))))


def cmd_predict(cfg: RunConfig, out: Outputs):
    if cfg.model is None:
        raise ValueError("--model is required")
    with open(cfg.model, encoding="utf-8") as fh:
        model = FpcaModel.from_dict(json.load(fh))
    curves = predict_curves(model, _load(cfg))
    t = model.grid.points.tolist()
    rows = (
        [sid, "" if g is None else g, ti, float(v)]
        for sid, g, row in zip(curves.subject_ids, curves.groups, curves.values)
        for ti, v in zip(t, row)
    )
    out.add("predictions.csv", csv_text(["id", "group", "time", "predicted"], rows))


def _fitted_groups(cfg: RunConfig):
    samples = _load(cfg)
    _require_groups(samples)
    model = fit(samples, cfg.fit_config())
    return model, model.fitted_curves()


def cmd_test_mean(cfg: RunConfig, out: Outputs):
    _, curves = _fitted_groups(cfg)
    result = mean_permutation_test(curves, cfg.permutations, cfg.seed)
    groups = np.array(curves.groups, dtype=object)
    t = curves.grid.points.tolist()
    rows = []
    for g in curves.group_labels():
        means = curves.values[groups == g].mean(axis=0)
        rows.extend([g, ti, float(v)] for ti, v in zip(t, means))
    out.add("test_mean.json", dumps_json(result.to_dict()))
    out.add("group_means.csv", csv_text(["group", "time", "mean"], rows))


def cmd_test_cov(cfg: RunConfig, out: Outputs):
    model, curves = _fitted_groups(cfg)
    result = covariance_permutation_test(standardize_trajectories(curves, model), cfg.permutations, cfg.seed)
    out.add("test_cov.json", dumps_json(result.to_dict()))


def cmd_gof(cfg: RunConfig, out: Outputs):
    samples = _load(cfg)
    _require_groups(samples)
    result = gof_compare(samples, cfg.repeats, cfg.folds, cfg.seed, cfg.fit_config())
    rows = ([r["repeat"], r["model_scope"], r["eval_group"], r["root_macse"]] for r in result.tidy_rows())
    out.add("gof.json", dumps_json(result.to_dict()))
    out.add("gof.csv", csv_text(["repeat", "model_scope", "eval_group", "root_macse"], rows))


def cmd_future_acc(cfg: RunConfig, out: Outputs):
    samples = _load(cfg)
    _require_groups(samples)
    result = future_prediction_rmse(samples, cfg.fit_config())
    rows = ([r["model_scope"], r["eval_group"], r["root_mse"]] for r in result.tidy_rows())
    out.add("future_acc.json", dumps_json(result.to_dict()))
    out.add("future_acc.csv", csv_text(["model_scope", "eval_group", "root_mse"], rows))


def cmd_simulate(cfg: RunConfig, out: Outputs):
    if cfg.spec is None:
        raise ValueError("--spec is required")
    with open(cfg.spec, encoding="utf-8") as fh:
        specs = specs_from_dict(json.load(fh))
    out.add("cohort.csv", cohort_csv(simulate_groups(specs, cfg.seed), cfg.group_col))


COMMANDS = {
    "fit": (cmd_fit, "fit the FPCA model; writes model JSON and mean, eigenfunction, score and FVE tables"),
    "predict": (cmd_predict, "predict trajectories of new subjects from a saved model"),
    "test-mean": (cmd_test_mean, "permutation test for equal group mean functions"),
    "test-cov": (cmd_test_cov, "permutation test for equal group correlation functions"),
    "gof": (cmd_gof, "repeated cross-validated root MACSE, full-cohort versus group models"),
    "future-acc": (cmd_future_acc, "root MSE of latest-observation predictions"),
    "simulate": (cmd_simulate, "draw a cohort from a JSON simulation spec"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="cohort CSV with columns id,time,value[,group]")
    common.add_argument("--output", help="output directory (default: primary result to stdout)")
    common.add_argument("--grid-points", type=int, default=51)
    common.add_argument("--fve", type=float, default=0.95, help="fraction of variance explained threshold")
    common.add_argument("--bandwidth-mean", default="auto", help="'auto' or a bandwidth in time units")
    common.add_argument("--bandwidth-cov", default="auto", help="'auto' or a bandwidth in time units")
    common.add_argument("--permutations", type=int, default=1000, help="permutation replicates B")
    common.add_argument("--folds", type=int, default=5)
    common.add_argument("--repeats", type=int, default=100)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--group-col", default="group", help="name of the group column")

    parser = argparse.ArgumentParser(prog="trajfpca", description="Functional PCA for sparse longitudinal trajectories.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "predict":
            p.add_argument("--model", required=True, help="model JSON written by 'fit'")
        if name == "simulate":
            p.add_argument("--spec", required=True, help="JSON simulation spec")
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    logging.basicConfig(level=logging.WARNING, format="trajfpca: %(levelname)s: %(message)s", stream=stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_args(args)
        stderr.write("run config: " + json.dumps(asdict(cfg), sort_keys=True) + "\n")
        out = Outputs(cfg.output)
        COMMANDS[cfg.command][0](cfg, out)
        out.flush(stdout)
    except BrokenPipeError:
        # downstream reader closed early, e.g. `| head`
        return 1
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        stderr.write(f"trajfpca: error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
