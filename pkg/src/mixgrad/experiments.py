"""Config-driven simulation experiments and their CSV reports.

Seeding: every (sweep cell, replication) pair gets the stream
``SeedSequence(master_seed, spawn_key=(crc32(cell_label), replication))``,
spawned into four children used for data, feature frequencies, CV folds and
MSE test points.  Cells are therefore reproducible on their own and results
do not depend on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .estimator import FitConfig, MixedDataset, default_weights, fit, replicate_weights
from .kernels import Family, KernelSpec
from .ridge import default_lambda_grid
from .sim import BS_BOX, COST_BOX, BsConfig, bs_truth, cost_truth, gen_bs_dataset, gen_cost_dataset, mse_eval

__all__ = [
    "EXPERIMENTS",
    "EstimatorConfig",
    "ExperimentConfig",
    "ExperimentReport",
    "RateReport",
    "ExperimentError",
    "select_tau",
    "run_experiment",
    "rate_study",
    "emit_report",
    "aggregate",
    "rate_truth",
    "rate_truth_grad",
    "gen_rate_dataset",
    "config_from_dict",
    "load_config_file",
    "fit_file",
    "eval_model",
    "REFERENCES",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("black_scholes", "cobb_douglas", "synthetic_rate")
RESULT_COLUMNS = ["experiment", "n", "q", "rho", "p", "replication", "tau", "lambda", "mse", "se"]
AGGREGATE_COLUMNS = ["experiment", "n", "q", "rho", "p", "replications", "mean_mse", "se_mse", "ratio_to_p0"]


class ExperimentError(RuntimeError):
    """An error inside one sweep cell, with the cell attached."""


@dataclass(frozen=True)
class EstimatorConfig:
    r: Optional[int] = None  # None: full interaction, r = d
    s: int = 8
    kernel: str = "matern52"
    tau_grid: tuple = tuple(np.geomspace(0.1, 5.0, 8))
    cv_folds: int = 5
    lambda_grid: tuple = tuple(default_lambda_grid())
    weights: object = "auto"  # "auto" | "replicate" | "difference" | list of floats

    def __post_init__(self):
        Family(self.kernel)
        if self.s < 1 or self.cv_folds < 2 or not self.tau_grid:
            raise ValueError("estimator needs s >= 1, cv_folds >= 2 and a non-empty tau grid")
        object.__setattr__(self, "tau_grid", tuple(float(x) for x in self.tau_grid))
        object.__setattr__(self, "lambda_grid", tuple(float(x) for x in self.lambda_grid))
        if isinstance(self.weights, str):
            if self.weights not in ("auto", "replicate", "difference"):
                raise ValueError(f"unknown weights mode {self.weights!r}")
        else:
            object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    sweep: dict = field(default_factory=dict)
    p_levels: tuple = (0, 1, 2, 3)
    replications: int = 30
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    n_test: int = 10_000
    noise_sd: float = 0.35  # cobb_douglas and synthetic_rate
    tau: Optional[float] = None  # synthetic_rate: fixed tau instead of CV
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.p_levels:
            raise ValueError("p_levels must be non-empty")
        object.__setattr__(self, "p_levels", tuple(int(p) for p in self.p_levels))
        limit = {"black_scholes": 3, "cobb_douglas": 2, "synthetic_rate": 1}[self.experiment]
        if min(self.p_levels) < 0 or max(self.p_levels) > limit:
            raise ValueError(f"{self.experiment} supports p in [0, {limit}]")
        sweep = {k: tuple(v) if isinstance(v, (list, tuple)) else (v,) for k, v in dict(self.sweep).items()}
        defaults = {
            "black_scholes": {"grid": (7,), "q": (1000,)},
            "cobb_douglas": {"n": (500,), "rho": (0.0,)},
            "synthetic_rate": {"n": (50, 100, 200, 400)},
        }[self.experiment]
        unknown = set(sweep) - set(defaults)
        if unknown:
            raise ValueError(f"unknown sweep keys for {self.experiment}: {sorted(unknown)}")
        sweep = {**defaults, **sweep}
        if self.experiment == "black_scholes":
            if min(sweep["grid"]) < 2 or min(sweep["q"]) < 1:
                raise ValueError("black_scholes needs grid >= 2 and q >= 1")
        elif min(sweep["n"]) < 10:
            raise ValueError("sample sizes must be >= 10")
        if self.experiment == "cobb_douglas" and any(not -0.5 <= r <= 1 for r in sweep["rho"]):
            raise ValueError("rho must lie in [-0.5, 1] for a PSD equicorrelation")
        object.__setattr__(self, "sweep", sweep)
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def cells(self) -> list:
        sw = self.sweep
        if self.experiment == "black_scholes":
            return [{"n": g**3, "grid": g, "q": q, "rho": ""} for g in sw["grid"] for q in sw["q"]]
        if self.experiment == "cobb_douglas":
            return [{"n": n, "q": "", "rho": float(r)} for n in sw["n"] for r in sw["rho"]]
        return [{"n": n, "q": "", "rho": ""} for n in sw["n"]]


def _cell_label(experiment: str, cell: dict) -> str:
    return f"{experiment}|n={cell['n']}|q={cell['q']}|rho={cell['rho']}"


def replication_streams(master_seed: int, experiment: str, cell: dict, rep: int) -> list:
    key = zlib.crc32(_cell_label(experiment, cell).encode())
    return np.random.SeedSequence(int(master_seed), spawn_key=(key, int(rep))).spawn(4)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# synthetic truth for the rate study
# ---------------------------------------------------------------------------


RATE_FREQS = np.arange(1, 51)
RATE_AMPS = RATE_FREQS ** -4.0  # sum k^6 a_k^2 < inf, so the truth lies in H^3
RATE_PHASES = RATE_FREQS.astype(float)


def rate_truth(t):
    """``sum_k k^-4 sin(2 pi k x + k)`` on [0, 1]: in the Matern-5/2 RKHS
    without being a finite trigonometric polynomial."""
    x = np.asarray(t, dtype=float)[..., 0]
    return np.sin(2 * np.pi * np.multiply.outer(x, RATE_FREQS) + RATE_PHASES) @ RATE_AMPS


def rate_truth_grad(t):
    x = np.asarray(t, dtype=float)[..., 0]
    return np.cos(2 * np.pi * np.multiply.outer(x, RATE_FREQS) + RATE_PHASES) @ (2 * np.pi * RATE_FREQS * RATE_AMPS)


def gen_rate_dataset(n: int, sd: float, seed) -> MixedDataset:
    rng = np.random.default_rng(seed)
    t = rng.uniform(size=(n, 1))
    t1 = rng.uniform(size=(n, 1))
    y0 = rate_truth(t) + sd * rng.standard_normal(n)
    y1 = rate_truth_grad(t1) + sd * rng.standard_normal(n)
    return MixedDataset(t, y0, grad_t=(t1,), grad_y=(y1,), noise_var=(sd**2, sd**2))


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------


def _weights(dataset: MixedDataset, mode):
    if dataset.p == 0:
        return ()
    if isinstance(mode, tuple):
        if len(mode) < dataset.p:
            raise ValueError(f"need {dataset.p} weights, config lists {len(mode)}")
        return mode[: dataset.p]
    if mode == "replicate" or (mode == "auto" and dataset.noise_var is not None):
        return replicate_weights(dataset)
    return default_weights(dataset)


def _fit_config(est: EstimatorConfig, d: int, tau: float, seed: int, weights=None) -> FitConfig:
    return FitConfig(
        r=est.r if est.r is not None else d,
        s=est.s,
        kernel=KernelSpec(est.kernel, tau),
        seed=seed,
        weights=weights,
        lambda_grid=est.lambda_grid,
    )


def select_tau(dataset: MixedDataset, est: EstimatorConfig, feature_seed: int, fold_seed) -> tuple:
    """K-fold CV of the function-only fit over ``est.tau_grid``.

    Each fold fit tunes lambda by GCV on its training part; the score is the
    mean squared prediction error on held-out function values.
    """
    n = dataset.func_y.size
    folds = np.array_split(np.random.default_rng(fold_seed).permutation(n), est.cv_folds)
    scores = []
    for tau in est.tau_grid:
        cfg = _fit_config(est, dataset.d, tau, feature_seed)
        err = 0.0
        for k, held in enumerate(folds):
            train = np.concatenate([f for i, f in enumerate(folds) if i != k])
            model = fit(dataset.subset_function(train), cfg)
            err += float(np.sum((model.predict(dataset.func_t[held]) - dataset.func_y[held]) ** 2))
        scores.append(err / n)
    best = int(np.argmin(scores))
    return est.tau_grid[best], scores


def _generate(config: ExperimentConfig, cell: dict, seed) -> tuple:
    if config.experiment == "black_scholes":
        ds = gen_bs_dataset(BsConfig(grid=cell["grid"], q=cell["q"], seed=seed))
        return ds, bs_truth, BS_BOX
    if config.experiment == "cobb_douglas":
        ds = gen_cost_dataset(cell["n"], cell["rho"], seed, sd=config.noise_sd)
        return ds, cost_truth, COST_BOX
    ds = gen_rate_dataset(cell["n"], config.noise_sd, seed)
    return ds, rate_truth, np.array([[0.0, 1.0]])


def run_replication(config: ExperimentConfig, cell: dict, rep: int) -> tuple:
    """Rows and GCV curves for every p-level of one replication."""
    data_ss, feat_ss, fold_ss, test_ss = replication_streams(config.seed, config.experiment, cell, rep)
    feature_seed = _int_seed(feat_ss)
    test_seed = _int_seed(test_ss)
    try:
        dataset, truth, box = _generate(config, cell, data_ss)
        if config.tau is not None:
            tau = float(config.tau)
        else:
            tau, _ = select_tau(dataset.function_only(), config.estimator, feature_seed, fold_ss)
        rows, curves = [], []
        for p in config.p_levels:
            ds = dataset.truncate(p)
            cfg = _fit_config(config.estimator, ds.d, tau, feature_seed, _weights(ds, config.estimator.weights))
            model = fit(ds, cfg)
            mse, se = mse_eval(model, truth, box, config.n_test, test_seed)
            rows.append(
                {
                    "experiment": config.experiment,
                    "n": cell["n"],
                    "q": cell["q"],
                    "rho": cell["rho"],
                    "p": p,
                    "replication": rep,
                    "tau": tau,
                    "lambda": model.lam,
                    "mse": mse,
                    "se": se,
                }
            )
            curves.append(model.gcv_curve)
    except Exception as exc:
        raise ExperimentError(f"[{_cell_label(config.experiment, cell)} rep={rep}] {exc}") from exc
    return rows, curves


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    curves: list = field(default_factory=list)  # parallel to rows: (L, 2) arrays

    def aggregate_for(self, p: int, **cell) -> Optional[dict]:
        for a in self.aggregates:
            if a["p"] == p and all(a[k] == v for k, v in cell.items()):
                return a
        return None


def aggregate(rows: list) -> list:
    """Mean MSE, its standard error and ratio to the p = 0 mean, per
    (experiment, n, q, rho, p), in first-appearance order."""
    groups = {}
    for row in rows:
        key = (row["experiment"], row["n"], row["q"], row["rho"], row["p"])
        groups.setdefault(key, []).append(row["mse"])
    out = []
    for key, vals in groups.items():
        vals = np.array(vals)
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else float("nan")
        out.append(dict(zip(AGGREGATE_COLUMNS[:5], key), replications=vals.size, mean_mse=float(vals.mean()), se_mse=se))
    means = {tuple(a[k] for k in AGGREGATE_COLUMNS[:4]): a["mean_mse"] for a in out if a["p"] == 0}
    for a in out:
        base = means.get(tuple(a[k] for k in AGGREGATE_COLUMNS[:4]))
        a["ratio_to_p0"] = a["mean_mse"] / base if base else ""
    return out


def _map(func, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [func(*t) for t in tasks]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=threads)(delayed(func)(*t) for t in tasks)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every sweep cell and replication, then aggregate."""
    tasks = [(config, cell, rep) for cell in config.cells() for rep in range(config.replications)]
    log.info("running %d replications of %s", len(tasks), config.experiment)
    results = _map(run_replication, tasks, config.threads)
    report = ExperimentReport()
    for rows, curves in results:
        report.rows.extend(rows)
        report.curves.extend(curves)
    report.aggregates = aggregate(report.rows)
    return report


@dataclass
class RateReport:
    report: ExperimentReport
    slopes: dict  # p -> least-squares slope of log mean-MSE on log n


def rate_study(config: ExperimentConfig) -> RateReport:
    """Mean MSE across the ``n`` sweep per p-level and its log-log slope."""
    if config.experiment != "synthetic_rate":
        raise ValueError("rate_study needs the synthetic_rate experiment")
    report = run_experiment(config)
    slopes = {}
    for p in config.p_levels:
        aggs = [a for a in report.aggregates if a["p"] == p]
        n = np.array([a["n"] for a in aggs], dtype=float)
        m = np.array([a["mean_mse"] for a in aggs])
        slopes[p] = float(np.polyfit(np.log(n), np.log(m), 1)[0]) if n.size >= 2 else float("nan")
    return RateReport(report, slopes)


def _cell_text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns: list, rows: list) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell_text(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_report(report: ExperimentReport, directory, slopes: Optional[dict] = None) -> list:
    """Write ``results.csv``, ``aggregates.csv`` and ``curves/*.csv`` (plus
    ``slopes.csv`` for a rate study).  Returns the written paths."""
    out = Path(directory)
    curves_dir = out / "curves"
    try:
        curves_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {curves_dir}: {exc.strerror or exc}") from exc
    written = [out / "results.csv", out / "aggregates.csv"]
    _write_csv(written[0], RESULT_COLUMNS, report.rows)
    _write_csv(written[1], AGGREGATE_COLUMNS, report.aggregates)
    for row, curve in zip(report.rows, report.curves):
        if curve is None:
            continue
        name = f"{row['experiment']}_n{row['n']}_q{row['q']}_rho{row['rho']}_p{row['p']}_rep{row['replication']}.csv"
        path = curves_dir / name
        _write_csv(path, ["lambda", "gcv"], [{"lambda": float(a), "gcv": float(b)} for a, b in curve])
        written.append(path)
    if slopes is not None:
        path = out / "slopes.csv"
        _write_csv(path, ["p", "slope"], [{"p": p, "slope": s} for p, s in slopes.items()])
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

# estimator settings that differ by experiment when the file leaves them out
_ESTIMATOR_DEFAULTS = {
    "black_scholes": {"s": 8},
    "cobb_douglas": {"s": 8},
    "synthetic_rate": {"s": 256},
}
_TOP_KEYS = {"experiment", "sweep", "p_levels", "replications", "seed", "estimator", "n_test", "noise_sd", "tau", "threads", "output", "reference", "model", "data"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed config document.

    Unknown keys are rejected so typos do not silently fall back to
    defaults.  ``synthetic_rate`` runs with a fixed ``tau = 0.5`` unless the
    file sets one.
    """
    raw = dict(raw)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "experiment" not in raw:
        raise ValueError("config needs an 'experiment' key")
    kind = raw["experiment"]
    if kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {kind!r}; choose from {EXPERIMENTS}")
    est_raw = {**_ESTIMATOR_DEFAULTS[kind], **dict(raw.get("estimator", {}))}
    bad = set(est_raw) - {f for f in EstimatorConfig.__dataclass_fields__}
    if bad:
        raise ValueError(f"unknown estimator keys: {sorted(bad)}")
    kwargs = {k: raw[k] for k in ("sweep", "p_levels", "replications", "seed", "n_test", "noise_sd", "tau", "threads") if k in raw}
    if kind == "synthetic_rate":
        kwargs.setdefault("tau", 0.5)
        kwargs.setdefault("replications", 100)
        kwargs.setdefault("p_levels", (0, 1))
    if kind == "cobb_douglas":
        kwargs.setdefault("p_levels", (0, 2))
    return ExperimentConfig(experiment=kind, estimator=EstimatorConfig(**est_raw), **kwargs)


def load_config_file(path) -> tuple:
    """Parse a TOML config; returns ``(ExperimentConfig or None, raw dict)``.

    The experiment section is optional for ``fit`` and ``eval`` use.
    """
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = config_from_dict(raw) if "experiment" in raw else None
    return cfg, raw


# ---------------------------------------------------------------------------
# external datasets
# ---------------------------------------------------------------------------

REFERENCES = {
    "black_scholes": (bs_truth, BS_BOX),
    "cobb_douglas": (cost_truth, COST_BOX),
    "synthetic_rate": (rate_truth, np.array([[0.0, 1.0]])),
}


def _model_settings(raw: dict) -> dict:
    m = dict(raw.get("model", {}))
    unknown = set(m) - {"r", "s", "kernel", "tau", "seed", "weights", "lambda", "p", "box"}
    if unknown:
        raise ValueError(f"unknown [model] keys: {sorted(unknown)}")
    return m


def fit_file(data_path, raw: dict, model_path, seed: Optional[int] = None) -> dict:
    """Fit a dataset CSV with the ``[model]`` settings of a config document
    and write the model export.  Returns a summary dict."""
    from .io import read_dataset_csv, save_model

    m = _model_settings(raw)
    box = np.asarray(m["box"], dtype=float) if "box" in m else None
    dataset = read_dataset_csv(data_path, p=m.get("p"), box=box)
    weights = m.get("weights", "auto")
    if isinstance(weights, str):
        if weights not in ("auto", "difference"):
            raise ValueError("[model] weights must be 'auto', 'difference' or a list")
        weights = _weights(dataset, weights) if dataset.p else ()
    lam = m.get("lambda", "gcv")
    cfg = FitConfig(
        r=int(m.get("r", dataset.d)),
        s=int(m.get("s", 8)),
        kernel=KernelSpec(m.get("kernel", "matern52"), float(m.get("tau", 1.0))),
        seed=int(seed if seed is not None else m.get("seed", 0)),
        weights=tuple(weights),
        lam=lam if lam == "gcv" else float(lam),
    )
    model = fit(dataset, cfg)
    save_model(model, model_path)
    resid = model.predict(dataset.func_t) - dataset.func_y
    summary = {
        "d": dataset.d,
        "p": dataset.p,
        "rows": dataset.n_rows,
        "lambda": model.lam,
        "weights": [float(w) for w in model.weights],
        "function_rmse": float(np.sqrt(np.mean(resid**2))),
    }
    for j in range(dataset.p):
        r = model.predict_grad(dataset.grad_t[j], j) - dataset.grad_y[j]
        summary[f"grad{j + 1}_rmse"] = float(np.sqrt(np.mean(r**2)))
    return summary


def eval_model(model_path, raw: dict, seed: Optional[int] = None) -> dict:
    """MSE of a saved model against the reference named by ``reference``."""
    from .io import load_model

    name = raw.get("reference")
    if name not in REFERENCES:
        raise ValueError(f"config 'reference' must be one of {sorted(REFERENCES)}")
    truth, box = REFERENCES[name]
    model = load_model(model_path)
    if model.feature_map.d != box.shape[0]:
        raise ValueError(f"model has d={model.feature_map.d}; reference {name} has d={box.shape[0]}")
    n_test = int(raw.get("n_test", 10_000))
    mse, se = mse_eval(model, truth, box, n_test, int(seed if seed is not None else raw.get("seed", 0)))
    return {"reference": name, "n_test": n_test, "mse": mse, "se": se}
