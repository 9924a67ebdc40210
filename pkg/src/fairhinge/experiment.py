"""End-to-end experiment orchestration: folds, variants, sweeps, reports.

Per fold: train local predictors and similarity graphs on the train split,
ground the variant's model over the test pairs, apply the enabled fairness
regularizers at the configured strength, solve, and score RMSE plus both
unfairness metrics. Reports carry per-fold values and mean/SD aggregates.

Metrics are reported on the original 1-5 rating scale by default
(predictions and truth are mapped back before scoring), which is the scale
typically used when quoting RMSE and unfairness magnitudes for this
dataset; set ``metrics_on_rating_scale`` to false for normalized-scale
metrics.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataio import (
    Dataset,
    denormalize,
    derive_groups,
    load_dataset_csv,
    make_folds,
    normalize,
    parse_movielens,
    preprocess,
)
from .errors import ConfigError, DataError
from .fairness import (
    GroupAssignment,
    ObservedItemEstimates,
    build_nonparity_regularizer,
    build_value_regularizer,
    load_groups,
    non_parity,
    observed_item_estimates,
    value_unfairness,
)
from .grounding import build_atoms, ground_prior_rules, target_variables
from .model import GroundModel
from .predictors import PredictorOutput, load_predictions, predict as predict_factors, train_nmf
from .recommender import FairHybridRecommender
from .solver import SolverConfig, Solution, solve

log = logging.getLogger(__name__)

VARIANTS = ("base", "np", "val", "np_val", "retrofit_np", "retrofit_val")
RETROFIT_VARIANTS = ("retrofit_np", "retrofit_val")

DEFAULT_WF_SWEEP = (0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0)

CSV_HEADER = "variant,w_f,fold,rmse,u_par,u_val"


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    rmse: float
    u_par: float
    u_val: float
    converged: bool = True


@dataclass(frozen=True)
class MetricsReport:
    variant: str
    w_f: float
    folds: tuple
    mean: dict
    sd: dict | None
    config_hash: str
    config: dict
    runtime_s: float = 0.0

    @property
    def all_converged(self) -> bool:
        return all(f.converged for f in self.folds)


def _aggregate(fold_metrics) -> tuple[dict, dict | None]:
    def col(name):
        return np.array([getattr(f, name) for f in fold_metrics], dtype=float)

    mean = {name: float(np.mean(col(name))) for name in ("rmse", "u_par", "u_val")}
    if len(fold_metrics) >= 2:
        sd = {name: float(np.std(col(name), ddof=1)) for name in ("rmse", "u_par", "u_val")}
    else:
        sd = None
    return mean, sd


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "base"
    data_dir: str | None = None
    dataset_cache: str | None = None
    predictions_path: str | None = None
    groups_path: str | None = None
    observed_path: str | None = None
    truth_path: str | None = None
    w_f: float = 1.0
    w_f_np: float | None = None
    w_f_val: float | None = None
    wf_list: tuple | None = None
    rule_weights: dict = field(default_factory=dict)
    prior_weight: float = 1.0
    n_folds: int = 5
    fold_ids: tuple | None = None
    seed: int = 42
    k_neighbors: int = 25
    min_overlap: int = 5
    demo_min_overlap: int = 1
    nmf_rank: int = 8
    svd_rank: int = 8
    factor_iters: int = 500
    include_observed_in_averages: bool = False
    apply_preprocess: bool = True
    metrics_on_rating_scale: bool = True
    solver: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.w_f < 0:
            raise ConfigError("w_f must be >= 0")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("wf_list", "fold_ids"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("wf_list", "fold_ids"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def solver_config(self, init_value: float | None = None) -> SolverConfig:
        kwargs = dict(self.solver)
        if init_value is not None:
            kwargs["init_value"] = init_value
        return SolverConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(data)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_cache:
        ds = load_dataset_csv(cfg.dataset_cache)
    elif cfg.data_dir:
        ds = parse_movielens(cfg.data_dir)
    else:
        raise ConfigError("config needs data_dir or dataset_cache")
    if cfg.apply_preprocess:
        ds = preprocess(ds)
    if not ds.ratings:
        raise DataError("dataset has no ratings after preprocessing")
    return ds


def retrofit_predictions(
    base_values: dict,
    groups: GroupAssignment,
    fairness: str,
    w_f: float,
    prior_weight: float = 1.0,
    estimates: ObservedItemEstimates | None = None,
    solver_cfg: SolverConfig | None = None,
) -> tuple[dict, Solution, GroundModel]:
    """Re-solve black-box predictions under one fairness regularizer.

    The model contains only a squared pull of every target toward its input
    prediction plus the requested fairness family ("np" or "val"); no
    similarity or mean-centering rules.
    """
    if fairness not in ("np", "val"):
        raise ConfigError(f"retrofit fairness must be 'np' or 'val', got {fairness!r}")
    atoms = build_atoms({}, base_values.keys())
    prior = PredictorOutput(name="input", values=dict(base_values))
    potentials = tuple(ground_prior_rules(prior, atoms, prior_weight))
    model = GroundModel(variables=target_variables(atoms), potentials=potentials)
    if fairness == "np":
        model = build_nonparity_regularizer(model, atoms, groups, w_f)
    else:
        if estimates is None or not estimates.per_item:
            raise ConfigError("value retrofit needs observed item estimates")
        model = build_value_regularizer(model, atoms, groups, estimates, w_f)
    if solver_cfg is None:
        solver_cfg = SolverConfig()
    if solver_cfg.init_value is None:
        init = float(np.mean(list(base_values.values())))
        solver_cfg = replace(solver_cfg, init_value=init)
    solution = solve(model, solver_cfg)
    out = {pair: float(solution.y[idx]) for pair, idx in atoms.targets.items()}
    return out, solution, model


def _score(pred_map: dict, truth_norm: dict, groups, on_rating_scale: bool):
    """RMSE plus both unfairness metrics for one fold's predictions."""
    if on_rating_scale:
        pred = {k: denormalize(v) for k, v in pred_map.items()}
        truth = {k: denormalize(v) for k, v in truth_norm.items()}
    else:
        pred = dict(pred_map)
        truth = dict(truth_norm)
    err = np.array([pred[k] - truth[k] for k in pred])
    rmse = float(np.sqrt(np.mean(err**2)))
    return rmse, non_parity(pred, groups), value_unfairness(pred, truth, groups)


def _fold_test_data(ds: Dataset, fold):
    pairs = []
    truth = {}
    for j in fold.test:
        r = ds.ratings[j]
        pair = (r.user, r.item)
        pairs.append(pair)
        truth[pair] = normalize(r.value)
    return sorted(set(pairs)), truth


def _run_fold(ds: Dataset, groups: GroupAssignment, fold, cfg: ExperimentConfig, wf_values):
    """All requested w_f values for one fold; heavy training happens once."""
    train = ds.ratings_array(fold.train)
    if train.shape[0] == 0:
        raise DataError(f"fold {fold.fold_id} has an empty training split")
    test_pairs, truth = _fold_test_data(ds, fold)
    results = []

    if cfg.variant in RETROFIT_VARIANTS:
        if cfg.predictions_path:
            loaded = load_predictions(cfg.predictions_path)
            missing = [p for p in test_pairs if p not in loaded.values]
            if missing:
                raise DataError(
                    f"predictions file misses {len(missing)} fold-{fold.fold_id} test pairs"
                )
            base_values = {p: loaded.values[p] for p in test_pairs}
        else:
            nmf = train_nmf(train, rank=cfg.nmf_rank, iters=cfg.factor_iters, seed=cfg.seed)
            base_values = predict_factors(nmf, test_pairs).values
        observed_norm = {(int(u), int(i)): normalize(v) for u, i, v in train}
        estimates = observed_item_estimates(observed_norm, groups)
        fairness = "np" if cfg.variant == "retrofit_np" else "val"
        for w_f in wf_values:
            pred_map, solution, _ = retrofit_predictions(
                base_values,
                groups,
                fairness,
                w_f,
                prior_weight=cfg.prior_weight,
                estimates=estimates,
                solver_cfg=cfg.solver_config(
                    init_value=float(np.mean(list(base_values.values())))
                ),
            )
            rmse, u_par, u_val = _score(pred_map, truth, groups, cfg.metrics_on_rating_scale)
            results.append(
                (w_f, FoldMetrics(fold.fold_id, rmse, u_par, u_val, solution.converged))
            )
        return results

    rec = FairHybridRecommender(
        variant=cfg.variant,
        w_f=cfg.w_f,
        w_f_np=cfg.w_f_np,
        w_f_val=cfg.w_f_val,
        rule_weights=cfg.rule_weights or None,
        k_neighbors=cfg.k_neighbors,
        min_overlap=cfg.min_overlap,
        demo_min_overlap=cfg.demo_min_overlap,
        nmf_rank=cfg.nmf_rank,
        svd_rank=cfg.svd_rank,
        factor_iters=cfg.factor_iters,
        include_observed_in_averages=cfg.include_observed_in_averages,
        seed=cfg.seed,
        **{
            k: v
            for k, v in cfg.solver.items()
            if k in ("tol_obj", "tol_feas", "max_iter", "step_rule", "step_init", "window")
        },
    )
    rec.fit(train, users=ds.users, movies=ds.movies, groups=groups)
    for w_f in wf_values:
        rec.set_params(w_f=w_f)
        pred_map = rec.predict_map(test_pairs)
        rmse, u_par, u_val = _score(pred_map, truth, groups, cfg.metrics_on_rating_scale)
        results.append(
            (w_f, FoldMetrics(fold.fold_id, rmse, u_par, u_val, rec.solution_.converged))
        )
    return results


def _fold_worker(args):
    return _run_fold(*args)


def _selected_folds(ds: Dataset, cfg: ExperimentConfig):
    folds = make_folds(ds, k=cfg.n_folds, seed=cfg.seed)
    if cfg.fold_ids is None:
        return folds
    by_id = {f.fold_id: f for f in folds}
    missing = [fid for fid in cfg.fold_ids if fid not in by_id]
    if missing:
        raise ConfigError(f"fold ids {missing} out of range 1..{cfg.n_folds}")
    return [by_id[fid] for fid in cfg.fold_ids]


def _run(cfg: ExperimentConfig, wf_values, dataset: Dataset | None = None) -> list[MetricsReport]:
    start = time.perf_counter()
    ds = dataset if dataset is not None else load_dataset(cfg)
    if cfg.groups_path:
        groups = load_groups(cfg.groups_path)
    else:
        groups = derive_groups(ds)
    folds = _selected_folds(ds, cfg)

    jobs = min(cfg.jobs, len(folds))
    tasks = [(ds, groups, fold, cfg, tuple(wf_values)) for fold in folds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_fold = list(pool.map(_fold_worker, tasks))
    else:
        per_fold = [_run_fold(*task) for task in tasks]

    runtime = time.perf_counter() - start
    reports = []
    for col, w_f in enumerate(wf_values):
        fold_metrics = tuple(rows[col][1] for rows in per_fold)
        mean, sd = _aggregate(fold_metrics)
        reports.append(
            MetricsReport(
                variant=cfg.variant,
                w_f=w_f,
                folds=fold_metrics,
                mean=mean,
                sd=sd,
                config_hash=cfg.hash(),
                config=cfg.to_dict(),
                runtime_s=runtime,
            )
        )
    return reports


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> MetricsReport:
    """Train, ground, solve and score the configured variant across folds."""
    return _run(cfg, [cfg.w_f], dataset)[0]


def run_sweep(cfg: ExperimentConfig, dataset: Dataset | None = None):
    """One report per w_f value, with identical folds and seeds throughout."""
    wf_values = cfg.wf_list if cfg.wf_list else DEFAULT_WF_SWEEP
    if len(wf_values) < 1:
        raise ConfigError("sweep needs at least one w_f value")
    reports = _run(cfg, list(wf_values), dataset)
    return list(zip(list(wf_values), reports))


def run_retrofit(cfg: ExperimentConfig, dataset: Dataset | None = None) -> MetricsReport:
    """Retrofit a black-box prediction file toward a fairness criterion.

    With a dataset configured, this runs the fold pipeline (the predictions
    file, when given, must cover every fold's test pairs; without one, an
    NMF predictor trained per fold supplies the inputs). Without a dataset,
    the file is retrofit as a single batch: a groups file is required,
    metrics other than non-parity need a truth file, and the value variant
    needs an observed-ratings file for its estimates.
    """
    if cfg.variant not in RETROFIT_VARIANTS:
        raise ConfigError("run_retrofit requires a retrofit_* variant")
    if dataset is not None or cfg.data_dir or cfg.dataset_cache:
        return run_experiment(cfg, dataset)

    if not cfg.predictions_path:
        raise ConfigError("retrofit without a dataset requires predictions_path")
    if not cfg.groups_path:
        raise ConfigError("retrofit without a dataset requires groups_path")
    start = time.perf_counter()
    base = load_predictions(cfg.predictions_path)
    groups = load_groups(cfg.groups_path)
    fairness = "np" if cfg.variant == "retrofit_np" else "val"
    estimates = None
    if fairness == "val":
        if not cfg.observed_path:
            raise ConfigError("value retrofit without a dataset requires observed_path")
        observed = load_predictions(cfg.observed_path)
        estimates = observed_item_estimates(observed.values, groups)
    pred_map, solution, _ = retrofit_predictions(
        base.values,
        groups,
        fairness,
        cfg.w_f,
        prior_weight=cfg.prior_weight,
        estimates=estimates,
        solver_cfg=cfg.solver_config(
            init_value=float(np.mean(list(base.values.values())))
        ),
    )
    scale = denormalize if cfg.metrics_on_rating_scale else (lambda v: v)
    pred_scaled = {k: float(scale(v)) for k, v in pred_map.items()}
    u_par = non_parity(pred_scaled, groups)
    rmse = u_val = float("nan")
    if cfg.truth_path:
        truth = load_predictions(cfg.truth_path)
        if set(truth.values) != set(pred_map):
            raise DataError("truth file must cover exactly the prediction pairs")
        truth_scaled = {k: float(scale(v)) for k, v in truth.values.items()}
        err = np.array([pred_scaled[k] - truth_scaled[k] for k in pred_scaled])
        rmse = float(np.sqrt(np.mean(err**2)))
        u_val = value_unfairness(pred_scaled, truth_scaled, groups)
    fold_metrics = (FoldMetrics(1, rmse, u_par, u_val, solution.converged),)
    mean, sd = _aggregate(fold_metrics)
    return MetricsReport(
        variant=cfg.variant,
        w_f=cfg.w_f,
        folds=fold_metrics,
        mean=mean,
        sd=sd,
        config_hash=cfg.hash(),
        config=cfg.to_dict(),
        runtime_s=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Report rendering. CSV column order is fixed; aggregate rows use "mean" and
# "sd" in the fold column (no sd row for single-fold reports). The JSON
# rendering additionally embeds the effective config and its hash; runtime
# is deliberately excluded so identical runs produce identical bytes.
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(reports, path, fmt: str = "csv") -> None:
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        lines = [CSV_HEADER]
        for r in reports:
            for f in r.folds:
                lines.append(
                    f"{r.variant},{_fmt(r.w_f)},{f.fold},{_fmt(f.rmse)},{_fmt(f.u_par)},{_fmt(f.u_val)}"
                )
            lines.append(
                f"{r.variant},{_fmt(r.w_f)},mean,{_fmt(r.mean['rmse'])},{_fmt(r.mean['u_par'])},{_fmt(r.mean['u_val'])}"
            )
            if r.sd is not None:
                lines.append(
                    f"{r.variant},{_fmt(r.w_f)},sd,{_fmt(r.sd['rmse'])},{_fmt(r.sd['u_par'])},{_fmt(r.sd['u_val'])}"
                )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    elif fmt == "json":
        payload = {"reports": []}
        for r in reports:
            payload["reports"].append(
                {
                    "variant": r.variant,
                    "w_f": r.w_f,
                    "config_hash": r.config_hash,
                    "config": r.config,
                    "folds": [
                        {
                            "fold": f.fold,
                            "rmse": f.rmse,
                            "u_par": f.u_par,
                            "u_val": f.u_val,
                            "converged": f.converged,
                        }
                        for f in r.folds
                    ],
                    "mean": r.mean,
                    "sd": r.sd,
                }
            )
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path) -> list[MetricsReport]:
    with open(path) as fh:
        payload = json.load(fh)
    reports = []
    for r in payload["reports"]:
        folds = tuple(
            FoldMetrics(
                fold=f["fold"],
                rmse=f["rmse"],
                u_par=f["u_par"],
                u_val=f["u_val"],
                converged=f["converged"],
            )
            for f in r["folds"]
        )
        reports.append(
            MetricsReport(
                variant=r["variant"],
                w_f=r["w_f"],
                folds=folds,
                mean=r["mean"],
                sd=r["sd"],
                config_hash=r["config_hash"],
                config=r["config"],
            )
        )
    return reports
