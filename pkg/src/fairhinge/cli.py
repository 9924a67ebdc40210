"""Command-line entry points.

Subcommands: preprocess, similarities, train, experiment, retrofit, sweep,
report. Experiment-style commands read a JSON config (keys mirroring
ExperimentConfig); command-line flags override config keys, and the
effective config is embedded in every JSON report.

Exit codes: 0 success, 2 config error, 3 data error, 4 solver
non-convergence in at least one fold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import experiment as exp
from .dataio import (
    derive_groups,
    load_dataset_csv,
    make_folds,
    normalize,
    parse_movielens,
    preprocess,
    save_dataset_csv,
    save_folds,
)
from .errors import ConfigError, DataError, FairHingeError, ParseError
from .fairness import save_groups
from .predictors import (
    predict as predict_factors,
    save_factor_model,
    save_predictions,
    train_biased_svd,
    train_naive_bayes,
    train_nmf,
)
from .similarity import (
    ITEM_CONTENT,
    ITEM_RATING,
    USER_DEMOGRAPHIC,
    USER_RATING,
    cosine_similarity,
    item_content_vectors,
    item_rating_vectors,
    save_graph,
    user_demographic_vectors,
    user_rating_vectors,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4


def _add_config_overrides(parser):
    parser.add_argument("--config", help="JSON config file (ExperimentConfig keys)")
    parser.add_argument("--variant", help="model variant")
    parser.add_argument("--data-dir", dest="data_dir", help="MovieLens directory")
    parser.add_argument("--dataset-cache", dest="dataset_cache", help="preprocessed CSV cache")
    parser.add_argument("--predictions", dest="predictions_path", help="predictions CSV")
    parser.add_argument("--groups", dest="groups_path", help="group assignment CSV")
    parser.add_argument("--observed", dest="observed_path", help="observed ratings CSV")
    parser.add_argument("--truth", dest="truth_path", help="truth ratings CSV")
    parser.add_argument("--w-f", dest="w_f", type=float, help="fairness weight")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--n-folds", dest="n_folds", type=int)
    parser.add_argument("--fold-ids", dest="fold_ids", help="comma-separated fold ids")
    parser.add_argument("--jobs", type=int)
    parser.add_argument(
        "--no-preprocess",
        dest="apply_preprocess",
        action="store_false",
        default=None,
        help="skip genre/user filtering (synthetic data)",
    )
    parser.add_argument("--wf-list", dest="wf_list", help="comma-separated sweep values")


def _effective_config(args) -> exp.ExperimentConfig:
    data = {}
    if args.config:
        data = exp.load_config(args.config).to_dict()
    for key in (
        "variant",
        "data_dir",
        "dataset_cache",
        "predictions_path",
        "groups_path",
        "observed_path",
        "truth_path",
        "w_f",
        "seed",
        "n_folds",
        "jobs",
        "apply_preprocess",
    ):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if getattr(args, "fold_ids", None):
        data["fold_ids"] = [int(x) for x in args.fold_ids.split(",")]
    if getattr(args, "wf_list", None):
        data["wf_list"] = [float(x) for x in args.wf_list.split(",")]
    return exp.ExperimentConfig.from_dict(data)


def _load_dataset_args(args):
    if getattr(args, "dataset_cache", None):
        return load_dataset_csv(args.dataset_cache)
    if getattr(args, "data_dir", None):
        ds = parse_movielens(args.data_dir)
        if getattr(args, "apply_preprocess", True) is not False:
            ds = preprocess(ds)
        return ds
    raise ConfigError("need --data-dir or --dataset-cache")


def _write_reports(reports, out_base: str) -> None:
    exp.emit_report(reports, out_base + ".csv", "csv")
    exp.emit_report(reports, out_base + ".json", "json")
    print(f"wrote {out_base}.csv and {out_base}.json")


def cmd_preprocess(args) -> int:
    ds = parse_movielens(args.data_dir)
    if args.apply_preprocess is not False:
        ds = preprocess(ds)
    save_dataset_csv(args.out, ds)
    print(
        f"cached {len(ds.ratings)} ratings, {len(ds.users)} users, "
        f"{len(ds.movies)} movies -> {args.out}"
    )
    if args.groups_out:
        save_groups(args.groups_out, derive_groups(ds))
        print(f"wrote groups -> {args.groups_out}")
    if args.folds_out:
        folds = make_folds(ds, k=args.n_folds, seed=args.seed)
        save_folds(args.folds_out, folds)
        print(f"wrote {args.n_folds}-fold manifest -> {args.folds_out}")
    return EXIT_OK


def cmd_similarities(args) -> int:
    cfg = _effective_config(args)
    ds = _load_dataset_args(args)
    folds = make_folds(ds, k=cfg.n_folds, seed=cfg.seed)
    fold = next((f for f in folds if f.fold_id == args.fold), None)
    if fold is None:
        raise ConfigError(f"fold {args.fold} out of range 1..{cfg.n_folds}")
    train = [(r.user, r.item, r.value) for r in (ds.ratings[j] for j in fold.train)]
    os.makedirs(args.out_dir, exist_ok=True)
    graphs = {
        USER_RATING: cosine_similarity(
            user_rating_vectors(train), cfg.k_neighbors, cfg.min_overlap, USER_RATING
        ),
        ITEM_RATING: cosine_similarity(
            item_rating_vectors(train), cfg.k_neighbors, cfg.min_overlap, ITEM_RATING
        ),
        USER_DEMOGRAPHIC: cosine_similarity(
            user_demographic_vectors(ds.users), cfg.k_neighbors, cfg.demo_min_overlap, USER_DEMOGRAPHIC
        ),
        ITEM_CONTENT: cosine_similarity(
            item_content_vectors(ds.movies), cfg.k_neighbors, cfg.demo_min_overlap, ITEM_CONTENT
        ),
    }
    for kind, graph in graphs.items():
        path = os.path.join(args.out_dir, f"sim_{kind}_fold{args.fold}_{cfg.hash()}.csv")
        save_graph(path, graph)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    ds = _load_dataset_args(args)
    folds = make_folds(ds, k=cfg.n_folds, seed=cfg.seed)
    fold = next((f for f in folds if f.fold_id == args.fold), None)
    if fold is None:
        raise ConfigError(f"fold {args.fold} out of range 1..{cfg.n_folds}")
    train = ds.ratings_array(fold.train)
    test_pairs = sorted({(ds.ratings[j].user, ds.ratings[j].item) for j in fold.test})

    if args.predictor == "nmf":
        model = train_nmf(train, rank=cfg.nmf_rank, iters=cfg.factor_iters, seed=cfg.seed)
        output = predict_factors(model, test_pairs)
    elif args.predictor == "svd":
        norm = train.copy()
        norm[:, 2] = normalize(train[:, 2])
        model = train_biased_svd(norm, rank=cfg.svd_rank, iters=cfg.factor_iters, seed=cfg.seed)
        output = predict_factors(model, test_pairs)
    elif args.predictor == "nb":
        model = None
        user_feats = {u: sorted(v) for u, v in user_demographic_vectors(ds.users).items()}
        item_feats = {m: sorted(v) for m, v in item_content_vectors(ds.movies).items()}
        output = train_naive_bayes(train, user_feats, item_feats, test_pairs)
    else:
        raise ConfigError(f"unknown predictor {args.predictor!r}")

    save_predictions(args.out, output)
    print(f"wrote {len(output.values)} predictions -> {args.out}")
    if args.model_out and model is not None:
        save_factor_model(args.model_out, model)
        print(f"wrote factor model -> {args.model_out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _effective_config(args)
    report = exp.run_experiment(cfg)
    _write_reports([report], args.out)
    return EXIT_OK if report.all_converged else EXIT_NOT_CONVERGED


def cmd_retrofit(args) -> int:
    cfg = _effective_config(args)
    if cfg.variant not in exp.RETROFIT_VARIANTS:
        cfg = exp.ExperimentConfig.from_dict({**cfg.to_dict(), "variant": "retrofit_np"})
    report = exp.run_retrofit(cfg)
    _write_reports([report], args.out)
    return EXIT_OK if report.all_converged else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    results = exp.run_sweep(cfg)
    reports = [r for _, r in results]
    _write_reports(reports, args.out)
    return EXIT_OK if all(r.all_converged for r in reports) else EXIT_NOT_CONVERGED


def cmd_report(args) -> int:
    reports = exp.load_report(args.input)
    exp.emit_report(reports, args.out, args.format)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairhinge",
        description="Fairness-constrained hybrid recommendation via hinge-loss models",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse + filter MovieLens, write caches")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True, help="dataset cache CSV")
    p.add_argument("--groups-out", dest="groups_out")
    p.add_argument("--folds-out", dest="folds_out")
    p.add_argument("--n-folds", dest="n_folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--no-preprocess", dest="apply_preprocess", action="store_false", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("similarities", help="compute and cache similarity graphs")
    _add_config_overrides(p)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_similarities)

    p = sub.add_parser("train", help="train one local predictor, export predictions")
    _add_config_overrides(p)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--predictor", choices=("nmf", "svd", "nb"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model-out", dest="model_out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run one variant across folds")
    _add_config_overrides(p)
    p.add_argument("--out", required=True, help="report base path (writes .csv and .json)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("retrofit", help="retrofit black-box predictions")
    _add_config_overrides(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrofit)

    p = sub.add_parser("sweep", help="run a w_f sweep")
    _add_config_overrides(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render a JSON report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FairHingeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
