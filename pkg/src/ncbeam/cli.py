"""Command-line entry point: ``ncbeam <subcommand> [--config cfg.json] [--seed S] [--out PATH]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .array import ArrayGeometry
from .codebooks import concat_codebook, dft_codebook, pn_codebook
from .dataset import DatasetFormatError, GenConfig, filter_labels, generate_dataset, load_dataset, save_dataset, split
from .harness import (ACCURACY_FIELDS, LOSS_FIELDS, PATTERN_FIELDS, REQUIRED_FIELDS, SCALING_FIELDS,
                      ExperimentConfig, evaluate_algorithms, losses_on_test, beam_pattern_rows, manifest,
                      run_m_sweep, run_required_m_vs_array, to_csv)
from .metrics import accuracy, gain_loss_percentile
from .neural import ArchitectureError, TrainConfig, load_model, save_model, train

EVAL_FIELDS = ("algo", "M", "n_test", "accuracy", "p50_db", "p90_db", "p99_db")


class ConfigError(ValueError):
    pass


def _read_json(path):
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _gen_config(args) -> GenConfig:
    cfg = _read_json(args.config)
    cfg = cfg.get("gen", cfg)
    try:
        gen = GenConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset config: {exc}") from exc
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    return gen


def _experiment_config(args) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.from_dict(_read_json(args.config))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad experiment config: {exc}") from exc
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "jobs", None):
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def cmd_gen_codebook(args):
    gen = _gen_config(args)
    seed = gen.pn_seed if args.seed is None else args.seed
    geom = ArrayGeometry(gen.N_rx, gen.spacing_over_wavelength)
    dft = dft_codebook(geom, gen.K, *gen.dft_range_deg)
    pn = pn_codebook(geom, gen.M0, seed)
    book = {"dft": dft, "pn": pn, "concat": concat_codebook(dft, pn)}[args.kind]
    _write(args.out, json.dumps(book.to_json()) + "\n")


def cmd_gen_dataset(args):
    save_path = Path(args.out)
    save_path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(generate_dataset(_gen_config(args)), save_path)


def _train_settings(args):
    cfg = _read_json(args.config)
    unknown = set(cfg) - {"train", "min_count", "train_fraction", "M"}
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    try:
        tc = TrainConfig.from_dict(cfg.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from exc
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    M = args.M if args.M is not None else cfg.get("M", 5)
    return tc, M, cfg.get("min_count", 20), cfg.get("train_fraction", 0.617)


def _prepare(data_path, min_count, train_fraction, seed):
    ds = filter_labels(load_dataset(data_path), min_count)
    train_set, test_set = split(ds, train_fraction, seed)
    return ds, train_set, test_set


def _eval_rows(ds, train_set, test_set, params):
    M = params.M
    preds = evaluate_algorithms(ds, train_set, test_set, M, params)
    rows = []
    for algo in ("nn", "rss_mp_vanilla", "rss_mp_refined"):
        if algo not in preds:
            rows.append((algo, M, len(test_set), None, None, None, None))
            continue
        L = losses_on_test(ds, test_set, preds[algo])
        rows.append((algo, M, len(test_set), accuracy(preds[algo], test_set.labels),
                     *(gain_loss_percentile(L, q) for q in (50, 90, 99))))
    return rows


def cmd_train(args):
    tc, M, min_count, train_fraction = _train_settings(args)
    ds, train_set, test_set = _prepare(args.data, min_count, train_fraction, tc.seed)
    params, history = train(train_set, M, tc)
    params.meta["split"] = {"min_count": min_count, "train_fraction": train_fraction, "seed": tc.seed}
    rows = _eval_rows(ds, train_set, test_set, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(params, out / "model.json")
    _write(out / "history.csv", history.to_csv())
    log = {
        "M": M, "n_labels": ds.n_labels, "n_train": len(train_set), "n_test": len(test_set),
        "epochs": len(history), "best_epoch": history.best_epoch,
        "train_config": asdict(tc), "data": str(args.data),
        "eval": {r[0]: {"accuracy": r[3], "p50_db": r[4], "p90_db": r[5], "p99_db": r[6]} for r in rows},
    }
    _write(out / "train_log.json", _dump(log))


def cmd_eval(args):
    params = load_model(args.model)
    split_cfg = params.meta.get("split")
    if split_cfg is None:
        raise ConfigError("model file carries no split settings; train it with the 'train' subcommand")
    ds, train_set, test_set = _prepare(args.data, split_cfg["min_count"], split_cfg["train_fraction"],
                                       split_cfg["seed"])
    if ds.label_map != params.meta.get("label_map", ds.label_map):
        raise ConfigError("model labels do not match the dataset's retained labels")
    _write(args.out, to_csv(EVAL_FIELDS, _eval_rows(ds, train_set, test_set, params)))


def cmd_sweep_m(args):
    cfg = _experiment_config(args)
    out = Path(args.out or cfg.out_dir)
    res = run_m_sweep(cfg)
    _write(out / "accuracy.csv", to_csv(ACCURACY_FIELDS, res.accuracy))
    _write(out / "gainloss.csv", to_csv(LOSS_FIELDS, res.gainloss))
    _write(out / "required_m.csv", to_csv(REQUIRED_FIELDS, res.required))
    _write(out / "manifest.json", _dump(manifest(cfg, "sweep-m",
                                                 ["accuracy.csv", "gainloss.csv", "required_m.csv"])))


def cmd_sweep_array(args):
    cfg = _experiment_config(args)
    out = Path(args.out or cfg.out_dir)
    _write(out / "scaling.csv", to_csv(SCALING_FIELDS, run_required_m_vs_array(cfg)))
    _write(out / "manifest.json", _dump(manifest(cfg, "sweep-array", ["scaling.csv"])))


def cmd_beam_pattern(args):
    cfg = _experiment_config(args)
    rows, summary = beam_pattern_rows(cfg)
    out = Path(args.out or Path(cfg.out_dir) / "beam_pattern.csv")
    _write(out, to_csv(PATTERN_FIELDS, rows))
    _write(out.with_suffix(".summary.json"), _dump(summary))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncbeam", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=out_required, help="output path")
        p.set_defaults(func=fn)
        return p

    p = add("gen-codebook", cmd_gen_codebook, "write a codebook as JSON")
    p.add_argument("--kind", choices=("dft", "pn", "concat"), default="concat")
    add("gen-dataset", cmd_gen_dataset, "generate a synthetic JSON-lines dataset")
    p = add("train", cmd_train, "train the classifier; writes model.json, history.csv, train_log.json")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--M", type=int, help="number of sounding measurements used as features")
    p = add("eval", cmd_eval, "evaluate a trained model and both RSS-MP baselines on the test split")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--model", required=True, help="model.json written by 'train'")
    for name, fn, text in (("sweep-m", cmd_sweep_m, "accuracy and gain loss versus M"),
                           ("sweep-array", cmd_sweep_array, "required M versus array size"),
                           ("beam-pattern", cmd_beam_pattern, "model vs impaired beam patterns")):
        p = add(name, fn, text, out_required=False)
        if name != "beam-pattern":
            p.add_argument("--jobs", type=int, help="worker processes for independent cells")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, DatasetFormatError, ArchitectureError) as exc:
        print(f"ncbeam {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"ncbeam {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
