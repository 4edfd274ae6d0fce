"""Command-line front end.

Subcommands: embed, train, evaluate, predict, reproduce, gradcheck.
Configuration comes from a JSON file (--config) merged over hard defaults;
unknown keys are rejected.  Environment variables PEPCLF_OUT and PEPCLF_SEED
override only the output directory and the global seed.  Exit codes:
0 success, 2 configuration/input error, 3 runtime/training error,
4 self-check failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time

import numpy as np

from . import datasets, evaluation, models, nn, seqdata
from .embeddings import (
    EmbeddingConfig,
    load_embedding,
    save_embedding,
    train_fasttext,
    train_word2vec,
)
from .evaluation import EmbeddingSpec, atomic_write

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_SELFCHECK = 4


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "dataset": {
        "path": None,      # CSV/FASTA file; or use "name" for a bundled set
        "name": None,      # "ACPs250" or "Independent"
        "format": "csv",
    },
    "embedding": {
        "mode": "fasttext",      # skipgram | cbow | fasttext
        "token_k": 3,            # k-mer length for tokenization
        "dim": 100,
        "window": 5,
        "negatives": 5,
        "epochs": 50,
        "lr_initial": 0.025,
        "minn": 2,
        "maxn": 3,
        "bucket_count": 200000,
        "min_count": None,       # default: 2 for fasttext, 1 otherwise
        "seed": 101,
        "file": None,            # pre-trained embedding text file for cmd_train
    },
    "model": {
        "architecture": "bilstm",
        "embedding_trainable": True,
        "class_head": None,      # default per architecture
        "conv_kernel": 3,
        "lstm_relu_position": "cell",
    },
    "training": {
        "lr": 0.01,
        "batch_size": 32,
        "max_epochs": 50,
        "patience": 3,
        "validation_fraction": 0.1,
    },
    "eval": {
        "n_runs": 10,
        "seed_base": 101,
        "test_fraction": 0.2,
    },
    "output_dir": "out",
}

GRID_LABELS = {
    "word2vec": ["WS", "WC"],
    "fasttext": ["FT(2)", "FT(3)", "FT(4)"],
    "all": ["WS", "WC", "FT(2)", "FT(3)", "FT(4)"],
}

# published accuracies the reproduction presets are compared against
REFERENCE_ACCURACY = {
    ("ACPs250", "FT(3)+BiLSTM"): 92.50,
    ("Independent", "FT(2)+BiLSTM"): 96.15,
    ("ACPs250", "WC+BiLSTM"): 90.00,
    ("Independent", "WC+BiLSTM"): 92.31,
}

PRESETS = {
    "acps250-ft3-bilstm": {
        "dataset": "ACPs250", "embedding_label": "FT(3)",
        "architecture": "bilstm", "reference": 92.50,
    },
    "independent-ft2-bilstm": {
        "dataset": "Independent", "embedding_label": "FT(2)",
        "architecture": "bilstm", "reference": 96.15,
    },
    "word2vec-grids": {"grid": "word2vec"},
    "fasttext-grids": {"grid": "fasttext"},
}

# presets trade the 50-epoch embedding default down to 30: the classifier
# fine-tunes its embedding layer anyway and the headline runs must fit a
# single-core time budget
PRESET_EMBEDDING_EPOCHS = 30


def _merge_config(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None):
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must contain a JSON object")
        config = _merge_config(config, user)
    for section, key, value in overrides or []:
        if section is None:
            config[key] = value
        else:
            config[section][key] = value

    env_out = os.environ.get("PEPCLF_OUT")
    if env_out:
        config["output_dir"] = env_out
    env_seed = os.environ.get("PEPCLF_SEED")
    if env_seed:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"PEPCLF_SEED must be an integer, got {env_seed!r}")
        config["embedding"]["seed"] = seed
        config["eval"]["seed_base"] = seed
    return config


def _resolve_dataset(config):
    section = config["dataset"]
    path = section["path"]
    if path is None and section["name"] is not None:
        path = datasets.packaged_path(section["name"])
    if path is None:
        raise ConfigError("no dataset given: set dataset.path or dataset.name")
    if not os.path.exists(path):
        raise ConfigError(f"dataset file does not exist: {path}")
    return seqdata.load_dataset(path, format=section["format"])


def _embedding_config(section, seed=None) -> EmbeddingConfig:
    min_count = section["min_count"]
    if min_count is None:
        min_count = 2 if section["mode"] == "fasttext" else 1
    return EmbeddingConfig(
        dim=section["dim"], window=section["window"],
        negatives=section["negatives"], epochs=section["epochs"],
        lr_initial=section["lr_initial"], mode=section["mode"],
        minn=section["minn"], maxn=section["maxn"],
        bucket_count=section["bucket_count"], min_count=min_count,
        seed=section["seed"] if seed is None else seed,
    )


def _embedding_spec(config) -> EmbeddingSpec:
    emb = config["embedding"]
    mode = emb["mode"]
    if mode == "skipgram":
        label = "WS" if emb["token_k"] == 1 else f"SG(k={emb['token_k']})"
    elif mode == "cbow":
        label = "WC" if emb["token_k"] == 1 else f"CB(k={emb['token_k']})"
    else:
        label = f"FT({emb['maxn']})"
    min_count = emb["min_count"]
    if min_count is None:
        min_count = 2 if mode == "fasttext" else 1
    return EmbeddingSpec(
        label=label, mode=mode, token_k=emb["token_k"], dim=emb["dim"],
        window=emb["window"], negatives=emb["negatives"], epochs=emb["epochs"],
        lr_initial=emb["lr_initial"], minn=emb["minn"], maxn=emb["maxn"],
        bucket_count=emb["bucket_count"], min_count=min_count,
    )


def _train_config(config, seed) -> models.TrainConfig:
    t = config["training"]
    return models.TrainConfig(
        max_epochs=t["max_epochs"], batch_size=t["batch_size"], lr=t["lr"],
        patience=t["patience"], validation_fraction=t["validation_fraction"],
        seed=seed,
    )


def _ensure_outdir(config):
    out = config["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_embed(config) -> int:
    dataset = _resolve_dataset(config)
    out = _ensure_outdir(config)
    emb_cfg = _embedding_config(config["embedding"])
    k = config["embedding"]["token_k"]
    corpus = [seqdata.tokenize(r.sequence, k) for r in dataset.records]

    started = time.time()
    if emb_cfg.mode == "fasttext":
        matrix, subwords = train_fasttext(corpus, emb_cfg)
    else:
        matrix = train_word2vec(corpus, emb_cfg)
        subwords = None
    elapsed = time.time() - started

    label = _embedding_spec(config).label.replace("(", "").replace(")", "")
    path = os.path.join(out, f"embedding_{label}_{dataset.name}.txt")
    save_embedding(matrix, path, emb_cfg.mode, subwords)
    print(f"wrote {path}")
    print(
        f"vocab_size={len(matrix.vocab)} dim={emb_cfg.dim} "
        f"epochs={emb_cfg.epochs} wall_time={elapsed:.1f}s"
    )
    return EXIT_OK


def cmd_train(config) -> int:
    dataset = _resolve_dataset(config)
    out = _ensure_outdir(config)
    seed = config["eval"]["seed_base"]
    train_ds, _ = seqdata.split_holdout(
        dataset, config["eval"]["test_fraction"], seed
    )
    k = config["embedding"]["token_k"]
    corpus = [seqdata.tokenize(r.sequence, k) for r in train_ds.records]

    emb_file = config["embedding"]["file"]
    if emb_file is not None:
        matrix, subwords, mode = load_embedding(emb_file)
    else:
        emb_cfg = _embedding_config(config["embedding"])
        mode = emb_cfg.mode
        if mode == "fasttext":
            matrix, subwords = train_fasttext(corpus, emb_cfg)
        else:
            matrix = train_word2vec(corpus, emb_cfg)
            subwords = None

    max_len = max(len(t) for t in corpus)
    mc = config["model"]
    model = models.build_model(models.ModelConfig(
        architecture=mc["architecture"], embedding=matrix, max_len=max_len,
        subwords=subwords, embedding_trainable=mc["embedding_trainable"],
        class_head=mc["class_head"], embedding_mode=mode,
        conv_kernel=mc["conv_kernel"],
        lstm_relu_position=mc["lstm_relu_position"], seed=seed,
    ))
    try:
        params, history = models.train(model, train_ds, _train_config(config, seed))
    except models.TrainingDivergedError as exc:
        last = exc.history.stopped_epoch
        print(f"error: {exc} (last finite epoch: {last})", file=sys.stderr)
        return EXIT_RUNTIME

    model_path = os.path.join(out, f"model_{mc['architecture']}_{dataset.name}.bin")
    models.save_params(params, model_path)
    loss_path = os.path.join(out, f"loss_{mc['architecture']}_{dataset.name}.csv")
    evaluation.export_history(history, loss_path)
    print(f"wrote {model_path}")
    print(f"wrote {loss_path}")
    print(
        f"stopped_epoch={history.stopped_epoch} best_epoch={history.best_epoch} "
        f"train_loss={history.train_loss[-1]:.4f}"
    )
    return EXIT_OK


def _row_slug(row: str) -> str:
    return row.replace("(", "").replace(")", "").replace("+", "_").lower()


def cmd_evaluate(config, grid=None) -> int:
    dataset = _resolve_dataset(config)
    out = _ensure_outdir(config)
    ev_cfg = config["eval"]
    train_cfg = _train_config(config, seed=0)

    if grid is not None:
        if grid not in GRID_LABELS:
            raise ConfigError(
                f"unknown grid {grid!r}; choose from {sorted(GRID_LABELS)}"
            )
        cells = evaluation.experiment_grid(
            dataset, GRID_LABELS[grid], train_config=train_cfg,
            n_runs=ev_cfg["n_runs"], seed_base=ev_cfg["seed_base"],
            test_fraction=ev_cfg["test_fraction"],
        )
        table = evaluation.format_grid_table(cells)
        print(table, end="")
        atomic_write(os.path.join(out, f"grid_{grid}_{dataset.name}.txt"), table)
        succeeded = 0
        for cell in cells:
            if cell.report is None:
                print(f"cell {cell.row} failed: {cell.error}", file=sys.stderr)
                continue
            succeeded += 1
            evaluation.export_report(
                cell.report,
                os.path.join(out, f"report_{_row_slug(cell.row)}_{dataset.name}.json"),
            )
        return EXIT_OK if succeeded else EXIT_RUNTIME

    spec = _embedding_spec(config)
    report = evaluation.run_experiment(
        dataset, spec, config["model"]["architecture"], train_config=train_cfg,
        n_runs=ev_cfg["n_runs"], seed_base=ev_cfg["seed_base"],
        test_fraction=ev_cfg["test_fraction"],
    )
    if not report.runs:
        print("all runs diverged", file=sys.stderr)
        return EXIT_RUNTIME
    row = f"{spec.label}+{evaluation.ARCH_LABELS[config['model']['architecture']]}"
    evaluation.export_report(report, os.path.join(out, "report.json"))
    evaluation.export_report(report, os.path.join(out, "report.csv"), format="csv")
    for run in report.runs:
        evaluation.export_roc(run.roc, os.path.join(out, f"roc_seed{run.seed}.csv"))
        evaluation.export_history(
            run.history, os.path.join(out, f"loss_seed{run.seed}.csv")
        )
    mean = report.mean()
    print(f"{row} on {dataset.name}: " + "  ".join(
        f"{k.upper()}={mean[k]:.2f}" for k in evaluation.METRIC_NAMES
    ))
    if report.failures:
        print(f"failed runs: {report.failures} (seeds {report.failure_seeds})")
    return EXIT_OK


def cmd_predict(config, model_path, input_path) -> int:
    if not os.path.exists(model_path):
        raise ConfigError(f"model file does not exist: {model_path}")
    if not os.path.exists(input_path):
        raise ConfigError(f"input file does not exist: {input_path}")
    params = models.load_params(model_path)
    model = models.model_from_params(params)

    rows = _read_prediction_input(input_path)
    print("id,sequence,probability,label@0.5")
    failures = 0
    for rec_id, sequence in rows:
        try:
            rec = seqdata.PeptideRecord(rec_id, sequence, 0)
            prob = float(model.predict_proba([rec.sequence])[0])
        except (seqdata.DatasetError, ValueError) as exc:
            failures += 1
            print(f"{rec_id},{sequence},error,{exc}")
            continue
        print(f"{rec_id},{sequence},{prob:.6f},{1 if prob >= 0.5 else 0}")
    if rows and failures == len(rows):
        return EXIT_RUNTIME
    return EXIT_OK


def _read_prediction_input(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: no sequences to predict")
    rows = []
    if lines[0].lower().startswith("sample,"):
        for line in lines[1:]:
            parts = line.split(",")
            rows.append((int(parts[0]), parts[1]))
    else:
        for i, line in enumerate(lines, start=1):
            rows.append((i, line.split(",")[0]))
    return rows


def cmd_reproduce(config, preset_name) -> int:
    if preset_name not in PRESETS:
        print(
            f"unknown preset {preset_name!r}; valid presets: "
            + ", ".join(sorted(PRESETS)),
            file=sys.stderr,
        )
        return EXIT_CONFIG
    preset = PRESETS[preset_name]
    out = _ensure_outdir(config)
    ev_cfg = config["eval"]
    train_cfg = _train_config(config, seed=0)

    if "grid" in preset:
        exit_code = EXIT_OK
        for name in ("ACPs250", "Independent"):
            grid_config = copy.deepcopy(config)
            grid_config["dataset"] = {"path": None, "name": name, "format": "csv"}
            grid_config["output_dir"] = out
            code = cmd_evaluate(grid_config, grid=preset["grid"])
            exit_code = max(exit_code, code)
            _print_grid_reference(out, preset["grid"], name)
        return exit_code

    dataset = seqdata.load_dataset(datasets.packaged_path(preset["dataset"]))
    spec = EmbeddingSpec.from_label(
        preset["embedding_label"], epochs=PRESET_EMBEDDING_EPOCHS
    )
    report = evaluation.run_experiment(
        dataset, spec, preset["architecture"], train_config=train_cfg,
        n_runs=ev_cfg["n_runs"], seed_base=ev_cfg["seed_base"],
        test_fraction=ev_cfg["test_fraction"],
    )
    if not report.runs:
        print("all runs diverged", file=sys.stderr)
        return EXIT_RUNTIME

    evaluation.export_report(report, os.path.join(out, "report.json"))
    evaluation.export_report(report, os.path.join(out, "report.csv"), format="csv")
    for run in report.runs:
        evaluation.export_roc(run.roc, os.path.join(out, f"roc_seed{run.seed}.csv"))
        evaluation.export_history(
            run.history, os.path.join(out, f"loss_seed{run.seed}.csv")
        )
    achieved = report.mean()["acc"]
    reference = preset["reference"]
    row = f"{spec.label}+BiLSTM"
    comparison = (
        f"{preset_name}: achieved mean accuracy {achieved:.2f}% over "
        f"{len(report.runs)} runs; reference {row} on {preset['dataset']} "
        f"is {reference:.2f}%\n"
    )
    atomic_write(os.path.join(out, "comparison.txt"), comparison)
    print(comparison, end="")
    if report.failures:
        print(f"failed runs: {report.failures} (seeds {report.failure_seeds})")
    return EXIT_OK


def _print_grid_reference(out, grid, dataset_name):
    for (name, row), reference in REFERENCE_ACCURACY.items():
        if name != dataset_name:
            continue
        if grid == "word2vec" and row.startswith("W"):
            print(f"reference {row} on {name}: {reference:.2f}%")
        if grid == "fasttext" and row.startswith("FT"):
            print(f"reference {row} on {name}: {reference:.2f}%")


def cmd_gradcheck() -> int:
    layer_errors = nn.run_layer_checks(n_instances=20, seed=0)
    arch_errors = nn.run_architecture_checks(seed=0)
    failed = []
    for name, err in layer_errors.items():
        tol = nn.gradcheck.LAYER_TOLERANCES[name]
        status = "PASS" if err < tol else "FAIL"
        if status == "FAIL":
            failed.append(name)
        print(f"{name:<16} max_rel_err={err:.3e}  tolerance={tol:.0e}  {status}")
    for name, err in arch_errors.items():
        tol = nn.gradcheck.ARCHITECTURE_TOLERANCE
        status = "PASS" if err < tol else "FAIL"
        if status == "FAIL":
            failed.append(name)
        print(f"{name:<16} max_rel_err={err:.3e}  tolerance={tol:.0e}  {status}")
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFCHECK
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pepclf",
        description="anticancer peptide classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--dataset", help="dataset path or bundled name")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("embed", help="train and write an embedding file")
    common(p)

    p = sub.add_parser("train", help="train one classifier on one split")
    common(p)

    p = sub.add_parser("evaluate", help="repeated-holdout evaluation")
    common(p)
    p.add_argument("--grid", help="run a whole grid: word2vec, fasttext or all")
    p.add_argument("--runs", type=int, help="number of holdout repetitions")

    p = sub.add_parser("predict", help="classify sequences with a saved model")
    common(p)
    p.add_argument("--model", required=True, help="model file from cmd_train")
    p.add_argument("--input", required=True, help="CSV dataset or sequence list")

    p = sub.add_parser("reproduce", help="run a locked benchmark preset")
    common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--runs", type=int, help="number of holdout repetitions")

    p = sub.add_parser("gradcheck", help="finite-difference self check")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck()

        overrides = []
        if getattr(args, "dataset", None):
            if args.dataset in datasets.GENERATOR_SETTINGS:
                overrides.append(("dataset", "name", args.dataset))
            else:
                overrides.append(("dataset", "path", args.dataset))
        if getattr(args, "out", None):
            overrides.append((None, "output_dir", args.out))
        if getattr(args, "seed", None) is not None:
            overrides.append(("embedding", "seed", args.seed))
            overrides.append(("eval", "seed_base", args.seed))
        if getattr(args, "runs", None) is not None:
            overrides.append(("eval", "n_runs", args.runs))
        config = load_config(getattr(args, "config", None), overrides)

        if args.command == "embed":
            return cmd_embed(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "evaluate":
            return cmd_evaluate(config, grid=getattr(args, "grid", None))
        if args.command == "predict":
            return cmd_predict(config, args.model, args.input)
        if args.command == "reproduce":
            return cmd_reproduce(config, args.preset)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, seqdata.DatasetError, models.ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except models.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
