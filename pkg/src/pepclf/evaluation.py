"""Classification metrics, ROC curves and the repeated-holdout harness.

A run: stratified 80/20 split, embeddings trained on the training split
only, classifier trained on the same split, metrics on the held-out test
records at threshold 0.5.  Repeating with seeds seed_base..seed_base+n-1
and averaging gives the reported numbers; all metrics are percentages.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, asdict

import numpy as np

from . import models, seqdata
from .embeddings import EmbeddingConfig, train_fasttext, train_word2vec

METRIC_NAMES = ("acc", "sen", "spe", "mcc", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    acc: float
    sen: float
    spe: float
    mcc: float
    degenerate: frozenset[str] = frozenset()


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def confusion(scores, labels, threshold: float) -> ConfusionCounts:
    """Tally a confusion matrix; scores >= threshold predict positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores ({scores.shape}) and labels ({labels.shape}) differ in length"
        )
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def metrics(c: ConfusionCounts) -> Metrics:
    """Accuracy, sensitivity, specificity and Matthews correlation.

    Any zero denominator factor makes the affected metric 0 and flags it
    as degenerate rather than propagating a NaN.
    """
    if c.total == 0:
        raise ValueError("cannot compute metrics over zero records")
    degenerate = set()
    acc = (c.tp + c.tn) / c.total

    if c.tp + c.fn == 0:
        sen = 0.0
        degenerate.add("sen")
    else:
        sen = c.tp / (c.tp + c.fn)
    if c.tn + c.fp == 0:
        spe = 0.0
        degenerate.add("spe")
    else:
        spe = c.tn / (c.tn + c.fp)

    denom = (
        (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    )
    if denom == 0:
        mcc = 0.0
        degenerate.add("mcc")
    else:
        mcc = (c.tp * c.tn - c.fp * c.fn) / np.sqrt(float(denom))
    return Metrics(acc, sen, spe, mcc, frozenset(degenerate))


def roc_auc(scores, labels) -> RocCurve:
    """ROC curve over distinct score thresholds (ties grouped), AUC by trapezoid.

    The trapezoidal area equals the Mann-Whitney statistic
    P(score_pos > score_neg) + 0.5 P(equal).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.int64)

    # indices where a group of tied scores ends
    distinct = np.flatnonzero(np.diff(sorted_scores) != 0)
    ends = np.append(distinct, sorted_scores.size - 1)

    tp = np.cumsum(sorted_pos)[ends]
    fp = (ends + 1) - tp
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[ends]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)


@dataclass(frozen=True)
class EmbeddingSpec:
    """One column of the embedding grid: WS, WC or FT(n)."""

    label: str
    mode: str
    token_k: int
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 50
    lr_initial: float = 0.025
    minn: int = 2
    maxn: int = 3
    bucket_count: int = 200_000
    min_count: int = 1

    @classmethod
    def from_label(cls, label: str, **overrides):
        """'WS' / 'WC' use residue tokens; 'FT(n)' uses n-mer tokens.

        FastText variants drop singleton k-mers from the vocabulary
        (min_count 2): k-mers seen once carry no reusable signal and
        encourage per-record memorization in the classifier embedding.
        """
        if label == "WS":
            base = dict(mode="skipgram", token_k=1)
        elif label == "WC":
            base = dict(mode="cbow", token_k=1)
        elif label.startswith("FT(") and label.endswith(")"):
            n = int(label[3:-1])
            base = dict(mode="fasttext", token_k=n, minn=2, maxn=n, min_count=2)
        else:
            raise ValueError(f"unknown embedding label {label!r}")
        base.update(overrides)
        return cls(label=label, **base)

    def to_config(self, seed: int) -> EmbeddingConfig:
        return EmbeddingConfig(
            dim=self.dim, window=self.window, negatives=self.negatives,
            epochs=self.epochs, lr_initial=self.lr_initial, mode=self.mode,
            minn=self.minn, maxn=self.maxn, bucket_count=self.bucket_count,
            min_count=self.min_count, seed=seed,
        )


@dataclass
class RunResult:
    seed: int
    acc: float
    sen: float
    spe: float
    mcc: float
    auc: float
    degenerate: tuple[str, ...] = ()
    roc: RocCurve | None = field(default=None, repr=False)
    history: models.TrainHistory | None = field(default=None, repr=False)

    def metric(self, name):
        return getattr(self, name)


@dataclass
class EvalReport:
    dataset: str
    embedding: str
    architecture: str
    config_fingerprint: str
    runs: list[RunResult]
    failures: int = 0
    failure_seeds: list[int] = field(default_factory=list)

    def mean(self) -> dict[str, float]:
        return {
            m: float(np.mean([r.metric(m) for r in self.runs])) for m in METRIC_NAMES
        }

    def std(self) -> dict[str, float]:
        out = {}
        for m in METRIC_NAMES:
            vals = [r.metric(m) for r in self.runs]
            out[m] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return out

    def best(self) -> dict[str, float]:
        return {
            m: float(np.max([r.metric(m) for r in self.runs])) for m in METRIC_NAMES
        }


def fingerprint(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _train_embedding_for_split(train_ds, spec: EmbeddingSpec, seed: int):
    corpus = [seqdata.tokenize(r.sequence, spec.token_k) for r in train_ds.records]
    config = spec.to_config(seed)
    if spec.mode == "fasttext":
        matrix, subwords = train_fasttext(corpus, config)
    else:
        matrix = train_word2vec(corpus, config)
        subwords = None
    max_len = max(len(t) for t in corpus)
    return matrix, subwords, max_len


class EmbeddingCache:
    """Memoizes per-split embedding training inside a grid.

    Embedding training is a pure function of (dataset, split seed, spec), so
    reusing the result across architectures changes nothing downstream.
    """

    def __init__(self):
        self._store = {}

    def get(self, dataset_name, spec, seed, train_ds):
        key = (dataset_name, spec, seed)
        if key not in self._store:
            self._store[key] = _train_embedding_for_split(train_ds, spec, seed)
        return self._store[key]


def run_experiment(dataset, spec: EmbeddingSpec, architecture: str,
                   train_config: models.TrainConfig | None = None,
                   n_runs: int = 10, seed_base: int = 0,
                   test_fraction: float = 0.2,
                   embedding_cache: EmbeddingCache | None = None,
                   embedding_trainable: bool = True) -> EvalReport:
    """Repeated-holdout evaluation of one embedding x architecture cell.

    Diverged runs are recorded as failures; aggregates cover completed runs.
    """
    base_train = train_config or models.TrainConfig()
    fp = fingerprint({
        "dataset": dataset.name,
        "embedding": asdict(spec),
        "architecture": architecture,
        "train": {k: v for k, v in asdict(base_train).items() if k != "seed"},
        "n_runs": n_runs,
        "seed_base": seed_base,
        "test_fraction": test_fraction,
        "embedding_trainable": embedding_trainable,
    })
    report = EvalReport(
        dataset=dataset.name, embedding=spec.label,
        architecture=architecture, config_fingerprint=fp, runs=[],
    )

    for r in range(n_runs):
        seed = seed_base + r
        train_ds, test_ds = seqdata.split_holdout(dataset, test_fraction, seed)
        if embedding_cache is not None:
            matrix, subwords, max_len = embedding_cache.get(
                dataset.name, spec, seed, train_ds
            )
        else:
            matrix, subwords, max_len = _train_embedding_for_split(
                train_ds, spec, seed
            )
        model = models.build_model(models.ModelConfig(
            architecture=architecture, embedding=matrix, max_len=max_len,
            subwords=subwords, embedding_trainable=embedding_trainable,
            embedding_mode=spec.mode, seed=seed,
        ))
        run_cfg = models.TrainConfig(**{**asdict(base_train), "seed": seed})
        try:
            _, history = models.train(model, train_ds, run_cfg)
        except models.TrainingDivergedError:
            report.failures += 1
            report.failure_seeds.append(seed)
            continue

        scores = model.predict_proba(test_ds.sequences())
        labels = test_ds.labels()
        m = metrics(confusion(scores, labels, 0.5))
        roc = roc_auc(scores, labels)
        report.runs.append(RunResult(
            seed=seed,
            acc=100.0 * m.acc, sen=100.0 * m.sen, spe=100.0 * m.spe,
            mcc=100.0 * m.mcc, auc=100.0 * roc.auc,
            degenerate=tuple(sorted(m.degenerate)),
            roc=roc, history=history,
        ))
    return report


ARCH_LABELS = {"cnn": "CNN", "lstm": "LSTM", "bilstm": "BiLSTM"}


@dataclass
class GridCell:
    row: str
    report: EvalReport | None
    error: str | None = None


def experiment_grid(dataset, embedding_labels, architectures=("cnn", "lstm", "bilstm"),
                    train_config=None, n_runs: int = 10, seed_base: int = 0,
                    test_fraction: float = 0.2, spec_overrides=None) -> list[GridCell]:
    """Evaluate every embedding x architecture combination on one dataset.

    Cells fail independently; a failed cell carries its error message.
    """
    if not embedding_labels or not architectures:
        raise ValueError("grid must name at least one embedding and architecture")
    cache = EmbeddingCache()
    cells = []
    for label in embedding_labels:
        spec = EmbeddingSpec.from_label(label, **(spec_overrides or {}))
        for arch in architectures:
            row = f"{label}+{ARCH_LABELS[arch]}"
            try:
                report = run_experiment(
                    dataset, spec, arch, train_config=train_config,
                    n_runs=n_runs, seed_base=seed_base,
                    test_fraction=test_fraction, embedding_cache=cache,
                )
                cells.append(GridCell(row, report))
            except Exception as exc:  # per-cell isolation
                cells.append(GridCell(row, None, error=str(exc)))
    return cells


def format_grid_table(cells) -> str:
    """Text table mirroring the published results layout."""
    lines = [f"{'MODELS':<16}{'ACC':>8}{'SEN':>8}{'SPE':>8}{'MCC':>8}{'AUC':>8}"]
    for cell in cells:
        if cell.report is None:
            lines.append(f"{cell.row:<16}failed: {cell.error}")
            continue
        mean = cell.report.mean()
        lines.append(
            f"{cell.row:<16}" + "".join(f"{mean[m]:>8.2f}" for m in METRIC_NAMES)
        )
    return "\n".join(lines) + "\n"


# -- serialization ----------------------------------------------------------


def atomic_write(path, data):
    """Write bytes or text via a temp file and rename."""
    mode = "wb" if isinstance(data, bytes) else "w"
    directory = os.path.dirname(os.path.abspath(str(path))) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_payload(report: EvalReport) -> dict:
    return {
        "config_fingerprint": report.config_fingerprint,
        "dataset": report.dataset,
        "embedding": report.embedding,
        "architecture": report.architecture,
        "runs": [
            {"seed": r.seed, "acc": r.acc, "sen": r.sen, "spe": r.spe,
             "mcc": r.mcc, "auc": r.auc}
            for r in report.runs
        ],
        "mean": report.mean(),
        "std": report.std(),
        "failures": report.failures,
    }


def export_report(report: EvalReport, path, format: str = "json"):
    """Write a report as JSON or per-run CSV with stable field order."""
    if format == "json":
        atomic_write(path, json.dumps(report_payload(report), indent=2) + "\n")
    elif format == "csv":
        rows = [["seed", "acc", "sen", "spe", "mcc", "auc"]]
        for r in report.runs:
            rows.append([r.seed] + [repr(r.metric(m)) for m in METRIC_NAMES])
        out = "\n".join(",".join(str(x) for x in row) for row in rows) + "\n"
        atomic_write(path, out)
    else:
        raise ValueError(f"unknown report format {format!r}")


def export_roc(curve: RocCurve, path):
    """Sidecar CSV with columns threshold,fpr,tpr (endpoints included)."""
    rows = ["threshold,fpr,tpr"]
    for t, f, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
        rows.append(f"{repr(float(t))},{repr(float(f))},{repr(float(tp))}")
    atomic_write(path, "\n".join(rows) + "\n")


def export_history(history: models.TrainHistory, path):
    """Sidecar CSV with columns epoch,train_loss,val_loss."""
    rows = ["epoch,train_loss,val_loss"]
    for i, (tr, va) in enumerate(zip(history.train_loss, history.val_loss), start=1):
        rows.append(f"{i},{repr(float(tr))},{repr(float(va))}")
    atomic_write(path, "\n".join(rows) + "\n")


def load_report_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
