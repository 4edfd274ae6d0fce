"""The three sequence classifiers, their training loop, and weight files.

Architectures (hidden sizes and dropout rates are fixed by design):

  cnn     embedding -> conv1d(64 filters, relu) -> global max pool
          -> dropout 0.3 -> dropout 0.3 -> dense softmax(2)
  lstm    embedding -> lstm(32, relu cell, last state)
          -> dropout 0.3 -> dropout 0.3 -> dense softmax(2)
  bilstm  embedding -> bilstm(64, sequences) -> dropout 0.2
          -> bilstm(32, sequences) -> dropout 0.2
          -> bilstm(16, last states) -> dropout 0.2 -> dense sigmoid(1)

Softmax heads train with categorical cross-entropy, the sigmoid head with
binary cross-entropy.  Training uses mini-batch Adam with per-epoch seeded
shuffling, a stratified validation split carved from the training data, and
early stopping on validation loss with weight restore from the best epoch.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import nn, seqdata
from .embeddings import (
    EmbeddingMatrix,
    SubwordIndex,
    embedding_text,
    bucket_bytes,
    materialize_matrix,
    parse_embedding_text,
)

ARCHITECTURES = ("cnn", "lstm", "bilstm")
DEFAULT_HEADS = {"cnn": "softmax2", "lstm": "softmax2", "bilstm": "sigmoid1"}
HEAD_LOSS = {"softmax2": "categorical_ce", "sigmoid1": "binary_ce"}

FORMAT_VERSION = 1
MAGIC = b"PEPC"


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; carries the last finite history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class ModelConfig:
    architecture: str
    embedding: EmbeddingMatrix
    max_len: int
    subwords: SubwordIndex | None = None
    embedding_trainable: bool = True
    class_head: str | None = None
    embedding_mode: str | None = None
    conv_kernel: int = 3
    lstm_relu_position: str = "cell"  # or "after": tanh cell, relu on outputs
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}"
            )
        if self.class_head is None:
            self.class_head = DEFAULT_HEADS[self.architecture]
        if self.class_head not in HEAD_LOSS:
            raise ValueError(f"unknown class head {self.class_head!r}")
        if self.embedding_mode is None:
            self.embedding_mode = "fasttext" if self.subwords is not None else "skipgram"
        if self.lstm_relu_position not in ("cell", "after"):
            raise ValueError("lstm_relu_position must be 'cell' or 'after'")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 32
    lr: float = 0.01
    patience: int | None = 3
    validation_fraction: float = 0.1
    seed: int = 0
    track_train_accuracy: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.patience is not None:
            if self.patience < 1:
                raise ValueError("patience must be >= 1 or None")
            if self.validation_fraction == 0.0:
                raise ValueError("early stopping needs a validation fraction > 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    train_accuracy: list[float] = field(default_factory=list)


class _ReluOutput(nn.layers.Layer):
    """Relu applied to a layer's output (the post-layer lstm variant)."""

    def forward(self, x, mask=None, training=False):
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * (self._x > 0)


class Model:
    """A built classifier: embedding, stacked layers and a class head."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.architecture = config.architecture
        self.class_head = config.class_head
        self.loss_kind = HEAD_LOSS[config.class_head]
        self.vocab = config.embedding.vocab
        self.token_k = self.vocab.k
        self.max_len = config.max_len

        rng = np.random.default_rng(config.seed)
        init = materialize_matrix(self.vocab, config.embedding, config.subwords)
        self.embedding = nn.Embedding(init, trainable=config.embedding_trainable)
        dim = init.shape[1]
        out_units = 2 if config.class_head == "softmax2" else 1
        head_act = "softmax" if config.class_head == "softmax2" else "sigmoid"

        arch = config.architecture
        if arch == "cnn":
            if config.max_len < config.conv_kernel:
                raise ValueError(
                    f"max_len {config.max_len} shorter than convolution "
                    f"kernel {config.conv_kernel}"
                )
            self.layers = [
                nn.Conv1D(config.conv_kernel, dim, 64, act="relu", rng=rng),
                nn.GlobalMaxPool1D(),
                nn.Dropout(0.3, rng=rng),
                nn.Dropout(0.3, rng=rng),
                nn.Dense(64, out_units, act=head_act, rng=rng),
            ]
        elif arch == "lstm":
            cell = "relu" if config.lstm_relu_position == "cell" else "tanh"
            self.layers = [
                nn.LSTM(dim, 32, cell_activation=cell, rng=rng),
            ]
            if config.lstm_relu_position == "after":
                self.layers.append(_ReluOutput())
            self.layers += [
                nn.Dropout(0.3, rng=rng),
                nn.Dropout(0.3, rng=rng),
                nn.Dense(32, out_units, act=head_act, rng=rng),
            ]
        else:
            self.layers = [
                nn.BiLSTM(dim, 64, return_sequences=True, rng=rng),
                nn.Dropout(0.2, rng=rng),
                nn.BiLSTM(128, 32, return_sequences=True, rng=rng),
                nn.Dropout(0.2, rng=rng),
                nn.BiLSTM(64, 16, return_sequences=False, rng=rng),
                nn.Dropout(0.2, rng=rng),
                nn.Dense(32, out_units, act=head_act, rng=rng),
            ]

    # -- forward / backward ------------------------------------------------

    def forward(self, ids, mask=None, training=False):
        x = self.embedding.forward(ids, training=training)
        for layer in self.layers:
            x = layer.forward(x, mask=mask, training=training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self.embedding.backward(grad)

    def loss(self, pred, targets):
        return nn.loss(pred, targets, self.loss_kind)

    def targets_for(self, labels):
        labels = np.asarray(labels)
        if self.class_head == "softmax2":
            out = np.zeros((labels.size, 2))
            out[np.arange(labels.size), labels] = 1.0
            return out
        return labels.reshape(-1, 1).astype(np.float64)

    def positive_proba(self, pred):
        if self.class_head == "softmax2":
            return pred[:, 1]
        return pred[:, 0]

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        """Trainable parameters, optimizer-facing."""
        params = self.embedding.parameters()
        for layer in self.layers:
            params = params + layer.parameters()
        return params

    def state_parameters(self):
        """All parameters including a frozen embedding, in save order."""
        params = [self.embedding.W]
        for layer in self.layers:
            for p in layer.parameters():
                params.append(p)
        return params

    def parameter_count(self):
        return sum(p.value.size for p in self.parameters())

    # -- data plumbing -------------------------------------------------------

    def encode_sequences(self, sequences):
        tokens = [seqdata.tokenize(s, self.token_k) for s in sequences]
        stream = seqdata.encode_corpus(tokens, self.vocab, self.max_len)
        return stream.encoded, stream.mask

    def predict_proba(self, sequences, batch_size=256):
        ids, mask = self.encode_sequences(sequences)
        out = np.empty(len(sequences))
        for start in range(0, len(sequences), batch_size):
            sl = slice(start, start + batch_size)
            pred = self.forward(ids[sl], mask[sl], training=False)
            out[sl] = self.positive_proba(pred)
        return out


def build_cnn(config: ModelConfig) -> Model:
    if config.architecture != "cnn":
        raise ValueError("config.architecture must be 'cnn'")
    return Model(config)


def build_lstm(config: ModelConfig) -> Model:
    if config.architecture != "lstm":
        raise ValueError("config.architecture must be 'lstm'")
    return Model(config)


def build_bilstm(config: ModelConfig) -> Model:
    if config.architecture != "bilstm":
        raise ValueError("config.architecture must be 'bilstm'")
    return Model(config)


def build_model(config: ModelConfig) -> Model:
    return Model(config)


def _stratified_validation_split(labels, fraction, rng):
    train_idx, val_idx = [], []
    for cls in (0, 1):
        cls_idx = np.flatnonzero(labels == cls)
        order = rng.permutation(cls_idx.size)
        n_val = int(np.floor(fraction * cls_idx.size + 0.5))
        n_val = min(n_val, cls_idx.size - 1)
        val_idx.extend(cls_idx[order[:n_val]])
        train_idx.extend(cls_idx[order[n_val:]])
    return np.sort(np.array(train_idx, int)), np.sort(np.array(val_idx, int))


def _mean_loss(model, ids, mask, targets, batch_size=512):
    total, count = 0.0, 0
    for start in range(0, ids.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        pred = model.forward(ids[sl], mask[sl], training=False)
        value, _ = model.loss(pred, targets[sl])
        n = ids[sl].shape[0]
        total += value * n
        count += n
    return total / count


def train(model: Model, dataset, config: TrainConfig):
    """Mini-batch Adam training with early stopping on validation loss.

    Returns (ModelParams, TrainHistory); the model is left holding the
    returned weights.  A non-finite loss raises TrainingDivergedError with
    the finite part of the history attached.
    """
    records = dataset.records if hasattr(dataset, "records") else dataset
    labels = np.array([r.label for r in records], dtype=np.int64)
    if labels.size == 0:
        raise ValueError("training data is empty")
    if (labels == 0).all() or (labels == 1).all():
        raise ValueError("training data must contain both classes")

    ids, mask = model.encode_sequences([r.sequence for r in records])
    targets = model.targets_for(labels)

    rng = np.random.default_rng(config.seed)
    if config.validation_fraction > 0.0:
        train_idx, val_idx = _stratified_validation_split(
            labels, config.validation_fraction, rng
        )
    else:
        train_idx, val_idx = np.arange(labels.size), np.array([], dtype=int)

    optimizer = nn.Adam(model.parameters(), lr=config.lr)
    history = TrainHistory()
    best_val = np.inf
    best_snapshot = None
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = train_idx[rng.permutation(train_idx.size)]
        epoch_loss, seen = 0.0, 0
        for start in range(0, perm.size, config.batch_size):
            batch = perm[start : start + config.batch_size]
            pred = model.forward(ids[batch], mask[batch], training=True)
            value, dpred = model.loss(pred, targets[batch])
            if not np.isfinite(value):
                history.stopped_epoch = epoch - 1
                raise TrainingDivergedError(
                    f"non-finite training loss in epoch {epoch}", history
                )
            model.backward(dpred)
            optimizer.step()
            epoch_loss += value * batch.size
            seen += batch.size
        history.train_loss.append(epoch_loss / seen)

        if config.track_train_accuracy:
            probs = np.empty(train_idx.size)
            for start in range(0, train_idx.size, 512):
                sl = train_idx[start : start + 512]
                pred = model.forward(ids[sl], mask[sl], training=False)
                probs[start : start + 512] = model.positive_proba(pred)
            history.train_accuracy.append(
                float(np.mean((probs >= 0.5) == (labels[train_idx] == 1)))
            )

        if val_idx.size:
            val = _mean_loss(model, ids[val_idx], mask[val_idx], targets[val_idx])
            if not np.isfinite(val):
                history.stopped_epoch = epoch - 1
                raise TrainingDivergedError(
                    f"non-finite validation loss in epoch {epoch}", history
                )
        else:
            val = np.nan
        history.val_loss.append(val)
        history.stopped_epoch = epoch

        if config.patience is not None:
            if val < best_val:
                best_val = val
                history.best_epoch = epoch
                best_snapshot = [p.value.copy() for p in model.state_parameters()]
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            history.best_epoch = epoch

    if config.patience is not None and best_snapshot is not None:
        for p, saved in zip(model.state_parameters(), best_snapshot):
            p.value[...] = saved

    return snapshot_params(model), history


def snapshot_params(model: Model) -> "ModelParams":
    cfg = model.config
    return ModelParams(
        architecture=model.architecture,
        class_head=model.class_head,
        token_k=model.token_k,
        max_len=model.max_len,
        embedding_mode=cfg.embedding_mode,
        embedding_trainable=cfg.embedding_trainable,
        conv_kernel=cfg.conv_kernel,
        lstm_relu_position=cfg.lstm_relu_position,
        tensors=[(p.name, p.value.copy()) for p in model.state_parameters()],
        embedding_text=embedding_text(cfg.embedding, cfg.embedding_mode, cfg.subwords),
        bucket_blob=bucket_bytes(cfg.subwords) if cfg.subwords is not None else None,
    )


@dataclass
class ModelParams:
    architecture: str
    class_head: str
    token_k: int
    max_len: int
    embedding_mode: str
    embedding_trainable: bool
    conv_kernel: int
    lstm_relu_position: str
    tensors: list[tuple[str, np.ndarray]]
    embedding_text: str
    bucket_blob: bytes | None
    format_version: int = FORMAT_VERSION


def save_params(params: ModelParams, path):
    """Versioned binary container; written atomically."""
    header = {
        "format_version": params.format_version,
        "architecture": params.architecture,
        "class_head": params.class_head,
        "token_k": params.token_k,
        "max_len": params.max_len,
        "embedding_mode": params.embedding_mode,
        "embedding_trainable": params.embedding_trainable,
        "conv_kernel": params.conv_kernel,
        "lstm_relu_position": params.lstm_relu_position,
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in params.tensors
        ],
    }
    emb_bytes = params.embedding_text.encode("utf-8")
    bucket = params.bucket_blob or b""
    header["embedding_text_size"] = len(emb_bytes)
    header["bucket_size"] = len(bucket)
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", params.format_version)
    blob += struct.pack("<Q", len(head_bytes))
    blob += head_bytes
    for _, arr in params.tensors:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += emb_bytes
    blob += bucket

    directory = os.path.dirname(os.path.abspath(str(path)))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".model-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ModelFileError(ValueError):
    """Corrupt, truncated or incompatible model file."""


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    version = struct.unpack("<I", data[4:8])[0]
    if version > FORMAT_VERSION:
        raise ModelFileError(
            f"{path}: format version {version} is newer than supported "
            f"version {FORMAT_VERSION}"
        )
    head_len = struct.unpack("<Q", data[8:16])[0]
    offset = 16
    if len(data) < offset + head_len:
        raise ModelFileError(f"{path}: truncated header")
    try:
        header = json.loads(data[offset : offset + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"{path}: corrupt header: {exc}") from None
    offset += head_len

    tensors = []
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        n_bytes = int(np.prod(shape)) * 8
        if len(data) < offset + n_bytes:
            raise ModelFileError(f"{path}: truncated tensor {spec['name']!r}")
        arr = np.frombuffer(data[offset : offset + n_bytes], dtype="<f8")
        tensors.append((spec["name"], arr.reshape(shape).copy()))
        offset += n_bytes

    emb_size = header["embedding_text_size"]
    bucket_size = header["bucket_size"]
    if len(data) < offset + emb_size + bucket_size:
        raise ModelFileError(f"{path}: truncated embedding section")
    emb_text = data[offset : offset + emb_size].decode("utf-8")
    offset += emb_size
    bucket = data[offset : offset + bucket_size] if bucket_size else None

    return ModelParams(
        architecture=header["architecture"],
        class_head=header["class_head"],
        token_k=header["token_k"],
        max_len=header["max_len"],
        embedding_mode=header["embedding_mode"],
        embedding_trainable=header["embedding_trainable"],
        conv_kernel=header["conv_kernel"],
        lstm_relu_position=header["lstm_relu_position"],
        tensors=tensors,
        embedding_text=emb_text,
        bucket_blob=bytes(bucket) if bucket else None,
        format_version=version,
    )


def apply_params(model: Model, params: ModelParams):
    """Copy saved tensors into a built model; names and shapes must match."""
    if params.architecture != model.architecture:
        raise ModelFileError(
            f"parameters are for architecture {params.architecture!r}, "
            f"model is {model.architecture!r}"
        )
    state = model.state_parameters()
    if len(state) != len(params.tensors):
        raise ModelFileError(
            f"expected {len(state)} tensors, file has {len(params.tensors)}"
        )
    for p, (name, arr) in zip(state, params.tensors):
        if p.name != name or p.value.shape != arr.shape:
            raise ModelFileError(
                f"tensor mismatch: model has {p.name}{p.value.shape}, "
                f"file has {name}{arr.shape}"
            )
        p.value[...] = arr


def model_from_params(params: ModelParams) -> Model:
    """Rebuild a ready-to-predict model from a loaded parameter container."""
    matrix, subwords, mode = parse_embedding_text(
        params.embedding_text, params.bucket_blob
    )
    config = ModelConfig(
        architecture=params.architecture,
        embedding=matrix,
        max_len=params.max_len,
        subwords=subwords,
        embedding_trainable=params.embedding_trainable,
        class_head=params.class_head,
        embedding_mode=mode,
        conv_kernel=params.conv_kernel,
        lstm_relu_position=params.lstm_relu_position,
        seed=0,
    )
    model = Model(config)
    apply_params(model, params)
    return model


def predict(model: Model, params: ModelParams, sequences):
    """Inference-mode positive-class probability per sequence."""
    apply_params(model, params)
    return model.predict_proba(sequences)
