"""Peptide dataset loading, tokenization, vocabularies and holdout splits.

Sequences are strings over the 20 standard amino-acid letters plus the
rare/ambiguous codes B, J, O, U, X, Z.  Tokens are overlapping k-mers
(k=1 gives plain residue tokens).  Vocabulary index 0 is reserved for
padding and index 1 for unknown tokens.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

STANDARD_RESIDUES = "ACDEFGHIKLMNPQRSTVWY"
RARE_RESIDUES = "BJOUXZ"
ALPHABET = frozenset(STANDARD_RESIDUES + RARE_RESIDUES)

MAX_SEQUENCE_LENGTH = 200

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid sequences."""


@dataclass(frozen=True)
class PeptideRecord:
    """One peptide with a binary activity label (1 = anticancer)."""

    id: int
    sequence: str
    label: int

    def __post_init__(self):
        if self.id < 1:
            raise DatasetError(f"record id must be positive, got {self.id}")
        if not 1 <= len(self.sequence) <= MAX_SEQUENCE_LENGTH:
            raise DatasetError(
                f"record {self.id}: sequence length {len(self.sequence)} "
                f"outside [1, {MAX_SEQUENCE_LENGTH}]"
            )
        for ch in self.sequence:
            if ch not in ALPHABET:
                raise DatasetError(
                    f"record {self.id}: invalid residue character {ch!r}"
                )
        if self.label not in (0, 1):
            raise DatasetError(
                f"record {self.id}: label must be 0 or 1, got {self.label!r}"
            )


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of peptide records with class counts."""

    name: str
    records: tuple[PeptideRecord, ...]

    # Class counts for the two benchmark files are fixed; loading a file
    # under one of those names with different counts is an error upstream.
    KNOWN_COUNTS = {"ACPs250": (250, 250), "Independent": (150, 150)}

    @property
    def positive_count(self) -> int:
        return sum(1 for r in self.records if r.label == 1)

    @property
    def negative_count(self) -> int:
        return sum(1 for r in self.records if r.label == 0)

    def __len__(self) -> int:
        return len(self.records)

    def sequences(self) -> list[str]:
        return [r.sequence for r in self.records]

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class Vocabulary:
    """Token <-> dense index mapping with reserved PAD/UNK slots.

    Non-special tokens occupy indices >= 2, assigned by descending corpus
    frequency with lexicographic tie-breaking so builds are deterministic
    across platforms.
    """

    token_to_index: dict[str, int]
    index_to_token: tuple[str, ...]
    k: int

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def index_of(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def tokens(self) -> tuple[str, ...]:
        """Non-special tokens in index order."""
        return self.index_to_token[2:]


@dataclass
class TokenStream:
    """Encoded, right-padded token sequences plus validity masks."""

    tokens: list[list[str]]
    encoded: np.ndarray  # (n_records, max_len) int64
    mask: np.ndarray  # (n_records, max_len) bool
    max_len: int
    vocab: Vocabulary = field(repr=False)


def load_dataset(path, format: str = "csv") -> Dataset:
    """Load a peptide dataset from a CSV or FASTA file.

    CSV files carry a ``sample,content,label`` header and one record per
    line.  FASTA files use ``>id|label`` header lines followed by one or
    more sequence lines.  Record order is preserved from the file.
    """
    if format == "csv":
        records = _load_csv(path)
    elif format == "fasta":
        records = _load_fasta(path)
    else:
        raise DatasetError(f"unknown dataset format {format!r}")
    if not records:
        raise DatasetError(f"{path}: file contains no records")

    name = os.path.splitext(os.path.basename(str(path)))[0]
    ds = Dataset(name=name, records=tuple(records))
    expected = Dataset.KNOWN_COUNTS.get(name)
    if expected is not None:
        actual = (ds.positive_count, ds.negative_count)
        if actual != expected:
            raise DatasetError(
                f"{name}: expected {expected[0]} positive / {expected[1]} "
                f"negative records, found {actual[0]}/{actual[1]}"
            )
    return ds


def _load_csv(path) -> list[PeptideRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        if [c.strip().lower() for c in header] != ["sample", "content", "label"]:
            raise DatasetError(
                f"{path}: expected header 'sample,content,label', got {header!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DatasetError(
                    f"{path}: malformed row at line {lineno}: expected 3 "
                    f"fields, got {len(row)}"
                )
            try:
                rec_id = int(row[0])
                label = int(row[2])
            except ValueError as exc:
                raise DatasetError(
                    f"{path}: malformed row at line {lineno}: {exc}"
                ) from None
            records.append(PeptideRecord(rec_id, row[1].strip(), label))
    return records


def _load_fasta(path) -> list[PeptideRecord]:
    records = []
    rec_id = None
    label = None
    chunks: list[str] = []

    def flush(lineno):
        if rec_id is None:
            return
        if not chunks:
            raise DatasetError(
                f"{path}: record {rec_id} has no sequence (line {lineno})"
            )
        records.append(PeptideRecord(rec_id, "".join(chunks), label))

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                flush(lineno)
                parts = line[1:].split("|")
                if len(parts) != 2:
                    raise DatasetError(
                        f"{path}: malformed FASTA header at line {lineno}: "
                        f"expected '>id|label'"
                    )
                try:
                    rec_id, label = int(parts[0]), int(parts[1])
                except ValueError:
                    raise DatasetError(
                        f"{path}: malformed FASTA header at line {lineno}"
                    ) from None
                chunks = []
            else:
                if rec_id is None:
                    raise DatasetError(
                        f"{path}: sequence data before first header "
                        f"(line {lineno})"
                    )
                chunks.append(line)
        flush("end of file")
    return records


def tokenize(sequence: str, k: int, stride: int = 1) -> list[str]:
    """Split a sequence into overlapping k-mers.

    Emits ``sequence[i*stride : i*stride + k]`` for every full window;
    partial trailing windows are dropped.
    """
    if k < 1:
        raise ValueError(f"token length k must be >= 1, got {k}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if k > len(sequence):
        raise ValueError(
            f"sequence of length {len(sequence)} too short for k={k}"
        )
    return [
        sequence[i : i + k] for i in range(0, len(sequence) - k + 1, stride)
    ]


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary over a corpus of token lists.

    Tokens with frequency >= min_count get indices >= 2 in descending
    frequency order (ties broken lexicographically); everything else maps
    to UNK at encode time.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    if not kept:
        raise ValueError(
            f"no token reaches min_count={min_count}; vocabulary would be empty"
        )
    index_to_token = (PAD_TOKEN, UNK_TOKEN, *kept)
    token_to_index = {t: i for i, t in enumerate(index_to_token)}
    k = len(kept[0])
    return Vocabulary(token_to_index, index_to_token, k)


def encode(tokens: list[str], vocab: Vocabulary, max_len: int):
    """Encode one token list to (indices, mask), padded/truncated to max_len."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    ids = np.full(max_len, PAD_INDEX, dtype=np.int64)
    mask = np.zeros(max_len, dtype=bool)
    n = min(len(tokens), max_len)
    for i in range(n):
        ids[i] = vocab.index_of(tokens[i])
    mask[:n] = True
    return ids, mask


def decode(ids, vocab: Vocabulary) -> list[str]:
    """Inverse of encode for non-PAD positions."""
    return [vocab.index_to_token[i] for i in ids if i != PAD_INDEX]


def encode_corpus(corpus, vocab: Vocabulary, max_len: int) -> TokenStream:
    """Encode a corpus of token lists into a padded TokenStream."""
    encoded = np.empty((len(corpus), max_len), dtype=np.int64)
    mask = np.empty((len(corpus), max_len), dtype=bool)
    for i, tokens in enumerate(corpus):
        encoded[i], mask[i] = encode(tokens, vocab, max_len)
    return TokenStream(list(corpus), encoded, mask, max_len, vocab)


def split_holdout(dataset: Dataset, test_fraction: float, seed: int):
    """Stratified train/test split, deterministic for a fixed seed.

    Each class is shuffled independently with a generator seeded by
    ``seed``; the test partition takes round(test_fraction * class_size)
    records of each class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    pos = [r for r in dataset.records if r.label == 1]
    neg = [r for r in dataset.records if r.label == 0]
    if not pos or not neg:
        raise ValueError("both classes must be present to split")

    rng = np.random.default_rng(seed)
    train_records: list[PeptideRecord] = []
    test_records: list[PeptideRecord] = []
    for group in (pos, neg):
        order = rng.permutation(len(group))
        # round-half-up keeps the partition size platform independent
        n_test = int(np.floor(test_fraction * len(group) + 0.5))
        if n_test == 0 or n_test == len(group):
            raise ValueError(
                f"test_fraction={test_fraction} leaves an empty partition "
                f"for a class of size {len(group)}"
            )
        test_records.extend(group[i] for i in order[:n_test])
        train_records.extend(group[i] for i in order[n_test:])

    train = Dataset(f"{dataset.name}-train", tuple(train_records))
    test = Dataset(f"{dataset.name}-test", tuple(test_records))
    return train, test
