"""Skip-gram, CBOW and subword (FastText-style) embedding training.

All three modes share one SGD engine over the negative-sampling logistic
loss.  For a center representation v, a positive context vector u and
negative vectors u_1..u_n the per-step loss is

    L = -log sigmoid(u . v) - sum_j log sigmoid(-u_j . v)

Negatives are drawn from the unigram distribution raised to 0.75; a drawn
negative that coincides with the positive context is masked out of the step.
One SGD step covers one sentence (a peptide): the pair gradients of all its
centers are computed at the pre-step vectors and applied together, which
lets the whole update run vectorized.  The learning rate decays linearly
from lr_initial to lr_initial / 1e4 over all sentence steps of the run.
Everything is float64 and deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .seqdata import PAD_INDEX, PAD_TOKEN, UNK_INDEX, UNK_TOKEN, Vocabulary, build_vocab

MODES = ("skipgram", "cbow", "fasttext")

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 50
    lr_initial: float = 0.025
    mode: str = "skipgram"
    minn: int = 2
    maxn: int = 3
    bucket_count: int = 200_000
    min_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim < 1 or self.window < 1 or self.negatives < 1:
            raise ValueError("dim, window and negatives must all be >= 1")
        if self.mode == "fasttext" and self.minn > self.maxn:
            raise ValueError(f"minn={self.minn} must not exceed maxn={self.maxn}")
        if self.mode == "fasttext" and self.bucket_count < 1:
            raise ValueError("bucket_count must be >= 1")


@dataclass
class EmbeddingMatrix:
    """Input- and context-side vectors for every vocabulary index."""

    input_vectors: np.ndarray  # (vocab, dim)
    output_vectors: np.ndarray  # (vocab, dim)
    vocab: Vocabulary = field(repr=False)

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]


@dataclass
class SubwordIndex:
    """Hashed character n-gram vectors backing subword-composed tokens."""

    bucket_vectors: np.ndarray  # (bucket_count, dim)
    minn: int
    maxn: int
    hash_name: str = "fnv1a32"

    @property
    def bucket_count(self) -> int:
        return self.bucket_vectors.shape[0]


def fnv1a_32(data: str) -> int:
    """32-bit FNV-1a over the UTF-8 bytes; platform independent."""
    h = FNV_OFFSET
    for byte in data.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFF
    return h


def subword_strings(token: str, minn: int, maxn: int) -> list[str]:
    """Boundary-wrapped n-grams of lengths minn..maxn plus the whole token.

    The token is wrapped as '<token>'; duplicates (e.g. the whole token
    reappearing as an n-gram) are emitted once, in first-seen order.
    """
    if not token:
        raise ValueError("token must be non-empty")
    wrapped = f"<{token}>"
    seen: dict[str, None] = {}
    for n in range(minn, maxn + 1):
        for i in range(0, len(wrapped) - n + 1):
            seen.setdefault(wrapped[i : i + n], None)
    seen.setdefault(wrapped, None)
    return list(seen)


def extract_subwords(token: str, minn: int, maxn: int, bucket_count: int) -> list[int]:
    """Hash the subword strings of a token into bucket ids."""
    return [fnv1a_32(s) % bucket_count for s in subword_strings(token, minn, maxn)]


def generate_pairs(tokens, window: int, mode: str, rng):
    """Materialize training instances for one sentence.

    Every position is a center; its context radius is drawn uniformly from
    [1, window] and clipped at the sentence boundaries.  Skip-gram yields
    (center, context) pairs; CBOW yields (context_tuple, center) instances
    (centers with no context are skipped).
    """
    if mode not in ("skipgram", "cbow"):
        raise ValueError(f"mode must be 'skipgram' or 'cbow', got {mode!r}")
    if len(tokens) == 0:
        raise ValueError("tokens must be non-empty")
    out = []
    for i in range(len(tokens)):
        radius = int(rng.integers(1, window + 1))
        lo = max(0, i - radius)
        hi = min(len(tokens), i + radius + 1)
        context = [tokens[j] for j in range(lo, hi) if j != i]
        if mode == "skipgram":
            out.extend((tokens[i], c) for c in context)
        elif context:
            out.append((tuple(context), tokens[i]))
    return out


class NegativeTable:
    """Sampling distribution proportional to frequency^0.75."""

    def __init__(self, frequencies):
        freqs = np.asarray(frequencies, dtype=np.float64)
        ids = np.flatnonzero(freqs > 0)
        if ids.size < 2:
            raise ValueError(
                "negative sampling needs at least 2 distinct tokens with "
                f"nonzero frequency, got {ids.size}"
            )
        weights = freqs[ids] ** 0.75
        self.ids = ids
        self.probs = weights / weights.sum()
        self._cum = np.cumsum(self.probs)

    def probability(self, token_id: int) -> float:
        pos = np.searchsorted(self.ids, token_id)
        if pos < self.ids.size and self.ids[pos] == token_id:
            return float(self.probs[pos])
        return 0.0

    def sample(self, rng, shape):
        u = rng.random(shape)
        return self.ids[np.searchsorted(self._cum, u, side="right")]


def build_negative_table(frequencies) -> NegativeTable:
    """Frequencies may be a dense count array indexed by token id."""
    return NegativeTable(frequencies)


def pair_loss_and_grads(v, u_pos, u_negs):
    """Loss and exact gradients for one (center, context, negatives) instance."""
    from .nn.activations import sigmoid

    s_pos = sigmoid(np.array([u_pos @ v]))[0]
    s_neg = sigmoid(u_negs @ v)
    loss = -np.log(s_pos) - np.sum(np.log1p(-s_neg))
    g_pos = s_pos - 1.0
    dv = g_pos * u_pos + s_neg @ u_negs
    du_pos = g_pos * v
    du_negs = s_neg[:, None] * v[None, :]
    return loss, dv, du_pos, du_negs


class _Corpus:
    """Encoded sentences plus the statistics the trainer needs."""

    def __init__(self, corpus, min_count):
        if not corpus:
            raise ValueError("corpus is empty")
        self.vocab = build_vocab(corpus, min_count)
        self.sentences = [
            np.array([self.vocab.index_of(t) for t in tokens], dtype=np.int64)
            for tokens in corpus
        ]
        size = len(self.vocab)
        freqs = np.zeros(size, dtype=np.int64)
        for sent in self.sentences:
            np.add.at(freqs, sent, 1)
        freqs[PAD_INDEX] = 0
        self.frequencies = freqs
        self.total_tokens = int(sum(len(s) for s in self.sentences))


def _init_vectors(rng, rows, dim):
    vecs = (rng.random((rows, dim)) - 0.5) / dim
    return vecs


def _token_subword_ids(vocab, minn, maxn, bucket_count):
    """Bucket id array per vocabulary index; specials get no subwords."""
    table = [np.empty(0, dtype=np.int64)] * len(vocab)
    for token, idx in vocab.token_to_index.items():
        if token in (PAD_TOKEN, UNK_TOKEN):
            continue
        table[idx] = np.array(
            extract_subwords(token, minn, maxn, bucket_count), dtype=np.int64
        )
    return table


def _scatter_add(matrix, ids, updates):
    """matrix[ids] += updates with duplicate ids accumulated (sorted segments)."""
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sorted_ids)) + 1])
    sums = np.add.reduceat(updates[order], starts, axis=0)
    matrix[sorted_ids[starts]] += sums


def _sentence_windows(n, radii):
    """Pair positions (centers, contexts) for one sentence, ragged radii."""
    centers = [np.empty(0, dtype=np.int64)]
    contexts = [np.empty(0, dtype=np.int64)]
    max_r = min(int(radii.max()), n - 1)
    pos = np.arange(n)
    for d in range(1, max_r + 1):
        wide = radii >= d
        left = pos[d:][wide[d:]]
        centers.append(left)
        contexts.append(left - d)
        right = pos[: n - d][wide[: n - d]]
        centers.append(right)
        contexts.append(right + d)
    return np.concatenate(centers), np.concatenate(contexts)


def _train(corpus, config: EmbeddingConfig):
    data = _Corpus(corpus, config.min_count)
    table = build_negative_table(data.frequencies)
    rng = np.random.default_rng(config.seed)
    dim = config.dim

    vocab_size = len(data.vocab)
    input_vectors = _init_vectors(rng, vocab_size, dim)
    input_vectors[PAD_INDEX] = 0.0
    output_vectors = np.zeros((vocab_size, dim))

    subwords = None
    sub_table = None
    if config.mode == "fasttext":
        buckets = _init_vectors(rng, config.bucket_count, dim)
        subwords = SubwordIndex(buckets, config.minn, config.maxn)
        sub_table = _token_subword_ids(
            data.vocab, config.minn, config.maxn, config.bucket_count
        )

    lr0 = config.lr_initial
    lr_final = lr0 / 1e4
    total_steps = max(config.epochs * len(data.sentences), 1)
    step = 0

    for _ in range(config.epochs):
        for sent in data.sentences:
            lr = lr0 + (lr_final - lr0) * (step / total_steps)
            step += 1
            n = len(sent)
            radii = rng.integers(1, config.window + 1, size=n)
            if n < 2:
                continue
            cpos, xpos = _sentence_windows(n, radii)
            if config.mode == "cbow":
                _cbow_sentence_step(input_vectors, output_vectors, sent,
                                    cpos, xpos, table, rng, config.negatives, lr)
            else:
                _skipgram_sentence_step(
                    input_vectors, output_vectors, subwords, sub_table,
                    sent, cpos, xpos, table, rng, config.negatives, lr,
                )

    matrix = EmbeddingMatrix(input_vectors, output_vectors, data.vocab)
    _assert_finite(matrix, subwords)
    return matrix, subwords


def _compose_centers(input_vectors, buckets, sub_table, center_ids):
    """Subword-composed vector and part count per unique center token."""
    uniq, inverse = np.unique(center_ids, return_inverse=True)
    subs = [sub_table[t] for t in uniq]
    counts = np.array([len(s) for s in subs])
    comp = input_vectors[uniq].copy()
    with_subs = np.flatnonzero(counts)
    if with_subs.size:
        flat = np.concatenate([subs[i] for i in with_subs])
        starts = np.concatenate([[0], np.cumsum(counts[with_subs])[:-1]])
        comp[with_subs] += np.add.reduceat(buckets[flat], starts, axis=0)
    parts = 1.0 + counts
    comp /= parts[:, None]
    return uniq, inverse, subs, parts, comp


def _skipgram_sentence_step(input_vectors, output_vectors, subwords, sub_table,
                            sent, cpos, xpos, table, rng, n_neg, lr):
    """Batched update of all (center, context) pairs of one sentence."""
    center_ids = sent[cpos]
    ctx_ids = sent[xpos]
    if subwords is None:
        v = input_vectors[center_ids]
    else:
        uniq, inverse, subs, parts, comp = _compose_centers(
            input_vectors, subwords.bucket_vectors, sub_table, center_ids
        )
        v = comp[inverse]

    negs = table.sample(rng, (center_ids.size, n_neg))
    keep = negs != ctx_ids[:, None]

    u_pos = output_vectors[ctx_ids]
    u_neg = output_vectors[negs]
    g_pos = _sigmoid(np.einsum("pd,pd->p", u_pos, v)) - 1.0
    g_neg = _sigmoid(np.einsum("pnd,pd->pn", u_neg, v)) * keep

    # context side
    out_ids = np.concatenate([ctx_ids, negs.reshape(-1)])
    out_updates = np.concatenate([
        (-lr) * g_pos[:, None] * v,
        ((-lr) * g_neg[:, :, None] * v[:, None, :]).reshape(-1, v.shape[1]),
    ])
    _scatter_add(output_vectors, out_ids, out_updates)

    # center side
    dv = g_pos[:, None] * u_pos + np.einsum("pn,pnd->pd", g_neg, u_neg)
    if subwords is None:
        _scatter_add(input_vectors, center_ids, (-lr) * dv)
    else:
        # sum pair gradients per unique center, then share equally over the
        # token vector and its subword buckets
        dsum = np.zeros_like(comp)
        _scatter_add(dsum, inverse, dv)
        dsum *= (-lr) / parts[:, None]
        _scatter_add(input_vectors, uniq, dsum)
        counts = (parts - 1.0).astype(np.int64)
        with_subs = np.flatnonzero(counts)
        if with_subs.size:
            flat = np.concatenate([subs[i] for i in with_subs])
            repeated = np.repeat(dsum[with_subs], counts[with_subs], axis=0)
            _scatter_add(subwords.bucket_vectors, flat, repeated)


def _cbow_sentence_step(input_vectors, output_vectors, sent, cpos, xpos,
                        table, rng, n_neg, lr):
    """Batched update: every center predicted from its averaged context."""
    order = np.argsort(cpos, kind="stable")
    cpos = cpos[order]
    xpos = xpos[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(cpos)) + 1])
    centers = cpos[starts]  # unique center positions with >= 1 context
    counts = np.diff(np.append(starts, cpos.size)).astype(np.float64)

    ctx_ids = sent[xpos]
    vbar = np.add.reduceat(input_vectors[ctx_ids], starts, axis=0)
    vbar /= counts[:, None]
    center_ids = sent[centers]

    negs = table.sample(rng, (center_ids.size, n_neg))
    keep = negs != center_ids[:, None]

    u_pos = output_vectors[center_ids]
    u_neg = output_vectors[negs]
    g_pos = _sigmoid(np.einsum("pd,pd->p", u_pos, vbar)) - 1.0
    g_neg = _sigmoid(np.einsum("pnd,pd->pn", u_neg, vbar)) * keep

    out_ids = np.concatenate([center_ids, negs.reshape(-1)])
    out_updates = np.concatenate([
        (-lr) * g_pos[:, None] * vbar,
        ((-lr) * g_neg[:, :, None] * vbar[:, None, :]).reshape(-1, vbar.shape[1]),
    ])
    _scatter_add(output_vectors, out_ids, out_updates)

    # exact gradient of the mean: each context row receives dvbar / m
    dvbar = g_pos[:, None] * u_pos + np.einsum("pn,pnd->pd", g_neg, u_neg)
    dvbar *= (-lr) / counts[:, None]
    _scatter_add(input_vectors, ctx_ids, np.repeat(dvbar, counts.astype(int), axis=0))


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _assert_finite(matrix, subwords):
    if not np.all(np.isfinite(matrix.input_vectors)):
        raise FloatingPointError("embedding training produced non-finite vectors")
    if not np.all(np.isfinite(matrix.output_vectors)):
        raise FloatingPointError("embedding training produced non-finite vectors")
    if subwords is not None and not np.all(np.isfinite(subwords.bucket_vectors)):
        raise FloatingPointError("embedding training produced non-finite vectors")


def train_word2vec(corpus, config: EmbeddingConfig) -> EmbeddingMatrix:
    """Train skip-gram or CBOW vectors; returns the input-side embedding."""
    if config.mode not in ("skipgram", "cbow"):
        raise ValueError(f"train_word2vec needs mode skipgram or cbow, got {config.mode!r}")
    matrix, _ = _train(corpus, config)
    return matrix


def train_fasttext(corpus, config: EmbeddingConfig):
    """Train subword-composed skip-gram vectors; returns (matrix, subwords)."""
    if config.mode != "fasttext":
        config = replace(config, mode="fasttext")
    return _train(corpus, config)


def embedding_for(token: str, matrix: EmbeddingMatrix,
                  subwords: SubwordIndex | None = None) -> np.ndarray:
    """Vector for a token string; PAD is all zeros in both modes."""
    if token == PAD_TOKEN:
        return np.zeros(matrix.dim)
    if subwords is None:
        return matrix.input_vectors[matrix.vocab.index_of(token)].copy()
    if token == UNK_TOKEN:
        return matrix.input_vectors[UNK_INDEX].copy()
    ids = extract_subwords(token, subwords.minn, subwords.maxn, subwords.bucket_count)
    parts = subwords.bucket_vectors[np.array(ids, dtype=np.int64)]
    if token in matrix.vocab:
        own = matrix.input_vectors[matrix.vocab.token_to_index[token]]
        return (own + parts.sum(axis=0)) / (1 + len(ids))
    return parts.mean(axis=0)


def materialize_matrix(vocab: Vocabulary, matrix: EmbeddingMatrix,
                       subwords: SubwordIndex | None = None) -> np.ndarray:
    """Embedding rows aligned to a classifier vocabulary."""
    out = np.zeros((len(vocab), matrix.dim))
    out[UNK_INDEX] = matrix.input_vectors[UNK_INDEX]
    for idx, token in enumerate(vocab.index_to_token):
        if idx in (PAD_INDEX, UNK_INDEX):
            continue
        out[idx] = embedding_for(token, matrix, subwords)
    return out


def save_embedding(matrix: EmbeddingMatrix, path, mode: str,
                   subwords: SubwordIndex | None = None):
    """Write the text vector file (and the binary bucket sidecar for fasttext).

    Header line: ``dim vocab_size mode minn maxn`` followed by one line per
    token.  Floats use repr so the round-trip is exact.
    """
    data = embedding_text(matrix, mode, subwords)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(data)
    if subwords is not None:
        with open(str(path) + ".buckets", "wb") as fh:
            fh.write(bucket_bytes(subwords))
    return data


def bucket_bytes(subwords: SubwordIndex) -> bytes:
    return np.ascontiguousarray(subwords.bucket_vectors, dtype="<f8").tobytes()


def embedding_text(matrix: EmbeddingMatrix, mode: str,
                   subwords: SubwordIndex | None = None) -> str:
    minn = subwords.minn if subwords is not None else 0
    maxn = subwords.maxn if subwords is not None else 0
    lines = [f"{matrix.dim} {len(matrix.vocab)} {mode} {minn} {maxn}"]
    for idx, token in enumerate(matrix.vocab.index_to_token):
        floats = " ".join(repr(float(x)) for x in matrix.input_vectors[idx])
        lines.append(f"{token} {floats}")
    return "\n".join(lines) + "\n"


def parse_embedding_text(text: str, bucket_blob: bytes | None = None):
    """Inverse of embedding_text; output-side vectors come back as zeros."""
    lines = text.strip("\n").split("\n")
    head = lines[0].split()
    if len(head) != 5:
        raise ValueError("malformed embedding header")
    dim, vocab_size = int(head[0]), int(head[1])
    mode, minn, maxn = head[2], int(head[3]), int(head[4])
    if mode not in MODES:
        raise ValueError(f"unknown embedding mode {mode!r}")
    if len(lines) - 1 != vocab_size:
        raise ValueError(
            f"embedding file declares {vocab_size} tokens but has {len(lines) - 1}"
        )
    tokens = []
    vectors = np.empty((vocab_size, dim))
    for row, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(f"malformed embedding row {row}")
        tokens.append(parts[0])
        vectors[row] = [float(x) for x in parts[1:]]
    if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise ValueError("embedding file does not start with PAD/UNK rows")
    real = tokens[2:]
    vocab = Vocabulary(
        token_to_index={t: i for i, t in enumerate(tokens)},
        index_to_token=tuple(tokens),
        k=len(real[0]) if real else 1,
    )
    matrix = EmbeddingMatrix(vectors, np.zeros_like(vectors), vocab)
    subwords = None
    if mode == "fasttext":
        if bucket_blob is None:
            raise ValueError("fasttext embedding requires the bucket sidecar")
        flat = np.frombuffer(bucket_blob, dtype="<f8")
        if flat.size % dim != 0:
            raise ValueError("bucket sidecar size is not a multiple of dim")
        subwords = SubwordIndex(flat.reshape(-1, dim).copy(), minn, maxn)
    return matrix, subwords, mode


def load_embedding(path):
    """Read an embedding text file (+ bucket sidecar when present)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    bucket_blob = None
    head = text.split("\n", 1)[0].split()
    if len(head) == 5 and head[2] == "fasttext":
        with open(str(path) + ".buckets", "rb") as fh:
            bucket_blob = fh.read()
    return parse_embedding_text(text, bucket_blob)
