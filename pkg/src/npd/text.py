"""Tokenization, frequency-capped vocabulary, and skip-gram embedding pretraining.

The embedding table produced here is the lookup table the encoder consumes;
by default it stays frozen during model training. Skip-gram uses negative
sampling with the unigram^0.75 noise distribution and a linearly decayed
learning rate, processed in vectorized chunks so pretraining on a
~100k-token corpus takes seconds. Everything is deterministic given a seed.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import _sigmoid_stable
from .errors import ConfigError, ContractError, DataError

PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"


def tokenize(text: str, mode: str = "whitespace") -> list[str]:
    """Split text into tokens: one per non-whitespace character, or on whitespace runs."""
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    if mode == "whitespace":
        return text.split()
    raise ConfigError(f"unknown tokenizer mode {mode!r}")


class Vocabulary:
    """Bijection between retained tokens and ids, with PAD and OOV specials.

    Retains the max_size most frequent corpus tokens; frequency ties are
    broken by first occurrence order. PAD has id 0 and OOV id 1; real
    tokens follow.
    """

    def __init__(self, tokens: list[str]):
        self.id_to_token = [PAD_TOKEN, OOV_TOKEN] + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")
        self.pad_id = 0
        self.oov_id = 1

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        oov = self.oov_id
        return [self.token_to_id.get(t, oov) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def content_hash(self) -> str:
        """Stable digest of the token list, used to pair checkpoints with embeddings."""
        blob = "\n".join(self.id_to_token).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocab(corpus: list[list[str]], max_size: int) -> Vocabulary:
    """Keep the max_size most frequent tokens; ties go to the earlier first occurrence."""
    if max_size < 1:
        raise ConfigError(f"max_size must be >= 1, got {max_size}")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    order = 0
    for tokens in corpus:
        for tok in tokens:
            if tok not in counts:
                counts[tok] = 0
                first_seen[tok] = order
                order += 1
            counts[tok] += 1
    if not counts:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    return Vocabulary(ranked[:max_size])


@dataclass
class EmbeddingTable:
    """Dense [vocab_size x embed_dim] float64 embedding matrix."""

    matrix: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class SkipGramConfig:
    embed_dim: int = 100
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def validate(self):
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.negatives_per_positive < 1:
            raise ConfigError(f"negatives_per_positive must be >= 1, got {self.negatives_per_positive}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")


# small enough that SGD stays stochastic on desk-scale corpora, large enough
# for the vectorized update to amortize numpy dispatch
_CHUNK = 512


def _epoch_pairs(corpus, window, rng):
    """(center, context) id pairs for one epoch, with per-position dynamic windows."""
    centers, contexts = [], []
    for ids in corpus:
        n = len(ids)
        if n < 2:
            continue
        spans = rng.integers(1, window + 1, size=n)
        for i in range(n):
            lo = max(0, i - int(spans[i]))
            hi = min(n, i + int(spans[i]) + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(ids[i])
                    contexts.append(ids[j])
    return np.asarray(centers, dtype=np.int64), np.asarray(contexts, dtype=np.int64)


def train_skipgram(corpus: list[list[int]], vocab_size: int, cfg: SkipGramConfig) -> EmbeddingTable:
    """Train skip-gram-with-negative-sampling embeddings over encoded posts.

    Deterministic given cfg.seed; zero epochs (or a corpus with no
    co-occurring pairs) returns the random initialization unchanged.
    """
    cfg.validate()
    if not corpus or all(len(ids) == 0 for ids in corpus):
        raise ConfigError("skip-gram corpus is empty")
    for ids in corpus:
        for i in ids:
            if not 0 <= i < vocab_size:
                raise ContractError(f"token id {i} out of range for vocab size {vocab_size}")

    rng = np.random.default_rng(cfg.seed)
    d = cfg.embed_dim
    w_in = (rng.random((vocab_size, d)) - 0.5) / d
    w_out = np.zeros((vocab_size, d))

    counts = np.zeros(vocab_size)
    for ids in corpus:
        np.add.at(counts, ids, 1.0)
    noise = counts**0.75
    total_noise = noise.sum()
    if total_noise == 0:
        return EmbeddingTable(w_in)
    noise_cdf = np.cumsum(noise / total_noise)

    # pair count varies per epoch with the dynamic windows; an upper bound
    # keeps the linear decay schedule deterministic and monotone
    approx_total = max(1, sum(len(ids) * 2 * cfg.window for ids in corpus)) * max(1, cfg.epochs)
    k = cfg.negatives_per_positive
    lr0 = cfg.learning_rate
    processed = 0

    post_order = np.arange(len(corpus))
    for _ in range(cfg.epochs):
        rng.shuffle(post_order)
        centers, contexts = _epoch_pairs([corpus[i] for i in post_order], cfg.window, rng)
        for start in range(0, len(centers), _CHUNK):
            c = centers[start : start + _CHUNK]
            o = contexts[start : start + _CHUNK]
            b = len(c)
            lr = max(lr0 * (1.0 - processed / approx_total), lr0 * 1e-4)
            processed += b

            neg = np.searchsorted(noise_cdf, rng.random((b, k)))
            vin = w_in[c]
            vpos = w_out[o]
            vneg = w_out[neg]

            g_pos = _sigmoid_stable(np.einsum("bd,bd->b", vin, vpos)) - 1.0
            g_neg = _sigmoid_stable(np.einsum("bd,bkd->bk", vin, vneg))
            g_neg[neg == o[:, None]] = 0.0  # accidental hits are not negatives

            grad_in = g_pos[:, None] * vpos + np.einsum("bk,bkd->bd", g_neg, vneg)
            np.add.at(w_out, o, -lr * g_pos[:, None] * vin)
            np.add.at(w_out, neg.reshape(-1),
                      (-lr * g_neg[:, :, None] * vin[:, None, :]).reshape(-1, d))
            np.add.at(w_in, c, -lr * grad_in)

    return EmbeddingTable(w_in)


def lookup(table: EmbeddingTable, ids: list[int]) -> np.ndarray:
    """Row-gather: returns an [n x embed_dim] array of embeddings."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.vocab_size):
        raise ContractError(f"embedding id out of range for vocab size {table.vocab_size}")
    return table.matrix[idx].reshape(len(ids), table.embed_dim)


def save_embeddings(path: str, vocab: Vocabulary, table: EmbeddingTable) -> None:
    """Write `<vocab_size> <embed_dim>` then one `token v1 ... vd` line per token.

    Floats are written in shortest round-trip form, so load(save(x)) is
    bit-exact.
    """
    if table.vocab_size != len(vocab):
        raise ContractError(f"table rows {table.vocab_size} != vocab size {len(vocab)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.vocab_size} {table.embed_dim}\n")
        for i, tok in enumerate(vocab.id_to_token):
            vals = " ".join(repr(float(v)) for v in table.matrix[i])
            fh.write(f"{tok} {vals}\n")


def load_embeddings(path: str) -> tuple[Vocabulary, EmbeddingTable]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: malformed embedding header")
        size, dim = int(header[0]), int(header[1])
        tokens, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected token + {dim} values")
            tokens.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(tokens) != size:
        raise DataError(f"{path}: header declares {size} rows, found {len(tokens)}")
    if tokens[:2] != [PAD_TOKEN, OOV_TOKEN]:
        raise DataError(f"{path}: first rows must be {PAD_TOKEN} and {OOV_TOKEN}")
    vocab = Vocabulary(tokens[2:])
    return vocab, EmbeddingTable(np.asarray(rows, dtype=np.float64))
