"""Skip-gram embeddings with negative sampling over the three-copy stream.

Three trainers share one update loop:

* skip: classic skip-gram, a single output block for all context offsets.
* sskip: order-aware skip-gram with ``2 * window`` position-specific output
  blocks, selected by the signed offset of the context token.
* subword: the center token's input vector is the average of its character
  ngram vectors, so vectors can be composed for words never indexed.

Negative samples are drawn from the unigram distribution raised to 0.75 via
a precomputed sampling table. The learning rate decays linearly to 1e-4 of
its initial value over all epochs. Single-threaded training is bit
deterministic under a fixed seed; with more threads, sentence chunks update
the shared parameters without synchronization and only statistical
properties are reproducible.

Embedding text format: first line ``count dim``, then one ``token v1 .. vd``
row per token.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import SubwordIndex, Vocabulary
from .dataset import TypeSystem
from .errors import DataError, NumericError

KIND_SKIP = "skip"
KIND_SSKIP = "sskip"
KIND_SUBWORD = "subword"

NEGATIVE_TABLE_SIZE = 1_000_000
UNIGRAM_POWER = 0.75
MIN_LR_FRACTION = 1e-4


@dataclass
class SgnsConfig:
    dim: int = 200
    negatives: int = 10
    window: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 1
    positional: bool = False    # True selects the order-aware variant
    dynamic_window: bool = True  # shrink window uniformly in [1, window]
    threads: int = 1
    table_size: int = NEGATIVE_TABLE_SIZE
    # pairs vectorized per update; within a batch updates use the same
    # stale parameters, so keep it small relative to the vocabulary
    batch_pairs: int = 256

    def __post_init__(self):
        if self.dim <= 0 or self.negatives < 1 or self.window < 1:
            raise DataError("dim must be positive, negatives and window >= 1")
        if self.epochs < 1 or self.learning_rate <= 0:
            raise DataError("epochs and learning_rate must be positive")
        if self.batch_pairs < 1 or self.table_size < 1:
            raise DataError("batch_pairs and table_size must be positive")


@dataclass
class EmbeddingStore:
    """Fixed-dimension vectors for a set of tokens, all finite."""

    kind: str
    dim: int
    tokens: list[str]
    matrix: np.ndarray
    subwords: SubwordIndex | None = None
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if self.matrix.shape != (len(self.tokens), self.dim):
            raise NumericError(f"matrix shape {self.matrix.shape} does not "
                               f"match {len(self.tokens)} tokens of dim {self.dim}")
        if not np.all(np.isfinite(self.matrix)):
            raise NumericError("non-finite entries in embedding matrix")
        if self.kind == KIND_SUBWORD and self.subwords is None:
            raise DataError("subword store needs its ngram index")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __len__(self) -> int:
        return len(self.tokens)

    def get(self, token: str) -> np.ndarray | None:
        i = self.index.get(token)
        return None if i is None else self.matrix[i]

    def word_vector(self, word: str, flags: list[str] | None = None) -> np.ndarray | None:
        """Vector for a word; subword stores compose it from ngram pieces.

        Returns None for a plain store that does not know the word. For a
        subword store a word whose every ngram is unindexed yields the zero
        vector and a flag.
        """
        if self.kind != KIND_SUBWORD:
            return self.get(word)
        ids = self.subwords.ngram_ids(word)
        if not ids:
            if flags is not None:
                flags.append(f"no indexed ngrams for {word!r}")
            return np.zeros(self.dim)
        return self.matrix[ids].mean(axis=0)


def save_embeddings(store: EmbeddingStore, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(store.tokens)} {store.dim}\n")
        for tok, row in zip(store.tokens, store.matrix):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path, kind: str = KIND_SKIP,
                    subwords: SubwordIndex | None = None) -> EmbeddingStore:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: bad embedding header")
        count, dim = int(header[0]), int(header[1])
        tokens: list[str] = []
        matrix = np.empty((count, dim))
        for i in range(count):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise DataError(f"{path}: row {i + 2} has {len(parts) - 1} "
                                f"values, expected {dim}")
            tokens.append(parts[0])
            matrix[i] = [float(x) for x in parts[1:]]
    return EmbeddingStore(kind=kind, dim=dim, tokens=tokens, matrix=matrix,
                          subwords=subwords)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors map to 0 by convention."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise NumericError(f"cosine dim mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def type_cosine_vector(entity_id: str, store: EmbeddingStore,
                       ts: TypeSystem) -> np.ndarray:
    """Cosine of the entity vector against every type vector, in type order."""
    ev = store.get(entity_id)
    if ev is None:
        raise DataError(f"no embedding for entity {entity_id!r}")
    out = np.empty(len(ts))
    for i, t in enumerate(ts.types):
        tv = store.get(t)
        if tv is None:
            raise DataError(f"no embedding for type {t!r}")
        out[i] = cosine(ev, tv)
    return out


def _unigram_table(vocab: Vocabulary, size: int) -> np.ndarray:
    tokens = vocab.tokens
    weights = np.array([vocab.counts[t] for t in tokens], dtype=float)
    weights **= UNIGRAM_POWER
    cumulative = np.cumsum(weights)
    cumulative /= cumulative[-1]
    targets = (np.arange(size) + 0.5) / size
    return np.searchsorted(cumulative, targets).astype(np.int64)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


class _Composer:
    """Maps center-token ids to input vectors, plain or ngram-averaged."""

    def __init__(self, n_inputs: int, dim: int, rng: np.random.Generator,
                 ngram_lists: list[np.ndarray] | None):
        self.w_in = (rng.random((n_inputs, dim)) - 0.5) / dim
        self.ngram_lists = ngram_lists

    def trainable(self, token_id: int) -> bool:
        if self.ngram_lists is None:
            return True
        return self.ngram_lists[token_id].size > 0

    def forward(self, centers: np.ndarray):
        if self.ngram_lists is None:
            return self.w_in[centers], None
        pieces = [self.ngram_lists[c] for c in centers]
        lengths = np.array([p.size for p in pieces], dtype=np.int64)
        flat = np.concatenate(pieces)
        seg = np.repeat(np.arange(len(centers)), lengths)
        v = np.zeros((len(centers), self.w_in.shape[1]))
        np.add.at(v, seg, self.w_in[flat])
        v /= lengths[:, None]
        return v, (flat, seg, lengths)

    def backward(self, centers: np.ndarray, dv: np.ndarray, cache) -> None:
        if self.ngram_lists is None:
            np.add.at(self.w_in, centers, dv)
            return
        flat, seg, lengths = cache
        np.add.at(self.w_in, flat, dv[seg] / lengths[seg][:, None])


class _SgnsState:
    def __init__(self, vocab: Vocabulary, cfg: SgnsConfig,
                 subwords: SubwordIndex | None):
        self.vocab_size = len(vocab)
        self.blocks = 2 * cfg.window if cfg.positional else 1
        rng = np.random.default_rng(cfg.seed)
        ngram_lists = None
        n_inputs = self.vocab_size
        if subwords is not None:
            tokens = vocab.tokens
            ngram_lists = [np.asarray(subwords.ngram_ids(t), dtype=np.int64)
                           for t in tokens]
            n_inputs = len(subwords)
        self.composer = _Composer(n_inputs, cfg.dim, rng, ngram_lists)
        self.w_out = np.zeros((self.blocks * self.vocab_size, cfg.dim))
        self.table = _unigram_table(vocab, cfg.table_size)


def _block_of(offset: int, window: int, positional: bool) -> int:
    if not positional:
        return 0
    return offset + window if offset < 0 else offset + window - 1


def iter_context_pairs(ids: list[int], window: int, positional: bool,
                       dynamic_window: bool = True,
                       rng: np.random.Generator | None = None):
    """Yield (center, context, output block) triples for one sentence.

    With ``dynamic_window`` the effective window shrinks uniformly in
    [1, window] per center token, as in standard skip-gram training. The
    block index is 0 for the bag-of-words variant and selected by the
    signed offset of the context token for the order-aware one.
    """
    n = len(ids)
    for i, center in enumerate(ids):
        if dynamic_window:
            if rng is None:
                raise NumericError("dynamic window needs a generator")
            b = int(rng.integers(1, window + 1))
        else:
            b = window
        for j in range(max(0, i - b), min(n, i + b + 1)):
            if j == i:
                continue
            yield center, ids[j], _block_of(j - i, window, positional)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _epoch_pairs(tok: np.ndarray, sent: np.ndarray, cfg: SgnsConfig,
                 rng: np.random.Generator):
    """Vectorized (center, context, block) arrays for one epoch.

    Produces the same pair multiset as iter_context_pairs over every
    sentence, ordered by center position so updates keep corpus locality.
    """
    n = tok.size
    if cfg.dynamic_window:
        b = rng.integers(1, cfg.window + 1, size=n)
    else:
        b = np.full(n, cfg.window, dtype=np.int64)
    centers, contexts, blocks, order = [], [], [], []
    for delta in range(1, cfg.window + 1):
        if delta >= n:
            break
        same = sent[:n - delta] == sent[delta:]
        right = same & (b[:n - delta] >= delta)
        i = np.nonzero(right)[0]
        centers.append(tok[i])
        contexts.append(tok[i + delta])
        blocks.append(np.full(i.size, _block_of(delta, cfg.window,
                                                cfg.positional)))
        order.append(i)
        left = same & (b[delta:] >= delta)
        j = np.nonzero(left)[0] + delta
        centers.append(tok[j])
        contexts.append(tok[j - delta])
        blocks.append(np.full(j.size, _block_of(-delta, cfg.window,
                                                cfg.positional)))
        order.append(j)
    if not centers:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    centers = np.concatenate(centers)
    contexts = np.concatenate(contexts)
    blocks = np.concatenate(blocks)
    rank = np.argsort(np.concatenate(order), kind="stable")
    return centers[rank], contexts[rank], blocks[rank]


def _train_chunk(tok: np.ndarray, sent: np.ndarray, state: _SgnsState,
                 cfg: SgnsConfig, seed: int, lr_span: tuple[float, float],
                 losses: list[float], trainable_mask: np.ndarray) -> None:
    """One epoch over the flattened chunk, updating parameters in place.

    ``lr_span`` is (fraction of all training done at epoch start, fraction
    done at epoch end); the learning rate decays linearly inside it.
    """
    rng = np.random.default_rng(seed)
    lr0 = cfg.learning_rate
    dim = cfg.dim
    table = state.table
    w_out = state.w_out
    vocab_size = state.vocab_size

    centers, contexts, blocks = _epoch_pairs(tok, sent, cfg, rng)
    if trainable_mask is not None:
        keep = trainable_mask[centers]
        centers, contexts, blocks = centers[keep], contexts[keep], blocks[keep]
    total = centers.size
    loss_sum = 0.0
    frac0, frac1 = lr_span

    for start in range(0, total, cfg.batch_pairs):
        c = centers[start:start + cfg.batch_pairs]
        t = contexts[start:start + cfg.batch_pairs]
        blk = blocks[start:start + cfg.batch_pairs]
        progress = frac0 + (frac1 - frac0) * (start / total)
        lr = lr0 * max(MIN_LR_FRACTION, 1.0 - progress)
        batch = c.size
        neg = table[rng.integers(0, len(table), size=(batch, cfg.negatives))]
        valid = neg != t[:, None]

        v, cache = state.composer.forward(c)
        pos_rows = blk * vocab_size + t
        u_pos = w_out[pos_rows]
        neg_rows = blk[:, None] * vocab_size + neg
        u_neg = w_out[neg_rows]

        s_pos = np.einsum("bd,bd->b", v, u_pos)
        s_neg = np.einsum("bd,bkd->bk", v, u_neg)
        loss_sum -= _log_sigmoid(s_pos).sum()
        loss_sum -= (_log_sigmoid(-s_neg) * valid).sum()

        g_pos = (1.0 - _sigmoid(s_pos)) * lr
        g_neg = -_sigmoid(s_neg) * lr * valid

        dv = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
        rows = np.concatenate([pos_rows, neg_rows.reshape(-1)])
        vals = np.concatenate([g_pos[:, None] * v,
                               (g_neg[:, :, None] * v[:, None, :])
                               .reshape(-1, dim)])
        np.add.at(w_out, rows, vals)
        state.composer.backward(c, dv, cache)
    losses.append(loss_sum)


def _flatten(stream, vocab_index) -> tuple[np.ndarray, np.ndarray]:
    toks: list[int] = []
    sent_ids: list[int] = []
    for si, sentence in enumerate(stream):
        for token in sentence:
            idx = vocab_index.get(token)
            if idx is not None:  # out-of-vocabulary tokens are skipped
                toks.append(idx)
                sent_ids.append(si)
    return (np.asarray(toks, dtype=np.int64),
            np.asarray(sent_ids, dtype=np.int64))


def _run_training(stream, vocab: Vocabulary, cfg: SgnsConfig,
                  subwords: SubwordIndex | None, on_epoch_end):
    if not stream or not any(stream):
        raise DataError("empty token stream")
    state = _SgnsState(vocab, cfg, subwords)
    tok, sent = _flatten(stream, vocab.index)
    if state.composer.ngram_lists is None:
        trainable_mask = None
    else:
        trainable_mask = np.array(
            [lst.size > 0 for lst in state.composer.ngram_lists])

    for epoch in range(cfg.epochs):
        losses: list[float] = []
        span = (epoch / cfg.epochs, (epoch + 1) / cfg.epochs)
        if cfg.threads <= 1:
            _train_chunk(tok, sent, state, cfg, cfg.seed + 31 * epoch, span,
                         losses, trainable_mask)
        else:
            bounds = np.linspace(0, tok.size, cfg.threads + 1, dtype=int)
            # align chunk edges with sentence boundaries
            for k in range(1, cfg.threads):
                while bounds[k] < tok.size and bounds[k] > 0 \
                        and sent[bounds[k]] == sent[bounds[k] - 1]:
                    bounds[k] += 1
            workers = []
            for tid in range(cfg.threads):
                lo, hi = bounds[tid], bounds[tid + 1]
                if lo >= hi:
                    continue
                workers.append(threading.Thread(
                    target=_train_chunk,
                    args=(tok[lo:hi], sent[lo:hi], state, cfg,
                          cfg.seed + 31 * epoch + 7919 * (tid + 1),
                          span, losses, trainable_mask)))
            for w in workers:
                w.start()
            for w in workers:
                w.join()
        if on_epoch_end is not None:
            on_epoch_end(epoch, float(sum(losses)))
    return state


def train_sgns(stream: list[list[str]], vocab: Vocabulary, cfg: SgnsConfig,
               on_epoch_end=None) -> EmbeddingStore:
    """Train token embeddings; returns input-side vectors for every token."""
    state = _run_training(stream, vocab, cfg, None, on_epoch_end)
    kind = KIND_SSKIP if cfg.positional else KIND_SKIP
    return EmbeddingStore(kind=kind, dim=cfg.dim, tokens=vocab.tokens,
                          matrix=state.composer.w_in.copy())


def train_subword_sgns(stream: list[list[str]], vocab: Vocabulary,
                       subwords: SubwordIndex, cfg: SgnsConfig,
                       on_epoch_end=None) -> EmbeddingStore:
    """Train ngram embeddings; word vectors are averages of their ngrams.

    The returned store holds one vector per indexed ngram. Use
    ``word_vector`` to compose a word, including words never seen during
    training, as long as at least one of their ngrams is indexed.
    """
    if len(subwords) == 0:
        raise DataError("empty subword index")
    state = _run_training(stream, vocab, cfg, subwords, on_epoch_end)
    grams = [""] * len(subwords)
    for g, i in subwords.index.items():
        grams[i] = g
    return EmbeddingStore(kind=KIND_SUBWORD, dim=cfg.dim, tokens=grams,
                          matrix=state.composer.w_in.copy(), subwords=subwords)
