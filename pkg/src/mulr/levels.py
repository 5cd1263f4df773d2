"""Representation levels for an entity and their concatenation.

Levels
------
* ``clr-forward`` / ``clr-cnn`` / ``clr-lstm`` / ``clr-bilstm``: neural
  encoders over the character matrix of the entity name; trained with the
  typer, everything else below stays frozen.
* ``wwlr`` / ``swlr``: average of name-word embeddings, whole-word lookup
  vs subword composition for out-of-vocabulary words.
* ``elr``: the entity-id token's embedding.
* ``tc``: cosine of the entity embedding against every type embedding.
* ``avg-des``: average embedding of the top-k tf-idf words of the entity's
  KB description.
* ``bow`` / ``nsl``: sparse binary name features (words; ngram/shape/length).

A representation is the concatenation of the requested levels in the given
order; the layout (level, dimension) pairs are recorded so a classifier is
never applied across layouts.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .corpus import SubwordIndex
from .dataset import TypeSystem, name_words
from .embeddings import EmbeddingStore, type_cosine_vector
from .errors import DataError, NumericError
from .nn import ConvMaxPool, Lstm

DEFAULT_PADDED_LENGTH = 40
DEFAULT_TOP_K_DESCRIPTION_WORDS = 20
CHAR_MIN_COUNT = 5

CLR_KINDS = ("clr-forward", "clr-cnn", "clr-lstm", "clr-bilstm")
SPARSE_KINDS = ("bow", "nsl")
LEVEL_KINDS = CLR_KINDS + SPARSE_KINDS + ("wwlr", "swlr", "elr", "tc", "avg-des")

# character embedding sizes per encoder variant
CLR_CHAR_DIMS = {"clr-forward": 15, "clr-cnn": 10, "clr-lstm": 70,
                 "clr-bilstm": 50}
CLR_HIDDEN_DIMS = {"clr-lstm": 70, "clr-bilstm": 50}

# published MLP hidden sizes for known level combinations
_HIDDEN_UNITS = {
    frozenset({"clr-forward"}): 600,
    frozenset({"clr-lstm"}): 300,
    frozenset({"clr-bilstm"}): 200,
    frozenset({"clr-cnn"}): 800,
    frozenset({"nsl"}): 800,
    frozenset({"bow"}): 200,
    frozenset({"bow", "nsl"}): 300,
    frozenset({"wwlr"}): 400,
    frozenset({"swlr"}): 400,
    frozenset({"wwlr", "clr-cnn"}): 700,
    frozenset({"swlr", "clr-cnn"}): 700,
    frozenset({"elr"}): 400,
    frozenset({"elr", "clr-cnn"}): 700,
    frozenset({"elr", "wwlr"}): 600,
    frozenset({"elr", "swlr"}): 600,
    frozenset({"elr", "wwlr", "clr-cnn"}): 700,
    frozenset({"elr", "swlr", "clr-cnn"}): 700,
    frozenset({"elr", "wwlr", "clr-cnn", "tc"}): 900,
    frozenset({"elr", "swlr", "clr-cnn", "tc"}): 900,
    frozenset({"avg-des"}): 400,
    frozenset({"elr", "swlr", "clr-cnn", "tc", "avg-des"}): 1000,
}
DEFAULT_HIDDEN_UNITS = 400


def default_hidden_units(kinds) -> int:
    return _HIDDEN_UNITS.get(frozenset(kinds), DEFAULT_HIDDEN_UNITS)


def default_cnn_bank(kinds) -> tuple[tuple[int, ...], int]:
    """(filter widths, feature maps per width) for a level combination."""
    kinds = frozenset(kinds)
    if kinds == {"clr-cnn"}:
        return tuple(range(1, 9)), 100
    if kinds == {"elr", "clr-cnn"}:
        return tuple(range(1, 8)), 100
    return tuple(range(1, 8)), 50


@dataclass
class LevelSpec:
    """One requested level with its hyperparameters."""

    kind: str
    options: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LEVEL_KINDS:
            raise DataError(f"unknown representation level {self.kind!r}")

    def opt(self, name, default):
        return self.options.get(name, default)


@dataclass
class RepresentationSpec:
    """Ordered levels to concatenate into the entity vector."""

    levels: tuple[LevelSpec, ...]

    def __post_init__(self):
        if not self.levels:
            raise DataError("representation needs at least one level")
        kinds = [lv.kind for lv in self.levels]
        if len(set(kinds)) != len(kinds):
            raise DataError("duplicate representation level")
        if sum(k in CLR_KINDS for k in kinds) > 1:
            raise DataError("at most one character-level encoder per spec")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(lv.kind for lv in self.levels)

    @property
    def clr_level(self) -> LevelSpec | None:
        for lv in self.levels:
            if lv.kind in CLR_KINDS:
                return lv
        return None

    @classmethod
    def parse(cls, text: str, options: dict | None = None) -> "RepresentationSpec":
        """Parse a comma-separated level list such as ``elr,swlr,clr-cnn,tc``."""
        kinds = [k.strip() for k in text.split(",") if k.strip()]
        shared = dict(options or {})
        return cls(levels=tuple(LevelSpec(kind=k, options=dict(shared))
                                for k in kinds))

    def describe(self) -> str:
        return ",".join(self.kinds)


# ---------------------------------------------------------------------------
# character matrices


@dataclass
class CharVocab:
    """Character inventory with reserved pad/unknown/start/end slots."""

    chars: tuple[str, ...]
    PAD = 0
    UNK = 1
    START = 2
    END = 3

    def __post_init__(self):
        self.index = {c: 4 + i for i, c in enumerate(self.chars)}

    @property
    def size(self) -> int:
        return 4 + len(self.chars)

    def ids(self, name: str, padded_len: int) -> np.ndarray:
        """Bracketed, right-truncated, padded character id row.

        Empty names yield just the bracket markers plus padding, which is
        valid but carries no signal.
        """
        if padded_len < 3:
            raise DataError("padded length must be at least 3")
        body = [self.index.get(c, self.UNK) for c in name[:padded_len - 2]]
        row = [self.START] + body + [self.END]
        row.extend([self.PAD] * (padded_len - len(row)))
        return np.array(row, dtype=np.int64)


def build_char_vocab(names, min_count: int = CHAR_MIN_COUNT) -> CharVocab:
    """Printable characters seen at least ``min_count`` times in the names."""
    counts: dict[str, int] = {}
    for name in names:
        for ch in name:
            if ch.isprintable():
                counts[ch] = counts.get(ch, 0) + 1
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    return CharVocab(chars=tuple(kept))


def char_lookup(name: str, table: np.ndarray, vocab: CharVocab,
                padded_len: int, flags: list[str] | None = None) -> np.ndarray:
    """Character matrix for a name: one embedding row per padded position."""
    if not name and flags is not None:
        flags.append("empty name")
    return table[vocab.ids(name, padded_len)]


class ClrEncoder:
    """Trainable character-level sub-network: embedding table plus encoder.

    The table rows and all encoder parameters are tuned during typer
    training; two entities with the same name always get the same output.
    """

    def __init__(self, level: LevelSpec, char_vocab: CharVocab,
                 rng: np.random.Generator,
                 combo_kinds: tuple[str, ...] | None = None):
        self.kind = level.kind
        self.char_vocab = char_vocab
        self.padded_len = int(level.opt("padded_len", DEFAULT_PADDED_LENGTH))
        self.char_dim = int(level.opt("char_dim", CLR_CHAR_DIMS[level.kind]))
        self.table = rng.uniform(-0.05, 0.05,
                                 size=(char_vocab.size, self.char_dim))
        self.grads = {"char_table": np.zeros_like(self.table)}
        self._ids = None
        if self.kind == "clr-forward":
            self.net = None
            self.out_dim = self.padded_len * self.char_dim
        elif self.kind == "clr-cnn":
            widths, maps = default_cnn_bank(combo_kinds or (self.kind,))
            widths = tuple(level.opt("widths", widths))
            maps = int(level.opt("feature_maps", maps))
            self.net = ConvMaxPool([(w, maps) for w in widths],
                                   self.char_dim, rng)
            self.out_dim = self.net.out_dim
        elif self.kind in ("clr-lstm", "clr-bilstm"):
            hidden = int(level.opt("hidden_dim", CLR_HIDDEN_DIMS[self.kind]))
            self.hidden = hidden
            self.net = Lstm.initialize(self.char_dim, hidden, rng)
            if self.kind == "clr-bilstm":
                self.net_back = Lstm.initialize(self.char_dim, hidden, rng)
                self.out_dim = 2 * hidden
            else:
                self.out_dim = hidden
        else:  # pragma: no cover - guarded by LevelSpec
            raise DataError(f"not a character level: {self.kind}")

    def ids_for(self, names: list[str]) -> np.ndarray:
        return np.stack([self.char_vocab.ids(n, self.padded_len)
                         for n in names])

    def params(self) -> dict[str, np.ndarray]:
        out = {"char_table": self.table}
        if self.net is not None:
            out.update({f"enc.{k}": v for k, v in self.net.params().items()})
        if self.kind == "clr-bilstm":
            out.update({f"back.{k}": v
                        for k, v in self.net_back.params().items()})
        return out

    def grad_dict(self) -> dict[str, np.ndarray]:
        out = {"char_table": self.grads["char_table"]}
        if self.net is not None:
            out.update({f"enc.{k}": v for k, v in self.net.grads.items()})
        if self.kind == "clr-bilstm":
            out.update({f"back.{k}": v for k, v in self.net_back.grads.items()})
        return out

    def zero_grad(self) -> None:
        self.grads["char_table"][...] = 0.0
        if self.net is not None:
            self.net.zero_grad()
        if self.kind == "clr-bilstm":
            self.net_back.zero_grad()

    def forward(self, ids: np.ndarray) -> np.ndarray:
        """Encode a batch of character id rows to (batch, out_dim)."""
        if ids.ndim == 1:
            ids = ids[None]
        self._ids = ids
        E = self.table[ids]  # (B, l, d_c)
        if self.kind == "clr-forward":
            return E.reshape(E.shape[0], -1)
        if self.kind == "clr-cnn":
            return self.net.forward(E)
        if self.kind == "clr-lstm":
            _, h_last = self.net.forward(E)
            return h_last
        # bilstm: backward pass starts from the forward chain's last state
        _, h_fwd = self.net.forward(E)
        _, h_bwd = self.net_back.forward(E[:, ::-1], h0=h_fwd)
        return np.concatenate([h_fwd, h_bwd], axis=1)

    def backward(self, dout: np.ndarray) -> None:
        ids = self._ids
        B, l = ids.shape
        if self.kind == "clr-forward":
            dE = dout.reshape(B, l, self.char_dim)
        elif self.kind == "clr-cnn":
            dE = self.net.backward(dout)
        elif self.kind == "clr-lstm":
            dE, _ = self.net.backward(dout)
        else:
            h = self.hidden
            dxs_rev, dh0 = self.net_back.backward(dout[:, h:])
            dE = dxs_rev[:, ::-1]
            dE_fwd, _ = self.net.backward(dout[:, :h] + dh0)
            dE = dE + dE_fwd
        np.add.at(self.grads["char_table"], ids.reshape(-1),
                  dE.reshape(-1, self.char_dim))


# ---------------------------------------------------------------------------
# word level


def wlr(name: str, store: EmbeddingStore,
        flags: list[str] | None = None) -> np.ndarray:
    """Mean of the available name-word vectors.

    Plain stores look words up verbatim with a lowercase fallback; subword
    stores compose out-of-vocabulary words from their ngrams. If no word
    contributes, the zero vector is returned and a flag recorded.
    """
    words = name_words(name)
    vecs = []
    for w in words:
        v = store.word_vector(w)
        if v is None:
            v = store.word_vector(w.lower())
        if v is not None and np.any(v):
            vecs.append(v)
    if not vecs:
        if flags is not None:
            flags.append(f"no word vectors for name {name!r}")
        return np.zeros(store.dim)
    return np.mean(vecs, axis=0)


# ---------------------------------------------------------------------------
# sparse name features


def bow_features(name: str) -> dict[str, int]:
    """Name words, verbatim and lowercased, as binary features."""
    feats: dict[str, int] = {}
    for tok in name_words(name):
        feats[f"w={tok}"] = 1
        feats[f"wl={tok.lower()}"] = 1
    return feats


_PUNCT = set(string.punctuation)


def _shape_char(ch: str) -> str:
    if ch.isupper():
        return "A"
    if ch.islower():
        return "a"
    if ch.isdigit():
        return "7"
    return "."


def _token_shape(tok: str) -> str:
    out = []
    for ch in tok:
        s = _shape_char(ch)
        if not out or out[-1] != s:
            out.append(s)
    return "".join(out)


def _normalize_char(ch: str) -> str:
    if ch.isdigit():
        return "7"
    if ch in _PUNCT:
        return "."
    return ch.lower()


def _length_bucket(n: int) -> str:
    if n <= 5:
        return "1-5"
    if n <= 10:
        return "6-10"
    if n <= 20:
        return "11-20"
    return "21+"


def nsl_features(name: str, n_max: int = 5) -> dict[str, int]:
    """Ngram, shape and length features of the entity name.

    Shape collapses runs of the character classes A/a/7/. per token; raw
    and normalized (lowercased, digits to 7, punctuation to .) character
    ngrams run over the marker-bracketed name so they can cross word
    boundaries.
    """
    if not name:
        return {}
    feats: dict[str, int] = {}
    toks = name_words(name)
    feats[f"shape={' '.join(_token_shape(t) for t in toks)}"] = 1
    feats[f"len={_length_bucket(len(name))}"] = 1
    feats[f"ntok={len(toks)}"] = 1
    bracketed = "^" + name + "$"
    normalized = "^" + "".join(_normalize_char(c) for c in name) + "$"
    for n in range(1, n_max + 1):
        for i in range(len(bracketed) - n + 1):
            feats[f"ng={bracketed[i:i + n]}"] = 1
        for i in range(len(normalized) - n + 1):
            feats[f"nng={normalized[i:i + n]}"] = 1
    return feats


class FeatureIndexer:
    """Stable index over sparse feature names seen during fitting."""

    def __init__(self):
        self.index: dict[str, int] = {}

    def fit(self, feature_dicts) -> "FeatureIndexer":
        names = set()
        for fd in feature_dicts:
            names.update(fd)
        self.index = {n: i for i, n in enumerate(sorted(names))}
        return self

    def __len__(self) -> int:
        return len(self.index)

    def transform(self, fd: dict[str, int]) -> np.ndarray:
        out = np.zeros(len(self.index))
        for name in fd:
            i = self.index.get(name)
            if i is not None:
                out[i] = 1.0
        return out


# ---------------------------------------------------------------------------
# description level


def build_idf(descriptions: dict[str, list[str]]) -> dict[str, float]:
    """Inverse document frequency over the description collection."""
    df: dict[str, int] = {}
    for toks in descriptions.values():
        for w in set(toks):
            df[w] = df.get(w, 0) + 1
    n = max(1, len(descriptions))
    return {w: math.log(n / c) for w, c in df.items()}


def avg_des(description: list[str], idf: dict[str, float],
            store: EmbeddingStore, k: int = DEFAULT_TOP_K_DESCRIPTION_WORDS,
            flags: list[str] | None = None) -> np.ndarray:
    """Mean embedding of the top-k description words by tf-idf.

    Words are ranked by in-description term frequency times idf, ties
    broken lexicographically; the first k ranked words with a usable
    vector contribute. With nothing usable the zero vector is returned
    and a flag recorded.
    """
    if k < 1:
        raise DataError("k must be at least 1")
    tf: dict[str, int] = {}
    for w in description:
        tf[w] = tf.get(w, 0) + 1
    ranked = sorted(tf, key=lambda w: (-tf[w] * idf.get(w, 0.0), w))
    vecs = []
    for w in ranked:
        if len(vecs) == k:
            break
        v = store.word_vector(w)
        if v is None:
            v = store.word_vector(w.lower())
        if v is not None and np.any(v):
            vecs.append(v)
    if not vecs:
        if flags is not None:
            flags.append("no usable description words")
        return np.zeros(store.dim)
    return np.mean(vecs, axis=0)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Resources:
    """Everything frozen that levels may need."""

    type_system: TypeSystem
    word_store: EmbeddingStore | None = None
    subword_store: EmbeddingStore | None = None
    entity_store: EmbeddingStore | None = None
    descriptions: dict[str, list[str]] | None = None
    idf: dict[str, float] | None = None


class Assembler:
    """Computes the frozen part of the representation, in spec order.

    The character level, if present, is a hole in the layout filled by the
    typer's trainable encoder. ``fit`` freezes the sparse feature indexers
    on the training instances.
    """

    def __init__(self, spec: RepresentationSpec, resources: Resources):
        self.spec = spec
        self.resources = resources
        self.indexers: dict[str, FeatureIndexer] = {}
        self._fitted = not any(k in SPARSE_KINDS for k in spec.kinds)

    def fit(self, train_names: list[str]) -> "Assembler":
        for kind in self.spec.kinds:
            if kind == "bow":
                self.indexers["bow"] = FeatureIndexer().fit(
                    bow_features(n) for n in train_names)
            elif kind == "nsl":
                self.indexers["nsl"] = FeatureIndexer().fit(
                    nsl_features(n) for n in train_names)
        self._fitted = True
        return self

    def level_dim(self, level: LevelSpec, clr_dim: int | None = None) -> int:
        kind = level.kind
        res = self.resources
        if kind in CLR_KINDS:
            if clr_dim is None:
                raise NumericError("character level dimension not supplied")
            return clr_dim
        if kind == "wwlr":
            return self._require(res.word_store, "word").dim
        if kind == "swlr":
            return self._require(res.subword_store, "subword").dim
        if kind == "elr":
            return self._require(res.entity_store, "entity").dim
        if kind == "tc":
            return len(res.type_system)
        if kind == "avg-des":
            return self._require(res.word_store, "word").dim
        return len(self.indexers[kind])

    def layout(self, clr_dim: int | None = None) -> list[tuple[str, int]]:
        return [(lv.kind, self.level_dim(lv, clr_dim)) for lv in self.spec.levels]

    @staticmethod
    def _require(store, label):
        if store is None:
            raise DataError(f"representation needs the {label} embedding store")
        return store

    def frozen_vector(self, entity_id: str, name: str,
                      flags: list[str] | None = None) -> np.ndarray:
        """Concatenation of all frozen levels; character levels contribute
        a zero slice to keep the layout stable."""
        if not self._fitted:
            raise DataError("assembler not fitted on training names")
        parts = []
        for lv in self.spec.levels:
            parts.append(self._level_vector(lv, entity_id, name, flags))
        return np.concatenate(parts)

    def _level_vector(self, lv: LevelSpec, entity_id: str, name: str,
                      flags: list[str] | None) -> np.ndarray:
        kind = lv.kind
        res = self.resources
        if kind in CLR_KINDS:
            return np.zeros(0)  # filled by the trainable encoder
        if kind == "wwlr":
            return wlr(name, self._require(res.word_store, "word"), flags)
        if kind == "swlr":
            return wlr(name, self._require(res.subword_store, "subword"), flags)
        if kind == "elr":
            store = self._require(res.entity_store, "entity")
            v = store.get(entity_id)
            if v is None:
                raise DataError(f"no entity embedding for {entity_id!r}")
            return v
        if kind == "tc":
            store = self._require(res.entity_store, "entity")
            return type_cosine_vector(entity_id, store, res.type_system)
        if kind == "avg-des":
            store = self._require(res.word_store, "word")
            desc = (res.descriptions or {}).get(entity_id)
            if desc is None:
                if flags is not None:
                    flags.append(f"no description for {entity_id!r}")
                return np.zeros(store.dim)
            k = int(lv.opt("top_k", DEFAULT_TOP_K_DESCRIPTION_WORDS))
            return avg_des(desc, res.idf or {}, store, k=k, flags=flags)
        if kind not in self.indexers:
            raise DataError("assembler not fitted on training names")
        if kind == "bow":
            return self.indexers["bow"].transform(bow_features(name))
        return self.indexers["nsl"].transform(nsl_features(name))


def assemble(entity_id: str, name: str, spec: RepresentationSpec,
             resources: Resources, clr_vector: np.ndarray | None = None,
             flags: list[str] | None = None, assembler: Assembler | None = None,
             ) -> np.ndarray:
    """One entity's representation vector, levels concatenated in order.

    ``clr_vector`` supplies the character-level slice when the spec
    includes a character encoder (its parameters live with the typer).
    """
    asm = assembler if assembler is not None else Assembler(spec, resources)
    parts = []
    for lv in spec.levels:
        if lv.kind in CLR_KINDS:
            if clr_vector is None:
                raise DataError("spec has a character level but no encoder "
                                "output was supplied")
            parts.append(np.asarray(clr_vector, dtype=float))
        else:
            parts.append(asm._level_vector(lv, entity_id, name, flags))
    return np.concatenate(parts)
