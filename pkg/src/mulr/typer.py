"""Multi-label entity typer: one-hidden-layer MLP over the representation.

The probability vector for an entity is ``sigmoid(W_out relu(W_in v(e)))``
with one output unit per type. Training minimizes binary cross entropy
summed over types and averaged over the minibatch, with AdaGrad updates.
Word-, entity- and type-level inputs stay frozen; only the MLP and the
character-level encoder receive gradients. After each epoch the dev micro
F1 at threshold 0.5 decides the checkpoint to keep; training stops once
``patience`` epochs pass without a new best.

Decision thresholds are calibrated per type on dev scores and applied with
a strict greater-than, so an uninformative all-0.5 model predicts nothing.

Model files are self-contained: layout, MLP and encoder parameters, sparse
feature indexes, thresholds, and the frozen embedding stores the spec
needs. Layout: magic line ``MULR-MODEL 1``, a JSON metadata line (ints and
strings only), then the named float64 arrays in manifest order, raw
little-endian bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SubwordIndex
from .dataset import DatasetSplit, EntityRecord, TypeSystem
from .embeddings import EmbeddingStore, KIND_SUBWORD
from .errors import DataError, NumericError
from .levels import (Assembler, CharVocab, ClrEncoder, FeatureIndexer,
                     LevelSpec, RepresentationSpec, Resources,
                     build_char_vocab, default_hidden_units)
from .nn import AdaGrad, Dense, relu, sigmoid

PROVISIONAL_THRESHOLD = 0.5


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 1
    patience: int = 5
    hidden_units: int | None = None  # None resolves from the level table

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.patience < 0:
            raise DataError("learning_rate must be positive, patience >= 0")


class TyperModel:
    """MLP with a frozen multi-level input and a trainable character slice."""

    def __init__(self, spec: RepresentationSpec, resources: Resources,
                 assembler: Assembler, clr: ClrEncoder | None,
                 hidden_units: int, rng: np.random.Generator):
        self.spec = spec
        self.resources = resources
        self.assembler = assembler
        self.clr = clr
        self.type_system = resources.type_system
        clr_dim = clr.out_dim if clr is not None else None
        self.layout = assembler.layout(clr_dim)
        self.input_dim = sum(d for _, d in self.layout)
        self.clr_offset = 0
        for lv, (_, dim) in zip(spec.levels, self.layout):
            if lv is spec.clr_level:
                break
            self.clr_offset += dim
        n_types = len(self.type_system)
        self.w_in = Dense.initialize(self.input_dim, hidden_units, rng)
        self.w_out = Dense.initialize(hidden_units, n_types, rng)
        self.thresholds = np.full(n_types, PROVISIONAL_THRESHOLD)
        self.flags: list[str] = []
        self.dev_metric: float | None = None
        self._h_pre = None

    # -- parameter plumbing ------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {"w_in.W": self.w_in.W, "w_in.b": self.w_in.b,
               "w_out.W": self.w_out.W, "w_out.b": self.w_out.b}
        if self.clr is not None:
            out.update({f"clr.{k}": v for k, v in self.clr.params().items()})
        return out

    def grad_dict(self) -> dict[str, np.ndarray]:
        out = {"w_in.W": self.w_in.grads["W"], "w_in.b": self.w_in.grads["b"],
               "w_out.W": self.w_out.grads["W"], "w_out.b": self.w_out.grads["b"]}
        if self.clr is not None:
            out.update({f"clr.{k}": v for k, v in self.clr.grad_dict().items()})
        return out

    def zero_grad(self) -> None:
        self.w_in.zero_grad()
        self.w_out.zero_grad()
        if self.clr is not None:
            self.clr.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in self.params().items():
            v[...] = snap[k]

    # -- forward -----------------------------------------------------------

    def compose(self, frozen: np.ndarray, char_ids: np.ndarray | None) -> np.ndarray:
        """Insert the encoder output into the frozen layout hole."""
        if self.clr is None:
            return frozen
        clr_out = self.clr.forward(char_ids)
        pos = self.clr_offset
        return np.concatenate([frozen[:, :pos], clr_out, frozen[:, pos:]],
                              axis=1)

    def forward(self, v: np.ndarray) -> np.ndarray:
        """Probability vector(s) for assembled representation(s)."""
        v = np.asarray(v, dtype=float)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[None]
        if v.shape[1] != self.input_dim:
            raise NumericError(f"typer expected dim {self.input_dim}, "
                               f"got {v.shape[1]}")
        h_pre = self.w_in.forward(v)
        self._h_pre = h_pre
        p = sigmoid(self.w_out.forward(relu(h_pre)))
        return p[0] if squeeze else p

    def backward_from_probs(self, p: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Gradient pass for mean-over-batch summed-over-types BCE."""
        batch = p.shape[0]
        dz = (p - m) / batch
        dh = self.w_out.backward(dz)
        dh = dh * (self._h_pre > 0.0)
        dv = self.w_in.backward(dh)
        if self.clr is not None:
            pos = self.clr_offset
            self.clr.backward(dv[:, pos:pos + self.clr.out_dim])
        return dv

    # -- inference ---------------------------------------------------------

    def frozen_matrix(self, instances: list[tuple[str, str]]) -> np.ndarray:
        rows = [self.assembler.frozen_vector(eid, name, self.flags)
                for eid, name in instances]
        return np.vstack(rows) if rows else np.zeros((0, 0))

    def char_matrix(self, instances) -> np.ndarray | None:
        if self.clr is None:
            return None
        return self.clr.ids_for([name for _, name in instances])

    def scores_for(self, instances: list[tuple[str, str]]) -> np.ndarray:
        frozen = self.frozen_matrix(instances)
        ids = self.char_matrix(instances)
        return self.forward(self.compose(frozen, ids))

    def score_entity(self, entity: EntityRecord) -> np.ndarray:
        return self.scores_for([(entity.id, entity.names[0])])[0]

    def label_matrix(self, entities_or_instances) -> np.ndarray:
        index = self.type_system.index
        out = np.zeros((len(entities_or_instances), len(self.type_system)))
        for row, item in enumerate(entities_or_instances):
            gold = item.gold_types if isinstance(item, EntityRecord) else item
            for t in gold:
                out[row, index[t]] = 1.0
        return out


def predict(model: TyperModel, entity: EntityRecord) -> set[str]:
    """Types whose probability strictly exceeds the calibrated threshold."""
    p = model.score_entity(entity)
    return {t for i, t in enumerate(model.type_system.types)
            if p[i] > model.thresholds[i]}


def predict_with_scores(model: TyperModel,
                        entity: EntityRecord) -> list[tuple[str, float]]:
    p = model.score_entity(entity)
    chosen = [(t, float(p[i])) for i, t in enumerate(model.type_system.types)
              if p[i] > model.thresholds[i]]
    return sorted(chosen, key=lambda ts: (-ts[1], ts[0]))


def _micro_f1_arrays(pred: np.ndarray, gold: np.ndarray) -> float:
    tp = float(np.sum(pred * gold))
    fp = float(np.sum(pred * (1.0 - gold)))
    fn = float(np.sum((1.0 - pred) * gold))
    denom = 2 * tp + fp + fn
    if denom == 0.0:
        return 1.0
    return 2 * tp / denom


def train_instances(split: DatasetSplit) -> list[tuple[EntityRecord, str]]:
    """One instance per (train entity, name) pair, types shared."""
    out = []
    for e in split.train:
        for name in e.names:
            out.append((e, name))
    return out


def train(split: DatasetSplit, spec: RepresentationSpec, resources: Resources,
          cfg: TrainConfig, on_epoch_end=None) -> TyperModel:
    """Fit the typer; returns the best-on-dev checkpoint."""
    insts = train_instances(split)
    if not insts:
        raise DataError("no training instances")
    rng = np.random.default_rng(cfg.seed)
    train_names = [name for _, name in insts]
    assembler = Assembler(spec, resources).fit(train_names)
    clr = None
    clr_level = spec.clr_level
    if clr_level is not None:
        char_vocab = build_char_vocab(train_names)
        clr = ClrEncoder(clr_level, char_vocab, rng, combo_kinds=spec.kinds)
    hidden = cfg.hidden_units or default_hidden_units(spec.kinds)
    model = TyperModel(spec, resources, assembler, clr, hidden, rng)

    pairs = [(e.id, name) for e, name in insts]
    frozen = model.frozen_matrix(pairs)
    char_ids = model.char_matrix(pairs)
    labels = model.label_matrix([e for e, _ in insts])

    dev_pairs = [(e.id, e.names[0]) for e in split.dev]
    dev_frozen = model.frozen_matrix(dev_pairs) if dev_pairs else None
    dev_ids = model.char_matrix(dev_pairs) if dev_pairs else None
    dev_gold = model.label_matrix(list(split.dev)) if dev_pairs else None

    opt = AdaGrad(learning_rate=cfg.learning_rate)
    n = len(insts)
    best_metric = -1.0
    best_epoch = 0
    best_snap = model.snapshot()
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = perm[start:start + cfg.batch_size]
            x = model.compose(frozen[rows],
                              None if char_ids is None else char_ids[rows])
            p = model.forward(x)
            m = labels[rows]
            q = np.clip(p, 1e-7, 1.0 - 1e-7)
            epoch_loss += float(-np.sum(m * np.log(q)
                                        + (1.0 - m) * np.log(1.0 - q)))
            model.zero_grad()
            model.backward_from_probs(p, m)
            opt.step(model.params(), model.grad_dict())
        if dev_frozen is not None:
            dev_p = model.forward(model.compose(dev_frozen, dev_ids))
            metric = _micro_f1_arrays(
                (dev_p > PROVISIONAL_THRESHOLD).astype(float), dev_gold)
        else:
            metric = -epoch_loss
        if on_epoch_end is not None:
            on_epoch_end(epoch, epoch_loss, metric)
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_snap = model.snapshot()
        if epoch - best_epoch >= cfg.patience:
            break
    model.restore(best_snap)
    model.dev_metric = best_metric
    return model


def threshold_f1(scores: np.ndarray, labels: np.ndarray,
                 theta: float) -> float:
    """F1 of the strict-greater-than decision at ``theta`` for one type."""
    pred = scores > theta
    tp = float(np.sum(pred * labels))
    denom = 2 * tp + float(np.sum(pred * (1 - labels))) \
        + float(np.sum((~pred) * labels))
    return 2 * tp / denom if denom > 0 else 1.0


def calibrate_from_scores(scores: np.ndarray, gold: np.ndarray,
                          flags: list[str] | None = None,
                          type_names=None) -> np.ndarray:
    """Per-type thresholds maximizing that type's F1 on dev scores.

    Candidates are the midpoints between consecutive distinct scores,
    bracketed by sentinels at 0 and 1, evaluated in ascending order with
    0.5 appended as the final fallback; the first maximizer wins. A type
    with no dev positives keeps 0.5 and is flagged.
    """
    n_types = scores.shape[1]
    thresholds = np.full(n_types, PROVISIONAL_THRESHOLD)
    for t in range(n_types):
        y = gold[:, t]
        if y.sum() == 0:
            if flags is not None:
                label = type_names[t] if type_names is not None else t
                flags.append(f"no dev positives for type {label!r}; "
                             f"threshold 0.5")
            continue
        s = scores[:, t]
        distinct = np.unique(s)
        edges = np.concatenate([[0.0], distinct, [1.0]])
        candidates = list((edges[:-1] + edges[1:]) / 2.0)
        candidates.append(PROVISIONAL_THRESHOLD)
        best_f1 = -1.0
        best_theta = PROVISIONAL_THRESHOLD
        for theta in candidates:
            f1 = threshold_f1(s, y, theta)
            if f1 > best_f1:
                best_f1 = f1
                best_theta = theta
        thresholds[t] = best_theta
    return thresholds


def calibrate_thresholds(model: TyperModel,
                         dev: list[EntityRecord]) -> np.ndarray:
    """Calibrate the model's per-type thresholds on the dev entities."""
    if not dev:
        raise DataError("no dev entities to calibrate on")
    pairs = [(e.id, e.names[0]) for e in dev]
    scores = model.scores_for(pairs)
    gold = model.label_matrix(list(dev))
    model.thresholds = calibrate_from_scores(
        scores, gold, flags=model.flags,
        type_names=model.type_system.types)
    return model.thresholds


# ---------------------------------------------------------------------------
# serialization

_MAGIC = "MULR-MODEL 1"


def _store_meta(store: EmbeddingStore | None):
    if store is None:
        return None
    meta = {"kind": store.kind, "dim": store.dim, "tokens": store.tokens}
    if store.subwords is not None:
        meta["ngram_bounds"] = [store.subwords.n_min, store.subwords.n_max]
    return meta


def _store_from_meta(meta, matrix) -> EmbeddingStore | None:
    if meta is None:
        return None
    subwords = None
    if meta["kind"] == KIND_SUBWORD:
        n_min, n_max = meta["ngram_bounds"]
        subwords = SubwordIndex(
            index={g: i for i, g in enumerate(meta["tokens"])},
            n_min=n_min, n_max=n_max)
    return EmbeddingStore(kind=meta["kind"], dim=meta["dim"],
                          tokens=list(meta["tokens"]), matrix=matrix,
                          subwords=subwords)


def save_model(model: TyperModel, path, config_hash: str = "",
               seed: int = 0) -> None:
    res = model.resources
    arrays: dict[str, np.ndarray] = {"thresholds": model.thresholds}
    arrays.update(model.params())
    stores = {}
    for label, store in (("word", res.word_store),
                         ("subword", res.subword_store),
                         ("entity", res.entity_store)):
        stores[label] = _store_meta(store)
        if store is not None:
            arrays[f"store.{label}"] = store.matrix
    meta = {
        "config_hash": config_hash,
        "seed": seed,
        "levels": [{"kind": lv.kind,
                    "options": {k: list(v) if isinstance(v, tuple) else v
                                for k, v in sorted(lv.options.items())}}
                   for lv in model.spec.levels],
        "layout": [[k, d] for k, d in model.layout],
        "types": list(model.type_system.types),
        "parent": dict(sorted(model.type_system.parent.items())),
        "hidden_units": model.w_in.out_dim,
        "char_vocab": list(model.clr.char_vocab.chars) if model.clr else None,
        "clr_kind": model.clr.kind if model.clr else None,
        "indexers": {k: sorted(ix.index, key=ix.index.get)
                     for k, ix in model.assembler.indexers.items()},
        "stores": stores,
        "descriptions": {k: v for k, v in
                         sorted((res.descriptions or {}).items())}
        if res.descriptions is not None else None,
        "idf": None,
        "flags": list(model.flags),
        "arrays": [[name, list(arr.shape)]
                   for name, arr in sorted(arrays.items())],
    }
    if res.idf is not None:
        meta["idf"] = {w: repr(x) for w, x in sorted(res.idf.items())}
    with Path(path).open("wb") as fh:
        fh.write((_MAGIC + "\n").encode("utf-8"))
        fh.write((json.dumps(meta, sort_keys=True, ensure_ascii=False,
                             separators=(",", ":")) + "\n").encode("utf-8"))
        for name, _ in meta["arrays"]:
            fh.write(np.ascontiguousarray(arrays[name],
                                          dtype="<f8").tobytes())


def load_model(path) -> TyperModel:
    with Path(path).open("rb") as fh:
        magic = fh.readline().decode("utf-8").rstrip("\n")
        if magic != _MAGIC:
            raise DataError(f"{path}: not a model file")
        meta = json.loads(fh.readline().decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    ts = TypeSystem(types=tuple(meta["types"]), parent=dict(meta["parent"]))
    stores = {}
    for label in ("word", "subword", "entity"):
        stores[label] = _store_from_meta(meta["stores"][label],
                                         arrays.get(f"store.{label}"))
    idf = None
    if meta["idf"] is not None:
        idf = {w: float(x) for w, x in meta["idf"].items()}
    resources = Resources(type_system=ts, word_store=stores["word"],
                          subword_store=stores["subword"],
                          entity_store=stores["entity"],
                          descriptions=meta["descriptions"], idf=idf)
    spec = RepresentationSpec(levels=tuple(
        LevelSpec(kind=lv["kind"],
                  options={k: tuple(v) if isinstance(v, list) else v
                           for k, v in lv["options"].items()})
        for lv in meta["levels"]))
    assembler = Assembler(spec, resources)
    for kind, names in meta["indexers"].items():
        ix = FeatureIndexer()
        ix.index = {n: i for i, n in enumerate(names)}
        assembler.indexers[kind] = ix
    assembler._fitted = True

    rng = np.random.default_rng(0)
    clr = None
    if meta["clr_kind"] is not None:
        char_vocab = CharVocab(chars=tuple(meta["char_vocab"]))
        clr = ClrEncoder(spec.clr_level, char_vocab, rng,
                         combo_kinds=spec.kinds)
    model = TyperModel(spec, resources, assembler, clr,
                       meta["hidden_units"], rng)
    for name, arr in model.params().items():
        arr[...] = arrays[name]
    model.thresholds = arrays["thresholds"]
    model.flags = list(meta["flags"])
    return model
