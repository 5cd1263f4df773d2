"""End-to-end experiment pipeline with per-stage disk caching.

Stages: three-copy corpus -> embeddings -> typer training -> threshold
calibration -> prediction -> evaluation report. Every artifact is keyed by
a hash of the configuration slice and upstream artifacts that produced it,
so reruns with a warm cache load instead of recomputing, and several
configurations sharing an output directory share their embedding caches.
Artifacts that have a free-form format embed the config hash and seed in a
header line; the fixed-format embedding files carry them in a sidecar
``.meta.json``.

Configuration files are flat ``key = value`` INI text with sections
``[paths]``, ``[representation]``, ``[embeddings]``, ``[subword]``,
``[train]`` and ``[run]``. The only environment override honored is
``MULR_THREADS``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import corpus as corpus_mod
from . import dataset as dataset_mod
from .embeddings import (EmbeddingStore, SgnsConfig, KIND_SKIP, KIND_SSKIP,
                         load_embeddings, save_embeddings, train_sgns,
                         train_subword_sgns)
from .errors import DataError, MulrError
from .corpus import build_subword_index, build_vocabulary
from .levels import RepresentationSpec, Resources, build_idf
from .metrics import EvalReport, build_report
from .typer import (TrainConfig, calibrate_thresholds, load_model,
                    predict_with_scores, save_model, train)


@dataclass
class ExperimentConfig:
    corpus_path: Path
    dataset_path: Path
    hierarchy_path: Path
    notable_path: Path
    out_dir: Path
    descriptions_path: Path | None = None
    levels: str = "elr"
    level_options: dict = field(default_factory=dict)
    hidden_units: int | None = None
    embed_mode: str = KIND_SSKIP
    sgns: dict = field(default_factory=dict)
    subword: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 1
    threads: int = 1

    def sgns_config(self) -> SgnsConfig:
        opts = dict(self.sgns)
        opts.pop("min_count", None)
        return SgnsConfig(seed=self.seed, threads=self.threads,
                          positional=self.embed_mode == KIND_SSKIP, **opts)

    def subword_config(self) -> SgnsConfig:
        opts = {k: v for k, v in self.subword.items()
                if k not in ("n_min", "n_max", "ngram_min_count", "min_count")}
        base = {k: v for k, v in self.sgns.items() if k != "min_count"}
        base.update(opts)
        return SgnsConfig(seed=self.seed + 1, threads=self.threads,
                          positional=False, **base)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, hidden_units=self.hidden_units,
                           **self.train)

    def representation(self) -> RepresentationSpec:
        return RepresentationSpec.parse(self.levels, self.level_options)


_INT_KEYS = {"dim", "negatives", "window", "epochs", "min_count", "n_min",
             "n_max", "ngram_min_count", "batch_size", "patience",
             "table_size", "batch_pairs", "padded_len", "char_dim",
             "feature_maps", "hidden_dim", "top_k"}
_FLOAT_KEYS = {"learning_rate"}
_BOOL_KEYS = {"dynamic_window"}


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        return value.strip().lower() in ("1", "true", "yes", "on")
    if key == "widths":
        lo, _, hi = value.partition("-")
        if hi:
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(x) for x in value.split(","))
    return value


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise DataError(f"cannot read config {path}")
    if "paths" not in parser:
        raise DataError(f"{path}: missing [paths] section")
    paths = parser["paths"]
    for key in ("corpus", "dataset", "hierarchy", "notable", "out_dir"):
        if key not in paths:
            raise DataError(f"{path}: missing paths.{key}")
    base = path.parent

    def _p(value):
        p = Path(value)
        return p if p.is_absolute() else base / p

    rep = parser["representation"] if "representation" in parser else {}
    level_options = {k: _coerce(k, v) for k, v in rep.items()
                     if k not in ("levels", "hidden_units")}
    run = parser["run"] if "run" in parser else {}
    cfg = ExperimentConfig(
        corpus_path=_p(paths["corpus"]),
        dataset_path=_p(paths["dataset"]),
        hierarchy_path=_p(paths["hierarchy"]),
        notable_path=_p(paths["notable"]),
        out_dir=_p(paths["out_dir"]),
        descriptions_path=_p(paths["descriptions"])
        if "descriptions" in paths else None,
        levels=rep.get("levels", "elr"),
        level_options=level_options,
        hidden_units=int(rep["hidden_units"]) if "hidden_units" in rep else None,
        embed_mode=parser.get("embeddings", "mode", fallback=KIND_SSKIP),
        sgns={k: _coerce(k, v) for k, v in
              (parser["embeddings"] if "embeddings" in parser else {}).items()
              if k != "mode"},
        subword={k: _coerce(k, v) for k, v in
                 (parser["subword"] if "subword" in parser else {}).items()},
        train={k: _coerce(k, v) for k, v in
               (parser["train"] if "train" in parser else {}).items()},
        seed=int(run.get("seed", 1)),
        threads=int(run.get("threads", 1)),
    )
    env_threads = os.environ.get("MULR_THREADS")
    if env_threads:
        cfg.threads = int(env_threads)
    return cfg


# ---------------------------------------------------------------------------
# hashing and cache helpers


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_sha(path: Path) -> str:
    return _sha(Path(path).read_bytes())


def _key(*parts) -> str:
    return _sha(json.dumps(parts, sort_keys=True,
                           default=str).encode("utf-8"))[:12]


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def _write_meta(path: Path, key: str, seed: int, extra: dict | None = None) -> None:
    meta = {"key": key, "seed": seed}
    if extra:
        meta.update(extra)
    _meta_path(path).write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8")


def _cached(path: Path, key: str) -> bool:
    meta = _meta_path(path)
    if not (path.exists() and meta.exists()):
        return False
    try:
        return json.loads(meta.read_text(encoding="utf-8")).get("key") == key
    except (json.JSONDecodeError, OSError):
        return False


def load_descriptions(path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            ent_id, _, text = line.partition("\t")
            out[ent_id] = corpus_mod.tokenize(text)
    return out


def save_descriptions(descriptions: dict[str, list[str]], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for eid in sorted(descriptions):
            fh.write(f"{eid}\t{' '.join(descriptions[eid])}\n")


# ---------------------------------------------------------------------------
# stages


class PipelineRun:
    """Executes the stages for one configuration, caching into out_dir."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, Path] = {}
        self._stage = "setup"

        def _setup():
            self.type_system = dataset_mod.load_type_system(cfg.hierarchy_path)
            raw_split = dataset_mod.load_dataset(cfg.dataset_path,
                                                 self.type_system)
            self.split = dataset_mod.refine(raw_split, self.type_system)
            self.notable = corpus_mod.load_notable(cfg.notable_path)
            self.descriptions = (load_descriptions(cfg.descriptions_path)
                                 if cfg.descriptions_path else None)
        self._run_stage("setup", _setup)
        self._input_key = _key(
            _file_sha(cfg.corpus_path), _file_sha(cfg.dataset_path),
            _file_sha(cfg.hierarchy_path), _file_sha(cfg.notable_path))

    def _run_stage(self, name: str, fn):
        self._stage = name
        try:
            return fn()
        except MulrError as exc:
            exc.args = (f"stage {name}: {exc}",)
            raise
        except Exception as exc:
            raise MulrError(f"stage {name}: {exc}") from exc

    # corpus ---------------------------------------------------------------

    def tokens_key(self) -> str:
        return _key("tokens", self._input_key)

    def build_tokens(self) -> tuple[Path, Path]:
        """Three-copy token stream plus the protected-token inventory."""
        return self._run_stage("build-corpus", self._build_tokens)

    def _build_tokens(self) -> tuple[Path, Path]:
        key = self.tokens_key()
        tokens_path = self.out / f"tokens-{key}.txt"
        protected_path = self.out / f"protected-{key}.txt"
        if _cached(tokens_path, key) and _cached(protected_path, key):
            return tokens_path, protected_path
        annotated = corpus_mod.load_corpus(self.cfg.corpus_path)
        exclude = frozenset(e.id for e in self.split.test)
        stream = corpus_mod.build_three_copy_corpus(annotated, self.notable,
                                                    exclude)
        with tokens_path.open("w", encoding="utf-8") as fh:
            for sent in stream:
                fh.write(" ".join(sent) + "\n")
        protected = sorted(set(self.notable) | set(self.notable.values())
                           | {e.id for e in self.split.all_entities()})
        protected_path.write_text("\n".join(protected) + "\n",
                                  encoding="utf-8")
        _write_meta(tokens_path, key, self.cfg.seed)
        _write_meta(protected_path, key, self.cfg.seed)
        return tokens_path, protected_path

    # embeddings -----------------------------------------------------------

    def _read_tokens(self, path: Path) -> list[list[str]]:
        with path.open(encoding="utf-8") as fh:
            return [line.split() for line in fh if line.strip()]

    def build_main_store(self) -> EmbeddingStore:
        cfg = self.cfg
        sg = cfg.sgns_config()
        min_count = cfg.sgns.get("min_count", 100)
        key = _key("embed", self.tokens_key(), cfg.embed_mode, min_count,
                   vars(sg))
        path = self.out / f"{cfg.embed_mode}-{key}.vec"
        kind = KIND_SSKIP if sg.positional else KIND_SKIP
        if _cached(path, key):
            return load_embeddings(path, kind=kind)
        tokens_path, protected_path = self.build_tokens()
        stream = self._read_tokens(tokens_path)
        protected = frozenset(
            protected_path.read_text(encoding="utf-8").split())
        vocab = build_vocabulary(stream, min_count, protected)
        store = train_sgns(stream, vocab, sg)
        save_embeddings(store, path)
        _write_meta(path, key, cfg.seed, {"mode": cfg.embed_mode})
        self.artifacts["embeddings"] = path
        return store

    def build_subword_store(self) -> EmbeddingStore:
        cfg = self.cfg
        sg = cfg.subword_config()
        min_count = cfg.subword.get(
            "min_count", cfg.sgns.get("min_count", 100))
        n_min = cfg.subword.get("n_min", 3)
        n_max = cfg.subword.get("n_max", 6)
        ngram_min = cfg.subword.get("ngram_min_count", 5)
        key = _key("subword", self.tokens_key(), min_count, n_min, n_max,
                   ngram_min, vars(sg))
        path = self.out / f"subword-{key}.vec"
        tokens_path, protected_path = self.build_tokens()
        stream = self._read_tokens(tokens_path)
        protected = frozenset(
            protected_path.read_text(encoding="utf-8").split())
        vocab = build_vocabulary(stream, min_count, protected)
        index = build_subword_index(vocab, n_min=n_min, n_max=n_max,
                                    min_count=ngram_min)
        if _cached(path, key):
            return load_embeddings(path, kind="subword", subwords=index)
        store = train_subword_sgns(stream, vocab, index, sg)
        save_embeddings(store, path)
        _write_meta(path, key, cfg.seed, {"mode": "subword"})
        self.artifacts["subword_embeddings"] = path
        return store

    # resources ------------------------------------------------------------

    def build_resources(self, spec: RepresentationSpec) -> Resources:
        kinds = set(spec.kinds)
        need_main = kinds & {"elr", "tc", "wwlr", "avg-des"}
        need_subword = "swlr" in kinds
        word_store = entity_store = subword_store = None
        if need_main:
            main = self._run_stage("embed", self.build_main_store)
            word_store = main
            entity_store = main
        if need_subword:
            subword_store = self._run_stage("embed-subword",
                                            self.build_subword_store)
        idf = None
        if "avg-des" in kinds:
            if self.descriptions is None:
                raise DataError("avg-des level needs a descriptions file")
            idf = build_idf(self.descriptions)
        return Resources(type_system=self.type_system, word_store=word_store,
                         subword_store=subword_store,
                         entity_store=entity_store,
                         descriptions=self.descriptions, idf=idf)

    # model ----------------------------------------------------------------

    def model_key(self) -> str:
        cfg = self.cfg
        return _key("model", self.tokens_key(), cfg.levels,
                    sorted(cfg.level_options.items()), cfg.hidden_units,
                    cfg.embed_mode, sorted(cfg.sgns.items()),
                    sorted(cfg.subword.items()), sorted(cfg.train.items()),
                    cfg.seed)

    def train_model(self):
        key = self.model_key()
        path = self.out / f"model-{key}.bin"
        if _cached(path, key):
            self.artifacts["model"] = path
            return load_model(path)
        spec = self.cfg.representation()
        resources = self.build_resources(spec)
        model = self._run_stage(
            "train", lambda: train(self.split, spec, resources,
                                   self.cfg.train_config()))
        self._run_stage(
            "calibrate", lambda: calibrate_thresholds(model,
                                                      list(self.split.dev)))
        save_model(model, path, config_hash=key, seed=self.cfg.seed)
        _write_meta(path, key, self.cfg.seed)
        self.artifacts["model"] = path
        return model

    # predictions ----------------------------------------------------------

    def predict_test(self) -> Path:
        key = _key("preds", self.model_key())
        path = self.out / f"preds-{key}.tsv"
        if _cached(path, key):
            self.artifacts["predictions"] = path
            return path
        model = self.train_model()

        def _go():
            with path.open("w", encoding="utf-8") as fh:
                fh.write(f"# config={key} seed={self.cfg.seed}\n")
                for e in self.split.test:
                    scored = predict_with_scores(model, e)
                    cell = ",".join(f"{t}:{s:.6f}" for t, s in scored)
                    fh.write(f"{e.id}\t{cell}\n")
        self._run_stage("predict", _go)
        _write_meta(path, key, self.cfg.seed)
        self.artifacts["predictions"] = path
        return path

    # report ---------------------------------------------------------------

    def evaluate(self) -> EvalReport:
        preds_path = self.predict_test()
        key = _key("report", self.model_key())
        tsv_path = self.out / f"report-{key}.tsv"
        txt_path = self.out / f"report-{key}.txt"
        predictions = read_predictions(preds_path)
        report = self._run_stage(
            "evaluate",
            lambda: build_report(predictions, self.split, self.type_system))
        header = f"# config={key} seed={self.cfg.seed}\n"
        tsv_path.write_text(
            header + "\n".join(report.to_tsv_rows()) + "\n", encoding="utf-8")
        txt_path.write_text(header + report.to_text_table() + "\n",
                            encoding="utf-8")
        _write_meta(tsv_path, key, self.cfg.seed)
        self.artifacts["report_tsv"] = tsv_path
        self.artifacts["report_txt"] = txt_path
        return report


def read_predictions(path) -> dict[str, set]:
    out: dict[str, set] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            ent_id, _, cell = line.partition("\t")
            types = set()
            if cell:
                for item in cell.split(","):
                    t, _, _score = item.partition(":")
                    if t:
                        types.add(t)
            out[ent_id] = types
    return out


def run_pipeline(cfg: ExperimentConfig) -> tuple[EvalReport, dict[str, Path]]:
    """Run all stages for one configuration; aborts with the stage name."""
    run = PipelineRun(cfg)
    report = run.evaluate()
    return report, dict(run.artifacts)


def dump_features(entities, names, spec: RepresentationSpec,
                  resources: Resources, path) -> None:
    """Debug dump: one row per (entity, level) with the level's values."""
    from .levels import Assembler
    asm = Assembler(spec, resources)
    if any(k in ("bow", "nsl") for k in spec.kinds):
        asm.fit(list(names))
    with Path(path).open("w", encoding="utf-8") as fh:
        for eid, name in zip(entities, names):
            for lv in spec.levels:
                vec = asm._level_vector(lv, eid, name, None)
                values = " ".join(f"{x:.6f}" for x in vec)
                fh.write(f"{eid}\t{lv.kind}\t{len(vec)}\t{values}\n")
