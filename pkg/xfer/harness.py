"""
Ablation grid runner and dataset-size sweep over synthetic language pairs
"""
import csv
import io
import json
import os
import time
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .augment import AugmentConfig, augment_dataset
from .data import LabeledExample
from .embeddings import EmbeddingTable, SgnsConfig, random_table, train_sgns
from .metrics import binary_f1_score, f1_score
from .model import MODES, ModelConfig, ModelParameters, init_model
from .pretraining import OBJECTIVES, PretrainConfig, pretrain
from .seeding import content_digest, derive_rng
from .synthetic import SyntheticLangSpec, SyntheticLanguage, generate_language, language_pair
from .tokenizer import Vocabulary, encode, train_vocab
from .transfer import PRESETS, FineTuneConfig, FreezePlan, fine_tune, predict, swap_embeddings

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
EMBEDDING_INITS = ("word2vec", "random")
CSV_COLUMNS = ["cell_id", "seed", "status", "f1", "binary_f1", "final_dev_f1", "train_examples", "subset_hash"]


class GridError(ValueError):
    """Raised for invalid grids, cells or sweep requests"""


@dataclass
class ExperimentConfig:
    """One cell of the ablation grid"""
    cell_id: str
    weight_init: str = "pretrained-surrogate"
    freeze_plan: str = "token_embeddings"
    embedding_init: str = "word2vec"
    train_size: int = 500
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    objective_for_pretrain: str = "plm"
    epochs: Optional[int] = None
    lr: Optional[float] = None
    augment_copies: int = 0

    def validate(self):
        if not self.cell_id:
            raise GridError("cell_id must be non-empty")
        if self.weight_init not in MODES:
            raise GridError(f"{self.cell_id}: weight_init must be one of {MODES}, got {self.weight_init!r}")
        if self.freeze_plan not in PRESETS:
            raise GridError(f"{self.cell_id}: freeze_plan must be one of {PRESETS}, got {self.freeze_plan!r}")
        if self.embedding_init not in EMBEDDING_INITS:
            raise GridError(f"{self.cell_id}: embedding_init must be one of {EMBEDDING_INITS}, "
                            f"got {self.embedding_init!r}")
        if self.objective_for_pretrain not in OBJECTIVES:
            raise GridError(f"{self.cell_id}: objective_for_pretrain must be one of {OBJECTIVES}")
        if self.train_size < 1:
            raise GridError(f"{self.cell_id}: train_size must be >= 1, got {self.train_size}")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise GridError(f"{self.cell_id}: seeds must be a non-empty list of non-negative ints")
        if self.epochs is not None and self.epochs < 0:
            raise GridError(f"{self.cell_id}: epochs must be >= 0")
        if self.lr is not None and self.lr <= 0:
            raise GridError(f"{self.cell_id}: lr must be positive")
        if self.augment_copies < 0:
            raise GridError(f"{self.cell_id}: augment_copies must be >= 0")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise GridError(f"Unknown cell fields {sorted(unknown)}")
        if "cell_id" not in data:
            raise GridError("Cell is missing cell_id")
        cell = cls(**data)
        cell.seeds = [int(s) for s in cell.seeds]
        cell.validate()
        return cell


def validate_grid(cells: Sequence[ExperimentConfig]):
    seen = set()
    for cell in cells:
        cell.validate()
        if cell.cell_id in seen:
            raise GridError(f"Duplicate cell_id {cell.cell_id!r}")
        seen.add(cell.cell_id)


def load_grid(path: str) -> List[ExperimentConfig]:
    """Read a grid file: a JSON list of cells or {"cells": [...]}"""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    raw = data.get("cells") if isinstance(data, dict) else data
    if not isinstance(raw, list):
        raise GridError(f"Grid file {path} must hold a list of cells")
    cells = [ExperimentConfig.from_dict(item) for item in raw]
    validate_grid(cells)
    return cells


def load_cell(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return ExperimentConfig.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# Settings and languages
# ---------------------------------------------------------------------------

@dataclass
class LanguageSettings:
    grammar_seed: int = 0
    lexicon_size: int = 60
    corpus_size: int = 2000
    dataset_size: int = 1500
    source_seed: int = 1
    target_seed: int = 2
    auxiliary_seed: int = 3
    sentiment_lexicon_frac: float = 0.2
    sentence_len_range: Tuple[int, int] = (5, 10)

    def specs(self) -> Dict[str, SyntheticLangSpec]:
        specs = language_pair(self.grammar_seed, self.lexicon_size, self.corpus_size, self.dataset_size,
                              self.source_seed, self.target_seed, self.auxiliary_seed)
        shared = dict(sentiment_lexicon_frac=self.sentiment_lexicon_frac,
                      sentence_len_range=tuple(self.sentence_len_range))
        return {name: replace(spec, **shared) for name, spec in specs.items()}


@dataclass
class HarnessSettings:
    model_overrides: Dict[str, Any] = field(default_factory=dict)
    source_vocab_size: int = 200
    target_vocab_size: int = 200
    sgns: SgnsConfig = field(default_factory=SgnsConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FineTuneConfig = field(default_factory=lambda: FineTuneConfig(lr=1e-3, epochs=5))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    language: LanguageSettings = field(default_factory=LanguageSettings)
    n_dev: int = 100
    n_test: int = 200
    workers: int = 1

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model_overrides)

    def metadata(self) -> Dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    def sized_for(self, train_size: int) -> "HarnessSettings":
        """Copy whose target dataset leaves a training pool of at least train_size examples"""
        needed = train_size + self.n_dev + self.n_test
        if self.language.dataset_size >= needed:
            return self
        logger.info(f"Raising dataset_size from {self.language.dataset_size} to {needed} for train size {train_size}")
        return replace(self, language=replace(self.language, dataset_size=needed))


@dataclass
class LanguageSuite:
    """Source (with auxiliary parallel pairs), auxiliary and target languages"""
    source: SyntheticLanguage
    auxiliary: SyntheticLanguage
    target: SyntheticLanguage
    n_dev: int
    n_test: int

    @classmethod
    def build(cls, settings: HarnessSettings) -> "LanguageSuite":
        specs = settings.language.specs()
        auxiliary_spec = replace(specs["auxiliary"], dataset_size=0)
        source = generate_language(specs["source"], sibling=auxiliary_spec)
        auxiliary = generate_language(auxiliary_spec, sibling=specs["source"])
        target = generate_language(specs["target"], sibling=specs["source"])
        if settings.n_dev + settings.n_test >= len(target.dataset):
            raise GridError(f"Target dataset of {len(target.dataset)} examples cannot hold "
                            f"{settings.n_test} test + {settings.n_dev} dev examples and a training pool")
        return cls(source=source, auxiliary=auxiliary, target=target, n_dev=settings.n_dev, n_test=settings.n_test)

    @property
    def test(self) -> List[LabeledExample]:
        return self.target.dataset[:self.n_test]

    @property
    def dev(self) -> List[LabeledExample]:
        return self.target.dataset[self.n_test:self.n_test + self.n_dev]

    @property
    def pool(self) -> List[LabeledExample]:
        return self.target.dataset[self.n_test + self.n_dev:]


def train_subset(pool_size: int, size: int, seed: int) -> np.ndarray:
    """Indices of the first `size` pool items in a per-seed order; smaller sizes are prefixes"""
    if size > pool_size:
        raise GridError(f"train_size {size} exceeds the {pool_size} available training examples")
    return derive_rng(seed, "train_subset").permutation(pool_size)[:size]


def subset_hash(indices: np.ndarray) -> str:
    return content_digest(np.sort(indices).astype("<i8").tobytes()).hex()


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    status: str
    f1: Optional[float] = None
    binary_f1: Optional[float] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    train_examples: int = 0
    subset_hash: Optional[str] = None
    error: Optional[str] = None


@dataclass
class CellResult:
    cell_id: str
    config: Dict[str, Any]
    status: str
    seeds: List[SeedResult]
    mean_f1: Optional[float] = None
    min_f1: Optional[float] = None
    max_f1: Optional[float] = None

    @classmethod
    def from_seeds(cls, cell: ExperimentConfig, seeds: List[SeedResult]) -> "CellResult":
        scores = [s.f1 for s in seeds if s.status == "success"]
        return cls(cell_id=cell.cell_id, config=cell.to_dict(), status=_overall_status(seeds), seeds=seeds,
                   mean_f1=float(np.mean(scores)) if scores else None,
                   min_f1=min(scores) if scores else None,
                   max_f1=max(scores) if scores else None)


@dataclass
class Report:
    kind: str
    status: str
    cells: List[CellResult]
    metadata: Dict[str, Any] = field(default_factory=dict)
    format_version: int = REPORT_FORMAT_VERSION

    def cell(self, cell_id: str) -> CellResult:
        for cell in self.cells:
            if cell.cell_id == cell_id:
                return cell
        raise KeyError(cell_id)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Report":
        cells = []
        for raw in data["cells"]:
            seeds = [SeedResult(**s) for s in raw["seeds"]]
            cells.append(CellResult(**{**raw, "seeds": seeds}))
        return cls(kind=data["kind"], status=data["status"], cells=cells, metadata=data.get("metadata", {}),
                   format_version=data.get("format_version", REPORT_FORMAT_VERSION))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for cell in self.cells:
            for result in cell.seeds:
                final_dev = result.history[-1].get("dev_f1") if result.history else None
                writer.writerow({"cell_id": cell.cell_id, "seed": result.seed, "status": result.status,
                                 "f1": result.f1, "binary_f1": result.binary_f1, "final_dev_f1": final_dev,
                                 "train_examples": result.train_examples, "subset_hash": result.subset_hash})
        return buf.getvalue()


def _overall_status(items: Sequence) -> str:
    ok = sum(1 for item in items if item.status == "success")
    if ok == len(items):
        return "success"
    return "partial" if ok > 0 else "error"


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def write_report(report: Report, out_dir: str, timings: Optional[Dict[str, float]] = None):
    """Write report.json, report.csv and timings.json into out_dir, each atomically"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "report.json", report.to_json())
    _atomic_write(out / "report.csv", report.to_csv())
    if timings is not None:
        _atomic_write(out / "timings.json", json.dumps(timings, indent=2, sort_keys=True))
    logger.info(f"Wrote {report.kind} report ({len(report.cells)} cells) to {out}")


def load_report(path: str) -> Report:
    with open(path, "r", encoding="utf-8") as f:
        return Report.from_json(f.read())


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

class ArtifactCache:
    """Vocabularies, tables and pretrained models shared by cells of one run"""

    def __init__(self, suite: LanguageSuite, settings: HarnessSettings):
        self.suite = suite
        self.settings = settings
        self._source_vocab: Dict[str, Vocabulary] = {}
        self._target_vocab: Optional[Vocabulary] = None
        self._tables: Dict[Tuple[str, int], EmbeddingTable] = {}
        self._sources: Dict[Tuple[str, str, int], ModelParameters] = {}

    def source_vocab(self, objective: str) -> Vocabulary:
        # tlm reads source and auxiliary text, so it gets a joint vocabulary
        key = "joint" if objective == "tlm" else "source"
        if key not in self._source_vocab:
            corpus = list(self.suite.source.corpus)
            if key == "joint":
                corpus += self.suite.auxiliary.corpus
            self._source_vocab[key] = train_vocab(corpus, self.settings.source_vocab_size)
        return self._source_vocab[key]

    def target_vocab(self) -> Vocabulary:
        if self._target_vocab is None:
            self._target_vocab = train_vocab(self.suite.target.corpus, self.settings.target_vocab_size)
        return self._target_vocab

    def target_table(self, embedding_init: str, seed: int) -> EmbeddingTable:
        key = (embedding_init, seed)
        if key not in self._tables:
            vocab = self.target_vocab()
            d = self.settings.model_config(len(vocab)).d_model
            if embedding_init == "word2vec":
                corpus = [encode(vocab, line, add_cls_sep=False).ids for line in self.suite.target.corpus]
                self._tables[key] = train_sgns(corpus, vocab, d, replace(self.settings.sgns, seed=seed))
            else:
                self._tables[key] = random_table(vocab, d, seed)
        return self._tables[key]

    def source_model(self, weight_init: str, objective: str, seed: int) -> ModelParameters:
        key = (weight_init, objective, seed)
        if key in self._sources:
            return self._sources[key]
        vocab = self.source_vocab(objective)
        cfg = self.settings.model_config(len(vocab))
        params = init_model(cfg, seed, "random")
        params = params.replace(params.tensors, vocab_hash=vocab.hash)
        if weight_init == "pretrained-surrogate":
            max_len = cfg.max_seq_len
            if objective == "tlm":
                parallel = [(encode(vocab, src, add_cls_sep=False).ids, encode(vocab, aux, add_cls_sep=False).ids)
                            for src, aux in self.suite.source.parallel]
                trained, _ = pretrain(params, [], objective, self.settings.pretrain, seed, parallel=parallel)
            else:
                corpus = [encode(vocab, line, max_len=max_len).ids for line in self.suite.source.corpus]
                trained, _ = pretrain(params, corpus, objective, self.settings.pretrain, seed)
            params = init_model(cfg, seed, "pretrained-surrogate", pretrained=trained)
        self._sources[key] = params
        return params


def run_seed(cell: ExperimentConfig, seed: int, cache: ArtifactCache) -> SeedResult:
    """Pretrain (or init) -> swap -> fine-tune -> test F1 for one seed of one cell"""
    suite, settings = cache.suite, cache.settings
    pool = suite.pool
    indices = train_subset(len(pool), cell.train_size, seed)
    train = [pool[i] for i in indices]
    vocab = cache.target_vocab()

    source = cache.source_model(cell.weight_init, cell.objective_for_pretrain, seed)
    params = swap_embeddings(source, vocab, cache.target_table(cell.embedding_init, seed), seed)
    if cell.augment_copies:
        aug_cfg = replace(settings.augment, copies_per_example=cell.augment_copies)
        train = augment_dataset(train, cache.target_table("word2vec", seed), vocab, aug_cfg,
                                derive_rng(seed, "augment"))

    ft_cfg = replace(settings.finetune, seed=seed,
                     epochs=cell.epochs if cell.epochs is not None else settings.finetune.epochs,
                     lr=cell.lr if cell.lr is not None else settings.finetune.lr)
    plan = FreezePlan.preset(cell.freeze_plan, params)
    params, history = fine_tune(params, plan, train, suite.dev, ft_cfg, vocab)

    preds = predict(params, vocab, suite.test, ft_cfg.max_len, ft_cfg.batch_size)
    labels = [ex.label for ex in suite.test]
    return SeedResult(seed=seed, status="success", f1=f1_score(preds, labels), binary_f1=binary_f1_score(preds, labels),
                      history=history, train_examples=len(train), subset_hash=subset_hash(indices))


def run_cell(cell: ExperimentConfig, cache: ArtifactCache) -> Tuple[CellResult, float]:
    """All seeds of one cell; a failing seed is recorded and the rest proceed"""
    started = time.monotonic()
    results = []
    for seed in cell.seeds:
        try:
            results.append(run_seed(cell, seed, cache))
        except Exception as e:
            logger.error(f"Cell {cell.cell_id} seed {seed} failed: {e}")
            results.append(SeedResult(seed=seed, status="error", error=str(e)))
    result = CellResult.from_seeds(cell, results)
    elapsed = time.monotonic() - started
    logger.info(f"Cell {cell.cell_id} finished ({result.status}): mean F1 {result.mean_f1} in {elapsed:.1f}s")
    return result, elapsed


def _run_cell_isolated(cell: ExperimentConfig, suite: LanguageSuite,
                       settings: HarnessSettings) -> Tuple[CellResult, float]:
    return run_cell(cell, ArtifactCache(suite, settings))


def _run_cells(cells: Sequence[ExperimentConfig], suite: LanguageSuite, settings: HarnessSettings,
               desc: str) -> Tuple[List[CellResult], Dict[str, float]]:
    results: Dict[str, CellResult] = {}
    timings: Dict[str, float] = {}
    if settings.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            futures = {cell.cell_id: pool.submit(_run_cell_isolated, cell, suite, settings) for cell in cells}
            for cell in tqdm(cells, desc=desc):
                try:
                    results[cell.cell_id], timings[cell.cell_id] = futures[cell.cell_id].result()
                except Exception as e:
                    logger.error(f"Cell {cell.cell_id} failed in worker: {e}")
                    results[cell.cell_id] = CellResult(cell_id=cell.cell_id, config=cell.to_dict(), status="error",
                                                       seeds=[SeedResult(seed=s, status="error", error=str(e))
                                                              for s in cell.seeds])
                    timings[cell.cell_id] = 0.0
    else:
        cache = ArtifactCache(suite, settings)
        for cell in tqdm(cells, desc=desc):
            results[cell.cell_id], timings[cell.cell_id] = run_cell(cell, cache)
    return [results[cell.cell_id] for cell in cells], timings


def _log_cells(run_log, cells: Sequence[CellResult], timings: Dict[str, float]):
    if run_log is None:
        return
    for cell in cells:
        run_log.add_cell_result(cell.cell_id, cell.status, cell.mean_f1, timings.get(cell.cell_id, 0.0),
                                errors=[s.error for s in cell.seeds if s.error])


def run_grid(grid: Sequence[ExperimentConfig], suite: LanguageSuite, out_dir: Optional[str] = None,
             settings: Optional[HarnessSettings] = None, run_log=None) -> Report:
    """
    Run every cell of an ablation grid.

    Args:
        grid: Cells with unique ids
        suite: Source, auxiliary and target languages
        out_dir: Where report.json, report.csv and timings.json go (skipped when None)
        settings: Model and training settings
        run_log: Optional RunLog receiving cell_result and grid_run events

    Returns:
        Report with one CellResult per cell, in grid order
    """
    settings = settings or HarnessSettings()
    validate_grid(grid)
    logger.info(f"Running grid of {len(grid)} cells")
    cells, timings = _run_cells(grid, suite, settings, "grid")
    report = Report(kind="grid", status=_overall_status(cells), cells=cells,
                    metadata={"cells": [c.cell_id for c in grid], "settings": settings.metadata()})
    if out_dir is not None:
        write_report(report, out_dir, timings)
    _log_cells(run_log, cells, timings)
    if run_log is not None:
        run_log.add_grid_run([c.cell_id for c in grid], report.status, out_dir, sum(timings.values()))
    return report


def size_sweep(base: ExperimentConfig, sizes: Sequence[int], seeds: Sequence[int], suite: Optional[LanguageSuite],
               out_dir: Optional[str] = None, settings: Optional[HarnessSettings] = None, run_log=None) -> Report:
    """
    Run one cell at several training-set sizes with nested subsets.

    Cells are named "<cell_id>@<size>"; per seed the subset of a smaller size is a
    prefix of the larger one, recorded through subset_hash. Without a suite, one is
    built from settings with a target dataset large enough for the largest size.
    """
    settings = settings or HarnessSettings()
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise GridError("sizes must be non-empty")
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise GridError(f"sizes must be ascending, got {sizes}")
    if suite is None:
        settings = settings.sized_for(sizes[-1])
        suite = LanguageSuite.build(settings)
    available = len(suite.pool)
    if sizes[-1] > available:
        raise GridError(f"Size {sizes[-1]} exceeds the {available} available training examples; "
                        f"build the suite from settings.sized_for({sizes[-1]}) or pass suite=None")
    base.validate()

    cells = []
    seen = set()
    for size in sizes:
        cell_id = f"{base.cell_id}@{size}"
        # repeated sizes get a distinct id but the same subset
        while cell_id in seen:
            cell_id += "'"
        seen.add(cell_id)
        cells.append(replace(base, cell_id=cell_id, train_size=size, seeds=list(seeds)))
    logger.info(f"Size sweep of {base.cell_id} over {sizes} with seeds {list(seeds)}")
    results, timings = _run_cells(cells, suite, settings, "size sweep")
    report = Report(kind="size_sweep", status=_overall_status(results), cells=results,
                    metadata={"base_cell": base.cell_id, "sizes": sizes, "seeds": list(seeds),
                              "settings": settings.metadata()})
    if out_dir is not None:
        write_report(report, out_dir, timings)
    _log_cells(run_log, results, timings)
    if run_log is not None:
        run_log.add_size_sweep(base.cell_id, sizes, report.status, out_dir)
    return report
