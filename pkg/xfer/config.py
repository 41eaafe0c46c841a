"""
Configuration management for xfer
"""
import os
import copy
import yaml
import logging
from dataclasses import fields
from typing import Any, Dict, List, Optional

from .augment import AugmentConfig
from .embeddings import SgnsConfig
from .harness import HarnessSettings, LanguageSettings
from .model import ModelConfig
from .pretraining import PretrainConfig
from .transfer import FineTuneConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = 'config/config.yaml'


def _default_config() -> Dict:
    """Return default configuration"""
    return {
        "model": {
            "d_model": 64,
            "n_layers": 2,
            "n_heads": 4,
            "d_ff": 256,
            "max_seq_len": 180,
            "dropout": 0.1,
            "tie_mlm_head": True
        },
        "tokenizer": {
            "vocab_size": 200,
            "source_vocab_size": None,
            "target_vocab_size": None
        },
        "embeddings": {
            "window": 5,
            "negatives": 5,
            "epochs": 5,
            "lr": 0.025,
            "subsample_threshold": 1e-3,
            "batch_pairs": 64
        },
        "pretrain": {
            "steps": 300,
            "batch_size": 32,
            "lr": 1e-3,
            "mask_prob": 0.15,
            "predict_frac": 1 / 6
        },
        "finetune": {
            "lr": 2e-5,
            "batch_size": 32,
            "max_len": 180,
            "epochs": 3
        },
        "augment": {
            "replace_prob": 0.1,
            "min_cosine": 0.5,
            "k_candidates": 5,
            "copies_per_example": 0,
            "ops_enabled": ["synonym_replacement"]
        },
        "harness": {
            "seeds": [0, 1, 2],
            "workers": 1,
            "n_dev": 100,
            "n_test": 200,
            "finetune_lr": 1e-3,
            "finetune_epochs": 5,
            "language": {
                "grammar_seed": 0,
                "lexicon_size": 60,
                "corpus_size": 2000,
                "dataset_size": 1500,
                "source_seed": 1,
                "target_seed": 2,
                "auxiliary_seed": 3,
                "sentiment_lexicon_frac": 0.2,
                "sentence_len_range": [5, 10]
            }
        },
        "schedule": {
            "enabled": False,
            "cron": "0 2 * * *",
            "grid": "grids/weight_init.json",
            "out_dir": "results/scheduled"
        }
    }


def _merge(defaults: Dict, overrides: Dict) -> Dict:
    merged = copy.deepcopy(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _build(cls, section: Dict, **extra):
    """Instantiate a config dataclass from the keys it knows"""
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        logger.warning(f"Ignoring unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: v for k, v in section.items() if k in known}, **extra)


class Config:
    """Manages toolkit configuration stored in YAML"""

    def __init__(self, config_path: str = None):
        """
        Initialize configuration manager

        Args:
            config_path: Path to config file (defaults to $XFER_CONFIG, then config/config.yaml)
        """
        if config_path is None:
            config_path = os.environ.get('XFER_CONFIG', DEFAULT_CONFIG_PATH)

        self.config_path = config_path
        self.config_dir = os.path.dirname(config_path) or "."
        self.config = _merge(_default_config(), self._load_config())

    def _load_config(self) -> Dict:
        """Load configuration from YAML file"""
        if os.path.exists(self.config_path):
            try:
                with open(self.config_path, 'r') as f:
                    config = yaml.safe_load(f) or {}
                    if not isinstance(config, dict):
                        raise ValueError("top level must be a mapping")
                    logger.info(f"Loaded configuration from {self.config_path}")
                    return config
            except Exception as e:
                logger.error(f"Failed to load config: {e}")
                return {}
        logger.info("No config file found, using defaults")
        return {}

    def save(self):
        """Save configuration to YAML file"""
        try:
            os.makedirs(self.config_dir, exist_ok=True)
            with open(self.config_path, 'w') as f:
                yaml.safe_dump(self.config, f, default_flow_style=False, sort_keys=False)
            logger.info(f"Saved configuration to {self.config_path}")
        except Exception as e:
            logger.error(f"Failed to save config: {e}")
            raise

    def section(self, name: str) -> Dict[str, Any]:
        return self.config.get(name, {})

    def get_model_config(self, vocab_size: int) -> ModelConfig:
        return _build(ModelConfig, self.section("model"), vocab_size=vocab_size)

    def get_model_overrides(self) -> Dict[str, Any]:
        return dict(self.section("model"))

    def get_vocab_sizes(self) -> Dict[str, int]:
        tok = self.section("tokenizer")
        base = tok.get("vocab_size", 200)
        return {
            "vocab_size": base,
            "source_vocab_size": tok.get("source_vocab_size") or base,
            "target_vocab_size": tok.get("target_vocab_size") or base,
        }

    def get_sgns_config(self, seed: int = 0) -> SgnsConfig:
        return _build(SgnsConfig, {**self.section("embeddings"), "seed": seed})

    def get_pretrain_config(self) -> PretrainConfig:
        return _build(PretrainConfig, self.section("pretrain"))

    def get_finetune_config(self, seed: int = 0) -> FineTuneConfig:
        return _build(FineTuneConfig, {**self.section("finetune"), "seed": seed})

    def get_augment_config(self) -> AugmentConfig:
        section = dict(self.section("augment"))
        section["ops_enabled"] = tuple(section.get("ops_enabled", ("synonym_replacement",)))
        return _build(AugmentConfig, section)

    def get_harness_settings(self) -> HarnessSettings:
        """Harness settings; the harness fine-tunes with its own desk-scale lr and epochs"""
        harness = self.section("harness")
        language = dict(harness.get("language", {}))
        if "sentence_len_range" in language:
            language["sentence_len_range"] = tuple(language["sentence_len_range"])
        finetune = self.get_finetune_config()
        finetune.lr = harness.get("finetune_lr", finetune.lr)
        finetune.epochs = harness.get("finetune_epochs", finetune.epochs)
        sizes = self.get_vocab_sizes()
        return HarnessSettings(
            model_overrides=self.get_model_overrides(),
            source_vocab_size=sizes["source_vocab_size"],
            target_vocab_size=sizes["target_vocab_size"],
            sgns=self.get_sgns_config(),
            pretrain=self.get_pretrain_config(),
            finetune=finetune,
            augment=self.get_augment_config(),
            language=_build(LanguageSettings, language),
            n_dev=harness.get("n_dev", 100),
            n_test=harness.get("n_test", 200),
            workers=harness.get("workers", 1),
        )

    def get_seeds(self) -> List[int]:
        return list(self.section("harness").get("seeds", [0, 1, 2]))

    def get_schedule_config(self) -> Dict:
        """Get schedule configuration"""
        return self.config.get("schedule", {
            "enabled": False,
            "cron": "0 2 * * *"
        })

    def update_schedule_config(self, enabled: bool, cron: str, grid: Optional[str] = None,
                               out_dir: Optional[str] = None):
        """Update schedule configuration"""
        if "schedule" not in self.config:
            self.config["schedule"] = {}

        self.config["schedule"]["enabled"] = enabled
        self.config["schedule"]["cron"] = cron
        if grid is not None:
            self.config["schedule"]["grid"] = grid
        if out_dir is not None:
            self.config["schedule"]["out_dir"] = out_dir
        self.save()
