"""
Labeled sentiment examples and their JSONL files
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

logger = logging.getLogger(__name__)

ORIGINS = ("original", "augmented")


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int
    origin: str = "original"

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"Label must be 0 or 1, got {self.label!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"Origin must be one of {ORIGINS}, got {self.origin!r}")

    def to_dict(self) -> dict:
        return {"text": self.text, "label": self.label, "origin": self.origin}


def load_dataset(path: str) -> List[LabeledExample]:
    """Read {"text", "label"[, "origin"]} objects, one per line"""
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                examples.append(LabeledExample(text=obj["text"], label=int(obj["label"]),
                                               origin=obj.get("origin", "original")))
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise ValueError(f"Malformed dataset line {line_no}: {e}") from None
    logger.info(f"Loaded {len(examples)} examples from {path}")
    return examples


def save_dataset(examples: Sequence[LabeledExample], path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(json.dumps(example.to_dict(), ensure_ascii=False) + "\n")
    logger.info(f"Saved {len(examples)} examples to {path}")


def label_counts(examples: Sequence[LabeledExample]) -> List[int]:
    counts = [0, 0]
    for example in examples:
        counts[example.label] += 1
    return counts
