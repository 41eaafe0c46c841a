"""
Seeded random streams and content digests
"""
import logging
from typing import Union

import numpy as np
from cryptography.hazmat.primitives import hashes

logger = logging.getLogger(__name__)

DIGEST_SIZE = 16


def content_digest(data: bytes) -> bytes:
    """
    Digest used to bind artifacts together (vocabularies, embedding tables, subsets)

    Args:
        data: Raw bytes to hash

    Returns:
        First 16 bytes of the SHA-256 digest
    """
    digest = hashes.Hash(hashes.SHA256())
    digest.update(data)
    return digest.finalize()[:DIGEST_SIZE]


def _label_to_int(label: Union[str, int]) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return int.from_bytes(content_digest(str(label).encode("utf-8"))[:8], "little")


def derive_rng(seed: int, *labels: Union[str, int]) -> np.random.Generator:
    """
    Split the run seed into an independent stream identified by fixed labels.

    Python's hash() is salted per process, so labels go through SHA-256 instead.

    Args:
        seed: Run seed
        labels: Stream labels, e.g. ("init", "blocks.0.attn.q.weight")

    Returns:
        A numpy Generator
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    entropy = [int(seed)] + [_label_to_int(label) for label in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
