"""
Byte-pair subword vocabulary: training, encoding, decoding and the TSV vocab file
"""
import logging
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .seeding import content_digest

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIALS = len(SPECIAL_TOKENS)

WORD_BOUNDARY = "\u2581"
# Marks a literal WORD_BOUNDARY or LITERAL_ESCAPE character taken from the input text
LITERAL_ESCAPE = "\ue000"
REPLACEMENT_CHAR = "\ufffd"
VOCAB_HEADER = "#xfer-vocab v1"
MERGE_PREFIX = "#merge"


class VocabularyError(ValueError):
    """Raised for invalid vocabularies, training inputs or vocab files"""


def is_special(token_id: int) -> bool:
    return 0 <= token_id < N_SPECIALS


@dataclass(frozen=True)
class TokenSequence:
    ids: List[int]
    from_text: str


@dataclass
class Vocabulary:
    """
    Subword inventory.

    tokens[i] is the string for id i; ranks[i] is the merge index that first
    produced token i (-1 for specials and characters); merges is the ordered
    rule list used by encode.
    """
    tokens: List[str]
    ranks: List[int]
    merges: List[Tuple[str, str]]
    seed: int = field(default=0, compare=False)
    _index: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)
    _merge_rank: Dict[Tuple[str, str], int] = field(default_factory=dict, repr=False, compare=False)
    _cache: Dict[str, Tuple[int, ...]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:N_SPECIALS]) != SPECIAL_TOKENS:
            raise VocabularyError("Special tokens must occupy ids 0-4")
        self._index = {tok: i for i, tok in enumerate(self.tokens) if i >= N_SPECIALS}
        self._merge_rank = {}
        for rank, pair in enumerate(self.merges):
            if pair[0] in SPECIAL_TOKENS or pair[1] in SPECIAL_TOKENS:
                raise VocabularyError(f"Merge {pair} involves a special token")
            self._merge_rank.setdefault(pair, rank)
        self._cache = {}

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> Optional[int]:
        return self._index.get(token)

    def to_tsv(self) -> str:
        lines = [f"{VOCAB_HEADER} size={len(self.tokens)}"]
        for i, (tok, rank) in enumerate(zip(self.tokens, self.ranks)):
            lines.append(f"{i}\t{_escape(tok)}\t{rank}")
        for left, right in self.merges:
            lines.append(f"{MERGE_PREFIX}\t{_escape(left)}\t{_escape(right)}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> bytes:
        return content_digest(self.to_tsv().encode("utf-8"))


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(field_text: str) -> str:
    out = []
    chars = iter(field_text)
    for ch in chars:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(chars, "")
        out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
    return "".join(out)


def _normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def split_words(text: str) -> List[str]:
    """
    Cut text into merge domains; every space becomes a sentinel prefix of the piece after it.

    "ab cd" -> ["ab", "\u2581cd"]; "a  b" -> ["a", "\u2581", "\u2581b"]

    Input characters equal to WORD_BOUNDARY or LITERAL_ESCAPE are kept behind a
    LITERAL_ESCAPE so decode can tell them from a space.
    """
    words = []
    current = []
    for ch in text:
        if ch == " ":
            if current:
                words.append("".join(current))
            current = [WORD_BOUNDARY]
        elif ch in (WORD_BOUNDARY, LITERAL_ESCAPE):
            current.extend((LITERAL_ESCAPE, ch))
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def train_vocab(corpus: Iterable[str], vocab_size: int, seed: int = 0) -> Vocabulary:
    """
    Greedy byte-pair merging over a line corpus.

    Ties on pair frequency go to the lexicographically smallest (left, right) pair,
    so the result does not depend on the seed; the seed is recorded for provenance.

    Args:
        corpus: Text lines
        vocab_size: Upper bound on |V|, specials included
        seed: Run seed

    Returns:
        Trained Vocabulary
    """
    lines = [_normalize(line) for line in corpus]
    if not lines or not any(lines):
        raise VocabularyError("Cannot train a vocabulary on an empty corpus")

    word_freq: Counter = Counter()
    for line in lines:
        word_freq.update(split_words(line))

    alphabet = sorted({ch for word in word_freq for ch in word})
    floor = len(alphabet) + N_SPECIALS
    if vocab_size < floor:
        raise VocabularyError(
            f"vocab_size {vocab_size} is below the floor of {floor} "
            f"({len(alphabet)} distinct characters + {N_SPECIALS} specials)")

    tokens = list(SPECIAL_TOKENS) + alphabet
    ranks = [-1] * len(tokens)
    known = set(alphabet)
    merges: List[Tuple[str, str]] = []

    words = [list(word) for word in word_freq]
    freqs = [word_freq[word] for word in word_freq]
    pair_counts: Counter = Counter()
    pair_words: Dict[Tuple[str, str], set] = defaultdict(set)
    for wi, symbols in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freqs[wi]
            pair_words[pair].add(wi)

    while len(tokens) < vocab_size:
        live = [(count, pair) for pair, count in pair_counts.items() if count > 0]
        if not live:
            break
        best_count = max(count for count, _ in live)
        best = min(pair for count, pair in live if count == best_count)
        merged = best[0] + best[1]
        merges.append(best)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
            ranks.append(len(merges) - 1)

        for wi in sorted(pair_words.pop(best, ())):
            symbols = words[wi]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] -= freqs[wi]
            words[wi] = symbols = _apply_merge(symbols, best, merged)
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] += freqs[wi]
                pair_words[pair].add(wi)
        pair_counts.pop(best, None)

    logger.info(f"Trained vocabulary: {len(tokens)} tokens, {len(merges)} merges, {len(alphabet)} characters")
    return Vocabulary(tokens=tokens, ranks=ranks, merges=merges, seed=seed)


def _apply_merge(symbols: List[str], pair: Tuple[str, str], merged: str) -> List[str]:
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _segment_word(vocab: Vocabulary, word: str) -> Tuple[int, ...]:
    cached = vocab._cache.get(word)
    if cached is not None:
        return cached
    symbols = list(word)
    last_rank = -1
    while len(symbols) > 1:
        # merges apply in training order; a rank already passed is never revisited
        ranked = [(vocab._merge_rank[pair], pair) for pair in zip(symbols, symbols[1:])
                  if vocab._merge_rank.get(pair, -1) > last_rank]
        if not ranked:
            break
        last_rank, pair = min(ranked)
        symbols = _apply_merge(symbols, pair, pair[0] + pair[1])
    ids = tuple(vocab._index.get(sym, UNK) for sym in symbols)
    vocab._cache[word] = ids
    return ids


def encode(vocab: Vocabulary, text: str, max_len: Optional[int] = None,
           add_cls_sep: bool = True) -> TokenSequence:
    """
    Segment text into token ids.

    Args:
        vocab: Trained vocabulary
        text: Input string
        max_len: Truncation length (None keeps everything)
        add_cls_sep: Wrap the pieces in CLS ... SEP; SEP survives truncation

    Returns:
        TokenSequence
    """
    if add_cls_sep and max_len is not None and max_len < 2:
        raise ValueError(f"max_len must be >= 2 with CLS/SEP, got {max_len}")
    pieces: List[int] = []
    for word in split_words(_normalize(text)):
        pieces.extend(_segment_word(vocab, word))
    if add_cls_sep:
        if max_len is not None:
            pieces = pieces[:max_len - 2]
        ids = [CLS] + pieces + [SEP]
    else:
        ids = pieces[:max_len] if max_len is not None else pieces
    return TokenSequence(ids=ids, from_text=text)


def decode(vocab: Vocabulary, ids: Sequence[int]) -> str:
    """Inverse of encode for in-alphabet text; specials dropped, UNK becomes U+FFFD"""
    parts = []
    for token_id in ids:
        token_id = int(token_id)
        if token_id < 0 or token_id >= len(vocab.tokens):
            raise VocabularyError(f"Token id {token_id} is outside the vocabulary (size {len(vocab.tokens)})")
        if token_id == UNK:
            parts.append(REPLACEMENT_CHAR)
        elif token_id >= N_SPECIALS:
            parts.append(vocab.tokens[token_id])
    return _unescape_text("".join(parts))


def _unescape_text(joined: str) -> str:
    out = []
    chars = iter(joined)
    for ch in chars:
        if ch == LITERAL_ESCAPE:
            out.append(next(chars, ""))
        elif ch == WORD_BOUNDARY:
            out.append(" ")
        else:
            out.append(ch)
    return "".join(out)


def save_vocab(vocab: Vocabulary, path: str):
    """Write the vocabulary as UTF-8 TSV"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(vocab.to_tsv())
    logger.info(f"Saved vocabulary ({len(vocab)} tokens) to {path}")


def load_vocab(path: str) -> Vocabulary:
    """Read a vocabulary TSV written by save_vocab"""
    with open(path, "r", encoding="utf-8", newline="\n") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0].startswith(VOCAB_HEADER):
        raise VocabularyError(f"Missing vocab header in {path}")
    try:
        declared = int(lines[0].split("size=")[1])
    except (IndexError, ValueError):
        raise VocabularyError(f"Malformed vocab header: {lines[0]!r}") from None

    tokens, ranks, merges = [], [], []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split("\t")
        if fields[0] == MERGE_PREFIX:
            if len(fields) != 3:
                raise VocabularyError(f"Malformed merge line: {line!r}")
            merges.append((_unescape(fields[1]), _unescape(fields[2])))
            continue
        if len(fields) != 3:
            raise VocabularyError(f"Malformed token line: {line!r}")
        token_id, token, rank = int(fields[0]), _unescape(fields[1]), int(fields[2])
        if token_id != len(tokens):
            raise VocabularyError(f"Token ids are not contiguous at {token_id}")
        tokens.append(token)
        ranks.append(rank)
    if len(tokens) != declared:
        raise VocabularyError(f"Header declares {declared} tokens, file has {len(tokens)}")
    return Vocabulary(tokens=tokens, ranks=ranks, merges=merges)
