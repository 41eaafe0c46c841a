"""
Synthetic SOV languages that share a grammar and differ only in surface lexicon.

A sentence is first drawn as a sequence of abstract lexical indices from the
grammar seed, then rendered through a language's lexicon. Two languages with
the same grammar seed therefore produce token-for-token parallel sentences.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .data import LabeledExample
from .seeding import derive_rng

logger = logging.getLogger(__name__)

LATIN = "abcdefghijklmnopqrstuvwxyz"
ETHIOPIC = "".join(chr(c) for c in range(0x1200, 0x1248))
GREEK = "αβγδεζηθικλμνξοπρστυφχψω"

MAX_SENTIMENT_TOKENS = 3
WORD_LENGTH_RANGE = (2, 5)


@dataclass(frozen=True)
class SyntheticLangSpec:
    lexicon_size: int = 60
    shared_grammar_seed: int = 0
    lexicon_seed: int = 1
    sentiment_lexicon_frac: float = 0.2
    sentence_len_range: Tuple[int, int] = (5, 10)
    token_alphabet: str = LATIN
    corpus_size: int = 2000
    dataset_size: int = 1000

    def validate(self):
        if not 0.0 < self.sentiment_lexicon_frac <= 0.5:
            raise ValueError(f"sentiment_lexicon_frac must be in (0, 0.5], got {self.sentiment_lexicon_frac}")
        if self.lexicon_size < 8:
            raise ValueError(f"lexicon_size must be >= 8, got {self.lexicon_size}")
        low, high = self.sentence_len_range
        if low < 4 or high < low:
            raise ValueError(f"sentence_len_range must satisfy 4 <= min <= max, got {self.sentence_len_range}")
        if len(set(self.token_alphabet)) < 2 or " " in self.token_alphabet:
            raise ValueError("token_alphabet needs at least two distinct non-space characters")
        if self.corpus_size < 0 or self.dataset_size < 0:
            raise ValueError("corpus_size and dataset_size must be >= 0")


@dataclass
class Grammar:
    """Lexical roles shared by every language built from one grammar seed"""
    positive: List[int]
    negative: List[int]
    nouns: List[int]
    verbs: List[int]
    modifiers: List[int]

    @classmethod
    def from_spec(cls, spec: SyntheticLangSpec) -> "Grammar":
        order = [int(i) for i in derive_rng(spec.shared_grammar_seed, "grammar", "roles").permutation(spec.lexicon_size)]
        n_sent = max(2, round(spec.sentiment_lexicon_frac * spec.lexicon_size))
        n_pos = n_sent // 2
        rest = order[n_sent:]
        n_nouns = max(2, len(rest) // 2)
        n_verbs = max(1, (len(rest) - n_nouns) // 2)
        return cls(positive=order[:n_pos], negative=order[n_pos:n_sent], nouns=rest[:n_nouns],
                   verbs=rest[n_nouns:n_nouns + n_verbs], modifiers=rest[n_nouns + n_verbs:])

    def sentiment_label(self, indices: List[int]) -> Optional[int]:
        """1 for a positive majority, 0 for a negative majority, None on a tie"""
        pos = sum(1 for i in indices if i in self.positive)
        neg = sum(1 for i in indices if i in self.negative)
        if pos == neg:
            return None
        return 1 if pos > neg else 0


@dataclass
class SyntheticLanguage:
    spec: SyntheticLangSpec
    lexicon: List[str]
    corpus: List[str]
    dataset: List[LabeledExample]
    parallel: List[Tuple[str, str]] = field(default_factory=list)

    def surface_vocabulary(self) -> Set[str]:
        words = set()
        for line in self.corpus:
            words.update(line.split())
        for example in self.dataset:
            words.update(example.text.split())
        return words


def build_lexicon(spec: SyntheticLangSpec, avoid: Set[str] = frozenset()) -> List[str]:
    """Distinct surface words, one per lexical index, none of them in avoid"""
    rng = derive_rng(spec.lexicon_seed, "lexicon", spec.token_alphabet)
    alphabet = sorted(set(spec.token_alphabet))
    words: List[str] = []
    seen: Set[str] = set()
    attempts = 0
    while len(words) < spec.lexicon_size:
        attempts += 1
        if attempts > 1000 * spec.lexicon_size:
            raise ValueError(f"Alphabet of {len(alphabet)} characters cannot supply {spec.lexicon_size} distinct words")
        length = int(rng.integers(WORD_LENGTH_RANGE[0], WORD_LENGTH_RANGE[1] + 1))
        word = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=length))
        if word in seen or word in avoid:
            continue
        seen.add(word)
        words.append(word)
    return words


def _sentence(grammar: Grammar, spec: SyntheticLangSpec, rng: np.random.Generator,
              label: Optional[int]) -> List[int]:
    """Abstract SOV sentence: [mods] subject [mods] object [mods] verb"""
    low, high = spec.sentence_len_range
    length = int(rng.integers(low, high + 1))
    room = length - 3
    if label is None:
        n_major = int(rng.integers(0, min(MAX_SENTIMENT_TOKENS, room) + 1))
        n_minor = 0
        major = grammar.positive if rng.random() < 0.5 else grammar.negative
        minor = grammar.negative
    else:
        n_major = int(rng.integers(1, min(MAX_SENTIMENT_TOKENS, room) + 1))
        n_minor = int(rng.integers(0, min(n_major, room - n_major + 1)))
        major = grammar.positive if label == 1 else grammar.negative
        minor = grammar.negative if label == 1 else grammar.positive
    sentiment = [major[int(rng.integers(len(major)))] for _ in range(n_major)]
    sentiment += [minor[int(rng.integers(len(minor)))] for _ in range(n_minor)]
    fillers = [grammar.modifiers[int(rng.integers(len(grammar.modifiers)))]
               for _ in range(room - len(sentiment))] if grammar.modifiers else []
    mods = sentiment + fillers
    mods = [mods[int(i)] for i in rng.permutation(len(mods))]
    cuts = sorted(int(c) for c in rng.integers(0, len(mods) + 1, size=2))
    subject = grammar.nouns[int(rng.integers(len(grammar.nouns)))]
    obj = grammar.nouns[int(rng.integers(len(grammar.nouns)))]
    verb = grammar.verbs[int(rng.integers(len(grammar.verbs)))]
    return mods[:cuts[0]] + [subject] + mods[cuts[0]:cuts[1]] + [obj] + mods[cuts[1]:] + [verb]


def _render(indices: List[int], lexicon: List[str]) -> str:
    return " ".join(lexicon[i] for i in indices)


def _lexicons(spec: SyntheticLangSpec, sibling: Optional[SyntheticLangSpec]) -> Tuple[List[str], Optional[List[str]]]:
    if sibling is None:
        return build_lexicon(spec), None
    if sibling.shared_grammar_seed != spec.shared_grammar_seed or sibling.lexicon_size != spec.lexicon_size:
        raise ValueError("Sibling languages must share the grammar seed and lexicon size")
    if sibling.lexicon_seed == spec.lexicon_seed:
        raise ValueError(f"Sibling languages need different lexicon seeds, both are {spec.lexicon_seed}")
    # the language with the larger lexicon seed avoids the other's words
    if spec.lexicon_seed < sibling.lexicon_seed:
        own = build_lexicon(spec)
        return own, build_lexicon(sibling, avoid=set(own))
    other = build_lexicon(sibling)
    return build_lexicon(spec, avoid=set(other)), other


def generate_language(spec: SyntheticLangSpec, sibling: Optional[SyntheticLangSpec] = None) -> SyntheticLanguage:
    """
    Generate a language's unlabeled corpus and balanced sentiment dataset.

    Args:
        spec: Language parameters
        sibling: Optional language sharing the grammar; when given, its rendering of
                 every corpus sentence is returned as parallel pairs

    Returns:
        SyntheticLanguage
    """
    spec.validate()
    if sibling is not None:
        sibling.validate()
    grammar = Grammar.from_spec(spec)
    lexicon, sibling_lexicon = _lexicons(spec, sibling)

    corpus_rng = derive_rng(spec.shared_grammar_seed, "sentences", "corpus")
    abstract_corpus = [_sentence(grammar, spec, corpus_rng, None) for _ in range(spec.corpus_size)]
    dataset_rng = derive_rng(spec.shared_grammar_seed, "sentences", "dataset")
    dataset = []
    for i in range(spec.dataset_size):
        indices = _sentence(grammar, spec, dataset_rng, label=i % 2)
        dataset.append(LabeledExample(text=_render(indices, lexicon), label=grammar.sentiment_label(indices)))

    corpus = [_render(indices, lexicon) for indices in abstract_corpus]
    parallel = []
    if sibling_lexicon is not None:
        parallel = [(line, _render(indices, sibling_lexicon)) for line, indices in zip(corpus, abstract_corpus)]
    logger.info(f"Generated language (lexicon seed {spec.lexicon_seed}): {len(corpus)} corpus lines, "
                f"{len(dataset)} labeled examples, {len(parallel)} parallel pairs")
    return SyntheticLanguage(spec=spec, lexicon=lexicon, corpus=corpus, dataset=dataset, parallel=parallel)


def language_pair(grammar_seed: int = 0, lexicon_size: int = 60, corpus_size: int = 2000,
                  dataset_size: int = 1000, source_seed: int = 1, target_seed: int = 2,
                  auxiliary_seed: int = 3) -> Dict[str, SyntheticLangSpec]:
    """Source, target and auxiliary sibling specs over one grammar"""
    common = dict(lexicon_size=lexicon_size, shared_grammar_seed=grammar_seed,
                  corpus_size=corpus_size, dataset_size=dataset_size)
    return {
        "source": SyntheticLangSpec(lexicon_seed=source_seed, token_alphabet=LATIN, **common),
        "target": SyntheticLangSpec(lexicon_seed=target_seed, token_alphabet=ETHIOPIC, **common),
        "auxiliary": SyntheticLangSpec(lexicon_seed=auxiliary_seed, token_alphabet=GREEK, **common),
    }
