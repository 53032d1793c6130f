"""Text ingestion: vocabularies, integer streams, batched windows."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusTooShort, EmptyCorpus, VocabError
from .linalg import _GAMMA, _MASK64, _mix64

__all__ = [
    "BatchedCorpus",
    "UNK",
    "EOS",
    "Vocabulary",
    "batchify",
    "build_vocab",
    "sample_text",
    "tokenize",
]

UNK = "<unk>"
EOS = "<eos>"


def tokenize(text: str, mode: str) -> list[str]:
    """Split text into tokens: single characters, or whitespace words
    with an explicit end-of-sequence token closing every line."""
    if mode == "char":
        return list(text)
    if mode == "word":
        tokens: list[str] = []
        for line in text.splitlines():
            tokens.extend(line.split())
            tokens.append(EOS)
        return tokens
    raise VocabError(f"mode must be 'char' or 'word', got {mode!r}")


@dataclass
class Vocabulary:
    """Token <-> id mapping with fixed unknown and end-of-sequence ids."""

    id_to_token: list[str]
    mode: str
    token_to_id: dict[str, int] = field(init=False, repr=False)

    unk_id = 0
    eos_id = 1

    def __post_init__(self):
        if self.id_to_token[:2] != [UNK, EOS]:
            raise VocabError("ids 0 and 1 are reserved for "
                             f"{UNK!r} and {EOS!r}")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, text: str) -> np.ndarray:
        """Token ids for `text`; out-of-vocabulary tokens map to unk."""
        tokens = tokenize(text, self.mode)
        get = self.token_to_id.get
        return np.array([get(t, self.unk_id) for t in tokens],
                        dtype=np.int32)

    def decode(self, ids) -> str:
        """Text for a sequence of ids.

        Word mode joins tokens with spaces and renders end-of-sequence
        as a newline, the same canonical form encode was fed.
        """
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            raise VocabError("token id out of range")
        tokens = [self.id_to_token[i] for i in ids]
        if self.mode == "char":
            return "".join(tokens)
        out: list[str] = []
        line: list[str] = []
        for t in tokens:
            if t == EOS:
                out.append(" ".join(line) + "\n")
                line = []
            else:
                line.append(t)
        if line:
            out.append(" ".join(line))
        return "".join(out)


def build_vocab(text: str, mode: str, min_count: int = 1) -> Vocabulary:
    """Vocabulary over `text`: specials first, then tokens with at least
    `min_count` occurrences by descending frequency, ties in order of
    first appearance. Literal unknown/end-of-sequence strings in the
    text collapse onto the reserved ids instead of re-entering."""
    if min_count < 1:
        raise VocabError(f"min_count must be >= 1, got {min_count}")
    tokens = tokenize(text, mode)
    if not tokens:
        raise EmptyCorpus("no tokens in input text")
    counts = Counter(tokens)
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    first_seen = {tok: i for i, tok in reversed(list(enumerate(tokens)))}
    kept = sorted((tok for tok, c in counts.items() if c >= min_count),
                  key=lambda tok: (-counts[tok], first_seen[tok]))
    return Vocabulary(id_to_token=[UNK, EOS] + kept, mode=mode)


class BatchedCorpus:
    """Token stream cut into `batch_size` contiguous rows.

    Iterating yields (inputs, targets) windows of up to bptt_len steps;
    targets are inputs shifted one position, and consecutive windows
    tile the stream so every transition is a target exactly once.
    """

    def __init__(self, data: np.ndarray, bptt_len: int):
        self.data = data
        self.bptt_len = bptt_len

    @property
    def batch_size(self) -> int:
        return self.data.shape[0]

    @property
    def stream_len(self) -> int:
        return self.data.shape[1]

    @property
    def token_count(self) -> int:
        """Targets per full pass."""
        return self.data.shape[0] * (self.data.shape[1] - 1)

    def windows(self):
        stream = self.data.shape[1]
        for start in range(0, stream - 1, self.bptt_len):
            width = min(self.bptt_len, stream - 1 - start)
            yield (self.data[:, start:start + width],
                   self.data[:, start + 1:start + 1 + width])

    def __iter__(self):
        return self.windows()


def batchify(ids, batch_size: int, bptt_len: int) -> BatchedCorpus:
    """Reshape a token stream into `batch_size` contiguous rows,
    dropping the tail that does not divide evenly."""
    ids = np.ascontiguousarray(np.asarray(ids, dtype=np.int32))
    if ids.ndim != 1:
        raise CorpusTooShort(f"expected a 1-D id stream, got {ids.shape}")
    if batch_size < 1 or bptt_len < 1:
        raise CorpusTooShort("batch_size and bptt_len must be >= 1")
    stream = ids.size // batch_size
    if stream < 2:
        raise CorpusTooShort(
            f"{ids.size} tokens cannot fill {batch_size} rows of length 2")
    data = ids[:batch_size * stream].reshape(batch_size, stream)
    return BatchedCorpus(data=data, bptt_len=bptt_len)


# Short public-domain sentences (pre-1900 literature and speeches, plus
# one traditional pangram) used to synthesize training text.
_SENTENCES = (
    "It is a truth universally acknowledged, that a single man in "
    "possession of a good fortune, must be in want of a wife.",
    "Call me Ishmael.",
    "It was the best of times, it was the worst of times, it was the "
    "age of wisdom, it was the age of foolishness.",
    "Four score and seven years ago our fathers brought forth on this "
    "continent a new nation, conceived in liberty, and dedicated to the "
    "proposition that all men are created equal.",
    "We hold these truths to be self-evident, that all men are created "
    "equal.",
    "Shall I compare thee to a summer's day? Thou art more lovely and "
    "more temperate.",
    "To be, or not to be, that is the question.",
    "In the beginning God created the heaven and the earth.",
    "I celebrate myself, and sing myself, and what I assume you shall "
    "assume.",
    "I went to the woods because I wished to live deliberately, to "
    "front only the essential facts of life.",
    "Whenever I find myself growing grim about the mouth, I account it "
    "high time to get to sea as soon as I can.",
    "Alice was beginning to get very tired of sitting by her sister on "
    "the bank, and of having nothing to do.",
    "You see, but you do not observe.",
    "A house divided against itself cannot stand.",
    "The quick brown fox jumps over the lazy dog.",
    "Beware; for I am fearless, and therefore powerful.",
    "It was a dark and stormy night.",
    "All the world's a stage, and all the men and women merely players.",
)


def sample_text(n_chars: int, seed: int = 0) -> str:
    """Deterministic English text of exactly `n_chars` characters.

    Draws sentences from a fixed public-domain pool with a SplitMix64
    stream, grouping 6-13 sentences per paragraph. Same arguments, same
    text, on any platform.
    """
    if n_chars < 1:
        raise EmptyCorpus(f"n_chars must be >= 1, got {n_chars}")
    approx = max(16, n_chars // 40)
    pieces: list[str] = []
    length = 0
    offset = 0
    while length < n_chars:
        idx = np.arange(offset + 1, offset + approx + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            draws = _mix64(np.uint64(seed & _MASK64) + idx * _GAMMA)
        offset += approx
        para_left = 0
        for d in draws:
            if length >= n_chars:
                break
            if para_left == 0:
                para_left = 6 + int(d >> np.uint64(32)) % 8
                if pieces:
                    pieces.append("\n")
                    length += 1
            elif pieces:
                pieces.append(" ")
                length += 1
            sent = _SENTENCES[int(d) % len(_SENTENCES)]
            pieces.append(sent)
            length += len(sent)
            para_left -= 1
    return "".join(pieces)[:n_chars]
