"""Vocabulary with the special-token decoding protocol.

Token ids are dense: word tokens first, then the special tokens in a fixed
order. The decoder prefix mirrors the multilingual convention
(start-of-transcript, language tag, task tag), optionally followed by the
no-timestamps marker; the single timestamp token appears only as the first
generated token when decoding in timestamp mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SOT = "<|startoftranscript|>"
LANG_EN = "<|en|>"
TRANSCRIBE = "<|transcribe|>"
TRANSLATE = "<|translate|>"
NOTIMESTAMPS = "<|notimestamps|>"
T0 = "<|0.00|>"
EOT = "<|endoftext|>"

SPECIALS = (SOT, LANG_EN, TRANSCRIBE, TRANSLATE, NOTIMESTAMPS, T0, EOT)

# toy "translation": words map through a fixed rotation of the vocabulary
_TRANSLATE_STEP = 11


@dataclass
class Vocab:
    words: list[str]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate word tokens")
        for w in self.words:
            if w in SPECIALS:
                raise ValueError(f"word {w!r} collides with a special token")
        self._index = {w: i for i, w in enumerate(self.words)}
        for j, s in enumerate(SPECIALS):
            self._index[s] = len(self.words) + j

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        return len(self.words) + len(SPECIALS)

    def __len__(self) -> int:
        return self.size

    def id_of(self, token: str) -> int:
        return self._index[token]

    @property
    def sot_id(self) -> int:
        return self._index[SOT]

    @property
    def lang_id(self) -> int:
        return self._index[LANG_EN]

    @property
    def transcribe_id(self) -> int:
        return self._index[TRANSCRIBE]

    @property
    def translate_id(self) -> int:
        return self._index[TRANSLATE]

    @property
    def notimestamps_id(self) -> int:
        return self._index[NOTIMESTAMPS]

    @property
    def t0_id(self) -> int:
        return self._index[T0]

    @property
    def eot_id(self) -> int:
        return self._index[EOT]

    def is_word(self, token_id: int) -> bool:
        return 0 <= token_id < len(self.words)

    def token_string(self, token_id: int) -> str:
        if self.is_word(token_id):
            return self.words[token_id]
        return SPECIALS[token_id - len(self.words)]

    def words_of(self, token_ids) -> list[str]:
        """Detokenize: word tokens only, specials dropped."""
        return [self.words[t] for t in token_ids if self.is_word(t)]

    def translated_word_id(self, word_id: int) -> int:
        """Fixed-permutation toy translation target for a word token."""
        if not self.is_word(word_id):
            raise ValueError(f"token {word_id} is not a word token")
        step = _TRANSLATE_STEP % self.n_words or 1
        return (word_id + step) % self.n_words


def decoder_prefix(
    vocab: Vocab,
    task: str = "transcribe",
    timestamps: bool = True,
    multilingual: bool = True,
) -> list[int]:
    """Special-token sequence that conditions generation.

    Timestamp mode omits the no-timestamps marker, in which case a trained
    model emits the timestamp token first and only then the text.
    """
    if not multilingual:
        return [vocab.sot_id]
    if task == "transcribe":
        task_id = vocab.transcribe_id
    elif task == "translate":
        task_id = vocab.translate_id
    else:
        raise ValueError(f"unknown task {task!r}")
    prefix = [vocab.sot_id, vocab.lang_id, task_id]
    if not timestamps:
        prefix.append(vocab.notimestamps_id)
    return prefix
