"""
Frozen whitespace word-level vocabulary of the synthetic instruction grammar.
"""

import dataclasses

BOS = "<bos>"
EOS = "<eos>"
PAD = "<pad>"
UNK = "<unk>"
SEP = "<sep>"
SPECIALS = (PAD, BOS, EOS, UNK, SEP)

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow", "cyan", "magenta")

_TEMPLATE_WORDS = (
    "you", "need", "to", "perform", "referring", "expression", "reasoning",
    "segmentation", "video", "object", "on", "the", "image", "according",
    "text", "prompt",
)
_GRAMMAR_WORDS = (
    "all", "objects", "and", "which", "is", "are", "that", "largest",
    "smallest", "leftmost", "rightmost", "topmost", "bottommost", "moving",
    "moves", "left", "right", "up", "down", "fastest", "slowest", "ends",
    "at", "end", "closest", "center", "of", "canvas", "farthest", "from",
    "biggest", "tiniest", "one", "shape", "colored", "what", "find", "a",
    "in", "frame", "first", "last", "highest", "lowest", "position",
)


@dataclasses.dataclass(frozen=True)
class Vocabulary:
    words: tuple

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("Vocabulary words must be unique")

        object.__setattr__(self, "_ids", {w: i for i, w in enumerate(self.words)})

    @staticmethod
    def default():
        ordered = []

        for word in SPECIALS + SHAPES + COLORS + _TEMPLATE_WORDS + _GRAMMAR_WORDS:
            if word not in ordered:
                ordered.append(word)

        return Vocabulary(tuple(ordered))

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._ids

    def id(self, word):
        return self._ids.get(word, self._ids[UNK])

    @property
    def bos_id(self):
        return self._ids[BOS]

    @property
    def eos_id(self):
        return self._ids[EOS]

    @property
    def sep_id(self):
        return self._ids[SEP]

    @property
    def unk_id(self):
        return self._ids[UNK]

    def tokenize(self, text):
        return [self.id(word) for word in text.split()]

    def detokenize(self, ids):
        return " ".join(self.words[int(i)] for i in ids)


VOCABULARY = Vocabulary.default()


def tokenize(text):
    return VOCABULARY.tokenize(text)


def detokenize(ids):
    return VOCABULARY.detokenize(ids)
