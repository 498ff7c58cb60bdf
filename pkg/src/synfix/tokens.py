"""Tokenize C-like source into a line-structured token stream.

The stream keeps line breaks as ordinary tokens so that an agent can
navigate in two dimensions, and it survives arbitrarily broken input:
anything unrecognizable is swallowed as an identifier-like token instead
of raising.  Comments are dropped; preprocessor lines are kept as one
opaque token per line.
"""

from __future__ import annotations

import enum
import re
from typing import Iterable, NamedTuple

import numpy as np


class Kind(enum.Enum):
    KEYWORD = "keyword"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"
    TYPE_NAME = "type-name"
    LIBRARY_FUNCTION = "library-function"
    IDENTIFIER = "identifier"
    NUMBER = "number-literal"
    STRING = "string-literal"
    CHAR = "char-literal"
    LINE_BREAK = "line-break"


class Token(NamedTuple):
    lexeme: str
    kind: Kind
    line: int  # 1-based line index
    col: int   # 1-based token index within its line


TYPE_NAMES = frozenset(
    "char double float int long short signed unsigned void".split()
)

KEYWORDS = frozenset(
    """auto break case const continue default do else enum extern for goto
    if register return sizeof static struct switch typedef union volatile
    while""".split()
)

LIBRARY_FUNCTIONS = frozenset(
    """printf scanf getchar putchar gets puts malloc free strlen strcpy
    strcmp sqrt pow abs""".split()
)

# The only surfaces the agent may insert or delete.
MUTABLE_TOKENS = (";", "(", ")", "{", "}", ".", ",")

PUNCTUATION = frozenset([";", "(", ")", "{", "}", "[", "]", ",", ".", ":"])

OPERATORS = [
    "<<=", ">>=",
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~",
    "?", ":", ";", ",", ".", "(", ")", "{", "}", "[", "]",
]

_STRING_RE = re.compile(r'"(?:\\.|[^"\\\n])*"')
_CHAR_RE = re.compile(r"'(?:\\.|[^'\\\n])*'")
_NUMBER_RE = re.compile(
    r"0[xX][0-9a-fA-F]+[uUlL]*"
    r"|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?[fFlLuU]*"
)
_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_OPERATOR_RE = re.compile(
    "|".join(re.escape(op) for op in sorted(OPERATORS, key=len, reverse=True))
)

# Characters that can start a recognized token; anything else begins an
# unknown-byte run.
_KNOWN_START = set('"\'#/')
_KNOWN_START.update(ch for op in OPERATORS for ch in op[0])
_KNOWN_START.update("0123456789._")
_KNOWN_START.update(chr(c) for c in range(ord("a"), ord("z") + 1))
_KNOWN_START.update(chr(c) for c in range(ord("A"), ord("Z") + 1))


def classify_word(word: str) -> Kind:
    if word in TYPE_NAMES:
        return Kind.TYPE_NAME
    if word in KEYWORDS:
        return Kind.KEYWORD
    if word in LIBRARY_FUNCTIONS:
        return Kind.LIBRARY_FUNCTION
    return Kind.IDENTIFIER


def punct_token(lexeme: str) -> tuple[str, Kind]:
    """(lexeme, kind) pair for a single punctuation/operator surface."""
    return lexeme, (Kind.PUNCTUATION if lexeme in PUNCTUATION else Kind.OPERATOR)


class TokenSeq:
    """Immutable token sequence with line structure.

    ``len(seq)`` counts every lexeme including line breaks; cursors range
    over [1, len(seq)].  ``code_len`` counts only non-line-break tokens.
    """

    __slots__ = ("tokens", "_line_starts")

    def __init__(self, tokens: Iterable[Token]):
        self.tokens = tuple(tokens)
        starts = [0]
        for i, tok in enumerate(self.tokens):
            if tok.kind is Kind.LINE_BREAK and i + 1 < len(self.tokens):
                starts.append(i + 1)
        self._line_starts = tuple(starts)

    @classmethod
    def from_lexemes(cls, pairs: Iterable[tuple[str, Kind]]) -> "TokenSeq":
        """Build a sequence from (lexeme, kind) pairs, assigning line/col."""
        toks = []
        line, col = 1, 1
        for lexeme, kind in pairs:
            toks.append(Token(lexeme, kind, line, col))
            if kind is Kind.LINE_BREAK:
                line += 1
                col = 1
            else:
                col += 1
        return cls(toks)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenSeq):
            return NotImplemented
        return self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def __repr__(self) -> str:
        return f"TokenSeq({self.code_len} code tokens, {self.line_count} lines)"

    @property
    def code_len(self) -> int:
        return sum(1 for t in self.tokens if t.kind is not Kind.LINE_BREAK)

    @property
    def line_count(self) -> int:
        return 0 if not self.tokens else self.tokens[-1].line

    def token_at(self, cursor: int) -> Token:
        """Token under a 1-based cursor."""
        return self.tokens[cursor - 1]

    def line_tokens(self, line: int) -> tuple[Token, ...]:
        """Non-line-break tokens of a 1-based line."""
        return tuple(
            t for t in self.iter_line(line) if t.kind is not Kind.LINE_BREAK
        )

    def iter_line(self, line: int):
        start = self._line_starts[line - 1]
        for tok in self.tokens[start:]:
            if tok.line != line:
                break
            yield tok

    def line_start_index(self, line: int) -> int:
        """0-based index of the first token of a line."""
        return self._line_starts[line - 1]

    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.lexeme for t in self.tokens)

    # -- single-token surgery; line/col are recomputed ------------------

    def _rebuilt(self, pairs) -> "TokenSeq":
        return TokenSeq.from_lexemes(pairs)

    def _pairs(self):
        return [(t.lexeme, t.kind) for t in self.tokens]

    def with_insert(self, index: int, lexeme: str, kind: Kind) -> "TokenSeq":
        """New sequence with a token inserted at 0-based ``index``."""
        pairs = self._pairs()
        pairs.insert(index, (lexeme, kind))
        return self._rebuilt(pairs)

    def with_delete(self, index: int) -> "TokenSeq":
        pairs = self._pairs()
        del pairs[index]
        return self._rebuilt(pairs)

    def with_replace(self, index: int, lexeme: str, kind: Kind) -> "TokenSeq":
        pairs = self._pairs()
        pairs[index] = (lexeme, kind)
        return self._rebuilt(pairs)

    def with_swap(self, index: int) -> "TokenSeq":
        """Swap the tokens at ``index`` and ``index + 1``."""
        pairs = self._pairs()
        pairs[index], pairs[index + 1] = pairs[index + 1], pairs[index]
        return self._rebuilt(pairs)


def lex(source: str) -> TokenSeq:
    """Tokenize arbitrary (possibly broken) C-like text.

    Never fails: unknown byte runs become identifier-kind tokens.  Blank
    and comment-only lines are dropped; every remaining line is terminated
    by a line-break token, including the last one.
    """
    pairs: list[tuple[str, Kind]] = []
    i, n = 0, len(source)
    line_has_tokens = False

    def end_line():
        nonlocal line_has_tokens
        if line_has_tokens:
            pairs.append(("\n", Kind.LINE_BREAK))
            line_has_tokens = False

    while i < n:
        c = source[i]
        if c == "\n":
            end_line()
            i += 1
            continue
        if c.isspace():
            i += 1
            continue
        if c == "#" and not line_has_tokens:
            j = source.find("\n", i)
            j = n if j < 0 else j
            pairs.append((source[i:j].rstrip(), Kind.IDENTIFIER))
            line_has_tokens = True
            i = j
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            end = n if end < 0 else end + 2
            for ch in source[i:end]:
                if ch == "\n":
                    end_line()
            i = end
            continue
        if source.startswith("//", i):
            j = source.find("\n", i)
            i = n if j < 0 else j
            continue
        m = _STRING_RE.match(source, i)
        if m:
            pairs.append((m.group(), Kind.STRING))
            line_has_tokens = True
            i = m.end()
            continue
        m = _CHAR_RE.match(source, i)
        if m:
            pairs.append((m.group(), Kind.CHAR))
            line_has_tokens = True
            i = m.end()
            continue
        m = _NUMBER_RE.match(source, i)
        if m:
            pairs.append((m.group(), Kind.NUMBER))
            line_has_tokens = True
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            word = m.group()
            pairs.append((word, classify_word(word)))
            line_has_tokens = True
            i = m.end()
            continue
        m = _OPERATOR_RE.match(source, i)
        if m:
            pairs.append(punct_token(m.group()))
            line_has_tokens = True
            i = m.end()
            continue
        # Unknown byte run: swallow until whitespace or a recognizable start.
        j = i + 1
        while j < n and not source[j].isspace() and source[j] not in _KNOWN_START:
            j += 1
        pairs.append((source[i:j], Kind.IDENTIFIER))
        line_has_tokens = True
        i = j
    end_line()
    return TokenSeq.from_lexemes(pairs)


def render(seq: TokenSeq) -> str:
    """Program text back from a token sequence: space-joined tokens, one
    line per line-break token.  ``lex(render(seq)) == seq`` for any lexed
    sequence."""
    out: list[str] = []
    line: list[str] = []
    for tok in seq.tokens:
        if tok.kind is Kind.LINE_BREAK:
            out.append(" ".join(line))
            line = []
        else:
            line.append(tok.lexeme)
    if line:
        out.append(" ".join(line))
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Vocabulary

ID, NUM, STR, CHR, NL, CURSOR, UNK = (
    "<id>", "<num>", "<str>", "<chr>", "<nl>", "<cursor>", "<unk>"
)
SPECIALS = (ID, NUM, STR, CHR, NL, CURSOR, UNK)


def vocab_surfaces() -> list[str]:
    """Canonical surface list backing the packaged vocabulary file."""
    surfaces = list(SPECIALS)
    surfaces += sorted(TYPE_NAMES)
    surfaces += sorted(KEYWORDS)
    surfaces += sorted(LIBRARY_FUNCTIONS)
    surfaces += OPERATORS
    return surfaces


class VocabularyError(ValueError):
    pass


class Vocabulary:
    """Bijective surface <-> integer-id map over the shared token set."""

    _default = None

    def __init__(self, surfaces: Iterable[str]):
        self.surfaces = tuple(surfaces)
        self.ids = {s: i for i, s in enumerate(self.surfaces)}
        if len(self.ids) != len(self.surfaces):
            dupes = [s for s in self.surfaces if self.surfaces.count(s) > 1]
            raise VocabularyError(f"duplicate vocabulary entries: {sorted(set(dupes))}")
        missing = [s for s in SPECIALS if s not in self.ids]
        if missing:
            raise VocabularyError(f"missing special tokens: {missing}")
        missing = [s for s in MUTABLE_TOKENS if s not in self.ids]
        if missing:
            raise VocabularyError(f"missing mutable tokens: {missing}")
        self.ID = self.ids[ID]
        self.NUM = self.ids[NUM]
        self.STR = self.ids[STR]
        self.CHR = self.ids[CHR]
        self.NL = self.ids[NL]
        self.CURSOR = self.ids[CURSOR]
        self.UNK = self.ids[UNK]

    def __len__(self) -> int:
        return len(self.surfaces)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        surfaces = []
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                surfaces.append(line)
        return cls(surfaces)

    @classmethod
    def default(cls) -> "Vocabulary":
        if cls._default is None:
            from importlib.resources import files

            path = files("synfix").joinpath("data/vocab.txt")
            cls._default = cls.load(str(path))
        return cls._default

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# synfix vocabulary v1: {len(self.surfaces)} tokens\n")
            for s in self.surfaces:
                fh.write(s + "\n")


class CursorRangeError(ValueError):
    pass


def normalize(seq: TokenSeq, vocab: Vocabulary) -> np.ndarray:
    """Map a token sequence to vocabulary ids (int32, one per lexeme).

    Identifiers collapse to a single id except whitelisted library
    functions; literals collapse per literal class; everything else is
    looked up by surface, falling back to the unknown id.
    """
    ids = np.empty(len(seq), dtype=np.int32)
    lut = vocab.ids
    for i, tok in enumerate(seq.tokens):
        kind = tok.kind
        if kind is Kind.LINE_BREAK:
            ids[i] = vocab.NL
        elif kind is Kind.IDENTIFIER:
            ids[i] = vocab.ID
        elif kind is Kind.NUMBER:
            ids[i] = vocab.NUM
        elif kind is Kind.STRING:
            ids[i] = vocab.STR
        elif kind is Kind.CHAR:
            ids[i] = vocab.CHR
        else:
            ids[i] = lut.get(tok.lexeme, vocab.UNK)
    return ids


def encode_state(seq: TokenSeq, cursor: int, vocab: Vocabulary) -> np.ndarray:
    """Normalized ids with the cursor marker inserted right after the
    cursor-indexed lexeme.  Output length is ``len(seq) + 1``."""
    if not 1 <= cursor <= len(seq):
        raise CursorRangeError(f"cursor {cursor} out of range [1, {len(seq)}]")
    ids = normalize(seq, vocab)
    out = np.empty(len(ids) + 1, dtype=np.int32)
    out[:cursor] = ids[:cursor]
    out[cursor] = vocab.CURSOR
    out[cursor + 1:] = ids[cursor:]
    return out
