"""Count syntax errors in a program: the black-box reward signal.

Two interchangeable oracles share one interface: an external compiler run
in syntax-check-only mode, and a hermetic surrogate checker over the token
stream for deterministic tests and training without a toolchain.  Both
memoize by content so repeated probes of the same candidate are free.
"""

from __future__ import annotations

import hashlib
import os
import re
import shlex
import subprocess
import tempfile
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

from .tokens import Kind, TokenSeq, lex, render

CONTROL_KEYWORDS = frozenset(["if", "else", "while", "for"])

# Environment variable overriding the external compiler command template.
CC_CMD_ENV = "SYNFIX_CC_CMD"
DEFAULT_CC_TEMPLATE = "gcc -fsyntax-only -x c {src}"

_ERROR_LINE_RE = re.compile(r"\berror:")


class OracleUnavailableError(RuntimeError):
    """The oracle could not produce a verdict (compiler missing, timeout).

    Distinct from "the program has errors"; callers must not treat this
    as a zero count.
    """


@dataclass(frozen=True)
class ErrorReport:
    count: int
    messages: tuple[str, ...] = ()

    def __post_init__(self):
        if self.count != len(self.messages):
            raise ValueError("count must equal the number of messages")

    @classmethod
    def from_messages(cls, messages) -> "ErrorReport":
        msgs = tuple(messages)
        return cls(len(msgs), msgs)


@dataclass
class OracleConfig:
    mode: str = "surrogate"  # "surrogate" | "external"
    command_template: str = DEFAULT_CC_TEMPLATE
    timeout: float = 10.0
    cache_capacity: int = 100_000
    scratch_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("surrogate", "external"):
            raise ValueError(f"unknown oracle mode: {self.mode!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class _LruCache:
    """Bounded key -> value map; concurrent readers, serialized inserts."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self):
        return len(self._data)


def surrogate_check(seq: TokenSeq) -> ErrorReport:
    """Deterministic syntax check over the supported C subset.

    Counts, with one message each:
      * unmatched ``(`` ``)`` and ``{`` ``}`` (stack scan);
      * statement lines whose last token is not ``;`` (lines ending in
        ``{``, ``}`` or ``else``, preprocessor lines, and control headers
        ending in ``)`` are exempt; a line-final ``.`` is charged to the
        stray-period rule instead, not twice);
      * every ``.`` token (no literal in the subset contains a bare dot);
      * ``;`` inside parentheses, except directly inside a ``for`` header.
    """
    msgs: list[str] = []
    paren_stack: list[tuple[int, bool]] = []  # (line, is_for_header)
    brace_stack: list[int] = []
    prev_word = ""
    for tok in seq.tokens:
        if tok.kind is Kind.LINE_BREAK:
            continue
        lx = tok.lexeme
        if lx == "(":
            paren_stack.append((tok.line, prev_word == "for"))
        elif lx == ")":
            if paren_stack:
                paren_stack.pop()
            else:
                msgs.append(f"line {tok.line}: unmatched ')'")
        elif lx == "{":
            brace_stack.append(tok.line)
        elif lx == "}":
            if brace_stack:
                brace_stack.pop()
            else:
                msgs.append(f"line {tok.line}: unmatched '}}'")
        elif lx == ";":
            if paren_stack and not paren_stack[-1][1]:
                msgs.append(f"line {tok.line}: ';' inside parentheses")
        elif lx == ".":
            msgs.append(f"line {tok.line}: stray '.'")
        prev_word = lx
    for line, _ in paren_stack:
        msgs.append(f"line {line}: unmatched '('")
    for line in brace_stack:
        msgs.append(f"line {line}: unmatched '{{'")

    for line in range(1, seq.line_count + 1):
        toks = list(seq.line_tokens(line))
        if not toks:
            continue
        if toks[0].lexeme.startswith("#"):
            continue
        # Brace placement is rule B's business: ignore trailing open/close
        # braces and leading close braces when judging the statement.
        while toks and toks[-1].lexeme in ("{", "}"):
            toks.pop()
        while toks and toks[0].lexeme == "}":
            toks.pop(0)
        if not toks:
            continue
        first, last = toks[0], toks[-1].lexeme
        if last == "else":
            continue
        if first.lexeme in CONTROL_KEYWORDS and last == ")":
            continue
        if (first.kind is Kind.TYPE_NAME and last == ")"
                and any(t.lexeme == "(" for t in toks)):
            continue  # function signature header
        if last in (";", "."):
            continue
        msgs.append(f"line {line}: statement not terminated by ';'")
    return ErrorReport.from_messages(msgs)


def _seq_key(seq: TokenSeq) -> tuple:
    return seq.surfaces()


class SurrogateOracle:
    """Hermetic oracle: the surrogate checker plus a memo cache."""

    mode = "surrogate"

    def __init__(self, cfg: OracleConfig | None = None):
        cfg = cfg or OracleConfig()
        self.cache = _LruCache(cfg.cache_capacity)

    def count_seq(self, seq: TokenSeq) -> ErrorReport:
        key = _seq_key(seq)
        report = self.cache.get(key)
        if report is None:
            report = surrogate_check(seq)
            self.cache.put(key, report)
        return report

    def count_errors(self, source: str) -> ErrorReport:
        return self.count_seq(lex(source))


class ExternalOracle:
    """Runs a real compiler in syntax-check-only mode and counts its
    error diagnostics (warnings excluded)."""

    mode = "external"

    def __init__(self, cfg: OracleConfig | None = None):
        self.cfg = cfg or OracleConfig(mode="external")
        template = os.environ.get(CC_CMD_ENV) or self.cfg.command_template
        self.command_template = template
        self.cache = _LruCache(self.cfg.cache_capacity)

    def count_errors(self, source: str) -> ErrorReport:
        key = hashlib.sha1(source.encode("utf-8")).hexdigest()
        report = self.cache.get(key)
        if report is None:
            report = self._compile(source)
            self.cache.put(key, report)
        return report

    def count_seq(self, seq: TokenSeq) -> ErrorReport:
        return self.count_errors(render(seq))

    def _compile(self, source: str) -> ErrorReport:
        with tempfile.NamedTemporaryFile(
            mode="w", suffix=".c", dir=self.cfg.scratch_dir, delete=False
        ) as fh:
            fh.write(source)
            path = fh.name
        try:
            argv = shlex.split(self.command_template.format(src=path))
            try:
                proc = subprocess.run(
                    argv,
                    capture_output=True,
                    text=True,
                    timeout=self.cfg.timeout,
                )
            except FileNotFoundError as exc:
                raise OracleUnavailableError(f"compiler not found: {argv[0]}") from exc
            except subprocess.TimeoutExpired as exc:
                raise OracleUnavailableError(
                    f"compiler timed out after {self.cfg.timeout}s"
                ) from exc
            lines = (proc.stderr + "\n" + proc.stdout).splitlines()
            msgs = tuple(ln for ln in lines if _ERROR_LINE_RE.search(ln))
            if proc.returncode != 0 and not msgs:
                raise OracleUnavailableError(
                    f"compiler exited with {proc.returncode} but no error "
                    f"diagnostics were recognized: {argv}"
                )
            return ErrorReport.from_messages(msgs)
        finally:
            try:
                os.unlink(path)
            except OSError:
                pass


def make_oracle(cfg: OracleConfig | None = None):
    cfg = cfg or OracleConfig()
    if cfg.mode == "external":
        return ExternalOracle(cfg)
    return SurrogateOracle(cfg)
