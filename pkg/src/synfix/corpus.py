"""Dataset handling: record IO, fold splits, and a synthetic pair maker.

Real student corpora are external; this module documents their on-disk
shape (one JSON record per line) and provides a generator that writes
small clean C programs and then plants single-token faults drawn from the
inverse of the edit-action set, so that training and tests are hermetic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .oracle import surrogate_check
from .tokens import Kind, MUTABLE_TOKENS, TokenSeq, lex, punct_token, render


class CorpusFormatError(ValueError):
    pass


class SeedingError(RuntimeError):
    pass


REQUIRED_FIELDS = ("id", "problem_id", "source")
OPTIONAL_FIELDS = ("fixed_source", "n_errors", "fold")


@dataclass
class CorpusRecord:
    id: str
    problem_id: str
    source: str
    fixed_source: str | None = None
    n_errors: int | None = None
    fold: int | None = None


def save_corpus(records: Iterable[CorpusRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {k: v for k, v in asdict(rec).items() if v is not None}
            fh.write(json.dumps(row) + "\n")


def load_corpus(path) -> list[CorpusRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc})")
            if not isinstance(row, dict):
                raise CorpusFormatError(f"line {lineno}: record must be an object")
            missing = [k for k in REQUIRED_FIELDS if k not in row]
            if missing:
                raise CorpusFormatError(f"line {lineno}: missing fields {missing}")
            unknown = [k for k in row if k not in REQUIRED_FIELDS + OPTIONAL_FIELDS]
            if unknown:
                raise CorpusFormatError(f"line {lineno}: unknown fields {unknown}")
            try:
                records.append(CorpusRecord(**row))
            except TypeError as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}")
    return records


def split_folds(records: Sequence[CorpusRecord], n_folds: int = 5,
                seed: int = 0) -> dict[str, int]:
    """Assign each programming problem (not each record) to a fold.

    Held-out problems never appear in training, so folds partition the
    problem ids; every record inherits its problem's fold.
    """
    problems = sorted({r.problem_id for r in records})
    if len(problems) < n_folds:
        raise ValueError(
            f"{len(problems)} problems cannot fill {n_folds} folds"
        )
    rng = np.random.default_rng(seed)
    rng.shuffle(problems)
    assignment = {p: i % n_folds for i, p in enumerate(problems)}
    for rec in records:
        rec.fold = assignment[rec.problem_id]
    return assignment


# ---------------------------------------------------------------------------
# Synthetic clean programs: one "problem" fixes the program structure, each
# variant renames identifiers and re-draws constants.

_FLOAT_FMT = "%f"
_INT_FMT = "%d"
_NAME_POOL = [c for c in "abcdefghjkmnpqrstuvwxyz"]


def _expr(names, vars_, depth=1):
    def operand():
        if names.random() < 0.6:
            return [vars_[names.integers(len(vars_))]]
        return [str(names.integers(1, 100))]

    parts = operand()
    op = ["+", "-", "*"][names.integers(3)]
    if depth > 0 and names.random() < 0.45:
        inner = operand() + [op] + operand()
        parts = ["("] + inner + [")"] if names.random() < 0.5 else inner
    if names.random() < 0.5:
        parts = parts + [["+", "-", "*"][names.integers(3)]] + operand()
    return parts


def _cond(names, vars_):
    v = vars_[names.integers(len(vars_))]
    rel = ["<", ">", "<=", ">=", "=="][names.integers(5)]
    return [v, rel, str(names.integers(0, 1000))]


def generate_clean_program(structure_seed: int, variant_seed: int,
                           body_items: tuple[int, int] = (1, 4),
                           max_code_tokens: int = 60) -> str:
    """One clean toy program; same structure seed => same statement shape,
    the variant seed only changes names and constants."""
    st = np.random.default_rng(structure_seed)
    names = np.random.default_rng((structure_seed, variant_seed))

    n_int = int(st.integers(1, 3))
    n_float = int(st.integers(0, 2))
    use_for = bool(st.random() < 0.25)
    plan = []
    for _ in range(int(st.integers(body_items[0], body_items[1] + 1))):
        plan.append(
            ["assign", "assign", "printf", "if", "ifelse", "while"][st.integers(6)]
        )
    if use_for:
        plan.insert(int(st.integers(0, len(plan) + 1)), "for")
    allman = bool(st.random() < 0.35)

    pool = list(_NAME_POOL)
    names.shuffle(pool)
    ints = pool[:n_int]
    floats = pool[n_int:n_int + n_float]
    loop_var = pool[n_int + n_float] if use_for else None
    all_vars = ints + floats

    lines: list[list[str]] = [["#include <stdio.h>"], ["int", "main", "(", ")", "{"]]
    decl = ["int"] + sum([[v, ","] for v in ints], [])[:-1] + [";"]
    if use_for:
        decl = decl[:-1] + [",", loop_var, ";"]
    lines.append(decl)
    if floats:
        lines.append(["float"] + sum([[v, ","] for v in floats], [])[:-1] + [";"])
    scanned = ints[0]
    lines.append(["scanf", "(", f'"{_INT_FMT}"', ",", "&", scanned, ";"][:-1] + [")", ";"])

    def open_block(header):
        if allman:
            lines.append(header)
            lines.append(["{"])
        else:
            lines.append(header + ["{"])

    def simple_stmt():
        if names.random() < 0.7:
            v = all_vars[names.integers(len(all_vars))]
            lines.append([v, "="] + _expr(names, all_vars) + [";"])
        else:
            v = all_vars[names.integers(len(all_vars))]
            fmt = _FLOAT_FMT if v in floats else _INT_FMT
            lines.append(["printf", "(", f'"{fmt}"', ",", v, ")", ";"])

    for item in plan:
        if item == "assign":
            v = all_vars[names.integers(len(all_vars))]
            lines.append([v, "="] + _expr(names, all_vars) + [";"])
        elif item == "printf":
            v = all_vars[names.integers(len(all_vars))]
            fmt = _FLOAT_FMT if v in floats else _INT_FMT
            lines.append(["printf", "(", f'"{fmt}"', ",", v, ")", ";"])
        elif item in ("if", "ifelse"):
            open_block(["if", "("] + _cond(names, all_vars) + [")"])
            simple_stmt()
            if item == "ifelse":
                if allman:
                    lines.append(["}"])
                    lines.append(["else"])
                    lines.append(["{"])
                else:
                    lines.append(["}", "else", "{"])
                simple_stmt()
            lines.append(["}"])
        elif item == "while":
            v = ints[names.integers(len(ints))]
            open_block(["while", "(", v, "<", str(names.integers(2, 50)), ")"])
            lines.append([v, "=", v, "+", "1", ";"])
            lines.append(["}"])
        elif item == "for":
            header = ["for", "(", loop_var, "=", "0", ";", loop_var, "<",
                      str(names.integers(2, 20)), ";", loop_var, "=",
                      loop_var, "+", "1", ")"]
            open_block(header)
            simple_stmt()
            lines.append(["}"])
    lines.append(["return", "0", ";"])
    lines.append(["}"])

    # Redraw structures that blow the token budget.
    text = "\n".join(" ".join(ln) for ln in lines) + "\n"
    seq = lex(text)
    if seq.code_len > max_code_tokens:
        return generate_clean_program(structure_seed * 7919 + 13, variant_seed,
                                      body_items, max_code_tokens)
    return text


# ---------------------------------------------------------------------------
# Fault seeding

FAULT_KINDS = (
    "delete_mutable", "insert_mutable", "swap_semi_comma",
    "swap_comma_semi", "period_for_semi", "semiparen_transpose",
)

# Error-count contribution of each fault class under the surrogate checker.
FAULT_DELTAS = {k: 1 for k in FAULT_KINDS}
FAULT_DELTAS["semiparen_transpose"] = 2

# The transpose fault shows up as two surrogate errors fixed by one atomic
# action, so it is kept out of the default mix where per-fault counting
# matters; training corpora include it explicitly.
DEFAULT_FAULT_CLASSES = tuple(k for k in FAULT_KINDS if k != "semiparen_transpose")
TRAINING_FAULT_CLASSES = FAULT_KINDS


@dataclass(frozen=True)
class SeededFault:
    kind: str
    line: int
    token_index: int  # 0-based index into the token stream at seeding time
    surface: str


def _fault_sites(seq: TokenSeq, kind: str, rng) -> list:
    toks = seq.tokens
    if kind == "delete_mutable":
        return [i for i, t in enumerate(toks) if t.lexeme in MUTABLE_TOKENS
                and t.kind is not Kind.LINE_BREAK]
    if kind == "insert_mutable":
        return [(i, MUTABLE_TOKENS[rng.integers(len(MUTABLE_TOKENS))])
                for i in range(len(toks) + 1)]
    if kind == "swap_semi_comma" or kind == "period_for_semi":
        return [i for i, t in enumerate(toks) if t.lexeme == ";"]
    if kind == "swap_comma_semi":
        return [i for i, t in enumerate(toks) if t.lexeme == ","]
    if kind == "semiparen_transpose":
        return [i for i in range(len(toks) - 1)
                if toks[i].lexeme == ")" and toks[i + 1].lexeme == ";"]
    raise ValueError(f"unknown fault kind: {kind}")


def _apply_fault(seq: TokenSeq, kind: str, site) -> tuple[TokenSeq, SeededFault]:
    if kind == "insert_mutable":
        i, surface = site
        line = seq.tokens[min(i, len(seq.tokens) - 1)].line
        return (seq.with_insert(i, *punct_token(surface)),
                SeededFault(kind, line, i, surface))
    i = site
    tok = seq.tokens[i]
    if kind == "delete_mutable":
        return seq.with_delete(i), SeededFault(kind, tok.line, i, tok.lexeme)
    if kind == "swap_semi_comma":
        return seq.with_replace(i, *punct_token(",")), SeededFault(kind, tok.line, i, ";")
    if kind == "swap_comma_semi":
        return seq.with_replace(i, *punct_token(";")), SeededFault(kind, tok.line, i, ",")
    if kind == "period_for_semi":
        return seq.with_replace(i, *punct_token(".")), SeededFault(kind, tok.line, i, ";")
    if kind == "semiparen_transpose":
        return seq.with_swap(i), SeededFault(kind, tok.line, i, ");")
    raise ValueError(kind)


def seed_errors(clean: TokenSeq, k: int, rng,
                classes: Sequence[str] = DEFAULT_FAULT_CLASSES,
                max_tries: int = 400) -> tuple[TokenSeq, list[SeededFault]]:
    """Plant ``k`` single-token faults, each independently visible to the
    surrogate checker (cumulative count grows by exactly the class delta).

    Returns the faulty sequence (canonicalized) and the fault list.
    Raises SeedingError when the program has no room for k such faults.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if surrogate_check(clean).count != 0:
        raise SeedingError("seed_errors needs a clean program")
    seq = clean
    faults: list[SeededFault] = []
    expected = 0
    used_positions: set[tuple[int, int]] = set()
    for _ in range(k):
        for attempt in range(max_tries):
            kind = classes[rng.integers(len(classes))]
            sites = _fault_sites(seq, kind, rng)
            if not sites:
                continue
            site = sites[rng.integers(len(sites))]
            mutated, fault = _apply_fault(seq, kind, site)
            if (fault.line, fault.token_index) in used_positions:
                continue
            mutated = lex(render(mutated))
            if surrogate_check(mutated).count == expected + FAULT_DELTAS[kind]:
                seq = mutated
                expected += FAULT_DELTAS[kind]
                faults.append(fault)
                used_positions.add((fault.line, fault.token_index))
                break
        else:
            raise SeedingError(
                f"could not place fault {len(faults) + 1} of {k} "
                f"after {max_tries} tries"
            )
    return seq, faults


def make_synthetic_corpus(n_problems: int, variants_per_problem: int,
                          seed: int = 0, k_choices: Sequence[int] = (1, 2),
                          classes: Sequence[str] = TRAINING_FAULT_CLASSES,
                          body_items: tuple[int, int] = (1, 4),
                          max_code_tokens: int = 60,
                          validate_demos: bool = True) -> list[CorpusRecord]:
    """Erroneous/fixed program pairs over ``n_problems`` distinct program
    structures.  Every pair is checked to be fixable by the edit-action
    set (a demonstration exists) unless ``validate_demos`` is off."""
    from .demos import generate_demonstration  # deferred: demos imports env

    rng = np.random.default_rng(seed)
    records = []
    for p in range(n_problems):
        problem_id = f"p{p:03d}"
        structure_seed = int(rng.integers(1, 2**31))
        for v in range(variants_per_problem):
            for attempt in range(40):
                variant_seed = int(rng.integers(1, 2**31))
                clean_src = generate_clean_program(
                    structure_seed, variant_seed, body_items, max_code_tokens)
                clean = lex(clean_src)
                k = int(k_choices[rng.integers(len(k_choices))])
                try:
                    bad, faults = seed_errors(clean, k, rng, classes=classes)
                except SeedingError:
                    continue
                if validate_demos and generate_demonstration(bad, clean) is None:
                    continue
                records.append(CorpusRecord(
                    id=f"{problem_id}-v{v:02d}",
                    problem_id=problem_id,
                    source=render(bad),
                    fixed_source=render(clean),
                    n_errors=surrogate_check(bad).count,
                ))
                break
            else:
                raise SeedingError(
                    f"failed to build variant {v} of problem {problem_id}"
                )
    return records
