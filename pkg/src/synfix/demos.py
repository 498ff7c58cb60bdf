"""Expert demonstrations: action sequences that repair a broken program.

Given a (broken, fixed) pair, the generator aligns lines, skips unchanged
lines with move_down, walks move_right to each in-line divergence, and
maps the divergence to an edit action.  Generation replays its own plan
through a real environment as it goes, so a returned demonstration is
already known to reach the goal without a single rejected edit.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass

from .env import (
    ACTION_BY_NAME,
    Action,
    ContractViolation,
    Environment,
    Episode,
    MOVE_DOWN,
    MOVE_RIGHT,
    RewardSpec,
    Termination,
    insert_action,
)
from .oracle import SurrogateOracle
from .tokens import MUTABLE_TOKENS, TokenSeq, lex, render

_REPLACE_ACTIONS = {
    (";", ","): ACTION_BY_NAME["replace_semi_with_comma"],
    (",", ";"): ACTION_BY_NAME["replace_comma_with_semi"],
    (".", ";"): ACTION_BY_NAME["replace_period_with_semi"],
}
_TRANSPOSE = ACTION_BY_NAME["replace_semiparen_with_parensemi"]
_DELETE = ACTION_BY_NAME["delete"]


@dataclass(frozen=True)
class Demonstration:
    program_id: str
    actions: tuple[Action, ...]
    expected_final: TokenSeq


@dataclass
class ReplayReport:
    ok: bool
    reached_goal: bool
    rejected_steps: list[int]
    neutral_edit_steps: list[int]  # accepted edits that left the count unchanged
    final_matches: bool
    total_reward: float


def canonical_text(seq: TokenSeq) -> str:
    return render(lex(render(seq)))


def _line_surfaces(seq: TokenSeq, line: int) -> tuple[str, ...]:
    return tuple(t.lexeme for t in seq.line_tokens(line))


def _all_line_surfaces(seq: TokenSeq) -> list[tuple[str, ...]]:
    return [_line_surfaces(seq, ln) for ln in range(1, seq.line_count + 1)]


class _Inexpressible(Exception):
    pass


class _Planner:
    """Walks the environment while emitting the demonstration actions."""

    def __init__(self, env: Environment, program: TokenSeq):
        self.ep = Episode(env, program)
        self.actions: list[Action] = []

    def do(self, action: Action) -> None:
        if self.ep.done:
            raise _Inexpressible("episode ended before the plan completed")
        res = self.ep.step(action)
        self.actions.append(action)
        if action.kind == "edit" and res.edit_accepted is not True:
            raise _Inexpressible(f"{action.name} rejected during planning")

    def goto(self, cursor: int) -> None:
        if cursor < self.ep.state.cursor:
            raise _Inexpressible("fix would require moving left")
        while self.ep.state.cursor < cursor:
            before = self.ep.state.cursor
            self.do(MOVE_RIGHT)
            if self.ep.state.cursor == before:
                raise _Inexpressible("move_right stalled before the target")

    @property
    def seq(self) -> TokenSeq:
        return self.ep.state.seq


def _first_divergence(cur: tuple[str, ...], target: tuple[str, ...]) -> int | None:
    for i in range(min(len(cur), len(target))):
        if cur[i] != target[i]:
            return i
    if len(cur) != len(target):
        return min(len(cur), len(target))
    return None


def _fix_line(pl: _Planner, line: int, target: tuple[str, ...]) -> None:
    """Edit one line left-to-right until it matches ``target``."""
    for _ in range(len(target) + len(pl.seq.line_tokens(line)) + 4):
        cur = _line_surfaces(pl.seq, line)
        d = _first_divergence(cur, target)
        if d is None:
            return
        start = pl.seq.line_start_index(line)
        pl.goto(start + d + 1)
        have = cur[d] if d < len(cur) else None
        want = target[d] if d < len(target) else None
        if (cur[d:d + 2] == (";", ")") and target[d:d + 2] == (")", ";")):
            pl.do(_TRANSPOSE)
        elif have is not None and want is not None and cur[d + 1:] == target[d + 1:]:
            pair = (have, want)
            if pair in _REPLACE_ACTIONS:
                pl.do(_REPLACE_ACTIONS[pair])
            elif have in MUTABLE_TOKENS and want in MUTABLE_TOKENS:
                pl.do(_DELETE)
                pl.do(insert_action(want))
            else:
                raise _Inexpressible(f"no action replaces {have!r} with {want!r}")
        elif have is not None and cur[d + 1:] == target[d:]:
            if have not in MUTABLE_TOKENS:
                raise _Inexpressible(f"cannot delete non-mutable {have!r}")
            pl.do(_DELETE)
        elif want is not None and cur[d:] == target[d + 1:]:
            if want not in MUTABLE_TOKENS:
                raise _Inexpressible(f"cannot insert non-mutable {want!r}")
            pl.do(insert_action(want))
        else:
            raise _Inexpressible(f"divergence at line {line} is not a "
                                 "single-token edit")
    raise _Inexpressible(f"line {line} did not converge")


def _append_lines(pl: _Planner, line: int, extra: list[tuple[str, ...]]) -> None:
    """Insert whole missing lines at the end of ``line`` (cursor on its
    line-break, inserting right before it)."""
    start = pl.seq.line_start_index(line)
    n_code = len(pl.seq.line_tokens(line))
    pl.goto(start + n_code + 1)
    first = True
    for surfaces in extra:
        for tok in surfaces:
            if tok not in MUTABLE_TOKENS:
                raise _Inexpressible(f"cannot insert non-mutable {tok!r}")
            if not first:
                pl.do(MOVE_RIGHT)
            pl.do(insert_action(tok))
            first = False


def _delete_line(pl: _Planner, line: int) -> None:
    toks = pl.seq.line_tokens(line)
    if any(t.lexeme not in MUTABLE_TOKENS for t in toks):
        raise _Inexpressible("cannot delete a line with non-mutable tokens")
    pl.goto(pl.seq.line_start_index(line) + 1)
    for _ in toks:
        pl.do(_DELETE)


def generate_demonstration(p: TokenSeq, p_fixed: TokenSeq,
                           oracle=None, rewards: RewardSpec | None = None,
                           program_id: str = "") -> Demonstration | None:
    """A goal-reaching action sequence for the pair, or None when the fix
    is not expressible with the action set (or within the episode limit)."""
    oracle = oracle or SurrogateOracle()
    if oracle.count_seq(p_fixed).count != 0:
        raise ContractViolation("p_fixed must have zero errors")
    env = Environment(oracle, rewards)
    p_lines = _all_line_surfaces(p)
    q_lines = _all_line_surfaces(p_fixed)

    # Per-line work derived from a line-level alignment: lines to rewrite
    # in place, lines to empty out, and missing lines appended to the end
    # of their predecessor.
    rewrite: dict[int, tuple[str, ...]] = {}
    delete: set[int] = set()
    append_after: dict[int, list[tuple[str, ...]]] = {}
    prepend: list[tuple[str, ...]] = []
    sm = difflib.SequenceMatcher(None, p_lines, q_lines, autojunk=False)
    for tag, i1, i2, j1, j2 in sm.get_opcodes():
        if tag == "equal":
            continue
        if tag == "replace":
            n = min(i2 - i1, j2 - j1)
            for k in range(n):
                rewrite[i1 + k + 1] = q_lines[j1 + k]
            for k in range(i1 + n, i2):
                delete.add(k + 1)
            if j1 + n < j2:
                append_after.setdefault(i2, []).extend(q_lines[j1 + n:j2])
        elif tag == "delete":
            for k in range(i1, i2):
                delete.add(k + 1)
        elif tag == "insert":
            if i1 == 0:
                prepend.extend(q_lines[j1:j2])
            else:
                append_after.setdefault(i1, []).extend(q_lines[j1:j2])

    work_lines = sorted(set(rewrite) | delete | set(append_after))
    try:
        pl = _Planner(env, p)
        if prepend:
            # Would need inserts at the very start of line 1; no fault in
            # the training fault model produces this shape.
            raise _Inexpressible("cannot insert a line before the first")
        for target_line in work_lines:
            while pl.ep.state.line < target_line:
                pl.do(MOVE_DOWN)
            if pl.ep.state.line != target_line:
                raise _Inexpressible("navigation overshot the work line")
            if target_line in rewrite:
                _fix_line(pl, target_line, rewrite[target_line])
            elif target_line in delete:
                _delete_line(pl, target_line)
            if target_line in append_after:
                _append_lines(pl, target_line, append_after[target_line])
    except _Inexpressible:
        return None
    if not (pl.ep.done and pl.ep.termination is Termination.GOAL):
        return None
    return Demonstration(program_id, tuple(pl.actions), pl.ep.state.seq)


def replay(demo: Demonstration, p: TokenSeq, oracle=None,
           rewards: RewardSpec | None = None,
           reject_mode: str = "increase") -> ReplayReport:
    """Re-run a demonstration and report everything a verifier cares
    about, under either rejection mode."""
    oracle = oracle or SurrogateOracle()
    env = Environment(oracle, rewards, reject_mode=reject_mode)
    ep = Episode(env, p)
    rejected, neutral = [], []
    for i, action in enumerate(demo.actions):
        if ep.done:
            break
        res = ep.step(action)
        if res.edit_accepted is False:
            rejected.append(i)
        elif res.edit_accepted and res.errors_after == res.errors_before:
            neutral.append(i)
    goal = ep.termination is Termination.GOAL
    matches = canonical_text(ep.state.seq) == canonical_text(demo.expected_final)
    return ReplayReport(
        ok=goal and not rejected and matches,
        reached_goal=goal,
        rejected_steps=rejected,
        neutral_edit_steps=neutral,
        final_matches=matches,
        total_reward=ep.total_reward,
    )


def verify(demo: Demonstration, p: TokenSeq, oracle=None,
           rewards: RewardSpec | None = None) -> bool:
    """True iff the demonstration replays to the goal with zero rejected
    edits and lands on its recorded final program."""
    return replay(demo, p, oracle, rewards).ok


def save_demos(demos, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in demos:
            fh.write(json.dumps({
                "program_id": d.program_id,
                "actions": [a.name for a in d.actions],
                "expected_final": render(d.expected_final),
            }) + "\n")


def load_demos(path) -> list[Demonstration]:
    demos = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                actions = tuple(ACTION_BY_NAME[name] for name in row["actions"])
                demos.append(Demonstration(
                    program_id=row["program_id"],
                    actions=actions,
                    expected_final=lex(row["expected_final"]),
                ))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad demo record ({exc})")
    return demos
