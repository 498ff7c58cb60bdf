"""The correction MDP: cursor navigation and token edits over a program.

A state is the program token sequence plus a cursor; the cursor ranges
over every lexeme including line breaks, so the position just past a
line's last code token is addressable and inserting there appends at the
end of the line.  Edits that would raise the oracle's error count are
rejected and leave the program untouched.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from typing import NamedTuple

from .tokens import Kind, MUTABLE_TOKENS, TokenSeq, punct_token, render


class InvalidEpisodeError(ValueError):
    """Episode start rejected (e.g. the program already compiles)."""


class ContractViolation(RuntimeError):
    """An operation was applied outside its stated preconditions."""


class Termination(enum.Enum):
    NONE = "none"
    GOAL = "goal"
    OUT_OF_STEPS = "out_of_steps"
    PAST_END = "past_end"


class Action(NamedTuple):
    index: int
    name: str
    kind: str                       # "nav" | "edit"
    insert: str | None = None       # token surface for insert actions
    pattern: tuple[str, ...] = ()   # tokens required at the cursor
    replacement: tuple[str, ...] = ()

    def __repr__(self):
        return f"Action({self.name})"


def _build_actions() -> tuple[Action, ...]:
    acts = [
        Action(0, "move_right", "nav"),
        Action(1, "move_down", "nav"),
    ]
    for tok in MUTABLE_TOKENS:
        acts.append(Action(len(acts), f"insert_{_MNEMONIC[tok]}", "edit", insert=tok))
    acts.append(Action(len(acts), "delete", "edit"))
    acts.append(
        Action(len(acts), "replace_semi_with_comma", "edit",
               pattern=(";",), replacement=(",",))
    )
    acts.append(
        Action(len(acts), "replace_comma_with_semi", "edit",
               pattern=(",",), replacement=(";",))
    )
    acts.append(
        Action(len(acts), "replace_period_with_semi", "edit",
               pattern=(".",), replacement=(";",))
    )
    acts.append(
        Action(len(acts), "replace_semiparen_with_parensemi", "edit",
               pattern=(";", ")"), replacement=(")", ";"))
    )
    return tuple(acts)


_MNEMONIC = {
    ";": "semi", "(": "lparen", ")": "rparen",
    "{": "lbrace", "}": "rbrace", ".": "period", ",": "comma",
}

ACTIONS = _build_actions()
N_ACTIONS = len(ACTIONS)
assert N_ACTIONS == 14
ACTION_BY_NAME = {a.name: a for a in ACTIONS}
MOVE_RIGHT = ACTION_BY_NAME["move_right"]
MOVE_DOWN = ACTION_BY_NAME["move_down"]
DELETE = ACTION_BY_NAME["delete"]


def insert_action(tok: str) -> Action:
    return ACTION_BY_NAME[f"insert_{_MNEMONIC[tok]}"]


@dataclass(frozen=True)
class RewardSpec:
    step_penalty: float = -0.005
    edit_penalty: float = -0.025
    maximum_reward: float = 1.0
    intermediate_reward: float = 0.045
    max_episode_len: int = 100

    def __post_init__(self):
        if self.step_penalty > 0 or self.edit_penalty > 0:
            raise ValueError("penalties must be <= 0")
        if not self.maximum_reward > self.intermediate_reward > 0:
            raise ValueError("maximum_reward > intermediate_reward > 0 required")


@dataclass(frozen=True)
class State:
    seq: TokenSeq
    cursor: int            # 1-based index over all lexemes incl. line breaks
    error_count: int
    steps_taken: int = 0

    @property
    def line(self) -> int:
        return self.seq.token_at(self.cursor).line


@dataclass(frozen=True)
class StepResult:
    next_state: State
    reward: float
    done: bool
    termination: Termination
    edit_accepted: bool | None  # None for navigation actions
    errors_before: int
    errors_after: int


class Environment:
    """Stateless transition function; one instance may serve many
    concurrent episodes since all state travels through ``State``.

    ``reject_mode`` is "increase" (reject only edits that add errors; the
    default, literal reading) or "nondecrease" (also reject neutral
    edits).  ``step_penalty_on_edits`` additionally charges the per-step
    penalty on edit steps.
    """

    def __init__(self, oracle, rewards: RewardSpec | None = None,
                 reject_mode: str = "increase",
                 step_penalty_on_edits: bool = False):
        if reject_mode not in ("increase", "nondecrease"):
            raise ValueError(f"unknown reject_mode: {reject_mode!r}")
        self.oracle = oracle
        self.rewards = rewards or RewardSpec()
        self.reject_mode = reject_mode
        self.step_penalty_on_edits = step_penalty_on_edits

    # -- episode API -----------------------------------------------------

    def reset(self, program: TokenSeq) -> State:
        if len(program) == 0:
            raise InvalidEpisodeError("empty program")
        if program.tokens[-1].kind is not Kind.LINE_BREAK:
            raise InvalidEpisodeError("program must end with a line break "
                                      "(use tokens.lex to build it)")
        errors = self.oracle.count_seq(program).count
        if errors == 0:
            raise InvalidEpisodeError("program already compiles; nothing to fix")
        return State(seq=program, cursor=1, error_count=errors, steps_taken=0)

    def step(self, state: State, action: Action) -> StepResult:
        if state.error_count == 0:
            raise ContractViolation("step() on a goal state")
        if state.steps_taken >= self.rewards.max_episode_len:
            raise ContractViolation("step() past the episode step limit")
        steps = state.steps_taken + 1
        if action.kind == "nav":
            return self._nav(state, action, steps)
        return self._edit(state, action, steps)

    # -- navigation ------------------------------------------------------

    def _nav(self, state: State, action: Action, steps: int) -> StepResult:
        seq, cursor = state.seq, state.cursor
        term = Termination.NONE
        if action is MOVE_RIGHT:
            at_break = seq.token_at(cursor).kind is Kind.LINE_BREAK
            if at_break and cursor == len(seq):
                term = Termination.PAST_END
            elif not at_break:
                cursor += 1
            # else: sitting on a non-final line break; no effect
        else:  # move_down
            j = cursor
            while j <= len(seq) and seq.token_at(j).kind is not Kind.LINE_BREAK:
                j += 1
            if j >= len(seq):  # current line is the last line
                term = Termination.PAST_END
            else:
                cursor = j + 1
        if term is Termination.NONE and steps >= self.rewards.max_episode_len:
            term = Termination.OUT_OF_STEPS
        nxt = replace(state, cursor=cursor, steps_taken=steps)
        return StepResult(
            next_state=nxt,
            reward=self.rewards.step_penalty,
            done=term is not Termination.NONE,
            termination=term,
            edit_accepted=None,
            errors_before=state.error_count,
            errors_after=state.error_count,
        )

    # -- edits -------------------------------------------------------------

    def _candidate(self, state: State, action: Action) -> TokenSeq | None:
        """Edited sequence, or None when the edit does not apply at the
        cursor (non-mutable delete target, unmatched replace pattern)."""
        seq, i = state.seq, state.cursor - 1
        if action.insert is not None:
            return seq.with_insert(i, *punct_token(action.insert))
        if action is DELETE:
            tok = seq.token_at(state.cursor)
            if tok.lexeme not in MUTABLE_TOKENS or tok.kind is Kind.LINE_BREAK:
                return None
            return seq.with_delete(i)
        window = tuple(
            t.lexeme for t in seq.tokens[i:i + len(action.pattern)]
        )
        if window != action.pattern:
            return None
        if len(action.pattern) == 2:
            return seq.with_swap(i)
        return seq.with_replace(i, *punct_token(action.replacement[0]))

    def _edit(self, state: State, action: Action, steps: int) -> StepResult:
        before = state.error_count
        base = self.rewards.edit_penalty
        if self.step_penalty_on_edits:
            base += self.rewards.step_penalty
        candidate = self._candidate(state, action)
        if candidate is not None:
            after = self.oracle.count_seq(candidate).count
            if self.reject_mode == "increase":
                rejected = after > before
            else:
                rejected = after >= before
        else:
            after = before
            rejected = True

        if rejected:
            term = (Termination.OUT_OF_STEPS
                    if steps >= self.rewards.max_episode_len else Termination.NONE)
            nxt = replace(state, steps_taken=steps)
            return StepResult(nxt, base, term is not Termination.NONE, term,
                              False, before, before)

        nxt = State(seq=candidate, cursor=state.cursor,
                    error_count=after, steps_taken=steps)
        if after == 0:
            # Goal step: the maximum reward alone, no penalties on top.
            return StepResult(nxt, self.rewards.maximum_reward, True,
                              Termination.GOAL, True, before, after)
        reward = base + (self.rewards.intermediate_reward if after < before else 0.0)
        term = (Termination.OUT_OF_STEPS
                if steps >= self.rewards.max_episode_len else Termination.NONE)
        return StepResult(nxt, reward, term is not Termination.NONE, term,
                          True, before, after)


def episode_reward_identity(results: list[StepResult], rewards: RewardSpec,
                            step_penalty_on_edits: bool = False) -> float:
    """Closed-form total reward of an episode from its step records.

    total = step_penalty * (navigation steps)
          + edit_penalty * (non-goal edit steps, accepted or rejected)
          + intermediate_reward * (accepted, strictly error-reducing,
                                   non-goal edits)
          + maximum_reward * [goal reached]
    (plus step_penalty on each non-goal edit step when configured so).
    """
    total = 0.0
    for r in results:
        if r.edit_accepted is None:
            total += rewards.step_penalty
            continue
        if r.termination is Termination.GOAL:
            total += rewards.maximum_reward
            continue
        total += rewards.edit_penalty
        if step_penalty_on_edits:
            total += rewards.step_penalty
        if r.edit_accepted and r.errors_after < r.errors_before:
            total += rewards.intermediate_reward
    return total


class Episode:
    """Driver holding the evolving state of one episode plus its trace."""

    def __init__(self, env: Environment, program: TokenSeq):
        self.env = env
        self.state = env.reset(program)
        self.initial_errors = self.state.error_count
        self.results: list[StepResult] = []
        self.done = False
        self.termination = Termination.NONE

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise ContractViolation("step() on a finished episode")
        res = self.env.step(self.state, action)
        self.state = res.next_state
        self.results.append(res)
        if res.done:
            self.done = True
            self.termination = res.termination
        return res

    @property
    def total_reward(self) -> float:
        return sum(r.reward for r in self.results)

    @property
    def n_edits(self) -> int:
        return sum(1 for r in self.results if r.edit_accepted is not None)

    @property
    def n_rejected(self) -> int:
        return sum(1 for r in self.results if r.edit_accepted is False)

    @property
    def errors_resolved(self) -> int:
        return max(0, self.initial_errors - self.state.error_count)


def state_digest(state: State) -> str:
    text = render(state.seq) + f"@{state.cursor}"
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:12]


def write_trace(path, program_id: str, results: list[StepResult],
                actions: list[Action]) -> None:
    """Append one line-delimited record per step for later replay."""
    with open(path, "a", encoding="utf-8") as fh:
        for res, act in zip(results, actions):
            fh.write(json.dumps({
                "program_id": program_id,
                "state": state_digest(res.next_state),
                "action": act.name,
                "reward": res.reward,
                "accepted": res.edit_accepted,
                "termination": res.termination.value,
                "errors": [res.errors_before, res.errors_after],
            }) + "\n")
