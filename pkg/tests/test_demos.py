import numpy as np
import pytest

from synfix.corpus import generate_clean_program, seed_errors
from synfix.demos import (
    Demonstration,
    generate_demonstration,
    load_demos,
    replay,
    save_demos,
    verify,
)
from synfix.env import ACTION_BY_NAME, ContractViolation, RewardSpec
from synfix.tokens import lex

FIG1_BROKEN = open(__file__.replace("test_demos.py", "data/fig1_broken.c")).read()
FIG1_FIXED = open(__file__.replace("test_demos.py", "data/fig1_fixed.c")).read()


def test_fig1_demo_matches_the_walkthrough():
    demo = generate_demonstration(lex(FIG1_BROKEN), lex(FIG1_FIXED))
    assert demo is not None
    names = [a.name for a in demo.actions]
    assert names == (
        ["move_down"] * 3 + ["move_right"] * 3 + ["replace_semi_with_comma"]
        + ["move_down"] * 8 + ["move_right"] * 7 + ["insert_rbrace"]
    )
    assert verify(demo, lex(FIG1_BROKEN))


def test_missing_identifier_not_expressible():
    p = lex("int main ( ) {\nint ;\nreturn 0 ;\n}\n")
    p_fixed = lex("int main ( ) {\nint a ;\nreturn 0 ;\n}\n")
    # the broken version must actually have an error for the env to start;
    # 'int ;' is invisible to the surrogate, so force one элsewhere
    p = lex("int main ( ) {\nint\nreturn 0 ;\n}\n")
    assert generate_demonstration(p, p_fixed) is None


def test_precondition_violations_raise():
    clean = lex("int main ( ) {\nreturn 0 ;\n}\n")
    with pytest.raises(Exception):
        generate_demonstration(clean, clean)  # p has no errors
    broken = lex("int main ( ) {\nreturn 0\n}\n")
    with pytest.raises(ContractViolation):
        generate_demonstration(broken, broken)  # fixed side not clean


def _pair(rng, k=None, body=(1, 3)):
    while True:
        clean = lex(generate_clean_program(int(rng.integers(1, 100000)),
                                           int(rng.integers(1, 100000)),
                                           body_items=body))
        try:
            bad, faults = seed_errors(clean, k or int(rng.integers(1, 4)), rng)
            return bad, clean, faults
        except Exception:
            continue


def test_seeded_pairs_expressible_and_sound():
    rng = np.random.default_rng(0)
    for _ in range(60):
        bad, clean, faults = _pair(rng)
        demo = generate_demonstration(bad, clean, program_id="t")
        assert demo is not None, [f.kind for f in faults]
        rep = replay(demo, bad)
        assert rep.ok and rep.reached_goal
        assert rep.rejected_steps == []
        assert len(demo.actions) <= RewardSpec().max_episode_len


def test_demo_actions_only_from_the_action_set():
    rng = np.random.default_rng(5)
    bad, clean, _ = _pair(rng)
    demo = generate_demonstration(bad, clean)
    for action in demo.actions:
        assert ACTION_BY_NAME[action.name] is action


def test_broken_demo_fails_verification():
    rng = np.random.default_rng(1)
    bad, clean, _ = _pair(rng)
    demo = generate_demonstration(bad, clean)
    assert verify(demo, bad)
    for drop in range(len(demo.actions)):
        crippled = Demonstration(demo.program_id,
                                 demo.actions[:drop] + demo.actions[drop + 1:],
                                 demo.expected_final)
        if not verify(crippled, bad):
            break
    else:
        pytest.fail("removing any single action never broke the demo")


def test_strict_mode_flags_neutral_edits():
    # a hand-made demo containing one neutral edit (insert ',' into an
    # already broken line): accepted by default, rejected in strict mode
    src = "int a\nint b ;\n"
    p = lex(src)
    actions = (
        ACTION_BY_NAME["move_right"],          # cursor on 'a'
        ACTION_BY_NAME["insert_comma"],        # neutral: count unchanged
        ACTION_BY_NAME["move_right"],
        ACTION_BY_NAME["move_right"],          # onto the line break
        ACTION_BY_NAME["insert_semi"],         # fixes the line
    )
    final = lex("int , a ;\nint b ;\n")
    demo = Demonstration("h", actions, final)
    rep = replay(demo, p)
    assert rep.reached_goal and rep.neutral_edit_steps == [1]
    strict = replay(demo, p, reject_mode="nondecrease")
    assert strict.rejected_steps == [1]
    assert not strict.ok


def test_demo_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    demos = []
    for i in range(5):
        bad, clean, _ = _pair(rng)
        demo = generate_demonstration(bad, clean, program_id=f"prog{i}")
        demos.append((demo, bad))
    path = tmp_path / "demos.jsonl"
    save_demos([d for d, _ in demos], path)
    loaded = load_demos(path)
    assert [d.program_id for d in loaded] == [f"prog{i}" for i in range(5)]
    for (orig, bad), back in zip(demos, loaded):
        assert [a.name for a in back.actions] == [a.name for a in orig.actions]
        assert verify(back, bad)


def test_multiple_faults_on_one_line_fixed_left_to_right():
    src = 'int main ( ) {\nint a , b ;\na = 1 ;\nb = a + 2 ;\nreturn 0 ;\n}\n'
    clean = lex(src)
    # plant two faults on the same line manually: swap ',' to ';' and drop
    # the final ';' of line 2
    broken = clean.with_replace(6, ";", None) if False else None
    from synfix.tokens import punct_token
    seq = clean.with_replace(6, *punct_token(";"))   # 'int a ; b ;'
    line2 = [t.lexeme for t in seq.line_tokens(2)]
    assert line2 == ["int", "a", ";", "b", ";"]
    seq = seq.with_delete(9)                          # drop line-final ';'
    from synfix.oracle import surrogate_check
    assert surrogate_check(seq).count == 2
    demo = generate_demonstration(seq, clean)
    assert demo is not None
    names = [a.name for a in demo.actions]
    assert names.index("replace_semi_with_comma") < names.index("insert_semi")
    assert verify(demo, seq)
