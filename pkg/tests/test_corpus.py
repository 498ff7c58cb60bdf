import json

import numpy as np
import pytest

from synfix.corpus import (
    CorpusFormatError,
    CorpusRecord,
    DEFAULT_FAULT_CLASSES,
    FAULT_DELTAS,
    SeedingError,
    TRAINING_FAULT_CLASSES,
    generate_clean_program,
    load_corpus,
    make_synthetic_corpus,
    save_corpus,
    seed_errors,
    split_folds,
)
from synfix.oracle import surrogate_check
from synfix.tokens import lex, render


def test_record_round_trip(tmp_path):
    records = [
        CorpusRecord(f"r{i}", f"p{i % 3}", f"int a{i}\n",
                     fixed_source=f"int a{i} ;\n", n_errors=1, fold=i % 5)
        for i in range(10)
    ]
    path = tmp_path / "corpus.jsonl"
    save_corpus(records, path)
    assert load_corpus(path) == records


def test_load_errors_name_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "problem_id": "p", "source": "x"}\n'
                    '{"id": "b", "problem_id": "p"}\n')
    with pytest.raises(CorpusFormatError, match="line 2"):
        load_corpus(path)
    path.write_text("not json\n")
    with pytest.raises(CorpusFormatError, match="line 1"):
        load_corpus(path)
    path.write_text(json.dumps({"id": "a", "problem_id": "p", "source": "x",
                                "surprise": 1}) + "\n")
    with pytest.raises(CorpusFormatError, match="unknown"):
        load_corpus(path)


def test_split_folds_partitions_problems():
    records = [CorpusRecord(f"r{i}", f"p{i % 10}", "x\n") for i in range(50)]
    assignment = split_folds(records, n_folds=5, seed=3)
    assert sorted(assignment) == [f"p{i}" for i in range(10)]
    # every fold holds exactly 2 of the 10 problems
    counts = {}
    for fold in assignment.values():
        counts[fold] = counts.get(fold, 0) + 1
    assert counts == {0: 2, 1: 2, 2: 2, 3: 2, 4: 2}
    # records inherit their problem's fold; no problem spans two folds
    by_problem = {}
    for rec in records:
        by_problem.setdefault(rec.problem_id, set()).add(rec.fold)
    assert all(len(folds) == 1 for folds in by_problem.values())


def test_split_folds_deterministic_and_validates():
    records = [CorpusRecord(f"r{i}", f"p{i}", "x\n") for i in range(10)]
    a = split_folds(records, n_folds=5, seed=7)
    b = split_folds(records, n_folds=5, seed=7)
    assert a == b
    with pytest.raises(ValueError):
        split_folds(records[:3], n_folds=5, seed=0)


def test_clean_generator_is_oracle_clean_and_bounded():
    for s in range(40):
        src = generate_clean_program(s + 1, 2 * s + 1)
        seq = lex(src)
        assert surrogate_check(seq).count == 0
        assert seq.code_len <= 60
        assert lex(render(seq)) == seq


def test_same_structure_seed_same_shape():
    a = generate_clean_program(5, 1)
    b = generate_clean_program(5, 2)
    # variants share the line skeleton (same statement kinds per line)
    kinds_a = [ln.split()[0] for ln in a.splitlines() if ln]
    kinds_b = [ln.split()[0] for ln in b.splitlines() if ln]
    assert kinds_a == kinds_b
    assert a != b


def test_seed_errors_count_matches_k():
    rng = np.random.default_rng(0)
    done = 0
    trial = 0
    while done < 50:
        trial += 1
        clean = lex(generate_clean_program(trial, 3))
        k = int(rng.integers(1, 4))
        try:
            bad, faults = seed_errors(clean, k, rng)
        except SeedingError:
            continue
        assert len(faults) == k
        assert surrogate_check(bad).count == k
        assert all(f.kind in DEFAULT_FAULT_CLASSES for f in faults)
        done += 1


def test_seed_errors_transpose_delta_two():
    rng = np.random.default_rng(1)
    planted = 0
    for trial in range(200):
        clean = lex(generate_clean_program(trial + 500, 1))
        try:
            bad, faults = seed_errors(clean, 1, rng,
                                      classes=("semiparen_transpose",))
        except SeedingError:
            continue
        assert surrogate_check(bad).count == FAULT_DELTAS["semiparen_transpose"]
        planted += 1
        if planted >= 5:
            break
    assert planted >= 5


def test_seed_errors_preconditions():
    rng = np.random.default_rng(2)
    clean = lex(generate_clean_program(3, 3))
    with pytest.raises(ValueError):
        seed_errors(clean, 0, rng)
    broken, _ = seed_errors(clean, 1, rng)
    with pytest.raises(SeedingError):
        seed_errors(broken, 1, rng)  # needs a clean program
    tiny = lex("int main ( ) {\nreturn 0 ;\n}\n")
    with pytest.raises(SeedingError):
        seed_errors(tiny, 12, rng)  # no room for 12 distinct faults


def test_seeded_pairs_keep_ground_truth_fix():
    rng = np.random.default_rng(3)
    clean = lex(generate_clean_program(9, 9))
    bad, faults = seed_errors(clean, 2, rng)
    assert surrogate_check(clean).count == 0
    assert surrogate_check(bad).count == 2
    assert render(bad) != render(clean)


def test_make_synthetic_corpus_shape_and_demo_validity():
    records = make_synthetic_corpus(4, 3, seed=5, body_items=(1, 2))
    assert len(records) == 12
    assert len({r.problem_id for r in records}) == 4
    for rec in records:
        assert surrogate_check(lex(rec.fixed_source)).count == 0
        assert surrogate_check(lex(rec.source)).count == rec.n_errors >= 1
    # fault classes for training corpora include the transpose
    assert set(TRAINING_FAULT_CLASSES) - set(DEFAULT_FAULT_CLASSES) == \
        {"semiparen_transpose"}
