import shutil
import threading

import numpy as np
import pytest

from synfix.oracle import (
    ErrorReport,
    ExternalOracle,
    OracleConfig,
    OracleUnavailableError,
    SurrogateOracle,
    surrogate_check,
)
from synfix.tokens import lex

FIG1_BROKEN = """#include<stdio.h>
int main(){
float ti, tax;
scanf("%f";&ti);
if(ti<200001){
printf("ti=0");}
else if(200000<ti && ti<500001){
tax=0.1*(ti-200000);
printf("tax=%f",tax);}
else if(500000<ti && ti<1000001){
tax=30000+0.2*(ti-500000);
printf("tax=%f",tax);
else if(ti>1000000){
tax=130000+0.3*(ti-1000000);
printf("tax=%f",tax);}
return 0;}
"""

FIG1_FIXED = FIG1_BROKEN.replace('"%f";&ti', '"%f",&ti').replace(
    'printf("tax=%f",tax);\nelse', 'printf("tax=%f",tax);}\nelse')


def test_error_report_invariant():
    with pytest.raises(ValueError):
        ErrorReport(2, ("one",))
    rep = ErrorReport.from_messages(["a", "b"])
    assert rep.count == 2


def test_oracle_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(mode="quantum")
    with pytest.raises(ValueError):
        OracleConfig(timeout=0)


def test_surrogate_clean_program():
    seq = lex("int main ( ) {\nint a ;\nreturn 0 ;\n}\n")
    assert surrogate_check(seq).count == 0


def test_surrogate_missing_semicolon():
    seq = lex("int main ( ) { return 0 }\n")
    rep = surrogate_check(seq)
    assert rep.count == 1
    assert "line 1" in rep.messages[0]


def test_surrogate_one_extra_brace():
    seq = lex("int main ( ) {\nreturn 0 ;\n}\n}\n")
    assert surrogate_check(seq).count == 1


def test_surrogate_unmatched_parens():
    assert surrogate_check(lex("int a ;\nprintf ( ( ;\n")).count >= 2
    assert surrogate_check(lex("a = ( 1 + 2 ;\n")).count == 2  # '(' + ';' in parens
    assert surrogate_check(lex("a = 1 + 2 ) ;\n")).count == 1


def test_surrogate_semicolon_inside_parens():
    assert surrogate_check(lex('scanf ( "%f" ; & ti ) ;\n')).count == 1
    # for-headers are exempt
    assert surrogate_check(
        lex("for ( i = 0 ; i < 9 ; i = i + 1 ) {\n}\n")).count == 0


def test_surrogate_stray_period_counted_once_at_line_end():
    assert surrogate_check(lex("x = 3 .\n")).count == 1
    assert surrogate_check(lex("x = 3 . ;\n")).count == 1
    assert surrogate_check(lex("x . y = 3 ;\n")).count == 1


def test_surrogate_statement_line_exemptions():
    assert surrogate_check(lex("if ( a < b )\n{\nx = 1 ;\n}\n")).count == 0
    # '} else {' contributes only the two unmatched-brace errors, no
    # statement-termination error
    assert surrogate_check(lex("} else {\n")).count == 2
    assert surrogate_check(lex("#include <x>\n")).count == 0
    assert surrogate_check(lex("int main ( ) {\nreturn 0 ;\n}\n")).count == 0


def test_surrogate_determinism_and_messages_name_lines():
    seq = lex("int a\nint b\n")
    r1, r2 = surrogate_check(seq), surrogate_check(seq)
    assert r1 == r2
    assert r1.count == 2
    assert any("line 1" in m for m in r1.messages)
    assert any("line 2" in m for m in r1.messages)


def test_fig1_surrogate_counts():
    assert SurrogateOracle().count_errors(FIG1_BROKEN).count == 2
    assert SurrogateOracle().count_errors(FIG1_FIXED).count == 0


def test_cache_transparency_and_stats():
    oracle = SurrogateOracle()
    seq = lex("int a\n")
    first = oracle.count_seq(seq)
    second = oracle.count_seq(seq)
    assert first == second
    assert oracle.cache.hits == 1 and oracle.cache.misses == 1


def test_cache_eviction_bounded():
    oracle = SurrogateOracle(OracleConfig(cache_capacity=5))
    for i in range(20):
        oracle.count_errors(f"int a{i}\n")
    assert len(oracle.cache) <= 5


def test_cache_concurrent_readers():
    oracle = SurrogateOracle()
    seqs = [lex(f"int a{i} ;\n") for i in range(50)]
    errs = []

    def hammer():
        try:
            for s in seqs * 20:
                assert oracle.count_seq(s).count == 0
        except BaseException as exc:  # pragma: no cover
            errs.append(exc)

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errs


needs_cc = pytest.mark.skipif(shutil.which("gcc") is None,
                              reason="no C compiler on PATH")


@needs_cc
@pytest.mark.external
def test_external_fig1_counts():
    oracle = ExternalOracle(OracleConfig(mode="external"))
    assert oracle.count_errors(FIG1_BROKEN).count >= 2
    assert oracle.count_errors(FIG1_FIXED).count == 0


@needs_cc
@pytest.mark.external
def test_external_warnings_excluded():
    oracle = ExternalOracle(OracleConfig(
        mode="external",
        command_template="gcc -fsyntax-only -Wall -x c {src}"))
    # unused variable draws a warning, not an error
    assert oracle.count_errors("int main(){int unused; return 0;}\n").count == 0


@needs_cc
@pytest.mark.external
def test_external_cache_transparency():
    oracle = ExternalOracle(OracleConfig(mode="external"))
    a = oracle.count_errors(FIG1_BROKEN)
    b = oracle.count_errors(FIG1_BROKEN)
    assert a == b
    assert oracle.cache.hits == 1


def test_compiler_not_found_raises_unavailable():
    oracle = ExternalOracle(OracleConfig(
        mode="external", command_template="definitely-no-such-cc {src}"))
    with pytest.raises(OracleUnavailableError):
        oracle.count_errors("int main(){}\n")


def test_seeded_faults_match_surrogate_counts():
    # each default fault class contributes exactly one surrogate error
    from synfix.corpus import generate_clean_program, seed_errors

    rng = np.random.default_rng(5)
    for trial in range(60):
        clean = lex(generate_clean_program(trial + 1, 2))
        k = int(rng.integers(1, 4))
        try:
            bad, faults = seed_errors(clean, k, rng)
        except Exception:
            continue
        assert surrogate_check(bad).count == k == len(faults)
