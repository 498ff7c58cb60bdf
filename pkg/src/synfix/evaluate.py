"""Inference-time repair and corpus-level metrics.

Decoding is greedy with rejection retry: take the most probable action;
if the environment rejects the edit, try the next most probable action
for the same program state before moving on.  Corpus metrics mirror the
completely-fixed / partially-fixed / messages-resolved accounting, and
the embedding export writes pooled encoder states of three probe cursors
per single-error program, projected onto their first three principal
components.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import ACTIONS, Action, Environment, Episode, Termination
from .net import Net
from .tokens import TokenSeq, Vocabulary, encode_state, lex, render


@dataclass
class FixResult:
    program_id: str
    final_text: str
    actions: list[tuple[str, bool | None]]  # (action name, edit_accepted)
    errors_before: int
    errors_after: int
    steps: int
    rejected: int

    @property
    def outcome(self) -> str:
        if self.errors_after == 0:
            return "complete"
        if self.errors_after < self.errors_before:
            return "partial"
        return "unfixed"

    @property
    def resolved(self) -> int:
        return max(0, self.errors_before - self.errors_after)


@dataclass
class Metrics:
    n_programs: int
    n_error_msgs: int
    completely_fixed: int
    partially_fixed: int
    msgs_resolved: int
    mean_len: float
    mean_edits: float
    mean_rejected: float

    @property
    def completely_fixed_pct(self) -> float:
        return 100.0 * self.completely_fixed / max(1, self.n_programs)

    @property
    def partially_fixed_pct(self) -> float:
        return 100.0 * self.partially_fixed / max(1, self.n_programs)

    @property
    def msgs_resolved_pct(self) -> float:
        return 100.0 * self.msgs_resolved / max(1, self.n_error_msgs)


def fix_program(net: Net, program: TokenSeq, env: Environment,
                vocab: Vocabulary | None = None,
                program_id: str = "") -> FixResult:
    """Repair one program with the trained policy (greedy + retry).

    Never retries the same action twice in one state; every retry costs a
    step, so the episode limit still bounds the run.
    """
    vocab = vocab or Vocabulary.default()
    ep = Episode(env, program)
    trace: list[tuple[str, bool | None]] = []
    while not ep.done:
        ids = encode_state(ep.state.seq, ep.state.cursor, vocab)
        policy, _, _ = net.forward(ids)
        for idx in np.argsort(-np.asarray(policy, dtype=np.float64)):
            action: Action = ACTIONS[int(idx)]
            res = ep.step(action)
            trace.append((action.name, res.edit_accepted))
            if ep.done or res.edit_accepted is not False:
                break
            # rejected edit: same program state, try the next-ranked action
    return FixResult(
        program_id=program_id,
        final_text=render(ep.state.seq),
        actions=trace,
        errors_before=ep.initial_errors,
        errors_after=ep.state.error_count,
        steps=ep.state.steps_taken,
        rejected=ep.n_rejected,
    )


def replay_fix(program: TokenSeq, actions, env: Environment,
               program_id: str = "") -> FixResult:
    """Re-run a stored action trace; used to check replay consistency."""
    ep = Episode(env, program)
    trace = []
    for name in actions:
        if ep.done:
            break
        res = ep.step(ACTIONS[[a.name for a in ACTIONS].index(name)])
        trace.append((name, res.edit_accepted))
    return FixResult(program_id, render(ep.state.seq), trace,
                     ep.initial_errors, ep.state.error_count,
                     ep.state.steps_taken, ep.n_rejected)


def evaluate_corpus(net: Net, records, env: Environment,
                    vocab: Vocabulary | None = None
                    ) -> tuple[Metrics, list[FixResult]]:
    """fix_program over a held-out corpus plus aggregation."""
    records = list(records)
    if not records:
        raise ValueError("evaluate_corpus needs a non-empty corpus")
    vocab = vocab or Vocabulary.default()
    results = []
    for rec in records:
        results.append(fix_program(net, lex(rec.source), env, vocab,
                                   program_id=rec.id))
    return aggregate_metrics(results), results


def aggregate_metrics(results: list[FixResult]) -> Metrics:
    n = len(results)
    return Metrics(
        n_programs=n,
        n_error_msgs=sum(r.errors_before for r in results),
        completely_fixed=sum(r.outcome == "complete" for r in results),
        partially_fixed=sum(r.outcome == "partial" for r in results),
        msgs_resolved=sum(r.resolved for r in results),
        mean_len=sum(r.steps for r in results) / max(1, n),
        mean_edits=sum(sum(1 for _, acc in r.actions if acc is not None)
                       for r in results) / max(1, n),
        mean_rejected=sum(r.rejected for r in results) / max(1, n),
    )


def format_metrics(m: Metrics) -> str:
    return "\n".join([
        f"programs evaluated      {m.n_programs}",
        f"error messages          {m.n_error_msgs}",
        f"completely fixed        {m.completely_fixed} ({m.completely_fixed_pct:.1f}%)",
        f"partially fixed         {m.partially_fixed} ({m.partially_fixed_pct:.1f}%)",
        f"messages resolved       {m.msgs_resolved} ({m.msgs_resolved_pct:.1f}%)",
        f"mean episode length     {m.mean_len:.1f}",
        f"mean edit actions       {m.mean_edits:.1f}",
        f"mean rejected edits     {m.mean_rejected:.1f}",
    ])


def metrics_to_csv(m: Metrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n_programs", "n_error_msgs", "completely_fixed",
                    "completely_fixed_pct", "partially_fixed",
                    "partially_fixed_pct", "msgs_resolved",
                    "msgs_resolved_pct", "mean_len", "mean_edits",
                    "mean_rejected"])
        w.writerow([m.n_programs, m.n_error_msgs, m.completely_fixed,
                    f"{m.completely_fixed_pct:.3f}", m.partially_fixed,
                    f"{m.partially_fixed_pct:.3f}", m.msgs_resolved,
                    f"{m.msgs_resolved_pct:.3f}", f"{m.mean_len:.3f}",
                    f"{m.mean_edits:.3f}", f"{m.mean_rejected:.3f}"])


# ---------------------------------------------------------------------------
# Embedding probes and PCA export

def _first_divergence_index(a: TokenSeq, b: TokenSeq) -> int:
    sa, sb = a.surfaces(), b.surfaces()
    for i in range(min(len(sa), len(sb))):
        if sa[i] != sb[i]:
            return i
    return min(len(sa), len(sb))


@dataclass
class ProbeRow:
    program_id: str
    label: str  # state1 | state2 | state3
    embedding: np.ndarray


def probe_states(broken: TokenSeq, fixed: TokenSeq):
    """The three probe cursors for a single-error pair, or None when the
    erroneous line has no preceding line: (1) first token of the line
    before the error line, (2) first token of the error line, both on the
    broken program, and (3) the error location on the fixed program."""
    d = _first_divergence_index(broken, fixed)
    err_tok = broken.tokens[min(d, len(broken.tokens) - 1)]
    line = err_tok.line
    if line < 2:
        return None
    return (
        (broken, broken.line_start_index(line - 1) + 1),
        (broken, broken.line_start_index(line) + 1),
        (fixed, min(d + 1, len(fixed))),
    )


def export_embeddings(net: Net, records, vocab: Vocabulary | None = None,
                      ) -> tuple[list[ProbeRow], list[str]]:
    """Pooled encoder embeddings for the three probe states of every
    single-error record; multi-error or unprobeable records are skipped
    (their ids are returned for the caller's notice)."""
    vocab = vocab or Vocabulary.default()
    rows: list[ProbeRow] = []
    skipped: list[str] = []
    for rec in records:
        if rec.fixed_source is None or (rec.n_errors or 0) != 1:
            skipped.append(rec.id)
            continue
        broken, fixed = lex(rec.source), lex(rec.fixed_source)
        probes = probe_states(broken, fixed)
        if probes is None:
            skipped.append(rec.id)
            continue
        for label, (seq, cursor) in zip(("state1", "state2", "state3"), probes):
            _, _, pooled = net.forward(encode_state(seq, cursor, vocab))
            rows.append(ProbeRow(rec.id, label,
                                 np.asarray(pooled, dtype=np.float64)))
    return rows, skipped


def pca_fit(X: np.ndarray, n_components: int = 3):
    """Principal components by covariance eigendecomposition; returns
    (components[n, d] orthonormal, eigenvalues desc, mean)."""
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / max(1, X.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:n_components]
    return vecs[:, order].T, vals[order], mean


def write_embedding_csv(rows: list[ProbeRow], path) -> np.ndarray:
    """Project probe embeddings onto their first three principal
    components and write ``x,y,z,label`` rows; returns the projections."""
    if not rows:
        raise ValueError("no probe rows to export")
    X = np.stack([r.embedding for r in rows])
    comps, _, mean = pca_fit(X, 3)
    proj = (X - mean) @ comps.T
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "label"])
        for r, p in zip(rows, proj):
            w.writerow([f"{p[0]:.6f}", f"{p[1]:.6f}", f"{p[2]:.6f}", r.label])
    return proj
