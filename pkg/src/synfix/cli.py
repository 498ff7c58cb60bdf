"""Command-line operator surface.

Subcommands map one-to-one onto the library: lex / seed-corpus /
gen-demos / train / fix / eval / export-embeddings.  Configuration merges
flags over SYNFIX_* environment variables over a JSON config file over
defaults; ``--print-config`` emits the effective configuration in a form
that reproduces the run when fed back via --config.

Exit codes: 0 success, 1 domain failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

import numpy as np

from . import corpus as corpus_mod
from . import demos as demos_mod
from .env import Environment, RewardSpec
from .evaluate import (
    evaluate_corpus,
    export_embeddings,
    fix_program,
    format_metrics,
    metrics_to_csv,
    write_embedding_csv,
)
from .net import Net, load_checkpoint, save_checkpoint
from .oracle import OracleConfig, OracleUnavailableError, make_oracle
from .tokens import Vocabulary, lex, render
from .trainer import TrainConfig, train, write_log_csv

ENV_PREFIX = "SYNFIX_"

# Keys that may appear in a config file / environment, beyond TrainConfig.
ORACLE_KEYS = ("oracle", "cc_cmd", "oracle_timeout", "cache_capacity",
               "scratch_dir")
REWARD_KEYS = ("step_penalty", "edit_penalty", "maximum_reward",
               "intermediate_reward", "max_episode_len")


def _train_config_keys() -> list[str]:
    return [f.name for f in fields(TrainConfig) if f.name != "rewards"]


def effective_config(args: argparse.Namespace) -> dict:
    """defaults < config file < environment < flags, unknown keys rejected."""
    cfg: dict = {k: v for k, v in TrainConfig().to_dict().items()
                 if k != "rewards"}
    cfg.update({k: v for k, v in zip(
        REWARD_KEYS, (lambda r: (r.step_penalty, r.edit_penalty,
                                 r.maximum_reward, r.intermediate_reward,
                                 r.max_episode_len))(RewardSpec()))})
    cfg.update({"oracle": "surrogate",
                "cc_cmd": OracleConfig().command_template,
                "oracle_timeout": 10.0,
                "cache_capacity": 100_000,
                "scratch_dir": None})
    known = set(cfg)

    path = getattr(args, "config", None)
    if path:
        with open(path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - known
        if unknown:
            raise SystemExit(f"config file {path}: unknown keys "
                             f"{sorted(unknown)}")
        cfg.update(file_cfg)

    for key in known:
        env_val = os.environ.get(ENV_PREFIX + key.upper())
        if env_val is not None:
            current = cfg[key]
            if isinstance(current, bool):
                cfg[key] = env_val.lower() in ("1", "true", "yes")
            elif isinstance(current, int) and not isinstance(current, bool):
                cfg[key] = int(env_val)
            elif isinstance(current, float):
                cfg[key] = float(env_val)
            else:
                cfg[key] = env_val

    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if getattr(args, "serial", False):
        cfg["n_actor_learners"] = 1
    return cfg


def split_config(cfg: dict) -> tuple[TrainConfig, OracleConfig]:
    rewards = RewardSpec(**{k: cfg[k] for k in REWARD_KEYS})
    tc = TrainConfig(rewards=rewards,
                     **{k: cfg[k] for k in _train_config_keys()})
    oc = OracleConfig(mode=cfg["oracle"], command_template=cfg["cc_cmd"],
                      timeout=cfg["oracle_timeout"],
                      cache_capacity=cfg["cache_capacity"],
                      scratch_dir=cfg["scratch_dir"])
    return tc, oc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config as JSON and exit")
    p.add_argument("--oracle", choices=("surrogate", "external"))
    p.add_argument("--cc-cmd", dest="cc_cmd",
                   help="compiler command template with {src} placeholder")
    p.add_argument("--scratch-dir", dest="scratch_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--serial", action="store_true",
                   help="force one actor-learner (reproducible runs)")
    p.add_argument("--backend", choices=("auto", "c", "python"))
    for key in ("gamma", "beta", "learning_rate", "grad_clip_norm",
                "demo_fraction", "value_loss_coef", "step_penalty",
                "edit_penalty", "maximum_reward", "intermediate_reward"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)
    for key in ("t_max", "n_actor_learners", "epochs", "log_interval",
                "max_episode_len", "checkpoint_every"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    p.add_argument("--reject-mode", dest="reject_mode",
                   choices=("increase", "nondecrease"))
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")


def _startup(args) -> tuple[TrainConfig, OracleConfig, dict]:
    cfg = effective_config(args)
    if getattr(args, "print_config", False):
        print(json.dumps(cfg, indent=2))
        raise SystemExit(0)
    print("effective config: " + json.dumps(cfg, sort_keys=True),
          file=sys.stderr)
    tc, oc = split_config(cfg)
    return tc, oc, cfg


def cmd_lex(args) -> int:
    source = open(args.source, encoding="utf-8").read() if args.source != "-" \
        else sys.stdin.read()
    seq = lex(source)
    for tok in seq.tokens:
        lx = "\\n" if tok.lexeme == "\n" else tok.lexeme
        print(f"{tok.line:4d}:{tok.col:<3d} {tok.kind.value:17s} {lx}")
    print(f"# {seq.code_len} code tokens, {seq.line_count} lines",
          file=sys.stderr)
    return 0


def cmd_seed_corpus(args) -> int:
    tc, oc, _ = _startup(args)
    records = corpus_mod.make_synthetic_corpus(
        n_problems=args.problems, variants_per_problem=args.variants,
        seed=tc.seed, k_choices=tuple(args.faults))
    if args.folds:
        corpus_mod.split_folds(records, n_folds=args.folds, seed=tc.seed)
    corpus_mod.save_corpus(records, args.out)
    print(f"wrote {len(records)} records "
          f"({args.problems} problems x {args.variants} variants) to {args.out}")
    return 0


def cmd_gen_demos(args) -> int:
    tc, oc, _ = _startup(args)
    oracle = make_oracle(oc)
    records = corpus_mod.load_corpus(args.corpus)
    demos, skipped = [], []
    for rec in records:
        if rec.fixed_source is None:
            skipped.append(rec.id)
            continue
        demo = demos_mod.generate_demonstration(
            lex(rec.source), lex(rec.fixed_source), oracle=oracle,
            rewards=tc.rewards, program_id=rec.id)
        if demo is None:
            skipped.append(rec.id)
            continue
        demos.append(demo)
    demos_mod.save_demos(demos, args.out)
    print(f"wrote {len(demos)} demonstrations to {args.out}; "
          f"{len(skipped)} not expressible")
    if skipped:
        print("skipped: " + " ".join(skipped[:20]) +
              (" ..." if len(skipped) > 20 else ""), file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    tc, oc, _ = _startup(args)
    oracle = make_oracle(oc)
    records = corpus_mod.load_corpus(args.corpus)
    if args.fold is not None:
        records = [r for r in records if r.fold != args.fold]
    demos = {}
    if args.demos:
        for d in demos_mod.load_demos(args.demos):
            demos[d.program_id] = d
    try:
        result = train(records, demos, tc, oracle=oracle,
                       max_episodes=args.max_episodes, quiet=False)
    except OracleUnavailableError as exc:
        print(f"oracle unavailable: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(args.out, result.flat, result.layout)
    print(f"trained {result.episodes} episodes "
          f"({result.demo_episode_count} demo-guided); saved {args.out}")
    if args.log:
        write_log_csv(result.log_rows, args.log)
        print(f"training log: {args.log}")
    return 0


def _load_net(path, backend=None) -> Net:
    flat, layout = load_checkpoint(path)
    vocab = Vocabulary.default()
    if layout.vocab_size != len(vocab):
        raise SystemExit(f"checkpoint vocabulary size {layout.vocab_size} "
                         f"does not match the packaged vocabulary {len(vocab)}")
    return Net(layout, flat, backend=backend)


def cmd_fix(args) -> int:
    tc, oc, _ = _startup(args)
    oracle = make_oracle(oc)
    env = Environment(oracle, tc.rewards, tc.reject_mode,
                      tc.step_penalty_on_edits)
    net = _load_net(args.model, tc.backend)
    source = open(args.source, encoding="utf-8").read() if args.source != "-" \
        else sys.stdin.read()
    program = lex(source)
    result = fix_program(net, program, env, program_id=args.source)
    if args.trace:
        seq = program
        env2 = Environment(oracle, tc.rewards, tc.reject_mode,
                           tc.step_penalty_on_edits)
        from .env import ACTIONS, Episode
        by_name = {a.name: a for a in ACTIONS}
        ep = Episode(env2, program)
        for name, _ in result.actions:
            tok = ep.state.seq.token_at(ep.state.cursor)
            lx = "\\n" if tok.lexeme == "\n" else tok.lexeme
            res = ep.step(by_name[name])
            note = ""
            if res.edit_accepted is True:
                note = f"  [accepted, errors {res.errors_before}->{res.errors_after}]"
            elif res.edit_accepted is False:
                note = "  [rejected]"
            print(f"line {tok.line:3d} tok {tok.col:2d} ({lx}): "
                  f"{name}{note}")
    print(f"# errors {result.errors_before} -> {result.errors_after} "
          f"({result.outcome}) in {result.steps} steps", file=sys.stderr)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(result.final_text)
    else:
        sys.stdout.write(result.final_text)
    if args.require_complete and result.outcome != "complete":
        return 1
    return 0


def cmd_eval(args) -> int:
    tc, oc, _ = _startup(args)
    oracle = make_oracle(oc)
    records = corpus_mod.load_corpus(args.corpus)
    if args.fold is not None:
        records = [r for r in records if r.fold == args.fold]
    if not records:
        print("eval: empty corpus", file=sys.stderr)
        return 2
    env = Environment(oracle, tc.rewards, tc.reject_mode,
                      tc.step_penalty_on_edits)
    net = _load_net(args.model, tc.backend)
    metrics, results = evaluate_corpus(net, records, env)
    print(format_metrics(metrics))
    if args.out:
        metrics_to_csv(metrics, args.out)
        print(f"metrics csv: {args.out}", file=sys.stderr)
    if args.traces:
        with open(args.traces, "w", encoding="utf-8") as fh:
            for r in results:
                fh.write(json.dumps({
                    "program_id": r.program_id,
                    "actions": [a for a, _ in r.actions],
                    "errors": [r.errors_before, r.errors_after],
                    "outcome": r.outcome,
                }) + "\n")
        print(f"action traces: {args.traces}", file=sys.stderr)
    return 0


def cmd_export_embeddings(args) -> int:
    tc, oc, _ = _startup(args)
    records = corpus_mod.load_corpus(args.corpus)
    net = _load_net(args.model, tc.backend)
    rows, skipped = export_embeddings(net, records)
    if not rows:
        print("no single-error programs with fixes in the corpus",
              file=sys.stderr)
        return 1
    write_embedding_csv(rows, args.out)
    print(f"wrote {len(rows)} embedding rows "
          f"({len(rows) // 3} programs x 3 states) to {args.out}; "
          f"skipped {len(skipped)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="synfix",
        description="learned repair of typographic syntax errors in C-like "
                    "programs")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("lex", help="tokenize a source file")
    sp.add_argument("source", help="path or - for stdin")
    sp.set_defaults(func=cmd_lex)

    sp = sub.add_parser("seed-corpus",
                        help="generate a synthetic (broken, fixed) corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--problems", type=int, default=30)
    sp.add_argument("--variants", type=int, default=10)
    sp.add_argument("--faults", type=int, nargs="+", default=[1, 2],
                    help="choices for faults per program")
    sp.add_argument("--folds", type=int, default=0,
                    help="also assign this many cross-validation folds")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_seed_corpus)

    sp = sub.add_parser("gen-demos",
                        help="derive expert demonstrations from pairs")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_gen_demos)

    sp = sub.add_parser("train", help="train the repair policy")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--demos", help="demonstration file from gen-demos")
    sp.add_argument("--out", required=True, help="checkpoint path (.npz)")
    sp.add_argument("--log", help="training log CSV path")
    sp.add_argument("--fold", type=int,
                    help="hold out this fold from training")
    sp.add_argument("--max-episodes", type=int, dest="max_episodes")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("fix", help="repair one program with a trained model")
    sp.add_argument("source", help="path or - for stdin")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", help="write fixed source here (default stdout)")
    sp.add_argument("--trace", action="store_true",
                    help="print per-step cursor position and action")
    sp.add_argument("--require-complete", action="store_true",
                    help="exit 1 unless all errors were fixed")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_fix)

    sp = sub.add_parser("eval", help="corpus-level repair metrics")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--fold", type=int, help="evaluate only this fold")
    sp.add_argument("--out", help="metrics CSV path")
    sp.add_argument("--traces", help="write per-program action traces (JSONL)")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-embeddings",
                        help="probe-state embeddings + 3-component PCA csv")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OracleUnavailableError as exc:
        print(f"oracle unavailable: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, corpus_mod.CorpusFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
