"""Asynchronous advantage actor-critic training over repair episodes.

Several actor-learner threads roll out episodes with thread-local
parameter snapshots, accumulate gradients every ``t_max`` steps (or at
episode end) under the shared update rules, clip by global norm, and
apply them to one shared ADAM-optimized parameter store.  A fixed
fraction of training programs is episode-guided by expert demonstrations:
the recorded actions replace sampling, the loss path is identical.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .demos import Demonstration
from .env import (
    ACTIONS,
    Environment,
    Episode,
    N_ACTIONS,
    RewardSpec,
    Termination,
)
from .net import (
    Net,
    ParamLayout,
    Trajectory,
    TrajectoryStep,
    bootstrap_returns,
    init_params,
    loss_and_grads,
    save_checkpoint,
)
from .oracle import SurrogateOracle
from .tokens import Vocabulary, encode_state, lex


class DemoReplayError(RuntimeError):
    """A demonstration action was rejected: the demo data is corrupt."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    t_max: int = 24
    beta: float = 0.01
    learning_rate: float = 0.0001
    n_actor_learners: int = 32
    grad_clip_norm: float = 40.0
    demo_fraction: float = 0.10
    epochs: int = 10
    seed: int = 0
    value_loss_coef: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    backend: str = "auto"
    log_interval: int = 1000
    max_len: int = 2048
    reject_mode: str = "increase"
    step_penalty_on_edits: bool = False
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    rewards: RewardSpec = field(default_factory=RewardSpec)

    def __post_init__(self):
        if not 0.0 <= self.demo_fraction <= 1.0:
            raise ValueError("demo_fraction must be in [0, 1]")
        if self.t_max < 1 or self.n_actor_learners < 1 or self.epochs < 1:
            raise ValueError("t_max, n_actor_learners and epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "rewards" in d and isinstance(d["rewards"], dict):
            d["rewards"] = RewardSpec(**d["rewards"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def clip_by_global_norm(grad: np.ndarray, max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad *= max_norm / norm
    return norm


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=np.float64)
        self.v = np.zeros(size, dtype=np.float64)
        self.t = 0

        self._tmp = np.empty(size, dtype=np.float64)

    def apply(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        tmp = self._tmp
        # m += (1-b1)(g - m); v += (1-b2)(g^2 - v), all in place
        np.subtract(grad, self.m, out=tmp)
        tmp *= 1.0 - self.beta1
        self.m += tmp
        np.multiply(grad, grad, out=tmp)
        tmp -= self.v
        tmp *= 1.0 - self.beta2
        self.v += tmp
        # params -= lr * mhat / (sqrt(vhat) + eps) with bias correction
        np.sqrt(self.v, out=tmp)
        tmp /= np.sqrt(1.0 - self.beta2 ** self.t)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr / (1.0 - self.beta1 ** self.t)
        params -= tmp


class ParamStore:
    """Shared parameters with atomic whole-vector updates and snapshots.

    Readers always see a complete post-update vector (possibly stale);
    one gradient set is applied at a time.
    """

    def __init__(self, flat: np.ndarray, optimizer, clip_norm: float = 0.0):
        self.flat = np.array(flat, dtype=np.float64, copy=True)
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.lock = threading.Lock()
        self.version = 0

    def snapshot(self, out: np.ndarray | None = None) -> np.ndarray:
        with self.lock:
            if out is None:
                return self.flat.copy()
            np.copyto(out, self.flat)
            return out

    def apply(self, grad: np.ndarray) -> int:
        g = np.asarray(grad, dtype=np.float64)
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient update")
        with self.lock:
            if self.clip_norm:
                g = g.copy()
                clip_by_global_norm(g, self.clip_norm)
            self.optimizer.apply(self.flat, g)
            self.version += 1
            return self.version


@dataclass
class EpisodeStats:
    steps: int
    reward: float
    edits: int
    rejected: int
    errors_before: int
    errors_after: int
    termination: Termination
    used_demo: bool

    @property
    def resolved(self) -> int:
        return max(0, self.errors_before - self.errors_after)

    @property
    def goal(self) -> bool:
        return self.termination is Termination.GOAL


def run_episode(env: Environment, program, net: Net, vocab: Vocabulary,
                cfg: TrainConfig, rng, demo: Demonstration | None = None,
                on_update=None) -> EpisodeStats:
    """One training episode with t_max-chunked gradient accumulation.

    When ``demo`` is given its actions replace policy sampling; the
    update path is unchanged.  ``on_update(grad, stats)`` receives every
    accumulated gradient (the trainer applies it to the shared store and
    refreshes the local net).
    """
    ep = Episode(env, program)
    traj = Trajectory()
    demo_actions = iter(demo.actions) if demo is not None else None
    while not ep.done:
        ids = encode_state(ep.state.seq, ep.state.cursor, vocab)
        policy, value, _, cache = net.forward_save(ids)
        if demo_actions is not None:
            try:
                action = next(demo_actions)
            except StopIteration:
                raise DemoReplayError("demonstration ended before the goal")
        else:
            p = np.asarray(policy, dtype=np.float64)
            p /= p.sum()
            action = ACTIONS[int(rng.choice(N_ACTIONS, p=p))]
        res = ep.step(action)
        if demo_actions is not None and res.edit_accepted is False:
            raise DemoReplayError(f"demonstration edit {action.name} was rejected")
        traj.steps.append(TrajectoryStep(ids, action.index, res.reward,
                                         policy, value, cache=cache))
        if len(traj) >= cfg.t_max or ep.done:
            if ep.done:
                traj.bootstrap_value = 0.0
            else:
                nxt = encode_state(ep.state.seq, ep.state.cursor, vocab)
                _, traj.bootstrap_value, _ = net.forward(nxt)
            targets = bootstrap_returns(traj, cfg.gamma)
            grad, stats = loss_and_grads(net, traj, targets, cfg.beta,
                                         cfg.value_loss_coef)
            if on_update is not None:
                on_update(grad, stats)
            traj = Trajectory()
    return EpisodeStats(
        steps=ep.state.steps_taken,
        reward=ep.total_reward,
        edits=ep.n_edits,
        rejected=ep.n_rejected,
        errors_before=ep.initial_errors,
        errors_after=ep.state.error_count,
        termination=ep.termination,
        used_demo=demo is not None,
    )


def run_demo_episode(env, program, demo, net, vocab, cfg) -> tuple[np.ndarray, EpisodeStats]:
    """Demonstration-guided episode; returns the summed gradients instead
    of applying them anywhere (mostly a test/inspection hook)."""
    total = net.new_grad()
    stats = run_episode(env, program, net, vocab, cfg, rng=None, demo=demo,
                        on_update=lambda g, s: np.add(total, g, out=total))
    return total, stats


class _LogAccumulator:
    """Windowed training metrics; one row per log interval, plus
    per-epoch aggregates."""

    FIELDS = ("episodes", "epoch", "pct_resolved", "mean_len", "mean_edits",
              "mean_rejected", "mean_reward_x100", "goal_rate",
              "demo_episodes", "elapsed_s")

    def __init__(self, interval: int):
        self.interval = max(1, interval)
        self.lock = threading.Lock()
        self.rows: list[dict] = []
        self.episodes = 0
        self.t0 = time.perf_counter()
        self._win: list[EpisodeStats] = []
        self._epoch: dict[int, list[int]] = {}

    def add(self, stats: EpisodeStats, epoch: int) -> int:
        with self.lock:
            self.episodes += 1
            self._win.append(stats)
            agg = self._epoch.setdefault(epoch, [0, 0])
            agg[0] += stats.resolved
            agg[1] += stats.errors_before
            if len(self._win) >= self.interval:
                self._flush(epoch)
            return self.episodes

    def _flush(self, epoch: int) -> None:
        w = self._win
        n = len(w)
        total_errors = sum(s.errors_before for s in w)
        resolved = sum(s.resolved for s in w)
        self.rows.append({
            "episodes": self.episodes,
            "epoch": epoch,
            "pct_resolved": 100.0 * resolved / max(1, total_errors),
            "mean_len": sum(s.steps for s in w) / n,
            "mean_edits": sum(s.edits for s in w) / n,
            "mean_rejected": sum(s.rejected for s in w) / n,
            "mean_reward_x100": 100.0 * sum(s.reward for s in w) / n,
            "goal_rate": sum(s.goal for s in w) / n,
            "demo_episodes": sum(s.used_demo for s in w),
            "elapsed_s": time.perf_counter() - self.t0,
        })
        self._win = []

    def finish(self) -> None:
        with self.lock:
            if self._win:
                self._flush(max(self._epoch) if self._epoch else 0)

    def epoch_resolved_pct(self) -> dict[int, float]:
        return {e: 100.0 * r / max(1, t) for e, (r, t) in
                sorted(self._epoch.items())}


def write_log_csv(rows: list[dict], path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_LogAccumulator.FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass
class TrainResult:
    flat: np.ndarray
    layout: ParamLayout
    log_rows: list[dict]
    epoch_resolved_pct: dict[int, float]
    episodes: int
    demo_episode_count: int


def select_demo_subset(record_ids: list[str], demos: dict[str, Demonstration],
                       fraction: float, seed: int) -> set[str]:
    """The fixed subset of programs trained with demonstration guidance:
    a seeded sample of size ceil(fraction * corpus), drawn from the
    programs that actually have a demonstration."""
    if fraction <= 0 or not demos:
        return set()
    want = int(np.ceil(fraction * len(record_ids)))
    eligible = [rid for rid in record_ids if rid in demos]
    rng = np.random.default_rng(seed + 0x5eed)
    rng.shuffle(eligible)
    return set(eligible[:want])


def train(records, demos: dict[str, Demonstration] | None, cfg: TrainConfig,
          oracle=None, vocab: Vocabulary | None = None,
          max_episodes: int | None = None, quiet: bool = True) -> TrainResult:
    """Run ``cfg.epochs`` passes over the corpus and return the trained
    parameters plus the training log.

    ``records`` is a list of CorpusRecord-likes (id + source); ``demos``
    maps program ids to verified demonstrations (may be empty: the
    no-demonstration baselines).  ``max_episodes`` truncates the schedule.
    """
    demos = demos or {}
    vocab = vocab or Vocabulary.default()
    oracle = oracle or SurrogateOracle()
    layout = ParamLayout(vocab_size=len(vocab))
    store = ParamStore(
        init_params(layout, seed=cfg.seed),
        Adam(layout.size, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
             cfg.adam_eps),
        clip_norm=cfg.grad_clip_norm,
    )
    env = Environment(oracle, cfg.rewards, cfg.reject_mode,
                      cfg.step_penalty_on_edits)
    programs = {r.id: lex(r.source) for r in records}
    ids_in_order = [r.id for r in records]
    demo_subset = select_demo_subset(ids_in_order, demos, cfg.demo_fraction,
                                     cfg.seed)

    # One flat schedule: epochs x seeded permutations of the corpus.
    master = np.random.default_rng(cfg.seed)
    schedule: list[tuple[int, str]] = []
    for epoch in range(cfg.epochs):
        order = master.permutation(len(ids_in_order))
        schedule.extend((epoch, ids_in_order[i]) for i in order)
    if max_episodes is not None:
        schedule = schedule[:max_episodes]

    log = _LogAccumulator(cfg.log_interval)
    cursor_lock = threading.Lock()
    cursor = [0]
    errors: list[BaseException] = []
    demo_count = [0]

    def next_assignment():
        with cursor_lock:
            if cursor[0] >= len(schedule) or errors:
                return None
            item = schedule[cursor[0]]
            cursor[0] += 1
            return item

    def checkpoint(tag: str) -> None:
        if cfg.checkpoint_dir:
            os.makedirs(cfg.checkpoint_dir, exist_ok=True)
            save_checkpoint(os.path.join(cfg.checkpoint_dir, f"{tag}.npz"),
                            store.snapshot(), layout)

    def worker(worker_id: int) -> None:
        rng = np.random.default_rng((cfg.seed, worker_id))
        net = Net(layout, store.snapshot(), backend=cfg.backend,
                  max_len=cfg.max_len)
        local = np.empty(layout.size, dtype=np.float64)

        def on_update(grad, stats):
            store.apply(grad)
            net.refresh(store.snapshot(out=local))

        try:
            while True:
                item = next_assignment()
                if item is None:
                    return
                epoch, rid = item
                demo = demos.get(rid) if rid in demo_subset else None
                stats = run_episode(env, programs[rid], net, vocab, cfg, rng,
                                    demo=demo, on_update=on_update)
                if demo is not None:
                    with cursor_lock:
                        demo_count[0] += 1
                done = log.add(stats, epoch)
                if (cfg.checkpoint_every and
                        done % cfg.checkpoint_every == 0):
                    checkpoint(f"ep{done}")
                if not quiet and log.rows and done % log.interval == 0:
                    row = log.rows[-1]
                    print(f"[train] ep={row['episodes']} "
                          f"resolved={row['pct_resolved']:.1f}% "
                          f"len={row['mean_len']:.1f} "
                          f"reward={row['mean_reward_x100']:.1f}")
        except FloatingPointError as exc:
            checkpoint("diverged")
            errors.append(TrainingDiverged(str(exc)))
        except BaseException as exc:  # noqa: BLE001 - re-raised in main thread
            errors.append(exc)

    n_workers = min(cfg.n_actor_learners, max(1, len(schedule)))
    if n_workers == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(i,), daemon=True)
                   for i in range(n_workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if errors:
        raise errors[0]
    log.finish()
    checkpoint("final")
    return TrainResult(
        flat=store.snapshot(),
        layout=layout,
        log_rows=log.rows,
        epoch_resolved_pct=log.epoch_resolved_pct(),
        episodes=log.episodes,
        demo_episode_count=demo_count[0],
    )
