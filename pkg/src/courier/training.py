"""Clipped-surrogate policy-gradient training with the two-stage curriculum.

Rollouts come from a pool of parallel environments playing freshly sampled
(game, manual) episodes; updates run several epochs of minibatch ascent on
the clipped objective with a value and entropy term. Advantage estimation
uses generalized advantage weighting inside complete episodes (episodes
always terminate, so no bootstrapping).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import agents as ag
from . import autodiff as ad
from .encoding import TokenEmbeddingTable
from .tasks import EpisodeContext, EpisodeFactory, PolicyAgent
from .textgen import TemplateBank, assemble_manual
from .worldgen import Catalog, build_split, sample_training_game


@dataclass
class TrainConfig:
    variant: str = "emma"
    stage: str = "s1"
    d: int = 64
    d_tok: int = 64
    lr: float = 5e-5
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    n_envs: int = 8
    rollout_transitions: int = 1024
    max_episodes: int = 200_000
    target_win_rate: float | None = None  # early stop on the rolling rate
    win_window: int = 2000
    seed: int = 0
    split_seed: int = 0
    game_split: str = "train"
    negation: bool = False
    neutral: bool = False
    transfer: bool = False
    normalize_advantage: bool = True

    def __post_init__(self):
        for name in ("clip_eps", "gamma", "gae_lambda"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name}={v} outside (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.variant not in ag.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.stage not in ("s1", "s2"):
            raise ValueError(f"unknown stage {self.stage!r}")


def desk_profile(variant: str, stage: str, seed: int = 0, **overrides) -> TrainConfig:
    """CPU-friendly settings: small model, templated manuals, hash embeddings.

    The paper-scale learning rate (5e-5) is far too slow for single-CPU
    budgets; the profile raises it while leaving the TrainConfig default at
    the published value.
    """
    base = dict(variant=variant, stage=stage, d=64, d_tok=64, lr=3e-4,
                n_envs=16, seed=seed)
    if stage == "s1":
        base.update(gamma=1.0, rollout_transitions=1024, max_episodes=200_000,
                    target_win_rate=0.85, win_window=2000)
    else:
        base.update(gamma=0.99, rollout_transitions=2048, max_episodes=30_000,
                    target_win_rate=0.70, win_window=1000)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class EpisodeRecord:
    """One finished episode: everything an update needs to replay it."""

    ctx: EpisodeContext
    observations: list  # length T+1
    actions: np.ndarray
    rewards: np.ndarray
    logps: np.ndarray
    values: np.ndarray
    outcome: str
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Terminal-episode advantage estimates (no bootstrap value)."""
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        next_v = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + gamma * next_v - values[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv, adv + values


@dataclass
class TrainResult:
    params: ag.ModelParams
    optimizer: ad.Adam
    curves: list[dict]
    episodes: int
    env_steps: int
    stop_reason: str
    final_win_rate: float


class NanLossError(RuntimeError):
    pass


class PpoTrainer:
    def __init__(self, config: TrainConfig, catalog: Catalog | None = None,
                 bank: TemplateBank | None = None,
                 table: TokenEmbeddingTable | None = None,
                 params: ag.ModelParams | None = None,
                 optimizer: ad.Adam | None = None,
                 counts: ag.BamCounts | None = None):
        self.cfg = config
        self.catalog = catalog or build_split(config.split_seed)
        self.bank = bank or TemplateBank.load()
        self.table = table or TokenEmbeddingTable(dim=config.d_tok)
        self.params = params or ag.init_params(config.variant, config.d,
                                               config.d_tok, seed=config.seed)
        if self.params.variant != config.variant:
            raise ValueError(f"checkpoint variant {self.params.variant!r} does not "
                             f"match config variant {config.variant!r}")
        self.optimizer = optimizer or ad.Adam(self.params.trainable(), lr=config.lr)
        self.agent = PolicyAgent(self.params, counts=counts)
        self.factory = EpisodeFactory(self.catalog, self.bank, self.table,
                                      config.stage, negation=config.negation,
                                      neutral=config.neutral, transfer=config.transfer)
        ss = np.random.SeedSequence([0x7247, config.seed])
        self.rng_env, self.rng_act, self.rng_update = \
            [np.random.default_rng(s) for s in ss.spawn(3)]
        self.episodes_done = 0
        self.env_steps = 0
        self.updates = 0
        self.win_history: deque = deque(maxlen=config.win_window)
        self.reward_history: deque = deque(maxlen=config.win_window)
        self.curves: list[dict] = []

    # -- rollout ------------------------------------------------------------

    def _new_slot(self) -> tuple[EpisodeContext, EpisodeRecord]:
        ctx = self.factory.sample_training(self.rng_env, split=self.cfg.game_split)
        self.agent.begin(ctx)
        rec = EpisodeRecord(ctx=ctx, observations=[ctx.obs], actions=None,
                            rewards=None, logps=None, values=None, outcome="")
        rec.actions, rec.rewards, rec.logps, rec.values = [], [], [], []
        return ctx, rec

    def collect(self) -> list[EpisodeRecord]:
        """Complete episodes totalling at least ``rollout_transitions`` steps.

        Slots that finish while the quota is unmet start a fresh episode;
        afterwards the in-flight episodes play out so every record is
        complete and strictly on-policy.
        """
        cfg = self.cfg
        done_records: list[EpisodeRecord] = []
        slots = [self._new_slot() for _ in range(cfg.n_envs)]
        active = list(range(cfg.n_envs))
        collected = 0
        while active:
            ctxs = [slots[i][0] for i in active]
            actions, logps, values = self.agent.act_batch(ctxs, self.rng_act)
            finished = []
            for j, i in enumerate(active):
                ctx, rec = slots[i]
                res = ctx.env.step(int(actions[j]))
                ctx.advance(res.observation)
                rec.observations.append(res.observation)
                rec.actions.append(int(actions[j]))
                rec.rewards.append(res.reward)
                rec.logps.append(logps[j])
                rec.values.append(values[j])
                self.env_steps += 1
                if res.done:
                    rec.outcome = res.outcome
                    rec.actions = np.array(rec.actions, dtype=np.int64)
                    rec.rewards = np.array(rec.rewards)
                    rec.logps = np.array(rec.logps)
                    rec.values = np.array(rec.values)
                    rec.advantages, rec.returns = compute_gae(
                        rec.rewards, rec.values, cfg.gamma, cfg.gae_lambda)
                    done_records.append(rec)
                    collected += len(rec)
                    self.episodes_done += 1
                    self.win_history.append(1.0 if res.outcome == "win" else 0.0)
                    self.reward_history.append(float(rec.rewards.sum()))
                    if collected < cfg.rollout_transitions and \
                            self.episodes_done < cfg.max_episodes:
                        slots[i] = self._new_slot()
                    else:
                        finished.append(i)
            active = [i for i in active if i not in finished]
        return done_records

    # -- update -------------------------------------------------------------

    def _minibatches(self, records: list[EpisodeRecord]):
        order = self.rng_update.permutation(len(records))
        batch, size = [], 0
        for idx in order:
            batch.append(records[idx])
            size += len(records[idx])
            if size >= self.cfg.minibatch:
                yield batch
                batch, size = [], 0
        if batch:
            yield batch

    def update(self, records: list[EpisodeRecord]) -> dict:
        cfg = self.cfg
        all_adv = np.concatenate([r.advantages for r in records])
        if cfg.normalize_advantage:
            mean, std = all_adv.mean(), all_adv.std()
            for r in records:
                r.advantages = (r.advantages - mean) / (std + 1e-8)
        stats = {"loss": 0.0, "surrogate": 0.0, "vloss": 0.0, "entropy": 0.0}
        n_batches = 0
        for _ in range(cfg.epochs):
            for batch in self._minibatches(records):
                piece = self._minibatch_loss(batch)
                for k in stats:
                    stats[k] += piece[k]
                n_batches += 1
        for k in stats:
            stats[k] /= max(n_batches, 1)
        self.updates += 1
        return stats

    def _minibatch_loss(self, batch: list[EpisodeRecord]) -> dict:
        cfg = self.cfg
        inputs, actions, old_logp, adv, rets = [], [], [], [], []
        for ep_i, rec in enumerate(batch):
            for t in range(len(rec)):
                frames = [rec.observations[max(0, t - 2)],
                          rec.observations[max(0, t - 1)],
                          rec.observations[t]]
                inp = ag.AgentInput(frames=frames, manual=rec.ctx.manual_mats,
                                    manual_key=ep_i, truths=rec.ctx.truths,
                                    ids=rec.ctx.ids, assignment=rec.ctx.assignment)
                inputs.append(inp)
            actions.append(rec.actions)
            old_logp.append(rec.logps)
            adv.append(rec.advantages)
            rets.append(rec.returns)
        actions = np.concatenate(actions)
        old_logp = np.concatenate(old_logp)
        adv = np.concatenate(adv).astype(ad.default_dtype())
        rets = np.concatenate(rets).astype(ad.default_dtype())

        out = ag.forward(self.params, inputs)
        logp_all = ad.log_softmax(out.logits, axis=1)
        logp = ad.gather_rows(logp_all, actions)
        ratio = ad.exp(ad.sub(logp, ad.Tensor(old_logp.astype(ad.default_dtype()))))
        adv_t = ad.Tensor(adv)
        surr = ad.minimum(ad.mul(ratio, adv_t),
                          ad.mul(ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps),
                                 adv_t))
        surrogate = ad.mean(surr)
        vloss = ad.mean(ad.square(ad.sub(out.value, ad.Tensor(rets))))
        entropy = ad.mean(ad.tsum(ad.mul(out.probs, logp_all), axis=1))  # = -H
        loss = ad.add(ad.add(ad.mul(surrogate, ad.Tensor(-1.0)),
                             ad.mul(vloss, ad.Tensor(cfg.value_coef))),
                      ad.mul(entropy, ad.Tensor(cfg.entropy_coef)))
        if not np.isfinite(loss.data):
            raise NanLossError(
                f"non-finite loss at update {self.updates}: surrogate="
                f"{float(surrogate.data)} vloss={float(vloss.data)} "
                f"entropy={float(-entropy.data)} episodes={self.episodes_done}")
        ad.backward(loss, params=list(self.params.tensors.values()))
        self.optimizer.step()
        return {"loss": float(loss.data), "surrogate": float(surrogate.data),
                "vloss": float(vloss.data), "entropy": float(-entropy.data)}

    # -- loop ---------------------------------------------------------------

    @property
    def rolling_win_rate(self) -> float:
        return float(np.mean(self.win_history)) if self.win_history else 0.0

    def train(self, log_fn=None) -> TrainResult:
        cfg = self.cfg
        stop = "max_episodes"
        while self.episodes_done < cfg.max_episodes:
            records = self.collect()
            stats = self.update(records)
            row = {
                "update": self.updates, "episodes": self.episodes_done,
                "env_steps": self.env_steps,
                "win_rate": round(self.rolling_win_rate, 4),
                "mean_reward": round(float(np.mean(self.reward_history)), 4)
                if self.reward_history else 0.0,
                **{k: round(v, 5) for k, v in stats.items()},
            }
            self.curves.append(row)
            if log_fn:
                log_fn(row)
            if (cfg.target_win_rate is not None
                    and len(self.win_history) == cfg.win_window
                    and self.rolling_win_rate >= cfg.target_win_rate):
                stop = "target_win_rate"
                break
        return TrainResult(params=self.params, optimizer=self.optimizer,
                           curves=self.curves, episodes=self.episodes_done,
                           env_steps=self.env_steps, stop_reason=stop,
                           final_win_rate=self.rolling_win_rate)


def ppo_train(config: TrainConfig, log_fn=None, **kwargs) -> TrainResult:
    """Train from scratch (or from ``params=``) under ``config``."""
    return PpoTrainer(config, **kwargs).train(log_fn=log_fn)


def curriculum_transfer(source: ag.ModelParams) -> ag.ModelParams:
    """Parameter-for-parameter copy into a fresh model; optimizer state is
    not carried over (the stage-two run starts a new Adam at step 0)."""
    out = ag.ModelParams(variant=source.variant, d=source.d, d_tok=source.d_tok)
    for name, t in source.tensors.items():
        out.tensors[name] = ad.Tensor(t.data.copy(), requires_grad=True)
    return out


def load_checkpoint_params(path) -> tuple[ag.ModelParams, dict, dict | None]:
    meta, tensors, opt_state = ad.load_checkpoint(path)
    params = ag.ModelParams(variant=meta["variant"], d=meta["d"],
                            d_tok=meta["d_tok"], tensors=tensors)
    return params, meta, opt_state


def save_params(path, params: ag.ModelParams, optimizer: ad.Adam | None = None,
                extra: dict | None = None) -> None:
    ad.save_checkpoint(path, params.variant, params.d, params.d_tok,
                       params.tensors, optimizer=optimizer, extra=extra)


def bam_pretrain(catalog: Catalog, bank: TemplateBank, episodes: int,
                 rng: np.random.Generator, stage: str = "s2",
                 smoothing: float = 1.0) -> ag.BamCounts:
    """Accumulate token-entity co-occurrence over sampled training episodes.

    No agent is involved: each episode contributes its manual's tokens
    against the three entities present.
    """
    counts = ag.BamCounts(smoothing=smoothing)
    for _ in range(episodes):
        game, movements = sample_training_game(catalog, rng, stage)
        manual = assemble_manual(bank, game, movements, "train", rng)
        tokens = [t for d in manual.descriptions for t in d.tokens]
        counts.update(tokens, game.entities)
    return counts


def transfer_finetune(params: ag.ModelParams, config: TrainConfig,
                      **kwargs) -> TrainResult:
    """Continue training with the bonus collectibles on the validation games."""
    cfg = replace(config, transfer=True, game_split="val")
    fresh = curriculum_transfer(params)
    return PpoTrainer(cfg, params=fresh, **kwargs).train()


def curves_to_csv(curves: list[dict]) -> str:
    if not curves:
        return ""
    cols = list(curves[0])
    lines = [",".join(cols)]
    for row in curves:
        lines.append(",".join(str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def config_to_json(config: TrainConfig) -> str:
    return json.dumps(asdict(config), indent=1, sort_keys=True)


def config_from_json(text: str) -> TrainConfig:
    return TrainConfig(**json.loads(text))
