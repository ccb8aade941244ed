"""Episode assembly and acting agents shared by training and evaluation.

An EpisodeContext bundles everything one episode needs: the sampled game and
movements, a seeded environment, the manual in token and embedded form, and
the rolling three-frame observation history the policies consume.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import agents as ag
from . import autodiff as ad
from .encoding import TokenEmbeddingTable
from .engine import ACTIONS, GRID_H, GRID_W, Env, EnvOptions, Observation
from .textgen import Manual, ManualOptions, TemplateBank, assemble_manual, perturb
from .worldgen import Catalog, GameSpec, sample_training_game, test_variant


@dataclass
class EpisodeContext:
    game: GameSpec
    movements: tuple[str, str, str]
    stage: str
    env: Env
    manual: Manual
    manual_tokens: list[list[str]]
    manual_mats: list[np.ndarray]
    truths: tuple[int, ...]
    ids: tuple[int, int, int]
    frames: deque = field(default_factory=lambda: deque(maxlen=3))
    obs: Observation | None = None
    assignment: dict[int, int] | None = None

    def start(self) -> None:
        self.obs = self.env.reset()
        self.frames.clear()
        for _ in range(3):
            self.frames.append(self.obs)

    def advance(self, obs: Observation) -> None:
        self.obs = obs
        self.frames.append(obs)

    def agent_input(self, key) -> ag.AgentInput:
        return ag.AgentInput(frames=list(self.frames), manual=self.manual_mats,
                             manual_key=key, truths=self.truths, ids=self.ids,
                             assignment=self.assignment)


class EpisodeFactory:
    """Builds seeded episodes from the catalog, bank, and embedding table."""

    def __init__(self, catalog: Catalog, bank: TemplateBank, table: TokenEmbeddingTable,
                 stage: str, negation: bool = False, neutral: bool = False,
                 transfer: bool = False):
        self.catalog = catalog
        self.bank = bank
        self.table = table
        self.stage = stage
        self.negation = negation
        self.env_options = EnvOptions(transfer=transfer, neutral=neutral)

    def build(self, game: GameSpec, movements, rng: np.random.Generator,
              manual_split: str, perturbation: str | None = None) -> EpisodeContext:
        opts = ManualOptions(negation=self.negation)
        manual = assemble_manual(self.bank, game, movements, manual_split, rng, opts)
        if perturbation:
            manual = perturb(self.bank, manual, perturbation, rng)
        mats, tokens = [], []
        dtype = ad.default_dtype()
        for d in manual.descriptions:
            tokens.append(list(d.tokens))
            mats.append(self.table.embed(list(d.tokens)).astype(dtype))
        env = Env(game, movements, self.stage, rng.spawn(1)[0], self.env_options)
        ctx = EpisodeContext(
            game=game, movements=tuple(movements), stage=self.stage, env=env,
            manual=manual, manual_tokens=tokens, manual_mats=mats,
            truths=tuple(d.truth_entity for d in manual.descriptions),
            ids=ag.game_ids(game))
        ctx.start()
        return ctx

    def sample_training(self, rng: np.random.Generator,
                        split: str = "train") -> EpisodeContext:
        if split == "train":
            game, movements = sample_training_game(self.catalog, rng, self.stage)
        else:
            # multi-task over an evaluation split (transfer finetuning):
            # uniform games, training-style movements
            games = self.catalog.split_games(split)
            game = games[rng.integers(len(games))]
            if self.stage == "s1":
                movements = ("immovable",) * 3
            else:
                movements = tuple(rng.permutation(["chasing", "fleeing", "immovable"]))
        return self.build(game, movements, rng, manual_split=split)

    def eval_episode(self, game: GameSpec, suite: str, rng: np.random.Generator
                     ) -> EpisodeContext:
        """Movement and manual rules for one evaluation episode."""
        if self.stage == "s1":
            movements = ("immovable",) * 3
        elif game.split == "train":
            movements = tuple(rng.permutation(["chasing", "fleeing", "immovable"]))
        elif suite == "s2-se":
            movements = test_variant(game, "se", rng)
        else:
            movements = test_variant(game, "dynamics", rng)
        perturbation = suite if suite in ("append", "delete", "synonym") else None
        manual_split = game.split or "train"
        if perturbation == "synonym":
            manual_split = "test"
        return self.build(game, movements, rng, manual_split=manual_split,
                          perturbation=perturbation)


# ---------------------------------------------------------------------------
# acting


class PolicyAgent:
    """Wraps model parameters for rollout / evaluation acting."""

    def __init__(self, params: ag.ModelParams, counts: ag.BamCounts | None = None,
                 greedy: bool = False):
        self.params = params
        self.counts = counts
        self.greedy = greedy
        if params.variant == "bam" and counts is None:
            raise ValueError("bam variant needs pretrained co-occurrence counts")

    def begin(self, ctx: EpisodeContext) -> None:
        if self.params.variant == "bam":
            candidates = [e for e in ctx.game.entities]
            ctx.assignment = self.counts.assign(ctx.manual_tokens, candidates)

    def act_batch(self, contexts: list[EpisodeContext], rng: np.random.Generator):
        """Returns (actions, log-probs, values) for the batch, without grads."""
        inputs = [ctx.agent_input(key=i) for i, ctx in enumerate(contexts)]
        with ad.no_grad():
            out = ag.forward(self.params, inputs)
        probs = out.probs.data
        if self.greedy:
            actions = probs.argmax(axis=1)
        else:
            cum = probs.cumsum(axis=1)
            draws = rng.random((len(contexts), 1))
            actions = (draws < cum).argmax(axis=1)
        idx = np.arange(len(contexts))
        logp = np.log(np.maximum(probs[idx, actions], 1e-30))
        return actions.astype(np.int64), logp, out.value.data.copy()

    def act(self, ctx: EpisodeContext, rng: np.random.Generator) -> int:
        return int(self.act_batch([ctx], rng)[0][0])


class RandomAgent:
    """Uniform-random policy; the floor for any learned agent."""

    def begin(self, ctx: EpisodeContext) -> None:
        pass

    def act(self, ctx: EpisodeContext, rng: np.random.Generator) -> int:
        return int(rng.integers(len(ACTIONS)))


class BfsOracle:
    """Privileged shortest-path planner over deterministic layouts.

    Stage one: walk to the correct target. Stage two (immovable variants):
    walk to the message avoiding the enemy and the goal, then to the goal
    avoiding the enemy. Replans every step.
    """

    def begin(self, ctx: EpisodeContext) -> None:
        pass

    def act(self, ctx: EpisodeContext, rng: np.random.Generator) -> int:
        s = ctx.env.state
        alive = {e.role: e.pos for e in s.entities if e.alive}
        if s.stage == "s1":
            target_role = "goal" if s.has_message else "message"
            target = alive[target_role]
            blocked = {p for r, p in alive.items() if r != target_role}
        elif not s.has_message:
            target = alive["message"]
            blocked = {alive["enemy"], alive["goal"]}
        else:
            target = alive["goal"]
            blocked = {alive["enemy"]}
        step = self._first_step(s.avatar, target, blocked)
        return step if step is not None else ACTIONS.index("stay")

    @staticmethod
    def _first_step(start, target, blocked):
        if start == target:
            return ACTIONS.index("stay")
        prev = {start: None}
        q = deque([start])
        while q:
            pos = q.popleft()
            if pos == target:
                cur = target
                while prev[cur] != start:
                    cur = prev[cur]
                dr, dc = cur[0] - start[0], cur[1] - start[1]
                return {(-1, 0): 0, (1, 0): 1, (0, -1): 2, (0, 1): 3}[(dr, dc)]
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                nxt = (pos[0] + dr, pos[1] + dc)
                if not (0 <= nxt[0] < GRID_H and 0 <= nxt[1] < GRID_W):
                    continue
                if nxt in prev or (nxt in blocked and nxt != target):
                    continue
                prev[nxt] = pos
                q.append(nxt)
        return None


def run_episode(ctx: EpisodeContext, agent, rng: np.random.Generator):
    """Play one episode to completion; returns (total reward, outcome, steps)."""
    agent.begin(ctx)
    total = 0.0
    steps = 0
    while not ctx.env.state.done:
        action = agent.act(ctx, rng)
        res = ctx.env.step(action)
        ctx.advance(res.observation)
        total += res.reward
        steps += 1
    return total, ctx.env.state.outcome, steps
