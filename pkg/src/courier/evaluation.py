"""Win-rate evaluation over the game splits, robustness and transfer suites.

A suite fixes how evaluation episodes are built (movement variants, manual
perturbations, env options); the report breaks win rates down by split and
combination class, mean +/- standard deviation across seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import agents as ag
from .encoding import TokenEmbeddingTable
from .tasks import EpisodeFactory, PolicyAgent, run_episode
from .textgen import TemplateBank
from .worldgen import Catalog

SUITES = ("s1", "s2", "s2-se", "append", "delete", "synonym", "negation",
          "neutral", "transfer")
# suites that only make sense with a manual-reading model
_MANUAL_SUITES = ("append", "delete", "synonym", "negation")


@dataclass
class CellStats:
    episodes: int = 0
    wins: int = 0
    losses: int = 0
    timeouts: int = 0
    reward_sum: float = 0.0

    def add(self, outcome: str, reward: float) -> None:
        self.episodes += 1
        self.reward_sum += reward
        if outcome == "win":
            self.wins += 1
        elif outcome == "lose":
            self.losses += 1
        else:
            self.timeouts += 1

    @property
    def win_rate(self) -> float:
        return self.wins / self.episodes if self.episodes else 0.0

    @property
    def mean_reward(self) -> float:
        return self.reward_sum / self.episodes if self.episodes else 0.0


@dataclass
class EvalReport:
    suite: str
    seeds: list[int]
    per_seed: list[dict] = field(default_factory=list)  # seed -> cell -> CellStats

    def cells(self):
        keys = set()
        for run in self.per_seed:
            keys.update(run)
        return sorted(keys)

    def win_rate(self, split: str = "all", combo: str = "all"):
        """(mean, std) win rate across seeds for one breakdown cell."""
        rates = []
        for run in self.per_seed:
            st = run.get((split, combo))
            if st is not None and st.episodes:
                rates.append(st.win_rate)
        if not rates:
            return 0.0, 0.0
        return float(np.mean(rates)), float(np.std(rates))

    def mean_reward(self, split: str = "all", combo: str = "all"):
        vals = [run[(split, combo)].mean_reward for run in self.per_seed
                if (split, combo) in run]
        if not vals:
            return 0.0, 0.0
        return float(np.mean(vals)), float(np.std(vals))

    def accounting_consistent(self) -> bool:
        for run in self.per_seed:
            for st in run.values():
                if st.wins + st.losses + st.timeouts != st.episodes:
                    return False
        return True

    def rows(self):
        for split, combo in self.cells():
            mean, std = self.win_rate(split, combo)
            rmean, _ = self.mean_reward(split, combo)
            episodes = sum(run[(split, combo)].episodes for run in self.per_seed
                           if (split, combo) in run)
            yield {"suite": self.suite, "split": split, "combo": combo,
                   "episodes": episodes, "win_rate": round(100 * mean, 2),
                   "win_rate_std": round(100 * std, 2),
                   "mean_reward": round(rmean, 4)}

    def to_json(self) -> str:
        return json.dumps({"suite": self.suite, "seeds": self.seeds,
                           "rows": list(self.rows())}, indent=1)

    def to_csv(self) -> str:
        rows = list(self.rows())
        if not rows:
            return ""
        cols = list(rows[0])
        out = [",".join(cols)]
        for r in rows:
            out.append(",".join(str(r[c]) for c in cols))
        return "\n".join(out) + "\n"


def _suite_stage(suite: str) -> str:
    return "s1" if suite == "s1" else "s2"


def _suite_splits(suite: str) -> tuple[str, ...]:
    if suite == "transfer":
        return ("val",)
    return ("train", "val", "test")


def evaluate(agent, catalog: Catalog, bank: TemplateBank, table: TokenEmbeddingTable,
             suite: str, episodes_per_split: int = 64,
             seeds=(0, 1, 2), stage: str | None = None) -> EvalReport:
    """Run ``episodes_per_split`` episodes per split per seed under a suite.

    ``agent`` needs ``begin(ctx)`` and ``act(ctx, rng)``; model agents wrap
    parameters with PolicyAgent, scripted baselines implement it directly.
    Games cycle round-robin within each split; every episode gets fresh
    movements and a fresh manual per the suite's rules.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    if isinstance(agent, PolicyAgent):
        if agent.params.variant == "gid" and suite in _MANUAL_SUITES:
            raise ValueError(f"suite {suite!r} perturbs manuals; the id-conditioned "
                             "variant does not read them")
    stage = stage or _suite_stage(suite)
    report = EvalReport(suite=suite, seeds=list(seeds))
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([0xE7A1, seed]))
        factory = EpisodeFactory(catalog, bank, table, stage,
                                 negation=(suite == "negation"),
                                 neutral=(suite == "neutral"),
                                 transfer=(suite == "transfer"))
        cells: dict = {}
        for split in _suite_splits(suite):
            games = catalog.split_games(split)
            for i in range(episodes_per_split):
                game = games[i % len(games)]
                ctx = factory.eval_episode(game, suite, rng)
                reward, outcome, _ = run_episode(ctx, agent, rng)
                combo = game.combo_class.lower()
                for key in [(split, "all"), (split, combo), ("all", "all")]:
                    cells.setdefault(key, CellStats()).add(outcome, reward)
        report.per_seed.append(cells)
    return report


def evaluate_params(params: ag.ModelParams, catalog, bank, table, suite: str,
                    episodes_per_split: int = 64, seeds=(0, 1, 2),
                    counts: ag.BamCounts | None = None,
                    stage: str | None = None) -> EvalReport:
    agent = PolicyAgent(params, counts=counts)
    return evaluate(agent, catalog, bank, table, suite,
                    episodes_per_split=episodes_per_split, seeds=seeds, stage=stage)
