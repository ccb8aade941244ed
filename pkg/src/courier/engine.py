"""Deterministic-given-seed grid simulator for curriculum stages one and two.

Stage one: immobile entities two cells from the centered avatar, four-step
episodes, win by touching the correct entity. Stage two: entities shuffled
over four canonical starts, mobile entities move every second step at half
the avatar's speed, 64-step episodes, message pickup then goal delivery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .worldgen import (AVATAR_PLAIN, AVATAR_WITH_MESSAGE, GOLD_ID, NEUTRAL_IDS,
                       ROLES, TRAP_ID, GameSpec)

GRID_H = GRID_W = 10
STEP_LIMIT = {"s1": 4, "s2": 64}

ACTIONS = ("up", "down", "left", "right", "stay")
_DELTAS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1),
           "stay": (0, 0)}

S1_CENTER = (5, 5)
# the four axis cells at Manhattan distance 2 from the center
S1_ENTITY_CELLS = ((3, 5), (7, 5), (5, 3), (5, 7))
S1_START_WITH_MESSAGE_P = 0.2
# one 90-degree rotation orbit around the grid center
S2_START_CELLS = ((1, 4), (4, 8), (8, 5), (5, 1))
COLLECTIBLE_CELLS = ((2, 2), (7, 7))

REWARD_WIN = 1.0
REWARD_LOSE = -1.0
REWARD_TIMEOUT = -1.0
REWARD_MESSAGE = 0.5
REWARD_GOLD = 1.0
REWARD_TRAP = -1.0


@dataclass
class EntityState:
    symbol: int
    role: str
    movement: str
    pos: tuple[int, int]
    alive: bool = True


@dataclass
class Collectible:
    kind: str  # "trap" | "gold"
    pos: tuple[int, int]
    alive: bool = True

    @property
    def symbol(self) -> int:
        return TRAP_ID if self.kind == "trap" else GOLD_ID


@dataclass(frozen=True)
class Observation:
    """Agent-visible symbols: alive non-avatar occupants plus the avatar."""

    entities: tuple[tuple[int, int, int], ...]  # (symbol, row, col), symbol-sorted
    avatar: tuple[int, int, int]  # (symbol, row, col)

    def occupants(self) -> dict[tuple[int, int], list[int]]:
        cells: dict[tuple[int, int], list[int]] = {}
        for sym, r, c in self.entities + (self.avatar,):
            cells.setdefault((r, c), []).append(sym)
        return cells


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool
    outcome: str  # "win" | "lose" | "timeout" | "ongoing"


@dataclass
class EnvOptions:
    transfer: bool = False  # add trap + gold collectibles
    neutral: bool = False  # add one inert bystander entity


@dataclass
class EnvState:
    stage: str
    avatar: tuple[int, int]
    has_message: bool
    entities: list[EntityState]
    collectibles: list[Collectible] = field(default_factory=list)
    neutral: EntityState | None = None
    step_count: int = 0
    done: bool = False
    outcome: str = "ongoing"


class EpisodeError(RuntimeError):
    pass


def _clamp(pos: tuple[int, int]) -> tuple[int, int]:
    return (min(max(pos[0], 0), GRID_H - 1), min(max(pos[1], 0), GRID_W - 1))


def entity_move(entity: EntityState, avatar_pos: tuple[int, int],
                rng: np.random.Generator) -> tuple[int, int]:
    """Unit axis move for one mobile entity.

    Chasing strictly decreases Manhattan distance to the avatar when some
    in-grid move can; fleeing strictly increases it, else stays. Ties between
    a vertical and a horizontal candidate prefer vertical; ties between two
    moves on the same axis (only fleeing produces them) fall to the rng.
    """
    if entity.movement == "immovable":
        return (0, 0)
    r, c = entity.pos
    cur = abs(r - avatar_pos[0]) + abs(c - avatar_pos[1])
    candidates = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr, nc = r + dr, c + dc
        if not (0 <= nr < GRID_H and 0 <= nc < GRID_W):
            continue
        nd = abs(nr - avatar_pos[0]) + abs(nc - avatar_pos[1])
        if entity.movement == "chasing" and nd < cur:
            candidates.append((dr, dc))
        elif entity.movement == "fleeing" and nd > cur:
            candidates.append((dr, dc))
    if not candidates:
        return (0, 0)
    vertical = [d for d in candidates if d[1] == 0]
    pool = vertical if vertical else candidates
    if len(pool) == 1:
        return pool[0]
    return pool[rng.integers(len(pool))]


def attach_collectibles(state: EnvState, rng: np.random.Generator) -> EnvState:
    """Place the trap and the gold, shuffled between their two fixed cells."""
    cells = list(COLLECTIBLE_CELLS)
    if rng.random() < 0.5:
        cells.reverse()
    state.collectibles = [Collectible("trap", cells[0]), Collectible("gold", cells[1])]
    return state


def add_neutral_entity(state: EnvState, rng: np.random.Generator) -> EnvState:
    """Drop one of the five reserved inert symbols on a free cell."""
    symbol = NEUTRAL_IDS[rng.integers(len(NEUTRAL_IDS))]
    taken = {e.pos for e in state.entities} | {state.avatar}
    taken.update(c.pos for c in state.collectibles)
    while True:
        pos = (int(rng.integers(GRID_H)), int(rng.integers(GRID_W)))
        if pos not in taken:
            break
    state.neutral = EntityState(symbol, "neutral", "immovable", pos)
    return state


class Env:
    """Single-owner mutable episode. Same (game, movements, stage, seed,
    options) always replays identically."""

    def __init__(self, game: GameSpec, movements: tuple[str, str, str], stage: str,
                 seed: int | np.random.Generator, options: EnvOptions | None = None):
        if stage not in STEP_LIMIT:
            raise ValueError(f"unknown stage {stage!r}")
        if len(movements) != 3 or any(m not in ("chasing", "fleeing", "immovable")
                                      for m in movements):
            raise ValueError(f"need 3 valid movements, got {movements}")
        if stage == "s1" and set(movements) != {"immovable"}:
            raise ValueError("stage-one entities are immovable")
        self.game = game
        self.movements = tuple(movements)
        self.stage = stage
        self.options = options or EnvOptions()
        self.rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(np.random.SeedSequence([0xE9F, int(seed)]))
        self.state: EnvState | None = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> Observation:
        rng = self.rng
        entities = [EntityState(sym, role, mv, (0, 0))
                    for role, sym, mv in zip(ROLES, self.game.entities, self.movements)]
        if self.stage == "s1":
            avatar = S1_CENTER
            cells = [S1_ENTITY_CELLS[i] for i in rng.permutation(4)[:3]]
            for e, cell in zip(entities, cells):
                e.pos = tuple(cell)
            # with-message starts keep the message entity on the grid as a
            # decoy: touching it then loses, per the stage-one contact rule
            has_message = bool(rng.random() >= 1.0 - S1_START_WITH_MESSAGE_P)
        else:
            spots = [S2_START_CELLS[i] for i in rng.permutation(4)]
            avatar = tuple(spots[0])
            for e, cell in zip(entities, spots[1:]):
                e.pos = tuple(cell)
            has_message = False
        self.state = EnvState(stage=self.stage, avatar=avatar,
                              has_message=has_message, entities=entities)
        if self.options.transfer:
            attach_collectibles(self.state, rng)
        if self.options.neutral:
            add_neutral_entity(self.state, rng)
        return self.observation()

    def observation(self) -> Observation:
        s = self.state
        rows = []
        for e in s.entities:
            if e.alive:
                rows.append((e.symbol, e.pos[0], e.pos[1]))
        for c in s.collectibles:
            if c.alive:
                rows.append((c.symbol, c.pos[0], c.pos[1]))
        if s.neutral is not None:
            rows.append((s.neutral.symbol, s.neutral.pos[0], s.neutral.pos[1]))
        avatar_sym = AVATAR_WITH_MESSAGE if s.has_message else AVATAR_PLAIN
        return Observation(entities=tuple(sorted(rows)),
                           avatar=(avatar_sym, s.avatar[0], s.avatar[1]))

    # -- stepping -----------------------------------------------------------

    def step(self, action) -> StepResult:
        s = self.state
        if s is None:
            raise EpisodeError("reset the environment before stepping")
        if s.done:
            raise EpisodeError("episode finished; reset before stepping")
        if isinstance(action, (int, np.integer)):
            action = ACTIONS[action]
        if action not in _DELTAS:
            raise ValueError(f"unknown action {action!r}")

        s.step_count += 1
        reward = 0.0
        dr, dc = _DELTAS[action]
        s.avatar = _clamp((s.avatar[0] + dr, s.avatar[1] + dc))
        reward += self._contacts()

        if not s.done and s.stage == "s2" and s.step_count % 2 == 0:
            for e in s.entities:
                if e.alive and e.movement in ("chasing", "fleeing"):
                    mr, mc = entity_move(e, s.avatar, self.rng)
                    e.pos = (e.pos[0] + mr, e.pos[1] + mc)
            reward += self._contacts()

        if not s.done and s.step_count >= STEP_LIMIT[s.stage]:
            reward += REWARD_TIMEOUT
            s.done, s.outcome = True, "timeout"

        return StepResult(self.observation(), reward, s.done, s.outcome)

    def _contacts(self) -> float:
        """Resolve everything sharing the avatar's cell; returns the reward.

        Simultaneous contacts are judged against the avatar's state on entry:
        a message picked up in the same instant does not turn a goal contact
        into a delivery, and an enemy in the pile still loses the game.
        """
        s = self.state
        reward = 0.0
        here = [e for e in s.entities if e.alive and e.pos == s.avatar]
        had_message = s.has_message

        for c in s.collectibles:
            if c.alive and c.pos == s.avatar:
                c.alive = False
                reward += REWARD_GOLD if c.kind == "gold" else REWARD_TRAP

        if not here:
            return reward

        if s.stage == "s1":
            target = "goal" if had_message else "message"
            win = all(e.role == target for e in here)
            reward += REWARD_WIN if win else REWARD_LOSE
            s.done, s.outcome = True, "win" if win else "lose"
            return reward

        roles = {e.role for e in here}
        if "message" in roles and not had_message:
            reward += REWARD_MESSAGE
            s.has_message = True
            for e in here:
                if e.role == "message":
                    e.alive = False
        if "enemy" in roles:
            reward += REWARD_LOSE
            s.done, s.outcome = True, "lose"
        elif "goal" in roles:
            if had_message:
                reward += REWARD_WIN
                s.done, s.outcome = True, "win"
            else:
                reward += REWARD_LOSE
                s.done, s.outcome = True, "lose"
        return reward


def make_env(game: GameSpec, movements, stage: str, seed,
             options: EnvOptions | None = None) -> tuple[Env, Observation]:
    env = Env(game, movements, stage, seed, options)
    return env, env.reset()


# -- trace export -----------------------------------------------------------


def observation_payload(obs: Observation) -> dict:
    return {
        "cells": [[r, c, sym] for sym, r, c in obs.entities],
        "avatar": {"symbol": obs.avatar[0], "row": obs.avatar[1], "col": obs.avatar[2]},
    }


def trace_episode(env: Env, actions, manual_tokens=None, game_id=None, seed=None):
    """Replay ``actions`` from reset; yields JSON-ready dicts, header first."""
    obs = env.reset()
    yield {
        "type": "header", "game_id": game_id, "seed": seed, "stage": env.stage,
        "movements": list(env.movements), "manual": manual_tokens,
        "observation": observation_payload(obs),
    }
    for a in actions:
        res = env.step(a)
        yield {
            "type": "step", "action": a if isinstance(a, str) else ACTIONS[a],
            "reward": res.reward, "done": res.done, "outcome": res.outcome,
            "observation": observation_payload(res.observation),
        }
        if res.done:
            break
