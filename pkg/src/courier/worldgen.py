"""Game catalog: entities, roles, movements, combination classes, splits.

A *game* assigns three distinct entities to the enemy/message/goal roles; a
*variant* additionally assigns each a movement type. Games whose entities all
come from one themed group are playable; the two small groups always co-occur
as fixed triples (single-combination games), the large group mixes freely
(multi-combination games).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

# Observation symbol codes. 0 is the empty cell; 1..12 are the non-avatar
# entities; 13/14 are the avatar without/with the message in hand.
EMPTY = 0
ENTITY_NAMES = (
    "bird", "dog", "fish", "scientist", "queen", "thief",
    "airplane", "robot", "ship", "mage", "sword", "orb",
)
ENTITY_IDS = {name: i + 1 for i, name in enumerate(ENTITY_NAMES)}
AVATAR_PLAIN = 13
AVATAR_WITH_MESSAGE = 14
# Reserved codes outside the core alphabet: inert bystander entities and the
# two bonus collectibles used by the transfer games.
NEUTRAL_IDS = (15, 16, 17, 18, 19)
TRAP_ID = 20
GOLD_ID = 21
N_SYMBOLS = 22

ROLES = ("enemy", "message", "goal")
MOVEMENTS = ("chasing", "fleeing", "immovable")

SUB_WORLDS = {
    "nature": ("bird", "dog", "fish"),
    "human": ("scientist", "queen", "thief", "airplane", "robot", "ship"),
    "fantasy": ("mage", "sword", "orb"),
}
_SUB_WORLD_OF = {ENTITY_IDS[n]: sw for sw, names in SUB_WORLDS.items() for n in names}


def sub_world_of(entity_id: int) -> str:
    return _SUB_WORLD_OF[entity_id]


def entity_name(entity_id: int) -> str:
    if 1 <= entity_id <= 12:
        return ENTITY_NAMES[entity_id - 1]
    if entity_id in NEUTRAL_IDS:
        return f"neutral_{entity_id - NEUTRAL_IDS[0]}"
    return {EMPTY: "empty", AVATAR_PLAIN: "avatar", AVATAR_WITH_MESSAGE: "avatar+message",
            TRAP_ID: "trap", GOLD_ID: "gold"}[entity_id]


@dataclass(frozen=True)
class GameSpec:
    """One entity-role assignment. ``entities`` is ordered (enemy, message, goal)."""

    game_id: int
    entities: tuple[int, int, int]
    combo_class: str | None  # "MC", "SC", or None when cross-group (excluded)
    split: str | None = None  # "train" / "val" / "test" / None

    @property
    def excluded(self) -> bool:
        return self.combo_class is None

    def role_of(self, entity_id: int) -> str:
        return ROLES[self.entities.index(entity_id)]

    def entity_for(self, role: str) -> int:
        return self.entities[ROLES.index(role)]


def _combo_class(entities: tuple[int, int, int]) -> str | None:
    worlds = {sub_world_of(e) for e in entities}
    if len(worlds) != 1:
        return None
    return "MC" if worlds == {"human"} else "SC"


@dataclass
class Catalog:
    """All 1320 ordered entity triples, id-ordered; split labels optional.

    Movement variants are not enumerated as rows: each game has the 3! = 6
    assignments of (chasing, fleeing, immovable) to its entities.
    """

    games: list[GameSpec] = field(default_factory=list)
    seed: int | None = None

    VARIANTS_PER_GAME = 6

    @property
    def n_variants(self) -> int:
        return len(self.games) * self.VARIANTS_PER_GAME

    def restricted(self) -> list[GameSpec]:
        return [g for g in self.games if not g.excluded]

    def split_games(self, split: str) -> list[GameSpec]:
        return [g for g in self.games if g.split == split]

    def by_id(self, game_id: int) -> GameSpec:
        g = self.games[game_id]
        assert g.game_id == game_id
        return g

    def counts(self) -> dict:
        return {
            "base_games": len(self.games),
            "variants": self.n_variants,
            "restricted": len(self.restricted()),
            "train": len(self.split_games("train")),
            "val": len(self.split_games("val")),
            "test": len(self.split_games("test")),
        }

    def to_json_lines(self):
        for g in self.games:
            yield json.dumps({
                "game_id": g.game_id,
                "entities": {r: entity_name(e) for r, e in zip(ROLES, g.entities)},
                "roles": {entity_name(e): r for r, e in zip(ROLES, g.entities)},
                "movements": list(MOVEMENTS),
                "combo_class": g.combo_class,
                "split": g.split,
            }, sort_keys=True)


def enumerate_catalog() -> Catalog:
    """All ordered triples of distinct entities, lexicographic by entity ids.

    Cross-group triples carry ``combo_class=None`` and are excluded from
    splits and sampling.
    """
    games = []
    for i, ents in enumerate(itertools.permutations(range(1, 13), 3)):
        games.append(GameSpec(game_id=i, entities=ents, combo_class=_combo_class(ents)))
    cat = Catalog(games=games)
    assert len(games) == 1320
    return cat


class SplitError(RuntimeError):
    pass


def _withheld_assignment(rng: np.random.Generator) -> dict[int, str]:
    """Pick the role each entity never plays during training.

    The large group gets a balanced assignment (two entities per withheld
    role); each fixed triple withholds each role exactly once. Those shapes
    are what make the eligible-game counts come out to 40 + 2 + 2.
    """
    withheld: dict[int, str] = {}
    human = [ENTITY_IDS[n] for n in SUB_WORLDS["human"]]
    order = list(human)
    rng.shuffle(order)
    for i, e in enumerate(order):
        withheld[e] = ROLES[i % 3]
    for sw in ("nature", "fantasy"):
        trio = [ENTITY_IDS[n] for n in SUB_WORLDS[sw]]
        roles = list(ROLES)
        rng.shuffle(roles)
        for e, r in zip(trio, roles):
            withheld[e] = r
    return withheld


def _eligible(game: GameSpec, withheld: dict[int, str]) -> bool:
    return all(withheld[e] != r for e, r in zip(game.entities, ROLES))


def build_split(seed: int) -> Catalog:
    """Label the restricted catalog with train/val/test memberships.

    Train games are exactly those where every entity plays one of its two
    training roles; evaluation games exercise at least one withheld pairing.
    Randomized choice of withheld roles, then a greedy val/test partition
    that keeps both evaluation splits covering every withheld pairing; falls
    back to exhaustive search over partitions if the greedy pass cannot
    (which does not happen for any seed tried, but the contract wants it).
    """
    cat = enumerate_catalog()
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, seed]))

    withheld = None
    train_ids: set[int] = set()
    for _ in range(64):
        cand = _withheld_assignment(rng)
        ids = {g.game_id for g in cat.games if not g.excluded and _eligible(g, cand)}
        mc = sum(1 for i in ids if cat.games[i].combo_class == "MC")
        sc = len(ids) - mc
        if mc == 40 and sc == 4:
            withheld, train_ids = cand, ids
            break
    if withheld is None:
        raise SplitError(f"no balanced withheld-role assignment found for seed {seed}")

    # Check the two-of-three property explicitly: every entity must exercise
    # both its allowed roles somewhere in train.
    for e in range(1, 13):
        roles_seen = {r for i in train_ids
                      for r, ent in zip(ROLES, cat.games[i].entities) if ent == e}
        if len(roles_seen) != 2:
            raise SplitError(f"entity {entity_name(e)} plays {len(roles_seen)} roles in train")

    held = [g for g in cat.games if not g.excluded and g.game_id not in train_ids]
    rng.shuffle(held)
    val_ids, test_ids = _partition_eval(held, withheld, rng)

    games = []
    for g in cat.games:
        split = None
        if g.game_id in train_ids:
            split = "train"
        elif g.game_id in val_ids:
            split = "val"
        elif g.game_id in test_ids:
            split = "test"
        games.append(GameSpec(g.game_id, g.entities, g.combo_class, split))
    out = Catalog(games=games, seed=seed)
    counts = out.counts()
    if (counts["train"], counts["val"], counts["test"]) != (44, 32, 32):
        raise SplitError(f"split counts off: {counts}")
    return out


def _partition_eval(held: list[GameSpec], withheld: dict[int, str],
                    rng: np.random.Generator) -> tuple[set[int], set[int]]:
    """Choose 32 val + 32 test from the 88 held-out games (24 stay unused).

    Both splits keep their 4 single-combination games and cover every
    withheld (entity, role) pairing at least once.
    """
    sc = [g for g in held if g.combo_class == "SC"]
    mc = [g for g in held if g.combo_class == "MC"]
    assert len(sc) == 8

    def covers(games: list[GameSpec]) -> bool:
        pairs = {(e, r) for g in games for e, r in zip(g.entities, ROLES)
                 if withheld[e] == r}
        return all((e, withheld[e]) in pairs for e in withheld)

    for _ in range(256):
        rng.shuffle(sc)
        rng.shuffle(mc)
        val = sc[:4] + mc[:28]
        test = sc[4:] + mc[28:56]
        if covers(val) and covers(test):
            return {g.game_id for g in val}, {g.game_id for g in test}

    # Exhaustive fallback: swap MC games between the pools until both cover.
    for val_mc in itertools.combinations(mc, 28):
        rest = [g for g in mc if g not in val_mc]
        for test_mc in itertools.combinations(rest, 28):
            val = sc[:4] + list(val_mc)
            test = sc[4:] + list(test_mc)
            if covers(val) and covers(test):
                return {g.game_id for g in val}, {g.game_id for g in test}
    raise SplitError("no val/test partition covers all withheld pairings")


SC_TRAIN_PROBABILITY = 0.25


def sample_training_game(catalog: Catalog, rng: np.random.Generator,
                         stage: str) -> tuple[GameSpec, tuple[str, str, str]]:
    """Draw a train-split game (single-combination with probability 0.25)
    plus a movement assignment: all-immovable on stage one, a permutation of
    the three movement types on stage two."""
    train = catalog.split_games("train")
    sc = [g for g in train if g.combo_class == "SC"]
    mc = [g for g in train if g.combo_class == "MC"]
    pool = sc if rng.random() < SC_TRAIN_PROBABILITY else mc
    game = pool[rng.integers(len(pool))]
    if stage == "s1":
        movements = ("immovable", "immovable", "immovable")
    elif stage == "s2":
        movements = tuple(rng.permutation(list(MOVEMENTS)))
    else:
        raise ValueError(f"unknown stage {stage!r}")
    return game, movements


def test_variant(game: GameSpec, mode: str,
                 rng: np.random.Generator) -> tuple[str, str, str]:
    """Movement assignment for evaluation games.

    ``dynamics`` mode doubles up on chasing entities (the third slot drawn
    uniformly from fleeing/immovable); ``se`` mirrors the training multiset.
    Refuses train-split games: those never see evaluation variants.
    """
    if game.split == "train":
        raise ValueError(f"game {game.game_id} is a train game; no test variant applies")
    if mode == "se":
        return tuple(rng.permutation(list(MOVEMENTS)))
    if mode == "dynamics":
        third = "fleeing" if rng.random() < 0.5 else "immovable"
        slots = ["chasing", "chasing", third]
        rng.shuffle(slots)
        return tuple(slots)
    raise ValueError(f"unknown test variant mode {mode!r}")
