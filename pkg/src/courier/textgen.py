"""Per-episode text manuals from the shipped template bank.

Every description fills one template with an entity synonym, a role word, an
adjective, and (usually) a movement phrase. Rendering works at token level so
generation is cheap and byte-stable given the same choices; the hidden truth
triple rides along for oracles and scoring but is never shown to agents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .encoding import tokenize
from .worldgen import MOVEMENTS, ROLES, GameSpec, entity_name

UNKNOWN_TYPE_PROBABILITY = 0.15
NEGATION_PROBABILITY = 0.25

_SLOTS = ("{entity}", "{movement}", "{adjective}", "{role}")


@dataclass(frozen=True)
class Provenance:
    template_id: int
    entity_syn: int
    role_word: int
    adjective: int
    movement_phrase: int | None  # None -> unknown-type description
    stated_role: str
    synonym_set: str = "train"


@dataclass(frozen=True)
class Description:
    tokens: tuple[str, ...]
    truth_entity: int
    truth_role: str
    truth_movement: str | None  # None when the text omits movement info
    negated: bool
    provenance: Provenance

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Manual:
    descriptions: list[Description]
    game_entities: tuple[int, ...]
    perturbation: str = "none"

    def truth_map(self) -> dict[int, int]:
        """description index -> entity id (the hidden correspondence)."""
        return {i: d.truth_entity for i, d in enumerate(self.descriptions)}

    def token_count(self) -> int:
        return sum(len(d.tokens) for d in self.descriptions)


@dataclass
class ManualOptions:
    negation: bool = False
    synonym_set: str = "train"
    typo_rate: float = 0.0
    unknown_type_probability: float = UNKNOWN_TYPE_PROBABILITY


class BankError(ValueError):
    pass


class TemplateBank:
    """Loaded template bank; immutable after construction."""

    def __init__(self, data: dict):
        self.templates = data["templates"]
        self.by_split: dict[str, list[dict]] = {}
        for t in self.templates:
            self.by_split.setdefault(t["split"], []).append(t)
            t["_tokens"] = tuple(self._pattern_tokens(t["pattern"]))
            t["_tokens_negated"] = tuple(self._pattern_tokens(t["pattern_negated"]))
        self.entity_synonyms = {
            name: {k: [tuple(tokenize(s)) for s in v] for k, v in d.items()}
            for name, d in data["entities"].items()
        }
        self.role_words = {r: [tuple(tokenize(w)) for w in d["words"]]
                           for r, d in data["roles"].items()}
        self.role_adjectives = {r: [tuple(tokenize(w)) for w in d["adjectives"]]
                                for r, d in data["roles"].items()}
        self.movement_phrases = {m: [tuple(tokenize(p)) for p in d]
                                 for m, d in data["movements"].items()}
        self.validate()

    @staticmethod
    def _pattern_tokens(pattern: str):
        for piece in pattern.split():
            if piece in _SLOTS:
                yield piece
            else:
                yield from tokenize(piece)

    @classmethod
    def load(cls, path=None) -> "TemplateBank":
        if path is None:
            text = resources.files("courier").joinpath("data/template_bank.json").read_text()
        else:
            with open(path) as f:
                text = f.read()
        return cls(json.loads(text))

    def validate(self) -> None:
        if len(self.templates) < 82:
            raise BankError(f"bank has {len(self.templates)} templates; need >= 82")
        patterns_by_split = {s: {t["pattern"] for t in ts} for s, ts in self.by_split.items()}
        for a in patterns_by_split:
            for b in patterns_by_split:
                if a < b and patterns_by_split[a] & patterns_by_split[b]:
                    raise BankError(f"template subsets {a}/{b} share surface patterns")
        for t in self.templates:
            for pat_key in ("pattern", "pattern_negated"):
                missing = [s for s in _SLOTS if s not in t[pat_key]]
                if missing:
                    raise BankError(f"template {t['id']} lacks slots {missing}")
        train_tokens, held_tokens = set(), set()
        for name, sets in self.entity_synonyms.items():
            if len(sets["train"]) < 3 or len(sets["heldout"]) < 1:
                raise BankError(f"entity {name} needs >=3 train and >=1 heldout synonyms")
            for syn in sets["train"]:
                train_tokens.update(syn)
            for syn in sets["heldout"]:
                held_tokens.update(syn)
        if train_tokens & held_tokens:
            raise BankError(f"held-out synonyms overlap training: {train_tokens & held_tokens}")
        other = set()
        for t in self.templates:
            other.update(tok for tok in t["_tokens"] if tok not in _SLOTS)
            other.update(tok for tok in t["_tokens_negated"] if tok not in _SLOTS)
        for words in list(self.role_words.values()) + list(self.role_adjectives.values()):
            for w in words:
                other.update(w)
        for phrases in self.movement_phrases.values():
            for p in phrases:
                other.update(p)
        clash = (train_tokens | held_tokens) & other
        if clash:
            raise BankError(f"entity-name tokens collide with other bank tokens: {clash}")
        for r in ROLES:
            if len(self.role_words[r]) != 3 or len(self.role_adjectives[r]) != 3:
                raise BankError(f"role {r} needs exactly 3 words and 3 adjectives")

    def vocabulary(self) -> set[str]:
        vocab = set()
        for t in self.templates:
            vocab.update(tok for tok in t["_tokens"] if tok not in _SLOTS)
            vocab.update(tok for tok in t["_tokens_negated"] if tok not in _SLOTS)
        for sets in self.entity_synonyms.values():
            for syns in sets.values():
                for s in syns:
                    vocab.update(s)
        for words in list(self.role_words.values()) + list(self.role_adjectives.values()):
            for w in words:
                vocab.update(w)
        for phrases in self.movement_phrases.values():
            for p in phrases:
                vocab.update(p)
        return vocab

    def training_entity_tokens(self) -> set[str]:
        return {tok for sets in self.entity_synonyms.values()
                for syn in sets["train"] for tok in syn}

    # -- rendering ---------------------------------------------------------

    def render(self, entity_id: int, prov: Provenance, negated: bool) -> tuple[str, ...]:
        t = self.templates[prov.template_id]
        name = entity_name(entity_id)
        fill = {
            "{entity}": self.entity_synonyms[name][prov.synonym_set][prov.entity_syn],
            "{adjective}": self.role_adjectives[prov.stated_role][prov.adjective],
            "{role}": self.role_words[prov.stated_role][prov.role_word],
        }
        if prov.movement_phrase is None:
            fill["{movement}"] = ()
        else:
            movement, idx = prov.movement_phrase
            fill["{movement}"] = self.movement_phrases[movement][idx]
        out: list[str] = []
        for tok in t["_tokens_negated"] if negated else t["_tokens"]:
            if tok in fill:
                out.extend(fill[tok])
            else:
                out.append(tok)
        return tuple(out)


def generate_description(bank: TemplateBank, entity_id: int, role: str, movement: str,
                         split: str, rng: np.random.Generator,
                         options: ManualOptions | None = None) -> Description:
    """One lowercase description of ``entity_id`` playing ``role``.

    The movement clause is dropped with the unknown-type probability, in which
    case the truth records no movement either.
    """
    options = options or ManualOptions()
    templates = bank.by_split.get(split)
    if not templates:
        raise BankError(f"no templates available for split {split!r}")
    t = templates[rng.integers(len(templates))]
    show_movement = rng.random() >= options.unknown_type_probability
    name = entity_name(entity_id)
    prov = Provenance(
        template_id=t["id"],
        entity_syn=int(rng.integers(len(bank.entity_synonyms[name][options.synonym_set]))),
        role_word=int(rng.integers(3)),
        adjective=int(rng.integers(3)),
        movement_phrase=(movement, int(rng.integers(len(bank.movement_phrases[movement]))))
        if show_movement else None,
        stated_role=role,
        synonym_set=options.synonym_set,
    )
    tokens = bank.render(entity_id, prov, negated=False)
    if options.typo_rate > 0.0:
        tokens = corrupt_tokens(tokens, options.typo_rate, rng)
    return Description(tokens=tokens, truth_entity=entity_id, truth_role=role,
                       truth_movement=movement if show_movement else None,
                       negated=False, provenance=prov)


def assemble_manual(bank: TemplateBank, game: GameSpec, movements: tuple[str, str, str],
                    split: str, rng: np.random.Generator,
                    options: ManualOptions | None = None) -> Manual:
    """Three descriptions matching the game's assignment, in shuffled order."""
    options = options or ManualOptions()
    descs = [generate_description(bank, e, role, mv, split, rng, options)
             for role, e, mv in zip(ROLES, game.entities, movements)]
    order = rng.permutation(3)
    descs = [descs[i] for i in order]
    if options.negation and rng.random() < NEGATION_PROBABILITY:
        i = int(rng.integers(len(descs)))
        descs[i] = negate(bank, descs[i], rng)
    return Manual(descriptions=descs, game_entities=game.entities)


def negate(bank: TemplateBank, d: Description, rng: np.random.Generator) -> Description:
    """Flip the copula and state a role other than the truth; truth unchanged."""
    if d.negated:
        raise ValueError("description is already negated")
    others = [r for r in ROLES if r != d.truth_role]
    stated = others[rng.integers(2)]
    prov = replace(d.provenance, stated_role=stated,
                   role_word=int(rng.integers(3)), adjective=int(rng.integers(3)))
    tokens = bank.render(d.truth_entity, prov, negated=True)
    return replace(d, tokens=tokens, negated=True, provenance=prov)


def perturb(bank: TemplateBank, m: Manual, mode: str, rng: np.random.Generator,
            split: str = "test") -> Manual:
    """Robustness-suite manual edits: append / delete / synonym."""
    if m.perturbation != "none":
        raise ValueError(f"manual already perturbed ({m.perturbation})")
    if mode == "append":
        absent = [e for e in range(1, 13) if e not in m.game_entities]
        extra_entity = absent[rng.integers(len(absent))]
        role = ROLES[rng.integers(3)]
        movement = MOVEMENTS[rng.integers(3)]
        extra = generate_description(bank, extra_entity, role, movement, split, rng)
        descs = list(m.descriptions)
        descs.insert(int(rng.integers(len(descs) + 1)), extra)
        return Manual(descs, m.game_entities, perturbation="append")
    if mode == "delete":
        descs = list(m.descriptions)
        del descs[rng.integers(len(descs))]
        return Manual(descs, m.game_entities, perturbation="delete")
    if mode == "synonym":
        opts = ManualOptions(synonym_set="heldout", unknown_type_probability=0.0)
        descs = []
        for d in m.descriptions:
            nd = generate_description(
                bank, d.truth_entity, d.truth_role,
                d.truth_movement or MOVEMENTS[rng.integers(3)], split, rng, opts)
            if d.truth_movement is None:
                prov = replace(nd.provenance, movement_phrase=None)
                nd = Description(bank.render(d.truth_entity, prov, negated=False),
                                 nd.truth_entity, nd.truth_role, None, False, prov)
            descs.append(nd)
        return Manual(descs, m.game_entities, perturbation="synonym")
    raise ValueError(f"unknown perturbation mode {mode!r}")


_TYPO_KINDS = 3


def corrupt_tokens(tokens: tuple[str, ...], rate: float,
                   rng: np.random.Generator) -> tuple[str, ...]:
    """Optional character-level noise: drop, swap, or double one character."""
    out = []
    for tok in tokens:
        if len(tok) >= 3 and tok.isalpha() and rng.random() < rate:
            i = int(rng.integers(len(tok) - 1))
            kind = rng.integers(_TYPO_KINDS)
            if kind == 0:
                tok = tok[:i] + tok[i + 1:]
            elif kind == 1:
                tok = tok[:i] + tok[i + 1] + tok[i] + tok[i + 2:]
            else:
                tok = tok[:i] + tok[i] + tok[i:]
        out.append(tok)
    return tuple(out)
