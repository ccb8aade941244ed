"""Builds the shipped description template bank.

Run from the repo root:  python3 tools/make_template_bank.py

Emits src/courier/data/template_bank.json. Patterns are grouped into
disjoint train/val/test subsets by verb skeleton so no surface form is
shared across splits.
"""

import json
import pathlib

# (positive verb phrase, negated verb phrase), per split
VERBS = {
    "train": [
        ("is", "is not"),
        ("is actually", "is actually not"),
        ("turns out to be", "turns out not to be"),
        ("happens to be", "does not happen to be"),
        ("is certainly", "is certainly not"),
        ("is known to be", "is known not to be"),
        ("serves as", "does not serve as"),
        ("acts as", "does not act as"),
    ],
    "val": [
        ("is definitely", "is definitely not"),
        ("proves to be", "proves not to be"),
    ],
    "test": [
        ("is surely", "is surely not"),
        ("is revealed to be", "is revealed not to be"),
    ],
}

# entity-first and role-first sentence orders
ORDERS = {
    "ER": "{e_det} {entity} {movement} {verb} {r_det} {adjective} {role} .",
    "RE": "{r_det} {adjective} {role} {verb} {e_det} {entity} {movement} .",
}

DETERMINERS = [("the", "the"), ("the", "a"), ("that", "the"), ("this", "a")]

ENTITY_SYNONYMS = {
    "bird": (["bird", "robin", "sparrow"], ["canary"]),
    "dog": (["dog", "hound", "puppy"], ["mutt"]),
    "fish": (["fish", "salmon", "trout"], ["minnow"]),
    "scientist": (["scientist", "researcher", "chemist"], ["physicist"]),
    "queen": (["queen", "monarch", "empress"], ["sovereign"]),
    "thief": (["thief", "burglar", "robber"], ["crook"]),
    "airplane": (["airplane", "jet", "aircraft"], ["airliner"]),
    "robot": (["robot", "android", "automaton"], ["droid"]),
    "ship": (["ship", "boat", "vessel"], ["freighter"]),
    "mage": (["mage", "wizard", "sorcerer"], ["warlock"]),
    "sword": (["sword", "blade", "saber"], ["cutlass"]),
    "orb": (["orb", "sphere", "globe"], ["bauble"]),
}

ROLES = {
    "enemy": {"words": ["enemy", "opponent", "adversary"],
              "adjectives": ["dangerous", "deadly", "lethal"]},
    "message": {"words": ["message", "memo", "report"],
                "adjectives": ["restricted", "classified", "secret"]},
    "goal": {"words": ["goal", "target", "aim"],
             "adjectives": ["crucial", "vital", "essential"]},
}

MOVEMENTS = {
    "chasing": ["that is chasing you", "coming in your direction",
                "that is approaching you", "closing in on you"],
    "fleeing": ["that is fleeing from you", "escaping from you",
                "that is running away", "retreating from you"],
    "immovable": ["that does not move", "that is standing still",
                  "remaining in place", "that stays put"],
}


def build():
    templates = []
    tid = 0
    for split, verbs in VERBS.items():
        for verb, verb_neg in verbs:
            for order, skeleton in ORDERS.items():
                for e_det, r_det in DETERMINERS:
                    base = skeleton.replace("{e_det}", e_det).replace("{r_det}", r_det)
                    templates.append({
                        "id": tid,
                        "split": split,
                        "pattern": base.replace("{verb}", verb),
                        "pattern_negated": base.replace("{verb}", verb_neg),
                        "order": order,
                    })
                    tid += 1
    return {
        "templates": templates,
        "entities": {name: {"train": syn, "heldout": held}
                     for name, (syn, held) in ENTITY_SYNONYMS.items()},
        "roles": ROLES,
        "movements": MOVEMENTS,
    }


if __name__ == "__main__":
    out = pathlib.Path(__file__).resolve().parent.parent / "src/courier/data/template_bank.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    bank = build()
    out.write_text(json.dumps(bank, indent=1))
    n = len(bank["templates"])
    by_split = {}
    for t in bank["templates"]:
        by_split[t["split"]] = by_split.get(t["split"], 0) + 1
    print(f"wrote {out} with {n} templates {by_split}")
