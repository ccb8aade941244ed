import numpy as np
import pytest

from courier import textgen as tg
from courier import worldgen as wg
from courier.encoding import tokenize


@pytest.fixture(scope="module")
def bank():
    return tg.TemplateBank.load()


@pytest.fixture(scope="module")
def split():
    return wg.build_split(seed=0)


def any_game(split, combo="MC"):
    return next(g for g in split.split_games("train") if g.combo_class == combo)


class TestBank:
    def test_size_and_disjoint_splits(self, bank):
        assert len(bank.templates) >= 82
        pat = {s: {t["pattern"] for t in ts} for s, ts in bank.by_split.items()}
        assert not (pat["train"] & pat["val"])
        assert not (pat["train"] & pat["test"])
        assert not (pat["val"] & pat["test"])

    def test_27_surface_forms_per_template_entity_role(self, bank):
        # 3 entity synonyms x 3 role words x 3 adjectives, movement fixed
        rendered = set()
        for es in range(3):
            for rw in range(3):
                for aj in range(3):
                    prov = tg.Provenance(0, es, rw, aj, ("chasing", 0), "enemy")
                    rendered.add(bank.render(wg.ENTITY_IDS["mage"], prov, negated=False))
        assert len(rendered) == 27

    def test_vocabulary_closed_and_lowercase(self, bank):
        vocab = bank.vocabulary()
        assert vocab
        for tok in vocab:
            assert tok == tok.lower()

    def test_heldout_synonyms_disjoint_from_training(self, bank):
        train = bank.training_entity_tokens()
        held = {tok for sets in bank.entity_synonyms.values()
                for syn in sets["heldout"] for tok in syn}
        assert not (train & held)


class TestGenerate:
    def test_contains_expected_pieces(self, bank):
        rng = np.random.default_rng(0)
        d = tg.generate_description(
            bank, wg.ENTITY_IDS["airplane"], "enemy", "chasing", "train", rng,
            tg.ManualOptions(unknown_type_probability=0.0))
        toks = set(d.tokens)
        assert toks & {"airplane", "jet", "aircraft"}
        assert toks & {"enemy", "opponent", "adversary"}
        movement_tokens = {t for p in bank.movement_phrases["chasing"] for t in p}
        assert toks & movement_tokens
        assert all(t == t.lower() for t in d.tokens)

    def test_unknown_type_fraction(self, bank):
        rng = np.random.default_rng(1)
        n = 10_000
        unknown = 0
        for _ in range(n):
            d = tg.generate_description(bank, 1, "goal", "fleeing", "train", rng)
            unknown += d.truth_movement is None
        assert abs(unknown / n - 0.15) <= 0.01

    def test_fixed_choices_render_byte_identical(self, bank):
        prov = tg.Provenance(3, 1, 2, 0, ("fleeing", 1), "message")
        a = bank.render(5, prov, negated=False)
        b = bank.render(5, prov, negated=False)
        assert a == b

    def test_tokens_round_trip_through_tokenizer(self, bank):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = tg.generate_description(bank, int(rng.integers(1, 13)), "enemy",
                                        "immovable", "train", rng)
            assert tuple(tokenize(d.text)) == d.tokens

    def test_unknown_split_raises(self, bank):
        with pytest.raises(tg.BankError):
            tg.generate_description(bank, 1, "enemy", "chasing", "nope",
                                    np.random.default_rng(0))


class TestManual:
    def test_three_descriptions_one_per_role(self, bank, split):
        rng = np.random.default_rng(0)
        game = any_game(split)
        m = tg.assemble_manual(bank, game, ("chasing", "fleeing", "immovable"),
                               "train", rng)
        assert len(m.descriptions) == 3
        assert sorted(d.truth_role for d in m.descriptions) == sorted(wg.ROLES)
        # bijection between descriptions and the game's entities
        assert sorted(m.truth_map().values()) == sorted(game.entities)

    def test_negation_fraction(self, bank, split):
        rng = np.random.default_rng(3)
        game = any_game(split)
        opts = tg.ManualOptions(negation=True)
        n = 10_000
        negated = 0
        for _ in range(n):
            m = tg.assemble_manual(bank, game, ("chasing", "fleeing", "immovable"),
                                   "train", rng, opts)
            k = sum(d.negated for d in m.descriptions)
            assert k <= 1
            negated += k
        assert abs(negated / n - 0.25) <= 0.01

    def test_token_count_near_thirty(self, bank, split):
        rng = np.random.default_rng(4)
        game = any_game(split)
        counts = []
        for _ in range(2000):
            m = tg.assemble_manual(bank, game, ("chasing", "fleeing", "immovable"),
                                   "train", rng)
            counts.append(m.token_count())
        avg = float(np.mean(counts))
        assert 20.0 <= avg <= 40.0


class TestNegate:
    def test_paper_style_flip(self, bank):
        rng = np.random.default_rng(0)
        d = tg.generate_description(bank, wg.ENTITY_IDS["mage"], "enemy", "chasing",
                                    "train", rng)
        nd = tg.negate(bank, d, rng)
        assert nd.negated and not d.negated
        assert nd.truth_role == "enemy"
        assert "not" in nd.tokens
        stated_words = {t for r in wg.ROLES if r != "enemy"
                        for w in bank.role_words[r] for t in w}
        assert set(nd.tokens) & stated_words

    def test_negating_twice_raises(self, bank):
        rng = np.random.default_rng(0)
        d = tg.generate_description(bank, 3, "goal", "fleeing", "train", rng)
        nd = tg.negate(bank, d, rng)
        with pytest.raises(ValueError):
            tg.negate(bank, nd, rng)

    def test_stated_role_never_matches_truth(self, bank):
        rng = np.random.default_rng(5)
        true_words = {t for w in bank.role_words["message"] for t in w}
        for _ in range(10_000):
            d = tg.generate_description(bank, 7, "message", "immovable", "train", rng)
            nd = tg.negate(bank, d, rng)
            assert nd.provenance.stated_role != "message"
            assert not (set(nd.tokens) & true_words)


class TestPerturb:
    @pytest.fixture()
    def manual(self, bank, split):
        rng = np.random.default_rng(6)
        game = any_game(split)
        return game, tg.assemble_manual(bank, game, ("chasing", "fleeing", "immovable"),
                                        "train", rng)

    def test_append(self, bank, manual):
        game, m = manual
        rng = np.random.default_rng(0)
        p = tg.perturb(bank, m, "append", rng)
        assert len(p.descriptions) == 4
        extra = [d for d in p.descriptions if d.truth_entity not in game.entities]
        assert len(extra) == 1

    def test_delete(self, bank, manual):
        _, m = manual
        p = tg.perturb(bank, m, "delete", np.random.default_rng(0))
        assert len(p.descriptions) == 2

    def test_synonym_zero_overlap_with_training_names(self, bank, manual):
        _, m = manual
        p = tg.perturb(bank, m, "synonym", np.random.default_rng(0))
        train_names = bank.training_entity_tokens()
        for d in p.descriptions:
            assert not (set(d.tokens) & train_names)
        # truths preserved
        assert [d.truth_entity for d in p.descriptions] == \
               [d.truth_entity for d in m.descriptions]

    def test_unknown_mode_raises(self, bank, manual):
        _, m = manual
        with pytest.raises(ValueError):
            tg.perturb(bank, m, "scramble", np.random.default_rng(0))

    def test_double_perturb_raises(self, bank, manual):
        _, m = manual
        p = tg.perturb(bank, m, "delete", np.random.default_rng(0))
        with pytest.raises(ValueError):
            tg.perturb(bank, p, "append", np.random.default_rng(0))


def test_typo_pass_respects_rate(bank):
    rng = np.random.default_rng(0)
    tokens = ("the", "airplane", "is", "chasing", "you") * 200
    noisy = tg.corrupt_tokens(tokens, 0.5, rng)
    assert len(noisy) == len(tokens)
    changed = sum(a != b for a, b in zip(tokens, noisy))
    assert changed > 0
    untouched = tg.corrupt_tokens(tokens, 0.0, rng)
    assert untouched == tokens
