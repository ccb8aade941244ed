import numpy as np
import pytest

from courier import agents as ag
from courier import autodiff as ad
from courier import engine as eng
from courier import textgen as tg
from courier import worldgen as wg
from courier.encoding import TokenEmbeddingTable
from courier.gradcheck import check_scalar_fn_sampled

D = 16
D_TOK = 12


@pytest.fixture(scope="module")
def bank():
    return tg.TemplateBank.load()


@pytest.fixture(scope="module")
def split():
    return wg.build_split(seed=0)


@pytest.fixture(scope="module")
def table():
    return TokenEmbeddingTable(dim=D_TOK)


def make_input(split, bank, table, seed=0, variant="emma", stage="s2"):
    rng = np.random.default_rng(seed)
    game, movements = wg.sample_training_game(split, rng, stage)
    manual = tg.assemble_manual(bank, game, movements, "train", rng)
    env = eng.Env(game, movements, stage, seed)
    obs = env.reset()
    mats = [table.embed(list(d.tokens)).astype(ad.default_dtype())
            for d in manual.descriptions]
    inp = ag.AgentInput(frames=[obs] * 3, manual=mats, manual_key=seed)
    if variant == "gid":
        inp.ids = ag.game_ids(game)
    if variant == "omap":
        inp.truths = tuple(d.truth_entity for d in manual.descriptions)
    if variant == "bam":
        inp.assignment = {i: e for i, e in
                          enumerate(d.truth_entity for d in manual.descriptions)}
    return inp, game, manual, env


class TestEncodeDescriptor:
    def test_single_token_softmax_collapses(self):
        params = ag.init_params("emma", D, D_TOK, seed=1)
        t = np.random.default_rng(0).standard_normal((1, D_TOK)).astype(np.float32)
        k, v = ag.encode_descriptor(params, t)
        expect_k = t[0] @ params["key.w"].data + params["key.b"].data
        expect_v = t[0] @ params["val.w"].data + params["val.b"].data
        assert np.allclose(k, expect_k, atol=1e-5)
        assert np.allclose(v, expect_v, atol=1e-5)

    def test_zero_gate_vector_gives_uniform_weights(self):
        params = ag.init_params("emma", D, D_TOK, seed=1)
        params["key.u"].data[:] = 0.0
        toks = np.random.default_rng(1).standard_normal((5, D_TOK)).astype(np.float32)
        k, _ = ag.encode_descriptor(params, toks)
        expect = toks.mean(axis=0) @ params["key.w"].data + params["key.b"].data
        assert np.allclose(k, expect, atol=1e-5)

    def test_token_order_invariance(self):
        for variant in ("emma", "emma-sigma"):
            params = ag.init_params(variant, D, D_TOK, seed=2)
            toks = np.random.default_rng(2).standard_normal((7, D_TOK)).astype(np.float64)
            with ad.using_dtype(np.float64):
                k1, v1 = ag.encode_descriptor(params, toks)
                k2, v2 = ag.encode_descriptor(params, toks[::-1].copy())
            assert np.allclose(k1, k2, atol=1e-9)
            assert np.allclose(v1, v2, atol=1e-9)

    def test_empty_descriptor_rejected(self):
        params = ag.init_params("emma", D, D_TOK, seed=1)
        with pytest.raises(ValueError):
            ag.encode_descriptor(params, np.zeros((0, D_TOK)))

    def test_sigma_weights_sum_to_one(self):
        params = ag.init_params("emma-sigma", D, D_TOK, seed=3)
        toks = np.random.default_rng(3).standard_normal((4, D_TOK)).astype(np.float32)
        enc = ag.encode_manuals(params, [(0, [toks])], need_keys=True)
        # reconstruct the gate weights: sigmoid scores normalized
        s = 1.0 / (1.0 + np.exp(-(toks @ params["key.u"].data)))
        w = s / s.sum()
        expect = (w @ toks) @ params["key.w"].data + params["key.b"].data
        assert np.allclose(enc.keys.data[0, 0], expect, atol=1e-5)


class TestEntityRepresentation:
    def test_single_description_passthrough(self):
        params = ag.init_params("emma", D, D_TOK)
        rng = np.random.default_rng(0)
        q = ad.Tensor(rng.standard_normal(D))
        k = ad.Tensor(rng.standard_normal((1, D)))
        v = ad.Tensor(rng.standard_normal((1, D)))
        x, gamma = ag.entity_representation(params, q, k, v)
        assert np.allclose(gamma.data, [1.0])
        assert np.allclose(x.data, v.data[0])

    def test_equal_scores_average(self):
        params = ag.init_params("emma", D, D_TOK)
        rng = np.random.default_rng(1)
        q = ad.Tensor(np.zeros(D))
        k = ad.Tensor(rng.standard_normal((3, D)))
        v = ad.Tensor(rng.standard_normal((3, D)))
        x, gamma = ag.entity_representation(params, q, k, v)
        assert np.allclose(gamma.data, 1 / 3)
        assert np.allclose(x.data, v.data.mean(axis=0), atol=1e-6)

    def test_dominant_margin_saturates(self):
        params = ag.init_params("emma", D, D_TOK)
        rng = np.random.default_rng(2)
        q = np.zeros(D)
        q[0] = 1.0
        k = np.zeros((3, D))
        k[0, 0] = 25.0 * np.sqrt(D)  # margin > 20 sqrt(d) over the zero keys
        v = rng.standard_normal((3, D))
        x, gamma = ag.entity_representation(
            params, ad.Tensor(q), ad.Tensor(k), ad.Tensor(v))
        assert gamma.data[0] > 0.999
        assert np.abs(x.data - v[0]).max() < 1e-3


class TestForwards:
    @pytest.mark.parametrize("variant", ag.VARIANTS)
    def test_distribution_and_value(self, split, bank, table, variant):
        params = ag.init_params(variant, D, D_TOK, seed=4)
        inputs = [make_input(split, bank, table, seed=s, variant=variant)[0]
                  for s in range(3)]
        out = ag.forward(params, inputs)
        assert out.probs.shape == (3, 5)
        assert np.allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(np.isfinite(out.value.data))
        assert np.all(np.isfinite(out.logits.data))

    @pytest.mark.parametrize("variant", ag.VARIANTS)
    def test_forward_pure(self, split, bank, table, variant):
        params = ag.init_params(variant, D, D_TOK, seed=5)
        inp, *_ = make_input(split, bank, table, seed=9, variant=variant)
        a = ag.forward(params, [inp]).logits.data
        b = ag.forward(params, [inp]).logits.data
        assert a.tobytes() == b.tobytes()

    def test_overlapping_entities_average(self, split, bank, table):
        params = ag.init_params("emma", D, D_TOK, seed=6)
        inp, game, manual, env = make_input(split, bank, table, seed=1)
        obs = inp.frames[0]
        # force two entities onto one cell in every frame
        syms = [e[0] for e in obs.entities]
        merged = eng.Observation(
            entities=tuple(sorted([(syms[0], 2, 2), (syms[1], 2, 2),
                                   (obs.entities[2][0], 8, 8)])),
            avatar=obs.avatar)
        split_obs = eng.Observation(
            entities=tuple(sorted([(syms[0], 2, 2), (syms[1], 8, 8),
                                   (obs.entities[2][0], 8, 8)])),
            avatar=obs.avatar)

        enc = ag.encode_manuals(params, [(inp.key(), inp.manual)], need_keys=True)
        pairs, x = ag._attention_entity_rows(
            params, [ag.AgentInput(frames=[merged] * 3, manual=inp.manual,
                                   manual_key=inp.key())], enc)
        grid = ag._paint([ag.AgentInput(frames=[merged] * 3, manual=inp.manual,
                                        manual_key=inp.key())],
                         ad.concat([x, params["avatar.emb"]], axis=0),
                         lambda i, f, s: len(pairs) if s == wg.AVATAR_PLAIN
                         else (len(pairs) + 1 if s == wg.AVATAR_WITH_MESSAGE
                               else pairs[(i.key(), s)]),
                         params.d)
        cell = grid.data[0, 2, 2, :params.d]
        xa = x.data[pairs[(inp.key(), syms[0])]]
        xb = x.data[pairs[(inp.key(), syms[1])]]
        assert np.allclose(cell, (xa + xb) / 2.0, atol=1e-6)

    def test_mean_bos_invariant_to_manual_order(self, split, bank, table):
        params = ag.init_params("mean-bos", D, D_TOK, seed=7)
        inp, *_ = make_input(split, bank, table, seed=3, variant="mean-bos")
        a = ag.forward(params, [inp]).logits.data
        flipped = ag.AgentInput(frames=inp.frames, manual=inp.manual[::-1],
                                manual_key="flip")
        b = ag.forward(params, [flipped]).logits.data
        assert np.allclose(a, b, atol=1e-5)

    def test_mean_bos_single_description(self, split, bank, table):
        params = ag.init_params("mean-bos", D, D_TOK, seed=7)
        inp, *_ = make_input(split, bank, table, seed=3, variant="mean-bos")
        one = ag.AgentInput(frames=inp.frames, manual=inp.manual[:1], manual_key="one")
        enc = ag.encode_manuals(params, [("one", one.manual)], need_keys=False)
        # v-bar over a single description equals that description's value vector
        M, m_max = enc.mask.shape
        assert (M, m_max) == (1, 1)

    def test_front_layer_width_512(self):
        for variant in ("mean-bos", "gid"):
            params = ag.init_params(variant, D, D_TOK)
            assert params["front.w"].shape[1] == 512
        assert "front.w" not in ag.init_params("emma", D, D_TOK).tensors

    def test_gid_sensitive_to_ids(self, split, bank, table):
        params = ag.init_params("gid", D, D_TOK, seed=8)
        inp, game, *_ = make_input(split, bank, table, seed=2, variant="gid")
        a = ag.forward(params, [inp]).logits.data
        other = ag.AgentInput(frames=inp.frames, manual=inp.manual,
                              manual_key="o", ids=tuple(i + 1 if i < 35 else 0
                                                        for i in inp.ids))
        b = ag.forward(params, [other]).logits.data
        assert np.abs(a - b).max() > 0.0

    def test_gid_out_of_range_id_raises(self, split, bank, table):
        params = ag.init_params("gid", D, D_TOK, seed=8)
        inp, *_ = make_input(split, bank, table, seed=2, variant="gid")
        bad = ag.AgentInput(frames=inp.frames, manual=inp.manual, ids=(0, 1, 99))
        with pytest.raises(IndexError):
            ag.forward(params, [bad])

    def test_gid_wrong_arity_raises(self, split, bank, table):
        params = ag.init_params("gid", D, D_TOK, seed=8)
        inp, *_ = make_input(split, bank, table, seed=2, variant="gid")
        bad = ag.AgentInput(frames=inp.frames, manual=inp.manual, ids=(0, 1))
        with pytest.raises(ValueError):
            ag.forward(params, [bad])

    def test_omap_unmapped_entity_gets_zero_vector(self, split, bank, table):
        params = ag.init_params("omap", D, D_TOK, seed=9)
        inp, game, manual, _ = make_input(split, bank, table, seed=4, variant="omap")
        short = ag.AgentInput(frames=inp.frames, manual=inp.manual[:2],
                              manual_key="del", truths=inp.truths[:2])
        enc = ag.encode_manuals(params, [("del", short.manual)], need_keys=False)
        pairs, x = ag._mapped_entity_rows(
            params, [short], enc, lambda i: {k: e for k, e in enumerate(i.truths)})
        dropped = [p for p in pairs if p[1] not in short.truths]
        for p in dropped:
            assert np.allclose(x.data[pairs[p]], 0.0)

    def test_omap_truth_length_mismatch_raises(self, split, bank, table):
        params = ag.init_params("omap", D, D_TOK, seed=9)
        inp, *_ = make_input(split, bank, table, seed=4, variant="omap")
        bad = ag.AgentInput(frames=inp.frames, manual=inp.manual,
                            truths=inp.truths[:2] if inp.truths else (1,))
        with pytest.raises(ValueError):
            ag.forward(params, [bad])

    def test_empty_manual_rejected(self, split, bank, table):
        params = ag.init_params("emma", D, D_TOK)
        inp, *_ = make_input(split, bank, table, seed=1)
        bad = ag.AgentInput(frames=inp.frames, manual=[])
        with pytest.raises(ValueError):
            ag.forward(params, [bad])


class TestGradientFlow:
    @pytest.mark.parametrize("variant", ag.VARIANTS)
    def test_every_parameter_reached(self, split, bank, table, variant):
        params = ag.init_params(variant, D, D_TOK, seed=10)
        inputs = []
        for s in range(4):
            inp, game, manual, env = make_input(split, bank, table, seed=s,
                                                variant=variant)
            # ensure a with-message avatar appears so both avatar rows train
            if s == 0:
                obs = inp.frames[0]
                inp.frames = [eng.Observation(obs.entities,
                                              (wg.AVATAR_WITH_MESSAGE, obs.avatar[1],
                                               obs.avatar[2]))] * 3
            inputs.append(inp)
        if variant == "bam":
            # leave one entity unassigned so the default embedding trains
            inputs[1] = ag.AgentInput(frames=inputs[1].frames, manual=inputs[1].manual,
                                      manual_key=inputs[1].manual_key,
                                      assignment=dict(list(inputs[1].assignment.items())[:2]))
        out = ag.forward(params, inputs)
        actions = np.zeros(len(inputs), dtype=np.int64)
        logp = ad.gather_rows(ad.log_softmax(out.logits, axis=1), actions)
        loss = ad.add(ad.mean(logp), ad.mean(ad.square(out.value)))
        ad.backward(loss, params=list(params.tensors.values()))
        for name, t in params.tensors.items():
            if variant == "gid" and name == "id.emb":
                # only the sampled ids receive gradient; check those rows
                rows = sorted({i for inp in inputs for i in inp.ids})
                assert np.abs(t.grad[rows]).max() > 0.0, name
            elif name in ("query.emb", "symbol.emb", "default.emb"):
                assert np.abs(t.grad).max() > 0.0, name
            else:
                assert np.abs(t.grad).max() > 0.0, name

    def test_full_forward_graph_matches_finite_differences(self, split, bank, table):
        with ad.using_dtype(np.float64):
            params = ag.init_params("emma", 6, 5, seed=11)
            inp, *_ = make_input(split, bank, table, seed=1)
            manual = [m[:, :5].astype(np.float64) for m in inp.manual]
            # jitter all weights (especially zero biases) so no activation
            # sits exactly on the leaky-relu kink, where central differences
            # straddle the nonsmooth point
            jit = np.random.default_rng(13)
            base = {k: v.data + jit.normal(0.0, 0.05, v.data.shape)
                    for k, v in params.tensors.items()}
            names = list(params.tensors)

            def build(ts):
                for name, t in zip(names, ts):
                    params.tensors[name] = t
                sample = ag.AgentInput(frames=inp.frames, manual=manual,
                                       manual_key="gc")
                out = ag.forward(params, [sample])
                pick = ad.Tensor(np.array([[0.3, -0.2, 0.5, 0.1, -0.7]]))
                return ad.add(ad.tsum(ad.mul(pick, ad.log_softmax(out.logits, axis=1))),
                              ad.mean(out.value))

            worst = check_scalar_fn_sampled(build, [base[n] for n in names],
                                            np.random.default_rng(0),
                                            entries_per_input=4, tol=1e-4)
            assert worst <= 1e-4


class TestBamCounts:
    def test_single_episode_counts(self):
        c = ag.BamCounts()
        c.update(["mage", "is", "the", "enemy"], (10, 11, 12))
        for e in (10, 11, 12):
            assert c.rows[c.vocab["mage"]][e] == 1
        assert c.rows[c.vocab["mage"]][1] == 0

    def test_token_counted_once_per_episode(self):
        c = ag.BamCounts()
        c.update(["the", "the", "mage"], (10,))
        assert c.rows[c.vocab["the"]][10] == 1

    def test_empty_manual_leaves_counts(self):
        c = ag.BamCounts()
        c.update(["a"], (1,))
        before = c.rows[c.vocab["a"]].copy()
        c.update([], (1, 2))
        assert np.array_equal(c.rows[c.vocab["a"]], before)

    def test_posterior_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        c = ag.BamCounts()
        vocab = [f"tok{i}" for i in range(30)]
        for _ in range(200):
            toks = list(rng.choice(vocab, size=8, replace=False))
            ents = tuple(rng.choice(np.arange(1, 13), size=3, replace=False))
            c.update(toks, ents)
        for e in range(1, 13):
            total = sum(c.token_given_entity(t, e) for t in vocab)
            assert abs(total - 1.0) <= 1e-9

    def test_uniform_counts_tie_break_by_entity_id(self):
        c = ag.BamCounts()
        out = c.assign([["alpha"], ["beta"]], candidates=(5, 3, 7))
        # identical posteriors: first description wins entity 3, second is
        # dropped by the collision rule
        assert out == {0: 3}

    def test_collision_keeps_higher_posterior(self):
        c = ag.BamCounts()
        for _ in range(50):
            c.update(["mage", "wizard"], (10,))
            c.update(["orb"], (12,))
        a = c.posterior(["mage", "wizard"], (10, 12))
        b = c.posterior(["mage"], (10, 12))
        assert a[0] > b[0]
        out = c.assign([["mage"], ["mage", "wizard"]], candidates=(10, 12))
        assert out[1] == 10 and 0 not in out

    def test_round_trip_arrays(self):
        c = ag.BamCounts()
        c.update(["x", "y"], (1, 2))
        toks, counts = c.save_arrays()
        c2 = ag.BamCounts.from_arrays(toks, counts, episodes=c.episodes)
        assert c2.vocab == c.vocab
        assert np.array_equal(np.stack(c2.rows), np.stack(c.rows))
        assert np.array_equal(c2.totals, c.totals)


class TestHeatmap:
    def test_rows_are_distributions(self, bank, table):
        params = ag.init_params("emma", D, D_TOK, seed=12)
        rng = np.random.default_rng(0)
        m = ag.attention_heatmap(params, bank, table, rng)
        assert m.shape == (12, 12)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-6)

    def test_csv_shape(self, bank, table):
        params = ag.init_params("emma", D, D_TOK, seed=12)
        rng = np.random.default_rng(0)
        csv = ag.heatmap_csv(ag.attention_heatmap(params, bank, table, rng))
        lines = csv.strip().split("\n")
        assert len(lines) == 13
        assert lines[0].startswith("entity,bird,")

    def test_rejects_non_query_variant(self, bank, table):
        params = ag.init_params("mean-bos", D, D_TOK)
        with pytest.raises(ValueError):
            ag.attention_heatmap(params, bank, table, np.random.default_rng(0))
