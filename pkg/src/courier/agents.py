"""Policy model family over the grid + manual data model.

All variants share one action trunk: paint a d-vector per occupied cell into
an h x w grid, stack the three most recent frames along channels, run a 2x2
convolution, then a three-layer feed-forward net into softmax action
probabilities and a scalar state-value estimate. They differ in where the
cell vectors come from:

  emma        attention over the manual, one query embedding per symbol
  emma-sigma  same, with normalized sigmoid token gates instead of softmax
  mean-bos    raw symbol embeddings; manual collapses to one mean value vector
  gid         raw symbol embeddings; game revealed by embedded integer ids
  bam         hard description-to-entity assignment from co-occurrence counts
  omap        ground-truth description-to-entity map (upper bound / oracle)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .engine import GRID_H, GRID_W, Observation
from .worldgen import (AVATAR_PLAIN, AVATAR_WITH_MESSAGE, N_SYMBOLS, ROLES,
                       entity_name)

VARIANTS = ("emma", "emma-sigma", "mean-bos", "gid", "bam", "omap")
FRAME_STACK = 3
N_ACTIONS = 5
FFN_WIDTH = 128
FRONT_WIDTH = 512  # extra first layer for the no-attention baselines
CONV_MAPS = 64
N_GAME_IDS = 36  # (entity, role) pairs: 12 entities x 3 roles


@dataclass
class AgentInput:
    """One policy evaluation: a 3-frame history plus conditioning inputs.

    ``manual`` holds per-description frozen token-embedding matrices.
    ``manual_key`` groups samples that share an episode so their text is
    encoded once per batch. ``truths`` gives each description's entity id
    (oracle variants); ``ids`` the embedded-id triple for the gid variant.
    """

    frames: list[Observation]
    manual: list[np.ndarray] | None = None
    manual_key: object = None
    truths: tuple[int, ...] | None = None
    ids: tuple[int, int, int] | None = None
    assignment: dict[int, int] | None = None  # description index -> entity id

    def key(self):
        return self.manual_key if self.manual_key is not None else id(self.manual)


@dataclass
class PolicyOutput:
    logits: ad.Tensor  # (B, 5)
    probs: ad.Tensor  # (B, 5)
    value: ad.Tensor  # (B,)


@dataclass
class ModelParams:
    variant: str
    d: int
    d_tok: int
    tensors: dict[str, ad.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def trainable(self) -> dict[str, ad.Tensor]:
        return self.tensors

    def checksum(self) -> bytes:
        import hashlib
        h = hashlib.sha256()
        for name in sorted(self.tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return h.digest()


def init_params(variant: str, d: int, d_tok: int, seed: int = 0) -> ModelParams:
    """Xavier-uniform weight matrices, zero biases, 1/sqrt(d) embeddings."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(np.random.SeedSequence([0x9A9A, seed]))
    p: dict[str, ad.Tensor] = {}

    def weight(name, shape):
        p[name] = ad.Tensor(ad.xavier_uniform(rng, shape), requires_grad=True)

    def bias(name, n):
        p[name] = ad.Tensor(np.zeros(n, dtype=ad.default_dtype()), requires_grad=True)

    def emb(name, shape):
        p[name] = ad.Tensor(ad.normal_embedding(rng, shape), requires_grad=True)

    text_path = variant in ("emma", "emma-sigma", "mean-bos", "bam", "omap")
    if text_path:
        if variant in ("emma", "emma-sigma"):
            weight("key.w", (d_tok, d))
            bias("key.b", d)
            emb("key.u", (d_tok,))
            emb("query.emb", (N_SYMBOLS, d))
        weight("val.w", (d_tok, d))
        bias("val.b", d)
        emb("val.u", (d_tok,))
    if variant in ("emma", "emma-sigma", "bam", "omap"):
        emb("avatar.emb", (2, d))  # row 0 plain, row 1 with message
    if variant == "bam":
        emb("default.emb", (N_SYMBOLS, d))
    if variant in ("mean-bos", "gid"):
        emb("symbol.emb", (N_SYMBOLS, d))
    if variant == "gid":
        emb("id.emb", (N_GAME_IDS, d))

    weight("conv.w", (2, 2, FRAME_STACK * d, CONV_MAPS))
    bias("conv.b", CONV_MAPS)
    flat = (GRID_H - 1) * (GRID_W - 1) * CONV_MAPS
    if variant in ("mean-bos", "gid"):
        extra = d if variant == "mean-bos" else 3 * d
        weight("front.w", (flat + extra, FRONT_WIDTH))
        bias("front.b", FRONT_WIDTH)
        first_in = FRONT_WIDTH
    else:
        first_in = flat
    weight("ffn.0.w", (first_in, FFN_WIDTH))
    bias("ffn.0.b", FFN_WIDTH)
    weight("ffn.1.w", (FFN_WIDTH, FFN_WIDTH))
    bias("ffn.1.b", FFN_WIDTH)
    weight("ffn.2.w", (FFN_WIDTH, FFN_WIDTH))
    bias("ffn.2.b", FFN_WIDTH)
    weight("policy.w", (FFN_WIDTH, N_ACTIONS))
    bias("policy.b", N_ACTIONS)
    weight("value.w", (FFN_WIDTH, 1))
    bias("value.b", 1)
    return ModelParams(variant=variant, d=d, d_tok=d_tok, tensors=p)


# ---------------------------------------------------------------------------
# description encoding


@dataclass
class EncodedManuals:
    """Batch-padded keys/values for the unique manuals of a forward pass."""

    keys: ad.Tensor | None  # (M, m_max, d)
    values: ad.Tensor  # (M, m_max, d)
    values_flat: ad.Tensor  # (D, d) in description order
    mask: np.ndarray  # (M, m_max) bool
    counts: np.ndarray  # (M,) descriptions per manual
    desc_offset: np.ndarray  # (M,) row of each manual's first description
    index: dict  # manual key -> row


def _token_weights(scores: ad.Tensor, mask: np.ndarray, variant: str) -> ad.Tensor:
    if variant == "emma-sigma":
        gates = ad.mul(ad.sigmoid(scores), ad.Tensor(mask.astype(scores.data.dtype)))
        denom = ad.tsum(gates, axis=1)
        return ad.div(gates, ad.reshape(denom, (-1, 1)))
    return ad.masked_softmax(scores, mask, axis=1)


def encode_manuals(params: ModelParams, manuals: list[tuple[object, list[np.ndarray]]],
                   need_keys: bool) -> EncodedManuals:
    """Run the token-weighting and projection paths over every description.

    Weighted token sums commute with the linear projections, so each
    description costs one d_tok-sized matvec regardless of length.
    """
    dtype = ad.default_dtype()
    descs = [d for _, manual in manuals for d in manual]
    if not descs:
        raise ValueError("no descriptions to encode; manual is empty")
    n_max = max(d.shape[0] for d in descs)
    D = len(descs)
    tok = np.zeros((D, n_max, params.d_tok), dtype=dtype)
    tmask = np.zeros((D, n_max), dtype=bool)
    for i, mat in enumerate(descs):
        tok[i, :mat.shape[0]] = mat
        tmask[i, :mat.shape[0]] = True
    tok_t = ad.Tensor(tok)

    def path(u_name, w_name, b_name):
        scores = ad.reshape(
            ad.matmul(ad.reshape(tok_t, (D * n_max, params.d_tok)),
                      ad.reshape(params[u_name], (params.d_tok, 1))),
            (D, n_max))
        w = _token_weights(scores, tmask, params.variant)
        tbar = ad.reshape(ad.matmul(ad.reshape(w, (D, 1, n_max)), tok_t), (D, params.d_tok))
        return ad.linear(tbar, params[w_name], params[b_name])

    values_flat = path("val.u", "val.w", "val.b")
    keys_flat = path("key.u", "key.w", "key.b") if need_keys else None

    counts = np.array([len(manual) for _, manual in manuals])
    m_max = int(counts.max())
    M = len(manuals)
    offset = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pad_index = np.zeros((M, m_max), dtype=np.int64)
    mask = np.zeros((M, m_max), dtype=bool)
    for j in range(M):
        pad_index[j, :counts[j]] = offset[j] + np.arange(counts[j])
        mask[j, :counts[j]] = True

    def pad(flat):
        return ad.reshape(
            ad.embedding_lookup(ad.reshape(flat, (D, params.d)),
                                pad_index.reshape(-1)),
            (M, m_max, params.d))

    values = pad(values_flat)
    keys = pad(keys_flat) if need_keys else None
    index = {key: j for j, (key, _) in enumerate(manuals)}
    return EncodedManuals(keys=keys, values=values, values_flat=values_flat,
                          mask=mask, counts=counts, desc_offset=offset, index=index)


def encode_descriptor(params: ModelParams, tokens_embedded: np.ndarray):
    """Key/value vectors plus token weights for a single description."""
    if tokens_embedded.shape[0] < 1:
        raise ValueError("descriptor needs at least one token")
    enc = encode_manuals(params, [(0, [tokens_embedded])],
                         need_keys=params.variant in ("emma", "emma-sigma"))
    k = enc.keys.data[0, 0] if enc.keys is not None else None
    v = enc.values.data[0, 0]
    return k, v


def entity_representation(params: ModelParams, query: ad.Tensor, keys: ad.Tensor,
                          values: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Scaled dot-product attention of one query over (m, d) keys/values."""
    gamma = ad.attention_weights(query, keys, params.d)
    x = ad.reshape(ad.matmul(ad.reshape(gamma, (1, -1)), values), (-1,))
    return x, gamma


# ---------------------------------------------------------------------------
# grid painting


def _collect_entities(inputs: list[AgentInput]) -> tuple[np.ndarray, dict]:
    """Unique (manual row, symbol) pairs across all frames of the batch."""
    pairs = {}
    for inp in inputs:
        for frame in inp.frames:
            for sym, _, _ in frame.entities:
                pairs.setdefault((inp.key(), sym), len(pairs))
    return pairs


def _placements(inputs, row_of) -> ad.PlacementSpec:
    """Occupancy map for the fused scatter-convolution.

    ``row_of(inp, frame, symbol_or_avatar)`` names the source row for each
    occupant; cells shared by several occupants average their vectors.
    """
    srcs, weights, sample, rows, cols, frames = [], [], [], [], [], []
    for b, inp in enumerate(inputs):
        for f, frame in enumerate(inp.frames):
            occ: dict[tuple[int, int], list[int]] = {}
            for sym, r, c in frame.entities:
                occ.setdefault((r, c), []).append(row_of(inp, frame, sym))
            asym, ar, ac = frame.avatar
            occ.setdefault((ar, ac), []).append(row_of(inp, frame, asym))
            for (r, c), occupants in occ.items():
                w = 1.0 / len(occupants)
                for row in occupants:
                    srcs.append(row)
                    weights.append(w)
                    sample.append(b)
                    rows.append(r)
                    cols.append(c)
                    frames.append(f)
    return ad.PlacementSpec(len(inputs), srcs, np.array(weights, dtype=ad.default_dtype()),
                            sample, rows, cols, frames, grid=(GRID_H, GRID_W),
                            kernel_hw=(2, 2), n_frames=FRAME_STACK)


def _paint(inputs, src: ad.Tensor, row_of, d: int) -> ad.Tensor:
    """Dense (B, 10, 10, 3d) frame stacks; reference path for the fused op."""
    B = len(inputs)
    cells = GRID_H * GRID_W
    spec = _placements(inputs, row_of)
    dest = (spec.sample * FRAME_STACK + spec.frame) * cells \
        + spec.row * GRID_W + spec.col
    grid = ad.place_rows(src, B * FRAME_STACK * cells, dest,
                         spec.src_index, spec.weight)
    grid = ad.reshape(grid, (B, FRAME_STACK, GRID_H, GRID_W, d))
    grid = ad.transpose_axes(grid, (0, 2, 3, 1, 4))
    return ad.reshape(grid, (B, GRID_H, GRID_W, FRAME_STACK * d))


def _trunk(params: ModelParams, src: ad.Tensor, spec: ad.PlacementSpec,
           extra: ad.Tensor | None) -> PolicyOutput:
    B = spec.n_samples
    h = ad.leaky_relu(ad.placed_conv(src, spec, params["conv.w"], params["conv.b"]))
    y = ad.reshape(h, (B, -1))
    if extra is not None:
        y = ad.concat([y, extra], axis=1)
    if "front.w" in params.tensors:
        y = ad.leaky_relu(ad.linear(y, params["front.w"], params["front.b"]))
    for i in range(3):
        y = ad.leaky_relu(ad.linear(y, params[f"ffn.{i}.w"], params[f"ffn.{i}.b"]))
    logits = ad.linear(y, params["policy.w"], params["policy.b"])
    value = ad.reshape(ad.linear(y, params["value.w"], params["value.b"]), (B,))
    return PolicyOutput(logits=logits, probs=ad.softmax(logits, axis=-1), value=value)


# ---------------------------------------------------------------------------
# variant forwards


def _unique_manuals(inputs: list[AgentInput]) -> list[tuple[object, list[np.ndarray]]]:
    seen = {}
    for inp in inputs:
        if inp.manual is None:
            raise ValueError("variant needs a manual but none was provided")
        if not inp.manual:
            raise ValueError("manual is empty")
        seen.setdefault(inp.key(), inp.manual)
    return list(seen.items())


def _attention_entity_rows(params, inputs, enc: EncodedManuals):
    """x_e for every unique (manual, symbol) via soft attention."""
    pairs = _collect_entities(inputs)
    if not pairs:
        return pairs, None
    syms = np.array([sym for (_, sym) in pairs], dtype=np.int64)
    man_rows = np.array([enc.index[k] for (k, _) in pairs], dtype=np.int64)
    E = len(pairs)
    m_max = enc.mask.shape[1]
    q = ad.embedding_lookup(params["query.emb"], syms)

    def gather(padded):
        return ad.reshape(
            ad.embedding_lookup(ad.reshape(padded, (len(enc.counts), m_max * params.d)),
                                man_rows),
            (E, m_max, params.d))

    keys = gather(enc.keys)
    values = gather(enc.values)
    scores = ad.reshape(ad.matmul(ad.reshape(q, (E, 1, params.d)), ad.transpose(keys)),
                        (E, m_max))
    scores = ad.mul(scores, ad.Tensor(1.0 / np.sqrt(params.d)))
    gamma = ad.masked_softmax(scores, enc.mask[man_rows], axis=1)
    x = ad.reshape(ad.matmul(ad.reshape(gamma, (E, 1, m_max)), values), (E, params.d))
    return pairs, x


def _mapped_entity_rows(params, inputs, enc: EncodedManuals, mapping_of):
    """x_e from explicit description-to-entity maps (oracle and hard-assign).

    ``mapping_of(inp)`` yields {description index -> entity id}; entities
    without a description keep zeros (omap) or a learned default (bam).
    """
    pairs = _collect_entities(inputs)
    E = max(len(pairs), 1)
    dest, srcs, weights = [], [], []
    seen_keys = set()
    assigned = set()
    for inp in inputs:
        k = inp.key()
        if k in seen_keys:
            continue
        seen_keys.add(k)
        man_row = enc.index[k]
        for di, ent in mapping_of(inp).items():
            pair = (k, ent)
            if pair in pairs:
                dest.append(pairs[pair])
                srcs.append(enc.desc_offset[man_row] + di)
                weights.append(1.0)
                assigned.add(pair)
    x = ad.place_rows(enc.values_flat, E, np.array(dest, dtype=np.int64),
                      np.array(srcs, dtype=np.int64), np.array(weights))
    if params.variant == "bam":
        default_rows = np.array([sym for (_, sym) in pairs], dtype=np.int64)
        defaults = ad.embedding_lookup(params["default.emb"], default_rows)
        gate = np.array([[0.0 if p in assigned else 1.0] for p in pairs],
                        dtype=ad.default_dtype())
        x = ad.add(x, ad.mul(defaults, ad.Tensor(gate)))
    return pairs, x


def _entity_grid_forward(params, inputs, pairs, x_entities) -> PolicyOutput:
    avatar_base = len(pairs)
    src = ad.concat([x_entities, params["avatar.emb"]], axis=0) if pairs else \
        params["avatar.emb"]

    def row_of(inp, frame, sym):
        if sym == AVATAR_PLAIN:
            return avatar_base
        if sym == AVATAR_WITH_MESSAGE:
            return avatar_base + 1
        return pairs[(inp.key(), sym)]

    return _trunk(params, src, _placements(inputs, row_of), None)


def _forward_emma(params, inputs) -> PolicyOutput:
    enc = encode_manuals(params, _unique_manuals(inputs), need_keys=True)
    pairs, x = _attention_entity_rows(params, inputs, enc)
    return _entity_grid_forward(params, inputs, pairs, x)


def _forward_omap(params, inputs) -> PolicyOutput:
    enc = encode_manuals(params, _unique_manuals(inputs), need_keys=False)

    def mapping_of(inp):
        if inp.truths is None:
            raise ValueError("omap needs per-description truth entities")
        if len(inp.truths) != len(inp.manual):
            raise ValueError("truth map length does not match the manual")
        return {i: e for i, e in enumerate(inp.truths)}

    pairs, x = _mapped_entity_rows(params, inputs, enc, mapping_of)
    return _entity_grid_forward(params, inputs, pairs, x)


def _forward_bam(params, inputs) -> PolicyOutput:
    enc = encode_manuals(params, _unique_manuals(inputs), need_keys=False)

    def mapping_of(inp):
        if inp.assignment is None:
            raise ValueError("bam needs a precomputed description assignment")
        return inp.assignment

    pairs, x = _mapped_entity_rows(params, inputs, enc, mapping_of)
    return _entity_grid_forward(params, inputs, pairs, x)


def _symbol_placements(inputs) -> ad.PlacementSpec:
    return _placements(inputs, lambda inp, frame, sym: sym)


def _forward_mean_bos(params, inputs) -> PolicyOutput:
    manuals = _unique_manuals(inputs)
    enc = encode_manuals(params, manuals, need_keys=False)
    M, m_max = enc.mask.shape
    w = (enc.mask / enc.counts[:, None]).astype(ad.default_dtype())
    vbar = ad.reshape(ad.matmul(ad.Tensor(w.reshape(M, 1, m_max)), enc.values),
                      (M, params.d))
    rows = np.array([enc.index[inp.key()] for inp in inputs], dtype=np.int64)
    extra = ad.embedding_lookup(vbar, rows)
    return _trunk(params, params["symbol.emb"], _symbol_placements(inputs), extra)


def _forward_gid(params, inputs) -> PolicyOutput:
    ids = []
    for inp in inputs:
        if inp.ids is None or len(inp.ids) != 3:
            raise ValueError("gid needs exactly three integer ids")
        ids.append(inp.ids)
    idx = np.array(ids, dtype=np.int64)
    emb = ad.embedding_lookup(params["id.emb"], idx.reshape(-1))
    extra = ad.reshape(emb, (len(inputs), 3 * params.d))
    return _trunk(params, params["symbol.emb"], _symbol_placements(inputs), extra)


_FORWARDS = {
    "emma": _forward_emma,
    "emma-sigma": _forward_emma,
    "mean-bos": _forward_mean_bos,
    "gid": _forward_gid,
    "bam": _forward_bam,
    "omap": _forward_omap,
}


def forward(params: ModelParams, inputs: list[AgentInput]) -> PolicyOutput:
    if not inputs:
        raise ValueError("empty batch")
    return _FORWARDS[params.variant](params, inputs)


def game_ids(game) -> tuple[int, int, int]:
    """Integer ids revealing the entity-role mapping, one per role slot."""
    return tuple((e - 1) * len(ROLES) + r for r, e in enumerate(game.entities))


# ---------------------------------------------------------------------------
# co-occurrence alignment (hard attention)


class BamCounts:
    """Token-entity episode co-occurrence counts with additive smoothing."""

    def __init__(self, smoothing: float = 1.0):
        self.smoothing = smoothing
        self.vocab: dict[str, int] = {}
        self.rows: list[np.ndarray] = []  # one (13,) count row per token
        self.totals = np.zeros(13, dtype=np.int64)
        self.episodes = 0

    def _row(self, token: str) -> int:
        i = self.vocab.get(token)
        if i is None:
            i = len(self.vocab)
            self.vocab[token] = i
            self.rows.append(np.zeros(13, dtype=np.int64))
        return i

    def update(self, manual_tokens, entities) -> None:
        """Count each manual token once against each entity present."""
        self.episodes += 1
        ent = np.array(sorted(set(entities)), dtype=np.int64)
        for tok in set(manual_tokens):
            self.rows[self._row(tok)][ent] += 1
        self.totals[ent] += len(set(manual_tokens))

    def token_given_entity(self, token: str, entity: int) -> float:
        v = len(self.vocab)
        c = self.rows[self.vocab[token]][entity] if token in self.vocab else 0
        return (c + self.smoothing) / (self.totals[entity] + self.smoothing * v)

    def log_likelihood(self, tokens, entity: int) -> float:
        v = max(len(self.vocab), 1)
        denom = np.log(self.totals[entity] + self.smoothing * v)
        total = 0.0
        for tok in tokens:
            i = self.vocab.get(tok)
            c = self.rows[i][entity] if i is not None else 0
            total += np.log(c + self.smoothing) - denom
        return total

    def posterior(self, tokens, candidates) -> np.ndarray:
        """P(entity | description) over ``candidates`` with a uniform prior."""
        ll = np.array([self.log_likelihood(tokens, e) for e in candidates])
        ll -= ll.max()
        p = np.exp(ll)
        return p / p.sum()

    def assign(self, manuals_tokens: list, candidates) -> dict[int, int]:
        """Map description index -> entity; collisions keep the higher
        posterior, ties fall to the lower entity id; losers stay unmapped."""
        candidates = sorted(set(candidates))
        post = [self.posterior(toks, candidates) for toks in manuals_tokens]
        chosen: dict[int, tuple[float, int]] = {}
        for di, p in enumerate(post):
            e = candidates[int(np.argmax(p))]
            score = float(p.max())
            if e not in chosen or score > chosen[e][0]:
                chosen[e] = (score, di)
        return {di: e for e, (_, di) in chosen.items()}

    def save_arrays(self):
        tokens = sorted(self.vocab, key=self.vocab.get)
        return tokens, np.stack(self.rows) if self.rows else np.zeros((0, 13), np.int64)

    @classmethod
    def from_arrays(cls, tokens, counts, episodes=0, smoothing=1.0):
        out = cls(smoothing=smoothing)
        out.vocab = {t: i for i, t in enumerate(tokens)}
        out.rows = [np.asarray(r, dtype=np.int64) for r in counts]
        out.totals = (np.stack(out.rows).sum(axis=0) if out.rows
                      else np.zeros(13, np.int64))
        out.episodes = episodes
        return out


# ---------------------------------------------------------------------------
# diagnostics


def attention_heatmap(params: ModelParams, bank, table, rng) -> np.ndarray:
    """Attention weight matrix over 12 single-entity descriptors.

    Row i: entity i+1's weights over one random training descriptor per
    entity (column j describes entity j+1).
    """
    from .textgen import generate_description
    if params.variant not in ("emma", "emma-sigma"):
        raise ValueError(f"attention heatmap needs a query-based variant, not {params.variant}")
    descs = []
    for e in range(1, 13):
        d = generate_description(bank, e, ROLES[rng.integers(3)],
                                 ("chasing", "fleeing", "immovable")[rng.integers(3)],
                                 "train", rng)
        descs.append(table.embed(list(d.tokens)).astype(ad.default_dtype()))
    with ad.no_grad():
        enc = encode_manuals(params, [("hm", descs)], need_keys=True)
        q = ad.embedding_lookup(params["query.emb"], np.arange(1, 13))
        scores = ad.matmul(q, ad.transpose(ad.reshape(enc.keys, (12, params.d))))
        gamma = ad.softmax(ad.mul(scores, ad.Tensor(1.0 / np.sqrt(params.d))), axis=1)
    return gamma.data.copy()


def heatmap_csv(matrix: np.ndarray) -> str:
    names = [entity_name(e) for e in range(1, 13)]
    lines = ["entity," + ",".join(names)]
    for i, row in enumerate(matrix):
        lines.append(names[i] + "," + ",".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"
