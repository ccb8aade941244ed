"""Central finite-difference gradient checking for the autodiff operators.

The numeric oracle never touches the reverse-mode code paths: it re-runs the
forward function at perturbed inputs. Checks run in float64.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

FD_STEP = 1e-5
TOLERANCE = 1e-4


def numeric_gradient(fn, arrays: list[np.ndarray], wrt: int, eps: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``fn(arrays)`` w.r.t. ``arrays[wrt]``."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[wrt])
    flat = base[wrt].reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(base)
        flat[i] = orig - eps
        lo = fn(base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(1e-6, float(np.abs(analytic).max(initial=0.0)),
                float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom


def check_scalar_fn_sampled(build, arrays: list[np.ndarray], rng: np.random.Generator,
                            entries_per_input: int = 6, tol: float = TOLERANCE,
                            eps: float = FD_STEP) -> float:
    """Like ``check_scalar_fn`` but probes a random subset of entries.

    Needed for whole-model graphs where exhaustive central differences over
    every weight would take hours; the analytic gradient is still produced by
    one full reverse pass.
    """
    tensors = [ad.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(tensors)
    ad.backward(loss, params=tensors)

    def run(arrs):
        with ad.no_grad():
            consts = [ad.Tensor(a, dtype=np.float64) for a in arrs]
            return float(build(consts).data)

    base = [a.copy() for a in arrays]
    worst = 0.0
    for i, t in enumerate(tensors):
        flat = base[i].reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_input, flat.size),
                           replace=False)
        analytic = t.grad.reshape(-1)[picks]
        numeric = np.empty_like(analytic)
        for j, idx in enumerate(picks):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = run(base)
            flat[idx] = orig - eps
            lo = run(base)
            flat[idx] = orig
            numeric[j] = (hi - lo) / (2.0 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    if worst > tol:
        raise AssertionError(f"sampled gradient check failed: {worst:.3e} > {tol:g}")
    return worst


def check_scalar_fn(build, arrays: list[np.ndarray], tol: float = TOLERANCE) -> float:
    """Compare reverse-mode grads of ``build`` against central differences.

    ``build`` maps a list of Tensors to a scalar Tensor; every input is
    treated as differentiable. Returns the worst relative error seen.
    """
    tensors = [ad.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(tensors)
    ad.backward(loss, params=tensors)

    def run(arrs):
        with ad.no_grad():
            consts = [ad.Tensor(a, dtype=np.float64) for a in arrs]
            return float(build(consts).data)

    worst = 0.0
    for i, t in enumerate(tensors):
        num = numeric_gradient(run, arrays, wrt=i)
        worst = max(worst, relative_error(t.grad, num))
    if worst > tol:
        raise AssertionError(f"gradient check failed: relative error {worst:.3e} > {tol:g}")
    return worst


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def operator_suite(seed: int = 0, instances: int = 10, tol: float = TOLERANCE):
    """Yields (operator name, worst relative error) for every operator.

    Raises AssertionError on the first operator exceeding ``tol``.
    """
    rng = np.random.default_rng(seed)

    def reduce_sum(t):
        return ad.mean(ad.reshape(t, (-1,)))

    cases = []

    def case(name, make):
        cases.append((name, make))

    case("add", lambda: (lambda ts: reduce_sum(ad.add(ts[0], ts[1])),
                         [_rand(rng, 4, 5), _rand(rng, 4, 5)]))
    case("add_broadcast", lambda: (lambda ts: reduce_sum(ad.add(ts[0], ts[1])),
                                   [_rand(rng, 4, 5), _rand(rng, 5)]))
    case("sub", lambda: (lambda ts: reduce_sum(ad.sub(ts[0], ts[1])),
                         [_rand(rng, 3, 4), _rand(rng, 3, 4)]))
    case("mul", lambda: (lambda ts: reduce_sum(ad.mul(ts[0], ts[1])),
                         [_rand(rng, 6), _rand(rng, 6)]))
    case("div", lambda: (lambda ts: reduce_sum(ad.div(ts[0], ts[1])),
                         [_rand(rng, 6), np.abs(_rand(rng, 6)) + 0.5]))
    case("square", lambda: (lambda ts: reduce_sum(ad.square(ts[0])), [_rand(rng, 3, 3)]))
    case("matmul", lambda: (lambda ts: reduce_sum(ad.matmul(ts[0], ts[1])),
                            [_rand(rng, 4, 6), _rand(rng, 6, 3)]))
    case("linear", lambda: (lambda ts: reduce_sum(ad.linear(ts[0], ts[1], ts[2])),
                            [_rand(rng, 5, 4), _rand(rng, 4, 3), _rand(rng, 3)]))
    case("exp", lambda: (lambda ts: reduce_sum(ad.exp(ts[0])), [_rand(rng, 4, 2)]))
    case("log", lambda: (lambda ts: reduce_sum(ad.log(ts[0])),
                         [np.abs(_rand(rng, 4, 2)) + 0.5]))
    # Keep inputs away from the leaky-relu kink and clip edges: central
    # differences straddle the nonsmooth point otherwise.
    case("leaky_relu", lambda: (lambda ts: reduce_sum(ad.leaky_relu(ts[0])),
                                [_rand(rng, 5, 5) + np.sign(_rand(rng, 5, 5)) * 1e-2]))
    case("sigmoid", lambda: (lambda ts: reduce_sum(ad.sigmoid(ts[0])), [_rand(rng, 7)]))
    case("softmax", lambda: (lambda ts: reduce_sum(ad.mul(ts[1], ad.softmax(ts[0], axis=-1))),
                             [_rand(rng, 3, 5), _rand(rng, 3, 5)]))
    case("log_softmax", lambda: (lambda ts: reduce_sum(ad.mul(ts[1], ad.log_softmax(ts[0], axis=-1))),
                                 [_rand(rng, 3, 5), _rand(rng, 3, 5)]))

    def masked_softmax_case():
        mask = rng.random((3, 5)) < 0.7
        mask[:, 0] = True  # at least one live slot per row
        pick = rng.standard_normal((3, 5)) * mask
        return (lambda ts: reduce_sum(ad.mul(ad.Tensor(pick), ad.masked_softmax(ts[0], mask))),
                [_rand(rng, 3, 5)])

    case("masked_softmax", masked_softmax_case)
    case("mean_axis", lambda: (lambda ts: reduce_sum(ad.mean(ts[0], axis=0)), [_rand(rng, 4, 3)]))
    case("sum_axis", lambda: (lambda ts: reduce_sum(ad.tsum(ts[0], axis=1)), [_rand(rng, 4, 3)]))
    case("minimum", lambda: (lambda ts: reduce_sum(ad.minimum(ts[0], ts[1])),
                             [_rand(rng, 8), _rand(rng, 8)]))
    case("clip", lambda: (lambda ts: reduce_sum(ad.clip(ts[0], -0.8, 0.8)),
                          [_rand(rng, 10) * 2.0 + 0.05]))
    case("reshape", lambda: (lambda ts: reduce_sum(ad.reshape(ts[0], (6, 2))), [_rand(rng, 3, 4)]))
    case("concat", lambda: (lambda ts: reduce_sum(ad.concat([ts[0], ts[1]], axis=1)),
                            [_rand(rng, 3, 2), _rand(rng, 3, 4)]))
    case("transpose", lambda: (lambda ts: reduce_sum(ad.matmul(ts[0], ad.transpose(ts[1]))),
                               [_rand(rng, 3, 4), _rand(rng, 5, 4)]))
    case("transpose_axes", lambda: (lambda ts: reduce_sum(
        ad.mul(ts[1], ad.transpose_axes(ts[0], (2, 0, 1)))),
        [_rand(rng, 3, 4, 2), _rand(rng, 2, 3, 4)]))
    case("batched_matmul", lambda: (lambda ts: reduce_sum(ad.matmul(ts[0], ts[1])),
                                    [_rand(rng, 3, 2, 4), _rand(rng, 3, 4, 5)]))

    def gather_case():
        idx = rng.integers(0, 5, size=6)
        return (lambda ts: reduce_sum(ad.gather_rows(ts[0], idx)), [_rand(rng, 6, 5)])

    case("gather_rows", gather_case)

    def embed_case():
        idx = rng.integers(0, 7, size=(4, 3))
        return (lambda ts: reduce_sum(ad.embedding_lookup(ts[0], idx)), [_rand(rng, 7, 4)])

    case("embedding_lookup", embed_case)

    def place_case():
        dest = rng.integers(0, 12, size=9)
        src_i = rng.integers(0, 5, size=9)
        wts = rng.uniform(0.2, 1.0, size=9)
        return (lambda ts: reduce_sum(ad.place_rows(ts[0], 12, dest, src_i, wts)),
                [_rand(rng, 5, 4)])

    case("place_rows", place_case)

    def conv_case():
        return (lambda ts: reduce_sum(ad.conv2d(ts[0], ts[1], ts[2])),
                [_rand(rng, 2, 5, 4, 3), _rand(rng, 2, 2, 3, 4), _rand(rng, 4)])

    case("conv2d", conv_case)

    def placed_conv_case():
        k = 14
        spec = ad.PlacementSpec(
            n_samples=2, src_index=rng.integers(0, 5, k),
            weight=rng.uniform(0.3, 1.0, k), sample=rng.integers(0, 2, k),
            row=rng.integers(0, 6, k), col=rng.integers(0, 5, k),
            frame=rng.integers(0, 3, k), grid=(6, 5), kernel_hw=(2, 2), n_frames=3)
        return (lambda ts: reduce_sum(ad.placed_conv(ts[0], spec, ts[1], ts[2])),
                [_rand(rng, 5, 4), _rand(rng, 2, 2, 12, 3), _rand(rng, 3)])

    case("placed_conv", placed_conv_case)

    def attn_case():
        return (lambda ts: reduce_sum(ad.mul(ts[2], ad.attention_weights(ts[0], ts[1], 4))),
                [_rand(rng, 4), _rand(rng, 3, 4), _rand(rng, 3)])

    case("scaled_dot_attention_weights", attn_case)

    for name, make in cases:
        worst = 0.0
        for _ in range(instances):
            build, arrays = make()
            worst = max(worst, check_scalar_fn(build, arrays, tol=tol))
        yield name, worst


def run_operator_suite(seed: int = 0, instances: int = 10, tol: float = TOLERANCE,
                       report=None) -> bool:
    ok = True
    for name, worst in operator_suite(seed=seed, instances=instances, tol=tol):
        if report:
            report(f"gradcheck {name}: max rel err {worst:.2e}")
    return ok
