import numpy as np
import pytest

from courier import autodiff as ad
from courier.gradcheck import check_scalar_fn, operator_suite


@pytest.fixture(autouse=True)
def _double_precision():
    with ad.using_dtype(np.float64):
        yield


def test_every_operator_matches_finite_differences():
    results = dict(operator_suite(seed=7, instances=10))
    assert results  # at least one case ran
    assert max(results.values()) <= 1e-4


def test_softmax_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = ad.Tensor(rng.standard_normal(rng.integers(1, 12)))
        s = ad.softmax(x)
        assert abs(s.data.sum() - 1.0) <= 1e-12


def test_softmax_cross_entropy_stable_for_huge_logits():
    logits = ad.Tensor(np.array([1e3, -1e3, 500.0, 0.0]), requires_grad=True)
    target = np.zeros(4)
    target[1] = 1.0  # worst case: all mass on the smallest logit
    loss = -ad.tsum(ad.mul(ad.Tensor(target), ad.log_softmax(logits)))
    assert np.isfinite(loss.data)
    ad.backward(loss)
    assert np.all(np.isfinite(logits.grad))


def test_conv2d_shape_on_full_scale_input():
    x = ad.Tensor(np.zeros((1, 10, 10, 768)))
    k = ad.Tensor(np.zeros((2, 2, 768, 64)))
    b = ad.Tensor(np.zeros(64))
    out = ad.conv2d(x, k, b)
    assert out.shape == (1, 9, 9, 64)


def test_placed_conv_matches_dense_scatter_plus_conv2d():
    rng = np.random.default_rng(4)
    k, n_samples, d, frames = 24, 3, 4, 3
    spec = ad.PlacementSpec(
        n_samples=n_samples, src_index=rng.integers(0, 6, k),
        weight=rng.uniform(0.2, 1.0, k), sample=rng.integers(0, n_samples, k),
        row=rng.integers(0, 10, k), col=rng.integers(0, 10, k),
        frame=rng.integers(0, frames, k), grid=(10, 10), kernel_hw=(2, 2),
        n_frames=frames)
    src = ad.Tensor(rng.standard_normal((6, d)))
    kernel = ad.Tensor(rng.standard_normal((2, 2, frames * d, 5)))
    bias = ad.Tensor(rng.standard_normal(5))
    fused = ad.placed_conv(src, spec, kernel, bias)

    dest = (spec.sample * frames + spec.frame) * 100 + spec.row * 10 + spec.col
    grid = ad.place_rows(src, n_samples * frames * 100, dest, spec.src_index,
                         spec.weight)
    grid = ad.reshape(grid, (n_samples, frames, 10, 10, d))
    grid = ad.transpose_axes(grid, (0, 2, 3, 1, 4))
    grid = ad.reshape(grid, (n_samples, 10, 10, frames * d))
    dense = ad.conv2d(grid, kernel, bias)
    assert np.allclose(fused.data, dense.data, atol=1e-10)


def test_conv2d_rejects_channel_mismatch():
    x = ad.Tensor(np.zeros((1, 5, 5, 3)))
    k = ad.Tensor(np.zeros((2, 2, 4, 8)))
    with pytest.raises(ad.ShapeError) as e:
        ad.conv2d(x, k, ad.Tensor(np.zeros(8)))
    assert "(1, 5, 5, 3)" in str(e.value) and "(2, 2, 4, 8)" in str(e.value)


def test_matmul_rejects_shape_mismatch_naming_both_shapes():
    a = ad.Tensor(np.zeros((2, 3)))
    b = ad.Tensor(np.zeros((4, 2)))
    with pytest.raises(ad.ShapeError) as e:
        ad.matmul(a, b)
    assert "(2, 3)" in str(e.value) and "(4, 2)" in str(e.value)


def test_leaky_relu_negative_slope():
    x = ad.Tensor(np.array([-1.0]))
    assert ad.leaky_relu(x).data[0] == pytest.approx(-0.01)


def test_linear_grad_is_outer_product_structure():
    rng = np.random.default_rng(1)
    w = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x = np.abs(rng.standard_normal(3)) + 0.1
    loss = ad.tsum(ad.matmul(ad.Tensor(x.reshape(1, 3)), w))
    ad.backward(loss)
    # d(sum(x W))/dW = x broadcast across output columns
    assert np.allclose(w.grad, np.outer(x, np.ones(4)))


def test_backward_twice_raises():
    x = ad.Tensor(np.array(2.0), requires_grad=True)
    loss = ad.mul(x, x)
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, x)
    with pytest.raises(ValueError):
        ad.backward(y)


def test_unreachable_params_get_zero_grad():
    x = ad.Tensor(np.array(3.0), requires_grad=True)
    orphan = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ad.mul(x, x)
    ad.backward(loss, params=[x, orphan])
    assert orphan.grad is not None and np.all(orphan.grad == 0.0)
    assert x.grad == pytest.approx(6.0)


def test_shared_subgraph_accumulates_once_per_node():
    # y is consumed twice; its vjp must fire once with the summed gradient.
    calls = []
    x = ad.Tensor(np.array(2.0), requires_grad=True)
    y = ad.mul(x, x)
    orig = y._vjp

    def counting(g):
        calls.append(float(g))
        return orig(g)

    y._vjp = counting
    loss = ad.add(y, y)
    ad.backward(loss)
    assert calls == [2.0]
    assert x.grad == pytest.approx(8.0)


def test_no_grad_blocks_recording():
    x = ad.Tensor(np.array(1.5), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert y._vjp is None


class TestAdam:
    def test_descends_on_quadratic(self):
        x = ad.Tensor(np.array(1.0), requires_grad=True)
        opt = ad.Adam({"x": x}, lr=5e-5)
        vals = []
        for _ in range(2000):
            loss = ad.mul(x, x)
            ad.backward(loss)
            opt.step()
            vals.append(abs(float(x.data)))
        # strictly decreasing once past warmup
        tail = vals[100:]
        assert all(b < a for a, b in zip(tail, tail[1:]))

    def test_zero_grad_leaves_param_unchanged(self):
        x = ad.Tensor(np.array(3.0), requires_grad=True)
        opt = ad.Adam({"x": x}, lr=1e-2)
        x.grad = np.asarray(0.0)
        before = float(x.data)
        opt.step()
        assert float(x.data) == before

    def test_missing_grad_raises(self):
        x = ad.Tensor(np.array(3.0), requires_grad=True)
        opt = ad.Adam({"x": x})
        with pytest.raises(RuntimeError):
            opt.step()

    def test_identical_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(5)
            w = ad.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
            opt = ad.Adam({"w": w}, lr=1e-3)
            for _ in range(50):
                loss = ad.mean(ad.square(ad.matmul(w, w)))
                ad.backward(loss)
                opt.step()
            return w.data.copy()

        a, b = run(), run()
        assert a.tobytes() == b.tobytes()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    with ad.using_dtype(np.float32):
        params = {
            "w": ad.Tensor(rng.standard_normal((3, 5)), requires_grad=True),
            "b": ad.Tensor(rng.standard_normal(5), requires_grad=True),
        }
        opt = ad.Adam(params, lr=1e-3)
        loss = ad.mean(ad.square(params["w"])) + ad.mean(ad.square(params["b"]))
        ad.backward(loss, params=list(params.values()))
        opt.step()
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, "emma", 64, 64, params, optimizer=opt, extra={"note": 1})
        meta, loaded, opt_state = ad.load_checkpoint(path)
    assert meta["variant"] == "emma" and meta["d"] == 64 and meta["d_tok"] == 64
    for k in params:
        assert np.array_equal(loaded[k].data, params[k].data.astype(np.float32))
    assert opt_state["step_count"] == 1
    assert np.array_equal(opt_state["m"]["w"], opt.m["w"])


def test_full_graph_gradcheck_composite():
    # conv -> flatten -> linear -> softmax pipeline, checked end to end.
    rng = np.random.default_rng(11)
    x = rng.standard_normal((1, 4, 4, 2))
    k = rng.standard_normal((2, 2, 2, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1
    w = rng.standard_normal((27, 5)) * 0.3
    pick = np.zeros(5)
    pick[2] = 1.0

    def build(ts):
        h = ad.leaky_relu(ad.conv2d(ts[0], ts[1], ts[2]))
        flat = ad.reshape(h, (1, 27))
        logits = ad.matmul(flat, ts[3])
        return -ad.tsum(ad.mul(ad.Tensor(pick), ad.log_softmax(logits, axis=-1)))

    worst = check_scalar_fn(build, [x, k, b, w])
    assert worst <= 1e-4
