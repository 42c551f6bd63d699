import numpy as np
import pytest

from gapdner import tensor as T
from gradcheck import assert_grad_close, numeric_grad

RNG = np.random.default_rng(1234)


def _project(out: T.Tensor, probe: np.ndarray) -> T.Tensor:
    """A scalar loss sum(out * probe), so every output entry gets a distinct upstream gradient."""
    return T.total(T.mul(out, T.constant(probe)))


def check_op(build, *shapes, positive=False, label="op"):
    """Finite-difference check of every input of `build(*tensors)`."""
    arrays = [RNG.normal(size=s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    probe_shape = build(*[T.constant(a) for a in arrays]).shape
    probe = RNG.normal(size=probe_shape)

    params = [T.parameter(a) for a in arrays]
    T.backward(_project(build(*params), probe))
    for k, p in enumerate(params):
        def f():
            return float(_project(build(*[T.constant(a) for a in arrays]), probe).data)

        assert_grad_close(p.grad, numeric_grad(f, arrays[k]), label=f"{label} input {k}")


# ------------------------------------------------------------------ worked examples

def test_affine_identity():
    y = T.affine(T.constant([1.0, 0.0]), T.constant(np.eye(2)), T.constant(np.zeros(2)))
    assert y.data.tolist() == [1.0, 0.0]


def test_affine_forced_arithmetic():
    y = T.affine(T.constant([1.0, 2.0]), T.constant([[1.0], [1.0]]), T.constant([3.0]))
    assert y.data.tolist() == [6.0]


def test_affine_shape_error_names_both():
    with pytest.raises(T.ShapeError, match=r"\(3,\).*\(2, 2\)"):
        T.affine(T.constant(np.ones(3)), T.constant(np.eye(2)))


def test_bilinear_zero_and_scalar():
    d = 3
    out = T.bilinear(T.constant(np.ones(d)), T.constant(np.zeros((d, d, d))), T.constant(np.ones(d)))
    assert out.data.tolist() == [0.0] * d
    out = T.bilinear(T.constant([2.0]), T.constant([[[5.0]]]), T.constant([3.0]))
    assert out.data.tolist() == [30.0]


def test_bilinear_triple_loop_oracle():
    d = 4
    u, U1, v = RNG.normal(size=d), RNG.normal(size=(d, d, d)), RNG.normal(size=d)
    expected = np.zeros(d)
    for k in range(d):
        for p in range(d):
            for q in range(d):
                expected[k] += u[p] * U1[p, k, q] * v[q]
    got = T.bilinear(T.constant(u), T.constant(U1), T.constant(v)).data
    assert np.max(np.abs(got - expected)) <= 1e-12


def test_bilinear_grid_matches_pairwise():
    n, d = 3, 4
    u, U1, v = RNG.normal(size=(n, d)), RNG.normal(size=(d, d, d)), RNG.normal(size=(n, d))
    grid = T.bilinear_grid(T.constant(u), T.constant(U1), T.constant(v)).data
    for i in range(n):
        for j in range(n):
            one = T.bilinear(T.constant(u[i]), T.constant(U1), T.constant(v[j])).data
            assert np.max(np.abs(grid[i, j] - one)) <= 1e-12


def test_bilinear_shape_error():
    with pytest.raises(T.ShapeError):
        T.bilinear(T.constant(np.ones(2)), T.constant(np.ones((3, 3, 3))), T.constant(np.ones(3)))


def test_softmax_examples():
    assert T.softmax(T.constant([0.0, 0.0])).data.tolist() == [0.5, 0.5]
    big = T.softmax(T.constant([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert big[0] == 1.0 and big[1] < 1e-300


def test_softmax_normalized():
    x = RNG.normal(size=(4, 5, 6)) * 10
    for axis in (0, 1, 2, -1):
        y = T.softmax(T.constant(x), axis=axis).data
        assert np.all(y >= 0)
        assert np.max(np.abs(y.sum(axis=axis) - 1.0)) <= 1e-9


def test_masked_softmax_zeros_and_empty_rows():
    x = T.constant(RNG.normal(size=(3, 4)))
    mask = np.array([[1, 1, 0, 0], [0, 0, 0, 0], [1, 0, 0, 1]], dtype=bool)
    y = T.masked_softmax(x, mask).data
    assert np.all(y[~mask] == 0.0)
    assert y[1].tolist() == [0.0] * 4
    assert abs(y[0].sum() - 1) <= 1e-12 and abs(y[2].sum() - 1) <= 1e-12


def test_dropout_modes():
    x = T.constant(np.ones((50, 40)))
    assert T.dropout(x, 0.5, None, train=False) is x
    a = T.dropout(x, 0.5, np.random.default_rng(3), train=True).data
    b = T.dropout(x, 0.5, np.random.default_rng(3), train=True).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    assert 0.4 < (a == 0).mean() < 0.6
    with pytest.raises(ValueError):
        T.dropout(x, 0.5, None, train=True)


def test_log_floor_clamps():
    x = T.parameter([1e-20, 2.0])
    y = T.log(x, floor=1e-12)
    assert y.data[0] == np.log(1e-12)
    T.backward(T.total(y))
    assert x.grad.tolist() == [0.0, 0.5]


# ------------------------------------------------------------------ backward contract

def test_backward_sum():
    x = T.parameter([1.0, 2.0, 3.0])
    T.backward(T.total(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_diamond_adds():
    x = T.parameter([1.5, -2.0])
    a = T.scale(x, 3.0)
    b = T.mul(x, x)
    T.backward(T.total(T.add(a, b)))
    assert x.grad.tolist() == [3.0 + 2 * 1.5, 3.0 + 2 * -2.0]


def test_backward_deep_chain_visits_once():
    x = T.parameter([0.3])
    y = x
    for _ in range(2000):
        y = T.add(y, x)
    T.backward(T.total(y))
    assert x.grad.tolist() == [2001.0]


def test_backward_non_scalar_rejected():
    with pytest.raises(T.ShapeError, match="scalar"):
        T.backward(T.parameter([1.0, 2.0]))


def test_backward_deterministic():
    def run():
        W = T.parameter(np.arange(12.0).reshape(3, 4) / 7)
        x = T.constant(np.linspace(-1, 1, 6).reshape(2, 3))
        h = T.tanh(T.affine(x, W))
        s = T.softmax(h)
        T.backward(T.mean(T.mul(s, h)))
        return W.grad

    assert run().tobytes() == run().tobytes()


# ------------------------------------------------------------------ finite differences, every op

# (label, op, input shapes, inputs must be positive)
OP_CASES = [
    ("add", T.add, [(3, 4), (3, 4)], False),
    ("mul", T.mul, [(3, 4), (3, 4)], False),
    ("scale", lambda x: T.scale(x, -1.7), [(5,)], False),
    ("tanh", T.tanh, [(4, 3)], False),
    ("sigmoid", T.sigmoid, [(4, 3)], False),
    ("log", T.log, [(6,)], True),
    ("total", T.total, [(2, 3)], False),
    ("mean", T.mean, [(2, 3)], False),
    ("index_basic", lambda x: x[1:, 2], [(4, 5)], False),
    ("index_fancy", lambda x: T.index(x, (np.array([0, 2, 0]), np.array([1, 1, 1]))), [(3, 3)], False),
    ("reshape", lambda x: T.reshape(x, (6, 2)), [(3, 4)], False),
    ("concat", lambda a, b: T.concat([a, b], axis=-1), [(2, 3), (2, 5)], False),
    ("concat0", lambda a, b: T.concat([a, b], axis=0), [(2, 3), (1, 3)], False),
    ("stack", lambda a, b: T.stack([a, b], axis=1), [(2, 3), (2, 3)], False),
    ("matmul", T.matmul, [(2, 3, 4), (4, 5)], False),
    ("add_bias", T.add_bias, [(2, 3, 4), (4,)], False),
    ("affine", T.affine, [(3, 4), (4, 2), (2,)], False),
    ("bilinear", T.bilinear, [(4,), (4, 4, 4), (4,)], False),
    ("bilinear_batch", T.bilinear, [(3, 4), (4, 2, 4), (3, 4)], False),
    ("bilinear_grid", T.bilinear_grid, [(3, 4), (4, 2, 4), (3, 4)], False),
    ("softmax", lambda x: T.softmax(x, axis=-1), [(3, 5)], False),
    ("softmax0", lambda x: T.softmax(x, axis=0), [(3, 5)], False),
    ("masked_softmax", lambda x: T.masked_softmax(x, np.tri(4, 5, dtype=bool)), [(4, 5)], False),
    ("weighted_sum", T.weighted_sum, [(3, 4), (3, 4, 2)], False),
    ("einsum_reduce", lambda a, b: T.einsum("ij,jk->i", a, b), [(3, 4), (4, 2)], False),
    ("einsum_outer", lambda a, b: T.einsum("i,j->ij", a, b), [(3,), (4,)], False),
    # a fresh generator per call keeps the dropout mask fixed across evaluations
    ("dropout", lambda x: T.dropout(x, 0.3, np.random.default_rng(7), train=True), [(4, 6)], False),
]


@pytest.mark.parametrize("label, build, shapes, positive", OP_CASES)
def test_finite_differences(label, build, shapes, positive):
    check_op(build, *shapes, positive=positive, label=label)


def test_affine_gradient_tight():
    # gradient of sum(affine(x, W, b)) wrt W agrees to 1e-6 relative
    x, W, b = RNG.normal(size=(5, 3)), RNG.normal(size=(3, 2)), RNG.normal(size=2)
    Wp = T.parameter(W)
    T.backward(T.total(T.affine(T.constant(x), Wp, T.constant(b))))
    num = numeric_grad(lambda: float(T.total(T.affine(T.constant(x), T.constant(W), T.constant(b))).data), W)
    assert_grad_close(Wp.grad, num, rtol=1e-6, label="affine W")


def test_softmax_gradient_tight():
    x = RNG.normal(size=(2, 5))
    probe = RNG.normal(size=(2, 5))
    xp = T.parameter(x)
    T.backward(_project(T.softmax(xp), probe))
    num = numeric_grad(lambda: float(_project(T.softmax(T.constant(x)), probe).data), x)
    assert_grad_close(xp.grad, num, rtol=1e-6, label="softmax")


# ------------------------------------------------------------------ checkpoints

def test_checkpoint_bit_exact(tmp_path):
    arrays = {
        "a": RNG.normal(size=(3, 4, 5)),
        "b": np.array([np.pi, -0.0, 1e-310, np.finfo(np.float64).max]),
        "scalar": np.array(2.5),
        "t": T.parameter(RNG.normal(size=(2, 2))),
    }
    path = tmp_path / "x.ckpt"
    T.save_arrays(path, arrays, meta={"k": [1, 2]})
    meta, back = T.load_arrays(path)
    assert meta == {"k": [1, 2]}
    assert list(back) == list(arrays)
    for name, arr in arrays.items():
        raw = arr.data if isinstance(arr, T.Tensor) else arr
        assert back[name].shape == raw.shape
        assert back[name].tobytes() == np.asarray(raw, dtype="<f8").tobytes()
    T.save_arrays(tmp_path / "y.ckpt", back, meta=meta)
    assert path.read_bytes() == (tmp_path / "y.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="not a checkpoint"):
        T.load_arrays(bad)
    good = tmp_path / "good.ckpt"
    T.save_arrays(good, {"w": np.ones(100)})
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        T.load_arrays(good)
