import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankvocab import rng as R
from rankvocab import tensor as T
from rankvocab.errors import InputError, NonFiniteError, ShapeError
from rankvocab.gradcheck import grad_check, grad_check_report, rel_error
from rankvocab.tensor import Tape, Tensor


def grads_of(f, *params):
    with Tape() as tape:
        out = f()
        tape.backward(out)
    return out, [p.grad for p in params]


def test_conv_example():
    x = T.tensor([[1.0], [2.0], [3.0]])
    w = T.tensor([[[1.0], [1.0]]])
    out = T.conv1d_valid(x, w, T.tensor([0.0]))
    np.testing.assert_array_equal(out.data, [[3.0], [5.0]])


def test_conv_matches_direct_loop():
    gen = np.random.default_rng(0)
    x, w, b = gen.normal(size=(7, 3)), gen.normal(size=(4, 3, 3)), gen.normal(size=4)
    out = T.conv1d_valid(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.array([[b[f] + np.sum(x[t:t + 3] * w[f]) for f in range(4)] for t in range(5)])
    np.testing.assert_allclose(out, ref, rtol=1e-13)


def test_relu_and_its_subgradient_at_zero():
    x = T.tensor([-1.0, 0.0, 2.0], requires_grad=True)
    out, (g,) = grads_of(lambda: T.sum(T.relu(x)), x)
    assert out.item() == 2.0
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_softmax_is_stable():
    s = T.softmax(T.tensor([1000.0, 0.0])).data
    np.testing.assert_allclose(s, [1.0, 0.0], atol=1e-300)
    assert np.isfinite(s).all()


def test_cross_entropy_uniform_logits():
    assert T.cross_entropy(T.tensor([0.0, 0.0, 0.0, 0.0]), 2).item() == pytest.approx(np.log(4), abs=1e-15)


def test_reused_input_accumulates():
    x = T.tensor([3.0], requires_grad=True)
    _, (g,) = grads_of(lambda: T.sum(T.add(x, x)), x)
    np.testing.assert_array_equal(g, [2.0])


def test_each_record_visited_once():
    x = T.tensor([0.5, -0.2], requires_grad=True)
    with Tape() as tape:
        y = T.tanh(x)
        z = T.add(y, y)
        loss = T.sum(T.add(z, y))
        tape.backward(loss)
    assert tape.visits == len(tape.records) == 4
    np.testing.assert_allclose(x.grad, 3 * (1 - np.tanh(x.data) ** 2))


def test_ops_outside_tape_are_not_recorded():
    x = T.tensor([1.0], requires_grad=True)
    y = T.tanh(x)
    assert T.active_tape() is None
    with Tape() as tape:
        T.tanh(T.tensor([1.0]))
    assert tape.records == []
    assert y.data.shape == (1,)


def test_unused_param_gets_zero_grad():
    a = T.tensor([1.0, 2.0], requires_grad=True)
    b = T.tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        T.tanh(b)
        loss = T.sum(a)
        tape.backward(loss)
    np.testing.assert_array_equal(b.grad, [0.0, 0.0])


def test_max_over_time_ties_route_to_first():
    x = T.tensor([[1.0, 5.0], [1.0, 2.0], [0.0, 5.0]], requires_grad=True)
    out, (g,) = grads_of(lambda: T.sum(T.max_over_time(x)), x)
    assert out.item() == 6.0
    np.testing.assert_array_equal(g, [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])


def test_gradcheck_skips_max_tie():
    x = T.tensor([[1.0, 0.3], [1.0, -0.4]], requires_grad=True)
    rep = grad_check_report(lambda: T.sum(T.max_over_time(x)), [x])
    assert rep.skipped >= 1
    assert rep.max_rel_error < 1e-6


def test_gradcheck_detects_wrong_gradient(monkeypatch):
    x = T.tensor([0.3, -0.8], requires_grad=True)

    def bad_tanh(t):
        y = np.tanh(t.data)
        return T._result("tanh", y, (t,), lambda g: (g * (1.0 - y),))

    assert grad_check(lambda: T.sum(bad_tanh(x)), [x]) > 1e-2


def test_gradcheck_rejects_nondeterministic_function():
    x = T.tensor([0.3], requires_grad=True)
    gen = np.random.default_rng(0)
    with pytest.raises(InputError):
        grad_check(lambda: T.sum(T.scale(x, gen.normal())), [x])


def test_rel_error_floor():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1e-9, 0.0) == pytest.approx(1e-9 / 1e-8)
    assert rel_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6 / 2, rel=1e-5)


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.add(T.tensor([1.0]), T.tensor([1.0, 2.0]))
    with pytest.raises(ShapeError):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        T.conv1d_valid(T.tensor(np.ones((2, 3))), T.tensor(np.ones((1, 3, 3))), T.tensor([0.0]))
    with pytest.raises(ShapeError):
        T.softmax(T.tensor(np.ones((2, 2))))
    with pytest.raises(ShapeError):
        with Tape() as tape:
            x = T.tensor([1.0, 2.0], requires_grad=True)
            tape.backward(T.tanh(x))
    with pytest.raises(InputError):
        T.embedding(T.tensor(np.ones((3, 2))), [0, 3])


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_is_an_assertion():
    with pytest.raises(NonFiniteError):
        T.scale(T.tensor([1e308]), 10.0)
    assert issubclass(NonFiniteError, AssertionError)


def test_embedding_scatter_adds():
    table = T.tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    out, (g,) = grads_of(lambda: T.sum(T.embedding(table, [1, 1, 3])), table)
    assert out.item() == 2 + 3 + 2 + 3 + 6 + 7
    np.testing.assert_array_equal(g, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_mean_of_scalars():
    xs = [T.tensor(v, requires_grad=True) for v in (1.0, 2.0, 6.0)]
    out, gs = grads_of(lambda: T.mean(xs), *xs)
    assert out.item() == 3.0
    assert all(g == pytest.approx(1 / 3) for g in gs)


def test_spatial_dropout_eval_and_zero_p_return_input():
    x = T.tensor(np.ones((3, 4)))
    assert T.spatial_dropout(x, 0.5, "eval", None) is x
    assert T.spatial_dropout(x, 0.0, "train", R.stream(0)) is x
    with pytest.raises(InputError):
        T.spatial_dropout(x, 1.0, "train", R.stream(0))


def test_spatial_dropout_masks_columns():
    x = T.tensor(np.random.default_rng(1).normal(size=(5, 40)))
    y = T.spatial_dropout(x, 0.5, "train", R.stream(3)).data
    dropped = np.all(y == 0.0, axis=0)
    assert 0 < dropped.sum() < 40
    np.testing.assert_allclose(y[:, ~dropped], 2.0 * x.data[:, ~dropped])


def test_dump_tsv(tmp_path):
    T.dump_tsv(T.tensor([[0.5, 1.0], [2.0, -3.0]]), tmp_path / "t.tsv")
    assert (tmp_path / "t.tsv").read_text() == "0.5\t1.0\n2.0\t-3.0\n"


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_gradcheck_random_shapes(m, k, n, seed):
    gen = np.random.default_rng(seed)
    a = Tensor(gen.normal(size=(m, k)), True)
    b = Tensor(gen.normal(size=(k, n)), True)
    assert grad_check(lambda: T.sum(T.tanh(T.scale(T.matmul(a, b), 0.3))), [a, b]) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_conv_pool_gradcheck_random_shapes(h, extra, dim, n_f, seed):
    gen = np.random.default_rng(seed)
    x = Tensor(gen.normal(size=(h + extra, dim)), True)
    w = Tensor(gen.normal(size=(n_f, h, dim)), True)
    b = Tensor(gen.normal(size=n_f), True)
    f = lambda: T.sum(T.tanh(T.scale(T.max_over_time(T.relu(T.conv1d_valid(x, w, b))), 0.1)))  # noqa: E731
    assert grad_check(f, [x, w, b]) < 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_softmax_ce_gradcheck_random(n, seed):
    gen = np.random.default_rng(seed)
    z = Tensor(gen.normal(scale=2.0, size=n), True)
    label = int(gen.integers(n))
    assert grad_check(lambda: T.cross_entropy(z, label), [z]) < 1e-5
    assert abs(T.softmax(z).data.sum() - 1.0) < 1e-12


def test_conv_output_shape_at_default_sizes():
    out = T.conv1d_valid(Tensor(np.zeros((70, 100))), Tensor(np.zeros((128, 3, 100))), Tensor(np.zeros(128)))
    assert out.shape == (68, 128)
