"""Primitive-level tests: forward values, tape mechanics, finite-difference
gradients, and the TBJT serialization format."""

import gc
import io
import weakref

import numpy as np
import pytest

import tbje.tensor as T
from tbje.errors import ContractError, NumericError, ShapeError
from tbje.gradcheck import central_difference, relative_error
from tbje.rng import make_rng

GRAD_TOL = 1e-5


def rand(rng, *shape):
    return rng.uniform(-2.0, 2.0, size=shape)


def fd_check(build, tensors, tol=GRAD_TOL, h=1e-5):
    """Compare taped gradients of scalar build(*tensors) to central differences."""
    for t in tensors:
        t.grad = None
    with T.Tape() as tape:
        loss = build()
        tape.backward(loss)
    for t in tensors:
        taped = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            fd = central_difference(lambda: build().item(), flat, idx, h=h)
            assert relative_error(taped.reshape(-1)[idx], fd) < tol


# ---------------------------------------------------------------------------
# forward values from first principles
# ---------------------------------------------------------------------------

def test_matmul_identity():
    eye = T.Tensor(np.eye(2))
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(eye, a).data, a.data)


def test_matmul_zero():
    a = T.Tensor([[1.0, 0.0], [0.0, 1.0]])
    z = T.Tensor([[0.0], [0.0]])
    assert np.array_equal(T.matmul(a, z).data, np.zeros((2, 1)))


def test_matmul_shape_error_names_both_shapes():
    a = T.Tensor(np.zeros((3, 4)))
    b = T.Tensor(np.zeros((5, 2)))
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(5, 2\)"):
        T.matmul(a, b)


def test_softmax_symmetry():
    out = T.softmax(T.Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=0, rtol=0)


def test_softmax_no_overflow():
    out = T.softmax(T.Tensor([1000.0, 0.0]))
    assert np.isfinite(out.data).all()
    assert out.data[0] == pytest.approx(1.0)
    assert out.data[1] < 1e-300


def test_softmax_matches_high_precision_reference():
    # exp-normalize of [1,2,3] evaluated with mpmath-free extended precision:
    # np.longdouble carries >= 63 mantissa bits, plenty for a 1e-15 check.
    x = np.array([1.0, 2.0, 3.0])
    hi = np.exp(np.longdouble(x))
    expected = (hi / hi.sum()).astype(np.float64)
    out = T.softmax(T.Tensor(x))
    assert np.allclose(out.data, expected, rtol=1e-15)


def test_softmax_rows_sum_to_one_and_positive():
    rng = make_rng(7, "softmax-rows")
    x = T.Tensor(rand(rng, 20, 9))
    out = T.softmax(x, axis=-1)
    assert np.all(out.data > 0)
    assert np.abs(out.data.sum(axis=-1) - 1.0).max() < 1e-12


def test_softmax_rejects_nan():
    with pytest.raises(NumericError):
        T.softmax(T.Tensor([np.nan, 0.0]))


def test_softmax_all_masked_slice_rejected():
    with pytest.raises(NumericError):
        T.softmax(T.Tensor([-np.inf, -np.inf]))


def test_layer_norm_constant_row_is_zero():
    x = T.Tensor([[5.0, 5.0, 5.0, 5.0]])
    out = T.layer_norm(x, T.Tensor(np.ones(4)), T.Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_standardized_row_unchanged():
    x = T.Tensor([[1.0, -1.0]])
    out = T.layer_norm(x, T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)))
    assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-9)


def test_layer_norm_moments_invariant():
    rng = make_rng(3, "ln-moments")
    x = T.Tensor(rand(rng, 50, 16))
    out = T.layer_norm(x, T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)))
    row_var = x.data.var(axis=-1)
    mean = out.data.mean(axis=-1)
    var = out.data.var(axis=-1)
    keep = row_var >= 1e-3
    assert np.abs(mean).max() < 1e-9
    assert np.abs(var[keep] - 1.0).max() < 1e-6


def test_layer_norm_shape_check():
    with pytest.raises(ShapeError):
        T.layer_norm(T.Tensor(np.zeros((2, 4))), T.Tensor(np.ones(3)),
                     T.Tensor(np.zeros(3)))


def test_dropout_eval_is_identity_object():
    x = T.Tensor([[1.0, 2.0]])
    assert T.dropout(x, 0.5, None, training=False) is x


def test_dropout_train_masks_and_rescales():
    rng = make_rng(11, "dropout")
    x = T.Tensor(np.ones((200, 50)))
    out = T.dropout(x, 0.3, rng, training=True)
    vals = np.unique(out.data)
    assert set(np.round(vals, 12)) <= {0.0, round(1 / 0.7, 12)}
    # keep fraction concentrates near 1-p
    assert abs((out.data != 0).mean() - 0.7) < 0.02


def test_dropout_seed_reproducible():
    x = T.Tensor(np.ones((10, 10)))
    a = T.dropout(x, 0.4, make_rng(5, "d"), training=True)
    b = T.dropout(x, 0.4, make_rng(5, "d"), training=True)
    assert np.array_equal(a.data, b.data)


def test_masked_fill_blocks_gradient():
    x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    keep = np.array([[True, False, True], [False, True, True]])
    with T.Tape() as tape:
        out = T.masked_fill(x, keep, -np.inf)
        loss = T.tsum(T.softmax(out, axis=-1))
        tape.backward(loss)
    assert np.isneginf(out.data[~keep]).all()
    assert np.array_equal(x.grad[~keep], np.zeros(2))


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones():
    w = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(w)
        tape.backward(loss)
    assert np.array_equal(w.grad, np.ones(3))


def test_backward_quadratic_analytic():
    w = T.Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(T.mul(w, w))
        tape.backward(loss)
    assert np.array_equal(w.grad, [2.0, 4.0, 6.0])


def test_backward_requires_scalar():
    w = T.Tensor([1.0, 2.0], requires_grad=True)
    with T.Tape() as tape:
        out = T.mul(w, w)
        with pytest.raises(ContractError):
            tape.backward(out)


def test_backward_twice_is_error():
    w = T.Tensor([1.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(w)
        tape.backward(loss)
        with pytest.raises(ContractError):
            tape.backward(loss)


def test_tape_replays_in_reverse_execution_order():
    order = []
    w = T.Tensor([1.0], requires_grad=True)
    with T.Tape() as tape:
        a = T.scale(w, 2.0)
        b = T.scale(a, 3.0)
        c = T.tsum(b)
        # tag each record's vjp with a probe
        for i, (out, inputs, vjp) in enumerate(tape._records):
            tape._records[i] = (out, inputs,
                                (lambda f, k: lambda g: (order.append(k), f(g)))(vjp, i))
        tape.backward(c)
    assert order == [2, 1, 0]
    assert w.grad[0] == 6.0


def test_tape_clear_frees_intermediates():
    w = T.Tensor([1.0, 2.0], requires_grad=True)
    tape = T.Tape()
    with tape:
        mid = T.mul(w, w)
        T.tsum(mid)
    ref = weakref.ref(mid)
    del mid
    tape.clear()
    gc.collect()
    assert len(tape) == 0
    assert ref() is None


def test_no_tape_means_no_recording():
    w = T.Tensor([1.0], requires_grad=True)
    out = T.scale(w, 2.0)
    assert out.requires_grad
    tape = T.Tape()
    with tape:
        pass
    assert len(tape) == 0


def test_grad_accumulates_over_reuse():
    w = T.Tensor([3.0], requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(T.add(T.mul(w, w), w))  # w^2 + w -> 2w + 1 = 7
        tape.backward(loss)
    assert w.grad[0] == 7.0


def test_gradients_deterministic_bit_exact():
    def run():
        rng = make_rng(42, "det")
        a = T.Tensor(rand(rng, 4, 5), requires_grad=True)
        b = T.Tensor(rand(rng, 5, 3), requires_grad=True)
        with T.Tape() as tape:
            out = T.softmax(T.matmul(a, b), axis=-1)
            loss = T.tmean(T.mul(out, out))
            tape.backward(loss)
        return a.grad.copy(), b.grad.copy()

    ga1, gb1 = run()
    ga2, gb2 = run()
    assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


# ---------------------------------------------------------------------------
# finite-difference gradient contracts, one per primitive
# ---------------------------------------------------------------------------

def test_grad_matmul_against_ones_oracle():
    # d sum(a@b) / da == ones(m,n) @ b^T
    rng = make_rng(1, "mm")
    a = T.Tensor(rand(rng, 3, 4), requires_grad=True)
    b = T.Tensor(rand(rng, 4, 2), requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(T.matmul(a, b))
        tape.backward(loss)
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-12)
    fd_check(lambda: T.tsum(T.matmul(a, b)), [a, b])


def test_grad_matmul_batched():
    rng = make_rng(2, "mmb")
    a = T.Tensor(rand(rng, 2, 3, 4), requires_grad=True)
    b = T.Tensor(rand(rng, 4, 5), requires_grad=True)
    fd_check(lambda: T.tmean(T.mul(m := T.matmul(a, b), m)), [a, b])


@pytest.mark.parametrize("op", [
    lambda a, b: T.add(a, b),
    lambda a, b: T.sub(a, b),
    lambda a, b: T.mul(a, b),
])
def test_grad_binary_broadcasting(op):
    rng = make_rng(3, "bin")
    a = T.Tensor(rand(rng, 4, 3), requires_grad=True)
    b = T.Tensor(rand(rng, 3), requires_grad=True)
    fd_check(lambda: T.tsum(T.mul(o := op(a, b), o)), [a, b])


def test_grad_scale_transpose_slice_concat():
    rng = make_rng(4, "move")
    a = T.Tensor(rand(rng, 3, 4), requires_grad=True)
    b = T.Tensor(rand(rng, 3, 2), requires_grad=True)

    def build():
        joined = T.concat([T.scale(a, 1.7), b], axis=-1)
        piece = T.slice_last(joined, 1, 5)
        return T.tsum(T.mul(piece, T.transpose(T.transpose(piece))))

    fd_check(build, [a, b])


def test_grad_reductions():
    rng = make_rng(5, "red")
    a = T.Tensor(rand(rng, 4, 5), requires_grad=True)
    fd_check(lambda: T.tsum(T.mul(s := T.tsum(a, axis=1), s)), [a])
    fd_check(lambda: T.tsum(T.mul(m := T.tmean(a, axis=0), m)), [a])
    fd_check(lambda: T.tmean(T.mul(a, a)), [a])


@pytest.mark.parametrize("unary", [T.log, T.sigmoid, T.log_sigmoid, T.relu,
                                   lambda t: T.softmax(t, axis=-1),
                                   lambda t: T.log_softmax(t, axis=-1)])
def test_grad_unary(unary):
    rng = make_rng(6, "un")
    x = rand(rng, 3, 6)
    if unary is T.log:
        x = np.abs(x) + 0.5  # keep log in its domain
    a = T.Tensor(x, requires_grad=True)
    fd_check(lambda: T.tsum(T.mul(u := unary(a), u)), [a])


def test_grad_layer_norm():
    rng = make_rng(7, "ln")
    x = T.Tensor(rand(rng, 4, 8), requires_grad=True)
    gain = T.Tensor(rand(rng, 8), requires_grad=True)
    bias = T.Tensor(rand(rng, 8), requires_grad=True)
    fd_check(lambda: T.tsum(T.mul(o := T.layer_norm(x, gain, bias), o)),
             [x, gain, bias])


def test_grad_dropout_is_scaled_mask():
    x = T.Tensor(np.ones((6, 6)), requires_grad=True)
    with T.Tape() as tape:
        out = T.dropout(x, 0.25, make_rng(9, "dg"), training=True)
        tape.backward(T.tsum(out))
    expected = (T.dropout(x, 0.25, make_rng(9, "dg"), training=True).data != 0)
    assert np.array_equal(x.grad, expected / 0.75)


def test_grad_masked_fill_softmax_chain():
    rng = make_rng(8, "mf")
    a = T.Tensor(rand(rng, 3, 5), requires_grad=True)
    keep = np.array([True, True, False, True, False])

    def build():
        filled = T.masked_fill(a, keep, -np.inf)
        return T.tsum(T.mul(s := T.softmax(filled, axis=-1), s))

    fd_check(build, [a])


def test_grad_log_sigmoid_extreme_logits_stable():
    z = T.Tensor(np.array([-500.0, -40.0, 0.0, 40.0, 500.0]), requires_grad=True)
    with T.Tape() as tape:
        loss = T.tsum(T.log_sigmoid(z))
        tape.backward(loss)
    assert np.isfinite(loss.data).all()
    assert np.isfinite(z.grad).all()


# ---------------------------------------------------------------------------
# TBJT serialization
# ---------------------------------------------------------------------------

def test_tensor_roundtrip_bit_exact(tmp_path):
    rng = make_rng(10, "ser")
    arr = rand(rng, 3, 4, 2)
    path = tmp_path / "t.tbjt"
    T.save_array(path, arr)
    back = T.load_array(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_tensor_wire_layout():
    fh = io.BytesIO()
    T.write_array(fh, np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = fh.getvalue()
    assert raw[:4] == b"TBJT"
    assert raw[4] == 2                      # rank
    assert raw[5:13] == (2).to_bytes(4, "little") * 2
    assert np.frombuffer(raw[13:], dtype="<f8").tolist() == [1.0, 2.0, 3.0, 4.0]


def test_tensor_bad_magic_rejected():
    with pytest.raises(ContractError):
        T.read_array(io.BytesIO(b"NOPE" + bytes(16)))
