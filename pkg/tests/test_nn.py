import math
import zlib

import numpy as np
import pytest

from oracles import numeric_grad, rel_error
from semg2v.nn import tensor as T
from semg2v.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from semg2v.nn.layers import Conv1d, LayerNorm, Linear, MultiHeadAttention, ParamStore, sinusoidal_encoding
from semg2v.nn.optim import adam_step, clip_grad_norm, global_grad_norm
from semg2v.nn.tensor import NonFiniteError, Tensor


def gradcheck(fn, arrays, seed=0):
    """Relative error between autograd and finite differences over all inputs."""
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = fn(*[Tensor(a) for a in arrays]).shape
    weights = rng.normal(size=out_shape)

    def scalar():
        return float((fn(*[Tensor(a) for a in arrays]).data * weights).sum())

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    (fn(*leaves) * weights).sum().backward()
    # joint normalisation: some inputs (attention key bias) have an exactly zero gradient
    analytic = np.concatenate([leaf.grad.ravel() for leaf in leaves])
    numeric = np.concatenate([numeric_grad(scalar, arr).ravel() for arr in arrays])
    return rel_error(analytic, numeric)


SHAPES = [(1, 3, 4), (2, 5, 3), (3, 2, 6)]


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name,op", [
    ("add", lambda a, b: a + b),
    ("sub", lambda a, b: a - b),
    ("mul", lambda a, b: a * b),
    ("mul_scaled", lambda a, b: (a * b) / 3.0),
])
def test_binary_ops(shape, name, op):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    assert gradcheck(op, [rng.normal(size=shape), rng.normal(size=shape)]) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
def test_broadcast_ops(shape):
    rng = np.random.default_rng(1)
    assert gradcheck(lambda a, b: a * b + b, [rng.normal(size=shape), rng.normal(size=shape[-1:])]) < 1e-4
    assert gradcheck(lambda a, b: a - b, [rng.normal(size=shape), rng.normal(size=(shape[0], 1, 1))]) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("name,op", [
    ("relu", T.relu),
    ("tanh", T.tanh),
    ("abs", T.abs_),
    ("square", T.square),
    ("softmax", lambda a: T.softmax(a, -1)),
    ("softmax0", lambda a: T.softmax(a, 0)),
    ("sum", lambda a: a.sum(axis=1)),
    ("mean", lambda a: a.mean(axis=(0, 2), keepdims=True)),
    ("reshape", lambda a: a.reshape(-1)),
    ("transpose", lambda a: a.transpose(2, 0, 1)),
    ("neg", lambda a: -a),
])
def test_unary_ops(shape, name, op):
    x = np.random.default_rng(2).normal(size=shape)
    if name in ("relu", "abs"):
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # stay clear of the kink
    assert gradcheck(op, [x]) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
def test_matmul(shape):
    rng = np.random.default_rng(3)
    assert gradcheck(lambda a, b: a @ b, [rng.normal(size=shape), rng.normal(size=(shape[-1], 4))]) < 1e-4
    batched = (shape[0], shape[-1], 2)
    assert gradcheck(lambda a, b: a @ b, [rng.normal(size=shape), rng.normal(size=batched)]) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
def test_layer_norm_grad(shape):
    rng = np.random.default_rng(4)
    arrays = [rng.normal(size=shape), rng.normal(size=shape[-1:]), rng.normal(size=shape[-1:])]
    assert gradcheck(T.layer_norm, arrays) < 1e-4


@pytest.mark.parametrize("shape,k,cout", [((1, 4, 2), 1, 3), ((2, 5, 3), 3, 2), ((2, 6, 2), 5, 4)])
def test_conv1d_grad(shape, k, cout):
    rng = np.random.default_rng(5)
    arrays = [rng.normal(size=shape), rng.normal(size=(k, shape[-1], cout)), rng.normal(size=cout)]
    assert gradcheck(T.conv1d, arrays) < 1e-6


@pytest.mark.parametrize("B,N,M", [(1, 3, 4), (2, 4, 6), (3, 2, 2)])
def test_gather_rows_grad(B, N, M):
    rng = np.random.default_rng(6)
    index = rng.integers(0, N, size=(B, M))
    assert gradcheck(lambda x: T.gather_rows(x, index), [rng.normal(size=(B, N, 3))]) < 1e-4


@pytest.mark.parametrize("shape", [(4, 5), (2, 3, 7), (1, 6, 140)])
def test_cross_entropy_grad(shape):
    rng = np.random.default_rng(7)
    ids = rng.integers(0, shape[-1], size=shape[:-1])
    mask = (rng.random(shape[:-1]) > 0.3).astype(float)
    mask.flat[0] = 1.0
    assert gradcheck(lambda z: T.cross_entropy(z, ids, mask), [rng.normal(size=shape)]) < 1e-4


@pytest.mark.parametrize("shape", SHAPES)
def test_masked_losses_grad(shape):
    rng = np.random.default_rng(8)
    target = rng.normal(size=shape)
    mask = (rng.random(shape[:2]) > 0.3).astype(float)[..., None]
    assert gradcheck(lambda a: T.mae(a, target, mask), [rng.normal(size=shape)]) < 1e-4
    assert gradcheck(lambda a: T.mse(a, target, mask), [rng.normal(size=shape)]) < 1e-4


# -- linear ------------------------------------------------------------------

def test_linear_identity():
    store = ParamStore()
    lin = Linear(store, "l", 3, 3)
    lin.weight.data = np.eye(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(lin(Tensor(x)).data, x)


def test_linear_scalar():
    store = ParamStore()
    lin = Linear(store, "l", 1, 1)
    lin.weight.data[:] = 3.0
    lin.bias.data[:] = 1.0
    x = Tensor([[2.0]], requires_grad=True)
    y = lin(x)
    assert y.data.item() == 7.0
    y.sum().backward()
    assert x.grad.item() == 3.0


def test_linear_random_grad():
    rng = np.random.default_rng(9)
    arrays = [rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)]
    assert gradcheck(lambda x, w, b: x @ w + b, arrays) < 1e-6


# -- attention ---------------------------------------------------------------

def test_attention_single_position():
    store = ParamStore(0)
    mha = MultiHeadAttention(store, "a", 4, 2)
    x = np.random.default_rng(0).normal(size=(1, 1, 4))
    out = mha(Tensor(x)).data
    # softmax over one key is 1, so output = (x Wv + bv) Wo + bo
    v = x @ mha.v.weight.data + mha.v.bias.data
    assert np.allclose(out, v @ mha.out.weight.data + mha.out.bias.data, atol=1e-14)


def test_attention_duplicate_rows():
    store = ParamStore(0)
    mha = MultiHeadAttention(store, "a", 4, 2)
    row = np.random.default_rng(1).normal(size=4)
    out = mha(Tensor(np.tile(row, (1, 3, 1)))).data[0]
    assert np.allclose(out[0], out[1]) and np.allclose(out[1], out[2])


@pytest.mark.parametrize("B,L,dim,heads", [(1, 3, 4, 2), (2, 4, 6, 3), (1, 2, 4, 1)])
def test_attention_grad(B, L, dim, heads):
    store = ParamStore(2)
    mha = MultiHeadAttention(store, "a", dim, heads)
    rng = np.random.default_rng(3)
    mask = np.ones((B, L))
    mask[0, -1] = 0.0
    layers = [mha.q, mha.k, mha.v, mha.out]
    init = [rng.normal(size=(B, L, dim))] + [a for lin in layers for a in (lin.weight.data, lin.bias.data)]

    def fn(x, *params):
        for k, lin in enumerate(layers):
            lin.weight, lin.bias = params[2 * k], params[2 * k + 1]
        return mha(x, mask)

    tol = 1e-6 if (B, L) == (1, 3) else 1e-4
    assert gradcheck(fn, init) < tol


def test_attention_masks_padding():
    store = ParamStore(0)
    mha = MultiHeadAttention(store, "a", 4, 2)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 3, 4))
    padded = np.concatenate([x, rng.normal(size=(1, 2, 4)) * 100], axis=1)
    short = mha(Tensor(x)).data
    long = mha(Tensor(padded), np.array([[1, 1, 1, 0, 0]])).data
    assert np.max(np.abs(long[:, :3] - short)) < 1e-12


def test_attention_bad_heads():
    with pytest.raises(ValueError):
        MultiHeadAttention(ParamStore(), "a", 6, 4)


# -- conv --------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 5, 3))
    w = np.eye(3)[None]
    assert np.array_equal(T.conv1d(Tensor(x), Tensor(w)).data, x)


def test_conv_averaging_boundaries():
    x = np.full((1, 6, 1), 3.0)
    w = np.full((3, 1, 1), 1.0 / 3.0)
    out = T.conv1d(Tensor(x), Tensor(w)).data[0, :, 0]
    assert np.allclose(out[1:-1], 3.0)
    assert np.allclose([out[0], out[-1]], 3.0 * 2 / 3)


def test_conv_even_kernel():
    with pytest.raises(ValueError):
        Conv1d(ParamStore(), "c", 2, 2, 4)
    with pytest.raises(ValueError):
        T.conv1d(Tensor(np.zeros((1, 3, 2))), Tensor(np.zeros((2, 2, 2))))


# -- norms, softmax, dropout -------------------------------------------------

def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(5, 7, 11)) * 30
    y = T.softmax(Tensor(x)).data
    assert np.max(np.abs(y.sum(-1) - 1.0)) < 1e-12


def test_layer_norm_statistics():
    store = ParamStore()
    ln = LayerNorm(store, "n", 16)
    x = np.random.default_rng(0).normal(size=(3, 5, 16)) * 7 + 2
    y = ln(Tensor(x)).data
    assert np.max(np.abs(y.mean(-1))) < 1e-10
    assert np.max(np.abs(y.var(-1) - 1.0)) < 1e-8


def test_dropout_eval_identity_and_mean():
    rng = np.random.default_rng(0)
    x = Tensor(np.ones((200, 500)))
    assert T.dropout(x, 0.5, rng, training=False) is x
    y = T.dropout(x, 0.3, rng, training=True).data
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(np.round(y, 12))) <= {0.0, round(1 / 0.7, 12)}


# -- losses ------------------------------------------------------------------

def test_loss_values():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert T.mae(x, x).data == 0 and T.mse(x, x).data == 0
    assert T.mae(Tensor([0.0]), Tensor([3.0])).data == 3.0
    assert T.mse(Tensor([0.0]), Tensor([3.0])).data == 9.0


def test_cross_entropy_uniform():
    ce = T.cross_entropy(Tensor(np.zeros((6, 140))), np.arange(6) * 20)
    assert ce.data == pytest.approx(-math.log(1 / 140), abs=1e-12)
    assert ce.data == pytest.approx(4.9416, abs=1e-4)


def test_cross_entropy_errors():
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 5))), [0, 5])
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 5))), [0, 1, 2])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_trips():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, 2.0]) * np.inf
    with pytest.raises(NonFiniteError):
        T.square(Tensor([1e200]))


# -- adam ----------------------------------------------------------------------

def test_adam_zero_gradient():
    store = ParamStore()
    p = store.add("w", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adam_step(store, 0.1)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert store.step == 1 and p.grad is None


def test_adam_quadratic():
    store = ParamStore()
    w = store.add("w", np.array(1.0))
    # oracle: scalar recurrence written out by hand
    m = v = 0.0
    ref = 1.0
    for t in range(1, 201):
        g = 2 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.98 * v + 0.02 * g * g
        ref -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.98 ** t)) + 1e-9)
        w.grad = 2 * w.data
        adam_step(store, 0.1)
    assert abs(w.data) < 1e-2
    assert w.data == pytest.approx(ref, abs=1e-12)


def test_adam_identical_params():
    store = ParamStore()
    a, b = store.add("a", np.array([0.5])), store.add("b", np.array([0.5]))
    for _ in range(5):
        a.grad = b.grad = np.array([0.3])
        adam_step(store, 0.01)
    assert a.data == b.data


def test_adam_missing_grad():
    store = ParamStore()
    store.add("a", np.zeros(1))
    with pytest.raises(ValueError):
        adam_step(store, 0.1)


def test_clip_grad_norm():
    store = ParamStore()
    a, b = store.add("a", np.zeros(2)), store.add("b", np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm(store, 1.0) == 5.0
    assert global_grad_norm(store) == pytest.approx(1.0)
    assert np.allclose(a.grad, [0.6, 0.0])


# -- store, encoding, checkpoints ---------------------------------------------

def test_store_order_and_duplicates():
    store = ParamStore(0)
    Linear(store, "x", 2, 3)
    Linear(store, "y", 3, 1)
    assert [n for n, _ in store] == ["x.weight", "x.bias", "y.weight", "y.bias"]
    with pytest.raises(KeyError):
        store.add("x.bias", np.zeros(3))


def test_seeded_init_deterministic():
    a, b = ParamStore(5), ParamStore(5)
    Linear(a, "l", 4, 4)
    Linear(b, "l", 4, 4)
    assert a["l.weight"].data.tobytes() == b["l.weight"].data.tobytes()


def test_sinusoidal_encoding():
    pe = sinusoidal_encoding(10, 8)
    assert np.array_equal(pe[0], np.tile([0.0, 1.0], 4))
    assert pe[3, 2] == pytest.approx(math.sin(3 / 10000 ** (2 / 8)))


def test_checkpoint_roundtrip(tmp_path):
    state = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    save_checkpoint(tmp_path / "c.ckpt", state, {"step": 3, "config_hash": "abc"})
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"step": 3, "config_hash": "abc"}
    assert all(np.array_equal(back[k], state[k]) for k in state)
    (tmp_path / "bad.ckpt").write_bytes(b"not an archive")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
