import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stqa.autodiff import GradientTape, Tensor, finite_diff_check, ops
from stqa.errors import ContractError, ValidationError
from stqa.text import (PAD, UNK, QueryPack, Vocab, bilstm, embed, encode_query, init_bilstm,
                       init_embedding, load_pretrained, lstm, pad_candidates, tokenize)


def numpy_lstm(x, wx, wh, b):
    """Textbook per-step LSTM (gates i, f, g, o) for cross-checking the fused op."""
    h = np.zeros(wh.shape[0])
    c = np.zeros_like(h)
    out = []
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))  # noqa: E731
    for xt in x:
        z = xt @ wx + h @ wh + b
        i, f, g, o = np.split(z, 4)
        c = sig(f) * c + sig(i) * np.tanh(g)
        h = sig(o) * np.tanh(c)
        out.append(h)
    return np.array(out)


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("Where's the RED block, now?") == ["where's", "the", "red", "block", "now"]


def test_vocab_reserves_pad_and_unk(tmp_path):
    v = Vocab(["red", "blue"])
    assert v.stoi["<pad>"] == PAD and v.stoi["<unk>"] == UNK
    assert v.encode("red green") == [2, UNK]
    v.save(tmp_path / "vocab")
    assert Vocab.load(tmp_path / "vocab").itos == v.itos


def test_vocab_rejects_duplicates(tmp_path):
    (tmp_path / "v").write_text("<pad>\n<unk>\nred\nred\n")
    with pytest.raises(ValidationError):
        Vocab.load(tmp_path / "v")


def test_pad_row_is_zero_and_frozen():
    table = init_embedding(np.random.default_rng(0), 5, 3)
    out = embed([PAD, 2], table)
    assert not out.data[0].any()
    with GradientTape() as tape:
        loss = ops.sum(embed([PAD, 2], table))
    tape.backward(loss)
    assert not table.grad[PAD].any() and table.grad[2].tolist() == [1.0, 1.0, 1.0]


def test_length_one_sequence_shape():
    table = init_embedding(np.random.default_rng(0), 5, 3)
    assert embed([4], table).shape == (1, 3)


def test_repeated_ids_accumulate_gradient():
    table = init_embedding(np.random.default_rng(0), 5, 3)
    with GradientTape() as tape:
        loss = ops.sum(embed([3, 3], table))
    tape.backward(loss)
    assert table.grad[3].tolist() == [2.0, 2.0, 2.0]


def test_out_of_vocabulary_id():
    table = init_embedding(np.random.default_rng(0), 5, 3)
    with pytest.raises(ContractError):
        embed([5], table)
    with pytest.raises(ContractError):
        embed([], table)


def test_load_pretrained_overwrites_known_rows(tmp_path):
    v = Vocab(["red", "blue"])
    table = init_embedding(np.random.default_rng(0), len(v), 2)
    (tmp_path / "vec.txt").write_text("red 1.5 -2\nmissing 0 0\n<pad> 9 9\n")
    assert load_pretrained(table, v, tmp_path / "vec.txt") == 1
    assert table.data[v.stoi["red"]].tolist() == [1.5, -2.0]
    assert not table.data[PAD].any()
    (tmp_path / "bad.txt").write_text("red 1.0\n")
    with pytest.raises(ValidationError):
        load_pretrained(table, v, tmp_path / "bad.txt")


def test_lstm_matches_per_step_reference():
    rng = np.random.default_rng(1)
    x, wx, wh, b = rng.normal(size=(6, 3)), rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    np.testing.assert_allclose(lstm(x, wx, wh, b).data, numpy_lstm(x, wx, wh, b), rtol=1e-12, atol=1e-14)
    rev = lstm(x, wx, wh, b, reverse=True).data
    np.testing.assert_allclose(rev, numpy_lstm(x[::-1], wx, wh, b)[::-1], rtol=1e-12, atol=1e-14)


def test_lstm_batched_equals_loop():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, 2))
    wx, wh, b = rng.normal(size=(2, 12)), rng.normal(size=(3, 12)), rng.normal(size=12)
    batched = lstm(x, wx, wh, b).data
    for k in range(3):
        np.testing.assert_allclose(batched[k], lstm(x[k], wx, wh, b).data, rtol=1e-13)


def test_bilstm_zero_weights_give_zero_output():
    p = init_bilstm(np.random.default_rng(0), 3, 4, "e")
    for t in p.values():
        t.data[...] = 0.0
    out = bilstm(np.random.default_rng(1).normal(size=(5, 3)), p, "e")
    assert out.shape == (5, 8) and not out.data.any()


def test_bilstm_width_is_twice_embedding_when_hidden_equals_d():
    d = 6
    p = init_bilstm(np.random.default_rng(0), d, d, "e")
    assert bilstm(np.zeros((4, d)), p, "e").shape == (4, 2 * d)


def test_bilstm_gradcheck_n3_d4_h4():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    p = init_bilstm(rng, 4, 4, "e")
    for t in p.values():
        t.data = rng.uniform(-0.5, 0.5, size=t.shape)
    w = rng.normal(size=(3, 8))
    assert finite_diff_check(lambda: ops.sum(ops.mul(bilstm(x, p, "e"), w)), [x, *p.values()]) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6))
def test_bilstm_causality(seed, n):
    rng = np.random.default_rng(seed)
    h = 3
    p = init_bilstm(rng, 2, h, "e")
    x = rng.normal(size=(n, 2))
    t = int(rng.integers(n))
    y = x.copy()
    y[t] += rng.normal(size=2)
    a, b = bilstm(x, p, "e").data, bilstm(y, p, "e").data
    # forward half before t and backward half after t cannot see the change
    assert np.array_equal(a[:t, :h], b[:t, :h])
    assert np.array_equal(a[t + 1:, h:], b[t + 1:, h:])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_bilstm_finite_on_bounded_inputs(seed):
    rng = np.random.default_rng(seed)
    p = init_bilstm(rng, 3, 4, "e")
    for t in p.values():
        t.data = rng.normal(scale=5.0, size=t.shape)
    x = rng.uniform(-10, 10, size=(7, 3))
    assert np.all(np.isfinite(bilstm(x, p, "e").data))


def _encoder():
    rng = np.random.default_rng(4)
    return init_embedding(rng, 12, 4), init_bilstm(rng, 4, 3, "q")


def test_encode_query_arity_and_identical_answers():
    table, p = _encoder()
    pack = QueryPack((2, 3, 4), ((5, 6), (7,), (5, 6), (8, 9, 10), (11,)), 2)
    h_q, h_a = encode_query(pack, table, p, "q")
    assert h_q.shape == (3, 6) and len(h_a) == 5
    assert h_a[0].data.tobytes() == h_a[2].data.tobytes()


def test_encode_query_permutation():
    table, p = _encoder()
    answers = ((5, 6), (7,), (8, 9, 10))
    perm = [2, 0, 1]
    _, a = encode_query(QueryPack((2,), answers, 0), table, p, "q")
    _, b = encode_query(QueryPack((2,), tuple(answers[i] for i in perm), 0), table, p, "q")
    for i, j in enumerate(perm):
        assert b[i].data.tobytes() == a[j].data.tobytes()


def test_query_pack_validation():
    with pytest.raises(ContractError):
        QueryPack((), ((1,),), 0)
    with pytest.raises(ContractError):
        QueryPack((1,), ((1,), ()), 0)
    with pytest.raises(ContractError):
        QueryPack((1,), ((1,), (2,)), 2)


def test_pad_candidates_mask():
    feats = [Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3)))]
    stacked, mask = pad_candidates(feats)
    assert stacked.shape == (2, 4, 3)
    assert mask[:, 0].tolist() == [[True, True, False, False], [True] * 4]
    assert not stacked.data[0, 2:].any()
