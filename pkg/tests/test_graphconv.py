import numpy as np
import pytest

from collabmesh import autodiff as ad
from collabmesh.autodiff import Tensor
from collabmesh.graphconv import (AttentionGraphConv, StaticGraphConv,
                                  face_adjacency, neighborhood)


def leaky(x, s=0.2):
    return np.where(x > 0, x, s * x)


def attention_oracle(verts, conv, head):
    """Per-pair double-loop evaluation of the attention formula."""
    w = conv.proj.value
    a = conv.attn.value[head]
    n = len(verts)
    logits = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            pair = np.concatenate([w @ verts[i], w @ verts[j]])
            logits[i, j] = leaky(a @ pair, conv.leaky_slope)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def agc_oracle(verts, conv, history):
    """Scalar-by-scalar evaluation of one convolution step."""
    n = len(verts)
    tau = conv.threshold(n)
    projected = verts @ conv.proj.value.T
    msg = np.zeros((n, conv.hidden))
    for k in range(conv.heads):
        alpha = attention_oracle(verts, conv, k)
        for i in range(n):
            for j in range(n):
                if alpha[i, j] > tau:
                    msg[i] += alpha[i, j] * projected[j]
    pre = msg / conv.heads + history
    mu = pre.mean(axis=1, keepdims=True)
    var = ((pre - mu) ** 2).mean(axis=1, keepdims=True)
    xhat = (pre - mu) / np.sqrt(var + 1e-5)
    return xhat * conv.ln_gain.value + conv.ln_bias.value


def test_uniform_attention_when_proj_zero():
    conv = AttentionGraphConv(seed=0, hidden=8)
    conv.proj.value[:] = 0.0
    alpha = conv.attention(Tensor(np.random.default_rng(0).normal(size=(6, 3))), 0)
    assert np.allclose(alpha.value, 1.0 / 6)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(1)
    conv = AttentionGraphConv(seed=1, hidden=8)
    for _ in range(5):
        alpha = conv.attention(Tensor(rng.normal(size=(9, 3))), rng.integers(3))
        assert np.allclose(alpha.value.sum(axis=-1), 1.0, atol=1e-9)
        assert (alpha.value >= 0).all() and (alpha.value <= 1).all()


def test_attention_permutation_equivariance():
    rng = np.random.default_rng(2)
    conv = AttentionGraphConv(seed=2, hidden=8)
    verts = rng.normal(size=(7, 3))
    perm = rng.permutation(7)
    base = conv.attention(Tensor(verts), 1).value
    permuted = conv.attention(Tensor(verts[perm]), 1).value
    assert np.allclose(permuted, base[np.ix_(perm, perm)], atol=1e-12)


def test_attention_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    conv = AttentionGraphConv(seed=3, hidden=6)
    verts = rng.normal(size=(5, 3))
    for head in range(conv.heads):
        alpha = conv.attention(Tensor(verts), head).value
        assert np.allclose(alpha, attention_oracle(verts, conv, head), atol=1e-10)


def test_attention_needs_two_vertices():
    conv = AttentionGraphConv(seed=0)
    with pytest.raises(ValueError):
        conv.attention(Tensor(np.zeros((1, 3))), 0)


def test_neighborhood_uniform_empty():
    alpha = np.full((4, 4), 0.25)
    assert all(len(n) == 0 for n in neighborhood(alpha, 0.5))


def test_neighborhood_dominant_singleton():
    alpha = np.full((3, 3), 0.05)
    alpha[0, 2] = 0.9
    hoods = neighborhood(alpha, 0.5)
    assert list(hoods[0]) == [2] and len(hoods[1]) == 0


def test_neighborhood_strict_inequality():
    alpha = np.full((4, 4), 0.25)
    assert all(len(n) == 0 for n in neighborhood(alpha, 0.25))


def test_agc_empty_neighborhood_is_layernorm_of_history():
    rng = np.random.default_rng(4)
    conv = AttentionGraphConv(seed=4, hidden=8, tau=0.999, tau_mode="absolute")
    conv.proj.value[:] = 0.0  # uniform attention, all below 0.999
    h = Tensor(rng.normal(size=(5, 8)))
    h_new, _ = conv.forward(Tensor(rng.normal(size=(5, 3))), h)
    expected = ad.layer_norm(h, gain=conv.ln_gain, bias=conv.ln_bias).value
    assert np.allclose(h_new.value, expected, atol=1e-12)


def test_agc_matches_stepwise_oracle():
    rng = np.random.default_rng(5)
    conv = AttentionGraphConv(seed=5, hidden=6, tau=1.0, tau_mode="relative")
    verts = rng.normal(size=(3, 3))
    h = rng.normal(size=(3, 6))
    # tau = 1/N lies below uniform rows, so neighborhoods are non-empty
    h_new, _ = conv.forward(Tensor(verts), Tensor(h))
    assert np.allclose(h_new.value, agc_oracle(verts, conv, h), atol=1e-10)


def test_agc_history_row_count_mismatch():
    conv = AttentionGraphConv(seed=0, hidden=8)
    with pytest.raises(ad.ShapeError):
        conv.forward(Tensor(np.zeros((5, 3))), Tensor(np.zeros((4, 8))))


def test_agc_phi_permutation_invariant():
    rng = np.random.default_rng(6)
    conv = AttentionGraphConv(seed=6, hidden=8)
    verts = rng.normal(size=(10, 3))
    h = rng.normal(size=(10, 8))
    perm = rng.permutation(10)
    _, phi = conv.forward(Tensor(verts), Tensor(h))
    _, phi_p = conv.forward(Tensor(verts[perm]), Tensor(h[perm]))
    assert np.allclose(phi.value, phi_p.value, atol=1e-9)


def test_agc_repeated_iterations_bounded():
    rng = np.random.default_rng(7)
    conv = AttentionGraphConv(seed=7, hidden=8, tau=0.999, tau_mode="absolute")
    conv.proj.value[:] = 0.0
    h = conv.init_history(6)
    verts = Tensor(rng.normal(size=(6, 3)))
    for _ in range(12):
        h, phi = conv.forward(verts, h)
        assert np.isfinite(h.value).all() and np.abs(h.value).max() < 50
        assert np.isfinite(phi.value).all()


def test_agc_global_receptive_field():
    # gradient of h_i flows from any v_j in N(i), regardless of mesh distance
    rng = np.random.default_rng(8)
    conv = AttentionGraphConv(seed=8, hidden=6, tau=0.5, tau_mode="relative")
    verts = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    h_new, _ = conv.forward(verts, conv.init_history(6))
    alpha = conv.attention(Tensor(verts.value), 0).value
    i = 0
    ad.square(h_new[i]).sum().backward()
    for j in np.nonzero(alpha[i] > conv.threshold(6))[0]:
        assert np.abs(verts.grad[j]).max() > 0


def test_agc_gradients():
    rng = np.random.default_rng(9)
    conv = AttentionGraphConv(seed=9, hidden=6, heads=2)
    verts0 = rng.normal(size=(5, 3))
    w = rng.normal(size=512)

    def wrt_vertices(v):
        _, phi = conv.forward(v, conv.init_history(5))
        return (phi * Tensor(w)).sum()

    def wrt_proj(p):
        saved = conv.proj
        conv.proj = p
        try:
            _, phi = conv.forward(Tensor(verts0), conv.init_history(5))
            return (phi * Tensor(w)).sum()
        finally:
            conv.proj = saved

    def wrt_attn(a):
        saved = conv.attn
        conv.attn = a
        try:
            _, phi = conv.forward(Tensor(verts0), conv.init_history(5))
            return (phi * Tensor(w)).sum()
        finally:
            conv.attn = saved

    assert ad.finite_difference_check(wrt_vertices, verts0) < 1e-5
    assert ad.finite_difference_check(wrt_proj, conv.proj.value.copy()) < 1e-5
    assert ad.finite_difference_check(wrt_attn, conv.attn.value.copy()) < 1e-5


def test_agc_batched_matches_single():
    rng = np.random.default_rng(10)
    conv = AttentionGraphConv(seed=10, hidden=8)
    verts = rng.normal(size=(3, 7, 3))
    h = rng.normal(size=(3, 7, 8))
    bh, bphi = conv.forward(Tensor(verts), Tensor(h))
    for i in range(3):
        sh, sphi = conv.forward(Tensor(verts[i]), Tensor(h[i]))
        assert np.allclose(bh.value[i], sh.value, atol=1e-12)
        assert np.allclose(bphi.value[i], sphi.value, atol=1e-12)


def test_tau_validation():
    with pytest.raises(ValueError):
        AttentionGraphConv(tau=1.5, tau_mode="absolute")
    with pytest.raises(ValueError):
        AttentionGraphConv(tau_mode="topk")


# -- static GCN baseline -------------------------------------------------------

def test_gcn_zero_weights_zero_phi():
    faces = np.array([[0, 1, 2]])
    gcn = StaticGraphConv(faces, 3, seed=0, hidden=4)
    gcn.w1.value[:] = 0.0
    gcn.fc_b.value[:] = 0.0
    _, phi = gcn.forward(Tensor(np.random.default_rng(0).normal(size=(3, 3))))
    assert np.allclose(phi.value, 0.0)


def test_gcn_single_triangle_oracle():
    faces = np.array([[0, 1, 2]])
    # fully connected 3-graph with self loops: Ahat entries all 1/3
    assert np.allclose(face_adjacency(3, faces), np.full((3, 3), 1.0 / 3), atol=1e-12)
    gcn = StaticGraphConv(faces, 3, seed=1, hidden=4)
    verts = np.random.default_rng(1).normal(size=(3, 3))
    _, phi = gcn.forward(Tensor(verts))
    pre = np.maximum(np.full((3, 3), 1.0 / 3) @ (verts @ gcn.w1.value), 0)
    expected = pre.mean(axis=0) @ gcn.fc_w.value + gcn.fc_b.value
    assert np.allclose(phi.value, expected, atol=1e-12)


def test_gcn_permutation_invariant_phi():
    rng = np.random.default_rng(2)
    faces = np.array([[0, 1, 2], [1, 2, 3], [2, 3, 4]])
    verts = rng.normal(size=(5, 3))
    gcn = StaticGraphConv(faces, 5, seed=2, hidden=4)
    perm = np.array([3, 0, 4, 1, 2])
    inv = np.argsort(perm)
    pfaces = inv[faces]
    gcn_p = StaticGraphConv(pfaces, 5, seed=2, hidden=4)
    _, phi = gcn.forward(Tensor(verts))
    _, phi_p = gcn_p.forward(Tensor(verts[perm]))
    assert np.allclose(phi.value, phi_p.value, atol=1e-9)


def test_gcn_rejects_bad_faces():
    with pytest.raises(ValueError):
        StaticGraphConv(np.array([[0, 1, 9]]), 3)


def test_gcn_gradients():
    rng = np.random.default_rng(3)
    faces = np.array([[0, 1, 2], [1, 2, 3]])
    gcn = StaticGraphConv(faces, 4, seed=3, hidden=4)
    w = rng.normal(size=512)

    def f(v):
        _, phi = gcn.forward(v)
        return (phi * Tensor(w)).sum()

    assert ad.finite_difference_check(f, rng.normal(size=(4, 3)) + 0.1) < 1e-5
