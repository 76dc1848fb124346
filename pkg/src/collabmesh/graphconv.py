"""Graph convolutions over mesh vertices.

AttentionGraphConv builds its aggregation neighborhood per step from
multi-head attention over *all* vertices (a global, dynamically constructed
neighborhood), keeps a residual per-vertex history normalized with LayerNorm,
and emits a 512-D transfer feature by mean-pooling plus an affine resize.

StaticGraphConv is the ablation baseline: one symmetric-normalized adjacency
propagation over the fixed face-derived edge graph.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

FEATURE_DIM = 512
DEFAULT_HEADS = 3
DEFAULT_HIDDEN = 64
LEAKY_SLOPE = 0.2


class AttentionGraphConv:
    """Attention-guided dynamic graph convolution with residual history.

    tau_mode 'absolute' thresholds attention at tau directly; 'relative'
    thresholds at tau/N (row-softmax over N vertices makes absolute 0.5
    nearly unattainable at mesh scale, so twice-uniform is the default).
    """

    def __init__(self, seed=0, hidden=DEFAULT_HIDDEN, heads=DEFAULT_HEADS,
                 out_dim=FEATURE_DIM, tau=2.0, tau_mode="relative",
                 leaky_slope=LEAKY_SLOPE, out_scale=1.0, attn_gain=1.0):
        if heads < 1 or hidden < 1:
            raise ValueError("heads and hidden width must be >= 1")
        if tau_mode not in ("relative", "absolute"):
            raise ValueError("tau_mode must be 'relative' or 'absolute'")
        if tau_mode == "absolute" and not 0.0 < tau < 1.0:
            raise ValueError("absolute tau must lie in (0, 1)")
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.heads = heads
        self.tau = tau
        self.tau_mode = tau_mode
        self.leaky_slope = leaky_slope
        self.proj = Tensor(rng.normal(size=(hidden, 3)) * np.sqrt(1.0 / 3), requires_grad=True)
        # attn_gain compensates for small vertex coordinates (meters): it
        # lifts initial attention logits to O(1) so rows are non-uniform and
        # thresholded neighborhoods receive gradient from the start
        self.attn = Tensor(rng.normal(size=(heads, 2 * hidden)) * np.sqrt(1.0 / hidden) * attn_gain,
                           requires_grad=True)
        self.ln_gain = Tensor(np.ones(hidden), requires_grad=True)
        self.ln_bias = Tensor(np.zeros(hidden), requires_grad=True)
        self.fc_w = Tensor(rng.normal(size=(hidden, out_dim)) * np.sqrt(1.0 / hidden) * out_scale,
                           requires_grad=True)
        self.fc_b = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        return [self.proj, self.attn, self.ln_gain, self.ln_bias, self.fc_w, self.fc_b]

    def threshold(self, n):
        return self.tau / n if self.tau_mode == "relative" else self.tau

    def init_history(self, n, batch=None):
        shape = (n, self.hidden) if batch is None else (batch, n, self.hidden)
        return Tensor(np.zeros(shape))

    def attention(self, vertices, head):
        """Row-stochastic attention matrix for one head; softmax over all N."""
        vertices = ad.as_tensor(vertices)
        n = vertices.shape[-2]
        if n < 2:
            raise ValueError("attention needs at least 2 vertices")
        projected = vertices @ self.proj.T                       # (...,N,F)
        left = projected @ self.attn[head, :self.hidden]         # (...,N)
        right = projected @ self.attn[head, self.hidden:]
        logits = left.reshape(left.shape + (1,)) + right.reshape(
            right.shape[:-1] + (1, right.shape[-1]))
        return ad.softmax(ad.leaky_relu(logits, self.leaky_slope), axis=-1)

    def forward(self, vertices, history):
        """One convolution step: (vertices, h^t) -> (h^{t+1}, phi).

        Aggregates attention-weighted projected vertex features over the
        thresholded neighborhood, averages heads, adds the history residual,
        layer-normalizes, then mean-pools and resizes to the feature width.
        """
        vertices = ad.as_tensor(vertices)
        n = vertices.shape[-2]
        if history.shape != vertices.shape[:-1] + (self.hidden,):
            raise ad.ShapeError("agc_forward(history)", history.shape,
                                vertices.shape[:-1] + (self.hidden,))
        tau = self.threshold(n)
        projected = vertices @ self.proj.T
        message = None
        for k in range(self.heads):
            alpha = self.attention(vertices, k)
            mask = (alpha.value > tau).astype(np.float64)        # selection, not a gradient path
            contrib = (alpha * Tensor(mask)) @ projected
            message = contrib if message is None else message + contrib
        h_new = ad.layer_norm(message * (1.0 / self.heads) + history,
                              gain=self.ln_gain, bias=self.ln_bias)
        phi = h_new.mean(axis=-2) @ self.fc_w + self.fc_b
        return h_new, phi


def neighborhood(alpha, tau):
    """Indices j with alpha_ij strictly above tau, per row."""
    alpha = np.asarray(alpha)
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    return [np.nonzero(row > tau)[0] for row in alpha]


def face_adjacency(n, faces):
    """Symmetric-normalized adjacency D^-1/2 (A+I) D^-1/2 from triangle faces."""
    faces = np.asarray(faces)
    if faces.size and faces.max() >= n:
        raise ValueError("face index out of range")
    adj = np.eye(n)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        adj[faces[:, i], faces[:, j]] = 1.0
        adj[faces[:, j], faces[:, i]] = 1.0
    dinv = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * dinv[:, None] * dinv[None, :]


class StaticGraphConv:
    """Fixed-neighborhood baseline: normalized adjacency, ReLU, pool, affine."""

    def __init__(self, faces, n_vertices, seed=0, hidden=DEFAULT_HIDDEN,
                 out_dim=FEATURE_DIM, out_scale=1.0):
        rng = np.random.default_rng(seed)
        self.adj = Tensor(face_adjacency(n_vertices, faces))
        self.hidden = hidden
        self.w1 = Tensor(rng.normal(size=(3, hidden)) * np.sqrt(1.0 / 3), requires_grad=True)
        self.fc_w = Tensor(rng.normal(size=(hidden, out_dim)) * np.sqrt(1.0 / hidden) * out_scale,
                           requires_grad=True)
        self.fc_b = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        return [self.w1, self.fc_w, self.fc_b]

    def init_history(self, n, batch=None):
        shape = (n, self.hidden) if batch is None else (batch, n, self.hidden)
        return Tensor(np.zeros(shape))

    def forward(self, vertices, history=None):
        vertices = ad.as_tensor(vertices)
        out = ad.relu(self.adj @ (vertices @ self.w1))
        phi = out.mean(axis=-2) @ self.fc_w + self.fc_b
        return history, phi
