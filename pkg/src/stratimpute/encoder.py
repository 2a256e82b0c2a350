"""Personalized patient representation learning.

Values and time intervals pass through per-feature feed-forward embedders,
a cross-attention block weighs the embedding rows against a learned feature
table, and attention pooling over time collapses the sequence into one
vector per patient. All modules are plain tensor maps: deterministic given
parameters, no internal state.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def uniform_init_(tensor: torch.Tensor, fan_in: int, generator=None):
    """Zero-mean uniform init scaled by 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)
    return tensor


class FeatureWiseScalarFFN(nn.Module):
    """Independent scalar-to-vector maps, one per feature, applied pointwise in t.

    Channel i sees only variable i, so permuting time columns of the input
    permutes the output columns identically.
    """

    def __init__(self, n_features: int, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.n_features = n_features
        self.dim = dim
        self.w1 = nn.Parameter(torch.empty(n_features, hidden))
        self.b1 = nn.Parameter(torch.empty(n_features, hidden))
        self.w2 = nn.Parameter(torch.empty(n_features, hidden, dim))
        self.b2 = nn.Parameter(torch.empty(n_features, dim))

    def reset_parameters(self, generator=None):
        uniform_init_(self.w1, 1, generator)
        uniform_init_(self.b1, 1, generator)
        uniform_init_(self.w2, self.w2.shape[1], generator)
        uniform_init_(self.b2, self.w2.shape[1], generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, N, T) -> (B, N, d, T)
        if torch.isnan(x).any():
            raise ValueError("NaN input to feature-wise FFN")
        h = F.relu(x.unsqueeze(-1) * self.w1[None, :, None, :] + self.b1[None, :, None, :])
        out = torch.einsum("bnth,nhd->bntd", h, self.w2) + self.b2[None, :, None, :]
        return out.permute(0, 1, 3, 2)


class TripletEmbedder(nn.Module):
    """Feature table plus value/time-interval embeddings for every (i, t).

    ``time_scale`` rescales raw hour-valued gaps before embedding so the
    inputs stay O(1) regardless of the grid horizon.
    """

    def __init__(self, n_features: int, dim: int, time_scale: float = 1.0):
        super().__init__()
        self.n_features = n_features
        self.dim = dim
        self.time_scale = time_scale
        self.feature_table = nn.Parameter(torch.empty(n_features, dim))
        self.value_ffn = FeatureWiseScalarFFN(n_features, dim)
        self.time_ffn = FeatureWiseScalarFFN(n_features, dim)

    def reset_parameters(self, generator=None):
        uniform_init_(self.feature_table, self.dim, generator)
        self.value_ffn.reset_parameters(generator)
        self.time_ffn.reset_parameters(generator)

    def forward(self, v: torch.Tensor, delta: torch.Tensor):
        """v, delta: (B, N, T). Returns (e_f, e_v, e_t).

        e_f is the flattened feature table, shape (N*d); e_v and e_t are
        (B, N, d, T) blocks, one d-slab per variable.
        """
        e_v = self.value_ffn(v)
        e_t = self.time_ffn(delta * self.time_scale)
        return self.feature_table.reshape(-1), e_v, e_t


class CrossAttention(nn.Module):
    """Score embedding rows against the feature table and reweight them.

    The mixed embedding is a shared blockwise linear combination of the
    value and time embeddings. Its scaled dot product with the broadcast
    feature table gives a square score matrix; a learned full-width 1-D
    convolution reduces each row to a scalar, and the softmax over rows
    becomes a per-row weight broadcast across time.
    """

    def __init__(self, n_features: int, dim: int):
        super().__init__()
        self.n_features = n_features
        self.dim = dim
        self.w_value = nn.Parameter(torch.empty(dim, dim))
        self.w_time = nn.Parameter(torch.empty(dim, dim))
        self.bias = nn.Parameter(torch.empty(dim))
        rows = n_features * dim
        self.conv_kernel = nn.Parameter(torch.empty(rows))
        self.conv_bias = nn.Parameter(torch.zeros(1))

    def reset_parameters(self, generator=None):
        uniform_init_(self.w_value, self.dim, generator)
        uniform_init_(self.w_time, self.dim, generator)
        uniform_init_(self.bias, self.dim, generator)
        uniform_init_(self.conv_kernel, self.conv_kernel.numel(), generator)
        with torch.no_grad():
            self.conv_bias.zero_()

    def mix(self, e_v: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
        """Blockwise W_v e_v + W_t e_t + bias, flattened to (B, N*d, T)."""
        mixed = (
            torch.einsum("ij,bnjt->bnit", self.w_value, e_v)
            + torch.einsum("ij,bnjt->bnit", self.w_time, e_t)
            + self.bias[None, None, :, None]
        )
        B, N, d, T = mixed.shape
        return mixed.reshape(B, N * d, T)

    def forward(self, e_f: torch.Tensor, e_v: torch.Tensor, e_t: torch.Tensor):
        """Returns (e, alpha) with e: (B, N*d, T), alpha: (B, N*d)."""
        mixed = self.mix(e_v, e_t)
        B, rows, T = mixed.shape
        if rows != e_f.numel():
            raise ValueError(
                f"feature table width {e_f.numel()} does not match embedding rows {rows}"
            )
        e_f_mat = e_f.unsqueeze(-1).expand(rows, T)
        scores_matrix = torch.einsum("ft,bgt->bfg", e_f_mat, mixed) / math.sqrt(self.dim)
        row_scores = torch.einsum("bfg,g->bf", scores_matrix, self.conv_kernel) + self.conv_bias
        alpha = torch.softmax(row_scores, dim=1)
        return alpha.unsqueeze(-1) * mixed, alpha


class TemporalAttentionPool(nn.Module):
    """Softmax attention over time steps; output is a convex combination."""

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.weight = nn.Parameter(torch.empty(width))
        self.bias = nn.Parameter(torch.zeros(1))

    def reset_parameters(self, generator=None):
        uniform_init_(self.weight, self.width, generator)
        with torch.no_grad():
            self.bias.zero_()

    def forward(self, e: torch.Tensor):
        """e: (B, width, T). Returns (pooled (B, width), beta (B, T))."""
        if e.shape[-1] == 0:
            raise ValueError("cannot pool an empty time axis")
        scores = torch.einsum("bft,f->bt", e, self.weight) + self.bias
        beta = torch.softmax(scores, dim=1)
        pooled = torch.einsum("bt,bft->bf", beta, e)
        return pooled, beta


class PatientEncoder(nn.Module):
    """Full per-patient encoder: triplet embedding, cross attention, pooling."""

    def __init__(self, n_features: int, dim: int, time_scale: float = 1.0):
        super().__init__()
        self.embedder = TripletEmbedder(n_features, dim, time_scale)
        self.cross = CrossAttention(n_features, dim)
        self.pool = TemporalAttentionPool(n_features * dim)

    def reset_parameters(self, generator=None):
        self.embedder.reset_parameters(generator)
        self.cross.reset_parameters(generator)
        self.pool.reset_parameters(generator)

    def forward(self, v: torch.Tensor, delta: torch.Tensor) -> dict:
        e_f, e_v, e_t = self.embedder(v, delta)
        e, alpha = self.cross(e_f, e_v, e_t)
        pooled, beta = self.pool(e)
        return {"e": e, "e_bar": pooled, "alpha": alpha, "beta": beta}
