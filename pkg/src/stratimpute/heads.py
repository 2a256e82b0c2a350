"""Task heads: softmax mortality classifier and the imputation readout.

The imputation head conditions on patient-specific context built from the
last/next observed values and their gaps, embedded per feature and mixed
through narrow blockwise MLPs.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .encoder import FeatureWiseScalarFFN, uniform_init_


class MortalityHead(nn.Module):
    """Dropout followed by a 2-logit softmax layer."""

    def __init__(self, in_dim: int, dropout: float = 0.1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, 2))
        self.bias = nn.Parameter(torch.empty(2))
        self.dropout = dropout

    def reset_parameters(self, generator=None):
        uniform_init_(self.weight, self.weight.shape[0], generator)
        uniform_init_(self.bias, self.weight.shape[0], generator)

    def forward(self, e_star: torch.Tensor):
        """Returns (probs, log_probs), rows summing to 1."""
        h = F.dropout(e_star, p=self.dropout, training=self.training)
        logits = h @ self.weight + self.bias
        return torch.softmax(logits, dim=1), torch.log_softmax(logits, dim=1)


class BlockwiseMixMLP(nn.Module):
    """Per-block d -> hidden -> d map, shared across features, no biases.

    Bias-free so the enclosing context encoder's additive bias is the only
    constant term.
    """

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.w_in = nn.Parameter(torch.empty(hidden, dim))
        self.w_out = nn.Parameter(torch.empty(dim, hidden))

    def reset_parameters(self, generator=None):
        uniform_init_(self.w_in, self.w_in.shape[1], generator)
        uniform_init_(self.w_out, self.w_out.shape[1], generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, N, d, T)
        h = torch.relu(torch.einsum("hd,bndt->bnht", self.w_in, x))
        return torch.einsum("dh,bnht->bndt", self.w_out, h)


class NeighborContextEncoder(nn.Module):
    """Embed last/next observed values and gaps into a contextual sequence.

    Output width is 2*N*d: the mixed last-value block concatenated with the
    mixed next-value block along the feature axis.
    """

    def __init__(self, n_features: int, dim: int, hidden: int = 28,
                 time_scale: float = 1.0):
        super().__init__()
        self.n_features = n_features
        self.dim = dim
        self.time_scale = time_scale
        self.v_last_ffn = FeatureWiseScalarFFN(n_features, dim)
        self.t_last_ffn = FeatureWiseScalarFFN(n_features, dim)
        self.v_next_ffn = FeatureWiseScalarFFN(n_features, dim)
        self.t_next_ffn = FeatureWiseScalarFFN(n_features, dim)
        self.mix_v_last = BlockwiseMixMLP(dim, hidden)
        self.mix_t_last = BlockwiseMixMLP(dim, hidden)
        self.mix_v_next = BlockwiseMixMLP(dim, hidden)
        self.mix_t_next = BlockwiseMixMLP(dim, hidden)
        self.bias_last = nn.Parameter(torch.empty(dim))
        self.bias_next = nn.Parameter(torch.empty(dim))

    def reset_parameters(self, generator=None):
        for mod in (self.v_last_ffn, self.t_last_ffn, self.v_next_ffn,
                    self.t_next_ffn, self.mix_v_last, self.mix_t_last,
                    self.mix_v_next, self.mix_t_next):
            mod.reset_parameters(generator)
        uniform_init_(self.bias_last, self.dim, generator)
        uniform_init_(self.bias_next, self.dim, generator)

    def forward(self, v_last, delta_last, v_next, delta_next) -> torch.Tensor:
        """All inputs (B, N, T); returns (B, 2*N*d, T)."""
        shapes = {x.shape for x in (v_last, delta_last, v_next, delta_next)}
        if len(shapes) != 1:
            raise ValueError(f"neighbor tensors disagree in shape: {sorted(shapes)}")
        last = (
            self.mix_v_last(self.v_last_ffn(v_last))
            + self.mix_t_last(self.t_last_ffn(delta_last * self.time_scale))
            + self.bias_last[None, None, :, None]
        )
        nxt = (
            self.mix_v_next(self.v_next_ffn(v_next))
            + self.mix_t_next(self.t_next_ffn(delta_next * self.time_scale))
            + self.bias_next[None, None, :, None]
        )
        B, N, d, T = last.shape
        return torch.cat([last.reshape(B, N * d, T), nxt.reshape(B, N * d, T)], dim=1)


class ImputationHead(nn.Module):
    """Per-step linear readout from fused and contextual sequences to values."""

    def __init__(self, fused_width: int, context_width: int, n_features: int):
        super().__init__()
        self.w_fused = nn.Parameter(torch.empty(fused_width, n_features))
        self.w_context = nn.Parameter(torch.empty(context_width, n_features))
        self.bias = nn.Parameter(torch.empty(n_features))

    def reset_parameters(self, generator=None):
        uniform_init_(self.w_fused, self.w_fused.shape[0], generator)
        uniform_init_(self.w_context, self.w_context.shape[0], generator)
        uniform_init_(self.bias, self.w_fused.shape[0], generator)

    def forward(self, e_star_seq: torch.Tensor, e_context: torch.Tensor) -> torch.Tensor:
        """e_star_seq: (B, W, T), e_context: (B, C, T) -> v_hat (B, N, T)."""
        return (
            torch.einsum("bwt,wn->bnt", e_star_seq, self.w_fused)
            + torch.einsum("bct,cn->bnt", e_context, self.w_context)
            + self.bias[None, :, None]
        )
