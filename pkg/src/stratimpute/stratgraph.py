"""Batch-level patient similarity graph and neighbor aggregation.

A mini-batch of pooled patient representations is concatenated with an
encoded static vector, pairwise similarities form a dense adjacency, a
learnable threshold sparsifies it, a two-layer graph convolution aggregates
similar patients, and a normalized two-gate fusion blends each patient's
own representation with the neighborhood one.
"""

from __future__ import annotations

import torch
from torch import nn

from .encoder import uniform_init_

THRESHOLD_STEEPNESS = 50.0


class StaticEncoder(nn.Module):
    """Linear map from the one-hot demographics vector to a dense code."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(in_dim, out_dim))
        self.bias = nn.Parameter(torch.empty(out_dim))

    def reset_parameters(self, generator=None):
        uniform_init_(self.weight, self.weight.shape[0], generator)
        uniform_init_(self.bias, self.weight.shape[0], generator)

    def forward(self, x_base: torch.Tensor) -> torch.Tensor:
        return x_base @ self.weight + self.bias


def concat_static(pooled: torch.Tensor, e_base: torch.Tensor) -> torch.Tensor:
    """Append the static code to a pooled representation: (B, W) -> (B, W+dg)."""
    if pooled.shape[0] != e_base.shape[0]:
        raise ValueError(
            f"batch size mismatch: {pooled.shape[0]} pooled vs {e_base.shape[0]} static"
        )
    return torch.cat([pooled, e_base], dim=1)


def concat_static_sequence(e: torch.Tensor, e_base: torch.Tensor) -> torch.Tensor:
    """Sequence variant: broadcast the static code over time before concat."""
    if e.shape[0] != e_base.shape[0]:
        raise ValueError(
            f"batch size mismatch: {e.shape[0]} sequence vs {e_base.shape[0]} static"
        )
    T = e.shape[-1]
    expanded = e_base.unsqueeze(-1).expand(*e_base.shape, T)
    return torch.cat([e, expanded], dim=1)


def patient_similarity(e_prime: torch.Tensor, mode: str = "scaled-dot") -> torch.Tensor:
    """Pairwise similarity over the batch.

    ``scaled-dot`` divides the Gram matrix by the squared representation
    width; ``cosine`` uses unit-normalized dot products instead.
    """
    if e_prime.shape[0] < 2:
        raise ValueError("similarity graph needs a batch of at least 2 patients")
    if mode == "scaled-dot":
        width = e_prime.shape[1]
        return (e_prime @ e_prime.T) / float(width) ** 2
    if mode == "cosine":
        z = e_prime / e_prime.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return z @ z.T
    raise ValueError(f"unknown similarity mode {mode!r}")


def threshold_adjacency(lam: torch.Tensor, phi: torch.Tensor,
                        steepness: float = THRESHOLD_STEEPNESS) -> torch.Tensor:
    """Zero out similarities <= phi, keeping phi trainable.

    Forward pass applies the hard cutoff exactly. The backward pass routes
    a sigmoid-surrogate gradient to phi only; gradients w.r.t. the
    similarities themselves flow through the hard gate.
    """
    hard = (lam > phi).to(lam.dtype)
    if isinstance(phi, torch.Tensor) and phi.requires_grad:
        soft = torch.sigmoid(steepness * (lam.detach() - phi))
        gate = soft + (hard - soft).detach()
    else:
        gate = hard.detach()
    return lam * gate


def normalize_adjacency(lam_filtered: torch.Tensor, mode: str = "selfloop-rownorm",
                        zero_diag: bool = False) -> torch.Tensor:
    """Adjacency used by the graph convolution.

    ``selfloop-rownorm`` adds the identity and normalizes rows to sum to 1,
    so propagation stays bounded for any batch size and no row is empty.
    ``raw`` returns the filtered matrix untouched.
    """
    if zero_diag:
        lam_filtered = lam_filtered - torch.diag(torch.diagonal(lam_filtered))
    if mode == "raw":
        return lam_filtered
    if mode == "selfloop-rownorm":
        a = lam_filtered + torch.eye(
            lam_filtered.shape[0], dtype=lam_filtered.dtype, device=lam_filtered.device
        )
        return a / a.sum(dim=1, keepdim=True)
    raise ValueError(f"unknown gcn normalization {mode!r}")


class GraphConv(nn.Module):
    """Two bias-free graph convolution layers with ReLU activations."""

    def __init__(self, in_dim: int, hidden_dim: int = 34, out_dim: int = 55):
        super().__init__()
        self.w1 = nn.Parameter(torch.empty(in_dim, hidden_dim))
        self.w2 = nn.Parameter(torch.empty(hidden_dim, out_dim))

    def reset_parameters(self, generator=None):
        uniform_init_(self.w1, self.w1.shape[0], generator)
        uniform_init_(self.w2, self.w2.shape[0], generator)

    def forward(self, x: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
        """x: (B, W) or (B, W, T); a_hat: (B, B). Same leading layout out."""
        if x.dim() == 2:
            h = torch.relu(a_hat @ (x @ self.w1))
            return torch.relu(a_hat @ (h @ self.w2))
        if x.dim() == 3:
            h = torch.relu(torch.einsum("pq,qwt->pwt", a_hat, torch.einsum("bwt,wh->bht", x, self.w1)))
            return torch.relu(torch.einsum("pq,qwt->pwt", a_hat, torch.einsum("bht,ho->bot", h, self.w2)))
        raise ValueError(f"expected 2-D or 3-D input, got shape {tuple(x.shape)}")


class RepresentationFusion(nn.Module):
    """Blend self and neighbor representations with gates that sum to 1.

    The neighbor representation is first projected back to the self width.
    Both gates are sigmoid scores of a linear readout; dividing by their
    sum enforces gamma + eta = 1 exactly.
    """

    def __init__(self, self_width: int, neighbor_width: int):
        super().__init__()
        self.project = nn.Parameter(torch.empty(neighbor_width, self_width))
        self.w_self = nn.Parameter(torch.empty(self_width))
        self.b_self = nn.Parameter(torch.zeros(1))
        self.w_neighbor = nn.Parameter(torch.empty(self_width))
        self.b_neighbor = nn.Parameter(torch.zeros(1))

    def reset_parameters(self, generator=None):
        uniform_init_(self.project, self.project.shape[0], generator)
        uniform_init_(self.w_self, self.w_self.numel(), generator)
        uniform_init_(self.w_neighbor, self.w_neighbor.numel(), generator)
        with torch.no_grad():
            self.b_self.zero_()
            self.b_neighbor.zero_()

    def forward(self, e_self: torch.Tensor, e_neighbor_raw: torch.Tensor):
        """Pooled (B, W) or sequence (B, W, T) inputs.

        Returns (fused, gamma, eta); gamma/eta are (B,) or (B, T).
        """
        if e_self.dim() == 2:
            neighbor = e_neighbor_raw @ self.project
            g_raw = torch.sigmoid(e_self @ self.w_self + self.b_self)
            h_raw = torch.sigmoid(neighbor @ self.w_neighbor + self.b_neighbor)
            gamma = g_raw / (g_raw + h_raw)
            eta = 1.0 - gamma
            fused = gamma.unsqueeze(1) * e_self + eta.unsqueeze(1) * neighbor
            return fused, gamma, eta
        if e_self.dim() == 3:
            neighbor = torch.einsum("bht,hw->bwt", e_neighbor_raw, self.project)
            g_raw = torch.sigmoid(torch.einsum("bwt,w->bt", e_self, self.w_self) + self.b_self)
            h_raw = torch.sigmoid(torch.einsum("bwt,w->bt", neighbor, self.w_neighbor) + self.b_neighbor)
            gamma = g_raw / (g_raw + h_raw)
            eta = 1.0 - gamma
            fused = gamma.unsqueeze(1) * e_self + eta.unsqueeze(1) * neighbor
            return fused, gamma, eta
        raise ValueError(f"expected 2-D or 3-D input, got shape {tuple(e_self.shape)}")
