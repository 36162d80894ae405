"""Adaptive attention-in-attention.

A stack of dual-axis attention blocks (time branch + frequency branch, each
entering through a zero-initialized learnable gate) feeds a hierarchical
fusion stage that softmax-weights the intermediate outputs; a final residual
comes from the stack input.  The complex flavor derives attention weights
from a magnitude proxy sqrt(r^2 + i^2 + eps) and applies them to both parts,
leaving phase untouched inside the attention.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .complex_nn import split_complex, merge_complex


def _axis_attention(q, k, v):
    """Scaled-dot-product attention over the last-but-one axis.

    q, k: (N, L, D); v: (N, L, Dv).  Softmax is max-stabilized.
    """
    scores = torch.matmul(q, k.transpose(-1, -2)) / (q.shape[-1] ** 0.5)
    weights = F.softmax(scores - scores.amax(dim=-1, keepdim=True), dim=-1)
    return torch.matmul(weights, v)


class AxisAttention(nn.Module):
    """Single-head self-attention along the time or frequency axis.

    Q/K projections run at channels // 4 width through 1x1 convs; V and the
    output projection keep full width.
    """

    def __init__(self, channels, axis):
        super().__init__()
        if axis not in ("time", "freq"):
            raise ValueError(f"axis must be 'time' or 'freq', got {axis!r}")
        self.axis = axis
        qk = max(channels // 4, 1)
        self.q = nn.Conv2d(channels, qk, 1)
        # no key bias: softmax is invariant to a per-query constant shift
        self.k = nn.Conv2d(channels, qk, 1, bias=False)
        self.v = nn.Conv2d(channels, channels, 1)
        self.out = nn.Conv2d(channels, channels, 1)

    def _fold(self, x):
        # (B, C, T, F) -> (B*other, axis_len, C)
        if self.axis == "time":
            return x.permute(0, 3, 2, 1).flatten(0, 1)   # (B*F, T, C)
        return x.permute(0, 2, 3, 1).flatten(0, 1)       # (B*T, F, C)

    def _unfold(self, x, shape):
        b, _, t, f = shape
        if self.axis == "time":
            return x.reshape(b, f, t, -1).permute(0, 3, 2, 1)
        return x.reshape(b, t, f, -1).permute(0, 3, 1, 2)

    def forward(self, x):
        q = self._fold(self.q(x))
        k = self._fold(self.k(x))
        v = self._fold(self.v(x))
        att = self._unfold(_axis_attention(q, k, v), x.shape)
        return self.out(att)


class DualAxisAttentionBlock(nn.Module):
    """out = x + gate_t * time_attention(x) + gate_f * freq_attention(x).

    Gates start at zero, so the block is the identity map at initialization.
    """

    def __init__(self, channels):
        super().__init__()
        self.time_branch = AxisAttention(channels, "time")
        self.freq_branch = AxisAttention(channels, "freq")
        self.gate_t = nn.Parameter(torch.zeros(1))
        self.gate_f = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        return x + self.gate_t * self.time_branch(x) + self.gate_f * self.freq_branch(x)


class HierarchicalFusion(nn.Module):
    """Softmax-weighted fusion of the stack's intermediate outputs.

    Each branch map is summarized by global average pooling, pushed through a
    shared bottleneck MLP to one logit per branch, and the branch maps are
    combined with the resulting softmax weights.
    """

    def __init__(self, channels):
        super().__init__()
        hidden = max(channels // 4, 1)
        # no bias on the logit layer: softmax is invariant to a shared shift
        self.score = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 1, bias=False),
        )

    def branch_weights(self, branch_outputs):
        descriptors = torch.stack(
            [b.mean(dim=(2, 3)) for b in branch_outputs], dim=1)  # (B, n, C)
        logits = self.score(descriptors).squeeze(-1)              # (B, n)
        return F.softmax(logits - logits.amax(dim=1, keepdim=True), dim=1)

    def forward(self, branch_outputs):
        if len(branch_outputs) == 0:
            raise ValueError("need at least one branch output")
        shape = branch_outputs[0].shape
        for b in branch_outputs:
            if b.shape != shape:
                raise ValueError(f"branch shape mismatch: {b.shape} vs {shape}")
        w = self.branch_weights(branch_outputs)
        stacked = torch.stack(branch_outputs, dim=1)              # (B, n, C, T, F)
        return (w.view(*w.shape, 1, 1, 1) * stacked).sum(dim=1)


class AttentionStack(nn.Module):
    """n_blocks dual-axis blocks -> hierarchical fusion -> residual from input."""

    def __init__(self, channels, n_blocks=6):
        super().__init__()
        if n_blocks < 1:
            raise ValueError("need at least one attention block")
        self.blocks = nn.ModuleList(
            DualAxisAttentionBlock(channels) for _ in range(n_blocks))
        self.fusion = HierarchicalFusion(channels)

    def forward(self, x):
        h = x
        intermediates = []
        for block in self.blocks:
            h = block(h)
            intermediates.append(h)
        return self.fusion(intermediates) + x


class ComplexDualAxisAttentionBlock(nn.Module):
    """Dual-axis attention for complex maps via a real magnitude proxy.

    The attention branches run on sqrt(r^2 + i^2 + eps); their outputs are
    applied additively (through the zero-initialized gates) to both parts,
    scaled by each part's share of the proxy, so weights stay real.
    """

    def __init__(self, complex_channels, eps=1e-8):
        super().__init__()
        self.eps = eps
        self.time_branch = AxisAttention(complex_channels, "time")
        self.freq_branch = AxisAttention(complex_channels, "freq")
        self.gate_t = nn.Parameter(torch.zeros(1))
        self.gate_f = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        r, i = split_complex(x)
        proxy = torch.sqrt(r * r + i * i + self.eps)
        att = self.gate_t * self.time_branch(proxy) + self.gate_f * self.freq_branch(proxy)
        # multiplicative on magnitude: parts scale by (1 + att/proxy) jointly
        scale = 1.0 + att / proxy
        return merge_complex(r * scale, i * scale)


class ComplexAttentionStack(nn.Module):
    """Complex flavor: fusion weights come from magnitude-proxy descriptors."""

    def __init__(self, complex_channels, n_blocks=6, eps=1e-8):
        super().__init__()
        if n_blocks < 1:
            raise ValueError("need at least one attention block")
        self.eps = eps
        self.blocks = nn.ModuleList(
            ComplexDualAxisAttentionBlock(complex_channels, eps)
            for _ in range(n_blocks))
        self.fusion = HierarchicalFusion(complex_channels)

    def forward(self, x):
        h = x
        proxies = []
        intermediates = []
        for block in self.blocks:
            h = block(h)
            r, i = split_complex(h)
            proxies.append(torch.sqrt(r * r + i * i + self.eps))
            intermediates.append(h)
        w = self.fusion.branch_weights(proxies)
        stacked = torch.stack(intermediates, dim=1)
        fused = (w.view(*w.shape, 1, 1, 1) * stacked).sum(dim=1)
        return fused + x
