"""Multi-scale spectrally-normalized discriminators.

Each scale gets its own 6-block conv stack (channels 32, 32, 64, 64, 128, 1;
kernel (3, 5) except a final (1, 1); stride (1, 2) throughout).  Scale k
sees the 2x2 average-pooled version of scale k-1's input.  Scores are raw
(least-squares convention, no sigmoid).
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

DISC_CHANNELS = (32, 32, 64, 64, 128, 1)


class SpectralNorm(nn.Module):
    """Weight wrapper dividing by the leading singular value.

    One power iteration per forward pass with persisted vectors; a short
    warmup at construction so the very first estimate is already close.
    """

    def __init__(self, module, n_warmup=15, eps=1e-12):
        super().__init__()
        self.module = module
        self.eps = eps
        w = module.weight
        mat = w.detach().flatten(1)
        u = F.normalize(torch.randn(mat.shape[0], dtype=mat.dtype), dim=0, eps=eps)
        v = F.normalize(torch.randn(mat.shape[1], dtype=mat.dtype), dim=0, eps=eps)
        self.register_buffer("u", u)
        self.register_buffer("v", v)
        for _ in range(n_warmup):
            self._power_iteration(mat)

    @torch.no_grad()
    def _power_iteration(self, mat):
        self.v = F.normalize(mat.t() @ self.u, dim=0, eps=self.eps)
        self.u = F.normalize(mat @ self.v, dim=0, eps=self.eps)

    def forward(self, x):
        w = self.module.weight
        mat = w.flatten(1)
        if self.training:
            self._power_iteration(mat.detach())
        sigma = torch.dot(self.u, mat @ self.v)
        w_sn = w / sigma
        return F.conv2d(x, w_sn, self.module.bias,
                        stride=self.module.stride, padding=self.module.padding)

    def normalized_weight(self):
        mat = self.module.weight.detach().flatten(1)
        sigma = torch.dot(self.u, mat @ self.v)
        return self.module.weight.detach() / sigma


class _ScaleStack(nn.Module):
    def __init__(self, in_channels, channels=DISC_CHANNELS):
        super().__init__()
        layers = []
        in_ch = in_channels
        for idx, out_ch in enumerate(channels):
            last = idx == len(channels) - 1
            kernel = (1, 1) if last else (3, 5)
            padding = (0, 0) if last else (1, 2)
            conv = nn.Conv2d(in_ch, out_ch, kernel, stride=(1, 2), padding=padding)
            layers.append(SpectralNorm(conv))
            if not last:
                layers.append(nn.PReLU(out_ch))
            in_ch = out_ch
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """Independent conv stacks over the input and its pooled copies."""

    def __init__(self, in_channels, n_scales=2, channels=DISC_CHANNELS):
        super().__init__()
        if n_scales < 1:
            raise ValueError("need at least one scale")
        self.in_channels = in_channels
        self.stacks = nn.ModuleList(
            _ScaleStack(in_channels, channels) for _ in range(n_scales))

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"expected (B, {self.in_channels}, T, F) input, got {tuple(x.shape)}")
        scores = []
        for stack in self.stacks:
            scores.append(stack(x))
            x = F.avg_pool2d(x, 2)
        return scores

    def spectral_norm_modules(self):
        return [m for m in self.modules() if isinstance(m, SpectralNorm)]


def magnitude_discriminator(n_scales=2, channels=DISC_CHANNELS):
    return MultiScaleDiscriminator(1, n_scales, channels)


def complex_discriminator(n_scales=2, channels=DISC_CHANNELS):
    # RI components concatenated along the channel axis
    return MultiScaleDiscriminator(2, n_scales, channels)
