"""Complex-valued neural building blocks.

A complex feature map with C complex channels is carried as a real tensor of
shape (B, 2C, T, F): the first C channels are real parts, the last C are
imaginary parts.
"""

import torch
import torch.nn as nn

EPS = 1e-8


def split_complex(x):
    c = x.shape[1]
    if c % 2 != 0:
        raise ValueError(f"complex tensor needs an even channel count, got {c}")
    return x[:, :c // 2], x[:, c // 2:]


def merge_complex(r, i):
    return torch.cat([r, i], dim=1)


def complex_magnitude(x, eps=EPS):
    r, i = split_complex(x)
    return torch.sqrt(r * r + i * i + eps)


class ComplexConv2d(nn.Module):
    """Complex 2D (de)convolution via four real convolutions.

    (a + jb) * (w_r + j w_i) = (a*w_r - b*w_i) + j(a*w_i + b*w_r)
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, bias=True, transpose=False):
        super().__init__()
        conv = nn.ConvTranspose2d if transpose else nn.Conv2d
        # biases live outside the real convs so they enter each part once
        self.conv_r = conv(in_channels, out_channels, kernel_size,
                           stride=stride, padding=padding, bias=False)
        self.conv_i = conv(in_channels, out_channels, kernel_size,
                           stride=stride, padding=padding, bias=False)
        if bias:
            self.bias_r = nn.Parameter(torch.zeros(out_channels))
            self.bias_i = nn.Parameter(torch.zeros(out_channels))
        else:
            self.register_parameter("bias_r", None)
            self.register_parameter("bias_i", None)
        self.transpose = transpose

    def forward(self, x, output_size=None):
        a, b = split_complex(x)
        if self.transpose:
            rr = self.conv_r(a, output_size=output_size)
            ii = self.conv_i(b, output_size=output_size)
            ri = self.conv_i(a, output_size=output_size)
            ir = self.conv_r(b, output_size=output_size)
        else:
            rr, ii, ri, ir = self.conv_r(a), self.conv_i(b), self.conv_i(a), self.conv_r(b)
        out_r = rr - ii
        out_i = ri + ir
        if self.bias_r is not None:
            out_r = out_r + self.bias_r.view(1, -1, 1, 1)
            out_i = out_i + self.bias_i.view(1, -1, 1, 1)
        return merge_complex(out_r, out_i)


class ComplexInstanceNorm2d(nn.Module):
    """Per-instance, per-complex-channel normalization.

    Both parts are centered by their own mean and divided by
    sqrt(var_r + var_i + eps); the affine transform is a single real scale and
    bias per complex channel applied to both parts.
    """

    def __init__(self, num_complex_channels, affine=True, eps=EPS):
        super().__init__()
        self.eps = eps
        if affine:
            self.weight = nn.Parameter(torch.ones(num_complex_channels))
            self.bias = nn.Parameter(torch.zeros(num_complex_channels))
        else:
            self.register_parameter("weight", None)
            self.register_parameter("bias", None)

    def forward(self, x):
        r, i = split_complex(x)
        mean_r = r.mean(dim=(2, 3), keepdim=True)
        mean_i = i.mean(dim=(2, 3), keepdim=True)
        r = r - mean_r
        i = i - mean_i
        var = r.var(dim=(2, 3), unbiased=False, keepdim=True) \
            + i.var(dim=(2, 3), unbiased=False, keepdim=True)
        denom = torch.sqrt(var + self.eps)
        r = r / denom
        i = i / denom
        if self.weight is not None:
            w = self.weight.view(1, -1, 1, 1)
            b = self.bias.view(1, -1, 1, 1)
            r = r * w + b
            i = i * w + b
        return merge_complex(r, i)


class ComplexPReLU(nn.Module):
    """Real-valued PReLU applied to both parts with a shared per-channel slope."""

    def __init__(self, num_complex_channels):
        super().__init__()
        self.slope = nn.Parameter(torch.full((num_complex_channels,), 0.25))

    def forward(self, x):
        r, i = split_complex(x)
        s = self.slope.view(1, -1, 1, 1)
        r = torch.where(r >= 0, r, s * r)
        i = torch.where(i >= 0, i, s * i)
        return merge_complex(r, i)


def glu(a, b):
    """Gated linear unit: a * sigmoid(b)."""
    if a.shape != b.shape:
        raise ValueError(f"glu halves must match: {a.shape} vs {b.shape}")
    return a * torch.sigmoid(b)


class GLU(nn.Module):
    """Channel-split GLU: the input's channel halves are value and gate."""

    def forward(self, x):
        a, b = torch.chunk(x, 2, dim=1)
        return glu(a, b)
