"""Magnitude and complex-spectrum generators.

The magnitude generator maps a compressed magnitude (B, 1, T, 257) to a
non-negative map of the same shape through a 3-block encoder, an attention
stack at the bottleneck, and a mirrored 3-block decoder with skip
connections.  The complex generator does the same for RI-stacked spectra
(B, 2, T, 257) with 8 complex encoder/decoder blocks.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionStack, ComplexAttentionStack
from .complex_nn import (ComplexConv2d, ComplexInstanceNorm2d, ComplexPReLU,
                         GLU, merge_complex, split_complex)

MAG_ENCODER_CHANNELS = (16, 32, 64)
COMPLEX_ENCODER_CHANNELS = (32, 32, 64, 64, 128, 128, 256, 256)
N_BINS = 257


class EncoderBlock(nn.Module):
    """conv -> IN -> PReLU -> GLU; conv emits 2x channels, GLU halves them."""

    def __init__(self, in_ch, out_ch, kernel=(3, 5), stride=(1, 2), padding=(1, 2)):
        super().__init__()
        # no conv bias: the instance norm right after removes any channel shift
        self.conv = nn.Conv2d(in_ch, 2 * out_ch, kernel, stride=stride,
                              padding=padding, bias=False)
        self.norm = nn.InstanceNorm2d(2 * out_ch, affine=True)
        self.act = nn.PReLU(2 * out_ch)
        self.gate = GLU()

    def forward(self, x):
        return self.gate(self.act(self.norm(self.conv(x))))


class DecoderBlock(nn.Module):
    """Transposed-conv mirror of EncoderBlock with explicit output sizing."""

    def __init__(self, in_ch, out_ch, kernel=(3, 5), stride=(1, 2), padding=(1, 2)):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_ch, 2 * out_ch, kernel,
                                       stride=stride, padding=padding, bias=False)
        self.norm = nn.InstanceNorm2d(2 * out_ch, affine=True)
        self.act = nn.PReLU(2 * out_ch)
        self.gate = GLU()

    def forward(self, x, output_size):
        h = self.conv(x, output_size=list(output_size))
        return self.gate(self.act(self.norm(h)))


class MagnitudeGenerator(nn.Module):
    """Compressed magnitude in, non-negative compressed magnitude out."""

    def __init__(self, encoder_channels=MAG_ENCODER_CHANNELS, n_attention_blocks=6):
        super().__init__()
        chans = tuple(encoder_channels)
        self.encoder = nn.ModuleList()
        in_ch = 1
        for out_ch in chans:
            self.encoder.append(EncoderBlock(in_ch, out_ch))
            in_ch = out_ch
        self.attention = AttentionStack(chans[-1], n_attention_blocks)
        # decoder mirrors the encoder; skip connections double input channels
        dec_out = chans[-2::-1] + (chans[0],)       # e.g. (32, 16, 16)
        self.decoder = nn.ModuleList()
        in_ch = chans[-1]
        for skip_ch, out_ch in zip(chans[::-1], dec_out):
            self.decoder.append(DecoderBlock(in_ch + skip_ch, out_ch))
            in_ch = out_ch
        self.head = nn.Conv2d(dec_out[-1], 1, 1)

    def forward(self, mag):
        if mag.dim() != 4 or mag.shape[1] != 1 or mag.shape[3] != N_BINS:
            raise ValueError(f"expected (B, 1, T, {N_BINS}), got {tuple(mag.shape)}")
        feat_stack = []
        x = mag
        for block in self.encoder:
            x = block(x)
            feat_stack.append(x)
        h = self.attention(feat_stack[-1])
        for k, block in enumerate(self.decoder):
            skip = feat_stack[-1 - k]
            target = (feat_stack[-2 - k].shape[2:] if k + 1 < len(feat_stack)
                      else mag.shape[2:])
            h = block(torch.cat([h, skip], dim=1), target)
        return F.softplus(self.head(h))


class ComplexEncoderBlock(nn.Module):
    """complex conv -> complex IN -> PReLU (real-valued, shared slope)."""

    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 2), padding=(1, 1)):
        super().__init__()
        self.conv = ComplexConv2d(in_ch, out_ch, kernel, stride=stride,
                                  padding=padding, bias=False)
        self.norm = ComplexInstanceNorm2d(out_ch)
        self.act = ComplexPReLU(out_ch)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ComplexDecoderBlock(nn.Module):
    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 2), padding=(1, 1)):
        super().__init__()
        self.conv = ComplexConv2d(in_ch, out_ch, kernel, stride=stride,
                                  padding=padding, bias=False, transpose=True)
        self.norm = ComplexInstanceNorm2d(out_ch)
        self.act = ComplexPReLU(out_ch)

    def forward(self, x, output_size):
        return self.act(self.norm(self.conv(x, output_size=list(output_size))))


class ComplexGenerator(nn.Module):
    """RI spectrum in, RI spectrum out; linear complex 1x1 head."""

    def __init__(self, encoder_channels=COMPLEX_ENCODER_CHANNELS, n_attention_blocks=6):
        super().__init__()
        chans = tuple(encoder_channels)
        self.encoder = nn.ModuleList()
        in_ch = 1
        for out_ch in chans:
            self.encoder.append(ComplexEncoderBlock(in_ch, out_ch))
            in_ch = out_ch
        self.attention = ComplexAttentionStack(chans[-1], n_attention_blocks)
        dec_out = chans[-2::-1] + (chans[0],)
        self.decoder = nn.ModuleList()
        in_ch = chans[-1]
        for skip_ch, out_ch in zip(chans[::-1], dec_out):
            self.decoder.append(ComplexDecoderBlock(in_ch + skip_ch, out_ch))
            in_ch = out_ch
        self.head = ComplexConv2d(dec_out[-1], 1, 1)

    def forward(self, spec):
        if spec.dim() != 4 or spec.shape[1] != 2 or spec.shape[3] != N_BINS:
            raise ValueError(f"expected (B, 2, T, {N_BINS}), got {tuple(spec.shape)}")
        feat_stack = []
        x = spec
        for block in self.encoder:
            x = block(x)
            feat_stack.append(x)
        h = self.attention(feat_stack[-1])
        for k, block in enumerate(self.decoder):
            skip = feat_stack[-1 - k]
            target = (feat_stack[-2 - k].shape[2:] if k + 1 < len(feat_stack)
                      else spec.shape[2:])
            r, i = split_complex(h)
            rs, is_ = split_complex(skip)
            h = block(merge_complex(torch.cat([r, rs], 1), torch.cat([i, is_], 1)), target)
        return self.head(h)
