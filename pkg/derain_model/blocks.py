import logging
import math

import torch
import torch.nn as nn
import torch.nn.functional as F


SPP_SCALES = (1, 2, 4, 8)


class SpatialAttention(nn.Module):
    """
    Gate features with a per-pixel mask computed from the channel-wise max and
    mean maps: out = f * sigmoid(conv([max_c f, mean_c f])).
    """

    def __init__(self, kernel_size=7):
        super(SpatialAttention, self).__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def mask(self, x):
        max_out, _ = torch.max(x, dim=1, keepdim=True)
        avg_out = torch.mean(x, dim=1, keepdim=True)
        return torch.sigmoid(self.conv(torch.cat([max_out, avg_out], dim=1)))

    def forward(self, x):
        return x * self.mask(x)


class SelfAttention(nn.Module):
    """Multi-head self-attention over a (B, N, C) token sequence."""

    def __init__(self, dim, heads=4):
        super(SelfAttention, self).__init__()
        if dim % heads != 0:
            raise ValueError(f"Channels ({dim}) must be divisible by heads ({heads}).")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        batch, tokens, dim = x.shape
        qkv = self.qkv(x).reshape(batch, tokens, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]

        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(batch, tokens, dim)
        return self.proj(out)


class LocalBranch(nn.Module):
    """conv3x3 -> GELU -> conv3x3 on the spatial map."""

    def __init__(self, dim):
        super(LocalBranch, self).__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x):
        return self.conv2(F.gelu(self.conv1(x)))


class FeedForward(nn.Module):
    def __init__(self, dim, expansion=4):
        super(FeedForward, self).__init__()
        self.fc1 = nn.Linear(dim, dim * expansion)
        self.fc2 = nn.Linear(dim * expansion, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class AGLFViTBlock(nn.Module):
    """
    Adaptive global/local fusion transformer block.

        y   = f + alpha * Attention(LN(f)) + beta * Local(LN(f))
        out = y + FFN(LN(y))

    alpha and beta are learnable scalars; attention runs over the full
    flattened token grid.
    """

    def __init__(self, dim, heads=4, ffn_expansion=4):
        super(AGLFViTBlock, self).__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.local = LocalBranch(dim)
        self.alpha = nn.Parameter(torch.ones(1))
        self.beta = nn.Parameter(torch.zeros(1))
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_expansion)

    def forward(self, x):
        batch, channels, height, width = x.shape
        tokens = x.flatten(2).transpose(1, 2)

        normed = self.norm1(tokens)
        global_out = self.attn(normed)
        normed_map = normed.transpose(1, 2).reshape(batch, channels, height, width)
        local_out = self.local(normed_map).flatten(2).transpose(1, 2)

        tokens = tokens + self.alpha * global_out + self.beta * local_out
        tokens = tokens + self.ffn(self.norm2(tokens))
        return tokens.transpose(1, 2).reshape(batch, channels, height, width)


class SPP(nn.Module):
    """
    Spatial pyramid pooling: adaptive average pooling at each scale, bilinear
    upsampling back to the input size, concatenation with the input and a 1x1
    fusion convolution to the original channel count.
    """

    def __init__(self, dim, scales=SPP_SCALES):
        super(SPP, self).__init__()
        self.scales = tuple(scales)
        self.fuse = nn.Conv2d(dim * (len(self.scales) + 1), dim, 1)

    def pool(self, x):
        return [F.adaptive_avg_pool2d(x, scale) for scale in self.scales]

    def forward(self, x):
        size = x.shape[-2:]
        branches = [
            F.interpolate(pooled, size=size, mode="bilinear", align_corners=False)
            for pooled in self.pool(x)
        ]
        return self.fuse(torch.cat(branches + [x], dim=1))


def init_weights(module, std=0.02):
    """
    Truncated-normal initialization. Linear layers inside AGLF-ViT blocks use
    std 0.02; convolutions and the recognition head are scaled by fan-in
    (std sqrt(2 / fan_in) for convolutions, sqrt(1 / fan_in) for the head) so
    that activations keep unit scale through the projection and SPP. Biases
    are zero, LayerNorm is unit, AGLF-ViT alpha/beta go back to 1 and 0.
    """
    transformer = {id(m) for block in module.modules() if isinstance(block, AGLFViTBlock) for m in block.modules()}
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            if isinstance(m, nn.Linear) and id(m) in transformer:
                m_std = std
            else:
                fan_in = m.weight[0].numel()
                m_std = math.sqrt((2.0 if isinstance(m, nn.Conv2d) else 1.0) / fan_in)
            nn.init.trunc_normal_(m.weight, std=m_std, a=-2 * m_std, b=2 * m_std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, AGLFViTBlock):
            with torch.no_grad():
                m.alpha.fill_(1.0)
                m.beta.fill_(0.0)
    logging.debug("Initialized %s with truncated normal (transformer std=%s).", type(module).__name__, std)
