"""U-Net generator and conditional patch critic (pix2pix topology).

The generator carries no normalization layers at all, and the critic only
uses instance normalization. Neither couples samples inside a batch, which
the per-sample gradient penalty relies on.
"""
import hashlib
import json
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidParameterError, ShapeError

INIT_STD = 0.02
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorSpec:
    input_channels: int = 3
    output_channels: int = 3
    base_width: int = 64
    depth: int = 8
    normalization: str = "none"

    def __post_init__(self):
        if self.depth < 1 or self.base_width < 1:
            raise InvalidParameterError("generator depth and base_width must be >= 1")
        if self.normalization != "none":
            raise InvalidParameterError("the generator supports normalization='none' only")

    @property
    def widths(self):
        return tuple(min(self.base_width * 2**i, self.base_width * 8) for i in range(self.depth))


@dataclass(frozen=True)
class CriticSpec:
    input_channels: int = 6
    widths: tuple = (64, 128, 256, 512)
    normalization: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise InvalidParameterError("critic widths must be a non-empty list of positive ints")
        if self.normalization not in ("instance", "none"):
            raise InvalidParameterError("critic normalization must be 'instance' or 'none'")


def _init_weights(module, seed):
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.normal_(0.0, INIT_STD, generator=gen)
                m.bias.zero_()


def _down(conv, x):
    # stride-2 4x4 conv; a 1-pixel axis is kept at 1 with stride 1 instead
    h, w = x.shape[-2:]
    for n in (h, w):
        if n > 1 and n % 2:
            raise ShapeError(f"spatial size {n} is odd; generator inputs need power-of-two sides")
    pad_h = (1, 2) if h == 1 else (1, 1)
    pad_w = (1, 2) if w == 1 else (1, 1)
    x = F.pad(x, (*pad_w, *pad_h))
    return F.conv2d(x, conv.weight, conv.bias, stride=(1 if h == 1 else 2, 1 if w == 1 else 2))


class UNetGenerator(nn.Module):
    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.down = nn.ModuleList(
            nn.Conv2d(spec.input_channels if i == 0 else w[i - 1], w[i], 4, 2, 1) for i in range(spec.depth)
        )
        up = []
        for i in reversed(range(spec.depth)):
            cin = w[i] if i == spec.depth - 1 else 2 * w[i]
            cout = spec.output_channels if i == 0 else w[i - 1]
            up.append(nn.ConvTranspose2d(cin, cout, 4, 2, 1))
        self.up = nn.ModuleList(up)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(f"expected N x {self.spec.input_channels} x H x W input, got {tuple(x.shape)}")
        sizes, skips = [], []
        for i, conv in enumerate(self.down):
            sizes.append(x.shape[-2:])
            x = _down(conv, x if i == 0 else F.leaky_relu(x, LEAKY_SLOPE))
            skips.append(x)
        for j, conv in enumerate(self.up):
            i = self.spec.depth - 1 - j
            if j > 0:
                x = torch.cat([x, skips[i]], dim=1)
            x = conv(F.relu(x))
            th, tw = sizes[i]
            x = x[..., :th, :tw]
        return torch.tanh(x)


class PatchCritic(nn.Module):
    """Scores a (condition, candidate) pair; output is unbounded, one value per sample."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        layers = []
        cin = spec.input_channels
        n = len(spec.widths)
        for i, width in enumerate(spec.widths):
            stride = 1 if (i == n - 1 and n > 1) else 2
            layers.append(nn.Conv2d(cin, width, 4, stride, 1))
            if i > 0 and spec.normalization == "instance":
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            cin = width
        layers.append(nn.Conv2d(cin, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, condition, candidate):
        if condition.shape != candidate.shape:
            raise ShapeError(f"condition {tuple(condition.shape)} and candidate {tuple(candidate.shape)} differ")
        patch = self.net(torch.cat([condition, candidate], dim=1))
        return patch.mean(dim=(1, 2, 3))


def build_generator(spec=None, seed=0):
    spec = spec or GeneratorSpec()
    g = UNetGenerator(spec)
    _init_weights(g, seed)
    return g


def build_critic(spec=None, seed=0):
    spec = spec or CriticSpec()
    c = PatchCritic(spec)
    _init_weights(c, seed)
    return c


def critic_score(critic, condition, candidate):
    """D(I, X) for single images (3 x H x W) or batches; no squashing of the score."""
    if condition.shape != candidate.shape:
        raise ShapeError(f"condition {tuple(condition.shape)} and candidate {tuple(candidate.shape)} differ")
    if condition.ndim == 3:
        return critic(condition[None], candidate[None])[0]
    return critic(condition, candidate)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())


def architecture_fingerprint(generator_spec, critic_spec):
    doc = {
        "generator": asdict(generator_spec),
        "critic": asdict(critic_spec),
        "score_reduction": "mean",
        "init": ["normal", INIT_STD],
    }
    blob = json.dumps(doc, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:32]
